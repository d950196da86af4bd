//! End-to-end orchestration: prompt → retrieve → assign → inject loop → report.
//!
//! The loop is a fixed-step conditioning loop. At each timestep the
//! conditioned branches (global prompt, assigned identities) and an
//! unconditioned pass (zero text, zero identities, same skeleton) are
//! mixed with classifier-free guidance, then re-noised to the next
//! timestep with per-step seeded noise.

mod config;
mod report;

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assign::{assign_with_limit, extract_character_tokens, RegionScorer};
use crate::diffusion::{cfg_mix, forward_noise, ControlConfig};
use crate::inject::{
    extract_disentangled, hmsi_step, CharacterFeatures, DisentangledExtractor, InjectConfig, Scene,
    SkeletonEncoder,
};
use crate::kernels::{AttentionWeights, Tensor};
use crate::msdb::{mult_and_rank, random_choose_index, ErrorClass, MsdbError, Raster, RetrievalIndex, TextEncoder};
use crate::rng::{derive, stream, SplitMix64};

pub use config::{PipelineConfig, MIN_GRID_SIDE};
pub use report::{
    to_json, AssignmentReport, FixedPrecision, LatentSummary, RegionMean, RetrievalReport, RunReport, StepReport,
    REPORT_SCHEMA,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Config,
    Embed,
    Retrieve,
    Choose,
    Assign,
    Extract,
    Scene,
    Denoise,
    Emit,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string tag"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Io,
    Format,
    Validation,
    Pipeline,
}

impl From<ErrorClass> for ErrorKind {
    fn from(c: ErrorClass) -> Self {
        match c {
            ErrorClass::Io => ErrorKind::Io,
            ErrorClass::Format => ErrorKind::Format,
            ErrorClass::Validation => ErrorKind::Validation,
        }
    }
}

/// A run halted in `stage`.
#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{stage} stage failed: {message}")]
pub struct StageError {
    pub stage: Stage,
    pub kind: ErrorKind,
    pub message: String,
}

impl StageError {
    fn new(stage: Stage, kind: ErrorKind, err: impl ToString) -> Self {
        Self {
            stage,
            kind,
            message: err.to_string(),
        }
    }
}

fn at<E: ToString>(stage: Stage, kind: ErrorKind) -> impl FnOnce(E) -> StageError {
    move |e| StageError::new(stage, kind, e)
}

fn msdb_at(stage: Stage) -> impl FnOnce(MsdbError) -> StageError {
    move |e| StageError::new(stage, e.class().into(), e)
}

/// Receives intermediate latents as the loop produces them.
pub trait LatentSink {
    fn emit(&mut self, name: &str, latent: &Tensor<f64>) -> std::io::Result<()>;
}

/// Discards everything.
pub struct NoSink;

impl LatentSink for NoSink {
    fn emit(&mut self, _: &str, _: &Tensor<f64>) -> std::io::Result<()> {
        Ok(())
    }
}

/// Writes `<dir>/<name>.tensor` files in the binary tensor format.
pub struct DirSink {
    dir: PathBuf,
}

impl DirSink {
    pub fn new(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl LatentSink for DirSink {
    fn emit(&mut self, name: &str, latent: &Tensor<f64>) -> std::io::Result<()> {
        let file = fs::File::create(self.dir.join(format!("{name}.tensor")))?;
        latent.write_to(BufWriter::new(file))
    }
}

pub fn run_pipeline(
    config: &PipelineConfig,
    index: &RetrievalIndex,
    prompt: &str,
    refs: &[(Raster, Raster)],
    scorer: &dyn RegionScorer,
) -> Result<RunReport, StageError> {
    run_pipeline_with(config, index, prompt, refs, scorer, &mut NoSink)
}

/// [`run_pipeline`], streaming the initial latent and every step's
/// conditioned, unconditioned and guided latents into `sink`.
pub fn run_pipeline_with(
    config: &PipelineConfig,
    index: &RetrievalIndex,
    prompt: &str,
    refs: &[(Raster, Raster)],
    scorer: &dyn RegionScorer,
    sink: &mut dyn LatentSink,
) -> Result<RunReport, StageError> {
    use ErrorKind::*;
    use Stage as S;

    config.validate().map_err(at(S::Config, Validation))?;
    let schedule = config.resolved_schedule().map_err(at(S::Config, Validation))?;
    let d = config.feature_dim;
    if index.dim() != d {
        return Err(StageError::new(
            S::Config,
            Validation,
            format!("feature_dim is {d} but the index stores {}-dimensional features", index.dim()),
        ));
    }
    let seed = config.seed;

    let encoder = TextEncoder::new(config.text_encoder_seed, d);
    let characters = extract_character_tokens(prompt).map_err(at(S::Embed, Validation))?.len();
    if characters == 0 {
        return Err(StageError::new(S::Embed, Validation, "prompt names no \"Character k\" token"));
    }
    if refs.len() != characters {
        return Err(StageError::new(
            S::Embed,
            Validation,
            format!("prompt names {characters} characters but {} reference pairs were given", refs.len()),
        ));
    }
    let query = encoder.embed_text(prompt).map_err(msdb_at(S::Embed))?;
    let c_text = encoder.encode_tokens(prompt).map_err(msdb_at(S::Embed))?;

    let shortlist = mult_and_rank(&query, index, config.shortlist_m).map_err(msdb_at(S::Retrieve))?;
    let chosen = random_choose_index(shortlist.len(), derive(seed, stream::RETRIEVAL)).map_err(msdb_at(S::Choose))?;
    let record = index.get(&shortlist[chosen].id).map_err(msdb_at(S::Choose))?;

    let assignment =
        assign_with_limit(prompt, record, scorer, config.max_characters).map_err(at(S::Assign, Validation))?;

    let extractor = DisentangledExtractor::new(derive(seed, stream::IMAGE_ENCODER), config.image_tokens, d)
        .map_err(at(S::Extract, Pipeline))?;
    let feats: Vec<CharacterFeatures<f64>> = refs
        .iter()
        .enumerate()
        .map(|(k, (face, body))| extract_disentangled(face, body, &extractor, k))
        .collect::<Result<_, _>>()
        .map_err(at(S::Extract, Validation))?;
    let zero_feats: Vec<_> = feats.iter().map(CharacterFeatures::zeroed).collect();

    let grid = config.latent_grid;
    let control = ControlConfig::new(config.control_scale, d).map_err(at(S::Scene, Validation))?;
    let skeleton = SkeletonEncoder::new(derive(seed, stream::SKELETON), d).map_err(at(S::Scene, Pipeline))?;
    let scene = Scene::from_record(record, grid, &skeleton, &control, config.preserve_mode)
        .map_err(at(S::Scene, Validation))?;
    let inject = InjectConfig {
        weights: AttentionWeights::from_seed(derive(seed, stream::ATTENTION), d, d).map_err(at(S::Scene, Pipeline))?,
        merge_mode: config.merge_mode,
    };

    let fail = |e: &dyn ToString| StageError::new(S::Denoise, Pipeline, e.to_string());
    let emit = |e: std::io::Error| StageError::new(S::Emit, Io, e);
    let shape = vec![grid.cells(), d];
    let t_last = schedule.t_max() - 1;
    let mut z = {
        let eps = normal_tensor(&shape, derive(seed, stream::NOISE)).map_err(|e| fail(&e))?;
        let zeros = Tensor::zeros(shape.clone()).map_err(|e| fail(&e))?;
        forward_noise(&zeros, t_last, &schedule, &eps).map_err(|e| fail(&e))?
    };
    sink.emit("initial", &z).map_err(emit)?;
    let zero_text = c_text.map(|_| 0.0);
    let cfg_scale = config.cfg_scale;
    let mut steps = Vec::with_capacity(schedule.t_max());
    for t in (0..=t_last).rev() {
        let cond = hmsi_step(&inject, &scene, &assignment.perm, &feats, &z, &c_text).map_err(|e| fail(&e))?;
        let uncond = hmsi_step(&inject, &scene, &assignment.perm, &zero_feats, &z, &zero_text).map_err(|e| fail(&e))?;
        let guided = cfg_mix(&uncond.latent, &cond.latent, cfg_scale).map_err(|e| fail(&e))?;
        sink.emit(&format!("step_{t:03}_cond"), &cond.latent).map_err(emit)?;
        sink.emit(&format!("step_{t:03}_uncond"), &uncond.latent).map_err(emit)?;
        sink.emit(&format!("step_{t:03}_guided"), &guided).map_err(emit)?;
        steps.push(StepReport {
            t,
            alpha_bar: schedule.alpha_bar(t).map_err(|e| fail(&e))?,
            branches: cond.diagnostics,
            cond_l2: cond.latent.l2_norm(),
            uncond_l2: uncond.latent.l2_norm(),
            guided_l2: guided.l2_norm(),
        });
        z = if t > 0 {
            let step_seed = derive(seed, stream::STEP_NOISE).wrapping_add(t as u64);
            let eps = normal_tensor(&shape, step_seed).map_err(|e| fail(&e))?;
            forward_noise(&guided, t - 1, &schedule, &eps).map_err(|e| fail(&e))?
        } else {
            guided
        };
        if z.data().iter().any(|x| !x.is_finite()) {
            return Err(fail(&format!("latent became non-finite at t = {t}")));
        }
    }
    sink.emit("final", &z).map_err(emit)?;

    Ok(RunReport {
        schema: REPORT_SCHEMA.to_string(),
        prompt: prompt.to_string(),
        seed,
        characters,
        retrieval: RetrievalReport {
            index_checksum: format!("{:016x}", index.checksum()),
            index_size: index.len(),
            retrieved_id: record.id.clone(),
            shortlist,
            chosen,
        },
        final_latent: summarize(&z, &scene, &assignment.perm),
        assignment: AssignmentReport {
            scorer: scorer.name().to_string(),
            perm: assignment.perm,
            scores: assignment.scores,
        },
        steps,
        config: config.clone(),
    })
}

fn normal_tensor(shape: &[usize], seed: u64) -> crate::kernels::Result<Tensor<f64>> {
    let mut rng = SplitMix64::new(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.next_normal())
}

fn summarize(z: &Tensor<f64>, scene: &Scene<f64>, perm: &[usize]) -> LatentSummary {
    let cols = z.cols() as f64;
    let mean_over = |cells: &[usize]| cells.iter().map(|&p| z.row(p).iter().sum::<f64>()).sum::<f64>() / (cells.len() as f64 * cols);
    let region_means = scene
        .masks
        .iter()
        .enumerate()
        .map(|(region, m)| {
            let cells: Vec<usize> = (0..m.union().len()).filter(|&p| m.union()[p] > 0.0).collect();
            RegionMean {
                region,
                character: perm.iter().position(|&r| r == region).unwrap_or(region),
                cells: cells.len(),
                mean: if cells.is_empty() { 0.0 } else { mean_over(&cells) },
            }
        })
        .collect();
    let background: Vec<usize> = (0..z.rows())
        .filter(|&p| scene.masks.iter().all(|m| m.union()[p] == 0.0))
        .collect();
    LatentSummary {
        shape: z.shape().to_vec(),
        sum: z.sum(),
        l2: z.l2_norm(),
        region_means,
        background_mean: (!background.is_empty()).then(|| mean_over(&background)),
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use racig_core::assign::{assign_with_limit, OracleScorer, RegionScorer, StubScorer, DEFAULT_MAX_CHARACTERS};
use racig_core::inject::LatentGrid;
use racig_core::msdb::{
    build_index, fixtures_gen as gen, load_index_dir, mult_and_rank, random_choose_index, save_index, FixtureSpec,
    MsdbError, Raster, RetrievalIndex, TextEncoder, FEATURE_FILE, MANIFEST_FILE,
};
use racig_core::pipeline::{run_pipeline_with, to_json, DirSink, ErrorKind, LatentSink, NoSink, PipelineConfig, Stage, StageError};
use racig_core::rng::{derive, stream};
use serde_json::json;

use super::{AssignArgs, FixturesGenArgs, IndexBuildArgs, IndexQueryArgs, RunArgs, ScorerKind};

/// Directory, under a fixture output directory, holding the user-side crops.
pub const USER_REFS_DIR: &str = "user_refs";
pub const CONFIG_ENV: &str = "RACIG_CONFIG";

#[derive(Debug)]
pub struct CliError {
    kind: ErrorKind,
    stage: Option<Stage>,
    message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            stage: None,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new(ErrorKind::Io, format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self.kind {
            ErrorKind::Io => 3,
            ErrorKind::Validation => 4,
            ErrorKind::Format => 5,
            ErrorKind::Pipeline => 6,
        }
    }

    pub fn to_json(&self) -> String {
        let mut err = json!({ "kind": self.kind, "message": self.message });
        if let Some(stage) = self.stage {
            err["stage"] = json!(stage);
        }
        to_json(&json!({ "error": err })).expect("error objects serialize")
    }
}

impl From<MsdbError> for CliError {
    fn from(e: MsdbError) -> Self {
        Self::new(e.class().into(), e.to_string())
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        Self {
            kind: e.kind,
            stage: Some(e.stage),
            message: e.message,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn write_output(json: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, json).map_err(|e| CliError::io(path, e)),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn render(value: &serde_json::Value) -> Result<String> {
    to_json(value).map_err(|e| CliError::new(ErrorKind::Pipeline, e.to_string()))
}

pub fn fixtures_gen(a: &FixturesGenArgs) -> Result<String> {
    let set = gen(&FixtureSpec {
        seed: a.seed,
        count: a.count,
        num_chars: a.chars,
        image_size: (a.width, a.height),
        dim: a.dim,
        encoder_seed: a.encoder_seed,
    })?;
    let index = RetrievalIndex::from_records(set.records)?;
    save_index(&index, &a.out_dir)?;
    let refs_dir = a.out_dir.join(USER_REFS_DIR);
    fs::create_dir_all(&refs_dir).map_err(|e| CliError::io(&refs_dir, e))?;
    let mut refs = Vec::new();
    for (k, (face, body)) in set.refs.iter().enumerate() {
        for (kind, r) in [("face", face), ("body", body)] {
            let path = refs_dir.join(format!("character_{}_{kind}.pgm", k + 1));
            r.write_pgm(&path)?;
            refs.push(path.display().to_string());
        }
    }
    render(&json!({
        "dir": a.out_dir.display().to_string(),
        "records": index.len(),
        "dim": index.dim(),
        "index_checksum": format!("{:016x}", index.checksum()),
        "refs": refs,
    }))
}

pub fn index_build(a: &IndexBuildArgs) -> Result<String> {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> Result<PathBuf> {
        explicit
            .clone()
            .or_else(|| a.dir.as_ref().map(|d| d.join(name)))
            .ok_or_else(|| CliError::new(ErrorKind::Validation, format!("need --dir or an explicit path for {name}")))
    };
    let manifest = pick(&a.manifest, MANIFEST_FILE)?;
    let features = pick(&a.features, FEATURE_FILE)?;
    let index = build_index(&manifest, &features)?;
    let ids: Vec<&str> = index.records().iter().map(|r| r.id.as_str()).collect();
    render(&json!({
        "manifest": manifest.display().to_string(),
        "features": features.display().to_string(),
        "records": index.len(),
        "dim": index.dim(),
        "index_checksum": format!("{:016x}", index.checksum()),
        "ids": ids,
    }))
}

pub fn index_query(a: &IndexQueryArgs) -> Result<String> {
    let index = load_index_dir(&a.index)?;
    let query = TextEncoder::new(a.encoder_seed, index.dim()).embed_text(&a.prompt)?;
    let shortlist = mult_and_rank(&query, &index, a.top_m)?;
    let chosen = random_choose_index(shortlist.len(), derive(a.seed, stream::RETRIEVAL))?;
    render(&json!({
        "prompt": a.prompt,
        "top_m": a.top_m,
        "seed": a.seed,
        "chosen": chosen,
        "chosen_id": shortlist[chosen].id,
        "shortlist": shortlist,
    }))
}

fn scorer(kind: ScorerKind, encoder_seed: u64, dim: usize, seed: u64) -> Box<dyn RegionScorer> {
    match kind {
        ScorerKind::Oracle => Box::new(OracleScorer),
        ScorerKind::Stub => Box::new(StubScorer::new(TextEncoder::new(encoder_seed, dim), derive(seed, stream::SCORER))),
    }
}

pub fn assign(a: &AssignArgs) -> Result<String> {
    let index = load_index_dir(&a.index)?;
    let record = index.get(&a.id)?;
    let s = scorer(a.scorer, a.encoder_seed, index.dim(), a.seed);
    let assignment = assign_with_limit(&a.prompt, record, s.as_ref(), DEFAULT_MAX_CHARACTERS)
        .map_err(|e| CliError::new(ErrorKind::Validation, e.to_string()))?;
    render(&json!({
        "id": record.id,
        "prompt": a.prompt,
        "scorer": s.name(),
        "perm": assignment.perm,
        "scores": assignment.scores,
    }))
}

fn load_config(a: &RunArgs) -> Result<PipelineConfig> {
    let path = a.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
            serde_json::from_str::<PipelineConfig>(&text).map_err(|e| {
                let kind = if e.is_data() { ErrorKind::Validation } else { ErrorKind::Format };
                CliError::new(kind, format!("{}: {e}", p.display()))
            })?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.cfg_scale {
        cfg.cfg_scale = v;
    }
    if let Some((h, w)) = a.grid {
        cfg.latent_grid = LatentGrid::new(h, w).map_err(|e| CliError::new(ErrorKind::Validation, e.to_string()))?;
    }
    if let Some(v) = a.shortlist_m {
        cfg.shortlist_m = v;
    }
    if let Some(v) = a.merge_mode {
        cfg.merge_mode = v.into();
    }
    if let Some(v) = a.preserve_mode {
        cfg.preserve_mode = v.into();
    }
    if let Some(v) = a.control_scale {
        cfg.control_scale = v;
    }
    cfg.validate().map_err(|e| CliError::new(ErrorKind::Validation, e))?;
    Ok(cfg)
}

fn load_refs(dir: &Path, prompt: &str) -> Result<Vec<(Raster, Raster)>> {
    let n = racig_core::assign::extract_character_tokens(prompt)
        .map_err(|e| CliError::new(ErrorKind::Validation, e.to_string()))?
        .len();
    (1..=n)
        .map(|k| {
            let face = Raster::read_pgm(&dir.join(format!("character_{k}_face.pgm")))?;
            let body = Raster::read_pgm(&dir.join(format!("character_{k}_body.pgm")))?;
            Ok((face, body))
        })
        .collect()
}

pub fn run(a: &RunArgs) -> Result<String> {
    let cfg = load_config(a)?;
    let index = load_index_dir(&a.index)?;
    let refs = load_refs(&a.refs, &a.prompt)?;
    let s = scorer(a.scorer, cfg.text_encoder_seed, index.dim(), cfg.seed);
    let mut sink: Box<dyn LatentSink> = match &a.emit_latents {
        Some(dir) => Box::new(DirSink::new(dir).map_err(|e| CliError::io(dir, e))?),
        None => Box::new(NoSink),
    };
    let report = run_pipeline_with(&cfg, &index, &a.prompt, &refs, s.as_ref(), sink.as_mut())?;
    to_json(&report).map_err(|e| CliError::new(ErrorKind::Pipeline, e.to_string()))
}


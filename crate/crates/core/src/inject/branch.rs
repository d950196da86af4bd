use serde::{Deserialize, Serialize};

use super::{CharacterFeatures, InjectError, LatentGrid, Result, SkeletonEncoder, SubjectMasks};
use crate::diffusion::{ControlConfig, PreserveMode};
use crate::kernels::{attention, text_attention, AttentionWeights, Tensor, TensorError};
use crate::msdb::MsdbRecord;
use crate::scalar::Real;

/// How cells covered by several unions, or by none, are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeMode {
    /// Mask-weighted mean of the covering branches; uncovered cells take the
    /// base latent.
    #[default]
    Normalized,
    /// Plain masked sum `Σ M_i ⊙ branch_i`; uncovered cells are zero.
    PaperLiteral,
}

/// Inputs shared by every branch of one step.
#[derive(Debug, Clone, Copy)]
pub struct BranchInputs<'a, T: Real> {
    /// `cells × d_model`
    pub z_t: &'a Tensor<T>,
    /// `tokens × d_model`
    pub c_text: &'a Tensor<T>,
    /// Precomputed skeleton term, `cells × d_model`.
    pub skeleton: &'a Tensor<T>,
    pub weights: &'a AttentionWeights<T>,
}

/// The three additive terms of a branch, excluding the latent itself.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTerms<T: Real> {
    pub text: Tensor<T>,
    pub identity: Tensor<T>,
    pub skeleton: Tensor<T>,
}

fn check_masks<T: Real>(z: &Tensor<T>, masks: &SubjectMasks<T>) -> Result<()> {
    if z.rows() != masks.grid().cells() {
        return Err(InjectError::Arity {
            what: "latent rows vs mask cells",
            expected: masks.grid().cells(),
            found: z.rows(),
        });
    }
    Ok(())
}

fn fuse_with_query<T: Real>(
    q: &Tensor<T>,
    feats: &CharacterFeatures<T>,
    masks: &SubjectMasks<T>,
    w: &AttentionWeights<T>,
) -> Result<Tensor<T>> {
    let d = w.d();
    let face = attention(q, &feats.f_face.matmul(&w.w_k_prime)?, &feats.f_face.matmul(&w.w_v_prime)?, d)?;
    let body = attention(q, &feats.f_body.matmul(&w.w_k_prime)?, &feats.f_body.matmul(&w.w_v_prime)?, d)?;
    Ok(face.scale_rows(masks.face())?.add(&body.scale_rows(masks.body())?)?)
}

/// `M_face ⊙ Attn(z W_q, f_face W'_k, f_face W'_v) + M_body ⊙ Attn(…f_body…)`.
pub fn fuse_face_body<T: Real>(
    z: &Tensor<T>,
    feats: &CharacterFeatures<T>,
    masks: &SubjectMasks<T>,
    w: &AttentionWeights<T>,
) -> Result<Tensor<T>> {
    check_masks(z, masks)?;
    let q = z.matmul(&w.w_q)?;
    fuse_with_query(&q, feats, masks, w)
}

fn check_inputs<T: Real>(inputs: &BranchInputs<'_, T>) -> Result<()> {
    let w = inputs.weights;
    if w.d() != w.d_model() {
        return Err(TensorError::ShapeMismatch {
            op: "build_branch",
            axis: "attention width",
            expected: w.d_model(),
            found: w.d(),
        }
        .into());
    }
    inputs.z_t.same_shape(inputs.skeleton, "build_branch")?;
    Ok(())
}

pub fn branch_terms<T: Real>(
    inputs: &BranchInputs<'_, T>,
    feats: &CharacterFeatures<T>,
    masks: &SubjectMasks<T>,
) -> Result<BranchTerms<T>> {
    check_inputs(inputs)?;
    check_masks(inputs.z_t, masks)?;
    Ok(BranchTerms {
        text: text_attention(inputs.z_t, inputs.c_text, inputs.weights)?,
        identity: fuse_face_body(inputs.z_t, feats, masks, inputs.weights)?,
        skeleton: inputs.skeleton.clone(),
    })
}

/// `z + text + identity + skeleton`, summed left to right.
pub fn build_branch<T: Real>(
    inputs: &BranchInputs<'_, T>,
    feats: &CharacterFeatures<T>,
    masks: &SubjectMasks<T>,
) -> Result<Tensor<T>> {
    let t = branch_terms(inputs, feats, masks)?;
    Ok(inputs.z_t.add(&t.text)?.add(&t.identity)?.add(&t.skeleton)?)
}

/// Combines branches by their union masks.
///
/// In [`MergeMode::Normalized`] a cell covered by exactly one branch copies
/// that branch, and a cell where all covering branches agree copies the
/// common value; both hold bitwise.
#[allow(clippy::needless_range_loop)]
pub fn merge_branches<T: Real>(
    branches: &[Tensor<T>],
    unions: &[&[T]],
    base: &Tensor<T>,
    mode: MergeMode,
) -> Result<Tensor<T>> {
    if branches.is_empty() {
        return Err(InjectError::NoBranches);
    }
    if unions.len() != branches.len() {
        return Err(InjectError::Arity {
            what: "union masks",
            expected: branches.len(),
            found: unions.len(),
        });
    }
    let (rows, cols) = base.dims2("merge_branches")?;
    for (b, u) in branches.iter().zip(unions) {
        base.same_shape(b, "merge_branches")?;
        if u.len() != rows {
            return Err(InjectError::Arity {
                what: "union mask cells",
                expected: rows,
                found: u.len(),
            });
        }
    }
    let mut out = Vec::with_capacity(rows * cols);
    let mut covering = Vec::with_capacity(branches.len());
    for p in 0..rows {
        covering.clear();
        covering.extend((0..branches.len()).filter(|&i| unions[i][p] > T::zero()));
        match mode {
            MergeMode::Normalized => {
                let Some((&anchor, rest)) = covering.split_first() else {
                    out.extend_from_slice(base.row(p));
                    continue;
                };
                let total = covering.iter().fold(T::zero(), |acc, &i| acc + unions[i][p]);
                let a = branches[anchor].row(p);
                // Anchored mean: a + Σ (M_i / W)(b_i − a) over the other branches.
                for j in 0..cols {
                    let mut v = a[j];
                    for &i in rest {
                        let diff = branches[i].row(p)[j] - a[j];
                        if diff != T::zero() {
                            v = v + unions[i][p] / total * diff;
                        }
                    }
                    out.push(v);
                }
            }
            MergeMode::PaperLiteral => {
                for j in 0..cols {
                    let v = covering
                        .iter()
                        .fold(T::zero(), |acc, &i| acc + unions[i][p] * branches[i].row(p)[j]);
                    out.push(v);
                }
            }
        }
    }
    Ok(Tensor::new(base.shape().to_vec(), out)?)
}

/// Per-record conditioning that stays fixed across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T: Real> {
    pub grid: LatentGrid,
    /// Indexed by region.
    pub masks: Vec<SubjectMasks<T>>,
    /// Skeleton term, `cells × d_model`.
    pub skeleton: Tensor<T>,
}

impl<T: Real> Scene<T> {
    pub fn from_record(
        record: &MsdbRecord,
        grid: LatentGrid,
        encoder: &SkeletonEncoder<T>,
        control: &ControlConfig<T>,
        mode: PreserveMode,
    ) -> Result<Self> {
        let masks = record
            .characters
            .iter()
            .map(|c| SubjectMasks::from_rasters(grid, &c.face_mask, &c.body_mask))
            .collect::<Result<Vec<_>>>()?;
        let skeleton = encoder.feature(&record.skeleton, record.image_size, grid, control, mode)?;
        Ok(Self { grid, masks, skeleton })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectConfig<T: Real> {
    pub weights: AttentionWeights<T>,
    pub merge_mode: MergeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDiagnostics {
    /// Zero-based prompt character.
    pub character: usize,
    pub region: usize,
    pub branch_l2: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput<T: Real> {
    pub latent: Tensor<T>,
    /// `z + text + skeleton`, the fallback for uncovered cells.
    pub base: Tensor<T>,
    /// Indexed by prompt character.
    pub branches: Vec<Tensor<T>>,
    pub diagnostics: Vec<BranchDiagnostics>,
}

/// One injection step: a branch per character under its assigned region,
/// then the masked merge.
///
/// `perm[k]` is the region of character `k`, whose features are `feats[k]`.
/// Every branch is bitwise equal to [`build_branch`] on the same inputs.
pub fn hmsi_step<T: Real>(
    cfg: &InjectConfig<T>,
    scene: &Scene<T>,
    perm: &[usize],
    feats: &[CharacterFeatures<T>],
    z_t: &Tensor<T>,
    c_text: &Tensor<T>,
) -> Result<StepOutput<T>> {
    let n = scene.masks.len();
    if perm.len() != n {
        return Err(InjectError::Arity {
            what: "assignment length vs regions",
            expected: n,
            found: perm.len(),
        });
    }
    if feats.len() != n {
        return Err(InjectError::Arity {
            what: "character features vs regions",
            expected: n,
            found: feats.len(),
        });
    }
    let mut seen = vec![false; n];
    for &r in perm {
        if r >= n || std::mem::replace(&mut seen[r], true) {
            return Err(InjectError::NotABijection(perm.to_vec()));
        }
    }
    let inputs = BranchInputs {
        z_t,
        c_text,
        skeleton: &scene.skeleton,
        weights: &cfg.weights,
    };
    check_inputs(&inputs)?;
    check_masks(z_t, &scene.masks[0])?;

    let w = &cfg.weights;
    let q = z_t.matmul(&w.w_q)?;
    let z_text = z_t.add(&text_attention(z_t, c_text, w)?)?;
    let base = z_text.add(&scene.skeleton)?;

    let mut branches = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    for (k, (&region, f)) in perm.iter().zip(feats).enumerate() {
        let masks = &scene.masks[region];
        let identity = fuse_with_query(&q, f, masks, w)?;
        let branch = z_text.add(&identity)?.add(&scene.skeleton)?;
        diagnostics.push(BranchDiagnostics {
            character: k,
            region,
            branch_l2: branch.l2_norm().to_f64_lossy(),
            coverage: masks.coverage(),
        });
        branches.push(branch);
    }
    let unions: Vec<&[T]> = perm.iter().map(|&r| scene.masks[r].union()).collect();
    let latent = merge_branches(&branches, &unions, &base, cfg.merge_mode)?;
    Ok(StepOutput {
        latent,
        base,
        branches,
        diagnostics,
    })
}

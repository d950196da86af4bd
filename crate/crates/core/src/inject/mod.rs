//! Regional character injection.
//!
//! Each subject gets its own conditioned branch under the shared global
//! prompt and skeleton: the latent plus a text cross-attention term, a
//! face/body identity term restricted by that subject's masks, and the
//! control-branch skeleton term. Branches are then merged by their union
//! masks.

mod branch;
mod encoder;
mod masks;
mod skeleton;

use thiserror::Error;

use crate::diffusion::DiffusionError;
use crate::kernels::TensorError;

pub use branch::{
    branch_terms, build_branch, fuse_face_body, hmsi_step, merge_branches, BranchDiagnostics,
    BranchInputs, BranchTerms, InjectConfig, MergeMode, Scene, StepOutput,
};
pub use encoder::{
    extract_disentangled, CharacterFeatures, DisentangledExtractor, ImageEncoder,
    ProjectionEncoder, BODY_SEED_OFFSET, DEFAULT_IMAGE_TOKENS, POOL_GRID,
};
pub use masks::{LatentGrid, SubjectMasks};
pub use skeleton::{rasterize_skeleton, SkeletonEncoder};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InjectError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error("empty reference crop")]
    EmptyCrop,
    #[error("{what}: expected {expected}, found {found}")]
    Arity {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("merge needs at least one branch")]
    NoBranches,
    #[error("invalid mask: {0}")]
    InvalidMask(String),
    #[error("assignment is not a bijection: {0:?}")]
    NotABijection(Vec<usize>),
}

pub type Result<T> = std::result::Result<T, InjectError>;

//! Retrieval-augmented multi-subject latent injection.
//!
//! The crate covers the whole desk-scale pipeline: text-feature retrieval over
//! an annotated pose database ([`msdb`]), character-to-region assignment
//! ([`assign`]), regional character injection ([`inject`]) on top of the
//! attention and diffusion kernels ([`kernels`], [`diffusion`]), and the
//! orchestration that ties them together ([`pipeline`]).
//!
//! Numeric kernels are generic over [`Real`]; the aliases below fix them to
//! `f64`, which is what the pipeline uses.

pub mod assign;
pub mod diffusion;
pub mod inject;
pub mod kernels;
pub mod msdb;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use scalar::Real;

pub type Tensor = kernels::Tensor<f64>;
pub type Tensor32 = kernels::Tensor<f32>;
pub type AttentionWeights = kernels::AttentionWeights<f64>;
pub type CharacterFeatures = inject::CharacterFeatures<f64>;
pub type SubjectMasks = inject::SubjectMasks<f64>;

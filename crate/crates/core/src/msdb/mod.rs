//! The annotated pose database: record schema, on-disk layout, synthetic
//! fixtures and exact retrieval.

mod encoder;
mod fixtures;
mod index;
mod keywords;
mod raster;
mod store;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use encoder::{fnv1a64, TextEncoder, DEFAULT_TEXT_ENCODER_SEED};
pub use fixtures::{fixtures_gen, FixtureSet, FixtureSpec, SUBJECT_VERBS};
pub use index::{mult_and_rank, random_choose, random_choose_index, Ranked, RetrievalIndex};
pub use keywords::{enumerate_pairs, KeywordGrid};
pub use raster::Raster;
pub use store::{
    build_index, load_index_dir, save_index, FEATURE_BANK_MAGIC, FEATURE_BANK_VERSION,
    FEATURE_FILE, MANIFEST_FILE,
};

/// COCO keypoint count per person.
pub const KEYPOINTS_PER_PERSON: usize = 17;
/// Unit-norm tolerance for features held at full precision.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;
/// Unit-norm tolerance for features that went through `f32` storage.
pub const STORED_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MsdbError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: invalid manifest record: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{file}: bad magic at offset 0")]
    BadMagic { file: PathBuf },
    #[error("{file}: unsupported version {found} at offset 8")]
    UnsupportedVersion { file: PathBuf, found: u32 },
    #[error("{file}: format error at offset {offset}: {reason}")]
    Format {
        file: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("count mismatch: manifest has {manifest} records, feature bank has {bank}")]
    CountMismatch { manifest: usize, bank: usize },
    #[error("{file}: dimension mismatch (record `{id}` expects {expected}, found {found})")]
    DimensionMismatch {
        file: PathBuf,
        id: String,
        expected: usize,
        found: usize,
    },
    #[error("record `{id}`: feature norm {norm} is not 1")]
    NonUnitFeature { id: String, norm: f64 },
    #[error("record `{id}`: {mask} is {found:?}, image is {expected:?}")]
    MaskSizeMismatch {
        id: String,
        mask: String,
        expected: (u32, u32),
        found: (u32, u32),
    },
    #[error("record `{id}`: {mask} has pixels other than 0 and 255")]
    NonBinaryMask { id: String, mask: String },
    #[error("record `{id}`: face and body masks of character region {region} overlap")]
    MasksOverlap { id: String, region: usize },
    #[error("record `{id}`: character region {region} has an empty union mask")]
    EmptyUnion { id: String, region: usize },
    #[error("record `{id}`: empty reference crop for region {region}")]
    EmptyCrop { id: String, region: usize },
    #[error("record `{id}`: caption: {reason}")]
    Caption { id: String, reason: String },
    #[error("record `{id}`: region labels are not a permutation of 1..={count}")]
    Labels { id: String, count: usize },
    #[error("record `{id}`: person {person} has {found} keypoints, expected 17")]
    SkeletonArity { id: String, person: usize, found: usize },
    #[error("record `{id}`: keypoint confidence {value} outside [0, 1]")]
    KeypointConfidence { id: String, value: f64 },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("unknown record id `{0}`")]
    UnknownId(String),
    #[error("index is empty")]
    EmptyIndex,
    #[error("shortlist size must be positive")]
    ZeroShortlist,
    #[error("cannot choose from an empty shortlist")]
    EmptyShortlist,
    #[error("query has dimension {found}, index has {expected}")]
    QueryDimension { expected: usize, found: usize },
    #[error("empty keyword layer: {0}")]
    EmptyKeywordLayer(&'static str),
    #[error("duplicate verb `{0}`")]
    DuplicateVerb(String),
    #[error("invalid keyword grid: {0}")]
    InvalidGrid(String),
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("unsupported character count {0} (supported: 1 or 2)")]
    UnsupportedCharacterCount(usize),
    #[error("invalid fixture parameters: {0}")]
    InvalidFixture(String),
    #[error("{path}: PGM format error at offset {offset}: {reason}")]
    Pgm {
        path: PathBuf,
        offset: usize,
        reason: String,
    },
}

/// Coarse classification used by the command line for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Validation,
}

impl MsdbError {
    pub fn class(&self) -> ErrorClass {
        match self {
            MsdbError::Io { .. } => ErrorClass::Io,
            MsdbError::BadMagic { .. }
            | MsdbError::UnsupportedVersion { .. }
            | MsdbError::Format { .. }
            | MsdbError::Pgm { .. }
            | MsdbError::Json { .. } => ErrorClass::Format,
            _ => ErrorClass::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MsdbError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, MsdbError>;

/// A 2-D keypoint in pixel coordinates with detector confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl From<[f64; 3]> for Keypoint {
    fn from([x, y, confidence]: [f64; 3]) -> Self {
        Self { x, y, confidence }
    }
}

impl From<Keypoint> for [f64; 3] {
    fn from(k: Keypoint) -> Self {
        [k.x, k.y, k.confidence]
    }
}

/// One person's 17 keypoints in COCO order.
pub type Person = Vec<Keypoint>;

/// One segmented person: disjoint face/body masks plus reference crops.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterRegion {
    /// Ground-truth caption character (`k` of "Character k") depicted here,
    /// when the record carries labels.
    pub label: Option<usize>,
    pub face_mask: Raster,
    pub body_mask: Raster,
    pub ref_face: Raster,
    pub ref_body: Raster,
}

impl CharacterRegion {
    pub fn union_mask(&self) -> Raster {
        self.face_mask.union(&self.body_mask)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsdbRecord {
    pub id: String,
    pub caption: String,
    pub feature: Vec<f64>,
    pub skeleton: Vec<Person>,
    pub characters: Vec<CharacterRegion>,
    /// `(width, height)` in pixels.
    pub image_size: (u32, u32),
}

impl MsdbRecord {
    pub fn num_characters(&self) -> usize {
        self.characters.len()
    }

    /// Checks every schema invariant with `norm_tolerance` for the feature.
    pub fn validate(&self, norm_tolerance: f64) -> Result<()> {
        let id = || self.id.clone();
        let norm = self.feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > norm_tolerance {
            return Err(MsdbError::NonUnitFeature { id: id(), norm });
        }

        let tokens = crate::assign::extract_character_tokens(&self.caption).map_err(|e| {
            MsdbError::Caption {
                id: id(),
                reason: e.to_string(),
            }
        })?;
        if tokens.len() != self.characters.len() {
            return Err(MsdbError::Caption {
                id: id(),
                reason: format!(
                    "{} character tokens for {} regions",
                    tokens.len(),
                    self.characters.len()
                ),
            });
        }

        let labels: Vec<usize> = self.characters.iter().filter_map(|c| c.label).collect();
        if !labels.is_empty() {
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            let n = self.characters.len();
            if labels.len() != n || sorted != (1..=n).collect::<Vec<_>>() {
                return Err(MsdbError::Labels { id: id(), count: n });
            }
        }

        let (w, h) = self.image_size;
        for (r, region) in self.characters.iter().enumerate() {
            for (name, mask) in [("face_mask", &region.face_mask), ("body_mask", &region.body_mask)] {
                if mask.size() != (w, h) {
                    return Err(MsdbError::MaskSizeMismatch {
                        id: id(),
                        mask: format!("region {r} {name}"),
                        expected: (w, h),
                        found: mask.size(),
                    });
                }
                if !mask.is_binary_mask() {
                    return Err(MsdbError::NonBinaryMask {
                        id: id(),
                        mask: format!("region {r} {name}"),
                    });
                }
            }
            if region.face_mask.intersects(&region.body_mask) {
                return Err(MsdbError::MasksOverlap { id: id(), region: r });
            }
            if region.union_mask().count_on() == 0 {
                return Err(MsdbError::EmptyUnion { id: id(), region: r });
            }
            if region.ref_face.is_empty() || region.ref_body.is_empty() {
                return Err(MsdbError::EmptyCrop { id: id(), region: r });
            }
        }

        for (p, person) in self.skeleton.iter().enumerate() {
            if person.len() != KEYPOINTS_PER_PERSON {
                return Err(MsdbError::SkeletonArity {
                    id: id(),
                    person: p,
                    found: person.len(),
                });
            }
            if let Some(k) = person
                .iter()
                .find(|k| !(0.0..=1.0).contains(&k.confidence) || !k.x.is_finite() || !k.y.is_finite())
            {
                return Err(MsdbError::KeypointConfidence {
                    id: id(),
                    value: k.confidence,
                });
            }
        }
        Ok(())
    }
}

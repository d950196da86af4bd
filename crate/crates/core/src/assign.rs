//! Character-to-region assignment.
//!
//! Prompt characters are the symbolic "Character k" tokens; regions are the
//! segmented people of a retrieved record. A [`RegionScorer`] rates every
//! (character, region) pair and [`assign`] picks the bijection with the
//! highest total score.
//!
//! The search is exhaustive over all `N!` permutations, which is what the
//! two-class head needs. Lifting the limit past a handful of characters
//! should swap [`best_permutation`] for a Hungarian solver.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msdb::{MsdbRecord, TextEncoder};
use crate::rng::SplitMix64;

/// Classes in the assignment head.
pub const DEFAULT_MAX_CHARACTERS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("non-consecutive character numbering: found {0:?}")]
    NonConsecutive(Vec<usize>),
    #[error("arity mismatch: prompt names {characters} characters, record has {regions} regions")]
    ArityMismatch { characters: usize, regions: usize },
    #[error("{found} characters exceed the configured maximum of {max}")]
    TooManyCharacters { found: usize, max: usize },
    #[error("scorer `{scorer}`: {reason}")]
    Scorer { scorer: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, AssignError>;

fn token_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bCharacter (\d+)\b").unwrap())
}

/// Character numbers in order of first appearance.
///
/// The distinct numbers must be exactly `1..=N`.
pub fn extract_character_tokens(prompt: &str) -> Result<Vec<usize>> {
    let mut seen = Vec::new();
    for cap in token_regex().captures_iter(prompt) {
        // Numbers too large for usize cannot be consecutive anyway.
        let k: usize = cap[1].parse().unwrap_or(usize::MAX);
        if !seen.contains(&k) {
            seen.push(k);
        }
    }
    let mut sorted = seen.clone();
    sorted.sort_unstable();
    if sorted.iter().enumerate().any(|(i, &k)| k != i + 1) {
        return Err(AssignError::NonConsecutive(seen));
    }
    Ok(seen)
}

/// Text from the first "Character k" token up to the next character token.
pub fn character_span(prompt: &str, k: usize) -> Option<&str> {
    let re = token_regex();
    let mut matches = re.captures_iter(prompt).map(|c| c.get(0).unwrap());
    let start = matches.find(|m| m.as_str()[10..].parse::<usize>().ok() == Some(k))?;
    let end = matches.next().map_or(prompt.len(), |m| m.start());
    Some(prompt[start.start()..end].trim_end())
}

/// `perm[k]` is the region assigned to prompt character `k + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    /// `scores[k][r]` for character `k + 1` and region `r`.
    pub scores: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn identity(n: usize) -> Self {
        Self {
            perm: (0..n).collect(),
            scores: vec![vec![0.0; n]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn is_bijection(&self) -> bool {
        let mut seen = vec![false; self.perm.len()];
        self.perm.iter().all(|&r| r < seen.len() && !std::mem::replace(&mut seen[r], true))
    }
}

/// Rates how well region `region` of `record` fits prompt character
/// `character + 1`. Implementations must be deterministic.
pub trait RegionScorer: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, prompt: &str, character: usize, record: &MsdbRecord, region: usize) -> Result<f64>;
}

/// Reads the planted ground-truth labels: 1 for the labelled character, 0
/// otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl RegionScorer for OracleScorer {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn score(&self, _prompt: &str, character: usize, record: &MsdbRecord, region: usize) -> Result<f64> {
        let label = record
            .characters
            .get(region)
            .and_then(|c| c.label)
            .ok_or_else(|| AssignError::Scorer {
                scorer: "oracle",
                reason: format!("record `{}` region {region} carries no label", record.id),
            })?;
        Ok(if label == character + 1 { 1.0 } else { 0.0 })
    }
}

/// Cosine between a text-span embedding and a geometric region embedding.
///
/// The span is the prompt text governed by the character token; the region
/// descriptor `[cx/w, cy/h, area fraction, face fraction, 1]` is projected
/// to the encoder dimension by a seeded uniform(-1, 1) matrix.
#[derive(Debug, Clone)]
pub struct StubScorer {
    encoder: TextEncoder,
    projection: Vec<f64>,
}

const REGION_DESCRIPTOR_LEN: usize = 5;

impl StubScorer {
    pub fn new(encoder: TextEncoder, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let projection = (0..REGION_DESCRIPTOR_LEN * encoder.dim())
            .map(|_| rng.uniform(-1.0, 1.0))
            .collect();
        Self { encoder, projection }
    }

    fn region_embedding(&self, record: &MsdbRecord, region: usize) -> Vec<f64> {
        let c = &record.characters[region];
        let (w, h) = record.image_size;
        let union = c.union_mask();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if union.is_on(x, y) {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        let n_safe = f64::max(n, 1.0);
        let desc = [
            sx / n_safe / w as f64,
            sy / n_safe / h as f64,
            n / (w as f64 * h as f64),
            c.face_mask.count_on() as f64 / n_safe,
            1.0,
        ];
        let d = self.encoder.dim();
        let mut v = vec![0.0; d];
        for (i, &x) in desc.iter().enumerate() {
            for (j, vj) in v.iter_mut().enumerate() {
                *vj += x * self.projection[i * d + j];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl RegionScorer for StubScorer {
    fn name(&self) -> &'static str {
        "stub"
    }

    fn score(&self, prompt: &str, character: usize, record: &MsdbRecord, region: usize) -> Result<f64> {
        let span = character_span(prompt, character + 1).ok_or_else(|| AssignError::Scorer {
            scorer: "stub",
            reason: format!("prompt has no `Character {}` token", character + 1),
        })?;
        let text = self.encoder.embed_text(span).map_err(|e| AssignError::Scorer {
            scorer: "stub",
            reason: e.to_string(),
        })?;
        let region = self.region_embedding(record, region);
        Ok(text.iter().zip(&region).map(|(a, b)| a * b).sum())
    }
}

/// The permutation maximizing `Σ_k scores[k][perm[k]]`; the lexicographically
/// smallest one on ties.
pub fn best_permutation(scores: &[Vec<f64>]) -> Vec<usize> {
    let n = scores.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(k, &r)| scores[k][r]).sum() };
    let mut best = perm.clone();
    let mut best_total = total(&perm);
    while next_permutation(&mut perm) {
        let t = total(&perm);
        if t > best_total {
            best_total = t;
            best.clone_from(&perm);
        }
    }
    best
}

/// Advances to the next lexicographic permutation; false after the last.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

pub fn assign(prompt: &str, record: &MsdbRecord, scorer: &dyn RegionScorer) -> Result<Assignment> {
    assign_with_limit(prompt, record, scorer, DEFAULT_MAX_CHARACTERS)
}

pub fn assign_with_limit(
    prompt: &str,
    record: &MsdbRecord,
    scorer: &dyn RegionScorer,
    max_characters: usize,
) -> Result<Assignment> {
    let n = extract_character_tokens(prompt)?.len();
    let regions = record.num_characters();
    if n != regions {
        return Err(AssignError::ArityMismatch {
            characters: n,
            regions,
        });
    }
    if n > max_characters {
        return Err(AssignError::TooManyCharacters {
            found: n,
            max: max_characters,
        });
    }
    let mut scores = Vec::with_capacity(n);
    for k in 0..n {
        let row = (0..n)
            .map(|r| scorer.score(prompt, k, record, r))
            .collect::<Result<Vec<f64>>>()?;
        scores.push(row);
    }
    let perm = best_permutation(&scores);
    Ok(Assignment { perm, scores })
}

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{MsdbError, MsdbRecord, Result, STORED_NORM_TOLERANCE};
use crate::kernels::Tensor;
use crate::rng::SplitMix64;

/// Immutable retrieval index: the records and their row-aligned features.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    records: Vec<MsdbRecord>,
    features: Tensor<f64>,
    by_id: HashMap<String, usize>,
}

impl RetrievalIndex {
    /// Validates every record and stacks their features.
    ///
    /// Feature norms are checked at storage tolerance so an index read back
    /// from an `f32` bank is accepted.
    pub fn from_records(records: Vec<MsdbRecord>) -> Result<Self> {
        let first = records.first().ok_or(MsdbError::EmptyIndex)?;
        let dim = first.feature.len();
        let mut by_id = HashMap::with_capacity(records.len());
        let mut flat = Vec::with_capacity(records.len() * dim);
        for (i, r) in records.iter().enumerate() {
            if r.feature.len() != dim {
                return Err(MsdbError::DimensionMismatch {
                    file: "<memory>".into(),
                    id: r.id.clone(),
                    expected: dim,
                    found: r.feature.len(),
                });
            }
            r.validate(STORED_NORM_TOLERANCE)?;
            if by_id.insert(r.id.clone(), i).is_some() {
                return Err(MsdbError::DuplicateId(r.id.clone()));
            }
            flat.extend_from_slice(&r.feature);
        }
        let features = Tensor::new(vec![records.len(), dim], flat)
            .map_err(|e| MsdbError::InvalidFixture(e.to_string()))?;
        Ok(Self {
            records,
            features,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn records(&self) -> &[MsdbRecord] {
        &self.records
    }

    pub fn feature_matrix(&self) -> &Tensor<f64> {
        &self.features
    }

    pub fn get(&self, id: &str) -> Result<&MsdbRecord> {
        self.by_id
            .get(id)
            .map(|&i| &self.records[i])
            .ok_or_else(|| MsdbError::UnknownId(id.to_string()))
    }

    /// FNV-1a over the little-endian bytes of the feature matrix.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for x in self.features.data() {
            for b in x.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01B3);
            }
        }
        h
    }
}

/// One ranked hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub id: String,
    pub score: f64,
}

/// The `m` highest dot-product scores, descending, ties by ascending id.
///
/// Returns every record when `m` exceeds the index size.
pub fn mult_and_rank(query: &[f64], index: &RetrievalIndex, m: usize) -> Result<Vec<Ranked>> {
    if index.is_empty() {
        return Err(MsdbError::EmptyIndex);
    }
    if m == 0 {
        return Err(MsdbError::ZeroShortlist);
    }
    if query.len() != index.dim() {
        return Err(MsdbError::QueryDimension {
            expected: index.dim(),
            found: query.len(),
        });
    }
    let scores: Vec<f64> = (0..index.len())
        .map(|i| {
            index
                .features
                .row(i)
                .iter()
                .zip(query)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect();
    let records = &index.records;
    let order = |&a: &usize, &b: &usize| -> Ordering {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| records[a].id.cmp(&records[b].id))
    };
    let mut idx: Vec<usize> = (0..index.len()).collect();
    let m = m.min(idx.len());
    if m < idx.len() {
        idx.select_nth_unstable_by(m - 1, order);
        idx.truncate(m);
    }
    idx.sort_unstable_by(order);
    Ok(idx
        .into_iter()
        .map(|i| Ranked {
            id: records[i].id.clone(),
            score: scores[i],
        })
        .collect())
}

/// Uniform index in `[0, len)` from `SplitMix64(seed)` with rejection sampling.
pub fn random_choose_index(len: usize, seed: u64) -> Result<usize> {
    if len == 0 {
        return Err(MsdbError::EmptyShortlist);
    }
    Ok(SplitMix64::new(seed).below(len as u64) as usize)
}

pub fn random_choose<T>(shortlist: &[T], seed: u64) -> Result<&T> {
    random_choose_index(shortlist.len(), seed).map(|i| &shortlist[i])
}

use crate::kernels::Tensor;
use crate::rng::SplitMix64;

use super::{MsdbError, Result};

pub const DEFAULT_TEXT_ENCODER_SEED: u64 = 7;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Deterministic stand-in for a learned text encoder.
///
/// Tokens are maximal ASCII-alphanumeric runs, lowercased. Each token `w`
/// owns a projection row of `dim` uniform(-1, 1) draws from
/// `SplitMix64(seed ^ fnv1a64(w))`. A prompt embeds to the L2-normalized sum
/// of its token rows (a random projection of the token-hash bag).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoder {
    seed: u64,
    dim: usize,
}

impl TextEncoder {
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { seed, dim }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokenize(prompt: &str) -> Vec<String> {
        prompt
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_ascii_lowercase)
            .collect()
    }

    pub fn token_row(&self, token: &str) -> Vec<f64> {
        let mut rng = SplitMix64::new(self.seed ^ fnv1a64(token.as_bytes()));
        (0..self.dim).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    /// Unit-norm prompt feature.
    pub fn embed_text(&self, prompt: &str) -> Result<Vec<f64>> {
        let tokens = Self::tokenize(prompt);
        if tokens.is_empty() {
            return Err(MsdbError::EmptyPrompt);
        }
        let mut acc = vec![0.0; self.dim];
        for t in &tokens {
            for (a, r) in acc.iter_mut().zip(self.token_row(t)) {
                *a += r;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(MsdbError::EmptyPrompt);
        }
        Ok(acc.into_iter().map(|x| x / norm).collect())
    }

    /// Token-level features, one row per token in prompt order.
    pub fn encode_tokens(&self, prompt: &str) -> Result<Tensor<f64>> {
        let tokens = Self::tokenize(prompt);
        if tokens.is_empty() {
            return Err(MsdbError::EmptyPrompt);
        }
        let rows: Vec<Vec<f64>> = tokens.iter().map(|t| self.token_row(t)).collect();
        Ok(Tensor::from_rows(&rows).expect("token rows share the encoder dimension"))
    }
}

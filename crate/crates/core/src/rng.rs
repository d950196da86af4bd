//! SplitMix64 and the seed-stream derivation shared by every stage.
//!
//! All pseudo-randomness in the crate flows through [`SplitMix64`] so that
//! fixtures and reports are reproducible bit-for-bit on any platform.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream constants XOR-ed into the run seed, one per pipeline stage.
pub mod stream {
    pub const RETRIEVAL: u64 = 0x5245_5452_4945_5645;
    pub const NOISE: u64 = 0x4E4F_4953_455F_5354;
    pub const STEP_NOISE: u64 = 0x5354_4550_4E4F_4953;
    pub const ATTENTION: u64 = 0x4154_544E_5745_4947;
    pub const IMAGE_ENCODER: u64 = 0x494D_4745_4E43_4F44;
    pub const SKELETON: u64 = 0x534B_454C_4554_4F4E;
    pub const TEXT_TOKENS: u64 = 0x5445_5854_544F_4B53;
    pub const SCORER: u64 = 0x5343_4F52_4552_5354;
}

/// Derive an independent stream seed for a stage.
#[inline]
pub fn derive(seed: u64, stage: u64) -> u64 {
    seed ^ stage
}

/// SplitMix64 finalizer applied to a single word.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Unbiased index in `[0, n)` by rejection sampling.
    ///
    /// Draws above the largest multiple of `n` representable in 64 bits are
    /// discarded, so every residue is equally likely.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let limit = (u64::MAX / n) * n;
        loop {
            let x = self.next_u64();
            if x < limit {
                return x % n;
            }
        }
    }

    /// Standard normal via Box-Muller (cosine branch only, one draw per call).
    pub fn next_normal(&mut self) -> f64 {
        // 1 - u keeps the log argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

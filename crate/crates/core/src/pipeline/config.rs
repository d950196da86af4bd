use serde::{Deserialize, Serialize};

use crate::assign::DEFAULT_MAX_CHARACTERS;
use crate::diffusion::{
    PreserveMode, Schedule, DEFAULT_ALPHA_BAR_END, DEFAULT_ALPHA_BAR_START, DEFAULT_CFG_SCALE,
    DEFAULT_STEPS,
};
use crate::inject::{LatentGrid, MergeMode, DEFAULT_IMAGE_TOKENS};
use crate::msdb::DEFAULT_TEXT_ENCODER_SEED;

/// Smallest accepted latent grid side.
pub const MIN_GRID_SIDE: usize = 8;

/// Every tunable of a run. Missing JSON fields take their defaults; unknown
/// fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    /// `(h, w)`; the default is 768×1344 downscaled by 24.
    pub latent_grid: LatentGrid,
    pub feature_dim: usize,
    pub shortlist_m: usize,
    pub seed: u64,
    pub merge_mode: MergeMode,
    pub preserve_mode: PreserveMode,
    /// Control-branch scale `λ`.
    pub control_scale: f64,
    pub text_encoder_seed: u64,
    pub image_tokens: usize,
    pub max_characters: usize,
    /// Overrides the default linear schedule; must have `steps` entries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            cfg_scale: DEFAULT_CFG_SCALE,
            latent_grid: LatentGrid::new(32, 56).expect("positive grid"),
            feature_dim: 64,
            shortlist_m: 5,
            seed: 0,
            merge_mode: MergeMode::default(),
            preserve_mode: PreserveMode::default(),
            control_scale: 1.0,
            text_encoder_seed: DEFAULT_TEXT_ENCODER_SEED,
            image_tokens: DEFAULT_IMAGE_TOKENS,
            max_characters: DEFAULT_MAX_CHARACTERS,
            schedule: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.steps == 0 {
            return Err("steps must be at least 1".into());
        }
        if !(self.cfg_scale.is_finite() && self.cfg_scale >= 0.0) {
            return Err(format!("cfg_scale must be finite and non-negative, got {}", self.cfg_scale));
        }
        let g = self.latent_grid;
        if g.h() < MIN_GRID_SIDE || g.w() < MIN_GRID_SIDE {
            return Err(format!(
                "latent_grid {}x{} is below the minimum side {MIN_GRID_SIDE}",
                g.h(),
                g.w()
            ));
        }
        if self.feature_dim == 0 {
            return Err("feature_dim must be positive".into());
        }
        if self.shortlist_m == 0 {
            return Err("shortlist_m must be at least 1".into());
        }
        if !self.control_scale.is_finite() {
            return Err("control_scale must be finite".into());
        }
        if self.image_tokens == 0 {
            return Err("image_tokens must be at least 1".into());
        }
        if self.max_characters == 0 {
            return Err("max_characters must be at least 1".into());
        }
        if let Some(s) = &self.schedule {
            if s.t_max() != self.steps {
                return Err(format!("schedule has {} entries but steps is {}", s.t_max(), self.steps));
            }
        }
        Ok(())
    }

    /// The explicit schedule, or the default linear one over `steps`.
    pub fn resolved_schedule(&self) -> Result<Schedule, String> {
        match &self.schedule {
            Some(s) => Ok(s.clone()),
            None => Schedule::linear(self.steps, DEFAULT_ALPHA_BAR_START, DEFAULT_ALPHA_BAR_END)
                .map_err(|e| e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c: PipelineConfig = serde_json::from_str(r#"{"seed": 9, "latent_grid": [16, 24]}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.steps, 17);
        assert_eq!(c.cfg_scale, 2.5);
        assert_eq!((c.latent_grid.h(), c.latent_grid.w()), (16, 24));
        c.validate().unwrap();
        assert_eq!(c.resolved_schedule().unwrap().t_max(), 17);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"stepz": 3}"#).is_err());
        let bad = [
            PipelineConfig { steps: 0, ..Default::default() },
            PipelineConfig { cfg_scale: -1.0, ..Default::default() },
            PipelineConfig { latent_grid: LatentGrid::new(4, 56).unwrap(), ..Default::default() },
            PipelineConfig { shortlist_m: 0, ..Default::default() },
            PipelineConfig { schedule: Some(Schedule::linear(3, 0.9, 0.1).unwrap()), ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn roundtrips_through_json() {
        let c = PipelineConfig {
            merge_mode: MergeMode::PaperLiteral,
            preserve_mode: PreserveMode::Strict,
            schedule: Some(Schedule::linear(17, 0.99, 0.01).unwrap()),
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains(r#""merge_mode":"paper_literal""#));
        assert_eq!(serde_json::from_str::<PipelineConfig>(&s).unwrap(), c);
    }
}

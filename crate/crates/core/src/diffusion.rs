//! Forward noising, the noise-prediction loss, zero-initialized control
//! conditioning, and classifier-free-guidance mixing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{Tensor, TensorError};
use crate::rng::SplitMix64;
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiffusionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("timestep {t} out of range for a {t_max}-step schedule")]
    TimestepOutOfRange { t: usize, t_max: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;

/// Default number of steps; matches the sampler step count used at inference.
pub const DEFAULT_STEPS: usize = 17;
pub const DEFAULT_ALPHA_BAR_START: f64 = 0.9999;
pub const DEFAULT_ALPHA_BAR_END: f64 = 0.002;
/// Classifier-free guidance scale used at inference.
pub const DEFAULT_CFG_SCALE: f64 = 2.5;

/// Cumulative signal-retention factors `ᾱ_t` for `t = 0..T`.
///
/// Index 0 is the least noisy step. Entries are non-increasing and in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct Schedule {
    alpha_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScheduleRepr {
    t_max: usize,
    alpha_bar: Vec<f64>,
}

impl TryFrom<ScheduleRepr> for Schedule {
    type Error = DiffusionError;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        if r.t_max != r.alpha_bar.len() {
            return Err(DiffusionError::InvalidSchedule(format!(
                "t_max {} but {} alpha_bar entries",
                r.t_max,
                r.alpha_bar.len()
            )));
        }
        Schedule::new(r.alpha_bar)
    }
}

impl From<Schedule> for ScheduleRepr {
    fn from(s: Schedule) -> Self {
        Self {
            t_max: s.alpha_bar.len(),
            alpha_bar: s.alpha_bar,
        }
    }
}

impl Schedule {
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.is_empty() {
            return Err(DiffusionError::InvalidSchedule("empty".into()));
        }
        for (i, &a) in alpha_bar.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(DiffusionError::InvalidSchedule(format!(
                    "alpha_bar[{i}] = {a} outside [0, 1]"
                )));
            }
        }
        if let Some(i) = alpha_bar.windows(2).position(|w| w[1] > w[0]) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "alpha_bar increases at index {}",
                i + 1
            )));
        }
        Ok(Self { alpha_bar })
    }

    /// `t_max` values linearly spaced from `start` down to `end`.
    pub fn linear(t_max: usize, start: f64, end: f64) -> Result<Self> {
        match t_max {
            0 => Err(DiffusionError::InvalidSchedule("t_max must be positive".into())),
            1 => Self::new(vec![start]),
            _ => {
                let step = (start - end) / (t_max - 1) as f64;
                let mut v: Vec<f64> = (0..t_max).map(|i| start - step * i as f64).collect();
                v[t_max - 1] = end;
                Self::new(v)
            }
        }
    }

    pub fn t_max(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar
            .get(t)
            .copied()
            .ok_or(DiffusionError::TimestepOutOfRange {
                t,
                t_max: self.t_max(),
            })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_ALPHA_BAR_START, DEFAULT_ALPHA_BAR_END)
            .expect("default schedule is valid")
    }
}

/// `√ᾱ_t · z0 + √(1 − ᾱ_t) · eps`, elementwise.
pub fn forward_noise<T: Real>(z0: &Tensor<T>, t: usize, sched: &Schedule, eps: &Tensor<T>) -> Result<Tensor<T>> {
    let a = sched.alpha_bar(t)?;
    z0.same_shape(eps, "forward_noise")?;
    let signal = T::of(a.sqrt());
    let noise = T::of((1.0 - a).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| signal * x + noise * e)
        .collect();
    Ok(Tensor::new(z0.shape().to_vec(), data)?)
}

/// Noise predictor `ε_θ(z_t, t, c_text)`.
pub trait ToyDenoiser<T: Real> {
    fn predict(&self, z_t: &Tensor<T>, t: usize, c_text: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl<T: Real> ToyDenoiser<T> for ZeroDenoiser {
    fn predict(&self, z_t: &Tensor<T>, _t: usize, _c: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(z_t.shape().to_vec())?)
    }
}

/// Returns the noise it was built with: a perfect predictor for oracle tests.
#[derive(Debug, Clone)]
pub struct EchoDenoiser<T: Real> {
    pub eps: Tensor<T>,
}

impl<T: Real> ToyDenoiser<T> for EchoDenoiser<T> {
    fn predict(&self, z_t: &Tensor<T>, _t: usize, _c: &Tensor<T>) -> Result<Tensor<T>> {
        z_t.same_shape(&self.eps, "EchoDenoiser")?;
        Ok(self.eps.clone())
    }
}

/// `z_t · A + 0.01·t + mean(c_text)` with a seeded `width × width` matrix `A`
/// drawn uniform(-0.1, 0.1), row-major. The latent is viewed as
/// `(len / width) × width`.
#[derive(Debug, Clone)]
pub struct SeededLinearDenoiser<T: Real> {
    map: Tensor<T>,
}

impl<T: Real> SeededLinearDenoiser<T> {
    pub fn new(seed: u64, width: usize) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let map = Tensor::from_fn(vec![width, width], |_| T::of(rng.uniform(-0.1, 0.1)))?;
        Ok(Self { map })
    }

    pub fn map(&self) -> &Tensor<T> {
        &self.map
    }
}

impl<T: Real> ToyDenoiser<T> for SeededLinearDenoiser<T> {
    fn predict(&self, z_t: &Tensor<T>, t: usize, c_text: &Tensor<T>) -> Result<Tensor<T>> {
        let width = self.map.rows();
        if !z_t.len().is_multiple_of(width) {
            return Err(TensorError::ShapeMismatch {
                op: "SeededLinearDenoiser",
                axis: "width",
                expected: width,
                found: z_t.cols(),
            }
            .into());
        }
        let view = z_t.clone().reshape(vec![z_t.len() / width, width])?;
        let bias = T::of(0.01 * t as f64) + c_text.sum() / T::of(c_text.len() as f64);
        let out = view.matmul(&self.map)?.map(|x| x + bias);
        Ok(out.reshape(z_t.shape().to_vec())?)
    }
}

/// Single-sample estimate of the noise-prediction loss:
/// `‖eps − ε_θ(forward_noise(z0, t, eps), t, c_text)‖²`.
pub fn dm_loss<T: Real, D: ToyDenoiser<T> + ?Sized>(
    z0: &Tensor<T>,
    t: usize,
    c_text: &Tensor<T>,
    sched: &Schedule,
    denoiser: &D,
    eps: &Tensor<T>,
) -> Result<T> {
    let z_t = forward_noise(z0, t, sched, eps)?;
    let pred = denoiser.predict(&z_t, t, c_text)?;
    if pred.shape() != z0.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "dm_loss",
            axis: "prediction",
            expected: z0.len(),
            found: pred.len(),
        }
        .into());
    }
    Ok(eps.sub(&pred)?.squared_norm())
}

/// How the control branch enters the output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreserveMode {
    /// `f_c = c + ZeroConv(c)`, as the combination is written.
    #[default]
    PaperLiteral,
    /// `f_c = ZeroConv(c)`, which vanishes while the weights are zero.
    Strict,
}

/// Control-branch scale `λ` and the zero-initialized `ZeroConv` map.
///
/// `ZeroConv` is a dense `channels × channels` map applied to the last axis,
/// the 1×1-convolution equivalent.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlConfig<T: Real> {
    lambda: T,
    zero_conv: Tensor<T>,
}

impl<T: Real> ControlConfig<T> {
    pub fn new(lambda: T, channels: usize) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(DiffusionError::InvalidSchedule("non-finite control scale".into()));
        }
        Ok(Self {
            lambda,
            zero_conv: Tensor::zeros(vec![channels, channels])?,
        })
    }

    /// Replaces the zero map, e.g. to model weights after some training.
    pub fn with_weights(mut self, weights: Tensor<T>) -> Result<Self> {
        self.zero_conv.same_shape(&weights, "ControlConfig::with_weights")?;
        self.zero_conv = weights;
        Ok(self)
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn zero_conv(&self) -> &Tensor<T> {
        &self.zero_conv
    }

    pub fn channels(&self) -> usize {
        self.zero_conv.rows()
    }
}

/// `f_original + λ · f_c` with `f_c` chosen by `mode`.
pub fn control_combine<T: Real>(
    f_original: &Tensor<T>,
    c_feature: &Tensor<T>,
    cfg: &ControlConfig<T>,
    mode: PreserveMode,
) -> Result<Tensor<T>> {
    f_original.same_shape(c_feature, "control_combine")?;
    let (_, c) = c_feature.dims2("control_combine")?;
    if c != cfg.channels() {
        return Err(TensorError::ShapeMismatch {
            op: "control_combine",
            axis: "channels",
            expected: cfg.channels(),
            found: c,
        }
        .into());
    }
    let conv = c_feature.matmul(&cfg.zero_conv)?;
    let f_c = match mode {
        PreserveMode::PaperLiteral => c_feature.add(&conv)?,
        PreserveMode::Strict => conv,
    };
    Ok(f_original.add(&f_c.scale(cfg.lambda))?)
}

/// `eps_uncond + scale · (eps_cond − eps_uncond)`.
pub fn cfg_mix<T: Real>(eps_uncond: &Tensor<T>, eps_cond: &Tensor<T>, scale: T) -> Result<Tensor<T>> {
    eps_uncond.same_shape(eps_cond, "cfg_mix")?;
    let data = eps_uncond
        .data()
        .iter()
        .zip(eps_cond.data())
        .map(|(&u, &c)| u + scale * (c - u))
        .collect();
    Ok(Tensor::new(eps_uncond.shape().to_vec(), data)?)
}

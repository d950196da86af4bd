use super::{LatentGrid, Result};
use crate::diffusion::{control_combine, ControlConfig, PreserveMode};
use crate::kernels::Tensor;
use crate::msdb::{Person, KEYPOINTS_PER_PERSON};
use crate::rng::SplitMix64;
use crate::scalar::Real;

/// Gaussian splat radius, in cells.
const SPLAT_RADIUS: isize = 2;

/// Keypoint heatmaps on the latent grid, `cells × 17`.
///
/// Each keypoint adds `confidence · exp(-d²/2)` to its channel, with `d` the
/// distance in cells from its cell centre, within a radius of two cells.
/// Heatmaps of all persons accumulate.
pub fn rasterize_skeleton<T: Real>(skeleton: &[Person], image_size: (u32, u32), grid: LatentGrid) -> Result<Tensor<T>> {
    let (w, h) = (image_size.0 as f64, image_size.1 as f64);
    let mut heat = vec![0.0f64; grid.cells() * KEYPOINTS_PER_PERSON];
    for person in skeleton {
        for (j, kp) in person.iter().enumerate().take(KEYPOINTS_PER_PERSON) {
            if kp.confidence <= 0.0 {
                continue;
            }
            let gx = kp.x / w * grid.w() as f64 - 0.5;
            let gy = kp.y / h * grid.h() as f64 - 0.5;
            let (cr, cc) = (gy.round() as isize, gx.round() as isize);
            for r in cr - SPLAT_RADIUS..=cr + SPLAT_RADIUS {
                for c in cc - SPLAT_RADIUS..=cc + SPLAT_RADIUS {
                    if r < 0 || c < 0 || r >= grid.h() as isize || c >= grid.w() as isize {
                        continue;
                    }
                    let d2 = (r as f64 - gy).powi(2) + (c as f64 - gx).powi(2);
                    let cell = r as usize * grid.w() + c as usize;
                    heat[cell * KEYPOINTS_PER_PERSON + j] += kp.confidence * (-d2 / 2.0).exp();
                }
            }
        }
    }
    Ok(Tensor::new(
        vec![grid.cells(), KEYPOINTS_PER_PERSON],
        heat.into_iter().map(T::of).collect(),
    )?)
}

/// Control encoder: a seeded uniform(-1, 1) map from the 17 heatmap
/// channels to `d_model`.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonEncoder<T: Real> {
    projection: Tensor<T>,
}

impl<T: Real> SkeletonEncoder<T> {
    pub fn new(seed: u64, d_model: usize) -> Result<Self> {
        let mut rng = SplitMix64::new(seed);
        let projection = Tensor::from_fn(vec![KEYPOINTS_PER_PERSON, d_model], |_| T::of(rng.uniform(-1.0, 1.0)))?;
        Ok(Self { projection })
    }

    pub fn d_model(&self) -> usize {
        self.projection.cols()
    }

    pub fn encode(&self, heat: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(heat.matmul(&self.projection)?)
    }

    /// The skeleton term of every branch: the control branch combined onto
    /// a zero original feature.
    pub fn feature(
        &self,
        skeleton: &[Person],
        image_size: (u32, u32),
        grid: LatentGrid,
        control: &ControlConfig<T>,
        mode: PreserveMode,
    ) -> Result<Tensor<T>> {
        let c = self.encode(&rasterize_skeleton(skeleton, image_size, grid)?)?;
        let zeros = Tensor::zeros(c.shape().to_vec())?;
        Ok(control_combine(&zeros, &c, control, mode)?)
    }
}

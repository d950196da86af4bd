use super::{InjectError, Result};
use crate::kernels::Tensor;
use crate::msdb::Raster;
use crate::rng::SplitMix64;
use crate::scalar::Real;

/// Side length of the adaptive mean-pool grid applied to every crop.
pub const POOL_GRID: usize = 4;
/// Feature tokens produced per crop.
pub const DEFAULT_IMAGE_TOKENS: usize = 4;
/// Added to the face-path seed to obtain the body-path seed.
pub const BODY_SEED_OFFSET: u64 = 0x0B0D_1E5E_ED00_0001;

/// Identity features of one prompt character.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacterFeatures<T: Real> {
    /// `tokens × d_model`
    pub f_face: Tensor<T>,
    /// `tokens × d_model`
    pub f_body: Tensor<T>,
    /// Zero-based prompt character (`Character k+1`).
    pub source_char: usize,
}

impl<T: Real> CharacterFeatures<T> {
    /// Same shapes, all zeros.
    pub fn zeroed(&self) -> Self {
        Self {
            f_face: self.f_face.map(|_| T::zero()),
            f_body: self.f_body.map(|_| T::zero()),
            source_char: self.source_char,
        }
    }
}

pub trait ImageEncoder<T: Real>: Send + Sync {
    fn encode(&self, crop: &Raster) -> Result<Tensor<T>>;
}

/// Mean-pools a crop onto a 4×4 grid (intensities scaled to `[0, 1]`) and
/// projects the 16 pooled values to `tokens × d_model` with a seeded
/// uniform(-1, 1)/4 matrix, row-major.
///
/// The map is linear in the pooled values, so an all-zero crop encodes to
/// the zero tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionEncoder<T: Real> {
    tokens: usize,
    d_model: usize,
    projection: Tensor<T>,
}

impl<T: Real> ProjectionEncoder<T> {
    pub fn new(seed: u64, tokens: usize, d_model: usize) -> Result<Self> {
        let cells = POOL_GRID * POOL_GRID;
        let scale = 1.0 / (cells as f64).sqrt();
        let mut rng = SplitMix64::new(seed);
        let projection = Tensor::from_fn(vec![cells, tokens * d_model], |_| {
            T::of(rng.uniform(-1.0, 1.0) * scale)
        })?;
        Ok(Self {
            tokens,
            d_model,
            projection,
        })
    }

    pub fn projection(&self) -> &Tensor<T> {
        &self.projection
    }
}

/// Adaptive mean pool of a raster onto `POOL_GRID × POOL_GRID` cells.
pub(crate) fn pool(crop: &Raster) -> Vec<f64> {
    let (w, h) = (crop.width() as usize, crop.height() as usize);
    let mut out = Vec::with_capacity(POOL_GRID * POOL_GRID);
    for gy in 0..POOL_GRID {
        let (y0, y1) = cell_bounds(gy, POOL_GRID, h);
        for gx in 0..POOL_GRID {
            let (x0, x1) = cell_bounds(gx, POOL_GRID, w);
            let mut total = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    total += crop.get(x as u32, y as u32) as f64;
                }
            }
            out.push(total / ((y1 - y0) * (x1 - x0)) as f64 / 255.0);
        }
    }
    out
}

/// Pixel range `[start, end)` covered by cell `i` of `cells` over `len`
/// pixels; never empty.
pub(crate) fn cell_bounds(i: usize, cells: usize, len: usize) -> (usize, usize) {
    let start = (i * len / cells).min(len - 1);
    let end = ((i + 1) * len / cells).max(start + 1).min(len);
    (start, end)
}

impl<T: Real> ImageEncoder<T> for ProjectionEncoder<T> {
    fn encode(&self, crop: &Raster) -> Result<Tensor<T>> {
        if crop.is_empty() {
            return Err(InjectError::EmptyCrop);
        }
        let pooled = pool(crop);
        let row = Tensor::new(vec![1, pooled.len()], pooled.into_iter().map(T::of).collect())?;
        Ok(row.matmul(&self.projection)?.reshape(vec![self.tokens, self.d_model])?)
    }
}

/// Two independently seeded encoders, one for face crops and one for body
/// crops.
#[derive(Debug, Clone, PartialEq)]
pub struct DisentangledExtractor<T: Real> {
    pub face: ProjectionEncoder<T>,
    pub body: ProjectionEncoder<T>,
}

impl<T: Real> DisentangledExtractor<T> {
    pub fn new(seed: u64, tokens: usize, d_model: usize) -> Result<Self> {
        Ok(Self {
            face: ProjectionEncoder::new(seed, tokens, d_model)?,
            body: ProjectionEncoder::new(seed.wrapping_add(BODY_SEED_OFFSET), tokens, d_model)?,
        })
    }
}

pub fn extract_disentangled<T: Real>(
    ref_face: &Raster,
    ref_body: &Raster,
    extractor: &DisentangledExtractor<T>,
    source_char: usize,
) -> Result<CharacterFeatures<T>> {
    Ok(CharacterFeatures {
        f_face: extractor.face.encode(ref_face)?,
        f_body: extractor.body.encode(ref_body)?,
        source_char,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_crop_encodes_to_zero() {
        let enc = ProjectionEncoder::<f64>::new(1, 4, 8).unwrap();
        let f = enc.encode(&Raster::blank(10, 7)).unwrap();
        assert_eq!(f.shape(), &[4, 8]);
        assert!(f.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_crop_rejected() {
        let enc = ProjectionEncoder::<f64>::new(1, 4, 8).unwrap();
        let err = enc.encode(&Raster::blank(0, 5)).unwrap_err();
        assert_eq!(err.to_string(), "empty reference crop");
    }

    #[test]
    fn face_and_body_paths_differ() {
        let ex = DisentangledExtractor::<f64>::new(11, 4, 8).unwrap();
        let crop = Raster::from_fn(8, 8, |x, y| (x * 20 + y * 5) as u8);
        let f = extract_disentangled(&crop, &crop, &ex, 0).unwrap();
        assert_ne!(f.f_face, f.f_body);
    }

    #[test]
    fn fixture_crop_matches_declared_stub() {
        // Mean-pool onto 4×4 then project with the seed-11 matrix.
        let crop = Raster::from_fn(6, 5, |x, y| ((x * 37 + y * 11) % 256) as u8);
        let enc = ProjectionEncoder::<f64>::new(11, 2, 3).unwrap();
        let got = enc.encode(&crop).unwrap();

        let xs = [(0, 1), (1, 3), (3, 4), (4, 6)];
        let ys = [(0, 1), (1, 2), (2, 3), (3, 5)];
        let mut pooled = Vec::new();
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                let mut s = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        s += ((x * 37 + y * 11) % 256) as f64;
                    }
                }
                pooled.push(s / ((y1 - y0) * (x1 - x0)) as f64 / 255.0);
            }
        }
        let mut rng = SplitMix64::new(11);
        let proj: Vec<f64> = (0..16 * 6).map(|_| rng.uniform(-1.0, 1.0) * 0.25).collect();
        for j in 0..6 {
            let want: f64 = (0..16).map(|i| pooled[i] * proj[i * 6 + j]).sum();
            assert!((got.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_bounds_cover_small_and_large() {
        assert_eq!(cell_bounds(0, 4, 2), (0, 1));
        assert_eq!(cell_bounds(3, 4, 2), (1, 2));
        assert_eq!(cell_bounds(2, 4, 16), (8, 12));
        for cells in 1..10 {
            for len in 1..20 {
                for i in 0..cells {
                    let (a, b) = cell_bounds(i, cells, len);
                    assert!(a < b && b <= len);
                }
            }
        }
    }
}

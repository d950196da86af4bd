use serde::{Deserialize, Serialize};

use super::encoder::cell_bounds;
use super::{InjectError, Result};
use crate::msdb::Raster;
use crate::scalar::Real;

/// Latent spatial grid; cell `(r, c)` is latent row `r * w + c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct LatentGrid {
    h: usize,
    w: usize,
}

impl LatentGrid {
    pub fn new(h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(InjectError::InvalidMask(format!("latent grid {h}x{w} has an empty axis")));
        }
        Ok(Self { h, w })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Pixel rectangle `(x0, x1, y0, y1)` of cell `(r, c)` in an image of
    /// `(width, height)`.
    pub fn pixel_rect(&self, r: usize, c: usize, (width, height): (u32, u32)) -> (usize, usize, usize, usize) {
        let (x0, x1) = cell_bounds(c, self.w, width as usize);
        let (y0, y1) = cell_bounds(r, self.h, height as usize);
        (x0, x1, y0, y1)
    }

    /// Cell containing pixel coordinate `(x, y)`, clamped to the grid.
    pub fn cell_of(&self, x: f64, y: f64, (width, height): (u32, u32)) -> usize {
        let c = ((x / width as f64) * self.w as f64).floor();
        let r = ((y / height as f64) * self.h as f64).floor();
        let c = c.clamp(0.0, (self.w - 1) as f64) as usize;
        let r = r.clamp(0.0, (self.h - 1) as f64) as usize;
        r * self.w + c
    }
}

impl TryFrom<(usize, usize)> for LatentGrid {
    type Error = InjectError;

    fn try_from((h, w): (usize, usize)) -> Result<Self> {
        Self::new(h, w)
    }
}

impl From<LatentGrid> for (usize, usize) {
    fn from(g: LatentGrid) -> Self {
        (g.h, g.w)
    }
}

/// Face, body and union masks of one subject on the latent grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMasks<T: Real> {
    grid: LatentGrid,
    face: Vec<T>,
    body: Vec<T>,
    union: Vec<T>,
}

impl<T: Real> SubjectMasks<T> {
    /// Soft masks in `[0, 1]`; face and body must not both be positive in
    /// any cell. The union is their clamped sum.
    pub fn new(grid: LatentGrid, face: Vec<T>, body: Vec<T>) -> Result<Self> {
        for (name, m) in [("face", &face), ("body", &body)] {
            if m.len() != grid.cells() {
                return Err(InjectError::Arity {
                    what: "mask cells",
                    expected: grid.cells(),
                    found: m.len(),
                });
            }
            if let Some(i) = m.iter().position(|&v| !(v >= T::zero() && v <= T::one())) {
                return Err(InjectError::InvalidMask(format!("{name} mask value outside [0, 1] at cell {i}")));
            }
        }
        if let Some(i) = (0..face.len()).find(|&i| face[i] > T::zero() && body[i] > T::zero()) {
            return Err(InjectError::InvalidMask(format!("face and body overlap at cell {i}")));
        }
        let union = face.iter().zip(&body).map(|(&f, &b)| (f + b).min(T::one())).collect();
        Ok(Self { grid, face, body, union })
    }

    /// Downsamples pixel masks by majority vote per cell.
    ///
    /// A cell belongs to the subject when more than half of its pixels are
    /// face or body; it is a face cell when face pixels are at least as
    /// many as body pixels.
    pub fn from_rasters(grid: LatentGrid, face: &Raster, body: &Raster) -> Result<Self> {
        if face.size() != body.size() {
            return Err(InjectError::InvalidMask(format!(
                "face mask is {:?} but body mask is {:?}",
                face.size(),
                body.size()
            )));
        }
        if face.is_empty() {
            return Err(InjectError::InvalidMask("empty mask raster".into()));
        }
        let size = face.size();
        let mut f = vec![T::zero(); grid.cells()];
        let mut b = vec![T::zero(); grid.cells()];
        for r in 0..grid.h() {
            for c in 0..grid.w() {
                let (x0, x1, y0, y1) = grid.pixel_rect(r, c, size);
                let (mut nf, mut nb) = (0usize, 0usize);
                for y in y0..y1 {
                    for x in x0..x1 {
                        nf += face.is_on(x as u32, y as u32) as usize;
                        nb += body.is_on(x as u32, y as u32) as usize;
                    }
                }
                let total = (x1 - x0) * (y1 - y0);
                if 2 * (nf + nb) > total {
                    let cell = r * grid.w() + c;
                    if nf >= nb {
                        f[cell] = T::one();
                    } else {
                        b[cell] = T::one();
                    }
                }
            }
        }
        Self::new(grid, f, b)
    }

    /// Whole grid as face, nothing as body.
    pub fn full_face(grid: LatentGrid) -> Self {
        Self::new(grid, vec![T::one(); grid.cells()], vec![T::zero(); grid.cells()])
            .expect("constant masks are valid")
    }

    pub fn grid(&self) -> LatentGrid {
        self.grid
    }

    pub fn face(&self) -> &[T] {
        &self.face
    }

    pub fn body(&self) -> &[T] {
        &self.body
    }

    pub fn union(&self) -> &[T] {
        &self.union
    }

    /// Fraction of cells with positive union weight.
    pub fn coverage(&self) -> f64 {
        self.union.iter().filter(|&&u| u > T::zero()).count() as f64 / self.union.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_with_face_priority() {
        let grid = LatentGrid::new(1, 3).unwrap();
        // Cells are 2 px wide, 1 px tall.
        let face = Raster::new(6, 1, vec![255, 0, 255, 0, 0, 0]).unwrap();
        let body = Raster::new(6, 1, vec![0, 255, 0, 0, 0, 255]).unwrap();
        let m = SubjectMasks::<f64>::from_rasters(grid, &face, &body).unwrap();
        assert_eq!(m.face(), &[1.0, 0.0, 0.0]);
        assert_eq!(m.body(), &[0.0, 0.0, 0.0]);
        assert_eq!(m.union(), &[1.0, 0.0, 0.0]);

        let body = Raster::new(6, 1, vec![0, 0, 0, 0, 255, 255]).unwrap();
        let m = SubjectMasks::<f64>::from_rasters(grid, &face, &body).unwrap();
        assert_eq!(m.body(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn upsampling_replicates_pixels() {
        let grid = LatentGrid::new(4, 4).unwrap();
        let face = Raster::new(2, 2, vec![255, 0, 0, 0]).unwrap();
        let body = Raster::new(2, 2, vec![0, 0, 0, 255]).unwrap();
        let m = SubjectMasks::<f64>::from_rasters(grid, &face, &body).unwrap();
        assert_eq!(m.face().iter().sum::<f64>(), 4.0);
        assert_eq!(m.body().iter().sum::<f64>(), 4.0);
        assert_eq!(m.face()[0], 1.0);
        assert_eq!(m.body()[15], 1.0);
        assert_eq!(m.coverage(), 0.5);
    }

    #[test]
    fn rejects_bad_soft_masks() {
        let g = LatentGrid::new(1, 2).unwrap();
        assert!(SubjectMasks::new(g, vec![0.5, 0.0], vec![0.5, 0.0]).is_err());
        assert!(SubjectMasks::new(g, vec![1.5, 0.0], vec![0.0, 0.0]).is_err());
        assert!(SubjectMasks::new(g, vec![f64::NAN, 0.0], vec![0.0, 0.0]).is_err());
        assert!(SubjectMasks::<f64>::new(g, vec![0.0], vec![0.0]).is_err());
        let m = SubjectMasks::new(g, vec![0.25, 0.0], vec![0.0, 0.75]).unwrap();
        assert_eq!(m.union(), &[0.25, 0.75]);
    }

    #[test]
    fn grid_serde_and_cells() {
        let g: LatentGrid = serde_json::from_str("[32, 56]").unwrap();
        assert_eq!((g.h(), g.w(), g.cells()), (32, 56, 1792));
        assert!(serde_json::from_str::<LatentGrid>("[0, 4]").is_err());
        assert_eq!(g.cell_of(223.9, 127.9, (224, 128)), 1791);
        assert_eq!(g.cell_of(-3.0, 5.0, (224, 128)), 56);
    }
}

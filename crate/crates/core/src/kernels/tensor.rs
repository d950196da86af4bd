use std::fmt;

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("degenerate shape {0:?}")]
    DegenerateShape(Vec<usize>),
    #[error("shape {shape:?} holds {expected} elements but {found} were supplied")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("non-finite entry at flat index {0}")]
    NonFinite(usize),
    #[error("{op}: expected rank {expected}, found rank {found}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: shape mismatch on axis `{axis}` (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("tensor format error at offset {offset}: {reason}")]
    Format { offset: usize, reason: String },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major tensor with an explicit shape.
///
/// Every dimension is positive and every entry is finite when a tensor is
/// built through [`Tensor::new`].
#[derive(Clone, PartialEq)]
pub struct Tensor<T: Real> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor from parts already known to satisfy the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Result<Self> {
        check_shape(&shape)?;
        if !value.is_finite() {
            return Err(TensorError::NonFinite(0));
        }
        let n = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(&mut f).collect();
        Self::new(shape, data)
    }

    /// Rank-2 tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(TensorError::ShapeMismatch {
                    op: "from_rows",
                    axis: "cols",
                    expected: c,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![r, c], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                found: self.rank(),
            }),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                found: self.data.len(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// `self · other` for rank-2 operands.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = other.dims2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                axis: "inner",
                expected: k,
                found: k2,
            });
        }
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            let o = &mut out[i * m..(i + 1) * m];
            for (p, &aip) in a.iter().enumerate() {
                if aip == T::zero() {
                    continue;
                }
                let b = &other.data[p * m..(p + 1) * m];
                for (oj, &bj) in o.iter_mut().zip(b) {
                    *oj = *oj + aip * bj;
                }
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    /// `self · otherᵀ` for rank-2 operands.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        let (n, k) = self.dims2("matmul_t")?;
        let (m, k2) = other.dims2("matmul_t")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_t",
                axis: "inner",
                expected: k,
                found: k2,
            });
        }
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let a = &self.data[i * k..(i + 1) * k];
            for j in 0..m {
                let b = &other.data[j * k..(j + 1) * k];
                out.push(a.iter().zip(b).map(|(&x, &y)| x * y).sum());
            }
        }
        Ok(Self::from_parts(vec![n, m], out))
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = Vec::with_capacity(r * c);
        for j in 0..c {
            for i in 0..r {
                out.push(self.data[i * c + j]);
            }
        }
        Ok(Self::from_parts(vec![c, r], out))
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, op)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.rank() != other.rank() {
            return Err(TensorError::Rank {
                op,
                expected: self.rank(),
                found: other.rank(),
            });
        }
        for (axis, (&a, &b)) in self.shape.iter().zip(&other.shape).enumerate() {
            if a != b {
                return Err(TensorError::ShapeMismatch {
                    op,
                    axis: axis_name(axis),
                    expected: a,
                    found: b,
                });
            }
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Multiplies row `i` of a rank-2 tensor by `weights[i]`.
    pub fn scale_rows(&self, weights: &[T]) -> Result<Self> {
        let (r, c) = self.dims2("scale_rows")?;
        if weights.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                axis: "rows",
                expected: r,
                found: weights.len(),
            });
        }
        let mut data = self.data.clone();
        for (row, &w) in data.chunks_mut(c).zip(weights) {
            for x in row {
                *x = *x * w;
            }
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn squared_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn l2_norm(&self) -> T {
        self.squared_norm().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    /// Converts every entry to another scalar type.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        )
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::DegenerateShape(shape.to_vec()));
    }
    Ok(())
}

fn axis_name(axis: usize) -> &'static str {
    match axis {
        0 => "0",
        1 => "1",
        2 => "2",
        3 => "3",
        _ => "4+",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims_and_bad_counts() {
        assert_eq!(
            Tensor::<f64>::new(vec![1, 0], vec![]),
            Err(TensorError::DegenerateShape(vec![1, 0]))
        );
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::ElementCount { .. })
        ));
        assert_eq!(
            Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]),
            Err(TensorError::NonFinite(1))
        );
    }

    #[test]
    fn degenerate_message() {
        let err = Tensor::<f64>::zeros(vec![3, 0]).unwrap_err();
        assert!(err.to_string().starts_with("degenerate shape"));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
        let ct = a.matmul_t(&b.transpose().unwrap()).unwrap();
        assert_eq!(c, ct);
    }

    #[test]
    fn matmul_inner_mismatch_names_axis() {
        let a = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        let b = Tensor::<f64>::zeros(vec![2, 3]).unwrap();
        match a.matmul(&b) {
            Err(TensorError::ShapeMismatch { axis, .. }) => assert_eq!(axis, "inner"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn f32_cast_roundtrip() {
        let a = Tensor::<f32>::new(vec![3], vec![0.1, -2.5, 7.0]).unwrap();
        let b: Tensor<f64> = a.cast();
        assert_eq!(b.cast::<f32>(), a);
    }
}

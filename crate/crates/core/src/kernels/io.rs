//! Binary tensor container.
//!
//! Layout: 8-byte magic `RCTENSR\0`, `u32` rank, one `u32` per dimension,
//! then the row-major payload as little-endian `f64`.

use std::io::{Read, Write};

use super::tensor::{Result, Tensor, TensorError};
use crate::scalar::Real;

pub const TENSOR_MAGIC: &[u8; 8] = b"RCTENSR\0";

impl<T: Real> Tensor<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.rank() + 8 * self.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.extend_from_slice(&(self.rank() as u32).to_le_bytes());
        for &d in self.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in self.data() {
            out.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        let magic = cur.take(8)?;
        if magic != TENSOR_MAGIC {
            return Err(TensorError::Format {
                offset: 0,
                reason: "bad magic".into(),
            });
        }
        let rank = cur.u32()? as usize;
        if rank == 0 {
            return Err(TensorError::Format {
                offset: 8,
                reason: "rank 0".into(),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let at = cur.pos;
            let d = cur.u32()? as usize;
            if d == 0 {
                return Err(TensorError::Format {
                    offset: at,
                    reason: "zero-length dimension".into(),
                });
            }
            shape.push(d);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Format {
                offset: 12,
                reason: "element count overflows".into(),
            })?;
        let payload_at = cur.pos;
        let expected = n.checked_mul(8).ok_or_else(|| TensorError::Format {
            offset: payload_at,
            reason: "payload size overflows".into(),
        })?;
        if bytes.len() - payload_at != expected {
            return Err(TensorError::Format {
                offset: payload_at,
                reason: format!(
                    "payload holds {} bytes, shape requires {expected}",
                    bytes.len() - payload_at
                ),
            });
        }
        let data = bytes[payload_at..]
            .chunks_exact(8)
            .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> std::io::Result<Result<Self>> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        Ok(Self::from_bytes(&buf))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorError::Format {
                offset: self.pos,
                reason: format!("truncated: need {n} bytes"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

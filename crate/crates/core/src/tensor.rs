//! Dense `channels × height × width` grids and the TNS1 exchange format.
//!
//! TNS1: magic `"TNS1"`, `u32` version (= 1), `u32` ndim, `ndim × u32` dims,
//! then `f32` values in row-major order. Everything little-endian.

use thiserror::Error;

pub const TNS1_MAGIC: &[u8; 4] = b"TNS1";
pub const TNS1_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TensorError {
    #[error("BadMagic: expected \"TNS1\"")]
    BadMagic,
    #[error("UnsupportedVersion: {0}")]
    UnsupportedVersion(u32),
    #[error("TruncatedFile: expected {expected} bytes, found {actual}")]
    TruncatedFile { expected: usize, actual: usize },
    #[error("expected a 3-d tensor, found {0} dims")]
    BadRank(u32),
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("data length {len} does not match {channels}x{height}x{width}")]
    LengthMismatch {
        len: usize,
        channels: usize,
        height: usize,
        width: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FrameTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self, TensorError> {
        if data.len() != channels * height * width {
            return Err(TensorError::LengthMismatch {
                len: data.len(),
                channels,
                height,
                width,
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn same_grid(&self, other: &FrameTensor) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_tns1(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + 4 * self.data.len());
        out.extend_from_slice(TNS1_MAGIC);
        out.extend_from_slice(&TNS1_VERSION.to_le_bytes());
        out.extend_from_slice(&3u32.to_le_bytes());
        for d in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_tns1(bytes: &[u8]) -> Result<Self, TensorError> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(TensorError::TruncatedFile {
                    expected,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        if bytes.len() < 4 || &bytes[..4] != TNS1_MAGIC {
            return Err(TensorError::BadMagic);
        }
        need(12)?;
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != TNS1_VERSION {
            return Err(TensorError::UnsupportedVersion(version));
        }
        let ndim = u32_at(8);
        if ndim != 3 {
            return Err(TensorError::BadRank(ndim));
        }
        need(24)?;
        let (c, h, w) = (u32_at(12) as usize, u32_at(16) as usize, u32_at(20) as usize);
        let n = c * h * w;
        let expected = 24 + 4 * n;
        need(expected)?;
        if bytes.len() != expected {
            return Err(TensorError::TruncatedFile {
                expected,
                actual: bytes.len(),
            });
        }
        let data = bytes[24..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(c, h, w, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = FrameTensor::from_vec(1, 1, 2, vec![1.0, -0.5]).unwrap();
        let b = t.to_tns1();
        assert_eq!(&b[..4], b"TNS1");
        assert_eq!(b.len(), 24 + 8);
        assert_eq!(&b[8..12], &3u32.to_le_bytes());
        assert_eq!(&b[20..24], &2u32.to_le_bytes());
        assert_eq!(&b[28..32], &(-0.5f32).to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(FrameTensor::from_tns1(b"XXXX"), Err(TensorError::BadMagic));
        let mut b = FrameTensor::zeros(1, 2, 2).to_tns1();
        b.pop();
        assert!(matches!(FrameTensor::from_tns1(&b), Err(TensorError::TruncatedFile { .. })));
        assert!(FrameTensor::from_vec(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(FrameTensor::from_vec(1, 1, 2, vec![0.0]).is_err());
    }

    proptest! {
        #[test]
        fn tns1_round_trip(c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u32>()) {
            let data = (0..c * h * w).map(|i| ((i as u32 ^ seed) % 1000) as f32 / 7.0).collect();
            let t = FrameTensor::from_vec(c, h, w, data).unwrap();
            prop_assert_eq!(FrameTensor::from_tns1(&t.to_tns1()).unwrap(), t);
        }
    }
}

//! Floating point scalar abstraction shared by every numeric module.

use ndarray::NdFloat;
use num_traits::{FromPrimitive, ToPrimitive};
use rand::distributions::uniform::SampleUniform;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar the engine computes in: `f32` or `f64`.
pub trait Scalar:
    NdFloat + FromPrimitive + ToPrimitive + SampleUniform + Default + Serialize + DeserializeOwned
{
    /// Width of the little-endian encoding used in checkpoints.
    const BYTES: usize;

    /// Lossy conversion from an `f64` literal or statistic.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads `Self::BYTES` bytes. Panics if `bytes` is shorter.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 8];
        buf.copy_from_slice(&bytes[..8]);
        f64::from_le_bytes(buf)
    }
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        let mut buf = [0u8; 4];
        buf.copy_from_slice(&bytes[..4]);
        f32::from_le_bytes(buf)
    }
}

/// Arithmetic mean; `None` for an empty slice.
pub(crate) fn mean<T: Scalar>(xs: &[T]) -> Option<T> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(T::zero(), |acc, &x| acc + x);
    Some(sum / T::of(xs.len() as f64))
}

/// Population (divide-by-N) standard deviation, two-pass.
pub(crate) fn population_std<T: Scalar>(xs: &[T]) -> Option<T> {
    let m = mean(xs)?;
    let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - m) * (x - m));
    Some((ss / T::of(xs.len() as f64)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn le_roundtrip_is_bitwise() {
        for x in [0.1f64, -3.5e-300, f64::MAX, 1.0 / 3.0] {
            let mut buf = Vec::new();
            x.write_le(&mut buf);
            assert_eq!(f64::read_le(&buf).to_bits(), x.to_bits());
        }
        let mut buf = Vec::new();
        0.3f32.write_le(&mut buf);
        assert_eq!(buf.len(), 4);
        assert_eq!(f32::read_le(&buf), 0.3f32);
    }

    #[test]
    fn population_std_two_points() {
        assert_eq!(population_std(&[1.0f64, 3.0]), Some(1.0));
        assert_eq!(population_std::<f64>(&[]), None);
    }
}

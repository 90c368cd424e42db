//! Per-dimension affine int8 quantization.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::format::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const DEFAULT_RESERVOIR: usize = 100_000;

/// `x ≈ offset + scale * q` with `q` in `[-128, 127]`.
///
/// The fitted range `[min, max]` maps onto `[-127, 127]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizationParams {
    pub offset: Vec<f64>,
    pub scale: Vec<f64>,
}

impl QuantizationParams {
    /// Fits per-dimension min/max over `rows`.
    pub fn fit(rows: ArrayView2<'_, f64>) -> Result<Self> {
        if rows.nrows() == 0 {
            return Err(Error::Shape("cannot fit quantization on zero rows".into()));
        }
        let (offset, scale) = rows
            .columns()
            .into_iter()
            .map(|col| {
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let scale = if hi > lo { (hi - lo) / 254.0 } else { 1.0 };
                ((lo + hi) / 2.0, scale)
            })
            .unzip();
        Ok(QuantizationParams { offset, scale })
    }

    /// Fits on a seeded reservoir sample of at most `cap` rows.
    pub fn fit_reservoir(rows: ArrayView2<'_, f64>, cap: usize, seed: u64) -> Result<Self> {
        let n = rows.nrows();
        if n <= cap {
            return Self::fit(rows);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = (0..cap).collect();
        for k in cap..n {
            let slot = rng.random_range(0..=k);
            if slot < cap {
                chosen[slot] = k;
            }
        }
        chosen.sort_unstable();
        Self::fit(rows.select(ndarray::Axis(0), &chosen).view())
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn quantize(&self, v: &[f64]) -> Vec<i8> {
        v.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(&x, (&o, &s))| ((x - o) / s).round_ties_even().clamp(-128.0, 127.0) as i8)
            .collect()
    }

    pub fn dequantize(&self, q: &[i8]) -> Vec<f64> {
        q.iter()
            .zip(self.offset.iter().zip(&self.scale))
            .map(|(&q, (&o, &s))| o + s * f64::from(q))
            .collect()
    }

    /// `sum_k |w_k| * scale_k / 2`: the largest change of `w . x` caused by
    /// round-tripping an in-range `x`.
    pub fn error_bound(&self, w: &[f64]) -> f64 {
        w.iter().zip(&self.scale).map(|(w, s)| w.abs() * s / 2.0).sum()
    }

    pub(crate) fn write(&self, out: &mut ByteWriter) {
        out.u64(self.dim() as u64);
        for v in self.offset.iter().chain(&self.scale) {
            out.f64(*v);
        }
    }

    pub(crate) fn read(input: &mut ByteReader<'_>) -> Result<Self> {
        let dim = input.usize()?;
        let offset = (0..dim).map(|_| input.f64()).collect::<Result<_>>()?;
        let scale = (0..dim).map(|_| input.f64()).collect::<Result<_>>()?;
        Ok(QuantizationParams { offset, scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    #[test]
    fn midpoint_is_exact() {
        let p = QuantizationParams::fit(array![[-1.0, 2.0], [3.0, 2.0]].view()).unwrap();
        assert_eq!(p.offset, vec![1.0, 2.0]);
        assert_eq!(p.scale[1], 1.0);
        assert_eq!(p.quantize(&[1.0, 2.0]), vec![0, 0]);
        assert_eq!(p.dequantize(&[0, 0]), vec![1.0, 2.0]);
    }

    #[test]
    fn out_of_range_clamps() {
        let p = QuantizationParams::fit(array![[0.0], [1.0]].view()).unwrap();
        assert_eq!(p.quantize(&[5.0]), vec![127]);
        assert_eq!(p.quantize(&[-5.0]), vec![-128]);
        assert_eq!(p.quantize(&[1.0]), vec![127]);
        assert_eq!(p.quantize(&[0.0]), vec![-127]);
    }

    #[test]
    fn ties_round_to_even() {
        let p = QuantizationParams {
            offset: vec![0.0],
            scale: vec![1.0],
        };
        assert_eq!(p.quantize(&[2.5]), vec![2]);
        assert_eq!(p.quantize(&[-0.5]), vec![0]);
        assert_eq!(p.quantize(&[3.5]), vec![4]);
    }

    #[test]
    fn reservoir_is_deterministic_and_bounded() {
        let rows = Array2::from_shape_fn((500, 3), |(r, c)| ((r * 7 + c * 13) % 101) as f64);
        let a = QuantizationParams::fit_reservoir(rows.view(), 50, 3).unwrap();
        let b = QuantizationParams::fit_reservoir(rows.view(), 50, 3).unwrap();
        assert_eq!(a, b);
        let full = QuantizationParams::fit_reservoir(rows.view(), 1000, 3).unwrap();
        assert_eq!(full, QuantizationParams::fit(rows.view()).unwrap());
    }

    proptest! {
        #[test]
        fn in_range_round_trip_within_half_scale(
            rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 4), 2..40)
        ) {
            let m = Array2::from_shape_fn((rows.len(), 4), |(r, c)| rows[r][c]);
            let p = QuantizationParams::fit(m.view()).unwrap();
            for row in &rows {
                let back = p.dequantize(&p.quantize(row));
                for k in 0..4 {
                    prop_assert!((back[k] - row[k]).abs() <= p.scale[k] / 2.0 * (1.0 + 1e-9));
                }
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Per-coordinate affine map `z = (x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

const MIN_SCALE: f64 = 1e-12;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// z-score statistics of `rows`. Constant columns get unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Data("cannot fit normalizer on no rows".into()))?;
        let dim = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            ensure_dim("normalizer row", dim, r.len())?;
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > MIN_SCALE {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    /// Maps the box `[lo, hi]` onto `[-1, 1]` per coordinate.
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        ensure_dim("box bounds", lo.len(), hi.len())?;
        if lo.iter().zip(hi).any(|(a, b)| !(b > a)) {
            return Err(Error::InvalidConfig("box upper bound must exceed lower bound".into()));
        }
        Ok(Self {
            mean: lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect(),
            scale: lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        debug_assert_eq!(z.len(), self.dim());
        z.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| m + s * v)
            .collect()
    }

    /// Chain rule for a gradient taken in physical coordinates.
    pub fn grad_to_normalized(&self, grad_physical: &[f64]) -> Vec<f64> {
        grad_physical.iter().zip(&self.scale).map(|(g, s)| g * s).collect()
    }

    pub fn normalize_all(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.normalize(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_and_round_trip() {
        let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, 4.0], vec![5.0, 5.0, 9.0]];
        let n = Normalizer::fit(&rows).unwrap();
        assert_eq!(n.mean[0], 3.0);
        assert_eq!(n.scale[1], 1.0, "constant column keeps unit scale");
        for r in &rows {
            let back = n.denormalize(&n.normalize(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let z = n.normalize_all(&rows);
        let m0: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        assert!(m0.abs() < 1e-12);
    }

    #[test]
    fn box_maps_to_unit_square() {
        let n = Normalizer::from_box(&[-1.8, -0.5], &[1.2, 2.2]).unwrap();
        assert_eq!(n.normalize(&[-1.8, 2.2]), vec![-1.0, 1.0]);
        assert!(Normalizer::from_box(&[0.0], &[0.0]).is_err());
    }
}

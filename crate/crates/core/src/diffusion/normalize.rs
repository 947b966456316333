//! Per-dimension min/max scaling to [−1, 1].

use super::DiffusionError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// Fits bounds over rows of width `dim`.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self, DiffusionError> {
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        let mut any = false;
        for r in rows {
            if r.len() != dim {
                return Err(DiffusionError::Shape(format!("row width {} != {dim}", r.len())));
            }
            for j in 0..dim {
                min[j] = min[j].min(r[j]);
                max[j] = max[j].max(r[j]);
            }
            any = true;
        }
        if !any {
            return Err(DiffusionError::EmptyDataset);
        }
        if min.iter().chain(&max).any(|v| !v.is_finite()) {
            return Err(DiffusionError::Shape("non-finite values in dataset".into()));
        }
        Ok(Self { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant dimensions map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % self.dim();
                let span = self.max[j] - self.min[j];
                if span > 0.0 {
                    2.0 * (v - self.min[j]) / span - 1.0
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % self.dim();
                let span = self.max[j] - self.min[j];
                self.min[j] + (v + 1.0) * 0.5 * span
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_range() {
        let rows: Vec<Vec<f64>> = vec![vec![0.0, 5.0, 2.0], vec![1.0, -3.0, 2.0], vec![0.25, 1.0, 2.0]];
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice()), 3).unwrap();
        for r in &rows {
            let z = n.normalize(r);
            assert!(z.iter().all(|v| (-1.0..=1.0).contains(v)));
            for (a, b) in n.denormalize(&z).iter().zip(r) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(n.normalize(&[1.0, 5.0, 2.0]), vec![1.0, 1.0, 0.0]);
        // Flattened blocks reuse the per-dimension bounds.
        assert_eq!(n.normalize(&[0.0, -3.0, 2.0, 1.0, 5.0, 2.0]), vec![-1.0, -1.0, 0.0, 1.0, 1.0, 0.0]);
        assert!(Normalizer::fit(std::iter::empty(), 3).is_err());
    }
}

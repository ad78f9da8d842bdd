//! Regular tensor grids.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Regular tensor grid on `[low, high]` with `points_per_dim` points per axis (endpoints included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
    pub points_per_dim: usize,
}

impl GridSpec {
    pub fn new(low: Vec<f64>, high: Vec<f64>, points_per_dim: usize) -> Result<Self> {
        check_dim(low.len(), high.len())?;
        if points_per_dim < 2 {
            return Err(Error::InsufficientGrid(format!("need at least 2 points per axis, got {points_per_dim}")));
        }
        if low.iter().zip(&high).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidParameter("grid box must satisfy low < high".into()));
        }
        Ok(Self {
            low,
            high,
            points_per_dim,
        })
    }

    /// Bounding box of `support` inflated by `margin` on every side.
    pub fn around(support: &[Vec<f64>], margin: f64, points_per_dim: usize) -> Result<Self> {
        let d = support.first().ok_or(Error::Empty("support"))?.len();
        let mut low = vec![f64::INFINITY; d];
        let mut high = vec![f64::NEG_INFINITY; d];
        for t in support {
            for j in 0..d {
                low[j] = low[j].min(t[j] - margin);
                high[j] = high[j].max(t[j] + margin);
            }
        }
        Self::new(low, high, points_per_dim)
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_dim.pow(self.dim() as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn axis(&self, j: usize) -> Vec<f64> {
        let n = self.points_per_dim;
        let (a, b) = (self.low[j], self.high[j]);
        (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
    }

    /// Grid points in lexicographic order (first coordinate slowest).
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let axes: Vec<Vec<f64>> = (0..d).map(|j| self.axis(j)).collect();
        let n = self.points_per_dim;
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; d];
        for _ in 0..self.len() {
            out.push((0..d).map(|j| axes[j][idx[j]]).collect());
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < n {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }
}

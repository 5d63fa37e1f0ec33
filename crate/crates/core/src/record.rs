use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Empirical,
    Theoretical,
}

/// Per-iteration learning curves. Entry `n − 1` of every channel describes
/// iteration `n = 1, …, len()`: the weights after the `n`-th update, MSD of
/// those weights, and the MSE / EMSE of the `n`-th a priori error.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub provenance: Provenance,
    /// MSD of the initial weights, before any update.
    pub initial_msd: f64,
    pub mean_w: Vec<Vec<f64>>,
    pub msd: Vec<f64>,
    pub mse: Vec<f64>,
    pub emse: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn with_capacity(provenance: Provenance, initial_msd: f64, n_iters: usize) -> Self {
        Self {
            provenance,
            initial_msd,
            mean_w: Vec::with_capacity(n_iters),
            msd: Vec::with_capacity(n_iters),
            mse: Vec::with_capacity(n_iters),
            emse: Vec::with_capacity(n_iters),
        }
    }

    pub fn push(&mut self, mean_w: Vec<f64>, msd: f64, mse: f64, emse: f64) {
        self.mean_w.push(mean_w);
        self.msd.push(msd);
        self.mse.push(mse);
        self.emse.push(emse);
    }

    pub fn len(&self) -> usize {
        self.msd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.msd.is_empty()
    }

    pub fn filter_len(&self) -> usize {
        self.mean_w.first().map_or(0, Vec::len)
    }

    /// Weight channel `i` (0-based) over all iterations.
    pub fn weight_channel(&self, i: usize) -> Vec<f64> {
        self.mean_w.iter().map(|w| w[i]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let l = self.filter_len();
        if self.mse.len() != n || self.emse.len() != n || self.mean_w.len() != n {
            return Err(Error::Input("trajectory channels have different lengths".into()));
        }
        if self.mean_w.iter().any(|w| w.len() != l) {
            return Err(Error::Input("weight rows have inconsistent length".into()));
        }
        let neg = |v: &[f64]| v.iter().any(|x| !(*x >= 0.0));
        if neg(&self.msd) || neg(&self.mse) || neg(&self.emse) {
            return Err(Error::Input("mean-square channels must be non-negative".into()));
        }
        Ok(())
    }
}

//! The six-parameter action controlling sampling and meshing, and its
//! discretization into per-dimension candidate bins.

use crate::error::{Error, Result};

/// Reconstruction parameters chosen per scanblock: surface-sample
/// spread, surface/free sample counts, free-space ray interval bounds,
/// and the meshing support threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionParams {
    pub sigma_s: f64,
    pub n_s: usize,
    pub n_f: usize,
    pub eta_min: f64,
    pub eta_max: f64,
    pub n_nn: usize,
}

impl ActionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_s > 0.0) {
            return Err(Error::InvalidInput("sigma_s must be positive".into()));
        }
        if !(self.eta_min > 0.0 && self.eta_min < self.eta_max && self.eta_max < 1.0) {
            return Err(Error::InvalidInput(format!(
                "need 0 < eta_min < eta_max < 1, got ({}, {})",
                self.eta_min, self.eta_max
            )));
        }
        if self.n_nn == 0 {
            return Err(Error::InvalidInput("n_nn must be at least 1".into()));
        }
        Ok(())
    }

    /// Mid-range defaults used when no trained policy is supplied.
    pub fn defaults() -> ActionParams {
        ActionParams {
            sigma_s: 0.10,
            n_s: 4,
            n_f: 2,
            eta_min: 0.3,
            eta_max: 0.8,
            n_nn: 6,
        }
    }

    /// Truncation band derived from the sampling spread: wide enough to
    /// cover the Gaussian, never narrower than 0.15 m.
    pub fn truncation(&self) -> f64 {
        (3.0 * self.sigma_s).max(0.15)
    }
}

/// Ordered candidate values per action dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionBins {
    pub sigma_s: Vec<f64>,
    pub n_s: Vec<usize>,
    pub n_f: Vec<usize>,
    pub eta_min: Vec<f64>,
    pub eta_max: Vec<f64>,
    pub n_nn: Vec<usize>,
}

impl Default for ActionBins {
    fn default() -> Self {
        ActionBins {
            sigma_s: vec![0.05, 0.10, 0.20, 0.30],
            n_s: vec![2, 4, 6, 8],
            n_f: vec![0, 1, 2, 4],
            eta_min: vec![0.1, 0.3, 0.5],
            eta_max: vec![0.6, 0.8, 0.95],
            n_nn: vec![4, 6, 8, 12],
        }
    }
}

impl ActionBins {
    /// Head sizes in the fixed head order
    /// (σ_s, N_s, N_f, η_min, η_max, N_nn).
    pub fn head_sizes(&self) -> [usize; 6] {
        [
            self.sigma_s.len(),
            self.n_s.len(),
            self.n_f.len(),
            self.eta_min.len(),
            self.eta_max.len(),
            self.n_nn.len(),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        fn increasing<T: PartialOrd>(v: &[T]) -> bool {
            v.windows(2).all(|w| w[0] < w[1])
        }
        if !increasing(&self.sigma_s)
            || !increasing(&self.n_s)
            || !increasing(&self.n_f)
            || !increasing(&self.eta_min)
            || !increasing(&self.eta_max)
            || !increasing(&self.n_nn)
        {
            return Err(Error::Config("action bins must be strictly increasing".into()));
        }
        if self.head_sizes().iter().any(|&s| s == 0) {
            return Err(Error::Config("action bins must be non-empty".into()));
        }
        // at least one valid eta_max for every eta_min
        for &lo in &self.eta_min {
            if !self.eta_max.iter().any(|&hi| hi > lo) {
                return Err(Error::Config(format!(
                    "eta_min {lo} has no valid eta_max bin"
                )));
            }
        }
        Ok(())
    }

    /// Whether the (η_min, η_max) bin pair is admissible.
    pub fn eta_pair_valid(&self, eta_min_idx: usize, eta_max_idx: usize) -> bool {
        self.eta_max[eta_max_idx] > self.eta_min[eta_min_idx]
    }

    /// Decodes per-head bin indices into parameters.
    pub fn decode(&self, indices: &[usize; 6]) -> ActionParams {
        ActionParams {
            sigma_s: self.sigma_s[indices[0]],
            n_s: self.n_s[indices[1]],
            n_f: self.n_f[indices[2]],
            eta_min: self.eta_min[indices[3]],
            eta_max: self.eta_max[indices[4]],
            n_nn: self.n_nn[indices[5]],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_bins_are_valid_and_decode() {
        let bins = ActionBins::default();
        bins.validate().unwrap();
        let params = bins.decode(&[1, 1, 2, 1, 1, 1]);
        assert_eq!(params, ActionParams::defaults());
        params.validate().unwrap();
    }

    #[test]
    fn every_default_eta_pair_is_valid() {
        let bins = ActionBins::default();
        for i in 0..bins.eta_min.len() {
            for j in 0..bins.eta_max.len() {
                assert!(bins.eta_pair_valid(i, j));
            }
        }
    }

    #[test]
    fn truncation_covers_gaussian_with_floor() {
        let mut p = ActionParams::defaults();
        p.sigma_s = 0.01;
        assert_eq!(p.truncation(), 0.15);
        p.sigma_s = 0.30;
        assert!((p.truncation() - 0.90).abs() < 1e-12);
    }

    #[test]
    fn invalid_eta_order_rejected() {
        let mut p = ActionParams::defaults();
        p.eta_min = 0.9;
        p.eta_max = 0.5;
        assert!(p.validate().is_err());
    }
}

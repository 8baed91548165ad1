//! Diffusion noise schedule.
//!
//! Steps are indexed `1..=K`. Index 0 denotes the clean sample, with
//! `alpha_bar(0) == 1`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// `alpha_bars[k]` for `k = 0..=K`; entry 0 is 1.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_start` to `beta_end`, both endpoints included.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 1 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(beta_start) || !in_unit(beta_end) {
            return Err(Error::Config(format!(
                "beta endpoints must lie in (0, 1), got {beta_start} and {beta_end}"
            )));
        }
        if beta_start > beta_end {
            return Err(Error::Config(format!(
                "beta_start {beta_start} exceeds beta_end {beta_end}"
            )));
        }
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            let span = (steps - 1) as f64;
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit betas. Later betas may be zero (a
    /// degenerate but well-defined step), the first must be positive so that
    /// `1 - alpha_bar(k) > 0` for every `k >= 1`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0..1.0).contains(*b)) {
            return Err(Error::Config(format!("beta {b} outside [0, 1)")));
        }
        if betas[0] <= 0.0 {
            return Err(Error::Config("first beta must be positive".into()));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        for a in &alphas {
            let prev = *alpha_bars.last().unwrap();
            alpha_bars.push(prev * a);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    /// Cumulative product of alphas up to `k`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub(crate) fn check_step(&self, k: usize) -> Result<()> {
        if k < 1 || k > self.steps() {
            return Err(Error::range("k", k, 1, self.steps()));
        }
        Ok(())
    }

    /// Variance of the true reverse posterior q(Y^{k-1} | Y^k, Y^0).
    pub fn posterior_variance(&self, k: usize) -> Result<f64> {
        self.check_step(k)?;
        let ab = self.alpha_bar(k);
        let ab_prev = self.alpha_bar(k - 1);
        Ok(((1.0 - ab_prev) / (1.0 - ab) * self.beta(k)).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 1e-4, 0.05).unwrap();
        assert_eq!(s.betas(), &[1e-4]);
        assert_eq!(s.alpha_bar(1), 0.9999);
        assert_eq!(s.alpha_bar(1), s.alpha(1));
    }

    #[test]
    fn hundred_step_endpoints() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        assert_eq!(s.alpha(1), 0.9999);
        assert_eq!(s.beta(100), 0.05);
        assert!(s.alpha_bar(100) < s.alpha_bar(1));
        // 40-digit product of the 100 linear alphas.
        let expected = 0.078_234_315_621_868_350_565;
        assert!((s.alpha_bar(100) - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(NoiseSchedule::linear(0, 1e-4, 0.05).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.05).is_err());
        assert!(NoiseSchedule::linear(10, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 0.05).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.0, 0.1]).is_err());
    }

    #[test]
    fn posterior_variance_values() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        assert_eq!(s.posterior_variance(1).unwrap(), 0.0);
        assert!(s.posterior_variance(0).is_err());
        assert!(s.posterior_variance(101).is_err());

        // alpha_bar(1) = 0.95, alpha_bar(2) = 0.9
        let s = NoiseSchedule::from_betas(vec![0.05, 1.0 - 0.9 / 0.95]).unwrap();
        let v = s.posterior_variance(2).unwrap();
        assert!((v - 0.026_315_789_473_684_21).abs() < 1e-12);
    }

    #[test]
    fn recurrence_and_monotonicity() {
        for &k in &[1usize, 2, 7, 50, 100, 500] {
            let s = NoiseSchedule::linear(k, 1e-4, 0.05).unwrap();
            for j in 1..=k {
                let a = s.alpha(j);
                assert!(a > 0.0 && a < 1.0);
                let rec = s.alpha_bar(j - 1) * a;
                assert!((s.alpha_bar(j) - rec).abs() <= 1e-12 * rec);
                if j >= 2 {
                    assert!(s.alpha_bar(j) < s.alpha_bar(j - 1));
                }
            }
        }
    }
}

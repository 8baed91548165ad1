//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::cell::Cell;

use trajlab::condition::ConditionFeature;
use trajlab::nn::Parameterized;
use trajlab::rng::NoiseStream;
use trajlab::sampler::{Denoise, Trajectory};
use trajlab::Result;

/// Central-difference step.
pub const H: f64 = 1e-5;

/// Relative error with a floor on the denominator, so that gradients that
/// are zero up to rounding compare on an absolute scale.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Worst relative error over `picks` random parameter coordinates. The
/// analytic gradients must already sit in the parameter buffers.
pub fn fd_params<M: Parameterized>(
    m: &mut M,
    f: &mut dyn FnMut(&mut M) -> f64,
    picks: usize,
    rng: &mut NoiseStream,
) -> f64 {
    let sizes: Vec<usize> = m.params().iter().map(|(_, p)| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut worst: f64 = 0.0;
    for _ in 0..picks.min(total) {
        let mut g = rng.int_inclusive(0, total - 1);
        let mut pi = 0;
        while g >= sizes[pi] {
            g -= sizes[pi];
            pi += 1;
        }
        let analytic = m.params()[pi].1.grad[g];
        let orig = m.params()[pi].1.value[g];
        m.params_mut()[pi].1.value[g] = orig + H;
        let up = f(m);
        m.params_mut()[pi].1.value[g] = orig - H;
        let down = f(m);
        m.params_mut()[pi].1.value[g] = orig;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * H)));
    }
    worst
}

/// Worst relative error of `analytic` against differences of `f` at `x`,
/// over every coordinate.
pub fn fd_input(x: &[f64], analytic: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst: f64 = 0.0;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + H;
        let up = f(&probe);
        probe[i] = x[i] - H;
        let down = f(&probe);
        probe[i] = x[i];
        worst = worst.max(rel_err(analytic[i], (up - down) / (2.0 * H)));
    }
    worst
}

pub fn uniform_vec(n: usize, scale: f64, rng: &mut NoiseStream) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * rng.uniform() - 1.0)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cheap deterministic stand-in for the noise network:
/// `tanh(A y + b k / K + C f)`. Counts its calls.
pub struct StubDenoiser {
    pub len: usize,
    pub steps: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    feature_dim: usize,
    pub calls: Cell<usize>,
}

impl StubDenoiser {
    pub fn new(len: usize, steps: usize, feature_dim: usize, rng: &mut NoiseStream) -> Self {
        Self {
            len,
            steps,
            a: uniform_vec(len * len, 0.5, rng),
            b: uniform_vec(len, 1.0, rng),
            c: uniform_vec(len * feature_dim, 0.5, rng),
            feature_dim,
            calls: Cell::new(0),
        }
    }
}

impl Denoise for StubDenoiser {
    fn value_len(&self) -> usize {
        self.len
    }

    fn predict_noise(&self, k: usize, y: &Trajectory, f: &ConditionFeature) -> Result<Vec<f64>> {
        self.calls.set(self.calls.get() + 1);
        let t = k as f64 / self.steps as f64;
        Ok((0..self.len)
            .map(|i| {
                let ay = dot(&self.a[i * self.len..(i + 1) * self.len], &y.values);
                let cf = dot(&self.c[i * self.feature_dim..(i + 1) * self.feature_dim], &f.vector);
                (ay + self.b[i] * t + cf).tanh()
            })
            .collect())
    }
}

//! Conditional noise-prediction network `eps(k, Y^k, f)`.
//!
//! Flattened `Y^k`, a sinusoidal embedding of `k`, and the condition
//! feature are concatenated, projected to `width`, passed through residual
//! blocks `h <- h + act(W h + b)`, and projected back to trajectory size.

use serde::{Deserialize, Serialize};

use crate::condition::ConditionFeature;
use crate::error::{ensure_finite, Error, Result};
use crate::nn::{prefixed, prefixed_mut, Activation, Dense, Param, Parameterized, StepEmbedding};
use crate::rng::NoiseStream;
use crate::sampler::{Denoise, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub frames: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub width: usize,
    pub blocks: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            frames: 12,
            feature_dim: 64,
            embed_dim: 32,
            width: 64,
            blocks: 3,
        }
    }
}

const ACT: Activation = Activation::Silu;

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub input: Dense,
    pub blocks: Vec<Dense>,
    pub output: Dense,
    embedding: StepEmbedding,
    frames: usize,
    steps: usize,
}

/// Activations from one forward pass.
#[derive(Debug, Clone)]
pub struct DenoiserTape {
    input: Vec<f64>,
    pre_in: Vec<f64>,
    /// Input to each residual block.
    block_in: Vec<Vec<f64>>,
    block_pre: Vec<Vec<f64>>,
    last: Vec<f64>,
}

impl Denoiser {
    pub fn new(cfg: &DenoiserConfig, steps: usize, rng: &mut NoiseStream) -> Self {
        let in_dim = 2 * cfg.frames + cfg.embed_dim + cfg.feature_dim;
        Self {
            input: Dense::new(in_dim, cfg.width, rng),
            blocks: (0..cfg.blocks).map(|_| Dense::new(cfg.width, cfg.width, rng)).collect(),
            output: Dense::new(cfg.width, 2 * cfg.frames, rng),
            embedding: StepEmbedding::new(cfg.embed_dim),
            frames: cfg.frames,
            steps,
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    fn assemble(&self, k: usize, y: &[f64], f: &[f64]) -> Result<Vec<f64>> {
        if k < 1 || k > self.steps {
            return Err(Error::range("k", k, 1, self.steps));
        }
        if y.len() != 2 * self.frames {
            return Err(Error::shape("denoiser trajectory", 2 * self.frames, y.len()));
        }
        let mut x = Vec::with_capacity(self.input.inputs());
        x.extend_from_slice(y);
        x.extend(self.embedding.embed(k));
        x.extend_from_slice(f);
        if x.len() != self.input.inputs() {
            return Err(Error::shape("denoiser condition feature", self.input.inputs() - y.len() - self.embedding.dim(), f.len()));
        }
        Ok(x)
    }

    pub fn forward(&self, k: usize, y: &[f64], f: &[f64]) -> Result<(Vec<f64>, DenoiserTape)> {
        let input = self.assemble(k, y, f)?;
        let pre_in = self.input.forward(&input)?;
        let mut h = ACT.forward(&pre_in);
        let mut block_in = Vec::with_capacity(self.blocks.len());
        let mut block_pre = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let pre = b.forward(&h)?;
            let next: Vec<f64> = h.iter().zip(&pre).map(|(x, p)| x + ACT.apply(*p)).collect();
            block_in.push(std::mem::replace(&mut h, next));
            block_pre.push(pre);
        }
        let out = self.output.forward(&h)?;
        ensure_finite(&out, &format!("denoiser output at k = {k}"))?;
        Ok((
            out,
            DenoiserTape {
                input,
                pre_in,
                block_in,
                block_pre,
                last: h,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the condition feature.
    pub fn backward(&mut self, tape: &DenoiserTape, d_out: &[f64]) -> Result<Vec<f64>> {
        let mut dh = self.output.backward(&tape.last, d_out)?;
        for (i, b) in self.blocks.iter_mut().enumerate().rev() {
            let d_pre = ACT.backward(&tape.block_pre[i], &dh);
            let d_in = b.backward(&tape.block_in[i], &d_pre)?;
            for (a, d) in dh.iter_mut().zip(d_in) {
                *a += d;
            }
        }
        let d_pre_in = ACT.backward(&tape.pre_in, &dh);
        let dx = self.input.backward(&tape.input, &d_pre_in)?;
        Ok(dx[2 * self.frames + self.embedding.dim()..].to_vec())
    }
}

impl Denoise for Denoiser {
    fn value_len(&self) -> usize {
        2 * self.frames
    }

    fn predict_noise(&self, k: usize, y: &Trajectory, f: &ConditionFeature) -> Result<Vec<f64>> {
        Ok(self.forward(k, &y.values, &f.vector)?.0)
    }
}

impl Parameterized for Denoiser {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = prefixed("input", self.input.params());
        for (i, b) in self.blocks.iter().enumerate() {
            v.extend(prefixed(&format!("block{i}"), b.params()));
        }
        v.extend(prefixed("output", self.output.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = prefixed_mut("input", self.input.params_mut());
        for (i, b) in self.blocks.iter_mut().enumerate() {
            v.extend(prefixed_mut(&format!("block{i}"), b.params_mut()));
        }
        v.extend(prefixed_mut("output", self.output.params_mut()));
        v
    }
}

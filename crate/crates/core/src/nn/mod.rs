//! Minimal differentiable building blocks with hand-written backward passes.
//!
//! Layers are pure in their forward pass. Backward passes take the forward
//! input together with the upstream gradient, accumulate parameter gradients
//! into [`Param::grad`], and return the gradient with respect to the input.

mod act;
mod adam;
mod checkpoint;
mod conv;
mod dense;
mod embed;
mod lstm;

pub use act::Activation;
pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use conv::{avg_pool2, avg_pool2_backward, concat_channels, split_channels, upsample2, upsample2_backward, Conv2d, FeatureMap};
pub use dense::Dense;
pub use embed::StepEmbedding;
pub use lstm::{Lstm, LstmTape};

use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// A learnable array and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![0.0; n],
            grad: vec![0.0; n],
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut NoiseStream) -> Self {
        let mut p = Self::zeros(shape);
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        for v in &mut p.value {
            *v = (2.0 * rng.uniform() - 1.0) * bound;
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Anything that owns named parameters.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Param)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    /// Sets every parameter value to zero.
    fn zero_values(&mut self) {
        for (_, p) in self.params_mut() {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (name, p) in self.params() {
            ck.insert(name, p.shape.clone(), p.value.clone());
        }
        ck
    }

    /// Copies values from `ck`. Every parameter must be present with the
    /// same shape, and `ck` must not carry extra entries under this model.
    fn load_from(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut seen = 0;
        for (name, p) in self.params_mut() {
            let (shape, values) = ck
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing entry '{name}'")))?;
            if shape != p.shape.as_slice() {
                return Err(Error::shape(format!("checkpoint entry '{name}'"), format!("{:?}", p.shape), format!("{shape:?}")));
            }
            p.value.copy_from_slice(values);
            seen += 1;
        }
        if seen != ck.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} entries, model expects {seen}",
                ck.len()
            )));
        }
        Ok(())
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Param)>) -> Vec<(String, &'a Param)> {
    items.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

pub(crate) fn prefixed_mut<'a>(prefix: &str, items: Vec<(String, &'a mut Param)>) -> Vec<(String, &'a mut Param)> {
    items.into_iter().map(|(n, p)| (format!("{prefix}.{n}"), p)).collect()
}

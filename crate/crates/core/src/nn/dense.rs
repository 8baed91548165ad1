use super::{Param, Parameterized};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Affine map `y = W x + b` with `W` stored row-major as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut NoiseStream) -> Self {
        Self {
            weight: Param::uniform(&[outputs, inputs], inputs, rng),
            bias: Param::uniform(&[outputs], inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let n_in = self.inputs();
        if x.len() != n_in {
            return Err(Error::shape("dense input", n_in, x.len()));
        }
        Ok(self
            .weight
            .value
            .chunks_exact(n_in)
            .zip(&self.bias.value)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>())
            .collect())
    }

    /// Accumulates `dW += dy x^T`, `db += dy` and returns `W^T dy`.
    pub fn backward(&mut self, x: &[f64], dy: &[f64]) -> Result<Vec<f64>> {
        let n_in = self.inputs();
        if x.len() != n_in || dy.len() != self.outputs() {
            return Err(Error::shape("dense backward", format!("({n_in}, {})", self.outputs()), format!("({}, {})", x.len(), dy.len())));
        }
        let mut dx = vec![0.0; n_in];
        for (o, &g) in dy.iter().enumerate() {
            self.bias.grad[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight.value[o * n_in..(o + 1) * n_in];
            let grow = &mut self.weight.grad[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        Ok(dx)
    }
}

impl Parameterized for Dense {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

use super::act::sigmoid;
use super::{Param, Parameterized};
use crate::error::{Error, Result};
use crate::rng::NoiseStream;

/// Gated recurrent cell with input/forget/cell/output gates.
///
/// Weights are `[4H, I + H]` acting on `concat(x_t, h_{t-1})`; gate rows are
/// ordered input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub weight: Param,
    pub bias: Param,
    inputs: usize,
    hidden: usize,
}

#[derive(Debug, Clone)]
struct StepCache {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates `[i, f, g, o]`, each `H` long.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmTape {
    steps: Vec<StepCache>,
}

impl Lstm {
    pub fn new(inputs: usize, hidden: usize, rng: &mut NoiseStream) -> Self {
        let fan_in = inputs + hidden;
        let weight = Param::uniform(&[4 * hidden, fan_in], hidden, rng);
        let mut bias = Param::uniform(&[4 * hidden], hidden, rng);
        for b in &mut bias.value[hidden..2 * hidden] {
            *b += 1.0;
        }
        Self {
            weight,
            bias,
            inputs,
            hidden,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>, StepCache) {
        let hd = self.hidden;
        let fan_in = self.inputs + hd;
        let mut xh = Vec::with_capacity(fan_in);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h);
        let mut gates: Vec<f64> = self
            .weight
            .value
            .chunks_exact(fan_in)
            .zip(&self.bias.value)
            .map(|(row, b)| b + row.iter().zip(&xh).map(|(w, v)| w * v).sum::<f64>())
            .collect();
        for (j, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hd..3 * hd).contains(&j) { g.tanh() } else { sigmoid(*g) };
        }
        let mut c_new = vec![0.0; hd];
        let mut h_new = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c_new[j] = f * c[j] + i * g;
            tanh_c[j] = c_new[j].tanh();
            h_new[j] = o * tanh_c[j];
        }
        let cache = StepCache {
            xh,
            c_prev: c.to_vec(),
            gates,
            tanh_c,
        };
        (h_new, c_new, cache)
    }

    /// Runs the cell over `xs` from a zero state and returns the final hidden state.
    pub fn forward(&self, xs: &[Vec<f64>]) -> Result<(Vec<f64>, LstmTape)> {
        if xs.is_empty() {
            return Err(Error::Invalid("recurrent encoder needs at least one input row".into()));
        }
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut steps = Vec::with_capacity(xs.len());
        for x in xs {
            if x.len() != self.inputs {
                return Err(Error::shape("recurrent input row", self.inputs, x.len()));
            }
            let (h2, c2, cache) = self.step(x, &h, &c);
            h = h2;
            c = c2;
            steps.push(cache);
        }
        Ok((h, LstmTape { steps }))
    }

    /// Back-propagates a gradient on the final hidden state through time.
    /// Returns the gradient with respect to every input row.
    pub fn backward(&mut self, tape: &LstmTape, dh_final: &[f64]) -> Result<Vec<Vec<f64>>> {
        let hd = self.hidden;
        if dh_final.len() != hd {
            return Err(Error::shape("recurrent backward", hd, dh_final.len()));
        }
        let fan_in = self.inputs + hd;
        let mut dh = dh_final.to_vec();
        let mut dc = vec![0.0; hd];
        let mut dxs = vec![Vec::new(); tape.steps.len()];
        let mut dz = vec![0.0; 4 * hd];
        for (t, cache) in tape.steps.iter().enumerate().rev() {
            let gates = &cache.gates;
            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let tc = cache.tanh_c[j];
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                dz[j] = dcj * g * i * (1.0 - i);
                dz[hd + j] = dcj * cache.c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dcj * i * (1.0 - g * g);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
                dc[j] = dcj * f;
            }
            let mut dxh = vec![0.0; fan_in];
            for (r, &g) in dz.iter().enumerate() {
                self.bias.grad[r] += g;
                let row = &self.weight.value[r * fan_in..(r + 1) * fan_in];
                let grow = &mut self.weight.grad[r * fan_in..(r + 1) * fan_in];
                for q in 0..fan_in {
                    grow[q] += g * cache.xh[q];
                    dxh[q] += g * row[q];
                }
            }
            dh.copy_from_slice(&dxh[self.inputs..]);
            dxh.truncate(self.inputs);
            dxs[t] = dxh;
        }
        Ok(dxs)
    }
}

impl Parameterized for Lstm {
    fn params(&self) -> Vec<(String, &Param)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_equals_one_cell_step() {
        let cell = Lstm::new(3, 4, &mut NoiseStream::new(2));
        let x = vec![0.2, -0.7, 1.1];
        let (h, _) = cell.forward(&[x.clone()]).unwrap();
        let (h1, _, _) = cell.step(&x, &[0.0; 4], &[0.0; 4]);
        assert_eq!(h, h1);
    }

    #[test]
    fn empty_sequence_rejected() {
        let cell = Lstm::new(3, 4, &mut NoiseStream::new(2));
        assert!(cell.forward(&[]).is_err());
        assert!(cell.forward(&[vec![1.0]]).is_err());
    }
}

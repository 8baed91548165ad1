use super::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are matched to
/// parameters by position, so callers must pass parameters in a fixed order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Applies one update from the accumulated gradients. Nothing is changed
    /// if any gradient is non-finite.
    pub fn update(&mut self, params: Vec<(String, &mut Param)>) -> Result<()> {
        for (name, p) in &params {
            if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of '{name}' at index {i}; update skipped")));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(Error::shape("optimizer parameter list", self.m.len(), params.len()));
        }
        self.step += 1;
        for ((_, p), (m, v)) in params.into_iter().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            adam_update(p, m, v, &self.config, self.step)?;
        }
        Ok(())
    }
}

/// One Adam step for a single parameter with explicit moment buffers.
pub fn adam_update(p: &mut Param, m: &mut [f64], v: &mut [f64], cfg: &AdamConfig, step: usize) -> Result<()> {
    if step < 1 {
        return Err(Error::Invalid("Adam step counter starts at 1".into()));
    }
    if m.len() != p.len() || v.len() != p.len() {
        return Err(Error::shape("Adam moments", p.len(), m.len()));
    }
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        let g = p.grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

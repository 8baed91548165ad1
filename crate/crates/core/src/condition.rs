//! Goal-augmented history state and the shared recurrent encoder.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::nn::{prefixed, prefixed_mut, Dense, Lstm, LstmTape, Param, Parameterized};
use crate::rng::NoiseStream;

/// Width of one augmented row: goal offset, position, velocity, acceleration.
pub const STATE_WIDTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Common,
    Diverse,
}

/// Encoder output that conditions the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionFeature {
    pub vector: Vec<f64>,
    pub kind: FeatureKind,
    /// Goal that produced this feature, world meters.
    pub goal: [f64; 2],
}

impl ConditionFeature {
    pub fn new(vector: Vec<f64>, kind: FeatureKind, goal: [f64; 2]) -> Self {
        Self { vector, kind, goal }
    }
}

/// Per-frame rows `[D(2), X(2), V(2), A(2)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub rows: Vec<[f64; STATE_WIDTH]>,
}

impl AugmentedState {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn column(&self, offset: usize) -> Vec<[f64; 2]> {
        self.rows.iter().map(|r| [r[offset], r[offset + 1]]).collect()
    }

    pub fn offsets(&self) -> Vec<[f64; 2]> {
        self.column(0)
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.column(2)
    }

    pub fn velocities(&self) -> Vec<[f64; 2]> {
        self.column(4)
    }

    pub fn accelerations(&self) -> Vec<[f64; 2]> {
        self.column(6)
    }
}

/// Backward differences with the first entry replicated from the second.
fn diff_replicate_first(xs: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut d: Vec<[f64; 2]> = xs.windows(2).map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]]).collect();
    d.insert(0, d[0]);
    d
}

/// Builds the goal-augmented state for a history of at least two frames.
pub fn augment_state(history: &[[f64; 2]], goal: [f64; 2]) -> Result<AugmentedState> {
    if history.len() < 2 {
        return Err(Error::Invalid(format!(
            "state augmentation needs at least 2 history frames, got {}",
            history.len()
        )));
    }
    let v = diff_replicate_first(history);
    let a = diff_replicate_first(&v);
    let rows = history
        .iter()
        .zip(v.iter().zip(&a))
        .map(|(x, (v, a))| [x[0] - goal[0], x[1] - goal[1], x[0], x[1], v[0], v[1], a[0], a[1]])
        .collect();
    Ok(AugmentedState { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub feature_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            feature_dim: 64,
        }
    }
}

/// Recurrent pass over the augmented rows followed by a linear projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub cell: Lstm,
    pub proj: Dense,
}

#[derive(Debug, Clone)]
pub struct EncoderTape {
    lstm: LstmTape,
    hidden: Vec<f64>,
}

impl Encoder {
    pub fn new(cfg: &EncoderConfig, rng: &mut NoiseStream) -> Self {
        Self {
            cell: Lstm::new(STATE_WIDTH, cfg.hidden, rng),
            proj: Dense::new(cfg.hidden, cfg.feature_dim, rng),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.proj.outputs()
    }

    pub fn forward(&self, state: &AugmentedState) -> Result<(Vec<f64>, EncoderTape)> {
        let xs: Vec<Vec<f64>> = state.rows.iter().map(|r| r.to_vec()).collect();
        let (hidden, lstm) = self.cell.forward(&xs)?;
        let out = self.proj.forward(&hidden)?;
        ensure_finite(&out, "encoder output")?;
        Ok((out, EncoderTape { lstm, hidden }))
    }

    pub fn encode(&self, state: &AugmentedState, kind: FeatureKind, goal: [f64; 2]) -> Result<ConditionFeature> {
        let (vector, _) = self.forward(state)?;
        Ok(ConditionFeature::new(vector, kind, goal))
    }

    /// Returns the gradient with respect to each augmented row.
    pub fn backward(&mut self, tape: &EncoderTape, d_feature: &[f64]) -> Result<Vec<[f64; STATE_WIDTH]>> {
        let dh = self.proj.backward(&tape.hidden, d_feature)?;
        let dxs = self.cell.backward(&tape.lstm, &dh)?;
        Ok(dxs
            .into_iter()
            .map(|d| {
                let mut row = [0.0; STATE_WIDTH];
                row.copy_from_slice(&d);
                row
            })
            .collect())
    }
}

impl Parameterized for Encoder {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = prefixed("cell", self.cell.params());
        v.extend(prefixed("proj", self.proj.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = prefixed_mut("cell", self.cell.params_mut());
        v.extend(prefixed_mut("proj", self.proj.params_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stationary_agent() {
        let p = [3.0, -1.0];
        let s = augment_state(&[p; 5], p).unwrap();
        assert_eq!(s.len(), 5);
        for r in &s.rows {
            assert_eq!(r, &[0.0, 0.0, 3.0, -1.0, 0.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn uniform_motion() {
        let xs: Vec<[f64; 2]> = (0..8).map(|t| [0.5 * t as f64, -0.25 * t as f64]).collect();
        let s = augment_state(&xs, [10.0, 0.0]).unwrap();
        assert!(s.velocities().iter().all(|v| *v == [0.5, -0.25]));
        assert!(s.accelerations().iter().all(|a| *a == [0.0, 0.0]));
    }

    #[test]
    fn hand_computed_differences() {
        let s = augment_state(&[[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]], [5.0, 0.0]).unwrap();
        assert_eq!(s.velocities(), vec![[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert_eq!(s.accelerations(), vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(s.offsets(), vec![[-5.0, 0.0], [-4.0, 0.0], [-2.0, 0.0]]);
    }

    #[test]
    fn too_short_history() {
        assert!(augment_state(&[[0.0, 0.0]], [1.0, 1.0]).is_err());
    }

    #[test]
    fn encoder_is_deterministic_and_goal_sensitive() {
        let enc = Encoder::new(&EncoderConfig::default(), &mut NoiseStream::new(9));
        let xs: Vec<[f64; 2]> = (0..8).map(|t| [0.4 * t as f64, 0.1 * (t * t) as f64]).collect();
        let a = augment_state(&xs, [4.0, 2.0]).unwrap();
        let b = augment_state(&xs, [-4.0, 2.0]).unwrap();
        assert_ne!(a, b);
        let fa = enc.encode(&a, FeatureKind::Common, [4.0, 2.0]).unwrap();
        assert_eq!(fa.vector.len(), 64);
        assert_eq!(fa, enc.encode(&a, FeatureKind::Common, [4.0, 2.0]).unwrap());
        assert_ne!(fa.vector, enc.encode(&b, FeatureKind::Diverse, [-4.0, 2.0]).unwrap().vector);
    }
}

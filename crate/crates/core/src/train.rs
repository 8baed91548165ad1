//! Losses and the end-to-end training loop.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::condition::ConditionFeature;
use crate::data::TrajectoryWindow;
use crate::error::{Error, Result};
use crate::goal::{HeatMapStack, SemanticGrid};
use crate::model::{Draw, GoalRouting, LossWeights, Model, SampleLoss};
use crate::nn::{Adam, AdamConfig, Parameterized};
use crate::rng::NoiseStream;
use crate::sampler::{forward_noise, Denoise, Trajectory};
use crate::schedule::NoiseSchedule;

/// Probabilities are clamped to `[EPS_CLIP, 1 - EPS_CLIP]` inside the BCE.
pub const EPS_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Goal-loss weight (paper scale: 20 for ETH/UCY, 40 for SDD).
    pub lambda: f64,
    /// Paper scale: 270.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied after every epoch.
    pub lr_decay: f64,
    pub teacher_forcing: bool,
    pub stop_goal_gradient: bool,
    /// Diffusion `(k, noise)` draws per window and step; they share one
    /// encoder pass.
    pub draws_per_window: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            lr_decay: 0.99,
            teacher_forcing: true,
            stop_goal_gradient: true,
            draws_per_window: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size < 1 || self.draws_per_window < 1 {
            return Err(Error::Config("batch_size and draws_per_window must be at least 1".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("lr and lr_decay must be positive".into()));
        }
        Ok(())
    }

    pub fn routing(&self) -> GoalRouting {
        GoalRouting {
            teacher_forcing: self.teacher_forcing,
            stop_goal_gradient: self.stop_goal_gradient,
        }
    }
}

/// Mean BCE over all entries and its gradient with respect to `pred`.
/// Entries whose prediction is clamped get zero gradient.
pub(crate) fn bce_with_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != target.len() {
        return Err(Error::shape("goal loss maps", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Invalid("goal loss over empty maps".into()));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let q = p.clamp(EPS_CLIP, 1.0 - EPS_CLIP);
        loss -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
        grad.push(if q == *p { (q - t) / (q * (1.0 - q)) / n } else { 0.0 });
    }
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy between predicted and target maps.
pub fn goal_loss(pred: &HeatMapStack, target: &HeatMapStack) -> Result<f64> {
    if pred.grid != target.grid || pred.channels() != target.channels() {
        return Err(Error::shape(
            "goal loss maps",
            format!("{} x {:?}", target.channels(), target.grid),
            format!("{} x {:?}", pred.channels(), pred.grid),
        ));
    }
    Ok(bce_with_grad(&pred.maps.data, &target.maps.data)?.0)
}

/// Noise-prediction MSE at a uniformly drawn step.
pub fn diffusion_loss<D: Denoise>(
    denoiser: &D,
    y0: &Trajectory,
    f: &ConditionFeature,
    s: &NoiseSchedule,
    rng: &mut NoiseStream,
) -> Result<f64> {
    let draw = Draw::sample(s.steps(), y0.values.len(), rng);
    let yk = forward_noise(y0, draw.k, &draw.eps, s)?;
    let out = denoiser.predict_noise(draw.k, &yk, f)?;
    if out.len() != draw.eps.len() {
        return Err(Error::shape("denoiser output", draw.eps.len(), out.len()));
    }
    Ok(out.iter().zip(&draw.eps).map(|(o, e)| (o - e).powi(2)).sum::<f64>() / out.len() as f64)
}

pub fn combined_loss(l_traj: f64, l_goal: f64, lambda: f64) -> f64 {
    l_traj + lambda * l_goal
}

/// Windows paired with their scene's semantic grid.
#[derive(Debug, Clone, Default)]
pub struct TrainingSet {
    pub grids: Vec<SemanticGrid>,
    /// `(grid index, window)` pairs.
    pub items: Vec<(usize, TrajectoryWindow)>,
}

impl TrainingSet {
    pub fn push_scene(&mut self, grid: SemanticGrid, windows: impl IntoIterator<Item = TrajectoryWindow>) {
        let g = self.grids.len();
        self.grids.push(grid);
        self.items.extend(windows.into_iter().map(|w| (g, w)));
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_goal: f64,
    pub l_traj: f64,
    pub l_total: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,l_goal,l_traj,l_total,lr";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{:?},{:?},{:?},{:?}", self.epoch, self.l_goal, self.l_traj, self.l_total, self.lr)
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Owns the optimizer state and the learning-rate schedule.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    lr: f64,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            adam: Adam::new(AdamConfig {
                lr: config.lr,
                ..AdamConfig::default()
            }),
            lr: config.lr,
            epoch: 0,
            config,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// One pass over `data` in an order shuffled by `rng`.
    pub fn train_epoch(&mut self, model: &mut Model, data: &TrainingSet, rng: &mut NoiseStream) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::Invalid("training set is empty".into()));
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(rng.rng_mut());
        let len = 2 * model.future();
        let steps = model.schedule.steps();
        let routing = self.config.routing();
        self.adam.config.lr = self.lr;

        let mut sum = SampleLoss::default();
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            model.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            let weights = LossWeights {
                goal: self.config.lambda * scale,
                traj: scale,
            };
            for &i in batch {
                let (g, w) = &data.items[i];
                let draws: Vec<Draw> = (0..self.config.draws_per_window).map(|_| Draw::sample(steps, len, rng)).collect();
                let l = model
                    .sample_loss(&data.grids[*g], w, &draws, routing, Some(weights))
                    .map_err(|e| match e {
                        Error::NonFinite(m) => Error::NonFinite(format!("{m} in batch {b} of epoch {}", self.epoch + 1)),
                        other => other,
                    })?;
                sum.goal += l.goal;
                sum.traj += l.traj;
            }
            self.adam
                .update(model.params_mut())
                .map_err(|e| Error::NonFinite(format!("{e} in batch {b} of epoch {}", self.epoch + 1)))?;
        }
        let n = data.len() as f64;
        let (l_goal, l_traj) = (sum.goal / n, sum.traj / n);
        self.epoch += 1;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            l_goal,
            l_traj,
            l_total: combined_loss(l_traj, l_goal, self.config.lambda),
            lr: self.lr,
        };
        self.lr *= self.config.lr_decay;
        Ok(metrics)
    }
}

/// Mean losses over `data` with draws fixed by `seed`; no gradients.
pub fn evaluate_losses(model: &mut Model, data: &TrainingSet, seed: u64, routing: GoalRouting) -> Result<SampleLoss> {
    if data.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let base = NoiseStream::new(seed);
    let mut sum = SampleLoss::default();
    for (i, (g, w)) in data.items.iter().enumerate() {
        let draw = Draw::sample(model.schedule.steps(), 2 * model.future(), &mut base.fork(i as u64));
        let l = model.sample_loss(&data.grids[*g], w, std::slice::from_ref(&draw), routing, None)?;
        sum.goal += l.goal;
        sum.traj += l.traj;
    }
    let n = data.len() as f64;
    Ok(SampleLoss {
        goal: sum.goal / n,
        traj: sum.traj / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condition::FeatureKind;
    use crate::goal::GridSpec;
    use crate::nn::FeatureMap;

    fn stack(grid: GridSpec, data: Vec<f64>) -> HeatMapStack {
        HeatMapStack {
            grid,
            maps: FeatureMap::from_vec(1, grid.height, grid.width, data).unwrap(),
            normalized: false,
        }
    }

    #[test]
    fn bce_values() {
        let g = GridSpec::new(2, 2, [0.0, 0.0], 1.0).unwrap();
        let l = goal_loss(&stack(g, vec![0.5; 4]), &stack(g, vec![0.5; 4])).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let bin = vec![1.0, 0.0, 0.0, 1.0];
        let l = goal_loss(&stack(g, bin.clone()), &stack(g, bin)).unwrap();
        assert!(l >= 0.0 && l < 1e-6);

        let one = GridSpec::new(1, 1, [0.0, 0.0], 1.0).unwrap();
        let l = goal_loss(&stack(one, vec![0.9]), &stack(one, vec![1.0])).unwrap();
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn bce_gradient_matches_differences() {
        let mut rng = NoiseStream::new(2);
        for _ in 0..50 {
            let p: Vec<f64> = (0..6).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
            let t: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
            let (_, g) = bce_with_grad(&p, &t).unwrap();
            for i in 0..6 {
                let h = 1e-6;
                let mut a = p.clone();
                let mut b = p.clone();
                a[i] += h;
                b[i] -= h;
                let fd = (bce_with_grad(&a, &t).unwrap().0 - bce_with_grad(&b, &t).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn combined_loss_arithmetic() {
        assert_eq!(combined_loss(0.5, 0.1, 20.0), 2.5);
        assert_eq!(combined_loss(0.5, 0.1, 0.0), 0.5);
    }

    struct Echo;
    impl Denoise for Echo {
        fn value_len(&self) -> usize {
            4
        }
        fn predict_noise(&self, k: usize, y: &Trajectory, _: &ConditionFeature) -> Result<Vec<f64>> {
            // Recovers the drawn noise exactly for a zero clean trajectory.
            let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
            Ok(y.values.iter().map(|v| v / (1.0 - s.alpha_bar(k)).sqrt()).collect())
        }
    }

    struct Zero;
    impl Denoise for Zero {
        fn value_len(&self) -> usize {
            4
        }
        fn predict_noise(&self, _: usize, _: &Trajectory, _: &ConditionFeature) -> Result<Vec<f64>> {
            Ok(vec![0.0; 4])
        }
    }

    #[test]
    fn diffusion_loss_limits() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        let f = ConditionFeature::new(vec![], FeatureKind::Common, [0.0, 0.0]);
        let y0 = Trajectory::new(vec![0.0; 4], 0);
        let mut rng = NoiseStream::new(1);
        for _ in 0..20 {
            assert!(diffusion_loss(&Echo, &y0, &f, &s, &mut rng).unwrap() < 1e-24);
        }
        // Mean of squared standard normals: mean 1, per-draw variance 2/4.
        let draws = 100_000;
        let y0 = Trajectory::new(vec![0.3, -1.0, 2.0, 0.5], 0);
        let mean: f64 = (0..draws).map(|_| diffusion_loss(&Zero, &y0, &f, &s, &mut rng).unwrap()).sum::<f64>()
            / draws as f64;
        let se = (0.5f64 / draws as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn diffusion_loss_translation_invariant_for_echo_of_noise() {
        // With an agent-centric encoder the noise target does not depend on
        // where the trajectory sits, so two translated copies see equal loss
        // under equal draws when the denoiser ignores its input.
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        let f = ConditionFeature::new(vec![], FeatureKind::Common, [0.0, 0.0]);
        let a = Trajectory::new(vec![0.0, 1.0, 2.0, 3.0], 0);
        let b = Trajectory::new(vec![10.0, 11.0, 12.0, 13.0], 0);
        let la = diffusion_loss(&Zero, &a, &f, &s, &mut NoiseStream::new(4)).unwrap();
        let lb = diffusion_loss(&Zero, &b, &f, &s, &mut NoiseStream::new(4)).unwrap();
        assert_eq!(la, lb);
    }
}

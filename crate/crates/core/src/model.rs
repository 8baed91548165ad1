//! The full forecaster: goal net, shared encoder and denoiser.
//!
//! Trajectories enter the encoder and denoiser in a local frame:
//! `(p - origin) / traj_scale`, where `origin` is the current position when
//! `agent_centric` is set and the world origin otherwise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::condition::{augment_state, Encoder, EncoderConfig, EncoderTape, FeatureKind, ConditionFeature};
use crate::data::TrajectoryWindow;
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::goal::{argmax, select_goals, GoalNet, GoalNetConfig, GoalSet, GridSpec, HeatMapStack, SemanticGrid, TtstConfig};
use crate::nn::{prefixed, prefixed_mut, Activation, FeatureMap, Param, Parameterized};
use crate::rng::{NoiseStream, GOAL_KEY};
use crate::sampler::{
    forward_noise, sample_standard, tree_sample_scheme, SampleOutput, SamplerConfig, StepRule, Trajectory,
    TreeScheme,
};
use crate::schedule::NoiseSchedule;
use crate::train::{bce_with_grad, goal_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Goal-net channels per level; the last entry is the bottleneck.
    pub goal_channels: Vec<usize>,
    pub semantic_classes: usize,
    pub encoder_hidden: usize,
    /// Condition feature width (paper scale: 256).
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub width: usize,
    pub blocks: usize,
    /// Gaussian width of rasterized positions, pixels.
    pub sigma_px: f64,
    /// Meters per local unit.
    pub traj_scale: f64,
    pub agent_centric: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            goal_channels: vec![8, 16, 16],
            semantic_classes: 2,
            encoder_hidden: 64,
            feature_dim: 64,
            embed_dim: 32,
            width: 64,
            blocks: 3,
            sigma_px: 2.0,
            traj_scale: 2.0,
            agent_centric: true,
        }
    }
}

/// How the trajectory branch obtains its goal during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GoalRouting {
    /// Feed the ground-truth goal instead of the estimate.
    pub teacher_forcing: bool,
    /// Detach the estimated goal from trajectory-loss gradients.
    pub stop_goal_gradient: bool,
}

/// Diffusion step and noise for one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub k: usize,
    pub eps: Vec<f64>,
}

impl Draw {
    pub fn sample(steps: usize, len: usize, rng: &mut NoiseStream) -> Self {
        let k = rng.int_inclusive(1, steps);
        Self { k, eps: rng.normals(len) }
    }
}

/// Loss parts of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleLoss {
    pub goal: f64,
    pub traj: f64,
}

/// Multipliers applied to each loss part during backward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub goal: f64,
    pub traj: f64,
}

/// Which sampler produces predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplerChoice {
    Tree(TreeScheme),
    Standard(StepRule),
}

impl SamplerChoice {
    pub fn name(&self) -> String {
        match self {
            SamplerChoice::Tree(s) => s.name(),
            SamplerChoice::Standard(r) => r.name().to_string(),
        }
    }
}

impl fmt::Display for SamplerChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Accepts `ts`, `ts:<trunk>+<branch>`, or a single rule name.
impl FromStr for SamplerChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "ts" {
            return Ok(SamplerChoice::Tree(TreeScheme::default()));
        }
        if let Some(rest) = s.strip_prefix("ts:") {
            let (trunk, branch) = rest
                .split_once('+')
                .ok_or_else(|| Error::Invalid(format!("expected ts:<trunk>+<branch>, got '{s}'")))?;
            return Ok(SamplerChoice::Tree(TreeScheme {
                trunk: trunk.parse()?,
                branch: branch.parse()?,
            }));
        }
        Ok(SamplerChoice::Standard(s.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOptions {
    pub sampler: SamplerConfig,
    pub choice: SamplerChoice,
    pub ttst: Option<TtstConfig>,
}

/// `N` forecasts for one window, world meters.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub goals: GoalSet,
    pub evals: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub goal_net: GoalNet,
    pub encoder: Encoder,
    pub denoiser: Denoiser,
    history: usize,
    future: usize,
}

/// Probability-weighted mean of pixel centres.
fn soft_argmax(probs: &[f64], grid: &GridSpec) -> Result<[f64; 2]> {
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Invalid("goal map has zero total mass".into()));
    }
    let mut g = [0.0; 2];
    for (i, p) in probs.iter().enumerate() {
        let c = grid.index_center(i);
        g[0] += p * c[0];
        g[1] += p * c[1];
    }
    Ok([g[0] / total, g[1] / total])
}

impl Model {
    pub fn new(
        cfg: &ModelConfig,
        history: usize,
        future: usize,
        schedule: NoiseSchedule,
        rng: &mut NoiseStream,
    ) -> Result<Self> {
        if history < 2 || future < 1 {
            return Err(Error::Config(format!("need t_h >= 2 and t_f >= 1, got {history} and {future}")));
        }
        if !(cfg.traj_scale > 0.0) || !(cfg.sigma_px > 0.0) {
            return Err(Error::Config("traj_scale and sigma_px must be positive".into()));
        }
        if cfg.embed_dim % 2 != 0 || cfg.embed_dim == 0 {
            return Err(Error::Config(format!("embed_dim must be even and positive, got {}", cfg.embed_dim)));
        }
        if cfg.width == 0 || cfg.feature_dim == 0 || cfg.encoder_hidden == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let goal_net = GoalNet::new(
            &GoalNetConfig {
                semantic_classes: cfg.semantic_classes,
                history,
                future,
                channels: cfg.goal_channels.clone(),
            },
            rng,
        )?;
        let encoder = Encoder::new(
            &EncoderConfig {
                hidden: cfg.encoder_hidden,
                feature_dim: cfg.feature_dim,
            },
            rng,
        );
        let denoiser = Denoiser::new(
            &DenoiserConfig {
                frames: future,
                feature_dim: cfg.feature_dim,
                embed_dim: cfg.embed_dim,
                width: cfg.width,
                blocks: cfg.blocks,
            },
            schedule.steps(),
            rng,
        );
        Ok(Self {
            config: cfg.clone(),
            schedule,
            goal_net,
            encoder,
            denoiser,
            history,
            future,
        })
    }

    pub fn history(&self) -> usize {
        self.history
    }

    pub fn future(&self) -> usize {
        self.future
    }

    fn origin(&self, history: &[[f64; 2]]) -> [f64; 2] {
        if self.config.agent_centric {
            *history.last().expect("history is non-empty")
        } else {
            [0.0, 0.0]
        }
    }

    fn to_local(&self, p: [f64; 2], origin: [f64; 2]) -> [f64; 2] {
        let s = self.config.traj_scale;
        [(p[0] - origin[0]) / s, (p[1] - origin[1]) / s]
    }

    fn to_world(&self, q: [f64; 2], origin: [f64; 2]) -> [f64; 2] {
        let s = self.config.traj_scale;
        [q[0] * s + origin[0], q[1] * s + origin[1]]
    }

    fn check_window(&self, w: &TrajectoryWindow) -> Result<()> {
        if w.history.len() != self.history {
            return Err(Error::shape("window history", self.history, w.history.len()));
        }
        if w.future.len() != self.future {
            return Err(Error::shape("window future", self.future, w.future.len()));
        }
        Ok(())
    }

    /// Encoder pass for `goal` (world meters) given a world-frame history.
    fn encode(&self, history: &[[f64; 2]], goal: [f64; 2]) -> Result<(Vec<f64>, EncoderTape)> {
        let origin = self.origin(history);
        let local: Vec<[f64; 2]> = history.iter().map(|p| self.to_local(*p, origin)).collect();
        let state = augment_state(&local, self.to_local(goal, origin))?;
        self.encoder.forward(&state)
    }

    pub fn condition(&self, history: &[[f64; 2]], goal: [f64; 2], kind: FeatureKind) -> Result<ConditionFeature> {
        let (vector, _) = self.encode(history, goal)?;
        Ok(ConditionFeature::new(vector, kind, goal))
    }

    /// Predicted per-frame probability maps for a history.
    pub fn heatmaps(&self, sem: &SemanticGrid, history: &[[f64; 2]]) -> Result<HeatMapStack> {
        let hist = HeatMapStack::from_positions(history, &sem.grid, self.config.sigma_px)?;
        self.goal_net.predict(sem, &hist)
    }

    /// Goal probability map (last predicted channel).
    pub fn goal_map(&self, sem: &SemanticGrid, history: &[[f64; 2]]) -> Result<Vec<f64>> {
        let maps = self.heatmaps(sem, history)?;
        Ok(maps.channel(self.future - 1).to_vec())
    }

    /// Pixel `(row, col)` of the goal-map maximum.
    pub fn goal_argmax_pixel(&self, sem: &SemanticGrid, history: &[[f64; 2]]) -> Result<(usize, usize)> {
        let i = argmax(&self.goal_map(sem, history)?);
        Ok((i / sem.grid.width, i % sem.grid.width))
    }

    /// Forward pass of both losses for one window, plus the backward pass
    /// when `weights` is given. The trajectory loss averages over `draws`,
    /// which share one encoder pass. Gradients accumulate into parameter
    /// buffers.
    pub fn sample_loss(
        &mut self,
        sem: &SemanticGrid,
        w: &TrajectoryWindow,
        draws: &[Draw],
        routing: GoalRouting,
        weights: Option<LossWeights>,
    ) -> Result<SampleLoss> {
        self.check_window(w)?;
        if draws.is_empty() {
            return Err(Error::Invalid("need at least one diffusion draw".into()));
        }
        let grid = sem.grid;
        let sigma = self.config.sigma_px;

        let hist = HeatMapStack::from_positions(&w.history, &grid, sigma)?;
        let input = self.goal_net.assemble_input(sem, &hist)?;
        let (logits, gtape) = self.goal_net.forward(&input)?;
        let probs = Activation::Sigmoid.forward(&logits.data);
        let target = HeatMapStack::from_positions(&w.future, &grid, sigma)?.peak_scaled();
        let (l_goal, d_probs) = bce_with_grad(&probs, &target.maps.data)?;

        let goal_plane = (self.future - 1) * grid.pixels()..self.future * grid.pixels();
        let goal = if routing.teacher_forcing {
            *w.future.last().unwrap()
        } else {
            soft_argmax(&probs[goal_plane.clone()], &grid)?
        };

        let origin = self.origin(&w.history);
        let (f, etape) = self.encode(&w.history, goal)?;
        let local: Vec<[f64; 2]> = w.future.iter().map(|p| self.to_local(*p, origin)).collect();
        let y0 = Trajectory::from_points(&local, 0);
        let mut runs = Vec::with_capacity(draws.len());
        let mut l_traj = 0.0;
        for draw in draws {
            if draw.eps.len() != y0.values.len() {
                return Err(Error::shape("diffusion noise", y0.values.len(), draw.eps.len()));
            }
            let yk = forward_noise(&y0, draw.k, &draw.eps, &self.schedule)?;
            let (out, dtape) = self.denoiser.forward(draw.k, &yk.values, &f)?;
            l_traj += out.iter().zip(&draw.eps).map(|(o, e)| (o - e).powi(2)).sum::<f64>() / out.len() as f64;
            runs.push((out, dtape));
        }
        l_traj /= draws.len() as f64;
        ensure_finite(&[l_goal, l_traj], "sample loss")?;
        let loss = SampleLoss { goal: l_goal, traj: l_traj };

        let Some(wt) = weights else {
            return Ok(loss);
        };

        // Trajectory branch.
        let mut d_logits = vec![0.0; probs.len()];
        let mut goal_touched = false;
        if wt.traj != 0.0 {
            let mut d_f = vec![0.0; f.len()];
            for ((out, dtape), draw) in runs.iter().zip(draws) {
                let c = wt.traj * 2.0 / (out.len() * draws.len()) as f64;
                let d_out: Vec<f64> = out.iter().zip(&draw.eps).map(|(o, e)| c * (o - e)).collect();
                for (a, b) in d_f.iter_mut().zip(self.denoiser.backward(dtape, &d_out)?) {
                    *a += b;
                }
            }
            let d_rows = self.encoder.backward(&etape, &d_f)?;
            if !routing.teacher_forcing && !routing.stop_goal_gradient {
                // Rows hold x - g in their first two entries.
                let s = self.config.traj_scale;
                let mut dg = [0.0; 2];
                for r in &d_rows {
                    dg[0] -= r[0] / s;
                    dg[1] -= r[1] / s;
                }
                let plane = &probs[goal_plane.clone()];
                let total: f64 = plane.iter().sum();
                for (j, p) in plane.iter().enumerate() {
                    let c = grid.index_center(j);
                    let dp = (dg[0] * (c[0] - goal[0]) + dg[1] * (c[1] - goal[1])) / total;
                    d_logits[goal_plane.start + j] += dp * p * (1.0 - p);
                }
                goal_touched = true;
            }
        }

        // Goal branch.
        if wt.goal != 0.0 {
            for ((d, dp), p) in d_logits.iter_mut().zip(&d_probs).zip(&probs) {
                *d += wt.goal * dp * p * (1.0 - p);
            }
            goal_touched = true;
        }
        if goal_touched {
            let d = FeatureMap { data: d_logits, ..logits };
            self.goal_net.backward(&gtape, &d)?;
        }
        Ok(loss)
    }

    /// Goal loss of one window without touching gradients.
    pub fn window_goal_loss(&self, sem: &SemanticGrid, w: &TrajectoryWindow) -> Result<f64> {
        let pred = self.heatmaps(sem, &w.history)?;
        let target = HeatMapStack::from_positions(&w.future, &sem.grid, self.config.sigma_px)?.peak_scaled();
        goal_loss(&pred, &target)
    }

    /// Goals, condition features and `N` sampled futures for one history.
    pub fn predict(
        &self,
        sem: &SemanticGrid,
        history: &[[f64; 2]],
        opts: &PredictOptions,
        rng: &NoiseStream,
    ) -> Result<Prediction> {
        if history.len() != self.history {
            return Err(Error::shape("history", self.history, history.len()));
        }
        let map = self.goal_map(sem, history)?;
        let mut goal_rng = rng.fork(GOAL_KEY);
        let goals = select_goals(&map, &sem.grid, opts.sampler.n, opts.ttst.as_ref(), &mut goal_rng)?;
        let diverse = goals
            .diverse
            .iter()
            .map(|g| self.condition(history, *g, FeatureKind::Diverse))
            .collect::<Result<Vec<_>>>()?;
        let cfg = opts.sampler;
        let out: SampleOutput = match opts.choice {
            SamplerChoice::Tree(scheme) => {
                let common = self.condition(history, goals.common, FeatureKind::Common)?;
                tree_sample_scheme(&self.denoiser, &common, &diverse, &cfg, scheme, &self.schedule, rng)?
            }
            SamplerChoice::Standard(rule) => sample_standard(&self.denoiser, &diverse, &cfg, &self.schedule, rng, rule)?,
        };
        let origin = self.origin(history);
        let trajectories = out
            .trajectories
            .iter()
            .map(|t| t.points().into_iter().map(|q| self.to_world(q, origin)).collect())
            .collect();
        Ok(Prediction {
            trajectories,
            goals,
            evals: out.evals,
        })
    }

    /// Parameters of the goal net.
    pub fn goal_params(&self) -> Vec<(String, &Param)> {
        prefixed("goal", self.goal_net.params())
    }

    /// Parameters of the encoder and denoiser.
    pub fn trajectory_params(&self) -> Vec<(String, &Param)> {
        let mut v = prefixed("encoder", self.encoder.params());
        v.extend(prefixed("denoiser", self.denoiser.params()));
        v
    }
}

impl Parameterized for Model {
    fn params(&self) -> Vec<(String, &Param)> {
        let mut v = self.goal_params();
        v.extend(self.trajectory_params());
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut v = prefixed_mut("goal", self.goal_net.params_mut());
        v.extend(prefixed_mut("encoder", self.encoder.params_mut()));
        v.extend(prefixed_mut("denoiser", self.denoiser.params_mut()));
        v
    }
}

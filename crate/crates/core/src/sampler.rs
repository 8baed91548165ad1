//! Reverse-process step rules and the two-stage tree sampler.
//!
//! The tree sampler runs one shared *trunk* chain conditioned on the common
//! feature, then refines a copy of the trunk output once per diverse feature
//! in the *branch* stage. Denoiser evaluations therefore cost
//! `K_t + N * K_b` instead of `N * K` for independent chains.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::condition::ConditionFeature;
use crate::error::{Error, Result};
use crate::rng::{NoiseStream, TRUNK_KEY};
use crate::schedule::NoiseSchedule;

/// A future trajectory in the diffusion state space, `t_f` rows of `(x, y)`
/// stored row-major, tagged with its diffusion index (0 = clean).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub values: Vec<f64>,
    pub step: usize,
}

impl Trajectory {
    pub fn new(values: Vec<f64>, step: usize) -> Self {
        Self { values, step }
    }

    pub fn from_points(points: &[[f64; 2]], step: usize) -> Self {
        Self::new(points.as_flattened().to_vec(), step)
    }

    pub fn frames(&self) -> usize {
        self.values.len() / 2
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.values.chunks_exact(2).map(|c| [c[0], c[1]]).collect()
    }
}

/// The noise-prediction network as seen by the samplers.
pub trait Denoise {
    /// Number of scalars in one trajectory (`2 * t_f`).
    fn value_len(&self) -> usize;

    fn predict_noise(&self, k: usize, y: &Trajectory, f: &ConditionFeature) -> Result<Vec<f64>>;
}

impl<D: Denoise + ?Sized> Denoise for &D {
    fn value_len(&self) -> usize {
        (**self).value_len()
    }

    fn predict_noise(&self, k: usize, y: &Trajectory, f: &ConditionFeature) -> Result<Vec<f64>> {
        (**self).predict_noise(k, y, f)
    }
}

fn check_len(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(context, expected, got));
    }
    Ok(())
}

fn check_at(y: &Trajectory, k: usize) -> Result<()> {
    if y.step != k {
        return Err(Error::Invalid(format!(
            "trajectory is at diffusion index {} but the step expects {k}",
            y.step
        )));
    }
    Ok(())
}

/// Closed-form forward process: `Y^k = sqrt(ab_k) Y^0 + sqrt(1 - ab_k) eps`.
pub fn forward_noise(y0: &Trajectory, k: usize, eps: &[f64], s: &NoiseSchedule) -> Result<Trajectory> {
    s.check_step(k)?;
    check_len("forward_noise eps", y0.values.len(), eps.len())?;
    let ab = s.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = y0.values.iter().zip(eps).map(|(y, e)| a * y + b * e).collect();
    Ok(Trajectory::new(values, k))
}

/// Deterministic DDPM step (the DDPM posterior mean with the noise term removed).
pub fn d_ddpm_step(yk: &Trajectory, k: usize, eps_pred: &[f64], s: &NoiseSchedule) -> Result<Trajectory> {
    s.check_step(k)?;
    check_at(yk, k)?;
    check_len("d_ddpm_step eps_pred", yk.values.len(), eps_pred.len())?;
    let alpha = s.alpha(k);
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let eps_coef = (1.0 - alpha) / (1.0 - s.alpha_bar(k)).sqrt();
    let values = yk
        .values
        .iter()
        .zip(eps_pred)
        .map(|(y, e)| inv_sqrt_alpha * (y - eps_coef * e))
        .collect();
    Ok(Trajectory::new(values, k - 1))
}

/// Ancestral DDPM step: posterior mean plus `sqrt(posterior_variance) * z`.
pub fn ddpm_step(
    yk: &Trajectory,
    k: usize,
    eps_pred: &[f64],
    z: &[f64],
    s: &NoiseSchedule,
) -> Result<Trajectory> {
    check_len("ddpm_step z", yk.values.len(), z.len())?;
    if k == 1 && z.iter().any(|v| *v != 0.0) {
        return Err(Error::Invalid("ddpm_step at k = 1 requires z = 0".into()));
    }
    let mut out = d_ddpm_step(yk, k, eps_pred, s)?;
    let sigma = s.posterior_variance(k)?.sqrt();
    if sigma > 0.0 {
        for (o, zi) in out.values.iter_mut().zip(z) {
            *o += sigma * zi;
        }
    }
    Ok(out)
}

/// DDIM noise scale for a jump from `k_hi` to `k_lo`:
/// `sqrt(eta * (1 - ab_lo) / (1 - ab_hi) * (1 - ab_hi / ab_lo))`.
///
/// `eta` scales the variance, so `eta = 1` reproduces the DDPM posterior
/// variance for consecutive indices and `eta = 0` is fully deterministic.
pub fn ddim_sigma_jump(s: &NoiseSchedule, k_hi: usize, k_lo: usize, eta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Invalid(format!("eta must lie in [0, 1], got {eta}")));
    }
    s.check_step(k_hi)?;
    if k_lo >= k_hi {
        return Err(Error::Invalid(format!("DDIM jump needs k_lo < k_hi, got {k_lo} >= {k_hi}")));
    }
    let ab_hi = s.alpha_bar(k_hi);
    let ab_lo = s.alpha_bar(k_lo);
    let radicand = eta * (1.0 - ab_lo) / (1.0 - ab_hi) * (1.0 - ab_hi / ab_lo);
    Ok(radicand.max(0.0).sqrt())
}

/// DDIM noise scale for a single-index step `k -> k - 1`.
pub fn ddim_sigma(s: &NoiseSchedule, k: usize, eta: f64) -> Result<f64> {
    s.check_step(k)?;
    ddim_sigma_jump(s, k, k - 1, eta)
}

/// DDIM step from schedule index `k_hi` to `k_lo`. The noise scale is
/// recomputed for this pair of indices.
pub fn ddim_step(
    yk: &Trajectory,
    k_hi: usize,
    k_lo: usize,
    eps_pred: &[f64],
    z: &[f64],
    eta: f64,
    s: &NoiseSchedule,
) -> Result<Trajectory> {
    let sigma = ddim_sigma_jump(s, k_hi, k_lo, eta)?;
    check_at(yk, k_hi)?;
    check_len("ddim_step eps_pred", yk.values.len(), eps_pred.len())?;
    check_len("ddim_step z", yk.values.len(), z.len())?;
    if k_lo == 0 && z.iter().any(|v| *v != 0.0) {
        return Err(Error::Invalid("ddim_step into index 0 requires z = 0".into()));
    }
    let ab_hi = s.alpha_bar(k_hi);
    let ab_lo = s.alpha_bar(k_lo);
    let y_coef = (ab_lo / ab_hi).sqrt();
    let eps_coef = (1.0 - ab_lo - sigma * sigma).max(0.0).sqrt() - (ab_lo * (1.0 - ab_hi) / ab_hi).sqrt();
    let values = yk
        .values
        .iter()
        .zip(eps_pred)
        .zip(z)
        .map(|((y, e), zi)| {
            let v = y_coef * y + eps_coef * e;
            if sigma > 0.0 {
                v + sigma * zi
            } else {
                v
            }
        })
        .collect();
    Ok(Trajectory::new(values, k_lo))
}

/// Number of DDIM steps left for the branch stage after `trunk_steps`
/// d-DDPM steps: `floor((1 - K_t / K) * K_I)`, computed in integers.
pub fn branch_step_count(steps: usize, ddim_steps: usize, trunk_steps: usize) -> usize {
    debug_assert!(trunk_steps <= steps);
    (steps - trunk_steps) * ddim_steps / steps
}

/// `(k_hi, k_lo)` pairs descending from `K - K_t` to 0 in `K_b` uniform
/// strides (floored where the span is not divisible).
pub fn ddim_subsequence(steps: usize, trunk_steps: usize, branch_steps: usize) -> Result<Vec<(usize, usize)>> {
    if trunk_steps > steps {
        return Err(Error::range("K_t", trunk_steps, 0, steps));
    }
    let top = steps - trunk_steps;
    if branch_steps < 1 || branch_steps > top {
        return Err(Error::range("K_b", branch_steps, 1, top));
    }
    let idx = |i: usize| (branch_steps - i) * top / branch_steps;
    Ok((0..branch_steps).map(|i| (idx(i), idx(i + 1))).collect())
}

/// Reverse-process rule used for one chain or one sampler stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    Ddpm,
    DDdpm,
    Ddim,
}

impl StepRule {
    pub fn name(self) -> &'static str {
        match self {
            StepRule::Ddpm => "ddpm",
            StepRule::DDdpm => "d_ddpm",
            StepRule::Ddim => "ddim",
        }
    }
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddpm" => Ok(StepRule::Ddpm),
            "d_ddpm" | "d-ddpm" => Ok(StepRule::DDdpm),
            "ddim" => Ok(StepRule::Ddim),
            other => Err(Error::Invalid(format!("unknown sampling rule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerConfig {
    /// DDPM steps `K`.
    pub steps: usize,
    /// DDIM steps `K_I`.
    pub ddim_steps: usize,
    /// Trunk steps `K_t`.
    pub trunk_steps: usize,
    pub eta: f64,
    /// Number of predictions `N`.
    pub n: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            ddim_steps: 20,
            trunk_steps: 20,
            eta: 1.0,
            n: 20,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, s: &NoiseSchedule) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps != s.steps() {
            return bad(format!("sampler K = {} but schedule has {} steps", self.steps, s.steps()));
        }
        if self.trunk_steps > self.steps {
            return bad(format!("K_t = {} exceeds K = {}", self.trunk_steps, self.steps));
        }
        if self.ddim_steps < 1 || self.ddim_steps > self.steps {
            return bad(format!("K_I = {} must lie in [1, K = {}]", self.ddim_steps, self.steps));
        }
        if self.n < 1 {
            return bad("N must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return bad(format!("eta = {} outside [0, 1]", self.eta));
        }
        Ok(())
    }
}

/// Stage rules for the tree sampler. The trunk must be deterministic, so
/// it is either d-DDPM or DDIM with `eta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeScheme {
    pub trunk: StepRule,
    pub branch: StepRule,
}

impl Default for TreeScheme {
    fn default() -> Self {
        Self {
            trunk: StepRule::DDdpm,
            branch: StepRule::Ddim,
        }
    }
}

impl TreeScheme {
    pub fn name(&self) -> String {
        if *self == Self::default() {
            "ts".to_string()
        } else {
            format!("ts:{}+{}", self.trunk, self.branch)
        }
    }
}

/// One stage of a sampling plan: the rule, its `(k_hi, k_lo)` pairs, and
/// the eta used for DDIM pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub rule: StepRule,
    pub pairs: Vec<(usize, usize)>,
    pub eta: f64,
}

fn consecutive(from: usize, to: usize) -> Vec<(usize, usize)> {
    (to + 1..=from).rev().map(|k| (k, k - 1)).collect()
}

/// Resolved tree-sampling schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct TreePlan {
    pub trunk: Stage,
    pub branch: Stage,
}

impl TreePlan {
    pub fn new(cfg: &SamplerConfig, scheme: TreeScheme, s: &NoiseSchedule) -> Result<Self> {
        cfg.validate(s)?;
        let k = cfg.steps;
        let (trunk, split) = match scheme.trunk {
            StepRule::DDdpm => {
                let pairs = consecutive(k, k - cfg.trunk_steps);
                (Stage { rule: StepRule::DDdpm, pairs, eta: 0.0 }, k - cfg.trunk_steps)
            }
            StepRule::Ddim => {
                if cfg.trunk_steps > cfg.ddim_steps {
                    return Err(Error::Config(format!(
                        "DDIM trunk needs K_t = {} <= K_I = {}",
                        cfg.trunk_steps, cfg.ddim_steps
                    )));
                }
                let all = ddim_subsequence(k, 0, cfg.ddim_steps)?;
                let pairs: Vec<_> = all[..cfg.trunk_steps].to_vec();
                let split = pairs.last().map_or(k, |p| p.1);
                (Stage { rule: StepRule::Ddim, pairs, eta: 0.0 }, split)
            }
            StepRule::Ddpm => {
                return Err(Error::Config("the trunk stage must be deterministic (d_ddpm or ddim)".into()))
            }
        };
        let branch_pairs = match scheme.branch {
            StepRule::Ddim => {
                let kb = match scheme.trunk {
                    StepRule::Ddim => cfg.ddim_steps - cfg.trunk_steps,
                    _ => branch_step_count(k, cfg.ddim_steps, cfg.trunk_steps),
                };
                if kb == 0 {
                    if split != 0 {
                        return Err(Error::Config(format!(
                            "K_b = 0 leaves the trunk output at diffusion index {split}; raise K_I or K_t"
                        )));
                    }
                    Vec::new()
                } else {
                    ddim_subsequence(k, k - split, kb)?
                }
            }
            _ => consecutive(split, 0),
        };
        Ok(Self {
            trunk,
            branch: Stage {
                rule: scheme.branch,
                pairs: branch_pairs,
                eta: cfg.eta,
            },
        })
    }

    pub fn trunk_steps(&self) -> usize {
        self.trunk.pairs.len()
    }

    pub fn branch_steps(&self) -> usize {
        self.branch.pairs.len()
    }

    pub fn evals(&self, n: usize) -> usize {
        self.trunk_steps() + n * self.branch_steps()
    }
}

/// Plan for an independent full chain under `rule`.
pub fn standard_stage(cfg: &SamplerConfig, rule: StepRule, s: &NoiseSchedule) -> Result<Stage> {
    cfg.validate(s)?;
    let pairs = match rule {
        StepRule::Ddim => ddim_subsequence(cfg.steps, 0, cfg.ddim_steps)?,
        _ => consecutive(cfg.steps, 0),
    };
    Ok(Stage { rule, pairs, eta: cfg.eta })
}

/// Denoiser evaluations for `n` independent chains under `rule`.
pub fn standard_evals(cfg: &SamplerConfig, rule: StepRule) -> usize {
    match rule {
        StepRule::Ddim => cfg.n * cfg.ddim_steps,
        _ => cfg.n * cfg.steps,
    }
}

/// Trajectories plus the number of denoiser calls spent producing them.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub trajectories: Vec<Trajectory>,
    pub evals: usize,
}

fn run_stage<D: Denoise>(
    denoiser: &D,
    mut y: Trajectory,
    stage: &Stage,
    f: &ConditionFeature,
    s: &NoiseSchedule,
    stream: &mut NoiseStream,
) -> Result<Trajectory> {
    let len = y.values.len();
    let zeros = vec![0.0; len];
    for &(k_hi, k_lo) in &stage.pairs {
        let eps = denoiser.predict_noise(k_hi, &y, f)?;
        check_len("denoiser output", len, eps.len())?;
        y = match stage.rule {
            StepRule::DDdpm => d_ddpm_step(&y, k_hi, &eps, s)?,
            StepRule::Ddpm => {
                if k_hi > 1 {
                    let z = stream.normals(len);
                    ddpm_step(&y, k_hi, &eps, &z, s)?
                } else {
                    ddpm_step(&y, k_hi, &eps, &zeros, s)?
                }
            }
            StepRule::Ddim => {
                if k_lo > 0 && stage.eta > 0.0 {
                    let z = stream.normals(len);
                    ddim_step(&y, k_hi, k_lo, &eps, &z, stage.eta, s)?
                } else {
                    ddim_step(&y, k_hi, k_lo, &eps, &zeros, stage.eta, s)?
                }
            }
        };
    }
    Ok(y)
}

/// Shared starting noise `Y^K`, drawn from the trunk child of `rng`.
pub fn start_noise(len: usize, steps: usize, rng: &NoiseStream) -> Trajectory {
    Trajectory::new(rng.fork(TRUNK_KEY).normals(len), steps)
}

/// Tree sampling with the default scheme (d-DDPM trunk, DDIM branches).
pub fn tree_sample<D: Denoise>(
    denoiser: &D,
    f_common: &ConditionFeature,
    f_diverse: &[ConditionFeature],
    cfg: &SamplerConfig,
    s: &NoiseSchedule,
    rng: &NoiseStream,
) -> Result<SampleOutput> {
    tree_sample_scheme(denoiser, f_common, f_diverse, cfg, TreeScheme::default(), s, rng)
}

/// Tree sampling with explicit stage rules. Branch `n` draws its noise from
/// `rng.fork(n)`, so outputs do not depend on branch order.
pub fn tree_sample_scheme<D: Denoise>(
    denoiser: &D,
    f_common: &ConditionFeature,
    f_diverse: &[ConditionFeature],
    cfg: &SamplerConfig,
    scheme: TreeScheme,
    s: &NoiseSchedule,
    rng: &NoiseStream,
) -> Result<SampleOutput> {
    if f_diverse.is_empty() {
        return Err(Error::Invalid("tree sampling needs at least one diverse feature".into()));
    }
    let plan = TreePlan::new(&SamplerConfig { n: f_diverse.len(), ..*cfg }, scheme, s)?;
    let start = start_noise(denoiser.value_len(), cfg.steps, rng);
    let mut trunk_stream = rng.fork(TRUNK_KEY);
    let trunk = run_stage(denoiser, start, &plan.trunk, f_common, s, &mut trunk_stream)?;

    let trajectories = f_diverse
        .iter()
        .enumerate()
        .map(|(n, f)| {
            let mut stream = rng.fork(n as u64);
            run_stage(denoiser, trunk.clone(), &plan.branch, f, s, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleOutput {
        trajectories,
        evals: plan.evals(f_diverse.len()),
    })
}

/// `N` independent full reverse chains under one rule, all starting from the
/// shared `Y^K`. Chain `n` draws its step noise from `rng.fork(n)`.
pub fn sample_standard<D: Denoise>(
    denoiser: &D,
    features: &[ConditionFeature],
    cfg: &SamplerConfig,
    s: &NoiseSchedule,
    rng: &NoiseStream,
    rule: StepRule,
) -> Result<SampleOutput> {
    if features.is_empty() {
        return Err(Error::Invalid("sampling needs at least one feature".into()));
    }
    let stage = standard_stage(cfg, rule, s)?;
    let start = start_noise(denoiser.value_len(), cfg.steps, rng);
    let trajectories = features
        .iter()
        .enumerate()
        .map(|(n, f)| {
            let mut stream = rng.fork(n as u64);
            run_stage(denoiser, start.clone(), &stage, f, s, &mut stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleOutput {
        evals: stage.pairs.len() * features.len(),
        trajectories,
    })
}

//! Best-of-N displacement metrics and the sampler bench.

use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use crate::data::TrajectoryWindow;
use crate::error::{Error, Result};
use crate::goal::{SemanticGrid, TtstConfig};
use crate::model::{Model, PredictOptions, SamplerChoice};
use crate::rng::NoiseStream;
use crate::sampler::{standard_evals, SamplerConfig, StepRule, TreePlan, TreeScheme};
use crate::schedule::NoiseSchedule;

fn check_shapes(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape("trajectory frames", gt.len(), pred.len()));
    }
    if gt.is_empty() {
        return Err(Error::Invalid("empty trajectory".into()));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    (dx * dx + dy * dy).sqrt()
}

/// Mean Euclidean distance over frames.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / gt.len() as f64)
}

/// Euclidean distance at the final frame.
pub fn fde(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    check_shapes(pred, gt)?;
    Ok(dist(*pred.last().unwrap(), *gt.last().unwrap()))
}

/// Minimum ADE and minimum FDE over the set, each minimized on its own.
pub fn best_of_n(preds: &[Vec<[f64; 2]>], gt: &[[f64; 2]]) -> Result<(f64, f64)> {
    if preds.is_empty() {
        return Err(Error::Invalid("best-of-N over an empty prediction set".into()));
    }
    let mut best = (f64::INFINITY, f64::INFINITY);
    for p in preds {
        best.0 = best.0.min(ade(p, gt)?);
        best.1 = best.1.min(fde(p, gt)?);
    }
    Ok(best)
}

/// `N` forecasts with the sampler that produced them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionSet {
    pub scene: String,
    pub agent: i64,
    pub frame_base: i64,
    pub sampler: String,
    pub steps: usize,
    pub ddim_steps: usize,
    pub trunk_steps: usize,
    pub eta: f64,
    pub evals: usize,
    pub wall_ms: f64,
    pub goals: Vec<[f64; 2]>,
    pub common_goal: [f64; 2],
    pub trajectories: Vec<Vec<[f64; 2]>>,
}

/// Forecast every window. Window `i` samples from `NoiseStream::new(seed).fork(i)`.
pub fn predict_windows(
    model: &Model,
    grids: &[&SemanticGrid],
    windows: &[TrajectoryWindow],
    opts: &PredictOptions,
    seed: u64,
) -> Result<Vec<PredictionSet>> {
    if grids.len() != windows.len() {
        return Err(Error::shape("grids per window", windows.len(), grids.len()));
    }
    let base = NoiseStream::new(seed);
    windows
        .iter()
        .zip(grids)
        .enumerate()
        .map(|(i, (w, g))| {
            let t0 = Instant::now();
            let p = model.predict(g, &w.history, opts, &base.fork(i as u64))?;
            let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            Ok(PredictionSet {
                scene: w.scene.clone(),
                agent: w.agent,
                frame_base: w.frame_base,
                sampler: opts.choice.name(),
                steps: opts.sampler.steps,
                ddim_steps: opts.sampler.ddim_steps,
                // Standard chains have no trunk.
                trunk_steps: match opts.choice {
                    SamplerChoice::Tree(_) => opts.sampler.trunk_steps,
                    SamplerChoice::Standard(_) => 0,
                },
                eta: opts.sampler.eta,
                evals: p.evals,
                wall_ms,
                goals: p.goals.diverse,
                common_goal: p.goals.common,
                trajectories: p.trajectories,
            })
        })
        .collect()
}

/// Mean best-of-N ADE and FDE over windows.
pub fn mean_best_of_n(preds: &[PredictionSet], windows: &[TrajectoryWindow]) -> Result<(f64, f64)> {
    if preds.len() != windows.len() || preds.is_empty() {
        return Err(Error::shape("prediction sets", windows.len(), preds.len()));
    }
    let mut sum = (0.0, 0.0);
    for (p, w) in preds.iter().zip(windows) {
        let (a, f) = best_of_n(&p.trajectories, &w.future)?;
        sum.0 += a;
        sum.1 += f;
    }
    let n = preds.len() as f64;
    Ok((sum.0 / n, sum.1 / n))
}

/// Denoiser evaluations a sampler spends per agent.
pub fn closed_form_evals(cfg: &SamplerConfig, choice: SamplerChoice, s: &NoiseSchedule) -> Result<usize> {
    Ok(match choice {
        SamplerChoice::Tree(scheme) => TreePlan::new(cfg, scheme, s)?.evals(cfg.n),
        SamplerChoice::Standard(rule) => {
            cfg.validate(s)?;
            standard_evals(cfg, rule)
        }
    })
}

/// One bench configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchCase {
    pub choice: SamplerChoice,
    pub sampler: SamplerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub sampler: String,
    pub steps: usize,
    pub ddim_steps: usize,
    pub trunk_steps: usize,
    pub eta: f64,
    pub n: usize,
    pub ade: f64,
    pub fde: f64,
    pub evals: usize,
    /// Median wall time per agent, milliseconds.
    pub ms: f64,
}

pub const BENCH_HEADER: &str = "sampler,K,K_I,K_t,eta,N,ade,fde,evals,ms";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{},{:.3}",
            self.sampler, self.steps, self.ddim_steps, self.trunk_steps, self.eta, self.n, self.ade, self.fde, self.evals, self.ms
        )
    }
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Full-chain DDPM and DDIM, tree sampling for each trunk length, and the
/// stage-combination schemes at the base trunk length.
pub fn default_bench_cases(base: &SamplerConfig, trunk_lengths: &[usize]) -> Vec<BenchCase> {
    let mut cases = vec![
        BenchCase {
            choice: SamplerChoice::Standard(StepRule::Ddpm),
            sampler: SamplerConfig { trunk_steps: 0, ..*base },
        },
        BenchCase {
            choice: SamplerChoice::Standard(StepRule::Ddim),
            sampler: SamplerConfig { trunk_steps: 0, ..*base },
        },
    ];
    for &kt in trunk_lengths {
        cases.push(BenchCase {
            choice: SamplerChoice::Tree(TreeScheme::default()),
            sampler: SamplerConfig { trunk_steps: kt, ..*base },
        });
    }
    for trunk in [StepRule::DDdpm, StepRule::Ddim] {
        for branch in [StepRule::Ddpm, StepRule::DDdpm, StepRule::Ddim] {
            let scheme = TreeScheme { trunk, branch };
            if scheme != TreeScheme::default() {
                cases.push(BenchCase {
                    choice: SamplerChoice::Tree(scheme),
                    sampler: *base,
                });
            }
        }
    }
    cases
}

/// Runs each case over `windows`: one warmup pass, then `repeats` timed
/// passes whose per-agent median is reported. Cases that the sampler
/// rejects for their configuration are skipped with a warning.
pub fn bench_samplers(
    model: &Model,
    grids: &[&SemanticGrid],
    windows: &[TrajectoryWindow],
    cases: &[BenchCase],
    ttst: Option<TtstConfig>,
    repeats: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if windows.is_empty() {
        return Err(Error::Invalid("bench needs at least one window".into()));
    }
    let repeats = repeats.max(5);
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let evals = match closed_form_evals(&case.sampler, case.choice, &model.schedule) {
            Ok(e) => e,
            Err(e) => {
                tracing::warn!("skipping bench case {}: {e}", case.choice.name());
                continue;
            }
        };
        let opts = PredictOptions {
            sampler: case.sampler,
            choice: case.choice,
            ttst,
        };
        let preds = predict_windows(model, grids, windows, &opts, seed)?;
        if let Some(p) = preds.iter().find(|p| p.evals != evals) {
            return Err(Error::Invalid(format!("sampler reported {} evals, closed form gives {evals}", p.evals)));
        }
        let (ade, fde) = mean_best_of_n(&preds, windows)?;
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t0 = Instant::now();
            predict_windows(model, grids, windows, &opts, seed)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3 / windows.len() as f64);
        }
        times.sort_by(f64::total_cmp);
        rows.push(BenchRow {
            sampler: case.choice.name(),
            steps: case.sampler.steps,
            ddim_steps: case.sampler.ddim_steps,
            trunk_steps: case.sampler.trunk_steps,
            eta: case.sampler.eta,
            n: case.sampler.n,
            ade,
            fde,
            evals,
            ms: times[times.len() / 2],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_examples() {
        let gt = [[0.0, 0.0], [1.0, 1.0]];
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);
        let shifted = [[1.0, 0.0], [2.0, 1.0]];
        assert_eq!(ade(&shifted, &gt).unwrap(), 1.0);
        assert_eq!(fde(&shifted, &gt).unwrap(), 1.0);
        let p = [[0.0, 0.0], [4.0, 5.0]];
        assert_eq!(ade(&p, &gt).unwrap(), 2.5);
        assert_eq!(fde(&p, &gt).unwrap(), 5.0);
        assert!(ade(&p[..1], &gt).is_err());
        assert!(best_of_n(&[], &gt).is_err());
    }

    #[test]
    fn independent_minimization() {
        let gt = [[0.0, 0.0], [0.0, 0.0]];
        // First is better on average, second at the final frame.
        let a = vec![[0.0, 0.0], [2.0, 0.0]];
        let b = vec![[1.5, 0.0], [1.5, 0.0]];
        assert_eq!(best_of_n(&[a, b], &gt).unwrap(), (1.0, 1.5));
    }

    #[test]
    fn bench_case_matrix() {
        let cases = default_bench_cases(&SamplerConfig::default(), &[5, 20, 50]);
        let names: Vec<String> = cases.iter().map(|c| c.choice.name()).collect();
        assert_eq!(&names[..5], &["ddpm", "ddim", "ts", "ts", "ts"]);
        assert_eq!(cases.len(), 10);
        let s = NoiseSchedule::linear(100, 1e-4, 0.05).unwrap();
        let evals: Vec<usize> = cases[..5]
            .iter()
            .map(|c| closed_form_evals(&c.sampler, c.choice, &s).unwrap())
            .collect();
        assert_eq!(evals, vec![2000, 400, 5 + 20 * 19, 340, 250]);
    }
}

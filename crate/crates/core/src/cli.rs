//! Command-line front end.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tracing::{info, warn};

use crate::config::RunConfig;
use crate::data::{generate_synthetic, leave_one_scene_out, read_dataset, write_scene, SceneData, TrajectoryWindow};
use crate::error::{Error, Result};
use crate::eval::{bench_csv, bench_samplers, best_of_n, default_bench_cases, mean_best_of_n, predict_windows};
use crate::goal::SemanticGrid;
use crate::model::{Model, PredictOptions};
use crate::nn::{load_checkpoint, save_checkpoint, Parameterized};
use crate::rng::NoiseStream;
use crate::train::{metrics_csv, Trainer, TrainingSet};

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal or I/O error
  2  invalid command line
  3  invalid configuration (unknown key, bad value)
  4  missing file or unknown scene
  5  checkpoint does not match the configured model
  6  malformed data file
  7  non-finite value during training or sampling";

#[derive(Debug, Parser)]
#[command(name = "trajlab", version, about = "Goal-conditioned diffusion trajectory forecasting with tree sampling", after_help = EXIT_CODES)]
pub struct Cli {
    /// Run configuration file; built-in defaults apply to omitted keys.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set sampler.K_t=0`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corridor dataset into `data.dir`.
    SynthData,
    /// Train on every scene but `data.held_out`; writes checkpoint.tlck and metrics.csv.
    Train,
    /// Forecast a split; writes predictions.json.
    Predict {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Best-of-N ADE/FDE on a split; writes eval.csv.
    Eval {
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// Sampler cost and accuracy table; writes bench.csv.
    Bench,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData => "synth-data",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::Eval { .. } => "eval",
            Command::Bench => "bench",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::OutOfRange { .. } | Error::Invalid(_) => 3,
        Error::MissingFile(_) | Error::UnknownScene(_) => 4,
        Error::Checkpoint(_) | Error::Shape { .. } => 5,
        Error::Parse { .. } | Error::Json(_) => 6,
        Error::NonFinite(_) => 7,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 4,
        Error::Io(_) => 1,
    }
}

pub const CHECKPOINT_FILE: &str = "checkpoint.tlck";

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let snapshot = cfg.output_dir.join(format!("resolved_{}.toml", cli.command.name()));
    fs::write(&snapshot, cfg.to_toml()?)?;
    match &cli.command {
        Command::SynthData => synth_data(&cfg),
        Command::Train => train(&cfg),
        Command::Predict { split } => predict(&cfg, *split),
        Command::Eval { split } => evaluate(&cfg, *split),
        Command::Bench => bench(&cfg),
    }
}

fn synth_data(cfg: &RunConfig) -> Result<()> {
    let syn = &cfg.synthetic;
    let root = NoiseStream::new(cfg.seed).fork(10);
    for i in 0..syn.scenes {
        let s = generate_synthetic(&syn.scene, syn.agents_per_scene, &mut root.fork(i as u64))?;
        let scene = SceneData {
            name: format!("corridor_{i}"),
            tracks: s.tracks,
            semantic: s.semantic,
            anchors: Some(s.anchors),
        };
        write_scene(&cfg.data.dir, &scene)?;
    }
    info!("wrote {} scenes to {}", syn.scenes, cfg.data.dir.display());
    Ok(())
}

/// Windows of one split with the semantic grid of each window's scene.
struct SplitData {
    grids: BTreeMap<String, SemanticGrid>,
    windows: Vec<TrajectoryWindow>,
}

impl SplitData {
    fn grid_refs(&self) -> Vec<&SemanticGrid> {
        self.windows.iter().map(|w| &self.grids[&w.scene]).collect()
    }

    fn training_set(&self) -> TrainingSet {
        let mut set = TrainingSet::default();
        for (name, grid) in &self.grids {
            set.push_scene(grid.clone(), self.windows.iter().filter(|w| &w.scene == name).cloned());
        }
        set
    }
}

fn load_split(cfg: &RunConfig, split: Split) -> Result<SplitData> {
    let mut scenes = read_dataset(&cfg.data.dir)?;
    let d = &cfg.data;
    let mut grids = BTreeMap::new();
    let mut per_scene = Vec::new();
    for s in &mut scenes {
        if d.scale != 1.0 {
            for t in &mut s.tracks {
                for p in &mut t.points {
                    p[0] *= d.scale;
                    p[1] *= d.scale;
                }
            }
        }
        let mut sw = s.windows(d.history, d.future, d.stride)?;
        let before = sw.windows.len();
        let g = s.semantic.grid;
        sw.windows
            .retain(|w| w.history.iter().chain(&w.future).all(|p| g.contains(*p)));
        if sw.windows.len() < before {
            warn!("{}: dropped {} windows leaving the semantic grid", s.name, before - sw.windows.len());
        }
        grids.insert(s.name.clone(), s.semantic.clone());
        per_scene.push(sw);
    }
    let (train, test) = leave_one_scene_out(&per_scene, &d.held_out)?;
    let windows = match split {
        Split::Train => train,
        Split::Test => test,
    };
    Ok(SplitData { grids, windows })
}

fn build_model(cfg: &RunConfig) -> Result<Model> {
    let mut init = NoiseStream::new(cfg.seed).fork(1);
    Model::new(&cfg.model, cfg.data.history, cfg.data.future, cfg.schedule.build()?, &mut init)
}

fn load_model(cfg: &RunConfig) -> Result<Model> {
    let path = cfg.output_dir.join(CHECKPOINT_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let mut model = build_model(cfg)?;
    model.load_from(&load_checkpoint(&path)?)?;
    Ok(model)
}

fn train(cfg: &RunConfig) -> Result<()> {
    let data = load_split(cfg, Split::Train)?.training_set();
    if data.is_empty() {
        return Err(Error::Invalid("no training windows".into()));
    }
    let mut model = build_model(cfg)?;
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let mut rng = NoiseStream::new(cfg.seed).fork(2);
    info!("training on {} windows, {} parameters", data.len(), model.param_count());
    let mut rows = Vec::with_capacity(cfg.train.epochs);
    let metrics_path = cfg.output_dir.join("metrics.csv");
    for _ in 0..cfg.train.epochs {
        let m = trainer.train_epoch(&mut model, &data, &mut rng)?;
        info!("epoch {} l_goal {:.5} l_traj {:.5} lr {:.3e}", m.epoch, m.l_goal, m.l_traj, m.lr);
        rows.push(m);
        fs::write(&metrics_path, metrics_csv(&rows))?;
    }
    fs::write(&metrics_path, metrics_csv(&rows))?;
    save_checkpoint(&model.to_checkpoint(), &cfg.output_dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn limited(windows: Vec<TrajectoryWindow>, max: usize) -> Vec<TrajectoryWindow> {
    if max == 0 || windows.len() <= max {
        windows
    } else {
        windows.into_iter().take(max).collect()
    }
}

fn predict_options(cfg: &RunConfig) -> Result<PredictOptions> {
    Ok(PredictOptions {
        sampler: cfg.sampler.sampler_config(cfg.schedule.steps),
        choice: cfg.sampler.choice()?,
        ttst: cfg.sampler.ttst_config(),
    })
}

fn predict(cfg: &RunConfig, split: Split) -> Result<()> {
    let model = load_model(cfg)?;
    let mut data = load_split(cfg, split)?;
    data.windows = limited(std::mem::take(&mut data.windows), cfg.eval.max_windows);
    let preds = predict_windows(&model, &data.grid_refs(), &data.windows, &predict_options(cfg)?, cfg.seed)?;
    let path = cfg.output_dir.join("predictions.json");
    fs::write(&path, serde_json::to_string_pretty(&preds)? + "\n")?;
    info!("wrote {} prediction sets to {}", preds.len(), path.display());
    Ok(())
}

fn evaluate(cfg: &RunConfig, split: Split) -> Result<()> {
    let model = load_model(cfg)?;
    let mut data = load_split(cfg, split)?;
    data.windows = limited(std::mem::take(&mut data.windows), cfg.eval.max_windows);
    let preds = predict_windows(&model, &data.grid_refs(), &data.windows, &predict_options(cfg)?, cfg.seed)?;
    let mut csv = String::from("scene,agent,frame_base,ade,fde\n");
    for (p, w) in preds.iter().zip(&data.windows) {
        let (a, f) = best_of_n(&p.trajectories, &w.future)?;
        csv.push_str(&format!("{},{},{},{:.6},{:.6}\n", w.scene, w.agent, w.frame_base, a, f));
    }
    let (ade, fde) = mean_best_of_n(&preds, &data.windows)?;
    csv.push_str(&format!("ALL,,,{ade:.6},{fde:.6}\n"));
    fs::write(cfg.output_dir.join("eval.csv"), csv)?;
    println!("{} windows, sampler {}, N = {}: ADE {ade:.4} FDE {fde:.4}", preds.len(), cfg.sampler.rule, cfg.sampler.n);
    Ok(())
}

fn bench(cfg: &RunConfig) -> Result<()> {
    let model = load_model(cfg)?;
    let mut data = load_split(cfg, Split::Test)?;
    data.windows = limited(std::mem::take(&mut data.windows), cfg.eval.bench_windows);
    let base = cfg.sampler.sampler_config(cfg.schedule.steps);
    let cases = default_bench_cases(&base, &cfg.eval.bench_trunk_steps);
    let rows = bench_samplers(
        &model,
        &data.grid_refs(),
        &data.windows,
        &cases,
        cfg.sampler.ttst_config(),
        cfg.eval.bench_repeats,
        cfg.seed,
    )?;
    let csv = bench_csv(&rows);
    fs::write(cfg.output_dir.join("bench.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

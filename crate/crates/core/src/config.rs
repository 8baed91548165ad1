//! Run configuration: a sectioned `key = value` file (TOML syntax).
//!
//! Every field has a default and unknown keys are rejected. Paper-scale
//! reference values: K = 100, K_I = 20, K_t = 20, eta in {0, 1},
//! lambda = 20 (ETH/UCY) or 40 (SDD), N = 20, TTST samples = 1000,
//! t_h = 8, t_f = 12, batch 32, 270 epochs, feature width 256.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::goal::TtstConfig;
use crate::model::{ModelConfig, SamplerChoice};
use crate::sampler::SamplerConfig;
use crate::schedule::NoiseSchedule;
use crate::train::TrainConfig;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "TRAJLAB_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    #[serde(rename = "K")]
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.05,
        }
    }
}

impl ScheduleSection {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// `ts`, `ts:<trunk>+<branch>`, `ddpm`, `d_ddpm` or `ddim`.
    pub rule: String,
    #[serde(rename = "K_I")]
    pub ddim_steps: usize,
    #[serde(rename = "K_t")]
    pub trunk_steps: usize,
    pub eta: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub ttst: bool,
    pub ttst_samples: usize,
    pub ttst_iterations: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            rule: "ts".into(),
            ddim_steps: 20,
            trunk_steps: 20,
            eta: 0.0,
            n: 20,
            ttst: true,
            ttst_samples: 1000,
            ttst_iterations: 20,
        }
    }
}

impl SamplerSection {
    pub fn choice(&self) -> Result<SamplerChoice> {
        self.rule.parse().map_err(|e: Error| Error::Config(e.to_string()))
    }

    pub fn sampler_config(&self, steps: usize) -> SamplerConfig {
        SamplerConfig {
            steps,
            ddim_steps: self.ddim_steps,
            trunk_steps: self.trunk_steps,
            eta: self.eta,
            n: self.n,
        }
    }

    pub fn ttst_config(&self) -> Option<TtstConfig> {
        self.ttst.then_some(TtstConfig {
            samples: self.ttst_samples,
            cluster: true,
            iterations: self.ttst_iterations,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub dir: PathBuf,
    /// History frames `t_h`.
    pub history: usize,
    /// Future frames `t_f`.
    pub future: usize,
    pub stride: usize,
    pub held_out: String,
    /// Multiplier converting file coordinates to meters.
    pub scale: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/corridor"),
            history: 8,
            future: 12,
            stride: 1,
            held_out: "corridor_3".into(),
            scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub scenes: usize,
    pub agents_per_scene: usize,
    pub scene: SyntheticConfig,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        Self {
            scenes: 4,
            agents_per_scene: 500,
            scene: SyntheticConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Trunk lengths swept by the bench.
    pub bench_trunk_steps: Vec<usize>,
    pub bench_repeats: usize,
    /// Windows used per bench row; 0 means all.
    pub bench_windows: usize,
    /// Windows used by predict and eval; 0 means all.
    pub max_windows: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            bench_trunk_steps: vec![5, 20, 50],
            bench_repeats: 5,
            bench_windows: 20,
            max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub schedule: ScheduleSection,
    pub sampler: SamplerSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSection,
    pub synthetic: SyntheticSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            schedule: ScheduleSection::default(),
            sampler: SamplerSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataSection::default(),
            synthetic: SyntheticSection::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a parsed table.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not of the form section.key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key '{key}'")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}': '{part}' is not a section")))?;
    }
    node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses config text, applies overrides in order, then the seed from
    /// the environment if `env_seed` holds one.
    pub fn resolve(text: &str, overrides: &[String], env_seed: Option<&str>) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(s) = env_seed {
            cfg.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} = '{s}' is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (defaults only when `None`) and resolves overrides and
    /// the `TRAJLAB_SEED` environment variable.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) if !p.exists() => return Err(Error::MissingFile(p.to_path_buf())),
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        let env = std::env::var(SEED_ENV).ok();
        Self::resolve(&text, overrides, env.as_deref())
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.schedule.build()?;
        self.sampler.choice()?;
        self.sampler.sampler_config(s.steps()).validate(&s)?;
        self.train.validate()?;
        if self.data.history < 2 || self.data.future < 1 || self.data.stride < 1 {
            return Err(Error::Config("data.history >= 2, data.future >= 1 and data.stride >= 1 required".into()));
        }
        if !(self.data.scale > 0.0) {
            return Err(Error::Config("data.scale must be positive".into()));
        }
        if self.sampler.ttst && self.sampler.ttst_samples < self.sampler.n {
            return Err(Error::Config("sampler.ttst_samples must be at least sampler.N".into()));
        }
        Ok(())
    }

    /// The resolved snapshot; feeding it back through [`RunConfig::resolve`]
    /// yields an equal config.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::resolve("", &[], None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::resolve(&text, &[], None).unwrap(), cfg);
    }

    #[test]
    fn overrides_and_env_seed() {
        let cfg = RunConfig::resolve(
            "seed = 3\n[sampler]\nK_t = 5\n",
            &["sampler.rule=ddim".into(), "train.lambda=40".into(), "synthetic.scene.speed_std=0.0".into()],
            Some("11"),
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.sampler.trunk_steps, 5);
        assert_eq!(cfg.sampler.rule, "ddim");
        assert_eq!(cfg.train.lambda, 40.0);
        assert_eq!(cfg.synthetic.scene.speed_std, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::resolve("[sampler]\nKt = 3\n", &[], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::resolve("", &["bogus.key=1".into()], None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::resolve("", &["sampler.rule=fast".into()], None), Err(Error::Config(_))));
        assert!(RunConfig::resolve("", &[], Some("x")).is_err());
    }
}

//! Experiment settings gathered from an optional TOML file and command-line
//! flags. Every file key has a flag of the same name; flags win.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pfrc_core::experiment::{FilterSpec, ReplicateConfig};
use pfrc_core::models::LgssParams;
use pfrc_core::thresholds::{load_schedule, ThresholdSchedule};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Lgss,
    Coin,
    Hmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    Bpf,
    Pfrc,
    Alive,
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    /// State-space model
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Number of observation steps T when simulating data
    #[arg(long)]
    pub horizon: Option<usize>,
    /// LGSS transition coefficient
    #[arg(long)]
    pub a: Option<f64>,
    /// LGSS transition noise variance
    #[arg(long)]
    pub q: Option<f64>,
    /// LGSS observation noise variance
    #[arg(long)]
    pub r: Option<f64>,
    /// LGSS initial mean
    #[arg(long)]
    pub m0: Option<f64>,
    /// LGSS initial variance
    #[arg(long)]
    pub v0: Option<f64>,
    /// Probability that a simulated LGSS observation is an outlier
    #[arg(long)]
    pub outlier_prob: Option<f64>,
    /// Variance of the outlier component
    #[arg(long)]
    pub outlier_var: Option<f64>,
    /// JSON file with `initial`, `transition` and `emission` tables
    #[arg(long)]
    pub hmm: Option<PathBuf>,
    /// Observation CSV; simulated from the model when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed for simulated data, defaults to `--seed`
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub filter: Option<FilterKind>,
    /// Particle count N
    #[arg(short = 'n', long)]
    pub particles: Option<usize>,
    /// Replicate count M
    #[arg(short = 'm', long)]
    pub replicates: Option<usize>,
    /// Constant rejection threshold c
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Per-sweep quantile threshold (biased)
    #[arg(long)]
    pub quantile: Option<f64>,
    /// Per-sweep min/mean/max mixture weights `p1,p2,p3` (biased)
    #[arg(long)]
    pub mma: Option<String>,
    /// Threshold schedule file written by `pilot`
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicates, 0 for all cores
    #[arg(long)]
    pub threads: Option<usize>,
    /// Abort a sweep after this many propagations in one step
    #[arg(long)]
    pub max_propagations: Option<u64>,
    /// Particle count of the bootstrap filter that rho is relative to
    #[arg(long)]
    pub rho_baseline_n: Option<usize>,
    /// Output file, or directory for `experiment`
    #[arg(short = 'o', long)]
    pub output: Option<PathBuf>,
    /// Latent-state CSV written by `simulate`
    #[arg(long)]
    pub states: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($field:ident),* $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field; } )*
    };
}

impl Settings {
    /// Fill every unset field from `file`.
    pub fn overlay(mut self, file: Settings) -> Settings {
        overlay!(self, file;
            model, horizon, a, q, r, m0, v0, outlier_prob, outlier_var, hmm,
            data, data_seed, filter, particles, replicates, threshold, quantile,
            mma, schedule, seed, threads, max_propagations, rho_baseline_n,
            output, states,
        );
        self
    }

    pub fn load(config: Option<&Path>, flags: Settings) -> Result<Settings, CliError> {
        let Some(path) = config else {
            return Ok(flags);
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let file: Settings = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(flags.overlay(file))
    }

    pub fn model(&self) -> ModelKind {
        self.model.unwrap_or(ModelKind::Lgss)
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::Config("--seed is required".into()))
    }

    pub fn require<T: Copy>(&self, value: Option<T>, flag: &str) -> Result<T, CliError> {
        value.ok_or_else(|| CliError::Config(format!("--{flag} is required")))
    }

    pub fn lgss_params(&self) -> LgssParams {
        let d = LgssParams::default();
        LgssParams {
            a: self.a.unwrap_or(d.a),
            q: self.q.unwrap_or(d.q),
            r: self.r.unwrap_or(d.r),
            m0: self.m0.unwrap_or(d.m0),
            v0: self.v0.unwrap_or(d.v0),
            outlier_prob: self.outlier_prob.unwrap_or(d.outlier_prob),
            outlier_var: self.outlier_var.unwrap_or(d.outlier_var),
        }
    }

    /// The threshold schedule named by exactly one of the threshold flags.
    pub fn schedule(&self) -> Result<Option<ThresholdSchedule>, CliError> {
        let mut found = Vec::new();
        if let Some(c) = self.threshold {
            found.push(ThresholdSchedule::Constant(c));
        }
        if let Some(q) = self.quantile {
            found.push(ThresholdSchedule::DynamicQuantile(q));
        }
        if let Some(text) = &self.mma {
            found.push(ThresholdSchedule::DynamicWeightedMma(parse_mma(text)?));
        }
        if let Some(path) = &self.schedule {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            found.push(load_schedule(&text)?);
        }
        if found.len() > 1 {
            return Err(CliError::Config(
                "give only one of --threshold, --quantile, --mma, --schedule".into(),
            ));
        }
        let schedule = found.pop();
        if let Some(s) = &schedule {
            s.validate()?;
        }
        Ok(schedule)
    }

    pub fn filter_spec(&self) -> Result<FilterSpec, CliError> {
        let schedule = self.schedule()?;
        match (self.require(self.filter, "filter")?, schedule) {
            (FilterKind::Pfrc, Some(s)) => Ok(FilterSpec::Pfrc(s)),
            (FilterKind::Pfrc, None) => Err(CliError::Config(
                "pfrc needs --threshold, --quantile, --mma or --schedule".into(),
            )),
            (FilterKind::Bpf, None) => Ok(FilterSpec::Bpf),
            (FilterKind::Alive, None) => Ok(FilterSpec::Alive),
            (_, Some(_)) => Err(CliError::Config("threshold options apply only to pfrc".into())),
        }
    }

    pub fn replicate_config(&self) -> Result<ReplicateConfig, CliError> {
        let mut config = ReplicateConfig::new(
            self.filter_spec()?,
            self.require(self.particles, "particles")?,
            self.require(self.replicates, "replicates")?,
            self.require_seed()?,
        );
        config.threads = self.threads.unwrap_or(0);
        config.max_propagations_per_step = self.max_propagations;
        config.rho_baseline_particles = self.rho_baseline_n;
        config.validate()?;
        Ok(config)
    }
}

fn parse_mma(text: &str) -> Result<[f64; 3], CliError> {
    let bad = || CliError::Config(format!("--mma expects three comma-separated weights, got `{text}`"));
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    parts.try_into().map_err(|_| bad())
}

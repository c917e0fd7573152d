//! Replicate harness: run `M` independent sweeps, collect `Ẑ_m`, and reduce
//! them to the cross-replicate summary statistics (ESS across runs, relative
//! propagation cost ρ, variance of `log Ẑ`).
//!
//! Replicate `m` always uses `RandomStream::new(seed, m)`, and statistics are
//! computed from the records in replicate order, so results do not depend on
//! the number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::filters::{default_propagation_budget, run_alive, run_bpf, run_pfrc, FilterError, SweepResult};
use crate::models::{coin_model, Flip};
use crate::oracles::{coin_exact_expectation, coin_series_expectation, CoinExpectations, OracleError};
use crate::ssm::{RandomStream, StateSpaceModel};
use crate::thresholds::ThresholdSchedule;

/// Stream id reserved for dataset simulation, disjoint from replicate ids.
pub const DATA_STREAM: u64 = u64::MAX;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("all estimates are zero")]
    AllZeroEstimates,
    #[error("need at least two finite log estimates, got {0}")]
    InsufficientData(usize),
    #[error("non-finite log estimate {0}")]
    NonFiniteEstimate(f64),
    #[error("propagation baseline must be positive")]
    ZeroBaseline,
    #[error("no replicate records")]
    EmptyReplicates,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterSpec {
    Bpf,
    Pfrc(ThresholdSchedule),
    Alive,
}

impl FilterSpec {
    pub fn id(&self) -> &'static str {
        match self {
            FilterSpec::Bpf => "bpf",
            FilterSpec::Pfrc(_) => "pfrc",
            FilterSpec::Alive => "alive",
        }
    }

    pub fn threshold_label(&self) -> String {
        match self {
            FilterSpec::Pfrc(s) => s.label(),
            _ => "-".to_string(),
        }
    }

    pub fn is_biased(&self) -> bool {
        matches!(self, FilterSpec::Pfrc(s) if !s.is_unbiased())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateConfig {
    pub filter: FilterSpec,
    pub particles: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; `0` lets the pool decide.
    pub threads: usize,
    /// Defaults to `1000 · (N + 1)`.
    pub max_propagations_per_step: Option<u64>,
    /// Particle count of the bootstrap filter that ρ is measured against.
    /// Defaults to `particles`.
    pub rho_baseline_particles: Option<usize>,
}

impl ReplicateConfig {
    pub fn new(filter: FilterSpec, particles: usize, replicates: usize, seed: u64) -> Self {
        Self {
            filter,
            particles,
            replicates,
            seed,
            threads: 0,
            max_propagations_per_step: None,
            rho_baseline_particles: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.particles == 0 {
            return Err(ExperimentError::InvalidConfig("N must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(ExperimentError::InvalidConfig("M must be at least 1".into()));
        }
        if let FilterSpec::Pfrc(s) = &self.filter {
            s.validate()
                .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        }
        if self.rho_baseline_particles == Some(0) {
            return Err(ExperimentError::ZeroBaseline);
        }
        Ok(())
    }

    fn budget(&self) -> u64 {
        self.max_propagations_per_step
            .unwrap_or_else(|| default_propagation_budget(self.particles))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateStatus {
    Ok,
    /// Every weight vanished; recorded as `Ẑ = 0`.
    Collapsed,
    Failed(String),
}

impl ReplicateStatus {
    fn encode(&self) -> String {
        match self {
            ReplicateStatus::Ok => "ok".into(),
            ReplicateStatus::Collapsed => "collapsed".into(),
            ReplicateStatus::Failed(reason) => {
                format!("failed:{}", reason.replace([',', '\n', '\r'], ";"))
            }
        }
    }

    fn decode(text: &str) -> Option<Self> {
        match text {
            "ok" => Some(ReplicateStatus::Ok),
            "collapsed" => Some(ReplicateStatus::Collapsed),
            _ => text
                .strip_prefix("failed:")
                .map(|r| ReplicateStatus::Failed(r.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub log_z: f64,
    pub total_propagations: u64,
    pub status: ReplicateStatus,
}

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub filter: String,
    pub threshold: String,
    pub particles: usize,
    pub rho: f64,
    pub ess: f64,
    pub ess_per_rho: f64,
    pub var_log_z: f64,
    pub rho_var_log_z: f64,
    pub replicates: usize,
    pub mean_z: f64,
    pub se_z: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: SummaryRow,
    pub records: Vec<ReplicateRecord>,
    /// Thresholds were set per sweep, so `mean_z` is not an unbiased estimate.
    pub biased: bool,
    /// Replicates with `Ẑ = 0`, excluded from `var_log_z`.
    pub zero_estimates: usize,
    pub failures: usize,
}

/// `(Σ Ẑ_m)² / Σ Ẑ_m²`.
pub fn ess_across_runs(estimates: &[f64]) -> Result<f64, ExperimentError> {
    let logs: Vec<f64> = estimates.iter().map(|&z| crate::logspace::ln_weight(z)).collect();
    ess_from_log(&logs)
}

/// ESS across runs computed from `log Ẑ_m`, immune to underflow.
pub fn ess_from_log(log_estimates: &[f64]) -> Result<f64, ExperimentError> {
    let max = log_estimates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(ExperimentError::AllZeroEstimates);
    }
    if !max.is_finite() {
        return Err(ExperimentError::NonFiniteEstimate(max));
    }
    let (sum, sum_sq) = log_estimates.iter().fold((0.0, 0.0), |(s, s2), &l| {
        let z = (l - max).exp();
        (s + z, s2 + z * z)
    });
    Ok(sum * sum / sum_sq)
}

/// Mean over replicates of `Σ_t P_t / (N_baseline · T)`.
pub fn rho(total_propagations: &[u64], baseline_particles: usize, horizon: usize) -> Result<f64, ExperimentError> {
    let baseline = (baseline_particles * horizon) as f64;
    if baseline == 0.0 {
        return Err(ExperimentError::ZeroBaseline);
    }
    if total_propagations.is_empty() {
        return Err(ExperimentError::InsufficientData(0));
    }
    let mean = total_propagations.iter().map(|&p| p as f64).sum::<f64>() / total_propagations.len() as f64;
    Ok(mean / baseline)
}

/// Unbiased sample variance of `log Ẑ_m`.
pub fn var_log_z(log_estimates: &[f64]) -> Result<f64, ExperimentError> {
    if let Some(&bad) = log_estimates.iter().find(|l| !l.is_finite()) {
        return Err(ExperimentError::NonFiniteEstimate(bad));
    }
    let m = log_estimates.len();
    if m < 2 {
        return Err(ExperimentError::InsufficientData(m));
    }
    let mean = log_estimates.iter().sum::<f64>() / m as f64;
    Ok(log_estimates.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (m - 1) as f64)
}

/// Mean of `Ẑ_m` and its standard error, from log estimates.
pub fn mean_and_standard_error(log_estimates: &[f64]) -> (f64, f64) {
    let m = log_estimates.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    let max = log_estimates
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return (0.0, 0.0);
    }
    let scaled: Vec<f64> = log_estimates.iter().map(|l| (l - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / m as f64;
    let se = if m > 1 {
        let var = scaled.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        (var / m as f64).sqrt()
    } else {
        f64::NAN
    };
    let scale = max.exp();
    (mean * scale, se * scale)
}

fn run_one<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    config: &ReplicateConfig,
    replicate: usize,
) -> ReplicateRecord {
    let mut rng = RandomStream::new(config.seed, replicate as u64);
    let n = config.particles;
    let result: Result<SweepResult<M::State>, FilterError> = match &config.filter {
        FilterSpec::Bpf => run_bpf(model, observations, n, &mut rng),
        FilterSpec::Pfrc(schedule) => run_pfrc(model, observations, n, schedule, &mut rng, config.budget()),
        FilterSpec::Alive => run_alive(model, observations, n, &mut rng, config.budget()),
    };
    match result {
        Ok(sweep) => ReplicateRecord {
            replicate,
            log_z: sweep.log_z,
            total_propagations: sweep.total_propagations,
            status: if sweep.is_collapsed() {
                ReplicateStatus::Collapsed
            } else {
                ReplicateStatus::Ok
            },
        },
        Err(e) => ReplicateRecord {
            replicate,
            log_z: f64::NAN,
            total_propagations: 0,
            status: ReplicateStatus::Failed(e.to_string()),
        },
    }
}

/// Run `M` independent sweeps and summarize them.
///
/// A failing replicate is recorded with a `failed` status and excluded from
/// the statistics; it does not abort the batch.
pub fn replicate_experiment<M: StateSpaceModel>(
    model: &M,
    observations: &[M::Observation],
    config: &ReplicateConfig,
) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    if observations.is_empty() {
        return Err(ExperimentError::Filter(FilterError::NoObservations));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    let records: Vec<ReplicateRecord> = pool.install(|| {
        (0..config.replicates)
            .into_par_iter()
            .map(|m| run_one(model, observations, config, m))
            .collect()
    });
    Ok(summarize(config, observations.len(), records))
}

/// Reduce replicate records to a summary row.
pub fn summarize(config: &ReplicateConfig, horizon: usize, records: Vec<ReplicateRecord>) -> ExperimentOutcome {
    let usable: Vec<&ReplicateRecord> = records
        .iter()
        .filter(|r| !matches!(r.status, ReplicateStatus::Failed(_)))
        .collect();
    let failures = records.len() - usable.len();
    let logs: Vec<f64> = usable.iter().map(|r| r.log_z).collect();
    let finite_logs: Vec<f64> = logs.iter().copied().filter(|l| l.is_finite()).collect();
    let zero_estimates = logs.len() - finite_logs.len();
    let props: Vec<u64> = usable.iter().map(|r| r.total_propagations).collect();

    let baseline = config.rho_baseline_particles.unwrap_or(config.particles);
    let rho = rho(&props, baseline, horizon).unwrap_or(f64::NAN);
    let ess = ess_from_log(&logs).unwrap_or(f64::NAN);
    let var = var_log_z(&finite_logs).unwrap_or(f64::NAN);
    let (mean_z, se_z) = mean_and_standard_error(&logs);

    ExperimentOutcome {
        summary: SummaryRow {
            filter: config.filter.id().to_string(),
            threshold: config.filter.threshold_label(),
            particles: config.particles,
            rho,
            ess,
            ess_per_rho: ess / rho,
            var_log_z: var,
            rho_var_log_z: rho * var,
            replicates: config.replicates,
            mean_z,
            se_z,
        },
        records,
        biased: config.filter.is_biased(),
        zero_estimates,
        failures,
    }
}

pub const SUMMARY_HEADER: &str = "filter,threshold,N,rho,ess,ess_per_rho,var_log_z,rho_var_log_z,M,mean_z,se_z";
pub const REPLICATE_HEADER: &str = "replicate,log_Z,total_propagations,status";

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.filter,
            r.threshold,
            r.particles,
            fmt_real(r.rho),
            fmt_real(r.ess),
            fmt_real(r.ess_per_rho),
            fmt_real(r.var_log_z),
            fmt_real(r.rho_var_log_z),
            r.replicates,
            fmt_real(r.mean_z),
            fmt_real(r.se_z),
        );
    }
    out
}

pub fn replicates_csv(records: &[ReplicateRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 48);
    out.push_str(REPLICATE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.replicate,
            fmt_real(r.log_z),
            r.total_propagations,
            r.status.encode()
        );
    }
    out
}

fn split_row(line: &str, line_no: usize, columns: usize) -> Result<Vec<&str>, ExperimentError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != columns {
        return Err(ExperimentError::Parse {
            line: line_no,
            message: format!("expected {columns} columns, found {}", fields.len()),
        });
    }
    Ok(fields)
}

fn parse_field<T: std::str::FromStr>(text: &str, line: usize) -> Result<T, ExperimentError> {
    text.parse().map_err(|_| ExperimentError::Parse {
        line,
        message: format!("invalid value `{text}`"),
    })
}

fn check_header(text: &str, expected: &str) -> Result<(), ExperimentError> {
    match text.lines().next() {
        Some(h) if h == expected => Ok(()),
        other => Err(ExperimentError::Parse {
            line: 1,
            message: format!("expected header `{expected}`, found `{}`", other.unwrap_or("")),
        }),
    }
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>, ExperimentError> {
    check_header(text, SUMMARY_HEADER)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f = split_row(line, line_no, 11)?;
        rows.push(SummaryRow {
            filter: f[0].to_string(),
            threshold: f[1].to_string(),
            particles: parse_field(f[2], line_no)?,
            rho: parse_field(f[3], line_no)?,
            ess: parse_field(f[4], line_no)?,
            ess_per_rho: parse_field(f[5], line_no)?,
            var_log_z: parse_field(f[6], line_no)?,
            rho_var_log_z: parse_field(f[7], line_no)?,
            replicates: parse_field(f[8], line_no)?,
            mean_z: parse_field(f[9], line_no)?,
            se_z: parse_field(f[10], line_no)?,
        });
    }
    Ok(rows)
}

pub fn parse_replicates_csv(text: &str) -> Result<Vec<ReplicateRecord>, ExperimentError> {
    check_header(text, REPLICATE_HEADER)?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f = split_row(line, line_no, 4)?;
        let status = ReplicateStatus::decode(f[3]).ok_or_else(|| ExperimentError::Parse {
            line: line_no,
            message: format!("invalid status `{}`", f[3]),
        })?;
        records.push(ReplicateRecord {
            replicate: parse_field(f[0], line_no)?,
            log_z: parse_field(f[1], line_no)?,
            total_propagations: parse_field(f[2], line_no)?,
            status,
        });
    }
    Ok(records)
}

/// Write the summary table and per-replicate records. Nothing is written if
/// there are no records.
pub fn emit_csv(
    rows: &[SummaryRow],
    records: &[ReplicateRecord],
    summary_path: &Path,
    replicates_path: &Path,
) -> Result<(), ExperimentError> {
    if records.is_empty() || rows.is_empty() {
        return Err(ExperimentError::EmptyReplicates);
    }
    fs::write(summary_path, summary_csv(rows))?;
    fs::write(replicates_path, replicates_csv(records))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub replicates: usize,
}

impl MonteCarloEstimate {
    fn from_outcome(outcome: &ExperimentOutcome) -> Self {
        Self {
            mean: outcome.summary.mean_z,
            standard_error: outcome.summary.se_z,
            replicates: outcome.summary.replicates,
        }
    }

    /// Distance from `target` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.standard_error
    }
}

/// Monte Carlo versus closed-form comparison for the single-particle two-coin
/// example under a per-sweep median threshold and a fixed threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasDemoReport {
    pub dynamic_median: MonteCarloEstimate,
    pub fixed: MonteCarloEstimate,
    pub fixed_threshold: f64,
    pub exact: CoinExpectations,
    pub series: CoinExpectations,
    pub marginal: f64,
}

pub const BIAS_DEMO_FIXED_THRESHOLD: f64 = 0.65;

pub fn bias_demo(replicates: usize, seed: u64, threads: usize) -> Result<BiasDemoReport, ExperimentError> {
    let model = coin_model();
    let observations = [Flip::Heads];
    let run = |schedule: ThresholdSchedule, seed: u64| {
        let mut config = ReplicateConfig::new(FilterSpec::Pfrc(schedule), 1, replicates, seed);
        config.threads = threads;
        replicate_experiment(&model, &observations, &config)
    };
    let dynamic = run(ThresholdSchedule::DynamicQuantile(0.5), seed)?;
    // Separate seed lane so the two estimates are independent.
    let fixed = run(ThresholdSchedule::Constant(BIAS_DEMO_FIXED_THRESHOLD), seed ^ 0x9E37_79B9_7F4A_7C15)?;
    Ok(BiasDemoReport {
        dynamic_median: MonteCarloEstimate::from_outcome(&dynamic),
        fixed: MonteCarloEstimate::from_outcome(&fixed),
        fixed_threshold: BIAS_DEMO_FIXED_THRESHOLD,
        exact: coin_exact_expectation(),
        series: coin_series_expectation(1e-16)?,
        marginal: 0.65,
    })
}

pub const BIAS_DEMO_HEADER: &str = "quantity,monte_carlo,standard_error,exact,series";

/// CSV rendering of a [`BiasDemoReport`]; empty cells where a column does
/// not apply.
pub fn bias_demo_table(report: &BiasDemoReport) -> String {
    let mut out = String::new();
    out.push_str(BIAS_DEMO_HEADER);
    out.push('\n');
    let mc = |out: &mut String, name: &str, est: &MonteCarloEstimate, exact: f64, series: String| {
        let _ = writeln!(
            out,
            "{name},{},{},{},{series}",
            fmt_real(est.mean),
            fmt_real(est.standard_error),
            fmt_real(exact)
        );
    };
    mc(&mut out, "dynamic_median_mean_z", &report.dynamic_median, report.exact.total, fmt_real(report.series.total));
    mc(&mut out, "fixed_threshold_mean_z", &report.fixed, report.marginal, String::new());
    let e = &report.exact;
    let s = &report.series;
    for (name, exact, series) in [
        ("case1", e.case1, s.case1),
        ("case2", e.case2, s.case2),
        ("case3", e.case3, s.case3),
        ("case4", e.case4, s.case4),
        ("total", e.total, s.total),
    ] {
        let _ = writeln!(out, "{name},,,{},{}", fmt_real(exact), fmt_real(series));
    }
    let _ = writeln!(out, "marginal,,,{},", fmt_real(report.marginal));
    out
}

use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use pfrc_core::experiment::{
    bias_demo_table, emit_csv, replicate_experiment, summary_csv, FilterSpec, DATA_STREAM,
};
use pfrc_core::filters::{default_propagation_budget, run_alive, run_bpf, run_pfrc, SweepResult};
use pfrc_core::models::{
    read_dataset, write_dataset, write_states, CoinModel, CsvValue, DiscreteHmm, HmmModel, LgssModel,
};
use pfrc_core::oracles::{
    coin_exact_expectation, coin_series_expectation, enumeration_loglik, kalman_loglik, negbin_series,
};
use pfrc_core::ssm::{self, RandomStream, StateSpaceModel};
use pfrc_core::thresholds::{pilot_record, save_schedule, Threshold, ThresholdSchedule};

use crate::error::CliError;
use crate::settings::{FilterKind, ModelKind, Settings};

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn warn_biased() {
    eprintln!(
        "warning: kind=biased-estimator message=\"thresholds computed from the sweep itself bias Z; \
         freeze them with `pilot` for unbiased runs\""
    );
}

/// Write `text` to `path`, or stdout when no path is given.
fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

struct Data<M: StateSpaceModel> {
    observations: Vec<M::Observation>,
    /// Present only for simulated data.
    states: Option<Vec<M::State>>,
}

/// Work that is generic over the model chosen at run time.
trait ModelTask {
    fn run<M>(self, model: &M, data: Data<M>) -> Result<(), CliError>
    where
        M: StateSpaceModel,
        M::State: CsvValue,
        M::Observation: CsvValue;
}

fn load_hmm(s: &Settings) -> Result<DiscreteHmm, CliError> {
    let path = s
        .hmm
        .as_deref()
        .ok_or_else(|| CliError::Config("--hmm is required for the hmm model".into()))?;
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Build the model and obtain observations from `--data` or by simulation.
fn prepare<M, F>(s: &Settings, default_horizon: Option<usize>, build: F) -> Result<(M, Data<M>), CliError>
where
    M: StateSpaceModel,
    M::Observation: CsvValue,
    F: Fn(usize) -> Result<M, CliError>,
{
    if let Some(path) = &s.data {
        let file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let observations: Vec<M::Observation> = read_dataset(BufReader::new(file))?;
        if observations.is_empty() {
            return Err(CliError::Config(format!("{} has no observations", path.display())));
        }
        let model = build(observations.len())?;
        return Ok((model, Data { observations, states: None }));
    }
    let horizon = s
        .horizon
        .or(default_horizon)
        .ok_or_else(|| CliError::Config("--horizon or --data is required".into()))?;
    let model = build(horizon)?;
    let seed = s
        .data_seed
        .or(s.seed)
        .ok_or_else(|| CliError::Config("--data-seed or --seed is required to simulate data".into()))?;
    let trajectory = ssm::simulate(&model, &mut RandomStream::new(seed, DATA_STREAM))?;
    Ok((
        model,
        Data {
            observations: trajectory.observations,
            states: Some(trajectory.states),
        },
    ))
}

fn with_model<T: ModelTask>(s: &Settings, task: T) -> Result<(), CliError> {
    match s.model() {
        ModelKind::Lgss => {
            let params = s.lgss_params();
            let (model, data) = prepare(s, None, |h| Ok(LgssModel::new(params, h)?))?;
            task.run(&model, data)
        }
        ModelKind::Coin => {
            let (model, data) = prepare(s, Some(1), |h| {
                if h == 1 {
                    Ok(CoinModel)
                } else {
                    Err(CliError::Config(format!("the coin model has a single step, got {h}")))
                }
            })?;
            task.run(&model, data)
        }
        ModelKind::Hmm => {
            let hmm = load_hmm(s)?;
            let (model, data) = prepare(s, None, |h| Ok(HmmModel::new(hmm.clone(), h)?))?;
            task.run(&model, data)
        }
    }
}

struct Simulate<'a>(&'a Settings);

impl ModelTask for Simulate<'_> {
    fn run<M>(self, _model: &M, data: Data<M>) -> Result<(), CliError>
    where
        M: StateSpaceModel,
        M::State: CsvValue,
        M::Observation: CsvValue,
    {
        let mut buf = Vec::new();
        write_dataset(&mut buf, &data.observations).map_err(|e| CliError::io(Path::new("<buffer>"), e))?;
        write_output(self.0.output.as_deref(), &String::from_utf8_lossy(&buf))?;
        if let (Some(path), Some(states)) = (&self.0.states, &data.states) {
            let file = File::create(path).map_err(|e| CliError::io(path, e))?;
            write_states(BufWriter::new(file), states).map_err(|e| CliError::io(path, e))?;
        }
        Ok(())
    }
}

pub fn simulate(s: &Settings) -> Result<(), CliError> {
    if s.data.is_some() {
        return Err(CliError::Config("simulate does not read --data".into()));
    }
    with_model(s, Simulate(s))
}

fn sweep<M: StateSpaceModel>(
    s: &Settings,
    model: &M,
    observations: &[M::Observation],
    filter: &FilterSpec,
) -> Result<SweepResult<M::State>, CliError> {
    let n = s.require(s.particles, "particles")?;
    let budget = s.max_propagations.unwrap_or_else(|| default_propagation_budget(n));
    let mut rng = RandomStream::new(s.require_seed()?, 0);
    let result = match filter {
        FilterSpec::Bpf => run_bpf(model, observations, n, &mut rng)?,
        FilterSpec::Pfrc(schedule) => run_pfrc(model, observations, n, schedule, &mut rng, budget)?,
        FilterSpec::Alive => run_alive(model, observations, n, &mut rng, budget)?,
    };
    Ok(result)
}

fn threshold_cell(t: &Threshold) -> String {
    match t {
        Threshold::Value(c) => real(*c),
        Threshold::AcceptAll => "accept-all".into(),
    }
}

struct Run<'a>(&'a Settings);

impl ModelTask for Run<'_> {
    fn run<M>(self, model: &M, data: Data<M>) -> Result<(), CliError>
    where
        M: StateSpaceModel,
        M::State: CsvValue,
        M::Observation: CsvValue,
    {
        let s = self.0;
        let filter = s.filter_spec()?;
        if filter.is_biased() {
            warn_biased();
        }
        let result = sweep(s, model, &data.observations, &filter)?;
        let n = s.require(s.particles, "particles")? as u64;
        let mut out = String::new();
        out.push_str(&format!("log_Z={}\n", real(result.log_z)));
        out.push_str(&format!("total_propagations={}\n", result.total_propagations));
        if let Some(t) = result.collapsed_at {
            out.push_str(&format!("collapsed_at={t}\n"));
        }
        out.push_str("t,log_weight_sum,propagations,threshold\n");
        for (i, lw) in result.log_weight_sums.iter().enumerate() {
            let props = result.propagations.as_ref().map_or(n, |p| p[i]);
            let threshold = result.thresholds.get(i).map_or_else(|| "-".to_string(), threshold_cell);
            out.push_str(&format!("{},{},{props},{threshold}\n", i + 1, real(*lw)));
        }
        write_output(s.output.as_deref(), &out)
    }
}

pub fn run(s: &Settings) -> Result<(), CliError> {
    with_model(s, Run(s))
}

struct Experiment<'a>(&'a Settings);

impl ModelTask for Experiment<'_> {
    fn run<M>(self, model: &M, data: Data<M>) -> Result<(), CliError>
    where
        M: StateSpaceModel,
        M::State: CsvValue,
        M::Observation: CsvValue,
    {
        let s = self.0;
        let config = s.replicate_config()?;
        if config.filter.is_biased() {
            warn_biased();
        }
        let outcome = replicate_experiment(model, &data.observations, &config)?;
        let rows = [outcome.summary.clone()];
        if let Some(dir) = &s.output {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            emit_csv(&rows, &outcome.records, &dir.join("summary.csv"), &dir.join("replicates.csv"))?;
        }
        write_output(None, &summary_csv(&rows))?;
        eprintln!(
            "info: zero_estimates={} failures={}",
            outcome.zero_estimates, outcome.failures
        );
        Ok(())
    }
}

pub fn experiment(s: &Settings) -> Result<(), CliError> {
    s.require_seed()?;
    with_model(s, Experiment(s))
}

struct Pilot<'a>(&'a Settings);

impl ModelTask for Pilot<'_> {
    fn run<M>(self, model: &M, data: Data<M>) -> Result<(), CliError>
    where
        M: StateSpaceModel,
        M::State: CsvValue,
        M::Observation: CsvValue,
    {
        let s = self.0;
        let schedule = s
            .schedule()?
            .filter(ThresholdSchedule::is_dynamic)
            .ok_or_else(|| CliError::Config("pilot needs --quantile or --mma".into()))?;
        warn_biased();
        let filter = FilterSpec::Pfrc(schedule.clone());
        let result = sweep(s, model, &data.observations, &filter)?;
        let fixed = pilot_record(&schedule, &result)?;
        eprintln!("info: pilot log_Z={}", real(result.log_z));
        write_output(s.output.as_deref(), &save_schedule(&fixed))
    }
}

pub fn pilot(s: &Settings) -> Result<(), CliError> {
    s.require_seed()?;
    if matches!(s.filter, Some(f) if f != FilterKind::Pfrc) {
        return Err(CliError::Config("pilot runs the pfrc filter only".into()));
    }
    with_model(s, Pilot(s))
}

pub fn oracle_kalman(s: &Settings) -> Result<(), CliError> {
    if s.model() != ModelKind::Lgss {
        return Err(CliError::Config("the kalman oracle needs --model lgss".into()));
    }
    let params = s.lgss_params();
    let (_, data) = prepare(s, None, |h| Ok(LgssModel::new(params, h)?))?;
    let ll = kalman_loglik(&params, &data.observations)?;
    write_output(s.output.as_deref(), &format!("log_likelihood={}\n", real(ll)))
}

pub fn oracle_enumeration(s: &Settings) -> Result<(), CliError> {
    if s.model() != ModelKind::Hmm {
        return Err(CliError::Config("the enumeration oracle needs --model hmm".into()));
    }
    let hmm = load_hmm(s)?;
    let (_, data) = prepare(s, None, |h| Ok(HmmModel::new(hmm.clone(), h)?))?;
    let ll = enumeration_loglik(&hmm, &data.observations)?;
    write_output(s.output.as_deref(), &format!("log_likelihood={}\n", real(ll)))
}

pub fn oracle_coin() -> Result<(), CliError> {
    let exact = coin_exact_expectation();
    let series = coin_series_expectation(1e-16)?;
    let mut out = String::from("quantity,exact,series\n");
    for (name, e, s) in [
        ("case1", exact.case1, series.case1),
        ("case2", exact.case2, series.case2),
        ("case3", exact.case3, series.case3),
        ("case4", exact.case4, series.case4),
        ("total", exact.total, series.total),
    ] {
        out.push_str(&format!("{name},{},{}\n", real(e), real(s)));
    }
    write_output(None, &out)
}

pub fn oracle_negbin(n: u64, p: f64, tolerance: f64) -> Result<(), CliError> {
    let value = negbin_series(n, p, tolerance)?;
    let target = p / n as f64;
    write_output(
        None,
        &format!(
            "series={}\np_over_n={}\nabs_error={}\n",
            real(value),
            real(target),
            real((value - target).abs())
        ),
    )
}

pub const BIAS_DEMO_REPLICATES: usize = 1_000_000;

pub fn bias_demo(s: &Settings) -> Result<(), CliError> {
    let seed = s.require_seed()?;
    let replicates = s.replicates.unwrap_or(BIAS_DEMO_REPLICATES);
    warn_biased();
    let report = pfrc_core::experiment::bias_demo(replicates, seed, s.threads.unwrap_or(0))?;
    write_output(s.output.as_deref(), &bias_demo_table(&report))
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pfrc_core::experiment::{parse_replicates_csv, parse_summary_csv, ReplicateStatus};
use pfrc_core::models::{read_dataset, LgssParams};
use pfrc_core::oracles::kalman_loglik;
use pfrc_core::thresholds::{load_schedule, ThresholdSchedule};

fn pfrc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pfrc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn value(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text}"))
        .parse()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn experiment_without_seed_fails_with_machine_readable_line() {
    let out = pfrc(&["experiment", "--horizon", "5", "--filter", "bpf", "-n", "4", "-m", "2"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr(&out);
    assert!(err.lines().any(|l| l.starts_with("error: kind=config message=\"")), "{err}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = pfrc(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error: kind=usage"));
}

#[test]
fn pfrc_without_threshold_is_rejected() {
    let out = pfrc(&["run", "--horizon", "3", "--seed", "1", "--filter", "pfrc", "-n", "4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("kind=config"));
}

#[test]
fn simulated_file_reproduces_in_memory_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.csv");
    let states = dir.path().join("x.csv");
    let common = ["--horizon", "12", "--data-seed", "4"];
    let out = pfrc(&[&["simulate", "-o", p(&data), "--states", p(&states)][..], &common].concat());
    stdout(&out);
    let ys: Vec<f64> = read_dataset(fs::read_to_string(&data).unwrap().as_bytes()).unwrap();
    assert_eq!(ys.len(), 12);
    assert_eq!(fs::read_to_string(&states).unwrap().lines().count(), 14);

    let run = ["run", "--seed", "9", "--filter", "alive", "-n", "16"];
    let from_file = stdout(&pfrc(&[&run[..], &["--data", p(&data)]].concat()));
    let simulated = stdout(&pfrc(&[&run[..], &common].concat()));
    assert_eq!(from_file, simulated);
    assert_eq!(from_file.lines().filter(|l| l.contains(",17,")).count(), 12);
}

#[test]
fn kalman_oracle_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("y.csv");
    stdout(&pfrc(&["simulate", "--horizon", "8", "--data-seed", "2", "--outlier-prob", "0", "-o", p(&data)]));
    let ys: Vec<f64> = read_dataset(fs::read_to_string(&data).unwrap().as_bytes()).unwrap();
    let text = stdout(&pfrc(&["oracle", "kalman", "--data", p(&data), "--outlier-prob", "0"]));
    let expected = kalman_loglik(&LgssParams::clean(), &ys).unwrap();
    assert_eq!(value(&text, "log_likelihood"), expected);
}

#[test]
fn negbin_and_coin_oracles_print_values() {
    let text = stdout(&pfrc(&["oracle", "negbin", "--negbin-n", "5", "--negbin-p", "0.3"]));
    assert!((value(&text, "series") - 0.06).abs() < 1e-9);
    let coin = stdout(&pfrc(&["oracle", "coin"]));
    let total: f64 = coin
        .lines()
        .find_map(|l| l.strip_prefix("total,"))
        .and_then(|rest| rest.split(',').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((total - 0.64631).abs() < 5e-6);
}

#[test]
fn pilot_schedule_drives_an_unbiased_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = dir.path().join("schedule.txt");
    let base = ["--horizon", "6", "--data-seed", "3", "-n", "32"];
    let out = pfrc(&[&["pilot", "--seed", "5", "--quantile", "0.3", "-o", p(&schedule)][..], &base].concat());
    assert!(stderr(&out).contains("warning: kind=biased-estimator"));
    stdout(&out);
    let loaded = load_schedule(&fs::read_to_string(&schedule).unwrap()).unwrap();
    assert!(matches!(&loaded, ThresholdSchedule::PerStep(c) if c.len() == 6));

    let outdir = dir.path().join("exp");
    let out = pfrc(
        &[
            &["experiment", "--seed", "6", "--filter", "pfrc", "--schedule", p(&schedule), "-m", "40", "-o", p(&outdir)][..],
            &base,
        ]
        .concat(),
    );
    assert!(!stderr(&out).contains("warning"));
    let printed = stdout(&out);
    let rows = parse_summary_csv(&fs::read_to_string(outdir.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(parse_summary_csv(&printed).unwrap(), rows);
    assert_eq!(rows[0].filter, "pfrc");
    assert_eq!(rows[0].replicates, 40);
    assert!(rows[0].rho >= 33.0 / 32.0);
    let records = parse_replicates_csv(&fs::read_to_string(outdir.join("replicates.csv")).unwrap()).unwrap();
    assert_eq!(records.len(), 40);
    assert!(records.iter().all(|r| r.status == ReplicateStatus::Ok));
}

#[test]
fn pilot_requires_a_dynamic_schedule() {
    let out = pfrc(&["pilot", "--horizon", "3", "--seed", "1", "-n", "4", "--threshold", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dynamic_run_warns() {
    let out = pfrc(&["run", "--horizon", "3", "--seed", "1", "--filter", "pfrc", "--mma", "0.2,0.3,0.5", "-n", "8"]);
    assert!(stderr(&out).contains("warning: kind=biased-estimator"));
    let text = stdout(&out);
    assert!(value(&text, "log_Z").is_finite());
}

#[test]
fn single_replicate_has_unit_ess() {
    let out = pfrc(&["experiment", "--horizon", "4", "--seed", "1", "--filter", "bpf", "-n", "8", "-m", "1"]);
    let rows = parse_summary_csv(&stdout(&out)).unwrap();
    assert_eq!(rows[0].ess, 1.0);
    assert!(rows[0].var_log_z.is_nan());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(&config, "model = \"lgss\"\nhorizon = 5\nseed = 3\nfilter = \"bpf\"\nparticles = 8\n").unwrap();
    let from_file = stdout(&pfrc(&["run", "--config", p(&config)]));
    let explicit = stdout(&pfrc(&["run", "--horizon", "5", "--seed", "3", "--filter", "bpf", "-n", "8"]));
    assert_eq!(from_file, explicit);
    let overridden = stdout(&pfrc(&["run", "--config", p(&config), "-n", "16"]));
    assert!(overridden.contains(",16,-"));

    fs::write(&config, "particels = 8\n").unwrap();
    let out = pfrc(&["run", "--config", p(&config)]);
    assert!(stderr(&out).contains("kind=config"));
}

#[test]
fn invalid_schedule_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let schedule = dir.path().join("bad.txt");
    fs::write(&schedule, "c_t: -1\n").unwrap();
    let out = pfrc(&["run", "--horizon", "3", "--seed", "1", "--filter", "pfrc", "--schedule", p(&schedule), "-n", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("kind=schedule") && err.contains("line 1"), "{err}");
}

#[test]
fn hmm_model_from_json() {
    let dir = tempfile::tempdir().unwrap();
    let hmm = dir.path().join("hmm.json");
    fs::write(
        &hmm,
        r#"{"initial":[0.5,0.5],"transition":[[0.9,0.1],[0.2,0.8]],"emission":[[1.0,0.0],[0.3,0.7]]}"#,
    )
    .unwrap();
    let args = ["--model", "hmm", "--hmm", p(&hmm), "--horizon", "5", "--data-seed", "2"];
    let exact = value(&stdout(&pfrc(&[&["oracle", "enumeration"][..], &args].concat())), "log_likelihood");
    assert!(exact.is_finite());
    let out = pfrc(&[&["run", "--seed", "1", "--filter", "alive", "-n", "8"][..], &args].concat());
    assert!(value(&stdout(&out), "log_Z").is_finite());

    fs::write(&hmm, r#"{"initial":[0.5,0.6],"transition":[[1.0]],"emission":[[1.0]]}"#).unwrap();
    let out = pfrc(&[&["run", "--seed", "1", "--filter", "bpf", "-n", "8"][..], &args].concat());
    assert!(stderr(&out).contains("kind=model"));
}

#[test]
fn coin_experiment_runs_and_rejects_long_data() {
    let dir = tempfile::tempdir().unwrap();
    let heads = dir.path().join("heads.csv");
    fs::write(&heads, "t,y_symbol\n1,H\n").unwrap();
    let out = pfrc(&[
        "experiment", "--model", "coin", "--data", p(&heads), "--seed", "1", "--filter", "pfrc", "--threshold", "0.65",
        "-n", "1", "-m", "1000",
    ]);
    let rows = parse_summary_csv(&stdout(&out)).unwrap();
    assert!((rows[0].mean_z - 0.65).abs() < 5.0 * rows[0].se_z);
    let out = pfrc(&["run", "--model", "coin", "--horizon", "3", "--seed", "1", "--filter", "bpf", "-n", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bias_demo_prints_table() {
    let text = stdout(&pfrc(&["bias-demo", "--seed", "3", "-m", "2000"]));
    assert!(text.starts_with("quantity,monte_carlo,standard_error,exact,series\n"));
    assert_eq!(text.lines().count(), 9);
}

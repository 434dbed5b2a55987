use std::fs;

use lcqsim::cli::main_with_args;
use lcqsim::config::{load_preset, parse_str, Experiment, Overrides};
use lcqsim::format::sig9;
use lcqsim::report::{cmd_capacity, cmd_run};
use lcqsim::sweep::{cmd_sweep, run_sweep, RAW_HEADER, SUMMARY_HEADER};
use lcqsim::CliError;
use lcqsim_core::{PolicySpec, ServerOrdering, UpdateMode};

const MINIMAL: &str = r#"
num_queues = 1
num_servers = 1

[connectivity]
p = 1.0

[arrivals]
kind = "bernoulli"
rate = 0.5
"#;

fn resolve(text: &str) -> Result<Experiment, CliError> {
    Experiment::from_file(parse_str(text)?, &Overrides::default())
}

fn validation_message(text: &str) -> String {
    match resolve(text) {
        Err(CliError::Validation(msg)) => msg,
        other => panic!("expected a validation error, got {other:?}"),
    }
}

fn sixteen_rows(n: usize) -> String {
    let rows = vec!["[0.2, 0.2, 0.2, 0.2]"; n].join(", ");
    format!(
        "num_queues = 16\nnum_servers = 4\n[connectivity]\nprobs = [{rows}]\n[arrivals]\nkind = \"bernoulli\"\nrate = 0.1\n"
    )
}

#[test]
fn minimal_config_resolves_defaults() {
    let exp = resolve(MINIMAL).unwrap();
    assert_eq!(exp.system.horizon, 200_000);
    assert_eq!(exp.system.warmup, 20_000);
    assert_eq!(exp.system.seed, 1);
    assert_eq!(exp.system.policy, PolicySpec::as_lcq());
    assert_eq!(exp.replications, 5);
    let echoed = exp.resolved_toml();
    for key in ["horizon = 200000", "warmup = 20000", "seed = 1", "policy = \"as_lcq\"", "agreement = 0.8"] {
        assert!(echoed.contains(key), "{key} missing from\n{echoed}");
    }
    // The echo is itself a valid config that resolves to the same system.
    let again = resolve(&echoed).unwrap();
    assert_eq!(again.system, exp.system);
}

#[test]
fn dimension_errors_name_the_field() {
    assert!(resolve(&sixteen_rows(16)).is_ok());
    let msg = validation_message(&sixteen_rows(15));
    assert!(msg.contains("connectivity.probs") && msg.contains("16 rows") && msg.contains("found 15"), "{msg}");

    let short_row = sixteen_rows(16).replacen("[0.2, 0.2, 0.2, 0.2]", "[0.2, 0.2, 0.2]", 1);
    let msg = validation_message(&short_row);
    assert!(msg.contains("connectivity.probs[0]"), "{msg}");

    let bad_p = sixteen_rows(16).replacen("0.2", "1.2", 1);
    let msg = validation_message(&bad_p);
    assert!(msg.contains("connectivity.probs[0][0]"), "{msg}");
}

#[test]
fn value_errors_name_the_field() {
    let msg = validation_message(&MINIMAL.replace("rate = 0.5", "rate = 1.5"));
    assert!(msg.contains("arrivals.rate"), "{msg}");

    let msg = validation_message(&MINIMAL.replace("rate = 0.5", "rates = [0.5, 0.1]"));
    assert!(msg.contains("arrivals.rates") && msg.contains("found 2"), "{msg}");

    let msg = validation_message(&format!("horizon = 100\nwarmup = 100\n{MINIMAL}"));
    assert!(msg.contains("horizon"), "{msg}");

    let msg = validation_message(&format!("policy = \"mtlb\"\n{MINIMAL}"));
    assert!(msg.contains("mtlb"), "{msg}");

    let msg = validation_message(&format!("{MINIMAL}\n[sweep]\ngrid = [0.2, 0.1]\n"));
    assert!(msg.contains("sweep.grid") && msg.contains("strictly increasing"), "{msg}");

    let msg = validation_message(&format!("{MINIMAL}\n[sweep]\ngrid = []\n"));
    assert!(msg.contains("sweep.grid"), "{msg}");

    let msg = validation_message(&format!("{MINIMAL}\n[sweep]\ngrid = [0.5, 1.2]\n"));
    assert!(msg.contains("sweep.grid"), "{msg}");
}

#[test]
fn unknown_keys_are_rejected() {
    let msg = validation_message(&format!("horizn = 10\n{MINIMAL}"));
    assert!(msg.contains("horizn"), "{msg}");
    let msg = validation_message(&MINIMAL.replace("p = 1.0", "p = 1.0\nq = 2"));
    assert!(msg.contains('q'), "{msg}");
}

#[test]
fn policy_tables() {
    let text = format!(
        "{}\n[policy]\nordering = \"fixed_permutation\"\npermutation = [2, 1]\nselection = \"longest_connected\"\nupdate_mode = \"sequential\"\n",
        MINIMAL.replace("num_servers = 1", "num_servers = 2").replace("p = 1.0", "probs = [[1.0, 0.5]]")
    );
    let exp = resolve(&text).unwrap();
    assert_eq!(exp.system.policy.ordering, ServerOrdering::FixedPermutation(vec![1, 0]));
    assert_eq!(exp.system.policy.update_mode, UpdateMode::Sequential);

    let bad = text.replace("permutation = [2, 1]", "permutation = [2, 2]");
    assert!(resolve(&bad).is_err());
}

#[test]
fn asymmetric_preset_carries_the_matrix() {
    let exp = Experiment::from_file(load_preset("asym16x4").unwrap(), &Overrides::default()).unwrap();
    let p = &exp.system.connectivity;
    assert_eq!(p.row(0), [0.9, 0.8, 0.9, 0.8]);
    assert_eq!(p.row(1), [0.2, 0.1, 0.02, 0.03]);
    assert_eq!(p.row(7), [0.6, 0.8, 0.99, 0.4]);
    assert_eq!(p.row(9), [0.72, 0.65, 0.42, 1.0]);
    assert_eq!(p.row(15), [0.03, 0.12, 0.21, 0.07]);
    assert!(matches!(exp.system.arrivals[0], lcqsim_core::ArrivalModel::Poisson { .. }));
    for name in lcqsim::config::PRESET_NAMES {
        assert!(Experiment::from_file(load_preset(name).unwrap(), &Overrides::default()).is_ok(), "{name}");
    }
}

fn small_sweep(grid: &[f64], policies: &[&str], replications: u32) -> Experiment {
    let overrides = Overrides {
        horizon: Some(12_000),
        warmup: Some(1_000),
        grid: Some(grid.to_vec()),
        policies: Some(policies.iter().map(|s| s.to_string()).collect()),
        replications: Some(replications),
        ..Overrides::default()
    };
    Experiment::from_file(load_preset("sym16x4_p02").unwrap(), &overrides).unwrap()
}

#[test]
fn one_point_sweep_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_sweep(&small_sweep(&[0.1], &["as_lcq"], 1), 1, dir.path()).unwrap();
    let raw = fs::read_to_string(&out.raw).unwrap();
    let lines: Vec<&str> = raw.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], RAW_HEADER.join(","));
    assert!(lines[1].starts_with("as_lcq,0.1,1,"), "{}", lines[1]);
    let summary = fs::read_to_string(&out.summary).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER.join(","));
    assert_eq!(summary.lines().count(), 2);
    assert!(!dir.path().join("sweep_raw.partial.csv").exists());
}

#[test]
fn summary_means_recompute_from_raw_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = cmd_sweep(&small_sweep(&[0.1, 0.15, 0.3], &["random", "as_lcq"], 3), 1, dir.path()).unwrap();
    let mut raw = csv::Reader::from_path(&out.raw).unwrap();
    let raw: Vec<csv::StringRecord> = raw.records().map(|r| r.unwrap()).collect();
    assert_eq!(raw.len(), 2 * 3 * 3);
    let mut summary = csv::Reader::from_path(&out.summary).unwrap();
    let summary: Vec<csv::StringRecord> = summary.records().map(|r| r.unwrap()).collect();
    assert_eq!(summary.len(), 6);
    for s in &summary {
        let group: Vec<&csv::StringRecord> = raw.iter().filter(|r| r[0] == s[0] && r[1] == s[1]).collect();
        assert_eq!(group.len().to_string(), &s[2]);
        for (raw_col, summary_col) in [(3, 3), (4, 4)] {
            let mean = group.iter().map(|r| r[raw_col].parse::<f64>().unwrap()).sum::<f64>() / group.len() as f64;
            assert_eq!(sig9(mean), &s[summary_col]);
        }
        assert_eq!(&group[0][6], &s[9]);
        assert_eq!(&group[0][7], &s[10]);
    }
    // Rows are sorted by (policy, lambda, seed); outside the region the bound is NA.
    assert_eq!(&raw[0][0], "as_lcq");
    assert!(raw.iter().filter(|r| &r[1] == "0.3").all(|r| &r[7] == "NA"));
}

#[test]
fn sweep_rows_do_not_depend_on_jobs() {
    let exp = small_sweep(&[0.1, 0.2], &["as_lcq", "random", "lcsf_scq"], 2);
    let serial = run_sweep(&exp, 1, None).unwrap();
    let parallel = run_sweep(&exp, 3, None).unwrap();
    assert_eq!(serial, parallel);
}

#[test]
fn run_report_references_existing_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = small_sweep(&[0.1], &["as_lcq"], 1);
    exp.replications = 2;
    let report = cmd_run(&exp, &[PolicySpec::as_lcq(), PolicySpec::randomized()], 1, dir.path(), 50).unwrap();
    assert_eq!(report.policies.len(), 2);
    assert_eq!(report.policies[0].replications.len(), 2);
    for path in &report.csv {
        assert!(fs::metadata(path).unwrap().len() > 0, "{}", path.display());
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run_report.json")).unwrap()).unwrap();
    assert_eq!(json["config"]["horizon"], 12_000);
    assert!(json["capacity"]["bound_exact"].as_f64().unwrap() > 0.0);
    assert!(json["policies"][0]["replications"][0]["diagnostics"]["telescoping_holds"].as_bool().unwrap());
    let series = fs::read_to_string(dir.path().join("run_series.csv")).unwrap();
    assert_eq!(series.lines().next().unwrap(), "policy,seed,slot,total_occupancy");
}

#[test]
fn capacity_report_for_two_queues() {
    let text = MINIMAL
        .replace("num_queues = 1", "num_queues = 2")
        .replace("num_servers = 1", "num_servers = 2")
        .replace("p = 1.0", "p = 0.5");
    let exp = resolve(&text).unwrap();
    let out = cmd_capacity(&exp.system, Some(vec![0.8, 0.8]), true).unwrap();
    assert!(out.contains("margin_m = 0.1\n"), "{out}");
    assert!(out.contains("worst_subset = [1, 2]"), "{out}");
    assert!(out.contains("inside_closure = false"), "{out}");
    assert!(out.contains("\"[1, 2]\" = -0.1"), "{out}");
    let out = cmd_capacity(&exp.system, Some(vec![0.7, 0.7]), false).unwrap();
    assert!(out.contains("inside_interior = true"), "{out}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, MINIMAL.replace("rate = 0.5", "rate = 0.25")).unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, MINIMAL.replace("rate = 0.5", "rate = -1")).unwrap();
    let outside = dir.path().join("outside.toml");
    fs::write(&outside, MINIMAL.replace("p = 1.0", "p = 0.4")).unwrap();
    let cfg = |p: &std::path::Path| p.to_str().unwrap().to_string();

    assert_eq!(main_with_args(["lcqsim", "bound", "--config", &cfg(&good)]), 0);
    assert_eq!(main_with_args(["lcqsim", "bound", "--config", &cfg(&bad)]), 1);
    assert_eq!(main_with_args(["lcqsim", "bound", "--config", &cfg(&outside)]), 2);
    assert_eq!(main_with_args(["lcqsim", "capacity", "--preset", "nope"]), 1);
    assert_eq!(main_with_args(["lcqsim", "bogus"]), 1);
    assert_eq!(main_with_args(["lcqsim", "oracle-golden", "--config", &cfg(&good), "--cap", "30"]), 0);
    let out = dir.path().join("sweep");
    let code = main_with_args([
        "lcqsim",
        "sweep",
        "--preset",
        "sym16x4_p02",
        "--horizon",
        "11000",
        "--warmup",
        "1000",
        "--grid",
        "0.1",
        "--policies",
        "as_lcq",
        "--replications",
        "1",
        "--jobs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.join("sweep_raw.csv").exists());
    // A sweep without a [sweep] section is a validation error.
    assert_eq!(main_with_args(["lcqsim", "sweep", "--config", &cfg(&good), "--out", out.to_str().unwrap()]), 1);
}

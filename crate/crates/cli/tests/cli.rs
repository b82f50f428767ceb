use std::path::Path;
use std::process::Command;

use fraclab_cli::config::{ExperimentConfig, StrategyKind};
use fraclab_cli::{run, run_with_threads, Experiment, ExperimentReport};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fraclab"));
    c.env_remove("FRACLAB_SEED");
    c
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

fn small(e: Experiment) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(e);
    c.paths = 8;
    c.level = fraclab_cli::config::Level::Fixed(6);
    c.seed = 11;
    c
}

#[test]
fn csv_outputs_are_bit_exact_across_runs_and_thread_counts() {
    let mut configs = vec![
        small(Experiment::Simulate),
        small(Experiment::Qv),
        small(Experiment::Hedge),
        small(Experiment::TransactionCosts),
        small(Experiment::Tree),
        small(Experiment::WickTree),
        small(Experiment::Aggregate),
        small(Experiment::Agents),
    ];
    let mut arb = small(Experiment::Arbitrage);
    arb.strategy = Some(StrategyKind::Momentum);
    configs.push(arb);
    for mut c in configs {
        let dirs: Vec<_> = [Some(1), Some(4), Some(4)]
            .into_iter()
            .map(|t| {
                c.threads = t;
                let d = tempfile::tempdir().unwrap();
                run_with_threads(&c).unwrap().write_to_dir(d.path()).unwrap();
                d
            })
            .collect();
        let a = run_with_threads(&c).unwrap();
        for t in &a.tables {
            let name = format!("{}.csv", t.name);
            let first = read(dirs[0].path(), &name);
            for d in &dirs[1..] {
                assert_eq!(first, read(d.path(), &name), "{:?} {name}", c.experiment);
            }
        }
        let stats = |d: &Path| {
            let r = ExperimentReport::from_json(&String::from_utf8(read(d, "report.json")).unwrap())
                .unwrap();
            (r.statistics, r.records)
        };
        assert_eq!(stats(dirs[0].path()), stats(dirs[1].path()));
    }
}

#[test]
fn report_json_round_trips() {
    for e in [Experiment::Simulate, Experiment::Tree, Experiment::Agents] {
        let out = run(&small(e)).unwrap();
        let text = out.report.to_json().unwrap();
        let parsed = ExperimentReport::from_json(&text).unwrap();
        assert_eq!(parsed, out.report);
        assert_eq!(parsed.to_json().unwrap(), text);
        assert_eq!(parsed.schema_version, 1);
    }
}

#[test]
fn embedded_config_reproduces_the_report() {
    let out = run(&small(Experiment::Hedge)).unwrap();
    let again = run(&out.report.config).unwrap();
    assert_eq!(out.report.statistics, again.report.statistics);
    assert_eq!(out.tables, again.tables);
}

#[test]
fn simulate_example_reports_requested_paths() {
    let d = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["run", "simulate", "--model", "fbs", "--h", "0.75", "--level", "10"])
        .args(["--paths", "100", "--seed", "7", "--out"])
        .arg(d.path())
        .status()
        .unwrap();
    assert!(status.success());
    let r = ExperimentReport::from_json(&std::fs::read_to_string(d.path().join("report.json")).unwrap())
        .unwrap();
    assert_eq!(r.records.len(), 100);
    assert_eq!(r.config.seed, 7);
    let csv = std::fs::read_to_string(d.path().join("paths.csv")).unwrap();
    assert!(csv.starts_with("path,time,price\n"));
    assert_eq!(csv.lines().count(), 1 + 100 * 1025);
}

#[test]
fn seed_precedence_flag_env_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"experiment":"tree","n":4,"paths":2,"seed":5}"#).unwrap();
    let seed_of = |env: Option<&str>, flag: Option<&str>| {
        let mut c = bin();
        c.args(["run", "--config"]).arg(&cfg);
        if let Some(e) = env {
            c.env("FRACLAB_SEED", e);
        }
        if let Some(f) = flag {
            c.args(["--seed", f]);
        }
        let out = c.output().unwrap();
        assert!(out.status.success());
        ExperimentReport::from_json(&String::from_utf8(out.stdout).unwrap())
            .unwrap()
            .config
            .seed
    };
    assert_eq!(seed_of(None, None), 5);
    assert_eq!(seed_of(Some("6"), None), 6);
    assert_eq!(seed_of(Some("6"), Some("7")), 7);
}

#[test]
fn exit_codes() {
    let code = |args: &[&str]| bin().args(args).output().unwrap().status.code().unwrap();
    assert_eq!(code(&["run", "nonsense"]), 2);
    assert_eq!(code(&["validate", "simulate", "--model", "fbs", "--h", "0.5"]), 2);
    assert_eq!(code(&["validate", "transaction-costs", "--alpha", "0"]), 2);
    assert_eq!(code(&["validate", "simulate"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"experiment":"simulate","colour":"red"}"#).unwrap();
    assert_eq!(code(&["run", "--config", cfg.to_str().unwrap()]), 2);
}

#[test]
fn qv_ingests_price_csv() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("prices.csv");
    let mut text = String::from("time,price\n");
    let prices = [1.0, 1.1, 1.0, 1.2, 1.1];
    for (i, p) in prices.iter().enumerate() {
        text.push_str(&format!("{},{}\n", 3.0 + i as f64 * 0.25, p));
    }
    std::fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "qv", "--level", "auto", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(out.join("qv.csv")).unwrap();
    let last: Vec<f64> = table
        .lines()
        .last()
        .unwrap()
        .split(',')
        .map(|x| x.parse().unwrap())
        .collect();
    let expected: f64 = prices.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum();
    assert_eq!(last[0], 1.0);
    assert!((last[1] - expected).abs() < 1e-15);
}

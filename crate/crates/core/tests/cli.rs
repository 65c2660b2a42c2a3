use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use dell::benchmark::{parse_benchmark, read_meta, Genre};
use dell::cli::{main_with_args, BENCHMARK_FILE, ENCODER_FILE, MAPPER_FILE};
use dell::encoder::random_encoder;
use dell::metrics::read_report;
use dell::suite::{calibrate_suite, make_suite, CalibrationConfig, RenderConfig, SuiteDescription, SuiteKind, META_FILE};

fn dell<S: AsRef<str>>(args: &[S]) -> i32 {
    main_with_args(std::iter::once("dell").chain(args.iter().map(|s| s.as_ref())))
}

fn s(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

struct Home {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Home {
    fn suite(&self) -> String {
        s(&self.root.join("suite.yaml"))
    }

    fn pretrain(&self, out: &Path, seed: &str) -> i32 {
        dell(&[
            "--seed",
            seed,
            "--suite",
            &self.suite(),
            "pretrain",
            "--out",
            &s(out),
            "--ae-epochs",
            "1",
            "--mapper-episodes",
            "40",
        ])
    }

    fn calibrate(&self, out: &Path) -> i32 {
        dell(&[
            "--seed",
            "3",
            "--suite",
            &self.suite(),
            "calibrate",
            "--out",
            &s(out),
            "--budget",
            "15",
            "--ae-epochs",
            "1",
            "--episodes",
            "5",
        ])
    }

    fn run(&self, out: &Path, extra: &[&str]) -> i32 {
        let mut args = vec![
            "--seed".to_string(),
            "1".into(),
            "--suite".into(),
            self.suite(),
            "run".into(),
            "--checkpoints".into(),
            s(&self.root.join("ckpt")),
            "--benchmark".into(),
            s(&self.root.join("eval").join(BENCHMARK_FILE)),
            "--out".into(),
            s(out),
            "--budget".into(),
            "10".into(),
            "--episodes".into(),
            "2".into(),
        ];
        args.extend(extra.iter().map(|a| a.to_string()));
        dell(&args)
    }
}

/// A small suite pretrained and calibrated once for every test here.
fn home() -> &'static Home {
    static HOME: OnceLock<Home> = OnceLock::new();
    HOME.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let desc = SuiteDescription { pretrain_games: 12, eval_games: 5, ..SuiteDescription::default() };
        desc.write(&root.join("suite.yaml")).unwrap();
        let home = Home { _dir: dir, root };
        assert_eq!(home.pretrain(&home.root.join("ckpt"), "1"), 0);
        assert_eq!(home.calibrate(&home.root.join("eval")), 0);
        home
    })
}

#[test]
fn pretrain_writes_reproducible_checkpoints() {
    let h = home();
    let again = h.root.join("nested/does/not/exist");
    assert_eq!(h.pretrain(&again, "1"), 0);
    for f in [ENCODER_FILE, MAPPER_FILE] {
        let a = std::fs::read(h.root.join("ckpt").join(f)).unwrap();
        let b = std::fs::read(again.join(f)).unwrap();
        assert!(a == b, "{f} differs between identical pretrain runs");
    }
}

#[test]
fn calibrate_writes_valid_metas_and_a_benchmark() {
    let h = home();
    let eval = h.root.join("eval");
    let metas: Vec<_> = (0..5).map(|i| read_meta(&eval.join(format!("eval{i:02}")).join(META_FILE)).unwrap()).collect();
    assert!(metas.iter().all(|m| m.min_reward < m.max_reward));
    let spec = parse_benchmark(&eval.join(BENCHMARK_FILE)).unwrap();
    assert_eq!((spec.alpha, spec.beta), (5, 10));

    let again = h.root.join("eval-again");
    assert_eq!(h.calibrate(&again), 0);
    for i in 0..5 {
        let name = format!("eval{i:02}");
        assert_eq!(
            std::fs::read(eval.join(&name).join(META_FILE)).unwrap(),
            std::fs::read(again.join(&name).join(META_FILE)).unwrap()
        );
    }
}

#[test]
fn zero_reward_game_is_flagged_invalid() {
    let mut suite = make_suite(SuiteKind::Eval, 1, &[Genre::Maze], 4, RenderConfig::default()).unwrap();
    suite.games[0] = suite.games[0].clone().zero_reward();
    let cfg = CalibrationConfig { min_episodes: 3, budget: 5, eval_episodes: 2, ae_epochs: 1 };
    let cal = calibrate_suite(&suite, &random_encoder(0), &cfg, 0).unwrap();
    assert_eq!(cal[0].min_reward, cal[0].max.value);
    assert!(!cal[0].is_valid());
}

#[test]
fn run_writes_log_and_report_and_report_recomputes_it() {
    let h = home();
    let out = h.root.join("run-json");
    assert_eq!(h.run(&out, &["--normalize-timing"]), 0);
    let report = read_report(&out.join("report.json")).unwrap();
    assert_eq!(report.mar.len(), 5);
    assert!(report.ls >= 1);
    assert!((0.0..=1.0).contains(&report.tnmr));

    let recomputed = h.root.join("recomputed.json");
    let code = dell(&[
        "report",
        "--log",
        &s(&out.join("events.jsonl")),
        "--benchmark",
        &s(&h.root.join("eval").join(BENCHMARK_FILE)),
        "--out",
        &s(&recomputed),
    ]);
    assert_eq!(code, 0);
    assert_eq!(std::fs::read(&recomputed).unwrap(), std::fs::read(out.join("report.json")).unwrap());
}

#[test]
fn csv_format_writes_a_leaderboard_row() {
    let h = home();
    let out = h.root.join("run-csv");
    assert_eq!(h.run(&out, &["--format", "csv"]), 0);
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "MS,MG,BS,BG,TNMR,LS,MI,MAR");
    assert_eq!(lines[1].split(',').count(), 8);
}

#[test]
fn meta_bank_run_uses_stored_baselines() {
    let h = home();
    let ckpt = h.root.join("bank-ckpt");
    let code = dell(&[
        "--seed",
        "1",
        "--suite",
        &h.suite(),
        "pretrain",
        "--out",
        &s(&ckpt),
        "--encoder",
        "random",
        "--mapper-episodes",
        "10",
        "--meta-bank",
        "10",
        "--baseline-episodes",
        "10",
    ]);
    assert_eq!(code, 0);
    let out = h.root.join("run-bank");
    let code = dell(&[
        "--seed",
        "1",
        "--suite",
        &h.suite(),
        "run",
        "--checkpoints",
        &s(&ckpt),
        "--benchmark",
        &s(&h.root.join("eval").join(BENCHMARK_FILE)),
        "--out",
        &s(&out),
        "--mapper",
        "meta-bank",
        "--budget",
        "10",
    ]);
    assert_eq!(code, 0);
    let report = read_report(&out.join("report.json")).unwrap();
    assert_eq!(report.provenance.mapper, "meta-bank");
    assert!(out.join("meta-bank").join("1-way.bin").exists());
}

#[test]
fn missing_checkpoint_fails() {
    let h = home();
    let code = dell(&[
        "--suite",
        &h.suite(),
        "run",
        "--checkpoints",
        &s(&h.root.join("no-such-dir")),
        "--benchmark",
        &s(&h.root.join("eval").join(BENCHMARK_FILE)),
        "--out",
        &s(&h.root.join("never")),
    ]);
    assert_ne!(code, 0);
}

#[test]
fn net_mean_prints_the_product() {
    assert_eq!(dell(&["report", "--net-mean", "0.76", "2639.0"]), 0);
    assert!((dell::metrics::net_mean(0.76, 2639.0) - 2005.64).abs() <= 0.05);
    assert_ne!(dell(&["report", "--net-mean", "1.5", "10"]), 0);
}

#[test]
fn malformed_log_fails() {
    let h = home();
    let log = h.root.join("bad.jsonl");
    std::fs::write(&log, "{\"event\":\"session\",\"index\":\"zero\"}\nnot json\n").unwrap();
    let code = dell(&["report", "--log", &s(&log), "--benchmark", &s(&h.root.join("eval").join(BENCHMARK_FILE))]);
    assert_ne!(code, 0);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(dell(&["run", "--frobnicate"]), 2);
}

#[test]
fn binary_prints_net_mean_and_honours_dell_home() {
    let bin = env!("CARGO_BIN_EXE_dell");
    let out = std::process::Command::new(bin).args(["report", "--net-mean", "0.76", "2639.0"]).output().unwrap();
    assert!(out.status.success());
    let printed: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((printed - 2005.64).abs() <= 0.05);

    let home = tempfile::tempdir().unwrap();
    let out = std::process::Command::new(bin).env("DELL_HOME", home.path()).arg("report").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains(home.path().to_str().unwrap()), "{err}");
}

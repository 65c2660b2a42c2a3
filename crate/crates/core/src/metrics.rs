//! Benchmark metrics computed from a run's event log.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{BenchmarkSpec, GameMeta, SCHEMA_VERSION};
use crate::encoder::EncoderKind;
use crate::orchestrator::{Mode, RunConfig, SessionRecord};
use crate::suite::mean;
use crate::{Error, Result};

pub const MB: f64 = 1024.0 * 1024.0;
pub const KB: f64 = 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub harness_version: String,
    pub schema_version: u32,
    pub spec_hash: String,
    pub seed: u64,
    pub alpha: usize,
    pub beta: usize,
    pub encoder: EncoderKind,
    pub mapper: String,
    pub config: RunConfig,
}

impl Provenance {
    pub fn new(spec: &BenchmarkSpec, cfg: &RunConfig, encoder: EncoderKind, mapper: &str) -> Self {
        Self {
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
            spec_hash: spec_hash(spec),
            seed: cfg.seed,
            alpha: spec.alpha,
            beta: spec.beta,
            encoder,
            mapper: mapper.to_string(),
            config: *cfg,
        }
    }
}

/// SHA-256 of the spec's canonical YAML form.
pub fn spec_hash(spec: &BenchmarkSpec) -> String {
    let text = spec.to_yaml().unwrap_or_default();
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    pub ms_mb: f64,
    pub mi_ms: Option<f64>,
    pub ls: usize,
    pub mg_pct: f64,
    pub mg_mb_abs: f64,
    pub bs_kb: f64,
    pub bg_pct: f64,
    pub bg_kb_abs: f64,
    pub mar: Vec<f64>,
    pub tnmr: f64,
    /// Game of each MAR entry.
    pub mar_games: Vec<String>,
    /// Entries taken from post-learn re-evaluation because the game was
    /// never evaluated.
    pub mar_fallback: Vec<bool>,
    /// Mean task-mapper probe latency.
    pub probe_ms: Option<f64>,
    pub provenance: Provenance,
}

/// Deployed model size: encoder, task-mapper and every stored policy.
pub fn model_size_mb(encoder: &Path, mapper: &Path, registry_dir: &Path) -> Result<f64> {
    let size = |p: &Path| -> Result<u64> {
        if !p.exists() {
            return Err(Error::MissingFile(p.to_path_buf()));
        }
        Ok(std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len())
    };
    let mut total = size(encoder)? + size(mapper)?;
    if registry_dir.exists() {
        for entry in std::fs::read_dir(registry_dir).map_err(|e| Error::io(registry_dir, e))? {
            let path = entry.map_err(|e| Error::io(registry_dir, e))?.path();
            if path.extension().is_some_and(|e| e == "pol") {
                total += size(&path)?;
            }
        }
    }
    Ok(total as f64 / MB)
}

pub fn learn_switches(records: &[SessionRecord]) -> usize {
    records.iter().filter(|r| r.mode == Mode::Learn).count()
}

/// Mean percentage and mean absolute growth over learn sessions of a size
/// read by `sizes` as (before, after). Zero when there were no switches.
fn growth(records: &[SessionRecord], sizes: impl Fn(&SessionRecord) -> (u64, u64), unit: f64) -> (f64, f64) {
    let deltas: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.mode == Mode::Learn)
        .map(|r| {
            let (before, after) = sizes(r);
            let d = after as f64 - before as f64;
            (if before == 0 { 0.0 } else { 100.0 * d / before as f64 }, d / unit)
        })
        .collect();
    if deltas.is_empty() {
        return (0.0, 0.0);
    }
    let n = deltas.len() as f64;
    (deltas.iter().map(|d| d.0).sum::<f64>() / n, deltas.iter().map(|d| d.1).sum::<f64>() / n)
}

/// Model growth: (mean percent per switch, mean MB per switch).
pub fn compute_mg(records: &[SessionRecord]) -> (f64, f64) {
    growth(records, |r| (r.model_bytes_before, r.model_bytes_after), MB)
}

/// Buffer growth: (mean percent per switch, mean KB per switch).
pub fn compute_bg(records: &[SessionRecord]) -> (f64, f64) {
    growth(records, |r| (r.buffer_bytes_before, r.buffer_bytes_after), KB)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mar {
    pub games: Vec<String>,
    pub values: Vec<f64>,
    pub fallback: Vec<bool>,
}

/// Per unique game, in first-appearance order: the mean of its
/// evaluation-session means. Learn sessions are excluded unless the game
/// never had an evaluation session.
pub fn compute_mar(records: &[SessionRecord], spec: &BenchmarkSpec) -> Mar {
    let games: Vec<String> = spec.unique_games().into_iter().map(String::from).collect();
    let mut values = Vec::with_capacity(games.len());
    let mut fallback = Vec::with_capacity(games.len());
    for g in &games {
        let evals: Vec<f64> = records
            .iter()
            .filter(|r| &r.game_id == g && r.mode == Mode::Evaluate)
            .map(|r| mean(&r.episode_returns))
            .collect();
        if evals.is_empty() {
            let relearn: Vec<f64> = records
                .iter()
                .filter(|r| &r.game_id == g && !r.relearn_returns.is_empty())
                .map(|r| mean(&r.relearn_returns))
                .collect();
            values.push(mean(&relearn));
            fallback.push(true);
        } else {
            values.push(mean(&evals));
            fallback.push(false);
        }
    }
    Mar { games, values, fallback }
}

/// Mean over games of the min/max-normalised MAR, each clamped to `[0, 1]`.
pub fn compute_tnmr(mar: &[f64], metas: &[&GameMeta]) -> Result<f64> {
    if mar.len() != metas.len() {
        return Err(Error::Shape(format!("{} MAR entries for {} games", mar.len(), metas.len())));
    }
    if mar.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (m, meta) in mar.iter().zip(metas) {
        let range = meta.max_reward - meta.min_reward;
        if range <= 0.0 {
            return Err(Error::validation(format!("degenerate reward range for {}", meta.name)));
        }
        total += ((m - meta.min_reward) / range).clamp(0.0, 1.0);
    }
    Ok(total / mar.len() as f64)
}

/// Mapper accuracy times trained-agent reward, to one decimal.
pub fn net_mean(mapper_accuracy: f64, trained_reward: f64) -> f64 {
    (mapper_accuracy * trained_reward * 10.0).round() / 10.0
}

/// Mean wall-clock per decision over evaluation sessions; absent when no
/// evaluation session recorded a time.
pub fn mean_inference_ms(records: &[SessionRecord]) -> Option<f64> {
    let timed: Vec<(f64, usize)> = records
        .iter()
        .filter(|r| r.mode == Mode::Evaluate)
        .filter_map(|r| r.decision_ms.map(|ms| (ms, r.decisions)))
        .collect();
    let decisions: usize = timed.iter().map(|t| t.1).sum();
    if decisions == 0 {
        return None;
    }
    Some(timed.iter().map(|(ms, n)| ms * *n as f64).sum::<f64>() / decisions as f64)
}

fn mean_probe_ms(records: &[SessionRecord]) -> Option<f64> {
    let ms: Vec<f64> = records.iter().filter_map(|r| r.probe_ms).collect();
    (!ms.is_empty()).then(|| mean(&ms))
}

pub fn compute_report(records: &[SessionRecord], spec: &BenchmarkSpec, provenance: Provenance) -> Result<RunReport> {
    let mar = compute_mar(records, spec);
    let metas: Vec<&GameMeta> = mar.games.iter().map(|g| &spec.games[g]).collect();
    let tnmr = compute_tnmr(&mar.values, &metas)?;
    let (mg_pct, mg_mb_abs) = compute_mg(records);
    let (bg_pct, bg_kb_abs) = compute_bg(records);
    let last = records.last();
    Ok(RunReport {
        version: SCHEMA_VERSION,
        ms_mb: last.map_or(0.0, |r| r.model_bytes_after as f64 / MB),
        mi_ms: mean_inference_ms(records),
        ls: learn_switches(records),
        mg_pct,
        mg_mb_abs,
        bs_kb: last.map_or(0.0, |r| r.buffer_bytes_after as f64 / KB),
        bg_pct,
        bg_kb_abs,
        mar: mar.values,
        tnmr,
        mar_games: mar.games,
        mar_fallback: mar.fallback,
        probe_ms: mean_probe_ms(records),
        provenance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: [&str; 8] = ["MS", "MG", "BS", "BG", "TNMR", "LS", "MI", "MAR"];

pub fn render_report(report: &RunReport, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).map_err(|e| Error::Parse(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let row = [
                report.ms_mb.to_string(),
                report.mg_pct.to_string(),
                report.bs_kb.to_string(),
                report.bg_pct.to_string(),
                report.tnmr.to_string(),
                report.ls.to_string(),
                report.mi_ms.map(|v| v.to_string()).unwrap_or_default(),
                report.mar.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"),
            ];
            w.write_record(CSV_HEADER).and_then(|_| w.write_record(&row)).map_err(|e| Error::Parse(e.to_string()))?;
            w.into_inner().map_err(|e| Error::Parse(e.to_string()))
        }
    }
}

pub fn emit_report(report: &RunReport, path: &Path, format: ReportFormat) -> Result<()> {
    crate::binio::write_file(path, &render_report(report, format)?)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    serde_json::from_slice(&crate::binio::read_file(path)?).map_err(|e| Error::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::Genre;
    use proptest::prelude::*;

    fn meta(name: &str, min: f64, max: f64) -> GameMeta {
        GameMeta {
            name: name.into(),
            genre: Genre::ShootUp.as_str().into(),
            input_text: String::new(),
            min_reward: min,
            max_reward: max,
        }
    }

    fn record(index: usize, game: &str, mode: Mode, returns: &[f64]) -> SessionRecord {
        SessionRecord {
            index,
            game_id: game.into(),
            mode,
            probe: None,
            episode_returns: returns.to_vec(),
            relearn_returns: Vec::new(),
            learned_class: None,
            decision_ms: None,
            decisions: 0,
            probe_ms: None,
            learn_ms: None,
            model_bytes_before: 0,
            model_bytes_after: 0,
            buffer_bytes_before: 0,
            buffer_bytes_after: 0,
            n_after: 0,
        }
    }

    fn switch(before_mb: f64, after_mb: f64) -> SessionRecord {
        let mut r = record(0, "g", Mode::Learn, &[]);
        r.model_bytes_before = (before_mb * MB) as u64;
        r.model_bytes_after = (after_mb * MB) as u64;
        r
    }

    #[test]
    fn model_growth_hand_values() {
        let (pct, abs) = compute_mg(&[switch(240.0, 242.0)]);
        assert!((pct - 0.833_333_333_333).abs() < 1e-9);
        assert!((abs - 2.0).abs() < 1e-12);
        let (pct, _) = compute_mg(&[switch(240.0, 242.0), switch(242.0, 243.0)]);
        let expected = (200.0 / 240.0 + 100.0 / 242.0) / 2.0;
        assert!((pct - expected).abs() < 1e-12);
        assert!((pct - 0.6233).abs() < 1e-4);
        assert_eq!(compute_mg(&[record(0, "g", Mode::Evaluate, &[1.0])]), (0.0, 0.0));
    }

    fn spec2() -> BenchmarkSpec {
        BenchmarkSpec {
            version: SCHEMA_VERSION,
            alpha: 2,
            beta: 4,
            seed: 0,
            sequence: vec!["a".into(), "b".into(), "a".into(), "b".into()],
            games: [("a".to_string(), meta("a", 605.0, 750.0)), ("b".to_string(), meta("b", 0.0, 10.0))]
                .into_iter()
                .collect(),
        }
    }

    #[test]
    fn mar_excludes_learn_sessions() {
        let spec = spec2();
        let records = vec![
            record(0, "a", Mode::Learn, &[]),
            record(1, "b", Mode::Learn, &[1.0]),
            record(2, "a", Mode::Evaluate, &[700.0, 700.0]),
            record(3, "a", Mode::Evaluate, &[800.0]),
        ];
        let mar = compute_mar(&records, &spec);
        assert_eq!(mar.values.len(), 2);
        assert_eq!(mar.values[0], 750.0);
        assert!(!mar.fallback[0]);
        assert!(mar.fallback[1]);
    }

    #[test]
    fn tnmr_hand_values() {
        let air = meta("a", 605.0, 750.0);
        assert!((compute_tnmr(&[677.5], &[&air]).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(compute_tnmr(&[605.0], &[&air]).unwrap(), 0.0);
        assert_eq!(compute_tnmr(&[750.0], &[&air]).unwrap(), 1.0);
        assert_eq!(compute_tnmr(&[0.0], &[&air]).unwrap(), 0.0);
        let flat = meta("f", 3.0, 3.0);
        assert!(compute_tnmr(&[3.0], &[&flat]).is_err());
    }

    #[test]
    fn net_mean_rows() {
        assert!((net_mean(0.76, 300.3) - 228.2).abs() <= 0.05);
        assert!((net_mean(0.74, 440.0) - 325.6).abs() <= 0.05);
        assert!((net_mean(1.0, 750.0) - 750.0).abs() <= 0.05);
    }

    #[test]
    fn inference_time_is_decision_weighted() {
        let mut a = record(0, "a", Mode::Evaluate, &[]);
        a.decision_ms = Some(1.0);
        a.decisions = 10;
        let mut b = a.clone();
        b.decision_ms = Some(3.0);
        assert_eq!(mean_inference_ms(&[a, b]), Some(2.0));
        assert_eq!(mean_inference_ms(&[record(0, "a", Mode::Learn, &[])]), None);
    }

    #[test]
    fn model_size_counts_policies() {
        let dir = tempfile::tempdir().unwrap();
        let (enc, map, reg) = (dir.path().join("e"), dir.path().join("m"), dir.path().join("policies"));
        std::fs::write(&enc, vec![0u8; 1000]).unwrap();
        std::fs::write(&map, vec![0u8; 24]).unwrap();
        assert_eq!(model_size_mb(&enc, &map, &reg).unwrap(), 1024.0 / MB);
        std::fs::create_dir(&reg).unwrap();
        std::fs::write(reg.join("0.pol"), vec![0u8; 18_468]).unwrap();
        assert!((model_size_mb(&enc, &map, &reg).unwrap() - (1024.0 + 18_468.0) / MB).abs() < 1e-15);
        assert!(model_size_mb(&dir.path().join("missing"), &map, &reg).is_err());
    }

    fn report() -> RunReport {
        let spec = spec2();
        let records = vec![
            record(0, "a", Mode::Learn, &[]),
            record(1, "b", Mode::Learn, &[]),
            record(2, "a", Mode::Evaluate, &[700.0]),
            record(3, "b", Mode::Evaluate, &[5.0]),
        ];
        let cfg = RunConfig::default();
        compute_report(&records, &spec, Provenance::new(&spec, &cfg, EncoderKind::Random, "incremental")).unwrap()
    }

    #[test]
    fn report_files_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
            let (a, b) = (dir.path().join(format!("a{name}")), dir.path().join(format!("b{name}")));
            emit_report(&r, &a, fmt).unwrap();
            emit_report(&r, &b, fmt).unwrap();
            assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        }
        assert_eq!(read_report(&dir.path().join("ar.json")).unwrap(), r);
        let csv = String::from_utf8(std::fs::read(dir.path().join("ar.csv")).unwrap()).unwrap();
        assert!(csv.starts_with("MS,MG,BS,BG,TNMR,LS,MI,MAR\n"));
    }

    #[test]
    fn json_keys_are_in_schema_order() {
        let text = String::from_utf8(render_report(&report(), ReportFormat::Json).unwrap()).unwrap();
        let keys = ["ms_mb", "mi_ms", "ls", "mg_pct", "mg_mb_abs", "bs_kb", "bg_pct", "bg_kb_abs", "mar", "tnmr", "provenance"];
        let pos: Vec<usize> = keys.iter().map(|k| text.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    proptest! {
        #[test]
        fn tnmr_is_affine_invariant(
            rows in proptest::collection::vec((-1e3f64..1e3, 1.0f64..1e3, -1e3f64..2e3), 1..6),
            scale in 0.01f64..100.0,
            shift in -1e4f64..1e4,
        ) {
            let metas: Vec<GameMeta> = rows.iter().map(|(min, w, _)| meta("g", *min, min + w)).collect();
            let mar: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let refs: Vec<&GameMeta> = metas.iter().collect();
            let base = compute_tnmr(&mar, &refs).unwrap();
            let scaled: Vec<GameMeta> = metas
                .iter()
                .map(|m| meta("g", m.min_reward * scale + shift, m.max_reward * scale + shift))
                .collect();
            let refs2: Vec<&GameMeta> = scaled.iter().collect();
            let mar2: Vec<f64> = mar.iter().map(|m| m * scale + shift).collect();
            let other = compute_tnmr(&mar2, &refs2).unwrap();
            prop_assert!((base - other).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base));
        }
    }
}

//! Score a hand-written event log and print it as a leaderboard row, plus
//! the net-mean estimate for a few mapper accuracies.

use dell::benchmark::{BenchmarkSpec, GameMeta, SCHEMA_VERSION};
use dell::encoder::EncoderKind;
use dell::metrics::{compute_report, net_mean, render_report, Provenance, ReportFormat};
use dell::orchestrator::{Mode, RunConfig, SessionRecord};

fn session(index: usize, game: &str, mode: Mode, returns: Vec<f64>, model: (u64, u64), buffer: (u64, u64)) -> SessionRecord {
    SessionRecord {
        index,
        game_id: game.into(),
        mode,
        probe: None,
        episode_returns: returns,
        relearn_returns: Vec::new(),
        learned_class: None,
        decision_ms: Some(0.2),
        decisions: 640,
        probe_ms: None,
        learn_ms: None,
        model_bytes_before: model.0,
        model_bytes_after: model.1,
        buffer_bytes_before: buffer.0,
        buffer_bytes_after: buffer.1,
        n_after: 0,
    }
}

fn main() -> dell::Result<()> {
    let meta = |name: &str, min, max| GameMeta { name: name.into(), genre: "paddle".into(), input_text: String::new(), min_reward: min, max_reward: max };
    let spec = BenchmarkSpec {
        version: SCHEMA_VERSION,
        alpha: 2,
        beta: 4,
        seed: 0,
        sequence: vec!["pong".into(), "breakout".into(), "pong".into(), "breakout".into()],
        games: [("pong".into(), meta("pong", 100.0, 300.0)), ("breakout".into(), meta("breakout", 50.0, 90.0))].into_iter().collect(),
    };
    let records = vec![
        session(0, "pong", Mode::Learn, vec![], (240 << 20, 242 << 20), (20, 10_270)),
        session(1, "breakout", Mode::Learn, vec![40.0], (242 << 20, 243 << 20), (10_270, 20_520)),
        session(2, "pong", Mode::Evaluate, vec![250.0, 270.0], (243 << 20, 243 << 20), (20_520, 20_520)),
        session(3, "breakout", Mode::Evaluate, vec![80.0], (243 << 20, 243 << 20), (20_520, 20_520)),
    ];
    let report = compute_report(&records, &spec, Provenance::new(&spec, &RunConfig::default(), EncoderKind::Trained, "incremental"))?;
    print!("{}", String::from_utf8_lossy(&render_report(&report, ReportFormat::Csv)?));
    for acc in [1.0, 0.9, 0.76] {
        println!("net-mean at accuracy {acc}: {}", net_mean(acc, 2639.0));
    }
    Ok(())
}

//! Train a linear policy with the cross-entropy method over frozen
//! embeddings, store it at half precision and check the stored copy acts
//! the same.

use dell::benchmark::Genre;
use dell::encoder::random_encoder;
use dell::policy::{quantize_store, rl_procedure, CemConfig, EncodedPolicy, PolicyRegistry};
use dell::suite::{episode_returns, mean, OraclePolicy, RenderConfig, SyntheticGame};

fn main() -> dell::Result<()> {
    let game = SyntheticGame::new("demo", Genre::ShootUp, 7, RenderConfig::default());
    let encoder = random_encoder(0);
    let outcome = rl_procedure(&game, &encoder, 60, 1, &CemConfig::default())?;
    for (i, m) in outcome.elite_means.iter().enumerate().step_by(5) {
        println!("iteration {i:>3}: elite mean {m:.1}");
    }
    println!("stopped after {} iterations (plateau: {})", outcome.iterations, outcome.plateaued);

    let trained = mean(&episode_returns(&game, &mut EncodedPolicy::new(&encoder, &outcome.policy), 20, 9)?);
    let best = mean(&episode_returns(&game, &mut OraclePolicy(&game), 20, 9)?);
    println!("return {trained:.1} of an optimum {best:.1} ({:.1}%)", 100.0 * trained / best);

    let dir = tempfile::tempdir().expect("temp dir");
    let record = quantize_store(&outcome.policy, 0, &dir.path().join("demo.pol"))?;
    println!("stored {} bytes at {}", record.bytes, record.path.display());
    let mut registry = PolicyRegistry::new(dir.path().join("registry"));
    registry.append(&outcome.policy)?;
    let reloaded = registry.load(0)?;
    let stored = mean(&episode_returns(&game, &mut EncodedPolicy::new(&encoder, &reloaded), 20, 9)?);
    println!("half-precision copy returns {stored:.1}");
    Ok(())
}

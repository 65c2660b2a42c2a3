//! Build a small pretrain suite, play it with a random behaviour policy and
//! pack the frames into the per-game folder layout.

use dell::benchmark::Genre;
use dell::suite::{
    episode_returns, load_pretrain_dataset, make_suite, pack_pretrain_dataset, pixel_statistics, OraclePolicy,
    PackConfig, RenderConfig, SuiteKind, UniformRandomPolicy,
};

fn main() -> dell::Result<()> {
    let suite = make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default())?;
    for game in &suite.games {
        let random = episode_returns(game, &mut UniformRandomPolicy::new(game.action_count, 0), 5, 0)?;
        let best = episode_returns(game, &mut OraclePolicy(game), 5, 0)?;
        let frames = game.sample_steps(64, &mut dell::rng::rng(game.seed)).frames;
        let [mean, std, dx, dy] = pixel_statistics(frames.view());
        println!(
            "{} {:<10} random {:>7.1} optimum {:>7.1}  pixels mean {mean:.3} std {std:.3} grad {dx:.3}/{dy:.3}",
            game.id,
            game.genre.as_str(),
            dell::suite::mean(&random),
            dell::suite::mean(&best)
        );
    }

    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = PackConfig { episodes_per_game: 1, ..PackConfig::default() };
    pack_pretrain_dataset(&suite, dir.path(), &cfg)?;
    let back = load_pretrain_dataset(dir.path())?;
    println!("packed {} frames from {} games into {}", back.len(), back.games.len(), dir.path().display());
    Ok(())
}

//! Pretrain the incremental task-mapper and a fixed-N baseline on encoded
//! pretrain games, then compare N-way accuracy on unseen games.

use dell::benchmark::Genre;
use dell::encoder::random_encoder;
use dell::mapper::{
    class_embeddings, episode_accuracy, meta_baseline, pretrain_taskmapper, BaselineConfig, MapperConfig,
};
use dell::suite::{make_suite, pack_pretrain_dataset, PackConfig, RenderConfig, SuiteKind};

fn main() -> dell::Result<()> {
    let render = RenderConfig::default();
    let pre = make_suite(SuiteKind::Pretrain, 24, &Genre::ALL, 1, render)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let dataset = pack_pretrain_dataset(&pre, dir.path(), &PackConfig { episodes_per_game: 1, ..PackConfig::default() })?;
    let encoder = random_encoder(0);
    let classes = class_embeddings(&dataset, &encoder)?;
    let mapper = pretrain_taskmapper(&classes, &MapperConfig { episodes: 500, ..MapperConfig::default() }, 0)?;

    let unseen = make_suite(SuiteKind::Eval, 20, &Genre::ALL, 1, render)?;
    let held_out: Vec<_> = unseen
        .games
        .iter()
        .map(|g| encoder.encode_batch(g.sample_steps(64, &mut dell::rng::rng(g.seed)).frames.view()))
        .collect::<dell::Result<_>>()?;
    let bcfg = BaselineConfig { episodes: 500, ..BaselineConfig::default() };
    for n in [5, 10, 20] {
        let baseline = meta_baseline(&classes, n, 5, &bcfg, 0)?;
        println!(
            "{n:>2}-way 5-shot  incremental {:.3}  fixed-N baseline {:.3}",
            episode_accuracy(&mapper, &held_out, n, 5, 5, 100, 1)?,
            episode_accuracy(&baseline, &held_out, n, 5, 5, 100, 1)?
        );
    }
    Ok(())
}

//! A full DeLL(3, 6) deployment: learn switches, task inference, policy
//! reuse, then the run's metrics.

use dell::benchmark::{generate_benchmark, Genre};
use dell::encoder::random_encoder;
use dell::mapper::{class_embeddings, pretrain_taskmapper, MapperConfig};
use dell::orchestrator::{run, DeployMapper, RunConfig};
use dell::suite::{calibrate_min_reward, make_suite, pack_pretrain_dataset, PackConfig, RenderConfig, SuiteKind};

fn main() -> dell::Result<()> {
    let render = RenderConfig::default();
    let encoder = random_encoder(0);
    let pre = make_suite(SuiteKind::Pretrain, 12, &Genre::ALL, 1, render)?;
    let dir = tempfile::tempdir().expect("temp dir");
    let dataset = pack_pretrain_dataset(&pre, &dir.path().join("dataset"), &PackConfig { episodes_per_game: 1, ..Default::default() })?;
    let mapper = pretrain_taskmapper(&class_embeddings(&dataset, &encoder)?, &MapperConfig { episodes: 300, ..Default::default() }, 0)?;

    let suite = make_suite(SuiteKind::Eval, 4, &Genre::ALL, 1, render)?;
    let metas: Vec<_> = suite
        .games
        .iter()
        .map(|g| Ok(g.meta(calibrate_min_reward(g, &encoder, 20, 0)?, g.analytic_optimum_return(1024, 0))))
        .collect::<dell::Result<_>>()?;
    let spec = generate_benchmark(3, 6, &metas, 0)?;
    println!("sequence {:?}", spec.sequence);

    let cfg = RunConfig { budget: 40, ..RunConfig::default() };
    let out = run(&spec, &suite, &encoder, DeployMapper::Incremental(mapper), &cfg, &dir.path().join("run"))?;
    for r in &out.records {
        let probe = r.probe.map(|p| format!("class {} ({:.2})", p.class_id, p.confidence)).unwrap_or_else(|| "none".into());
        println!("session {} {} {:?} probe {probe} returns {:?}", r.index, r.game_id, r.mode, r.episode_returns);
    }
    let rep = &out.report;
    println!("LS {} MS {:.2} MB MG {:.3}% BS {:.1} KB BG {:.1}% TNMR {:.3}", rep.ls, rep.ms_mb, rep.mg_pct, rep.bs_kb, rep.bg_pct, rep.tnmr);
    Ok(())
}

//! The `dell` command line: pretrain, calibrate, run and report.
//!
//! Default paths hang off `$DELL_HOME` (or `./dell-home`):
//! `checkpoints/` for pretraining output, `eval/` for calibrated metas and
//! the benchmark file, `runs/seed-<seed>/` for run artifacts.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::benchmark::{generate_benchmark, parse_benchmark, write_benchmark, write_meta, GameMeta};
use crate::encoder::{random_encoder, train_autoencoder, AutoencoderConfig, EncoderModel};
use crate::mapper::{
    class_embeddings, meta_baseline, pretrain_taskmapper, BaselineConfig, MapperConfig, MetaBaseline, TaskMapperModel,
};
use crate::metrics::{compute_report, net_mean, render_report, spec_hash, ReportFormat};
use crate::orchestrator::{event_log_path, read_event_log, run, write_event_log, DeployMapper, MetaBank, RunConfig};
use crate::suite::{calibrate_suite, pack_pretrain_dataset, CalibrationConfig, PackConfig, SuiteDescription, META_FILE};
use crate::{binio, rng, Error, Result};

pub const HOME_VAR: &str = "DELL_HOME";
pub const ENCODER_FILE: &str = "encoder.bin";
pub const MAPPER_FILE: &str = "mapper.bin";
pub const META_BANK_DIR: &str = "meta-bank";
pub const BENCHMARK_FILE: &str = "benchmark.yaml";
pub const SUITE_FILE: &str = "suite.yaml";
pub const REPORT_STEM: &str = "report";

#[derive(Debug, Parser)]
#[command(name = "dell", version, about = "Deployable lifelong-learning benchmark harness")]
pub struct Cli {
    /// Global seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Suite-description file; defaults to `$DELL_HOME/suite.yaml` when it exists.
    #[arg(long, global = true)]
    pub suite: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack the pretrain suite and train the encoder and task-mapper.
    Pretrain(PretrainArgs),
    /// Calibrate the evaluation suite and write a benchmark.
    Calibrate(CalibrateArgs),
    /// Deploy on a benchmark and write the event log and report.
    Run(RunArgs),
    /// Recompute a report from an event log.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EncoderChoice {
    Trained,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapperChoice {
    Incremental,
    MetaBank,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EncoderChoice::Trained)]
    pub encoder: EncoderChoice,
    /// Autoencoder epochs.
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    /// Pseudo-incremental training episodes of the task-mapper.
    #[arg(long)]
    pub mapper_episodes: Option<usize>,
    /// Also train fixed-N baselines for N = 1..=this.
    #[arg(long)]
    pub meta_bank: Option<usize>,
    #[arg(long)]
    pub baseline_episodes: Option<usize>,
    /// Shots per class.
    #[arg(long, default_value_t = 5)]
    pub k_shot: usize,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Directory for meta files and the benchmark.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Episodes behind each minimum-reward estimate.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// CEM budget of the end-to-end agent.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub ae_epochs: Option<usize>,
    #[arg(long, default_value_t = 5)]
    pub alpha: usize,
    #[arg(long, default_value_t = 10)]
    pub beta: usize,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Evaluation episodes per session.
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Probe frames per session.
    #[arg(long)]
    pub probe: Option<usize>,
    #[arg(long)]
    pub k_shot: Option<usize>,
    /// CEM training iterations per learn switch.
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long, value_enum, default_value_t = MapperChoice::Incremental)]
    pub mapper: MapperChoice,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Drop wall-clock fields so two runs compare byte for byte.
    #[arg(long)]
    pub normalize_timing: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Event log; defaults to the run directory for `--seed`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Write here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    pub format: ReportFormat,
    /// Print mapper accuracy times trained-agent reward and exit.
    #[arg(long, num_args = 2, value_names = ["ACCURACY", "REWARD"])]
    pub net_mean: Option<Vec<f64>>,
}

pub fn home() -> PathBuf {
    std::env::var_os(HOME_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("dell-home"))
}

fn or_home(path: &Option<PathBuf>, default: impl FnOnce(PathBuf) -> PathBuf) -> PathBuf {
    path.clone().unwrap_or_else(|| default(home()))
}

fn suite_description(cli: &Cli) -> Result<SuiteDescription> {
    match &cli.suite {
        Some(p) => SuiteDescription::read(p),
        None => {
            let p = home().join(SUITE_FILE);
            if p.exists() {
                SuiteDescription::read(&p)
            } else {
                Ok(SuiteDescription::default())
            }
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_pretrain(cli: &Cli, args: &PretrainArgs) -> Result<()> {
    let out = or_home(&args.out, |h| h.join("checkpoints"));
    create_dir(&out)?;
    let desc = suite_description(cli)?;
    desc.write(&out.join(SUITE_FILE))?;
    let suite = desc.pretrain()?;
    let pack = PackConfig { seed: rng::derive(cli.seed, "pack"), ..PackConfig::default() };
    let dataset = pack_pretrain_dataset(&suite, &out.join("dataset"), &pack)?;
    eprintln!("packed {} frames from {} games", dataset.len(), dataset.games.len());

    let encoder_seed = rng::derive(cli.seed, "encoder");
    let encoder = match args.encoder {
        EncoderChoice::Random => random_encoder(encoder_seed),
        EncoderChoice::Trained => {
            let mut cfg = AutoencoderConfig::default();
            if let Some(e) = args.ae_epochs {
                cfg.epochs = e;
            }
            train_autoencoder(dataset.frames_f32().view(), &cfg, encoder_seed)?
        }
    };
    encoder.save(&out.join(ENCODER_FILE))?;

    let classes = class_embeddings(&dataset, &encoder)?;
    let mut mcfg = MapperConfig { k_shot: args.k_shot, ..MapperConfig::default() };
    if let Some(e) = args.mapper_episodes {
        mcfg.episodes = e;
    }
    pretrain_taskmapper(&classes, &mcfg, rng::derive(cli.seed, "mapper"))?.save(&out.join(MAPPER_FILE))?;

    if let Some(max_n) = args.meta_bank {
        let mut bcfg = BaselineConfig::default();
        if let Some(e) = args.baseline_episodes {
            bcfg.episodes = e;
        }
        for n in 1..=max_n {
            let b = meta_baseline(&classes, n, args.k_shot, &bcfg, rng::derive(cli.seed, "baseline"))?;
            binio::write_file(&out.join(META_BANK_DIR).join(format!("{n}-way.bin")), &b.to_bytes())?;
        }
    }
    eprintln!("checkpoints written to {}", out.display());
    Ok(())
}

pub fn cmd_calibrate(cli: &Cli, args: &CalibrateArgs) -> Result<()> {
    let out = or_home(&args.out, |h| h.join("eval"));
    create_dir(&out)?;
    let desc = suite_description(cli)?;
    desc.write(&out.join(SUITE_FILE))?;
    let suite = desc.eval()?;
    let mut cfg = CalibrationConfig::default();
    if let Some(e) = args.episodes {
        cfg.min_episodes = e;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    if let Some(e) = args.ae_epochs {
        cfg.ae_epochs = e;
    }
    let random = random_encoder(rng::derive(cli.seed, "calibration-encoder"));
    let calibrations = calibrate_suite(&suite, &random, &cfg, rng::derive(cli.seed, "calibrate"))?;
    let mut metas: Vec<GameMeta> = Vec::new();
    for (cal, game) in calibrations.iter().zip(&suite.games) {
        if !cal.is_valid() {
            eprintln!("{}: invalid reward range [{}, {}], skipped", game.id, cal.min_reward, cal.max.value);
            continue;
        }
        if !cal.max.plateaued {
            eprintln!("{}: end-to-end agent hit its budget before plateauing", game.id);
        }
        let meta = cal.meta(game);
        write_meta(&meta, &out.join(&game.id).join(META_FILE))?;
        eprintln!("{}: min {:.2} max {:.2}", game.id, meta.min_reward, meta.max_reward);
        metas.push(meta);
    }
    let spec = generate_benchmark(args.alpha, args.beta, &metas, rng::derive(cli.seed, "benchmark"))?;
    write_benchmark(&spec, &out.join(BENCHMARK_FILE))
}

fn load_meta_bank(dir: &Path) -> Result<MetaBank> {
    let mut baselines = Vec::new();
    loop {
        let p = dir.join(format!("{}-way.bin", baselines.len() + 1));
        if !p.exists() {
            break;
        }
        baselines.push(MetaBaseline::from_bytes(&binio::read_file(&p)?)?);
    }
    if baselines.is_empty() {
        return Err(Error::MissingFile(dir.join("1-way.bin")));
    }
    MetaBank::new(baselines)
}

pub fn run_config(cli: &Cli, args: &RunArgs) -> RunConfig {
    let mut cfg = RunConfig { seed: cli.seed, normalize_timing: args.normalize_timing, ..RunConfig::default() };
    if let Some(e) = args.episodes {
        cfg.eval_episodes = e;
    }
    if let Some(p) = args.probe {
        cfg.probe_size = p;
    }
    if let Some(k) = args.k_shot {
        cfg.k_shot = k;
    }
    if let Some(b) = args.budget {
        cfg.budget = b;
    }
    cfg
}

pub fn cmd_run(cli: &Cli, args: &RunArgs) -> Result<()> {
    let checkpoints = or_home(&args.checkpoints, |h| h.join("checkpoints"));
    let benchmark = or_home(&args.benchmark, |h| h.join("eval").join(BENCHMARK_FILE));
    let out = or_home(&args.out, |h| h.join("runs").join(format!("seed-{}", cli.seed)));
    let spec = parse_benchmark(&benchmark)?;
    let encoder = EncoderModel::load(&checkpoints.join(ENCODER_FILE))?;
    let mapper = match args.mapper {
        MapperChoice::Incremental => DeployMapper::Incremental(TaskMapperModel::load(&checkpoints.join(MAPPER_FILE))?),
        MapperChoice::MetaBank => DeployMapper::MetaBank(load_meta_bank(&checkpoints.join(META_BANK_DIR))?),
    };
    let suite = suite_description(cli)?.eval()?;
    let cfg = run_config(cli, args);
    create_dir(&out)?;
    let outcome = run(&spec, &suite, &encoder, mapper, &cfg, &out)?;
    write_event_log(&event_log_path(&out), &outcome.provenance, &outcome.records)?;
    binio::write_file(&out.join(format!("{REPORT_STEM}.json")), &render_report(&outcome.report, ReportFormat::Json)?)?;
    let rendered = render_report(&outcome.report, args.format)?;
    if args.format == ReportFormat::Csv {
        binio::write_file(&out.join(format!("{REPORT_STEM}.csv")), &rendered)?;
    }
    print!("{}", String::from_utf8_lossy(&rendered));
    Ok(())
}

pub fn cmd_report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    if let Some(pair) = &args.net_mean {
        let (acc, reward) = (pair[0], pair[1]);
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::validation(format!("accuracy {acc} is outside [0, 1]")));
        }
        println!("{}", net_mean(acc, reward));
        return Ok(());
    }
    let log = or_home(&args.log, |h| event_log_path(&h.join("runs").join(format!("seed-{}", cli.seed))));
    let benchmark = or_home(&args.benchmark, |h| h.join("eval").join(BENCHMARK_FILE));
    let spec = parse_benchmark(&benchmark)?;
    let (provenance, records) = read_event_log(&log)?;
    if provenance.spec_hash != spec_hash(&spec) {
        return Err(Error::validation(format!("{} was not produced from {}", log.display(), benchmark.display())));
    }
    let rendered = render_report(&compute_report(&records, &spec, provenance)?, args.format)?;
    match &args.out {
        Some(p) => binio::write_file(p, &rendered),
        None => {
            print!("{}", String::from_utf8_lossy(&rendered));
            Ok(())
        }
    }
}

/// Run a parsed command line; 0 on success, 1 on any error.
pub fn execute(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Pretrain(a) => cmd_pretrain(cli, a),
        Command::Calibrate(a) => cmd_calibrate(cli, a),
        Command::Run(a) => cmd_run(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Parse `args` (including the program name) and execute.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "dell", "--seed", "7", "run", "--episodes", "3", "--probe", "4", "--k-shot", "2", "--budget", "9", "--format",
            "csv",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        let Command::Run(args) = &cli.command else { panic!("expected run") };
        let cfg = run_config(&cli, args);
        assert_eq!((cfg.seed, cfg.eval_episodes, cfg.probe_size, cfg.k_shot, cfg.budget), (7, 3, 4, 2, 9));
        assert_eq!(args.format, ReportFormat::Csv);
    }

    #[test]
    fn net_mean_needs_two_values() {
        assert!(Cli::try_parse_from(["dell", "report", "--net-mean", "0.5"]).is_err());
        assert!(Cli::try_parse_from(["dell", "report", "--net-mean", "0.76", "2639"]).is_ok());
    }
}

//! The deployment loop.
//!
//! For every session of a benchmark the agent probes the game, asks the
//! task-mapper which learnt task it is looking at, replays that task's stored
//! policy and, if the result falls short of the game's minimum reward,
//! switches to learn mode: it trains a new policy, keeps K of the embeddings
//! it saw, and grows the task-mapper by one class.

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::benchmark::{BenchmarkSpec, GameMeta};
use crate::buffer::{selective_sample, SupportBuffer};
use crate::encoder::EncoderModel;
use crate::mapper::{extend_and_adapt, MetaBaseline, TaskMapperModel};
use crate::metrics::{compute_report, Provenance, RunReport};
use crate::policy::{rl_procedure, CemConfig, EncodedPolicy, PolicyRegistry};
use crate::suite::{episode_returns, mean, Suite, SyntheticGame};
use crate::{rng, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Evaluation episodes per session.
    pub eval_episodes: usize,
    /// Frames in each session's probe.
    pub probe_size: usize,
    pub k_shot: usize,
    pub budget: usize,
    pub cem: CemConfig,
    /// Zero every wall-clock field so logs compare byte for byte.
    pub normalize_timing: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_episodes: 5,
            probe_size: 8,
            k_shot: 5,
            budget: 200,
            cem: CemConfig::default(),
            normalize_timing: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Learn,
    Evaluate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub class_id: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub index: usize,
    pub game_id: String,
    pub mode: Mode,
    pub probe: Option<ProbeResult>,
    /// Returns of the evaluation episodes run through the inferred policy.
    pub episode_returns: Vec<f64>,
    /// Returns of the re-evaluation after a learn switch.
    pub relearn_returns: Vec<f64>,
    /// Class created by this session's learn switch.
    pub learned_class: Option<usize>,
    /// Mean wall-clock per decision (encode + act) over `decisions`.
    pub decision_ms: Option<f64>,
    pub decisions: usize,
    pub probe_ms: Option<f64>,
    pub learn_ms: Option<f64>,
    pub model_bytes_before: u64,
    pub model_bytes_after: u64,
    pub buffer_bytes_before: u64,
    pub buffer_bytes_after: u64,
    pub n_after: usize,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogLine {
    Start { provenance: Provenance },
    Session(SessionRecord),
}

pub fn write_event_log(path: &Path, provenance: &Provenance, records: &[SessionRecord]) -> Result<()> {
    let mut out = Vec::new();
    let start = LogLine::Start { provenance: provenance.clone() };
    let lines = std::iter::once(start).chain(records.iter().cloned().map(LogLine::Session));
    for line in lines {
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Parse(e.to_string()))?;
        out.write_all(b"\n").expect("writing to memory");
    }
    crate::binio::write_file(path, &out)
}

pub fn read_event_log(path: &Path) -> Result<(Provenance, Vec<SessionRecord>)> {
    let raw = crate::binio::read_file(path)?;
    let mut provenance = None;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LogLine>(&line)
            .map_err(|e| Error::Parse(format!("{} line {}: {e}", path.display(), i + 1)))?
        {
            LogLine::Start { provenance: p } if provenance.is_none() && records.is_empty() => provenance = Some(p),
            LogLine::Start { .. } => return Err(Error::Parse(format!("unexpected start record on line {}", i + 1))),
            LogLine::Session(r) => records.push(r),
        }
    }
    let provenance = provenance.ok_or_else(|| Error::Parse(format!("{} has no start record", path.display())))?;
    Ok((provenance, records))
}

/// True when an evaluation mean falls strictly below the game's minimum.
pub fn should_switch(mean_eval_return: f64, min_reward: f64) -> bool {
    mean_eval_return < min_reward
}

/// A bank of fixed-N baselines: the N-th learn switch stores the N-way
/// trunk and its N-way head, and earlier entries stay stored.
#[derive(Debug, Clone)]
pub struct MetaBank {
    /// Entry `n - 1` is the `n`-way baseline.
    baselines: Vec<MetaBaseline>,
    heads: Vec<Array2<f32>>,
}

impl MetaBank {
    pub fn new(baselines: Vec<MetaBaseline>) -> Result<Self> {
        for (i, b) in baselines.iter().enumerate() {
            if b.n_way() != i + 1 {
                return Err(Error::validation(format!("bank entry {i} is {}-way", b.n_way())));
            }
        }
        Ok(Self { baselines, heads: Vec::new() })
    }

    pub fn capacity(&self) -> usize {
        self.baselines.len()
    }
}

/// The task identifier used during deployment.
#[derive(Debug, Clone)]
pub enum DeployMapper {
    Incremental(TaskMapperModel),
    MetaBank(MetaBank),
}

impl DeployMapper {
    pub fn name(&self) -> &'static str {
        match self {
            DeployMapper::Incremental(_) => "incremental",
            DeployMapper::MetaBank(_) => "meta-bank",
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            DeployMapper::Incremental(m) => m.n_classes(),
            DeployMapper::MetaBank(b) => b.heads.len(),
        }
    }

    pub fn infer(&self, probe: ArrayView2<f32>) -> Result<(usize, f64)> {
        match self {
            DeployMapper::Incremental(m) => m.infer_task(probe),
            DeployMapper::MetaBank(b) => {
                let n = b.heads.len();
                if n == 0 {
                    return Err(Error::NoClasses);
                }
                b.baselines[n - 1].predict(b.heads[n - 1].view(), probe)
            }
        }
    }

    pub fn extend(&self, buffer: &SupportBuffer) -> Result<DeployMapper> {
        match self {
            DeployMapper::Incremental(m) => Ok(DeployMapper::Incremental(extend_and_adapt(m, buffer)?)),
            DeployMapper::MetaBank(b) => {
                let n = buffer.n_classes();
                let baseline = b.baselines.get(n.wrapping_sub(1)).ok_or_else(|| {
                    Error::Insufficient(format!("no {n}-way baseline in a bank of {}", b.capacity()))
                })?;
                let supports: Vec<_> = (0..n).map(|c| buffer.class(c)).collect();
                let mut next = b.clone();
                next.heads.push(baseline.head(&supports)?);
                Ok(DeployMapper::MetaBank(next))
            }
        }
    }

    /// Serialized bytes of everything this mapper keeps for deployment.
    pub fn size_bytes(&self) -> u64 {
        match self {
            DeployMapper::Incremental(m) => m.size_bytes() as u64,
            DeployMapper::MetaBank(b) => b
                .heads
                .iter()
                .enumerate()
                .map(|(i, _)| (b.baselines[i].trunk_bytes() + b.baselines[i].head_bytes()) as u64)
                .sum(),
        }
    }

    fn save(&self, dir: &Path) -> Result<()> {
        match self {
            DeployMapper::Incremental(m) => m.save(&dir.join("mapper.bin")),
            DeployMapper::MetaBank(b) => {
                for (i, head) in b.heads.iter().enumerate() {
                    let mut w = crate::binio::Writer::new();
                    w.u32(head.nrows() as u32).u32(head.ncols() as u32).f32s(head.iter());
                    let base = dir.join("meta-bank");
                    crate::binio::write_file(&base.join(format!("{}-way.bin", i + 1)), &b.baselines[i].to_bytes())?;
                    crate::binio::write_file(&base.join(format!("{}-way.head", i + 1)), &w.finish())?;
                }
                Ok(())
            }
        }
    }
}

/// Deployment state at a session boundary.
pub struct RunState<'a> {
    pub encoder: &'a EncoderModel,
    pub encoder_bytes: u64,
    pub mapper: DeployMapper,
    pub registry: PolicyRegistry,
    pub buffer: SupportBuffer,
    pub records: Vec<SessionRecord>,
}

impl RunState<'_> {
    pub fn n(&self) -> usize {
        self.registry.len()
    }

    pub fn model_bytes(&self) -> u64 {
        self.encoder_bytes + self.mapper.size_bytes() + self.registry.total_bytes()
    }

    fn check_boundary(&self, session: usize) -> Result<()> {
        let n = self.registry.len();
        let k = self.buffer.k();
        if self.buffer.n_classes() != n || self.buffer.len() != n * k || self.mapper.n_classes() != n {
            return Err(Error::Session {
                session,
                message: format!(
                    "inconsistent state: {n} policies, buffer holds {} entries for {} classes, mapper has {} classes",
                    self.buffer.len(),
                    self.buffer.n_classes(),
                    self.mapper.n_classes()
                ),
            });
        }
        Ok(())
    }
}

pub struct RunOutcome {
    pub records: Vec<SessionRecord>,
    pub report: RunReport,
    pub provenance: Provenance,
    pub mapper: DeployMapper,
    pub buffer: SupportBuffer,
}

fn session_error(session: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Session { .. } => e,
        other => Error::Session { session, message: other.to_string() },
    }
}

/// Play `episodes` of `game` through a stored policy.
fn evaluate(
    game: &SyntheticGame,
    encoder: &EncoderModel,
    registry: &PolicyRegistry,
    class_id: usize,
    episodes: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64, usize)> {
    let policy = registry.load(class_id)?;
    let mut agent = EncodedPolicy::new(encoder, &policy);
    let returns = episode_returns(game, &mut agent, episodes, seed)?;
    Ok((returns, agent.mean_decision_ms(), episodes * game.episode_length))
}

/// Execute every session of `spec` against the games of `suite`.
///
/// Policies are written under `out_dir/policies`, and the final mapper and
/// buffer next to them.
pub fn run(
    spec: &BenchmarkSpec,
    suite: &Suite,
    encoder: &EncoderModel,
    mapper: DeployMapper,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<RunOutcome> {
    spec.validate()?;
    if mapper.n_classes() != 0 {
        return Err(Error::validation("deployment must start from a mapper with no classes"));
    }
    let games: Vec<(&SyntheticGame, &GameMeta)> = spec
        .sequence
        .iter()
        .map(|id| {
            let game = suite
                .game(id)
                .ok_or_else(|| Error::validation(format!("game {id} is not in the evaluation suite")))?;
            Ok((game, &spec.games[id]))
        })
        .collect::<Result<_>>()?;

    let mut state = RunState {
        encoder,
        encoder_bytes: encoder.to_bytes().len() as u64,
        mapper,
        registry: PolicyRegistry::new(out_dir.join("policies")),
        buffer: SupportBuffer::new(cfg.k_shot, encoder.latent_dim()),
        records: Vec::with_capacity(spec.sequence.len()),
    };
    let timing = |ms: f64| if cfg.normalize_timing { None } else { Some(ms) };

    for (index, (game, meta)) in games.into_iter().enumerate() {
        let err = session_error(index);
        let model_bytes_before = state.model_bytes();
        let buffer_bytes_before = state.buffer.size_bytes() as u64;
        let mut record = SessionRecord {
            index,
            game_id: game.id.clone(),
            mode: Mode::Evaluate,
            probe: None,
            episode_returns: Vec::new(),
            relearn_returns: Vec::new(),
            learned_class: None,
            decision_ms: None,
            decisions: 0,
            probe_ms: None,
            learn_ms: None,
            model_bytes_before,
            model_bytes_after: model_bytes_before,
            buffer_bytes_before,
            buffer_bytes_after: buffer_bytes_before,
            n_after: state.n(),
        };

        let eval_seed = rng::derive_indexed(cfg.seed, "eval", index as u64);
        let learn = if state.n() == 0 {
            true
        } else {
            let start = Instant::now();
            let frames = game.sample_steps(cfg.probe_size, &mut rng::stream_indexed(cfg.seed, "probe", index as u64)).frames;
            let probe = encoder.encode_batch(frames.view()).map_err(&err)?;
            let (class_id, confidence) = state.mapper.infer(probe.view()).map_err(&err)?;
            record.probe_ms = timing(start.elapsed().as_secs_f64() * 1e3);
            record.probe = Some(ProbeResult { class_id, confidence });
            let (returns, ms, decisions) =
                evaluate(game, encoder, &state.registry, class_id, cfg.eval_episodes, eval_seed).map_err(&err)?;
            record.decision_ms = timing(ms);
            record.decisions = decisions;
            let switch = should_switch(mean(&returns), meta.min_reward);
            record.episode_returns = returns;
            switch
        };

        if learn {
            record.mode = Mode::Learn;
            let start = Instant::now();
            let learn_seed = rng::derive_indexed(cfg.seed, "learn", index as u64);
            let outcome = rl_procedure(game, encoder, cfg.budget, learn_seed, &cfg.cem).map_err(&err)?;
            let sampled = selective_sample(outcome.collected.view(), cfg.k_shot, learn_seed).map_err(&err)?;
            let class_id = state.n();
            state.buffer = state.buffer.merge(class_id, sampled.view()).map_err(&err)?;
            state.registry.append(&outcome.policy).map_err(&err)?;
            state.mapper = state.mapper.extend(&state.buffer).map_err(&err)?;
            record.learn_ms = timing(start.elapsed().as_secs_f64() * 1e3);
            record.learned_class = Some(class_id);
            let relearn_seed = rng::derive_indexed(cfg.seed, "re-eval", index as u64);
            let (returns, _, _) =
                evaluate(game, encoder, &state.registry, class_id, cfg.eval_episodes, relearn_seed).map_err(&err)?;
            record.relearn_returns = returns;
        }

        record.model_bytes_after = state.model_bytes();
        record.buffer_bytes_after = state.buffer.size_bytes() as u64;
        record.n_after = state.n();
        state.check_boundary(index)?;
        if record.mode == Mode::Learn
            && !(record.model_bytes_after > record.model_bytes_before
                && record.buffer_bytes_after > record.buffer_bytes_before)
        {
            return Err(Error::Session { session: index, message: "learn switch did not grow model and buffer".into() });
        }
        state.records.push(record);
    }

    state.mapper.save(out_dir)?;
    state.buffer.save(&out_dir.join("buffer.bin"))?;
    let provenance = Provenance::new(spec, cfg, encoder.kind(), state.mapper.name());
    let report = compute_report(&state.records, spec, provenance.clone())?;
    Ok(RunOutcome { records: state.records, report, provenance, mapper: state.mapper, buffer: state.buffer })
}

/// Paths of a run's artifacts inside its output directory.
pub fn event_log_path(out_dir: &Path) -> PathBuf {
    out_dir.join("events.jsonl")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_rule_is_strict() {
        assert!(should_switch(500.0, 605.0));
        assert!(!should_switch(605.0, 605.0));
        assert!(!should_switch(750.0, 605.0));
    }
}

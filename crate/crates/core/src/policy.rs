//! Linear policies over frozen embeddings: cross-entropy-method training,
//! half-precision storage and the class-id-indexed registry.

use std::path::{Path, PathBuf};
use std::time::Instant;

use half::f16;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};

use crate::binio::{self, Reader, Writer};
use crate::encoder::EncoderModel;
use crate::suite::{FramePolicy, StepBlock, SyntheticGame};
use crate::{rng, Error, Result, ACTION_COUNT, LATENT_DIM};

const MAGIC: &[u8; 4] = b"DPOL";
pub const POLICY_VERSION: u32 = 1;
/// magic + version + class id + action count + dim.
pub const POLICY_HEADER_BYTES: usize = 4 + 4 * 4;
/// Upper bound on a stored policy file.
pub const MAX_POLICY_BYTES: usize = 1_500_000;

/// Index of the first maximum.
pub fn argmax(xs: ArrayView1<f32>) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearPolicy {
    /// `action_count x dim`.
    pub w: Array2<f32>,
    pub b: Array1<f32>,
}

impl LinearPolicy {
    pub fn zeros(action_count: usize, dim: usize) -> Self {
        Self { w: Array2::zeros((action_count, dim)), b: Array1::zeros(action_count) }
    }

    pub fn action_count(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn act(&self, embedding: ArrayView1<f32>) -> Result<usize> {
        if embedding.len() != self.dim() {
            return Err(Error::Shape(format!(
                "embedding has {} entries, policy expects {}",
                embedding.len(),
                self.dim()
            )));
        }
        Ok(argmax((self.w.dot(&embedding) + &self.b).view()))
    }

    /// Actions for each row of `embeddings`.
    pub fn act_batch(&self, embeddings: ArrayView2<f32>) -> Result<Vec<usize>> {
        if embeddings.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "embeddings have {} columns, policy expects {}",
                embeddings.ncols(),
                self.dim()
            )));
        }
        let logits = embeddings.dot(&self.w.t()) + &self.b;
        Ok(logits.rows().into_iter().map(argmax).collect())
    }

    fn from_flat(flat: ArrayView1<f32>, action_count: usize, dim: usize) -> Self {
        let w = flat.slice(s![..action_count * dim]).to_owned().into_shape_with_order((action_count, dim));
        Self { w: w.expect("flat parameter length"), b: flat.slice(s![action_count * dim..]).to_owned() }
    }

    fn is_finite(&self) -> bool {
        self.w.iter().chain(self.b.iter()).all(|v| v.is_finite())
    }

    /// Half-precision image of the policy as it would be stored.
    pub fn quantized(&self) -> Result<LinearPolicy> {
        let q = |v: &f32| -> Result<f32> { Ok(to_half(*v)?.to_f32()) };
        let w = self.w.iter().map(q).collect::<Result<Vec<_>>>()?;
        let b = self.b.iter().map(q).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            w: Array2::from_shape_vec(self.w.raw_dim(), w).expect("same shape"),
            b: Array1::from(b),
        })
    }

    pub fn to_bytes(&self, class_id: u32) -> Result<Vec<u8>> {
        let mut out = Writer::new();
        out.magic(MAGIC)
            .u32(POLICY_VERSION)
            .u32(class_id)
            .u32(self.action_count() as u32)
            .u32(self.dim() as u32);
        for v in self.w.iter().chain(self.b.iter()) {
            out.u16(to_half(*v)?.to_bits());
        }
        Ok(out.finish())
    }

    /// Parse a policy file, returning its class id and dequantized weights.
    pub fn from_bytes(bytes: &[u8]) -> Result<(u32, LinearPolicy)> {
        let mut r = Reader::new(bytes);
        r.expect_magic(MAGIC)?;
        binio::check_version(POLICY_VERSION, r.u32()?)?;
        let class_id = r.u32()?;
        let actions = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let flat = (0..actions * dim + actions)
            .map(|_| Ok(f16::from_bits(r.u16()?).to_f32()))
            .collect::<Result<Vec<f32>>>()?;
        r.finish()?;
        Ok((class_id, Self::from_flat(Array1::from(flat).view(), actions, dim)))
    }
}

fn to_half(v: f32) -> Result<f16> {
    if !v.is_finite() || v.abs() > f16::MAX.to_f32() {
        return Err(Error::HalfOverflow { value: v });
    }
    Ok(f16::from_f32(v))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRecord {
    pub class_id: u32,
    pub path: PathBuf,
    pub bytes: u64,
}

/// Quantize `policy` to half precision and write it to `path`.
pub fn quantize_store(policy: &LinearPolicy, class_id: u32, path: &Path) -> Result<PolicyRecord> {
    let bytes = policy.to_bytes(class_id)?;
    binio::write_file(path, &bytes)?;
    Ok(PolicyRecord { class_id, path: path.to_path_buf(), bytes: bytes.len() as u64 })
}

pub fn load_policy(path: &Path) -> Result<LinearPolicy> {
    Ok(LinearPolicy::from_bytes(&binio::read_file(path)?)?.1)
}

/// Append-only store of policies under `<dir>/<class_id>.pol`.
#[derive(Debug, Clone)]
pub struct PolicyRegistry {
    dir: PathBuf,
    records: Vec<PolicyRecord>,
}

impl PolicyRegistry {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), records: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PolicyRecord] {
        &self.records
    }

    pub fn path_for(&self, class_id: usize) -> PathBuf {
        self.dir.join(format!("{class_id}.pol"))
    }

    /// Store `policy` under the next class id.
    pub fn append(&mut self, policy: &LinearPolicy) -> Result<PolicyRecord> {
        let class_id = self.records.len();
        let record = quantize_store(policy, class_id as u32, &self.path_for(class_id))?;
        self.records.push(record.clone());
        Ok(record)
    }

    pub fn load(&self, class_id: usize) -> Result<LinearPolicy> {
        let record = self
            .records
            .get(class_id)
            .ok_or_else(|| Error::validation(format!("no policy for class {class_id}")))?;
        let (stored_id, policy) = LinearPolicy::from_bytes(&binio::read_file(&record.path)?)?;
        if stored_id as usize != class_id {
            return Err(Error::Parse(format!("{} holds class {stored_id}", record.path.display())));
        }
        Ok(policy)
    }

    pub fn total_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.bytes).sum()
    }
}

/// Plays a game through a frozen encoder and a linear head, timing each
/// decision (encode + act).
pub struct EncodedPolicy<'a> {
    pub encoder: &'a EncoderModel,
    pub policy: &'a LinearPolicy,
    decisions: usize,
    elapsed_ms: f64,
}

impl<'a> EncodedPolicy<'a> {
    pub fn new(encoder: &'a EncoderModel, policy: &'a LinearPolicy) -> Self {
        Self { encoder, policy, decisions: 0, elapsed_ms: 0.0 }
    }

    /// Mean wall-clock milliseconds per decision so far.
    pub fn mean_decision_ms(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.elapsed_ms / self.decisions as f64
        }
    }
}

impl FramePolicy for EncodedPolicy<'_> {
    fn act_block(&mut self, block: &StepBlock) -> Result<Vec<usize>> {
        let start = Instant::now();
        let z = self.encoder.encode_batch(block.frames.view())?;
        let actions = self.policy.act_batch(z.view())?;
        self.elapsed_ms += start.elapsed().as_secs_f64() * 1e3;
        self.decisions += actions.len();
        Ok(actions)
    }
}

/// Cross-entropy-method settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub initial_std: f32,
    /// Added to the refitted standard deviation so the search never collapses.
    pub noise_floor: f32,
    pub plateau_tolerance: f64,
    pub plateau_window: usize,
    /// Episodes in the fixed training pool that scores every candidate.
    pub training_episodes: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elite_fraction: 0.125,
            initial_std: 0.1,
            noise_floor: 0.005,
            plateau_tolerance: 1e-3,
            plateau_window: 10,
            training_episodes: 4,
        }
    }
}

impl CemConfig {
    pub fn elites(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }
}

#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub policy: LinearPolicy,
    /// Every embedding seen in the training rollouts, one per row.
    pub collected: Array2<f32>,
    /// Mean training return of the elite set after each iteration.
    pub elite_means: Vec<f64>,
    pub iterations: usize,
    /// False when the budget ran out before the plateau test fired.
    pub plateaued: bool,
}

impl RlOutcome {
    pub fn budget_exhausted(&self) -> bool {
        !self.plateaued
    }
}

/// A fixed set of training steps shared by every CEM candidate.
struct TrainingPool<'g> {
    game: &'g SyntheticGame,
    embeddings: Array2<f32>,
    blocks: Vec<StepBlock>,
    episodes: usize,
}

impl TrainingPool<'_> {
    /// Mean episode return of each candidate (rows of `params`).
    fn fitness(&self, params: ArrayView2<f32>) -> Vec<f64> {
        let (a, d) = (self.game.action_count, self.embeddings.ncols());
        let n = params.nrows();
        // stack every candidate's weights so one product scores them all
        let w = params.slice(s![.., ..a * d]).to_owned().into_shape_with_order((n * a, d)).expect("layout");
        let logits = self.embeddings.dot(&w.t());
        let bias = params.slice(s![.., a * d..]);
        let mut totals = vec![0f64; n];
        let steps = self.blocks.iter().flat_map(|b| b.contexts.iter().zip(&b.uniforms));
        for (row, (ctx, &u)) in logits.rows().into_iter().zip(steps) {
            for (c, total) in totals.iter_mut().enumerate() {
                let mut best = 0;
                let mut best_v = f32::NEG_INFINITY;
                for j in 0..a {
                    let v = row[c * a + j] + bias[[c, j]];
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                *total += self.game.step_reward(ctx, best, u);
            }
        }
        totals.into_iter().map(|t| t / self.episodes as f64).collect()
    }
}

/// Train a linear policy for `game` on top of `encoder` with the
/// cross-entropy method.
///
/// Candidates are scored on a fixed pool of training episodes, and the
/// previous elites compete with each new population, so the elite mean never
/// decreases. The returned policy is the final sampling mean.
pub fn rl_procedure(
    game: &SyntheticGame,
    encoder: &EncoderModel,
    budget: usize,
    seed: u64,
    cfg: &CemConfig,
) -> Result<RlOutcome> {
    if budget == 0 {
        return Err(Error::validation("budget must be at least 1"));
    }
    let dim = encoder.latent_dim();
    let a = game.action_count;
    let blocks: Vec<StepBlock> = (0..cfg.training_episodes)
        .map(|e| game.sample_steps(game.episode_length, &mut rng::stream_indexed(seed, "cem-pool", e as u64)))
        .collect();
    let frames = ndarray::concatenate(Axis(0), &blocks.iter().map(|b| b.frames.view()).collect::<Vec<_>>())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let embeddings = encoder.encode_batch(frames.view())?;
    let pool = TrainingPool { game, embeddings, blocks, episodes: cfg.training_episodes };

    let p = a * dim + a;
    let n_elite = cfg.elites();
    let mut mean = Array1::<f32>::zeros(p);
    let mut std = Array1::<f32>::from_elem(p, cfg.initial_std);
    let mut elites: Array2<f32> = Array2::zeros((0, p));
    let mut elite_fit: Vec<f64> = Vec::new();
    let mut elite_means = Vec::with_capacity(budget);
    let mut plateaued = false;
    let mut r = rng::stream(seed, "cem");

    for it in 0..budget {
        let mut pop = Array2::<f32>::zeros((cfg.population, p));
        for mut row in pop.rows_mut() {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&std) {
                let z: f32 = StandardNormal.sample(&mut r);
                *x = m + s * z;
            }
        }
        let mut fit = pool.fitness(pop.view());
        let candidates = ndarray::concatenate![Axis(0), elites, pop];
        let mut all_fit = std::mem::take(&mut elite_fit);
        all_fit.append(&mut fit);

        let mut order: Vec<usize> = (0..all_fit.len()).collect();
        order.sort_by(|&i, &j| all_fit[j].total_cmp(&all_fit[i]).then(i.cmp(&j)));
        order.truncate(n_elite);
        elites = candidates.select(Axis(0), &order);
        elite_fit = order.iter().map(|&i| all_fit[i]).collect();
        elite_means.push(elite_fit.iter().sum::<f64>() / n_elite as f64);

        mean = elites.mean_axis(Axis(0)).expect("non-empty elites");
        std = elites.std_axis(Axis(0), 0.0).mapv(|s| s + cfg.noise_floor);
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite policy parameters at iteration {it}")));
        }

        let flat = all_fit.iter().all(|&f| f == all_fit[0]);
        let stalled = it >= cfg.plateau_window
            && elite_means[it] - elite_means[it - cfg.plateau_window] < cfg.plateau_tolerance;
        if flat || stalled {
            plateaued = true;
            break;
        }
    }

    let policy = LinearPolicy::from_flat(mean.view(), a, dim);
    debug_assert!(policy.is_finite());
    Ok(RlOutcome {
        policy,
        collected: pool.embeddings,
        iterations: elite_means.len(),
        elite_means,
        plateaued,
    })
}

/// A policy with random weights at the encoder's embedding scale, used as
/// the random baseline.
pub fn random_policy(action_count: usize, dim: usize, seed: u64) -> LinearPolicy {
    let mut r = rng::stream(seed, "random-policy");
    let scale = 1.0 / (dim as f32).sqrt();
    let w = Array2::from_shape_simple_fn((action_count, dim), || {
        let z: f32 = StandardNormal.sample(&mut r);
        z * scale
    });
    let b = Array1::from_shape_simple_fn(action_count, || {
        let z: f32 = StandardNormal.sample(&mut r);
        z * scale
    });
    LinearPolicy { w, b }
}

/// Expected size of a stored policy file.
pub const fn policy_file_bytes(action_count: usize, dim: usize) -> usize {
    POLICY_HEADER_BYTES + (action_count * dim + action_count) * 2
}

pub const DEFAULT_POLICY_FILE_BYTES: usize = policy_file_bytes(ACTION_COUNT, LATENT_DIM);

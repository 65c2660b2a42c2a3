//! Synthetic stand-in for the Atari suite.
//!
//! Every game is a contextual bandit dressed up as a visual task. Each step a
//! hidden context vector is drawn; it modulates the rendered 84x84 frame and
//! determines, through the game's hidden weight matrix, the probability that
//! each of the 18 actions scores a point event. Scores are reported
//! cumulatively, like an arcade score counter.
//!
//! Appearance is organised by genre. A genre owns a low-dimensional texture
//! family (a mean texture, a few appearance directions and a context
//! modulation basis); a game is one point in that family. Pretrain and
//! evaluation suites draw different games from the same families, so an
//! encoder fitted on pretrain frames carries over to unseen games of a known
//! genre. Every frame also receives a random global brightness gain and pixel
//! noise.

mod calibrate;
mod dataset;

use std::f32::consts::TAU;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::benchmark::{GameMeta, Genre, SCHEMA_VERSION};
use crate::{rng, Error, Result, ACTION_COUNT, FRAME_PIXELS, FRAME_SIDE};

pub use calibrate::{
    calibrate_max_reward, calibrate_min_reward, calibrate_suite, CalibrationConfig,
    MaxRewardCalibration, SuiteCalibration,
};
pub use dataset::{
    load_pretrain_dataset, pack_pretrain_dataset, GameData, PackConfig, PretrainDataset, META_FILE,
};

/// Dimension of the hidden per-step context.
pub const CONTEXT_DIM: usize = 4;
/// Number of appearance directions per genre family.
pub const APPEARANCE_DIM: usize = 3;
pub const DEFAULT_EPISODE_LENGTH: usize = 128;

/// Genre families are universal: both suites resolve them from this seed.
const GENRE_WORLD_SEED: u64 = 0x00de_11a7_a5ee_d5ee;
const MEAN_TEXTURE_AMPLITUDE: f32 = 0.12;
const CONTEXT_AMPLITUDE: f32 = 0.08;
const REWARD_SHARPNESS: f64 = 3.0;

pub type Context = [f32; CONTEXT_DIM];

/// Rendering knobs shared by every game in a suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderConfig {
    /// Per-frame brightness gain is drawn from `[1 - gain_spread, 1 + gain_spread]`.
    pub gain_spread: f32,
    /// Standard deviation of additive pixel noise.
    pub pixel_noise: f32,
    /// Scale of a game's offset inside its genre family.
    pub appearance_amplitude: f32,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { gain_spread: 0.5, pixel_noise: 0.15, appearance_amplitude: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    Pretrain,
    Eval,
}

impl SuiteKind {
    fn label(self) -> &'static str {
        match self {
            SuiteKind::Pretrain => "pre",
            SuiteKind::Eval => "eval",
        }
    }
}

/// Parameters of a genre's texture family.
#[derive(Debug, Clone)]
struct GenreFamily {
    mean: Vec<f32>,
    appearance: Vec<Vec<f32>>,
    context_basis: Vec<Vec<f32>>,
}

fn pattern(genre: Genre, freq: f32, ph1: f32, ph2: f32) -> Vec<f32> {
    let n = FRAME_SIDE as f32;
    let mut out = Vec::with_capacity(FRAME_PIXELS);
    for row in 0..FRAME_SIDE {
        let y = row as f32 / n;
        for col in 0..FRAME_SIDE {
            let x = col as f32 / n;
            let v = match genre {
                Genre::ShootUp => (TAU * freq * x + ph1).sin(),
                Genre::Paddle => (TAU * freq * y + ph1).sin(),
                Genre::Maze => (TAU * freq * x + ph1).sin() * (TAU * freq * y + ph2).sin(),
                Genre::Platformer => {
                    let (cx, cy) = (0.5 + 0.3 * ph1.cos(), 0.5 + 0.3 * ph2.sin());
                    let s = 0.6 / freq;
                    let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                    2.0 * (-d2 / (2.0 * s * s)).exp() - 0.5
                }
            };
            out.push(v);
        }
    }
    out
}

fn brightness(genre: Genre) -> f32 {
    match genre {
        Genre::ShootUp => 0.35,
        Genre::Maze => 0.45,
        Genre::Paddle => 0.55,
        Genre::Platformer => 0.5,
    }
}

impl GenreFamily {
    fn resolve(genre: Genre) -> Self {
        let mut r = rng::stream(GENRE_WORLD_SEED, genre.as_str());
        let mut draw = |lo: f32, hi: f32| -> (f32, f32, f32) {
            (r.gen_range(lo..hi), r.gen_range(0.0..TAU), r.gen_range(0.0..TAU))
        };
        let (f, a, b) = draw(3.0, 6.0);
        let level = brightness(genre);
        let mean = pattern(genre, f, a, b)
            .into_iter()
            .map(|v| level + MEAN_TEXTURE_AMPLITUDE * v)
            .collect();
        let appearance = (0..APPEARANCE_DIM)
            .map(|_| {
                let (f, a, b) = draw(2.0, 9.0);
                pattern(genre, f, a, b)
            })
            .collect();
        let n = FRAME_SIDE as f32;
        let context_basis = (0..CONTEXT_DIM)
            .map(|_| {
                let fx = r.gen_range(1.0..4.0f32);
                let fy = r.gen_range(1.0..4.0f32);
                let ph = r.gen_range(0.0..TAU);
                (0..FRAME_PIXELS)
                    .map(|i| {
                        let (y, x) = ((i / FRAME_SIDE) as f32 / n, (i % FRAME_SIDE) as f32 / n);
                        (TAU * (fx * x + fy * y) + ph).sin()
                    })
                    .collect()
            })
            .collect();
        Self { mean, appearance, context_basis }
    }
}

/// Observation-generator parameters of one game.
#[derive(Debug, Clone)]
pub struct ObsParams {
    pub appearance: [f32; APPEARANCE_DIM],
    pub render: RenderConfig,
    base: Vec<f32>,
    context_basis: Vec<Vec<f32>>,
}

/// Hidden contextual-bandit reward parameters of one game.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    /// `ACTION_COUNT` rows of `CONTEXT_DIM` weights.
    pub weights: Vec<Context>,
    pub bias: Vec<f32>,
    /// Score added by one point event.
    pub points: f64,
}

impl RewardParams {
    /// Probability that `action` scores in `context`.
    pub fn event_probability(&self, context: &Context, action: usize) -> f64 {
        let w = &self.weights[action];
        let logit: f32 = self.bias[action] + w.iter().zip(context).map(|(a, b)| a * b).sum::<f32>();
        1.0 / (1.0 + (-REWARD_SHARPNESS * f64::from(logit)).exp())
    }

    /// The action with the highest scoring probability (lowest id on ties).
    pub fn best_action(&self, context: &Context) -> usize {
        let mut best = 0;
        let mut best_p = f64::NEG_INFINITY;
        for a in 0..self.weights.len() {
            let p = self.event_probability(context, a);
            if p > best_p {
                best_p = p;
                best = a;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticGame {
    pub id: String,
    pub genre: Genre,
    pub seed: u64,
    pub obs: ObsParams,
    pub reward: RewardParams,
    pub action_count: usize,
    pub episode_length: usize,
}

/// A block of environment steps drawn up front.
///
/// Observations in this suite never depend on the actions taken, so an
/// episode's frames can be rendered before the policy is queried and the
/// policy can decide for the whole block at once.
#[derive(Debug, Clone)]
pub struct StepBlock {
    /// Frames as rows, `n x FRAME_PIXELS`, values in `[0, 1]`.
    pub frames: Array2<f32>,
    /// Hidden contexts. Only oracle policies and tests may look at these.
    pub contexts: Vec<Context>,
    /// Uniform draws deciding each step's point event.
    pub uniforms: Vec<f64>,
}

impl SyntheticGame {
    pub fn new(id: impl Into<String>, genre: Genre, seed: u64, render: RenderConfig) -> Self {
        let family = GenreFamily::resolve(genre);
        let mut r = rng::stream(seed, "game");
        let mut appearance = [0f32; APPEARANCE_DIM];
        for a in appearance.iter_mut() {
            *a = r.gen_range(-1.0..1.0);
        }
        let mut base = family.mean.clone();
        for (theta, dir) in appearance.iter().zip(&family.appearance) {
            for (b, d) in base.iter_mut().zip(dir) {
                *b += render.appearance_amplitude * theta * d;
            }
        }
        let bias_dist = Normal::new(0.0f32, 0.5).unwrap();
        let weights = (0..ACTION_COUNT)
            .map(|_| {
                let mut w = [0f32; CONTEXT_DIM];
                for v in w.iter_mut() {
                    *v = r.sample(StandardNormal);
                }
                w
            })
            .collect();
        let bias = (0..ACTION_COUNT).map(|_| bias_dist.sample(&mut r)).collect();
        let points = f64::from(r.gen_range(5u32..=25));
        Self {
            id: id.into(),
            genre,
            seed,
            obs: ObsParams { appearance, render, base, context_basis: family.context_basis },
            reward: RewardParams { weights, bias, points },
            action_count: ACTION_COUNT,
            episode_length: DEFAULT_EPISODE_LENGTH,
        }
    }

    pub fn with_reward_params(mut self, reward: RewardParams) -> Self {
        assert_eq!(reward.weights.len(), self.action_count);
        assert_eq!(reward.bias.len(), self.action_count);
        self.reward = reward;
        self
    }

    /// The same game with every point event worth nothing.
    pub fn zero_reward(mut self) -> Self {
        self.reward.points = 0.0;
        self
    }

    pub fn with_episode_length(mut self, steps: usize) -> Self {
        self.episode_length = steps;
        self
    }

    /// Draw `n` steps: contexts, rendered frames and event uniforms.
    pub fn sample_steps(&self, n: usize, r: &mut rng::Rng) -> StepBlock {
        let render = self.obs.render;
        let noise = Normal::new(0.0f32, render.pixel_noise.max(0.0)).unwrap();
        let mut frames = Array2::<f32>::zeros((n, FRAME_PIXELS));
        let mut contexts = Vec::with_capacity(n);
        let mut uniforms = Vec::with_capacity(n);
        let mut modulated = vec![0f32; FRAME_PIXELS];
        for mut row in frames.rows_mut() {
            let mut c = [0f32; CONTEXT_DIM];
            for v in c.iter_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
            let gain = 1.0 + render.gain_spread * r.gen_range(-1.0f32..1.0);
            modulated.copy_from_slice(&self.obs.base);
            for (cj, basis) in c.iter().zip(&self.obs.context_basis) {
                let amp = CONTEXT_AMPLITUDE * cj;
                for (m, b) in modulated.iter_mut().zip(basis) {
                    *m += amp * b;
                }
            }
            for (px, m) in row.iter_mut().zip(&modulated) {
                let v = gain * m + noise.sample(r);
                *px = v.clamp(0.0, 1.0);
            }
            contexts.push(c);
            uniforms.push(r.gen::<f64>());
        }
        StepBlock { frames, contexts, uniforms }
    }

    /// Score increment for taking `action` at a step.
    pub fn step_reward(&self, context: &Context, action: usize, uniform: f64) -> f64 {
        if uniform < self.reward.event_probability(context, action) {
            self.reward.points
        } else {
            0.0
        }
    }

    /// Expected return of the brute-force optimal policy, estimated over
    /// `contexts` seeded context draws.
    pub fn analytic_optimum_return(&self, contexts: usize, seed: u64) -> f64 {
        let mut r = rng::stream(seed, "optimum");
        let mut total = 0.0;
        for _ in 0..contexts {
            let mut c = [0f32; CONTEXT_DIM];
            for v in c.iter_mut() {
                *v = r.gen_range(-1.0..1.0);
            }
            let a = self.reward.best_action(&c);
            total += self.reward.event_probability(&c, a);
        }
        total / contexts as f64 * self.reward.points * self.episode_length as f64
    }

    pub fn meta(&self, min_reward: f64, max_reward: f64) -> GameMeta {
        GameMeta {
            name: self.id.clone(),
            genre: self.genre.as_str().to_string(),
            input_text: self.genre.blurb().to_string(),
            min_reward,
            max_reward,
        }
    }
}

/// Anything that chooses actions for a block of observations.
pub trait FramePolicy {
    fn act_block(&mut self, block: &StepBlock) -> Result<Vec<usize>>;
}

pub struct UniformRandomPolicy {
    rng: rng::Rng,
    actions: usize,
}

impl UniformRandomPolicy {
    pub fn new(actions: usize, seed: u64) -> Self {
        Self { rng: rng::stream(seed, "uniform-policy"), actions }
    }
}

impl FramePolicy for UniformRandomPolicy {
    fn act_block(&mut self, block: &StepBlock) -> Result<Vec<usize>> {
        Ok((0..block.contexts.len()).map(|_| self.rng.gen_range(0..self.actions)).collect())
    }
}

pub struct ConstantPolicy(pub usize);

impl FramePolicy for ConstantPolicy {
    fn act_block(&mut self, block: &StepBlock) -> Result<Vec<usize>> {
        Ok(vec![self.0; block.contexts.len()])
    }
}

/// Acts by the game's hidden reward weights.
pub struct OraclePolicy<'a>(pub &'a SyntheticGame);

impl FramePolicy for OraclePolicy<'_> {
    fn act_block(&mut self, block: &StepBlock) -> Result<Vec<usize>> {
        Ok(block.contexts.iter().map(|c| self.0.reward.best_action(c)).collect())
    }
}

/// Normalised per-step reward: 1 when the score went up, else 0.
///
/// Scores are cumulative, so a drop should not occur; if one does it maps
/// to 0 like an unchanged score.
pub fn normalize_reward(r_t: f64, r_prev: f64) -> u8 {
    u8::from(r_t - r_prev > 0.0)
}

#[derive(Debug, Clone)]
pub struct EpisodeTrace {
    pub observations: Array2<f32>,
    /// Cumulative score after each step.
    pub raw_rewards: Vec<f64>,
    pub actions: Vec<usize>,
    pub normalized_rewards: Vec<u8>,
}

impl EpisodeTrace {
    pub fn episode_return(&self) -> f64 {
        self.raw_rewards.last().copied().unwrap_or(0.0)
    }
}

struct Played {
    block: StepBlock,
    actions: Vec<usize>,
    scores: Vec<f64>,
}

fn play_episode(
    game: &SyntheticGame,
    policy: &mut dyn FramePolicy,
    episode_seed: u64,
) -> Result<Played> {
    let mut r = rng::rng(episode_seed);
    let block = game.sample_steps(game.episode_length, &mut r);
    let actions = policy.act_block(&block)?;
    if actions.len() != block.contexts.len() {
        return Err(Error::Shape(format!(
            "policy returned {} actions for {} steps",
            actions.len(),
            block.contexts.len()
        )));
    }
    let mut score = 0.0;
    let mut scores = Vec::with_capacity(actions.len());
    for ((c, &a), &u) in block.contexts.iter().zip(&actions).zip(&block.uniforms) {
        if a >= game.action_count {
            return Err(Error::ActionOutOfRange { action: a, action_count: game.action_count });
        }
        score += game.step_reward(c, a, u);
        scores.push(score);
    }
    Ok(Played { block, actions, scores })
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    rng::derive_indexed(seed, "episode", episode as u64)
}

/// Play `episodes` seeded episodes and keep full traces.
pub fn rollout(
    game: &SyntheticGame,
    policy: &mut dyn FramePolicy,
    episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    (0..episodes)
        .map(|e| {
            let played = play_episode(game, policy, episode_seed(seed, e))?;
            let mut prev = 0.0;
            let normalized_rewards = played
                .scores
                .iter()
                .map(|&s| {
                    let n = normalize_reward(s, prev);
                    prev = s;
                    n
                })
                .collect();
            Ok(EpisodeTrace {
                observations: played.block.frames,
                raw_rewards: played.scores,
                actions: played.actions,
                normalized_rewards,
            })
        })
        .collect()
}

/// Episode returns of the same episodes [`rollout`] would play, without
/// retaining frames.
pub fn episode_returns(
    game: &SyntheticGame,
    policy: &mut dyn FramePolicy,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .map(|e| {
            let played = play_episode(game, policy, episode_seed(seed, e))?;
            Ok(played.scores.last().copied().unwrap_or(0.0))
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct Suite {
    pub kind: SuiteKind,
    pub seed: u64,
    pub games: Vec<SyntheticGame>,
}

impl Suite {
    pub fn game(&self, id: &str) -> Option<&SyntheticGame> {
        self.games.iter().find(|g| g.id == id)
    }

    pub fn genres(&self) -> Vec<Genre> {
        let mut gs: Vec<Genre> = self.games.iter().map(|g| g.genre).collect();
        gs.sort();
        gs.dedup();
        gs
    }
}

/// Build a suite of `n_games` games spread round-robin over `genres`.
pub fn make_suite(
    kind: SuiteKind,
    n_games: usize,
    genres: &[Genre],
    seed: u64,
    render: RenderConfig,
) -> Result<Suite> {
    if genres.is_empty() {
        return Err(Error::validation("suite needs at least one genre"));
    }
    if n_games < genres.len() {
        return Err(Error::validation(format!(
            "{n_games} games cannot cover {} genres",
            genres.len()
        )));
    }
    let games = (0..n_games)
        .map(|i| {
            let id = format!("{}{i:02}", kind.label());
            let game_seed = rng::derive_indexed(seed, kind.label(), i as u64);
            SyntheticGame::new(id, genres[i % genres.len()], game_seed, render)
        })
        .collect();
    Ok(Suite { kind, seed, games })
}

/// The suite-description file: the closed genre list plus how to rebuild the
/// pretrain and evaluation suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteDescription {
    pub version: u32,
    pub seed: u64,
    pub genres: Vec<Genre>,
    pub pretrain_games: usize,
    pub eval_games: usize,
    #[serde(default)]
    pub render: RenderConfig,
}

impl Default for SuiteDescription {
    fn default() -> Self {
        Self {
            version: SCHEMA_VERSION,
            seed: 1,
            genres: Genre::ALL.to_vec(),
            pretrain_games: 24,
            eval_games: 5,
            render: RenderConfig::default(),
        }
    }
}

impl SuiteDescription {
    pub fn pretrain(&self) -> Result<Suite> {
        make_suite(SuiteKind::Pretrain, self.pretrain_games, &self.genres, self.seed, self.render)
    }

    pub fn eval(&self) -> Result<Suite> {
        make_suite(SuiteKind::Eval, self.eval_games, &self.genres, self.seed, self.render)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = crate::binio::read_file(path)?;
        let d: SuiteDescription =
            serde_yaml::from_slice(&raw).map_err(|e| Error::Parse(e.to_string()))?;
        crate::binio::check_version(SCHEMA_VERSION, d.version)?;
        if d.genres.is_empty() {
            return Err(Error::validation("suite description lists no genres"));
        }
        Ok(d)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_yaml::to_string(self).map_err(|e| Error::Parse(e.to_string()))?;
        crate::binio::write_file(path, text.as_bytes())
    }
}

/// Cheap appearance statistics of a frame block: mean, standard deviation,
/// mean absolute horizontal gradient, mean absolute vertical gradient.
pub fn pixel_statistics(frames: ArrayView2<f32>) -> [f64; 4] {
    let n = frames.nrows().max(1) as f64;
    let mut stats = [0f64; 4];
    for row in frames.rows() {
        let px = row.as_slice().expect("frames are contiguous rows");
        let m = px.iter().map(|&v| f64::from(v)).sum::<f64>() / px.len() as f64;
        let var = px.iter().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / px.len() as f64;
        let mut dx = 0.0;
        let mut dy = 0.0;
        for r in 0..FRAME_SIDE {
            for c in 0..FRAME_SIDE {
                let v = f64::from(px[r * FRAME_SIDE + c]);
                if c + 1 < FRAME_SIDE {
                    dx += (f64::from(px[r * FRAME_SIDE + c + 1]) - v).abs();
                }
                if r + 1 < FRAME_SIDE {
                    dy += (f64::from(px[(r + 1) * FRAME_SIDE + c]) - v).abs();
                }
            }
        }
        let pairs = (FRAME_SIDE * (FRAME_SIDE - 1)) as f64;
        stats[0] += m;
        stats[1] += var.sqrt();
        stats[2] += dx / pairs;
        stats[3] += dy / pairs;
    }
    stats.map(|s| s / n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn game() -> SyntheticGame {
        SyntheticGame::new("g", Genre::ShootUp, 42, RenderConfig::default())
    }

    #[test]
    fn normalize_reward_cases() {
        assert_eq!(normalize_reward(100.0, 100.0), 0);
        assert_eq!(normalize_reward(150.0, 100.0), 1);
        assert_eq!(normalize_reward(90.0, 100.0), 0);
    }

    #[test]
    fn frames_are_in_range_and_shaped() {
        let block = game().sample_steps(16, &mut rng::rng(1));
        assert_eq!(block.frames.dim(), (16, FRAME_PIXELS));
        assert!(block.frames.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn uniform_rollout_has_episode_length_steps() {
        let g = game();
        let traces = rollout(&g, &mut UniformRandomPolicy::new(ACTION_COUNT, 0), 1, 5).unwrap();
        let t = &traces[0];
        assert_eq!(t.observations.nrows(), g.episode_length);
        assert_eq!(t.raw_rewards.len(), g.episode_length);
        assert_eq!(t.actions.len(), g.episode_length);
        assert_eq!(t.normalized_rewards.len(), g.episode_length);
        assert!(t.raw_rewards.windows(2).all(|w| w[1] >= w[0]));
        assert!(t.normalized_rewards.iter().all(|&r| r <= 1));
    }

    #[test]
    fn rollout_is_deterministic() {
        let g = game();
        let a = rollout(&g, &mut ConstantPolicy(3), 2, 9).unwrap();
        let b = rollout(&g, &mut ConstantPolicy(3), 2, 9).unwrap();
        assert_eq!(a[1].raw_rewards, b[1].raw_rewards);
        assert_eq!(a[1].observations, b[1].observations);
        let r = episode_returns(&g, &mut ConstantPolicy(3), 2, 9).unwrap();
        assert_eq!(r[1], a[1].episode_return());
    }

    #[test]
    fn out_of_range_action_is_rejected() {
        let err = rollout(&game(), &mut ConstantPolicy(ACTION_COUNT), 1, 0).unwrap_err();
        assert!(matches!(err, Error::ActionOutOfRange { .. }));
    }

    #[test]
    fn oracle_beats_uniform() {
        // Monte Carlo over 100 seeded episodes for both policies.
        let g = game();
        let oracle = mean(&episode_returns(&g, &mut OraclePolicy(&g), 100, 3).unwrap());
        let uniform =
            mean(&episode_returns(&g, &mut UniformRandomPolicy::new(ACTION_COUNT, 1), 100, 3).unwrap());
        assert!(oracle >= uniform, "oracle {oracle} < uniform {uniform}");
    }

    #[test]
    fn uniformly_worst_action_does_no_better_than_uniform() {
        let g = game();
        let mut reward = g.reward.clone();
        reward.weights[0] = [0.0; CONTEXT_DIM];
        reward.bias[0] = -10.0;
        for b in reward.bias.iter_mut().skip(1) {
            *b = b.max(-2.0);
        }
        let g = g.with_reward_params(reward);
        let worst = mean(&episode_returns(&g, &mut ConstantPolicy(0), 100, 3).unwrap());
        let uniform =
            mean(&episode_returns(&g, &mut UniformRandomPolicy::new(ACTION_COUNT, 1), 100, 3).unwrap());
        assert!(worst <= uniform, "worst {worst} > uniform {uniform}");
    }

    #[test]
    fn zero_reward_game_scores_nothing() {
        let g = game().zero_reward();
        let r = episode_returns(&g, &mut OraclePolicy(&g), 3, 0).unwrap();
        assert!(r.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn make_suite_covers_genres_and_is_deterministic() {
        let s = make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default()).unwrap();
        assert_eq!(s.games.len(), 8);
        assert_eq!(s.genres(), Genre::ALL.to_vec());
        let again = make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default()).unwrap();
        let ids: Vec<_> = s.games.iter().map(|g| (&g.id, g.seed)).collect();
        let ids2: Vec<_> = again.games.iter().map(|g| (&g.id, g.seed)).collect();
        assert_eq!(ids, ids2);
        assert_eq!(s.games[3].obs.base, again.games[3].obs.base);
    }

    #[test]
    fn pretrain_and_eval_suites_are_disjoint() {
        let pre = make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default()).unwrap();
        let ev = make_suite(SuiteKind::Eval, 5, &Genre::ALL, 2, RenderConfig::default()).unwrap();
        for g in &ev.games {
            assert!(pre.games.iter().all(|p| p.id != g.id && p.seed != g.seed));
        }
        // same seed still yields disjoint suites
        let ev1 = make_suite(SuiteKind::Eval, 8, &Genre::ALL, 1, RenderConfig::default()).unwrap();
        for g in &ev1.games {
            assert!(pre.games.iter().all(|p| p.id != g.id && p.seed != g.seed));
        }
    }

    #[test]
    fn make_suite_errors() {
        assert!(make_suite(SuiteKind::Eval, 3, &[], 0, RenderConfig::default()).is_err());
        assert!(make_suite(SuiteKind::Eval, 3, &Genre::ALL, 0, RenderConfig::default()).is_err());
    }

    #[test]
    fn genres_are_separable_by_pixel_statistics() {
        let s = make_suite(SuiteKind::Eval, 12, &Genre::ALL, 4, RenderConfig::default()).unwrap();
        let stats: Vec<_> = s
            .games
            .iter()
            .map(|g| pixel_statistics(g.sample_steps(20, &mut rng::rng(g.seed)).frames.view()))
            .collect();
        let dist = |a: &[f64; 4], b: &[f64; 4]| -> f64 {
            a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
        };
        let (mut same, mut cross) = (Vec::new(), Vec::new());
        for i in 0..s.games.len() {
            for j in i + 1..s.games.len() {
                let d = dist(&stats[i], &stats[j]);
                if s.games[i].genre == s.games[j].genre {
                    same.push(d);
                } else {
                    cross.push(d);
                }
            }
        }
        assert!(mean(&cross) > mean(&same), "cross {} <= same {}", mean(&cross), mean(&same));
    }

    #[test]
    fn suite_description_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("suite.yaml");
        let d = SuiteDescription::default();
        d.write(&p).unwrap();
        assert_eq!(SuiteDescription::read(&p).unwrap(), d);
    }
}

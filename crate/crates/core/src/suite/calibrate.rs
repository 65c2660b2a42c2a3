//! Per-game minimum and maximum reward calibration.

use serde::{Deserialize, Serialize};

use super::{episode_returns, mean, Suite, SyntheticGame};
use crate::benchmark::GameMeta;
use crate::encoder::{train_autoencoder, AutoencoderConfig, EncoderModel};
use crate::policy::{random_policy, rl_procedure, CemConfig, EncodedPolicy};
use crate::{rng, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub min_episodes: usize,
    pub budget: usize,
    /// Episodes used to score the end-to-end agent.
    pub eval_episodes: usize,
    /// Epochs of the game-specific autoencoder under the end-to-end agent.
    pub ae_epochs: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { min_episodes: 100, budget: 200, eval_episodes: 20, ae_epochs: 10 }
    }
}

/// Mean return of a random linear head over a frozen random encoder.
pub fn calibrate_min_reward(
    game: &SyntheticGame,
    encoder: &EncoderModel,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    let head = random_policy(game.action_count, encoder.latent_dim(), rng::derive(seed, &game.id));
    let mut agent = EncodedPolicy::new(encoder, &head);
    let returns = episode_returns(game, &mut agent, episodes.max(1), rng::derive(seed, "min-eval"))?;
    Ok(mean(&returns))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxRewardCalibration {
    pub value: f64,
    pub plateaued: bool,
}

/// Mean return of an agent whose encoder is fitted to this game's own frames
/// and whose head is trained by the deployment RL procedure.
pub fn calibrate_max_reward(
    game: &SyntheticGame,
    budget: usize,
    seed: u64,
    cfg: &CalibrationConfig,
) -> Result<MaxRewardCalibration> {
    let cem = CemConfig::default();
    let frames = {
        let mut r = rng::stream(seed, "e2e-frames");
        game.sample_steps(cem.training_episodes * game.episode_length, &mut r).frames
    };
    let ae = AutoencoderConfig { epochs: cfg.ae_epochs, ..AutoencoderConfig::default() };
    let encoder = train_autoencoder(frames.view(), &ae, rng::derive(seed, "e2e-encoder"))?;
    let outcome = rl_procedure(game, &encoder, budget, rng::derive(seed, "e2e-cem"), &cem)?;
    let mut agent = EncodedPolicy::new(&encoder, &outcome.policy);
    let returns = episode_returns(game, &mut agent, cfg.eval_episodes.max(1), rng::derive(seed, "e2e-eval"))?;
    Ok(MaxRewardCalibration { value: mean(&returns), plateaued: outcome.plateaued })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCalibration {
    pub game_id: String,
    pub min_reward: f64,
    pub max: MaxRewardCalibration,
}

impl SuiteCalibration {
    /// Usable as a meta record only when the range is non-degenerate.
    pub fn is_valid(&self) -> bool {
        self.max.value > self.min_reward
    }

    pub fn meta(&self, game: &SyntheticGame) -> GameMeta {
        game.meta(self.min_reward, self.max.value)
    }
}

/// Calibrate every game of `suite`.
pub fn calibrate_suite(
    suite: &Suite,
    random: &EncoderModel,
    cfg: &CalibrationConfig,
    seed: u64,
) -> Result<Vec<SuiteCalibration>> {
    suite
        .games
        .iter()
        .map(|g| {
            let s = rng::derive(seed, &g.id);
            Ok(SuiteCalibration {
                game_id: g.id.clone(),
                min_reward: calibrate_min_reward(g, random, cfg.min_episodes, s)?,
                max: calibrate_max_reward(g, cfg.budget, s, cfg)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::Genre;
    use crate::encoder::random_encoder;
    use crate::suite::{OraclePolicy, RenderConfig};

    #[test]
    fn min_reward_is_deterministic_and_zero_on_zero_game() {
        let enc = random_encoder(0);
        let g = SyntheticGame::new("g", Genre::Paddle, 3, RenderConfig::default());
        let a = calibrate_min_reward(&g, &enc, 10, 1).unwrap();
        assert_eq!(a, calibrate_min_reward(&g, &enc, 10, 1).unwrap());
        assert_eq!(calibrate_min_reward(&g.zero_reward(), &enc, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn budget_one_is_not_plateaued() {
        let g = SyntheticGame::new("g", Genre::Maze, 3, RenderConfig::default());
        let cfg = CalibrationConfig { ae_epochs: 1, eval_episodes: 2, ..Default::default() };
        let m = calibrate_max_reward(&g, 1, 0, &cfg).unwrap();
        assert!(!m.plateaued);
        assert!(m.value.is_finite());
    }

    #[test]
    fn zero_reward_game_max_is_zero() {
        let g = SyntheticGame::new("g", Genre::Maze, 3, RenderConfig::default()).zero_reward();
        let cfg = CalibrationConfig { ae_epochs: 1, eval_episodes: 2, ..Default::default() };
        let m = calibrate_max_reward(&g, 50, 0, &cfg).unwrap();
        assert_eq!(m.value, 0.0);
        assert!(m.plateaued);
    }

    #[test]
    #[ignore = "slow: full-budget end-to-end calibration"]
    fn generous_budget_reaches_optimum() {
        let g = SyntheticGame::new("g", Genre::ShootUp, 21, RenderConfig::default());
        let m = calibrate_max_reward(&g, 200, 0, &CalibrationConfig::default()).unwrap();
        let opt = mean(&episode_returns(&g, &mut OraclePolicy(&g), 100, 9).unwrap());
        assert!(m.value >= 0.95 * opt, "{} vs optimum {opt}", m.value);
    }
}

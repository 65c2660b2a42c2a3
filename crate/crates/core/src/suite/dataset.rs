//! The pretrain dataset on disk: one folder per game holding chunked
//! observation/reward arrays and the game's meta file.
//!
//! ```text
//! <root>/<game_id>/meta.yaml
//! <root>/<game_id>/chunk_<k>.obs.npy   u8 [n, 84, 84]
//! <root>/<game_id>/chunk_<k>.rew.npy   u8 [n], values in {0, 1}
//! ```

use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, Axis};
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use super::{rollout, Suite, SuiteKind, UniformRandomPolicy};
use crate::benchmark::{read_meta, write_meta, GameMeta, Genre};
use crate::encoder::random_encoder;
use crate::{rng, Error, Result, FRAME_PIXELS, FRAME_SIDE};

pub const META_FILE: &str = "meta.yaml";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackConfig {
    pub episodes_per_game: usize,
    pub chunk_size: usize,
    /// Episodes behind each game's minimum-reward estimate.
    pub min_reward_episodes: usize,
    pub seed: u64,
}

impl Default for PackConfig {
    fn default() -> Self {
        Self { episodes_per_game: 2, chunk_size: 128, min_reward_episodes: 10, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GameData {
    pub meta: GameMeta,
    /// One flattened frame per row.
    pub frames: Array2<u8>,
    pub rewards: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct PretrainDataset {
    pub games: Vec<GameData>,
}

impl PretrainDataset {
    /// Every frame as `[0, 1]` floats, stacked in game order.
    pub fn frames_f32(&self) -> Array2<f32> {
        let views: Vec<_> = self.games.iter().map(|g| g.frames.view()).collect();
        ndarray::concatenate(Axis(0), &views)
            .map(|a| a.mapv(|v| f32::from(v) / 255.0))
            .unwrap_or_else(|_| Array2::zeros((0, FRAME_PIXELS)))
    }

    pub fn len(&self) -> usize {
        self.games.iter().map(|g| g.frames.nrows()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn genres(&self) -> Result<Vec<Genre>> {
        self.games.iter().map(|g| g.meta.genre()).collect()
    }
}

/// Quantize a `[0, 1]` frame to bytes.
pub fn quantize_frame(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Play uniform-random episodes on every game of a pretrain suite and write
/// them to `out_dir`.
///
/// The meta record's minimum comes from a random frozen encoder with a
/// random head; its maximum is the game's analytic optimum.
pub fn pack_pretrain_dataset(suite: &Suite, out_dir: &Path, cfg: &PackConfig) -> Result<PretrainDataset> {
    if suite.kind != SuiteKind::Pretrain {
        return Err(Error::validation("only a pretrain suite can be packed"));
    }
    if cfg.chunk_size == 0 {
        return Err(Error::validation("chunk size must be positive"));
    }
    let random = random_encoder(rng::derive(cfg.seed, "pack-random-encoder"));
    let mut games = Vec::with_capacity(suite.games.len());
    for game in &suite.games {
        let seed = rng::derive(cfg.seed, &game.id);
        let mut behaviour = UniformRandomPolicy::new(game.action_count, seed);
        let traces = rollout(game, &mut behaviour, cfg.episodes_per_game, seed)?;
        let frames = ndarray::concatenate(Axis(0), &traces.iter().map(|t| t.observations.view()).collect::<Vec<_>>())
            .map_err(|e| Error::Shape(e.to_string()))?
            .mapv(quantize_frame);
        let rewards: Vec<u8> = traces.iter().flat_map(|t| t.normalized_rewards.iter().copied()).collect();

        let min = super::calibrate_min_reward(game, &random, cfg.min_reward_episodes, seed)?;
        let max = game.analytic_optimum_return(4096, seed).max(min + 1.0);
        let meta = game.meta(min, max);

        let dir = out_dir.join(&game.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_meta(&meta, &dir.join(META_FILE))?;
        for (k, start) in (0..frames.nrows()).step_by(cfg.chunk_size).enumerate() {
            let end = (start + cfg.chunk_size).min(frames.nrows());
            let obs = frames
                .slice(s![start..end, ..])
                .to_owned()
                .into_shape_with_order((end - start, FRAME_SIDE, FRAME_SIDE))
                .expect("frame layout");
            let obs_path = dir.join(format!("chunk_{k}.obs.npy"));
            write_npy(&obs_path, &obs).map_err(|e| Error::Parse(format!("{}: {e}", obs_path.display())))?;
            let rew_path = dir.join(format!("chunk_{k}.rew.npy"));
            let rew = Array1::from(rewards[start..end].to_vec());
            write_npy(&rew_path, &rew).map_err(|e| Error::Parse(format!("{}: {e}", rew_path.display())))?;
        }
        games.push(GameData { meta, frames, rewards });
    }
    Ok(PretrainDataset { games })
}

/// Read a packed dataset back, games in directory-name order.
pub fn load_pretrain_dataset(root: &Path) -> Result<PretrainDataset> {
    let mut dirs: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(META_FILE).is_file())
        .collect();
    dirs.sort();
    let mut games = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let meta = read_meta(&dir.join(META_FILE))?;
        let mut frames: Vec<Array2<u8>> = Vec::new();
        let mut rewards = Vec::new();
        for k in 0.. {
            let obs_path = dir.join(format!("chunk_{k}.obs.npy"));
            if !obs_path.exists() {
                break;
            }
            let obs: Array3<u8> =
                read_npy(&obs_path).map_err(|e| Error::Parse(format!("{}: {e}", obs_path.display())))?;
            let rew_path = dir.join(format!("chunk_{k}.rew.npy"));
            let rew: Array1<u8> =
                read_npy(&rew_path).map_err(|e| Error::Parse(format!("{}: {e}", rew_path.display())))?;
            if obs.dim().1 != FRAME_SIDE || obs.dim().2 != FRAME_SIDE || rew.len() != obs.dim().0 {
                return Err(Error::Shape(format!("{}: chunk {k} is misaligned", dir.display())));
            }
            if rew.iter().any(|&r| r > 1) {
                return Err(Error::validation(format!("{}: reward outside {{0, 1}}", dir.display())));
            }
            let n = obs.dim().0;
            frames.push(obs.into_shape_with_order((n, FRAME_PIXELS)).expect("frame layout"));
            rewards.extend(rew);
        }
        if frames.is_empty() {
            return Err(Error::Insufficient(format!("{} holds no chunks", dir.display())));
        }
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        let frames = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        games.push(GameData { meta, frames, rewards });
    }
    if games.is_empty() {
        return Err(Error::Insufficient(format!("no game folders under {}", root.display())));
    }
    Ok(PretrainDataset { games })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suite::{make_suite, RenderConfig};

    fn small_suite() -> Suite {
        make_suite(SuiteKind::Pretrain, 8, &Genre::ALL, 1, RenderConfig::default())
            .unwrap()
    }

    fn small_cfg() -> PackConfig {
        PackConfig { episodes_per_game: 1, chunk_size: 50, min_reward_episodes: 2, seed: 4 }
    }

    #[test]
    fn one_nonempty_folder_per_game() {
        let suite = small_suite();
        let dir = tempfile::tempdir().unwrap();
        let packed = pack_pretrain_dataset(&suite, dir.path(), &small_cfg()).unwrap();
        for g in &suite.games {
            let folder = dir.path().join(&g.id);
            assert!(folder.join(META_FILE).is_file());
            assert!(folder.join("chunk_0.obs.npy").is_file());
            // 128 steps in chunks of 50
            assert!(folder.join("chunk_2.rew.npy").is_file());
            assert!(!folder.join("chunk_3.rew.npy").exists());
        }
        let loaded = load_pretrain_dataset(dir.path()).unwrap();
        assert_eq!(loaded.games.len(), 8);
        for (a, b) in loaded.games.iter().zip(&packed.games) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.rewards, b.rewards);
            assert_eq!(a.meta, b.meta);
            assert!(a.rewards.iter().all(|&r| r <= 1));
            assert!(a.meta.max_reward > a.meta.min_reward);
        }
    }

    #[test]
    fn repacking_is_byte_identical() {
        let suite = small_suite();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        pack_pretrain_dataset(&suite, a.path(), &small_cfg()).unwrap();
        pack_pretrain_dataset(&suite, b.path(), &small_cfg()).unwrap();
        for g in &suite.games {
            for f in [META_FILE, "chunk_0.obs.npy", "chunk_1.rew.npy"] {
                let x = std::fs::read(a.path().join(&g.id).join(f)).unwrap();
                let y = std::fs::read(b.path().join(&g.id).join(f)).unwrap();
                assert_eq!(x, y, "{}/{f}", g.id);
            }
        }
    }

    #[test]
    fn eval_suite_cannot_be_packed() {
        let suite = make_suite(SuiteKind::Eval, 4, &Genre::ALL, 1, RenderConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(pack_pretrain_dataset(&suite, dir.path(), &small_cfg()).is_err());
    }
}

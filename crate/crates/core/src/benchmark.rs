//! `DeLL(alpha, beta)` benchmark definitions and per-game meta files.
//!
//! A benchmark is a YAML document naming `beta` sessions drawn from `alpha`
//! unique games, together with the calibrated reward range of every game.
//! Meta files carry one game's record in the same schema.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// Schema version written into every benchmark and meta file.
pub const SCHEMA_VERSION: u32 = 1;

/// The closed genre registry shared by the pretrain and evaluation suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Genre {
    ShootUp,
    Maze,
    Paddle,
    Platformer,
}

impl Genre {
    pub const ALL: [Genre; 4] = [Genre::ShootUp, Genre::Maze, Genre::Paddle, Genre::Platformer];

    pub fn as_str(self) -> &'static str {
        match self {
            Genre::ShootUp => "shoot-up",
            Genre::Maze => "maze",
            Genre::Paddle => "paddle",
            Genre::Platformer => "platformer",
        }
    }

    /// One-line description used as the meta file's `input_text`.
    pub fn blurb(self) -> &'static str {
        match self {
            Genre::ShootUp => "Shoot down waves of descending targets before they reach the ground.",
            Genre::Maze => "Navigate a grid maze collecting items while avoiding pursuers.",
            Genre::Paddle => "Keep the ball in play and clear rows with a horizontal paddle.",
            Genre::Platformer => "Jump between platforms collecting treasure and dodging hazards.",
        }
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Genre {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Genre::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown genre {s:?}")))
    }
}

/// One game's meta record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameMeta {
    pub name: String,
    pub genre: String,
    pub input_text: String,
    pub min_reward: f64,
    pub max_reward: f64,
}

impl GameMeta {
    pub fn validate(&self) -> Result<()> {
        self.genre()?;
        if !self.min_reward.is_finite() || !self.max_reward.is_finite() {
            return Err(Error::validation(format!(
                "game {}: reward range must be finite",
                self.name
            )));
        }
        if self.max_reward <= self.min_reward {
            return Err(Error::validation(format!(
                "game {}: max_reward ({}) must exceed min_reward ({})",
                self.name, self.max_reward, self.min_reward
            )));
        }
        Ok(())
    }

    pub fn genre(&self) -> Result<Genre> {
        self.genre.parse()
    }
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    version: u32,
    #[serde(flatten)]
    meta: GameMeta,
}

pub fn write_meta(meta: &GameMeta, path: &Path) -> Result<()> {
    meta.validate()?;
    let text = serde_yaml::to_string(&MetaFile { version: SCHEMA_VERSION, meta: meta.clone() })
        .map_err(|e| Error::Parse(e.to_string()))?;
    crate::binio::write_file(path, text.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<GameMeta> {
    let raw = crate::binio::read_file(path)?;
    let file: MetaFile = serde_yaml::from_slice(&raw).map_err(|e| Error::Parse(e.to_string()))?;
    crate::binio::check_version(SCHEMA_VERSION, file.version)?;
    file.meta.validate()?;
    Ok(file.meta)
}

/// A `DeLL(alpha, beta)` run definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub version: u32,
    pub alpha: usize,
    pub beta: usize,
    pub seed: u64,
    pub sequence: Vec<String>,
    pub games: BTreeMap<String, GameMeta>,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        crate::binio::check_version(SCHEMA_VERSION, self.version)?;
        if self.alpha == 0 {
            return Err(Error::validation("alpha must be positive"));
        }
        if self.beta <= self.alpha {
            return Err(Error::validation(format!(
                "beta must exceed alpha (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        if self.sequence.len() != self.beta {
            return Err(Error::validation(format!(
                "sequence length mismatch: {} entries for beta={}",
                self.sequence.len(),
                self.beta
            )));
        }
        let distinct: BTreeSet<&str> = self.sequence.iter().map(String::as_str).collect();
        if distinct.len() != self.alpha {
            return Err(Error::validation(format!(
                "unique-game count mismatch: sequence has {} distinct ids, alpha={}",
                distinct.len(),
                self.alpha
            )));
        }
        for id in &distinct {
            let meta = self
                .games
                .get(*id)
                .ok_or_else(|| Error::validation(format!("game {id} has no record in `games`")))?;
            meta.validate()?;
        }
        if let Some(extra) = self.games.keys().find(|k| !distinct.contains(k.as_str())) {
            return Err(Error::validation(format!(
                "game {extra} is listed in `games` but never appears in the sequence"
            )));
        }
        Ok(())
    }

    /// Check the suite relations: every genre used here also appears among
    /// the pretrain games, and no game id is shared with the pretrain suite.
    pub fn validate_against_pretrain<'a>(
        &self,
        pretrain: impl IntoIterator<Item = (&'a str, Genre)>,
    ) -> Result<()> {
        let mut pre_ids = BTreeSet::new();
        let mut pre_genres = BTreeSet::new();
        for (id, genre) in pretrain {
            pre_ids.insert(id);
            pre_genres.insert(genre);
        }
        for (id, meta) in &self.games {
            if pre_ids.contains(id.as_str()) {
                return Err(Error::validation(format!(
                    "game {id} appears in both the pretrain suite and the benchmark"
                )));
            }
            let genre = meta.genre()?;
            if !pre_genres.contains(&genre) {
                return Err(Error::validation(format!(
                    "genre {genre} of game {id} is absent from the pretrain suite"
                )));
            }
        }
        Ok(())
    }

    /// Unique game ids in order of first appearance.
    pub fn unique_games(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.sequence
            .iter()
            .filter(|id| seen.insert(id.as_str()))
            .map(String::as_str)
            .collect()
    }

    pub fn to_yaml(&self) -> Result<String> {
        serde_yaml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_yaml(text: &str) -> Result<Self> {
        let spec: BenchmarkSpec =
            serde_yaml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

pub fn parse_benchmark(path: &Path) -> Result<BenchmarkSpec> {
    let raw = crate::binio::read_file(path)?;
    let text = String::from_utf8(raw).map_err(|e| Error::Parse(e.to_string()))?;
    BenchmarkSpec::from_yaml(&text)
}

pub fn write_benchmark(spec: &BenchmarkSpec, path: &Path) -> Result<()> {
    spec.validate()?;
    crate::binio::write_file(path, spec.to_yaml()?.as_bytes())
}

/// Build a benchmark over `alpha` games drawn from `suite`.
///
/// The first `alpha` sessions visit each chosen game once; the remaining
/// `beta - alpha` sessions are drawn with replacement from the same games.
pub fn generate_benchmark(
    alpha: usize,
    beta: usize,
    suite: &[GameMeta],
    seed: u64,
) -> Result<BenchmarkSpec> {
    if alpha == 0 || beta <= alpha {
        return Err(Error::validation(format!(
            "beta must exceed alpha (alpha={alpha}, beta={beta})"
        )));
    }
    if suite.len() < alpha {
        return Err(Error::Insufficient(format!(
            "suite has {} games, benchmark needs {alpha}",
            suite.len()
        )));
    }
    let mut r = rng::stream(seed, "benchmark");
    let mut chosen: Vec<&GameMeta> = suite.iter().collect();
    chosen.shuffle(&mut r);
    chosen.truncate(alpha);

    let mut sequence: Vec<String> = chosen.iter().map(|m| m.name.clone()).collect();
    for _ in alpha..beta {
        sequence.push(chosen[r.gen_range(0..alpha)].name.clone());
    }
    let games = chosen.iter().map(|m| (m.name.clone(), (*m).clone())).collect();
    let spec = BenchmarkSpec { version: SCHEMA_VERSION, alpha, beta, seed, sequence, games };
    spec.validate()?;
    Ok(spec)
}

//! Deterministic discrete puzzle environments (Sokoban, sliding tile puzzle,
//! grid TSP), their tensor encodings, and procedural dataset generation.
//!
//! States are immutable values: [`EnvState::step`] returns a successor and
//! invalid moves are no-ops returning an identical state. Two encodings are
//! provided. [`EnvState::encode`] produces the multi-channel 0/1 tensor fed to
//! networks; [`EnvState::cell_codes`] produces one categorical code per grid
//! cell, which is what decoders and the dynamics model predict. Both are
//! bijective with the state.

mod dataset;
pub mod sokoban;
mod solver;
pub mod stp;
pub mod tsp;

pub use dataset::{generate_dataset, Provenance, Trajectory, TrajectoryDataset, TrajectoryRecord};
pub use solver::{held_karp_tour_length, manhattan, shortest_grid_path, solve_sokoban, solve_stp};

use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sokoban,
    Stp,
    Tsp,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Sokoban => "sokoban",
            EnvKind::Stp => "stp",
            EnvKind::Tsp => "tsp",
        }
    }
}

impl std::str::FromStr for EnvKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sokoban" => Ok(EnvKind::Sokoban),
            "stp" => Ok(EnvKind::Stp),
            "tsp" => Ok(EnvKind::Tsp),
            other => Err(Error::config(format!("unknown env kind `{other}`"))),
        }
    }
}

/// The shared four-action space. Invalid moves are absorbed as no-ops by
/// `step`, so the action set is identical in every environment.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

pub const ACTION_COUNT: usize = 4;

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
        }
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        Action::ALL.get(idx).copied()
    }

    /// (row delta, col delta)
    pub fn delta(self) -> (i32, i32) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Instance shape parameters, one variant per environment.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum SizeConfig {
    Sokoban {
        rows: usize,
        cols: usize,
        boxes: usize,
        /// Interior wall cells sprinkled in addition to the border.
        walls: usize,
    },
    Stp {
        side: usize,
    },
    Tsp {
        rows: usize,
        cols: usize,
        cities: usize,
    },
}

impl SizeConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            SizeConfig::Sokoban { .. } => EnvKind::Sokoban,
            SizeConfig::Stp { .. } => EnvKind::Stp,
            SizeConfig::Tsp { .. } => EnvKind::Tsp,
        }
    }

    pub fn rows(&self) -> usize {
        match *self {
            SizeConfig::Sokoban { rows, .. } => rows,
            SizeConfig::Stp { side } => side,
            SizeConfig::Tsp { rows, .. } => rows,
        }
    }

    pub fn cols(&self) -> usize {
        match *self {
            SizeConfig::Sokoban { cols, .. } => cols,
            SizeConfig::Stp { side } => side,
            SizeConfig::Tsp { cols, .. } => cols,
        }
    }

    pub fn cells(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SizeConfig::Sokoban {
                rows,
                cols,
                boxes,
                walls,
            } => {
                if !(5..=10).contains(&rows) || !(5..=10).contains(&cols) {
                    return Err(Error::config("sokoban grid must be between 5x5 and 10x10"));
                }
                if !(1..=4).contains(&boxes) {
                    return Err(Error::config("sokoban needs 1-4 boxes"));
                }
                let interior = (rows - 2) * (cols - 2);
                if walls + 2 * boxes + 1 > interior {
                    return Err(Error::config("sokoban config leaves no room to scramble"));
                }
                Ok(())
            }
            SizeConfig::Stp { side } => {
                if !(3..=4).contains(&side) {
                    return Err(Error::config("stp side must be 3 or 4"));
                }
                Ok(())
            }
            SizeConfig::Tsp { rows, cols, cities } => {
                if !(4..=15).contains(&rows) || !(4..=15).contains(&cols) {
                    return Err(Error::config("tsp grid must be between 4x4 and 15x15"));
                }
                if !(4..=10).contains(&cities) {
                    return Err(Error::config("tsp needs 4-10 cities"));
                }
                if cities + 1 > rows * cols {
                    return Err(Error::config("tsp grid too small for the cities"));
                }
                Ok(())
            }
        }
    }
}

/// Environment-specific dynamic data; static structure lives in `grid`.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub(crate) enum Extras {
    /// Sorted flat cell indices of the boxes.
    Sokoban { boxes: Vec<u8> },
    /// Tiles live in `grid`; the agent is the blank.
    Stp,
    /// Bit i of `visited` refers to the i-th city in sorted cell order.
    Tsp { visited: u64 },
}

/// One immutable puzzle state.
///
/// `grid` holds per-cell codes whose meaning depends on the environment:
/// Sokoban stores the static layer (floor/wall/target), STP stores the tile
/// permutation (0 = blank), TSP stores the static layer (empty/city/start).
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct EnvState {
    pub(crate) config: SizeConfig,
    pub(crate) grid: Vec<u8>,
    pub(crate) agent: (u8, u8),
    pub(crate) extras: Extras,
}

impl EnvState {
    pub fn kind(&self) -> EnvKind {
        self.config.kind()
    }

    pub fn config(&self) -> SizeConfig {
        self.config
    }

    pub fn rows(&self) -> usize {
        self.config.rows()
    }

    pub fn cols(&self) -> usize {
        self.config.cols()
    }

    pub fn agent(&self) -> (usize, usize) {
        (self.agent.0 as usize, self.agent.1 as usize)
    }

    pub(crate) fn flat(&self, r: usize, c: usize) -> usize {
        r * self.cols() + c
    }

    pub(crate) fn agent_flat(&self) -> usize {
        self.flat(self.agent.0 as usize, self.agent.1 as usize)
    }

    /// Target cell of a move, if it stays on the grid.
    pub(crate) fn neighbor(&self, pos: (u8, u8), action: Action) -> Option<(u8, u8)> {
        let (dr, dc) = action.delta();
        let nr = pos.0 as i32 + dr;
        let nc = pos.1 as i32 + dc;
        if nr < 0 || nc < 0 || nr >= self.rows() as i32 || nc >= self.cols() as i32 {
            return None;
        }
        Some((nr as u8, nc as u8))
    }

    /// Deterministic successor. Invalid moves return an identical state.
    pub fn step(&self, action: Action) -> EnvState {
        match self.kind() {
            EnvKind::Sokoban => sokoban::step(self, action),
            EnvKind::Stp => stp::step(self, action),
            EnvKind::Tsp => tsp::step(self, action),
        }
    }

    pub fn is_terminal(&self) -> bool {
        match self.kind() {
            EnvKind::Sokoban => sokoban::is_terminal(self),
            EnvKind::Stp => stp::is_terminal(self),
            EnvKind::Tsp => tsp::is_terminal(self),
        }
    }

    /// Number of 0/1 channels in [`EnvState::encode`].
    pub fn encode_channels(config: SizeConfig) -> usize {
        match config {
            SizeConfig::Sokoban { .. } => 4,
            SizeConfig::Stp { side } => side * side,
            SizeConfig::Tsp { .. } => 5,
        }
    }

    /// Length of the flattened encoding for this configuration.
    pub fn encode_dim(config: SizeConfig) -> usize {
        Self::encode_channels(config) * config.cells()
    }

    /// Flatten to a channel-major 0/1 tensor. Entry layout is
    /// `(channel * rows + r) * cols + c`.
    ///
    /// Channels: Sokoban `[wall, box, target, agent]`; STP one channel per
    /// tile value (0 = blank); TSP `[empty, unvisited city, visited city,
    /// start, agent]`.
    pub fn encode(&self) -> Vec<f64> {
        match self.kind() {
            EnvKind::Sokoban => sokoban::encode(self),
            EnvKind::Stp => stp::encode(self),
            EnvKind::Tsp => tsp::encode(self),
        }
    }

    /// Inverse of [`EnvState::encode`]. Entries are thresholded at 0.5.
    pub fn decode(config: SizeConfig, tensor: &[f64]) -> Result<EnvState> {
        if tensor.len() != Self::encode_dim(config) {
            return Err(Error::contract(format!(
                "decode expects {} entries, got {}",
                Self::encode_dim(config),
                tensor.len()
            )));
        }
        match config {
            SizeConfig::Sokoban { .. } => sokoban::decode(config, tensor),
            SizeConfig::Stp { .. } => stp::decode(config, tensor),
            SizeConfig::Tsp { .. } => tsp::decode(config, tensor),
        }
    }

    /// Number of categories a single cell can take in [`EnvState::cell_codes`].
    pub fn cell_categories(config: SizeConfig) -> usize {
        match config {
            // floor, wall, target, box, box-on-target, agent, agent-on-target
            SizeConfig::Sokoban { .. } => 7,
            SizeConfig::Stp { side } => side * side,
            // empty, unvisited, visited, start, agent, agent-on-visited, agent-on-start
            SizeConfig::Tsp { .. } => 7,
        }
    }

    /// One categorical code per cell, row-major. This is the representation
    /// decoders and the dynamics model predict, and the one stored in dataset
    /// files.
    pub fn cell_codes(&self) -> Vec<u8> {
        match self.kind() {
            EnvKind::Sokoban => sokoban::cell_codes(self),
            EnvKind::Stp => self.grid.clone(),
            EnvKind::Tsp => tsp::cell_codes(self),
        }
    }

    /// Rebuild a state from per-cell codes, enforcing structural invariants
    /// (exactly one agent, permutation property, box/target balance, counts
    /// matching `config`).
    pub fn from_cell_codes(config: SizeConfig, codes: &[u8]) -> Result<EnvState> {
        if codes.len() != config.cells() {
            return Err(Error::contract(format!(
                "expected {} cell codes, got {}",
                config.cells(),
                codes.len()
            )));
        }
        match config {
            SizeConfig::Sokoban { .. } => sokoban::from_cell_codes(config, codes),
            SizeConfig::Stp { .. } => stp::from_cell_codes(config, codes),
            SizeConfig::Tsp { .. } => tsp::from_cell_codes(config, codes),
        }
    }
}

/// Sample a solvable instance, deterministically in `seed`.
///
/// Sokoban and STP instances are constructed by reverse moves from a solved
/// state; TSP instances are solvable by construction.
pub fn sample_instance(config: SizeConfig, seed: u64) -> Result<EnvState> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match config {
        SizeConfig::Sokoban { .. } => sokoban::sample(config, &mut rng),
        SizeConfig::Stp { .. } => stp::sample(config, &mut rng),
        SizeConfig::Tsp { .. } => tsp::sample(config, &mut rng),
    })
}

/// Stable sub-seed derivation (splitmix64 over the mixed inputs), so that
/// independent streams never collide across stages or record indices.
pub fn derive_seed(base: u64, stream: u64, idx: u64) -> u64 {
    let mut x = base
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream.wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add(idx.wrapping_mul(0x94d0_49bb_1331_11eb));
    for _ in 0..2 {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x = z ^ (z >> 31);
    }
    x
}

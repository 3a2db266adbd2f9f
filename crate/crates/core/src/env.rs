//! Level balancing as an episodic MDP over tile swaps.
//!
//! An action names two cells whose contents are exchanged. The per-step reward
//! is the reduction in `|b - 0.5|`, so an episode's return telescopes to the
//! total improvement in balance.

use num_rational::Ratio;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{derive_seed, estimate_balance, BalanceError, BalanceEstimate, EvalConfig};
use crate::level::{Level, LevelDataset, LevelError, Position, TileKind};
use crate::sim::ArchetypeSpec;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("episode not started; call reset first")]
    NotReset,
    #[error("episode is done; call reset")]
    Done,
    #[error("action has {got} components, expected {expected}")]
    Arity { expected: usize, got: usize },
    #[error("action component {index} = {value} outside 0..{bound}")]
    ComponentRange { index: usize, value: i64, bound: usize },
    #[error("action index {0} outside the action space")]
    FlatRange(usize),
    #[error("apply flag must be present exactly for the legacy variant")]
    Flag,
    #[error("invalid observation: {0}")]
    Observation(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Balance(#[from] BalanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionSpaceVariant {
    /// Two positions, components `[h, w, h, w]`.
    SwapWide,
    /// Two positions and an apply flag, components `[h, w, h, w, 2]`.
    SwapWideLegacy,
}

impl ActionSpaceVariant {
    pub fn components(self, height: usize, width: usize) -> Vec<usize> {
        match self {
            ActionSpaceVariant::SwapWide => vec![height, width, height, width],
            ActionSpaceVariant::SwapWideLegacy => vec![height, width, height, width, 2],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActionSpaceVariant::SwapWide => "wide",
            ActionSpaceVariant::SwapWideLegacy => "legacy",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "wide" => Some(ActionSpaceVariant::SwapWide),
            "legacy" => Some(ActionSpaceVariant::SwapWideLegacy),
            _ => None,
        }
    }
}

pub fn action_space_size(height: usize, width: usize, variant: ActionSpaceVariant) -> usize {
    variant.components(height, width).iter().product()
}

/// Exchange the contents of two cells; the legacy variant can decline the swap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SwapAction {
    pub pos_a: Position,
    pub pos_b: Position,
    pub apply_flag: Option<bool>,
}

impl SwapAction {
    pub fn new(pos_a: Position, pos_b: Position) -> Self {
        Self {
            pos_a,
            pos_b,
            apply_flag: None,
        }
    }

    pub fn legacy(pos_a: Position, pos_b: Position, apply: bool) -> Self {
        Self {
            pos_a,
            pos_b,
            apply_flag: Some(apply),
        }
    }

    /// Decodes `[y1, x1, y2, x2]` or `[y1, x1, y2, x2, flag]`.
    pub fn from_components(
        values: &[i64],
        variant: ActionSpaceVariant,
        height: usize,
        width: usize,
    ) -> Result<Self, EnvError> {
        let bounds = variant.components(height, width);
        if values.len() != bounds.len() {
            return Err(EnvError::Arity {
                expected: bounds.len(),
                got: values.len(),
            });
        }
        let mut v = [0usize; 5];
        for (i, (&value, &bound)) in values.iter().zip(&bounds).enumerate() {
            if value < 0 || value as u64 >= bound as u64 {
                return Err(EnvError::ComponentRange { index: i, value, bound });
            }
            v[i] = value as usize;
        }
        let a = Position::new(v[1], v[0]);
        let b = Position::new(v[3], v[2]);
        Ok(match variant {
            ActionSpaceVariant::SwapWide => Self::new(a, b),
            ActionSpaceVariant::SwapWideLegacy => Self::legacy(a, b, v[4] == 1),
        })
    }

    pub fn to_components(&self) -> Vec<i64> {
        let mut out = vec![
            self.pos_a.y as i64,
            self.pos_a.x as i64,
            self.pos_b.y as i64,
            self.pos_b.x as i64,
        ];
        if let Some(flag) = self.apply_flag {
            out.push(flag as i64);
        }
        out
    }

    /// Decodes a flat index, row-major over the components.
    pub fn from_flat(index: usize, variant: ActionSpaceVariant, height: usize, width: usize) -> Result<Self, EnvError> {
        if index >= action_space_size(height, width, variant) {
            return Err(EnvError::FlatRange(index));
        }
        let bounds = variant.components(height, width);
        let mut rest = index;
        let mut values = vec![0i64; bounds.len()];
        for (slot, &bound) in values.iter_mut().zip(&bounds).rev() {
            *slot = (rest % bound) as i64;
            rest /= bound;
        }
        Self::from_components(&values, variant, height, width)
    }

    pub fn to_flat(&self, height: usize, width: usize) -> usize {
        let variant = if self.apply_flag.is_some() {
            ActionSpaceVariant::SwapWideLegacy
        } else {
            ActionSpaceVariant::SwapWide
        };
        variant
            .components(height, width)
            .iter()
            .zip(self.to_components())
            .fold(0, |acc, (&bound, v)| acc * bound + v as usize)
    }

    /// True when applying the action cannot change any level.
    pub fn is_noop(&self) -> bool {
        self.pos_a == self.pos_b || self.apply_flag == Some(false)
    }
}

pub fn apply_swap(level: &Level, action: &SwapAction) -> Result<Level, EnvError> {
    for p in [action.pos_a, action.pos_b] {
        if !level.in_bounds(p) {
            return Err(LevelError::OutOfBounds(p).into());
        }
    }
    if action.is_noop() {
        return Ok(level.clone());
    }
    Ok(level.swapped(action.pos_a, action.pos_b)?)
}

/// Grid ids: 0 grass, 1 rock, 2 water, 3 food, 4 spawn of player 1, 5 spawn of player 2.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub grid: Vec<u8>,
}

pub const SPAWN1_ID: u8 = 4;
pub const SPAWN2_ID: u8 = 5;

impl Observation {
    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.grid.chunks(self.width).map(<[u8]>::to_vec).collect()
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, EnvError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(EnvError::Observation("ragged rows".into()));
        }
        Ok(Self {
            height,
            width,
            grid: rows.concat(),
        })
    }
}

pub fn encode(level: &Level) -> Observation {
    let mut grid: Vec<u8> = level.tiles().iter().map(|t| t.index() as u8).collect();
    let [s1, s2] = level.spawns();
    grid[level.index_of(s1)] = SPAWN1_ID;
    grid[level.index_of(s2)] = SPAWN2_ID;
    Observation {
        height: level.height(),
        width: level.width(),
        grid,
    }
}

pub fn decode(obs: &Observation) -> Result<Level, EnvError> {
    if obs.grid.len() != obs.width * obs.height {
        return Err(EnvError::Observation("grid size does not match shape".into()));
    }
    let mut spawns: [Vec<Position>; 2] = [Vec::new(), Vec::new()];
    let mut tiles = Vec::with_capacity(obs.grid.len());
    for (i, &id) in obs.grid.iter().enumerate() {
        let pos = Position::new(i % obs.width, i / obs.width);
        let tile = match id {
            0..=3 => TileKind::ALL[id as usize],
            SPAWN1_ID | SPAWN2_ID => {
                spawns[(id - SPAWN1_ID) as usize].push(pos);
                TileKind::Grass
            }
            other => return Err(EnvError::Observation(format!("unknown id {other} at {pos}"))),
        };
        tiles.push(tile);
    }
    for (k, s) in spawns.iter().enumerate() {
        if s.len() != 1 {
            return Err(EnvError::Observation(format!(
                "expected exactly one spawn id {}, found {}",
                SPAWN1_ID as usize + k,
                s.len()
            )));
        }
    }
    Ok(Level::new(obs.width, obs.height, tiles, spawns[0][0], spawns[1][0])?)
}

/// How simulation seeds are chosen during an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum CrnPolicy {
    /// One seed family per episode: a level state always re-evaluates to the same `b`.
    #[default]
    PerEpisode,
    /// A fresh seed family for every evaluation.
    PerStep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub variant: ActionSpaceVariant,
    pub max_steps: u32,
    pub eval: EvalConfig,
    pub crn_policy: CrnPolicy,
    pub terminal_bonus: f64,
    /// Swaps touching a spawn cell become no-ops.
    pub freeze_spawns: bool,
    pub arch1: ArchetypeSpec,
    pub arch2: ArchetypeSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            variant: ActionSpaceVariant::SwapWide,
            max_steps: 10,
            eval: EvalConfig::default(),
            crn_policy: CrnPolicy::PerEpisode,
            terminal_bonus: 0.0,
            freeze_spawns: false,
            arch1: ArchetypeSpec::a(),
            arch2: ArchetypeSpec::a(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.max_steps < 1 {
            return Err(EnvError::Config("max_steps must be at least 1".into()));
        }
        if !self.terminal_bonus.is_finite() {
            return Err(EnvError::Config("terminal_bonus must be finite".into()));
        }
        self.eval.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub b: f64,
    pub wins1: u32,
    pub wins2: u32,
    pub draws: u32,
    pub steps_used: u32,
    pub balanced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub obs: Observation,
    /// Reward including any terminal bonus.
    pub reward: f64,
    /// Balance improvement without the bonus, exactly.
    #[serde(skip)]
    pub reward_exact: Rational64,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone)]
struct Episode {
    level: Level,
    estimate: BalanceEstimate,
    seed_family: u64,
    steps_used: u32,
    done: bool,
}

/// Single-owner balancing environment.
#[derive(Debug, Clone)]
pub struct BalancingEnv {
    config: EnvConfig,
    episode: Option<Episode>,
}

impl BalancingEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self { config, episode: None })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn level(&self) -> Option<&Level> {
        self.episode.as_ref().map(|e| &e.level)
    }

    pub fn estimate(&self) -> Option<&BalanceEstimate> {
        self.episode.as_ref().map(|e| &e.estimate)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    fn eval_config(&self, family: u64, steps_used: u32) -> EvalConfig {
        match self.config.crn_policy {
            CrnPolicy::PerEpisode => self.config.eval.with_base_seed(family),
            CrnPolicy::PerStep => self.config.eval.with_base_seed(derive_seed(family, steps_used as u64)),
        }
    }

    fn evaluate(&self, level: &Level, family: u64, steps_used: u32) -> BalanceEstimate {
        estimate_balance(level, &self.config.arch1, &self.config.arch2, &self.eval_config(family, steps_used))
    }

    fn info(&self, ep: &Episode) -> StepInfo {
        StepInfo {
            b: ep.estimate.b_f64(),
            wins1: ep.estimate.wins1(),
            wins2: ep.estimate.wins2(),
            draws: ep.estimate.draws(),
            steps_used: ep.steps_used,
            balanced: ep.estimate.is_balanced(self.config.eval.epsilon),
        }
    }

    /// Starts an episode on `level`; `seed` picks the simulation seed family.
    pub fn reset(&mut self, level: Level, seed: u64) -> (Observation, StepInfo) {
        let family = derive_seed(self.config.eval.base_seed, seed);
        let estimate = self.evaluate(&level, family, 0);
        let ep = Episode {
            level,
            estimate,
            seed_family: family,
            steps_used: 0,
            done: false,
        };
        let out = (encode(&ep.level), self.info(&ep));
        self.episode = Some(ep);
        out
    }

    /// Starts an episode on a level drawn uniformly from `ds` using `seed`.
    pub fn reset_from_dataset(&mut self, ds: &LevelDataset, seed: u64) -> Result<(Observation, StepInfo), EnvError> {
        if ds.is_empty() {
            return Err(EnvError::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx = rng.gen_range(0..ds.len());
        Ok(self.reset(ds.records[idx].level.clone(), seed))
    }

    pub fn step(&mut self, action: &SwapAction) -> Result<StepResult, EnvError> {
        let ep = self.episode.as_ref().ok_or(EnvError::NotReset)?;
        if ep.done {
            return Err(EnvError::Done);
        }
        let legacy = self.config.variant == ActionSpaceVariant::SwapWideLegacy;
        if action.apply_flag.is_some() != legacy {
            return Err(EnvError::Flag);
        }
        let frozen = self.config.freeze_spawns
            && ep.level.spawns().iter().any(|&s| s == action.pos_a || s == action.pos_b);
        let next = if frozen {
            for p in [action.pos_a, action.pos_b] {
                if !ep.level.in_bounds(p) {
                    return Err(LevelError::OutOfBounds(p).into());
                }
            }
            ep.level.clone()
        } else {
            apply_swap(&ep.level, action)?
        };
        let steps_used = ep.steps_used + 1;
        let estimate = self.evaluate(&next, ep.seed_family, steps_used);
        let eps = self.config.eval.epsilon;
        let was_balanced = ep.estimate.is_balanced(eps);
        let balanced = estimate.is_balanced(eps);
        let reward_exact: Ratio<i64> = ep.estimate.distance() - estimate.distance();
        let mut reward = *reward_exact.numer() as f64 / *reward_exact.denom() as f64;
        if balanced && !was_balanced {
            reward += self.config.terminal_bonus;
        }
        let done = balanced || steps_used >= self.config.max_steps;
        let ep = Episode {
            level: next,
            estimate,
            seed_family: ep.seed_family,
            steps_used,
            done,
        };
        let result = StepResult {
            obs: encode(&ep.level),
            reward,
            reward_exact,
            done,
            info: self.info(&ep),
        };
        self.episode = Some(ep);
        Ok(result)
    }
}

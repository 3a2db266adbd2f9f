//! Random-search and hill-climbing balancers over tile swaps.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balance::{derive_seed, estimate_balance, BalanceError, BalanceEstimate, EvalConfig};
use crate::env::{apply_swap, SwapAction};
use crate::level::{Level, LevelDataset, Position};
use crate::sim::ArchetypeSpec;

#[derive(Debug, Error, PartialEq)]
pub enum SearchError {
    #[error("max_evals must be at least 1")]
    Budget,
    #[error("level must have at least two cells to swap")]
    TooSmall,
    #[error(transparent)]
    Balance(#[from] BalanceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchBudget {
    /// Balance evaluations, counting the one of the starting level.
    pub max_evals: u32,
    pub stop_on_balanced: bool,
    /// Evaluate every candidate with the same seed family.
    pub common_random_numbers: bool,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            max_evals: 100,
            stop_on_balanced: true,
            common_random_numbers: true,
        }
    }
}

impl SearchBudget {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.max_evals < 1 {
            return Err(SearchError::Budget);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Random,
    HillClimb,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::HillClimb => "hillclimb",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(Method::Random),
            "hillclimb" | "hill-climb" | "hill_climb" => Some(Method::HillClimb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub swap: SwapAction,
    pub accepted: bool,
    /// Estimate of the candidate level.
    pub after: BalanceEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancerResult {
    pub final_level: Level,
    pub initial: BalanceEstimate,
    pub final_estimate: BalanceEstimate,
    pub evals_used: u32,
    pub swap_trace: Vec<TraceStep>,
}

impl BalancerResult {
    pub fn initial_b(&self) -> f64 {
        self.initial.b_f64()
    }

    pub fn final_b(&self) -> f64 {
        self.final_estimate.b_f64()
    }

    /// Replays the accepted swaps on `start`.
    pub fn replay(&self, start: &Level) -> Level {
        self.swap_trace
            .iter()
            .filter(|s| s.accepted)
            .fold(start.clone(), |lvl, s| apply_swap(&lvl, &s.swap).expect("recorded swaps are in bounds"))
    }
}

fn random_swap<R: Rng + ?Sized>(level: &Level, rng: &mut R) -> SwapAction {
    let area = level.area();
    let a = rng.gen_range(0..area);
    let mut b = rng.gen_range(0..area - 1);
    if b >= a {
        b += 1;
    }
    let pos = |i: usize| Position::new(i % level.width(), i / level.width());
    SwapAction::new(pos(a), pos(b))
}

struct Evaluator<'a> {
    arch1: &'a ArchetypeSpec,
    arch2: &'a ArchetypeSpec,
    cfg: &'a EvalConfig,
    crn: bool,
    used: u32,
}

impl Evaluator<'_> {
    fn eval(&mut self, level: &Level) -> BalanceEstimate {
        let cfg = if self.crn {
            self.cfg.clone()
        } else {
            self.cfg.with_base_seed(derive_seed(self.cfg.base_seed, self.used as u64))
        };
        self.used += 1;
        estimate_balance(level, self.arch1, self.arch2, &cfg)
    }
}

/// Pure random walk: applies random swaps without ever reverting.
pub fn random_balancer<R: Rng + ?Sized>(
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<BalancerResult, SearchError> {
    search(level, arch1, arch2, cfg, budget, rng, Method::Random)
}

/// Keeps a random swap only when it strictly reduces `|b - 0.5|`.
pub fn hill_climb<R: Rng + ?Sized>(
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<BalancerResult, SearchError> {
    search(level, arch1, arch2, cfg, budget, rng, Method::HillClimb)
}

pub fn run_method<R: Rng + ?Sized>(
    method: Method,
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
    budget: &SearchBudget,
    rng: &mut R,
) -> Result<BalancerResult, SearchError> {
    search(level, arch1, arch2, cfg, budget, rng, method)
}

fn search<R: Rng + ?Sized>(
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
    budget: &SearchBudget,
    rng: &mut R,
    method: Method,
) -> Result<BalancerResult, SearchError> {
    budget.validate()?;
    cfg.validate()?;
    if level.area() < 2 {
        return Err(SearchError::TooSmall);
    }
    let mut evaluator = Evaluator {
        arch1,
        arch2,
        cfg,
        crn: budget.common_random_numbers,
        used: 0,
    };
    let initial = evaluator.eval(level);
    let mut current = level.clone();
    let mut current_est = initial.clone();
    let mut trace = Vec::new();
    while evaluator.used < budget.max_evals {
        if budget.stop_on_balanced && current_est.is_balanced(cfg.epsilon) {
            break;
        }
        let swap = random_swap(&current, rng);
        let candidate = apply_swap(&current, &swap).expect("random swaps are in bounds");
        let est = evaluator.eval(&candidate);
        let accepted = match method {
            Method::Random => true,
            Method::HillClimb => {
                let reward: Ratio<i64> = current_est.distance() - est.distance();
                reward > Ratio::from_integer(0)
            }
        };
        if accepted {
            current = candidate;
            current_est = est.clone();
        }
        trace.push(TraceStep {
            swap,
            accepted,
            after: est,
        });
    }
    Ok(BalancerResult {
        final_level: current,
        initial,
        final_estimate: current_est,
        evals_used: evaluator.used,
        swap_trace: trace,
    })
}

/// Per-level row of a batch run.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelOutcome {
    pub level_id: String,
    pub method: String,
    pub initial_b: f64,
    pub final_b: f64,
    pub initially_balanced: bool,
    pub balanced: bool,
    pub evals_used: u32,
    pub final_level: Level,
    pub final_estimate: BalanceEstimate,
}

/// Runs one balancer on every level, each with its own RNG stream derived from `seed`.
pub fn balance_dataset(
    ds: &LevelDataset,
    method: Method,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
    budget: &SearchBudget,
    seed: u64,
) -> Result<Vec<LevelOutcome>, SearchError> {
    budget.validate()?;
    cfg.validate()?;
    ds.records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let res = run_method(method, &rec.level, arch1, arch2, cfg, budget, &mut rng)?;
            Ok(LevelOutcome {
                level_id: rec.id.clone(),
                method: method.name().to_string(),
                initial_b: res.initial_b(),
                final_b: res.final_b(),
                initially_balanced: res.initial.is_balanced(cfg.epsilon),
                balanced: res.final_estimate.is_balanced(cfg.epsilon),
                evals_used: res.evals_used,
                final_level: res.final_level,
                final_estimate: res.final_estimate,
            })
        })
        .collect()
}

/// Share of initially unbalanced levels that ended balanced. `None` if every level started balanced.
pub fn balanced_fraction(rows: &[LevelOutcome]) -> Option<f64> {
    let candidates: Vec<&LevelOutcome> = rows.iter().filter(|r| !r.initially_balanced).collect();
    if candidates.is_empty() {
        return None;
    }
    Some(candidates.iter().filter(|r| r.balanced).count() as f64 / candidates.len() as f64)
}

//! Monte-Carlo balance estimation.
//!
//! A level's balance `b` is `(wins1 + draws/2) / n` over `n` simulated matches,
//! so 0.5 means both players win equally often and 0 or 1 means one player
//! always wins. Draws count half for each side even when nobody can win.

use std::fmt;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level::{Level, LevelDataset};
use crate::sim::{run_match, ArchetypeSpec, Cause, MatchConfig, SimError, Winner};

#[derive(Debug, Error, PartialEq)]
pub enum BalanceError {
    #[error("counts {wins1}+{wins2}+{draws} do not sum to {n_sims}")]
    Counts { n_sims: u32, wins1: u32, wins2: u32, draws: u32 },
    #[error("n_sims must be at least 1")]
    NoSims,
    #[error("epsilon {0} outside [0, 0.5]")]
    Epsilon(f64),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_sims: u32,
    pub base_seed: u64,
    pub epsilon: f64,
    pub match_config: MatchConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_sims: 10,
            base_seed: 0,
            epsilon: 0.0,
            match_config: MatchConfig::default(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), BalanceError> {
        if self.n_sims < 1 {
            return Err(BalanceError::NoSims);
        }
        if !(0.0..=0.5).contains(&self.epsilon) {
            return Err(BalanceError::Epsilon(self.epsilon));
        }
        self.match_config.validate()?;
        Ok(())
    }

    pub fn with_base_seed(&self, base_seed: u64) -> Self {
        Self {
            base_seed,
            ..self.clone()
        }
    }

    /// Match config for simulation `i`.
    pub fn match_config_for(&self, i: u32) -> MatchConfig {
        self.match_config.with_seed(derive_seed(self.base_seed, i as u64))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for stream `index` of family `base`. Depends only on its two inputs,
/// so a longer run shares its prefix with a shorter one.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BalanceClass {
    Balanced,
    FavorsP1,
    FavorsP2,
}

impl BalanceClass {
    pub fn name(self) -> &'static str {
        match self {
            BalanceClass::Balanced => "balanced",
            BalanceClass::FavorsP1 => "favors_p1",
            BalanceClass::FavorsP2 => "favors_p2",
        }
    }
}

impl fmt::Display for BalanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Outcome counts of `n_sims` matches.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BalanceEstimate {
    n_sims: u32,
    wins1: u32,
    wins2: u32,
    draws: u32,
    /// Draws per cause, indexed like [`Cause::ALL`]; sums to `draws` when
    /// the estimate comes from simulation.
    draw_causes: [u32; 5],
}

impl BalanceEstimate {
    /// Counts without a draw breakdown.
    pub fn from_counts(wins1: u32, wins2: u32, draws: u32) -> Result<Self, BalanceError> {
        let n_sims = wins1 + wins2 + draws;
        if n_sims == 0 {
            return Err(BalanceError::NoSims);
        }
        Ok(Self {
            n_sims,
            wins1,
            wins2,
            draws,
            draw_causes: [0; 5],
        })
    }

    pub fn with_draw_causes(wins1: u32, wins2: u32, draw_causes: [u32; 5]) -> Result<Self, BalanceError> {
        let draws: u32 = draw_causes.iter().sum();
        let n_sims = wins1 + wins2 + draws;
        if n_sims == 0 {
            return Err(BalanceError::NoSims);
        }
        Ok(Self {
            n_sims,
            wins1,
            wins2,
            draws,
            draw_causes,
        })
    }

    /// Checks the count identity against an expected total.
    pub fn expect_total(self, n_sims: u32) -> Result<Self, BalanceError> {
        if self.n_sims != n_sims {
            return Err(BalanceError::Counts {
                n_sims,
                wins1: self.wins1,
                wins2: self.wins2,
                draws: self.draws,
            });
        }
        Ok(self)
    }

    pub fn n_sims(&self) -> u32 {
        self.n_sims
    }

    pub fn wins1(&self) -> u32 {
        self.wins1
    }

    pub fn wins2(&self) -> u32 {
        self.wins2
    }

    pub fn draws(&self) -> u32 {
        self.draws
    }

    pub fn draws_by(&self, cause: Cause) -> u32 {
        self.draw_causes[cause_slot(cause)]
    }

    pub fn draw_fraction(&self) -> f64 {
        self.draws as f64 / self.n_sims as f64
    }

    /// Exact balance score.
    pub fn b(&self) -> Ratio<i64> {
        Ratio::new(2 * self.wins1 as i64 + self.draws as i64, 2 * self.n_sims as i64)
    }

    pub fn b_f64(&self) -> f64 {
        (2 * self.wins1 + self.draws) as f64 / (2 * self.n_sims) as f64
    }

    /// Exact `|b - 0.5|`.
    pub fn distance(&self) -> Ratio<i64> {
        let num = (2 * self.wins1 as i64 + self.draws as i64 - self.n_sims as i64).abs();
        Ratio::new(num, 2 * self.n_sims as i64)
    }

    pub fn distance_f64(&self) -> f64 {
        let num = (2 * self.wins1 as i64 + self.draws as i64 - self.n_sims as i64).abs();
        num as f64 / (2 * self.n_sims) as f64
    }

    pub fn classify(&self, epsilon: f64) -> BalanceClass {
        classify(self, epsilon)
    }

    pub fn is_balanced(&self, epsilon: f64) -> bool {
        self.classify(epsilon) == BalanceClass::Balanced
    }

    /// `cause:count` pairs for nonzero draw causes joined by `;`, or `-`.
    pub fn draw_histogram(&self) -> String {
        let parts: Vec<String> = Cause::ALL
            .iter()
            .filter(|&&c| self.draws_by(c) > 0)
            .map(|&c| format!("{}:{}", c.name(), self.draws_by(c)))
            .collect();
        if parts.is_empty() {
            "-".into()
        } else {
            parts.join(";")
        }
    }

    fn record(&mut self, winner: Winner, cause: Cause) {
        self.n_sims += 1;
        match winner {
            Winner::Player1 => self.wins1 += 1,
            Winner::Player2 => self.wins2 += 1,
            Winner::Draw => {
                self.draws += 1;
                self.draw_causes[cause_slot(cause)] += 1;
            }
        }
    }

    fn empty() -> Self {
        Self {
            n_sims: 0,
            wins1: 0,
            wins2: 0,
            draws: 0,
            draw_causes: [0; 5],
        }
    }
}

fn cause_slot(cause: Cause) -> usize {
    Cause::ALL.iter().position(|&c| c == cause).expect("listed")
}

/// Balanced iff `|b - 0.5| <= epsilon`, otherwise the side `b` leans to.
pub fn classify(est: &BalanceEstimate, epsilon: f64) -> BalanceClass {
    if est.distance_f64() <= epsilon {
        BalanceClass::Balanced
    } else if 2 * est.wins1 + est.draws > est.n_sims {
        BalanceClass::FavorsP1
    } else {
        BalanceClass::FavorsP2
    }
}

/// Runs `cfg.n_sims` matches with seeds derived from `cfg.base_seed`.
pub fn estimate_balance(level: &Level, arch1: &ArchetypeSpec, arch2: &ArchetypeSpec, cfg: &EvalConfig) -> BalanceEstimate {
    let mut est = BalanceEstimate::empty();
    for i in 0..cfg.n_sims {
        let outcome = run_match(level, arch1, arch2, &cfg.match_config_for(i));
        est.record(outcome.winner, outcome.cause);
    }
    est
}

/// Same result as [`estimate_balance`], with the simulations spread over the rayon pool.
pub fn estimate_balance_parallel(
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
) -> BalanceEstimate {
    let outcomes: Vec<_> = (0..cfg.n_sims)
        .into_par_iter()
        .map(|i| run_match(level, arch1, arch2, &cfg.match_config_for(i)))
        .collect();
    let mut est = BalanceEstimate::empty();
    for o in outcomes {
        est.record(o.winner, o.cause);
    }
    est
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceSummary {
    pub frac_favor1: f64,
    pub frac_favor2: f64,
    pub frac_balanced: f64,
    pub estimates: Vec<(String, BalanceEstimate)>,
    pub epsilon: f64,
}

impl ImbalanceSummary {
    pub fn count(&self, class: BalanceClass) -> usize {
        self.estimates
            .iter()
            .filter(|(_, e)| e.classify(self.epsilon) == class)
            .count()
    }

    /// Among initially unbalanced levels, the share favoring player 1.
    /// 0.5 when every level is balanced.
    pub fn favor1_among_unbalanced(&self) -> f64 {
        let (p1, p2) = (self.count(BalanceClass::FavorsP1), self.count(BalanceClass::FavorsP2));
        if p1 + p2 == 0 {
            0.5
        } else {
            p1 as f64 / (p1 + p2) as f64
        }
    }

    /// Among initially unbalanced levels, the share favoring whichever player is favored more often.
    pub fn initial_imbalance(&self) -> f64 {
        let f = self.favor1_among_unbalanced();
        f.max(1.0 - f)
    }
}

/// Estimates every level of a dataset and tallies the classes.
pub fn dataset_imbalance(
    ds: &LevelDataset,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    cfg: &EvalConfig,
) -> Result<ImbalanceSummary, BalanceError> {
    if ds.is_empty() {
        return Err(BalanceError::EmptyDataset);
    }
    cfg.validate()?;
    let estimates: Vec<(String, BalanceEstimate)> = ds
        .records
        .par_iter()
        .map(|r| (r.id.clone(), estimate_balance(&r.level, arch1, arch2, cfg)))
        .collect();
    let n = estimates.len() as f64;
    let count = |class| estimates.iter().filter(|(_, e)| e.classify(cfg.epsilon) == class).count() as f64;
    Ok(ImbalanceSummary {
        frac_favor1: count(BalanceClass::FavorsP1) / n,
        frac_favor2: count(BalanceClass::FavorsP2) / n,
        frac_balanced: count(BalanceClass::Balanced) / n,
        estimates,
        epsilon: cfg.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::level::{LevelRecord, Position};

    #[test]
    fn formula_arithmetic() {
        let est = BalanceEstimate::from_counts(3, 5, 2).unwrap();
        assert_eq!(est.n_sims(), 10);
        assert_eq!(est.b(), Ratio::new(2, 5));
        assert_eq!(est.b_f64(), 0.4);
        assert_eq!(est.distance(), Ratio::new(1, 10));
    }

    #[test]
    fn classification() {
        let half = BalanceEstimate::from_counts(5, 5, 0).unwrap();
        assert_eq!(classify(&half, 0.0), BalanceClass::Balanced);
        let sixty = BalanceEstimate::from_counts(6, 4, 0).unwrap();
        assert_eq!(classify(&sixty, 0.0), BalanceClass::FavorsP1);
        let fifty_five = BalanceEstimate::from_counts(11, 9, 0).unwrap();
        assert_eq!(fifty_five.b_f64(), 0.55);
        assert_eq!(classify(&fifty_five, 0.05), BalanceClass::Balanced);
        assert_eq!(classify(&fifty_five, 0.0), BalanceClass::FavorsP1);
        let low = BalanceEstimate::from_counts(1, 8, 1).unwrap();
        assert_eq!(classify(&low, 0.2), BalanceClass::FavorsP2);
    }

    #[test]
    fn count_identity_checked() {
        assert!(BalanceEstimate::from_counts(0, 0, 0).is_err());
        assert!(BalanceEstimate::from_counts(1, 2, 3).unwrap().expect_total(7).is_err());
        assert!(BalanceEstimate::from_counts(1, 2, 3).unwrap().expect_total(6).is_ok());
        assert!(EvalConfig { epsilon: 0.6, ..Default::default() }.validate().is_err());
        assert!(EvalConfig { n_sims: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn derived_seeds_are_stable() {
        assert_eq!(derive_seed(1, 2), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 2), derive_seed(2, 1));
        assert_ne!(derive_seed(0, 0), derive_seed(0, 1));
    }

    fn no_food_level() -> Level {
        Level::from_rows(&["GGGG", "GRRG", "GGGG"], Position::new(0, 0), Position::new(3, 2)).unwrap()
    }

    #[test]
    fn all_draw_level_scores_half() {
        let est = estimate_balance(&no_food_level(), &ArchetypeSpec::a(), &ArchetypeSpec::c(), &EvalConfig::default());
        assert_eq!(est.draws(), 10);
        assert_eq!(est.b(), Ratio::new(1, 2));
        assert_eq!(est.draws_by(Cause::MutualDeath), 10);
        assert_eq!(est.draw_histogram(), "mutual_death:10");
    }

    #[test]
    fn one_sided_level_scores_one() {
        let level = Level::from_rows(
            &["GGGWGG", "GFFWGG", "GFFWGG", "GFGWGG", "GGFWGG", "GGGWGG"],
            Position::new(0, 0),
            Position::new(5, 5),
        )
        .unwrap();
        let est = estimate_balance(&level, &ArchetypeSpec::a(), &ArchetypeSpec::a(), &EvalConfig::default());
        assert_eq!(est.wins1(), 10);
        assert_eq!(est.b_f64(), 1.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let level = Level::from_rows(
            &["GFGWGG", "GGGRGF", "FGGGGG", "GGWGFG", "RGGGGG", "GFGGRG"],
            Position::new(0, 0),
            Position::new(5, 5),
        )
        .unwrap();
        let cfg = EvalConfig {
            n_sims: 16,
            base_seed: 3,
            ..Default::default()
        };
        let (a, b) = (ArchetypeSpec::a(), ArchetypeSpec::b());
        assert_eq!(estimate_balance(&level, &a, &b, &cfg), estimate_balance_parallel(&level, &a, &b, &cfg));
    }

    #[test]
    fn single_all_draw_dataset_is_balanced() {
        let ds: LevelDataset = vec![LevelRecord::new("x", no_food_level())].into_iter().collect();
        let s = dataset_imbalance(&ds, &ArchetypeSpec::a(), &ArchetypeSpec::a(), &EvalConfig::default()).unwrap();
        assert_eq!(s.frac_balanced, 1.0);
        assert_eq!(s.favor1_among_unbalanced(), 0.5);
        assert_eq!(
            dataset_imbalance(&LevelDataset::default(), &ArchetypeSpec::a(), &ArchetypeSpec::a(), &EvalConfig::default()),
            Err(BalanceError::EmptyDataset)
        );
    }
}

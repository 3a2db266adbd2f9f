//! Balancing asymmetric two-player tile levels by editing the level.
//!
//! Matches between heuristic archetypes are simulated to score a level's
//! balance, and tile swaps are searched to move that score toward 0.5.

pub mod balance;
pub mod env;
pub mod gateway;
pub mod level;
pub mod report;
pub mod search;
pub mod sim;

pub use level::{Level, LevelDataset, LevelRecord, Position, TileKind};
pub use sim::{run_match, ArchetypeSpec, MatchConfig, MatchOutcome, Winner};

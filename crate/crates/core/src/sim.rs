//! Turn-based match simulation between two heuristic foraging agents.
//!
//! Each turn both agents pick an action from the same pre-turn state, moves are
//! applied simultaneously, then food, water, depletion, regeneration and food
//! respawn are resolved in that order before the match is adjudicated.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::level::{coord_label, Level, Position, TileKind};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("match already finished")]
    Finished,
    #[error("invalid match config: {0}")]
    Config(String),
    #[error("unknown archetype {0:?}")]
    UnknownArchetype(String),
}

/// Capabilities of a heuristic player.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub name: String,
    pub can_cross_rock: bool,
    /// Acts only on turns where `turn_index % action_period == 0`.
    pub action_period: u32,
    pub food_to_win: u32,
}

impl ArchetypeSpec {
    pub fn new(name: impl Into<String>, can_cross_rock: bool, action_period: u32, food_to_win: u32) -> Self {
        assert!(action_period >= 1 && food_to_win >= 1);
        Self {
            name: name.into(),
            can_cross_rock,
            action_period,
            food_to_win,
        }
    }

    /// Base agent.
    pub fn a() -> Self {
        Self::new("A", false, 1, 5)
    }

    /// Rock agent: also walks over rock.
    pub fn b() -> Self {
        Self::new("B", true, 1, 5)
    }

    /// Handicap agent: acts every second turn.
    pub fn c() -> Self {
        Self::new("C", false, 2, 5)
    }

    /// Food agent, wins with four food.
    pub fn d1() -> Self {
        Self::new("D1", false, 1, 4)
    }

    /// Food agent, wins with three food.
    pub fn d2() -> Self {
        Self::new("D2", false, 1, 3)
    }

    pub fn preset(name: &str) -> Result<Self, SimError> {
        match name.to_ascii_uppercase().as_str() {
            "A" => Ok(Self::a()),
            "B" => Ok(Self::b()),
            "C" => Ok(Self::c()),
            "D1" => Ok(Self::d1()),
            "D2" => Ok(Self::d2()),
            _ => Err(SimError::UnknownArchetype(name.to_string())),
        }
    }

    pub fn acts_on(&self, turn_index: u32) -> bool {
        turn_index % self.action_period == 0
    }
}

/// Parses a pairing such as `A:C`.
pub fn parse_pair(s: &str) -> Result<(ArchetypeSpec, ArchetypeSpec), SimError> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| SimError::UnknownArchetype(s.to_string()))?;
    Ok((ArchetypeSpec::preset(a.trim())?, ArchetypeSpec::preset(b.trim())?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeTile {
    Grass,
    Rock,
    Water,
    Food,
    Scrub,
}

impl RuntimeTile {
    pub fn glyph(self) -> char {
        match self {
            RuntimeTile::Grass => 'G',
            RuntimeTile::Rock => 'R',
            RuntimeTile::Water => 'W',
            RuntimeTile::Food => 'F',
            RuntimeTile::Scrub => 'S',
        }
    }
}

impl From<TileKind> for RuntimeTile {
    fn from(kind: TileKind) -> Self {
        match kind {
            TileKind::Grass => RuntimeTile::Grass,
            TileKind::Rock => RuntimeTile::Rock,
            TileKind::Water => RuntimeTile::Water,
            TileKind::Food => RuntimeTile::Food,
        }
    }
}

pub fn passable(tile: RuntimeTile, arch: &ArchetypeSpec) -> bool {
    match tile {
        RuntimeTile::Grass | RuntimeTile::Food | RuntimeTile::Scrub => true,
        RuntimeTile::Rock => arch.can_cross_rock,
        RuntimeTile::Water => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    DoNothing,
}

impl Action {
    /// Movement actions in tie-breaking order.
    pub const MOVES: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];

    pub fn target(self, pos: Position, width: usize, height: usize) -> Option<Position> {
        let Position { x, y } = pos;
        match self {
            Action::Up if y > 0 => Some(Position::new(x, y - 1)),
            Action::Down if y + 1 < height => Some(Position::new(x, y + 1)),
            Action::Left if x > 0 => Some(Position::new(x - 1, y)),
            Action::Right if x + 1 < width => Some(Position::new(x + 1, y)),
            Action::DoNothing => Some(pos),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Up => "Up",
            Action::Down => "Down",
            Action::Left => "Left",
            Action::Right => "Right",
            Action::DoNothing => "Stay",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    pub max_turns: u32,
    pub max_health: u32,
    pub max_food: u32,
    pub max_water: u32,
    pub respawn_prob: f64,
    pub regen_threshold_frac: f64,
    /// Whether a player standing on a respawned food tile eats it without moving.
    pub consume_on_stay: bool,
    pub seed: u64,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            max_turns: 100,
            max_health: 10,
            max_food: 10,
            max_water: 10,
            respawn_prob: 0.025,
            regen_threshold_frac: 0.5,
            consume_on_stay: false,
            seed: 0,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.respawn_prob) {
            return Err(SimError::Config(format!("respawn_prob {} outside [0,1]", self.respawn_prob)));
        }
        if self.max_turns < 1 {
            return Err(SimError::Config("max_turns must be at least 1".into()));
        }
        if self.max_health < 1 || self.max_food < 1 || self.max_water < 1 {
            return Err(SimError::Config("gauge maxima must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.regen_threshold_frac) {
            return Err(SimError::Config("regen_threshold_frac outside [0,1]".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PlayerState {
    pub pos: Position,
    pub health: u32,
    pub food: u32,
    pub water: u32,
    pub victory_points: u32,
    pub alive: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Winner {
    Player1,
    Player2,
    Draw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cause {
    FoodGoal,
    Survived,
    Timeout,
    MutualDeath,
    MutualGoal,
}

impl Cause {
    pub const ALL: [Cause; 5] = [
        Cause::FoodGoal,
        Cause::Survived,
        Cause::Timeout,
        Cause::MutualDeath,
        Cause::MutualGoal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Cause::FoodGoal => "food_goal",
            Cause::Survived => "survived",
            Cause::Timeout => "timeout",
            Cause::MutualDeath => "mutual_death",
            Cause::MutualGoal => "mutual_goal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub winner: Winner,
    pub turns_played: u32,
    pub vp: [u32; 2],
    pub cause: Cause,
}

/// Read-only tile grid handed to the path search.
#[derive(Debug, Clone, Copy)]
pub struct GridView<'a> {
    pub width: usize,
    pub height: usize,
    pub tiles: &'a [RuntimeTile],
}

impl GridView<'_> {
    fn neighbors(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        let pos = Position::new(idx % self.width, idx / self.width);
        Action::MOVES
            .into_iter()
            .filter_map(move |a| a.target(pos, self.width, self.height))
            .map(|p| p.y * self.width + p.x)
    }
}

/// Shortest 4-connected path from `from` to the nearest goal, excluding `from` itself.
///
/// The goal is the nearest one, ties broken by row-major order. Among equally
/// short routes to it, each step takes the first of Up, Down, Left, Right that
/// stays on a shortest route. Returns an empty path when `from` is a goal.
pub fn shortest_path(grid: GridView<'_>, from: Position, goals: &[Position], arch: &ArchetypeSpec) -> Option<Vec<Position>> {
    let area = grid.width * grid.height;
    let start = from.y * grid.width + from.x;
    let mut is_goal = vec![false; area];
    for g in goals {
        is_goal[g.y * grid.width + g.x] = true;
    }
    if is_goal[start] {
        return Some(Vec::new());
    }
    let open = |i: usize| passable(grid.tiles[i], arch);
    let goal_list: Vec<Position> = goals.iter().copied().filter(|g| open(g.y * grid.width + g.x)).collect();
    if goal_list.is_empty() {
        return None;
    }
    let heuristic = |i: usize| -> usize {
        let (x, y) = (i % grid.width, i / grid.width);
        goal_list
            .iter()
            .map(|g| g.x.abs_diff(x) + g.y.abs_diff(y))
            .min()
            .unwrap_or(0)
    };

    // A* with a consistent heuristic; after the first goal is popped keep draining
    // entries with f equal to that distance so every goal at that distance is seen.
    let mut best = vec![usize::MAX; area];
    let mut heap = BinaryHeap::new();
    best[start] = 0;
    heap.push(Reverse((heuristic(start), 0usize, start)));
    let mut found: Option<(usize, usize)> = None;
    while let Some(Reverse((f, g, node))) = heap.pop() {
        if let Some((dist, _)) = found {
            if f > dist {
                break;
            }
        }
        if g > best[node] {
            continue;
        }
        if is_goal[node] {
            match found {
                None => found = Some((g, node)),
                Some((dist, goal)) if g == dist && node < goal => found = Some((g, node)),
                _ => {}
            }
            continue;
        }
        for next in grid.neighbors(node) {
            if !open(next) {
                continue;
            }
            let ng = g + 1;
            if ng < best[next] {
                best[next] = ng;
                heap.push(Reverse((ng + heuristic(next), ng, next)));
            }
        }
    }
    let (dist, goal) = found?;

    // Distances back from the chosen goal pick the canonical route.
    let mut to_goal = vec![usize::MAX; area];
    let mut queue = VecDeque::from([goal]);
    to_goal[goal] = 0;
    while let Some(node) = queue.pop_front() {
        if node == start {
            continue;
        }
        for prev in grid.neighbors(node) {
            if to_goal[prev] == usize::MAX && (prev == start || open(prev)) {
                to_goal[prev] = to_goal[node] + 1;
                queue.push_back(prev);
            }
        }
    }
    debug_assert_eq!(to_goal[start], dist);
    let mut path = Vec::with_capacity(dist);
    let mut cur = start;
    for remaining in (0..dist).rev() {
        cur = grid
            .neighbors(cur)
            .find(|&n| to_goal[n] == remaining && open(n))
            .expect("a shortest route continues");
        path.push(Position::new(cur % grid.width, cur / grid.width));
    }
    Some(path)
}

/// Direction from `from` to an orthogonally adjacent cell.
fn direction(from: Position, to: Position) -> Action {
    if to.y < from.y {
        Action::Up
    } else if to.y > from.y {
        Action::Down
    } else if to.x < from.x {
        Action::Left
    } else if to.x > from.x {
        Action::Right
    } else {
        Action::DoNothing
    }
}

/// Bit layout for grids of at most 64 cells; bit `i` is row-major cell `i`.
#[derive(Debug, Clone, Copy)]
struct BitGeom {
    width: usize,
    full: u64,
    not_first_col: u64,
    not_last_col: u64,
}

impl BitGeom {
    fn new(width: usize, height: usize) -> Option<Self> {
        let area = width * height;
        if area > 64 {
            return None;
        }
        let full = if area == 64 { u64::MAX } else { (1u64 << area) - 1 };
        let mut first_col = 0u64;
        for y in 0..height {
            first_col |= 1 << (y * width);
        }
        let last_col = first_col << (width - 1);
        Some(Self {
            width,
            full,
            not_first_col: full & !first_col,
            not_last_col: full & !last_col,
        })
    }

    #[inline]
    fn spread(&self, b: u64) -> u64 {
        (b >> self.width)
            | ((b << self.width) & self.full)
            | ((b & self.not_first_col) >> 1)
            | ((b & self.not_last_col) << 1)
    }

    /// Same contract as [`shortest_path`], returning only the first step.
    /// `None` when no goal is reachable.
    fn first_step(&self, start: usize, open: u64, goals: u64) -> Option<Action> {
        let origin = 1u64 << start;
        if origin & goals != 0 {
            return Some(Action::DoNothing);
        }
        let goals = goals & open;
        if goals == 0 {
            return None;
        }
        let mut layers = [0u64; 64];
        layers[0] = origin;
        let mut seen = origin;
        let mut depth = 0;
        let hit = loop {
            let next = self.spread(layers[depth]) & open & !seen;
            if next == 0 {
                return None;
            }
            depth += 1;
            layers[depth] = next;
            seen |= next;
            let hit = next & goals;
            if hit != 0 {
                break hit;
            }
        };
        // lowest bit is the first goal in row-major order
        let mut on_route = hit & hit.wrapping_neg();
        for k in (1..depth).rev() {
            on_route = self.spread(on_route) & layers[k];
        }
        let w = self.width;
        let candidates = [
            (Action::Up, start.checked_sub(w)),
            (Action::Down, Some(start + w).filter(|&i| i < 64)),
            (Action::Left, Some(start).filter(|i| i % w != 0).map(|i| i - 1)),
            (Action::Right, Some(start).filter(|i| i % w != w - 1).map(|i| i + 1)),
        ];
        candidates
            .into_iter()
            .find(|(_, cell)| cell.is_some_and(|c| on_route & (1u64 << c) != 0))
            .map(|(a, _)| a)
    }
}

#[derive(Debug, Clone, Copy)]
struct Caps {
    action_period: u32,
    food_to_win: u32,
}

impl From<&ArchetypeSpec> for Caps {
    fn from(a: &ArchetypeSpec) -> Self {
        Self {
            action_period: a.action_period,
            food_to_win: a.food_to_win,
        }
    }
}

#[derive(Debug, Clone)]
struct BitMasks {
    geom: BitGeom,
    open: [u64; 2],
    water_goals: [u64; 2],
    food: u64,
    scrub: u64,
}

/// One cell change during a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridChange {
    pub pos: Position,
    pub from: RuntimeTile,
    pub to: RuntimeTile,
}

/// Everything that happened in one turn, for replay logs.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnRecord {
    pub turn: u32,
    /// Actions the policies asked for.
    pub chosen: [Action; 2],
    /// Actions after illegal moves were replaced by `DoNothing`.
    pub applied: [Action; 2],
    pub players: [PlayerState; 2],
    pub changes: Vec<GridChange>,
}

impl fmt::Display for TurnRecord {
    /// `turn, p1.pos, p2.pos, actions, gauges, vp, grid-delta`, tab separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [p, q] = &self.players;
        let delta: Vec<String> = self
            .changes
            .iter()
            .map(|c| format!("{}:{}>{}", coord_label(c.pos), c.from.glyph(), c.to.glyph()))
            .collect();
        write!(
            f,
            "{}\t{}\t{}\t{},{}\t{}/{}/{},{}/{}/{}\t{},{}\t{}",
            self.turn,
            coord_label(p.pos),
            coord_label(q.pos),
            self.applied[0],
            self.applied[1],
            p.health,
            p.food,
            p.water,
            q.health,
            q.food,
            q.water,
            p.victory_points,
            q.victory_points,
            if delta.is_empty() { "-".to_string() } else { delta.join(";") }
        )
    }
}

/// Mutable state of a single match.
#[derive(Debug, Clone)]
pub struct MatchState {
    width: usize,
    height: usize,
    grid: Vec<RuntimeTile>,
    water_adjacent: Vec<bool>,
    players: [PlayerState; 2],
    caps: [Caps; 2],
    archetypes: [ArchetypeSpec; 2],
    config: MatchConfig,
    turn_index: u32,
    rng: ChaCha8Rng,
    outcome: Option<MatchOutcome>,
    bits: Option<BitMasks>,
}

impl MatchState {
    pub fn new(level: &Level, arch1: &ArchetypeSpec, arch2: &ArchetypeSpec, config: &MatchConfig) -> Self {
        let (width, height) = (level.width(), level.height());
        let grid: Vec<RuntimeTile> = level.tiles().iter().map(|&t| t.into()).collect();
        let water_adjacent: Vec<bool> = (0..grid.len())
            .map(|i| {
                let view = GridView {
                    width,
                    height,
                    tiles: &grid,
                };
                let adjacent = view.neighbors(i).any(|n| grid[n] == RuntimeTile::Water);
                adjacent
            })
            .collect();
        let player = |pos| PlayerState {
            pos,
            health: config.max_health,
            food: config.max_food,
            water: config.max_water,
            victory_points: 0,
            alive: true,
        };
        let caps = [Caps::from(arch1), Caps::from(arch2)];
        let bits = BitGeom::new(width, height).map(|geom| {
            let mask = |pred: &dyn Fn(usize) -> bool| -> u64 {
                (0..grid.len()).filter(|&i| pred(i)).fold(0, |m, i| m | (1u64 << i))
            };
            let open = [arch1, arch2].map(|a| mask(&|i| passable(grid[i], a)));
            BitMasks {
                geom,
                open,
                water_goals: open.map(|o| o & mask(&|i| water_adjacent[i])),
                food: mask(&|i| grid[i] == RuntimeTile::Food),
                scrub: mask(&|i| grid[i] == RuntimeTile::Scrub),
            }
        });
        Self {
            width,
            height,
            grid,
            water_adjacent,
            players: [player(level.spawn(0)), player(level.spawn(1))],
            caps,
            archetypes: [arch1.clone(), arch2.clone()],
            config: config.clone(),
            turn_index: 0,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            outcome: None,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn grid(&self) -> GridView<'_> {
        GridView {
            width: self.width,
            height: self.height,
            tiles: &self.grid,
        }
    }

    pub fn tile(&self, pos: Position) -> RuntimeTile {
        self.grid[self.idx(pos)]
    }

    pub fn player(&self, k: usize) -> &PlayerState {
        &self.players[k]
    }

    pub fn players(&self) -> &[PlayerState; 2] {
        &self.players
    }

    /// Overwrites a player's state, e.g. to set up a scenario.
    pub fn set_player(&mut self, k: usize, state: PlayerState) {
        self.players[k] = state;
    }

    pub fn archetype(&self, k: usize) -> &ArchetypeSpec {
        &self.archetypes[k]
    }

    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }

    pub fn outcome(&self) -> Option<MatchOutcome> {
        self.outcome
    }

    pub fn is_finished(&self) -> bool {
        self.outcome.is_some()
    }

    pub fn count(&self, tile: RuntimeTile) -> usize {
        self.grid.iter().filter(|&&t| t == tile).count()
    }

    #[inline]
    fn idx(&self, pos: Position) -> usize {
        pos.y * self.width + pos.x
    }

    fn pos_of(&self, idx: usize) -> Position {
        Position::new(idx % self.width, idx / self.width)
    }

    fn set_tile(&mut self, idx: usize, tile: RuntimeTile, changes: &mut Option<&mut Vec<GridChange>>) {
        let old = self.grid[idx];
        self.grid[idx] = tile;
        if let Some(bits) = self.bits.as_mut() {
            let bit = 1u64 << idx;
            bits.food &= !bit;
            bits.scrub &= !bit;
            match tile {
                RuntimeTile::Food => bits.food |= bit,
                RuntimeTile::Scrub => bits.scrub |= bit,
                _ => {}
            }
        }
        if let Some(list) = changes.as_mut() {
            list.push(GridChange {
                pos: self.pos_of(idx),
                from: old,
                to: tile,
            });
        }
    }

    fn can_act(&self, k: usize) -> bool {
        self.players[k].alive && self.turn_index % self.caps[k].action_period == 0
    }

    /// Heuristic action for player `k` from the current state.
    pub fn policy_action(&self, k: usize) -> Action {
        let player = &self.players[k];
        if !self.can_act(k) {
            return Action::DoNothing;
        }
        let here = self.idx(player.pos);
        if let Some(bits) = &self.bits {
            let mut food = bits.food;
            if !self.config.consume_on_stay {
                food &= !(1u64 << here);
            }
            return bits
                .geom
                .first_step(here, bits.open[k], food)
                .or_else(|| bits.geom.first_step(here, bits.open[k], bits.water_goals[k]))
                .unwrap_or(Action::DoNothing);
        }
        self.general_policy(k)
    }

    /// Policy via [`shortest_path`]; used for grids larger than 64 cells.
    pub fn general_policy(&self, k: usize) -> Action {
        let player = &self.players[k];
        if !self.can_act(k) {
            return Action::DoNothing;
        }
        let arch = &self.archetypes[k];
        let food: Vec<Position> = (0..self.grid.len())
            .filter(|&i| self.grid[i] == RuntimeTile::Food)
            .map(|i| self.pos_of(i))
            .filter(|&p| self.config.consume_on_stay || p != player.pos)
            .collect();
        let water: Vec<Position> = (0..self.grid.len())
            .filter(|&i| self.water_adjacent[i] && passable(self.grid[i], arch))
            .map(|i| self.pos_of(i))
            .collect();
        let path = shortest_path(self.grid(), player.pos, &food, arch)
            .or_else(|| shortest_path(self.grid(), player.pos, &water, arch));
        match path {
            Some(p) if !p.is_empty() => direction(player.pos, p[0]),
            _ => Action::DoNothing,
        }
    }

    fn legalize(&self, k: usize, action: Action) -> Action {
        if !self.can_act(k) {
            return Action::DoNothing;
        }
        match action.target(self.players[k].pos, self.width, self.height) {
            Some(t) if action == Action::DoNothing || passable(self.tile(t), &self.archetypes[k]) => action,
            _ => Action::DoNothing,
        }
    }

    /// Advances one turn using the heuristic policies.
    pub fn step(&mut self) -> Result<Option<MatchOutcome>, SimError> {
        let chosen = [self.policy_action(0), self.policy_action(1)];
        self.advance(chosen, None)?;
        Ok(self.outcome)
    }

    /// Like [`step`](Self::step) but returns a full record of the turn.
    pub fn step_traced(&mut self) -> Result<TurnRecord, SimError> {
        let chosen = [self.policy_action(0), self.policy_action(1)];
        let mut changes = Vec::new();
        let turn = self.turn_index;
        let applied = self.advance(chosen, Some(&mut changes))?;
        Ok(TurnRecord {
            turn,
            chosen,
            applied,
            players: self.players,
            changes,
        })
    }

    /// Advances one turn with externally chosen actions.
    pub fn step_with(&mut self, chosen: [Action; 2]) -> Result<[Action; 2], SimError> {
        self.advance(chosen, None)
    }

    fn advance(&mut self, chosen: [Action; 2], mut changes: Option<&mut Vec<GridChange>>) -> Result<[Action; 2], SimError> {
        if self.outcome.is_some() {
            return Err(SimError::Finished);
        }
        let applied = [self.legalize(0, chosen[0]), self.legalize(1, chosen[1])];
        let (w, h) = (self.width, self.height);
        let mut moved = [false; 2];
        for k in 0..2 {
            let target = applied[k].target(self.players[k].pos, w, h).expect("legalized");
            moved[k] = target != self.players[k].pos;
            self.players[k].pos = target;
        }

        let eats = |s: &Self, k: usize| {
            (moved[k] || s.config.consume_on_stay) && s.tile(s.players[k].pos) == RuntimeTile::Food
        };
        let mut eaters = [eats(self, 0), eats(self, 1)];
        if eaters[0] && eaters[1] && self.players[0].pos == self.players[1].pos {
            let first_wins = self.rng.gen_bool(0.5);
            eaters = [first_wins, !first_wins];
        }
        for k in 0..2 {
            if eaters[k] {
                let idx = self.idx(self.players[k].pos);
                self.set_tile(idx, RuntimeTile::Scrub, &mut changes);
                let p = &mut self.players[k];
                p.food = self.config.max_food;
                p.victory_points += 1;
            }
        }

        let cfg = &self.config;
        let food_threshold = cfg.regen_threshold_frac * cfg.max_food as f64;
        let water_threshold = cfg.regen_threshold_frac * cfg.max_water as f64;
        for k in 0..2 {
            let adjacent = self.water_adjacent[self.idx(self.players[k].pos)];
            let p = &mut self.players[k];
            if adjacent {
                p.water = cfg.max_water;
            }
            if p.food == 0 && p.water == 0 {
                p.health = p.health.saturating_sub(1);
            }
            p.food = p.food.saturating_sub(1);
            p.water = p.water.saturating_sub(1);
            if p.health > 0 && p.food as f64 > food_threshold && p.water as f64 > water_threshold {
                p.health = (p.health + 1).min(cfg.max_health);
            }
            if p.health == 0 {
                p.alive = false;
            }
        }

        if self.config.respawn_prob > 0.0 {
            let prob = self.config.respawn_prob;
            match &self.bits {
                Some(bits) => {
                    let mut scrub = bits.scrub;
                    while scrub != 0 {
                        let idx = scrub.trailing_zeros() as usize;
                        scrub &= scrub - 1;
                        if self.rng.gen_bool(prob) {
                            self.set_tile(idx, RuntimeTile::Food, &mut changes);
                        }
                    }
                }
                None => {
                    for idx in 0..self.grid.len() {
                        if self.grid[idx] == RuntimeTile::Scrub && self.rng.gen_bool(prob) {
                            self.set_tile(idx, RuntimeTile::Food, &mut changes);
                        }
                    }
                }
            }
        }

        self.turn_index += 1;
        self.outcome = self.adjudicate();
        Ok(applied)
    }

    /// Terminal result of the current state, if any.
    pub fn adjudicate(&self) -> Option<MatchOutcome> {
        let [p, q] = &self.players;
        let result = |winner, cause| MatchOutcome {
            winner,
            turns_played: self.turn_index,
            vp: [p.victory_points, q.victory_points],
            cause,
        };
        let goal = [
            p.victory_points >= self.caps[0].food_to_win,
            q.victory_points >= self.caps[1].food_to_win,
        ];
        match goal {
            [true, true] => return Some(result(Winner::Draw, Cause::MutualGoal)),
            [true, false] => return Some(result(Winner::Player1, Cause::FoodGoal)),
            [false, true] => return Some(result(Winner::Player2, Cause::FoodGoal)),
            [false, false] => {}
        }
        match [p.health == 0, q.health == 0] {
            [true, true] => return Some(result(Winner::Draw, Cause::MutualDeath)),
            [true, false] => return Some(result(Winner::Player2, Cause::Survived)),
            [false, true] => return Some(result(Winner::Player1, Cause::Survived)),
            [false, false] => {}
        }
        (self.turn_index >= self.config.max_turns).then(|| result(Winner::Draw, Cause::Timeout))
    }
}

/// Plays one match to completion.
pub fn run_match(level: &Level, arch1: &ArchetypeSpec, arch2: &ArchetypeSpec, config: &MatchConfig) -> MatchOutcome {
    let mut state = MatchState::new(level, arch1, arch2, config);
    loop {
        if let Some(outcome) = state.step().expect("stepping an unfinished match") {
            return outcome;
        }
    }
}

/// Plays one match and keeps every turn record.
pub fn run_match_traced(
    level: &Level,
    arch1: &ArchetypeSpec,
    arch2: &ArchetypeSpec,
    config: &MatchConfig,
) -> (MatchOutcome, Vec<TurnRecord>) {
    let mut state = MatchState::new(level, arch1, arch2, config);
    let mut trace = Vec::new();
    loop {
        trace.push(state.step_traced().expect("stepping an unfinished match"));
        if let Some(outcome) = state.outcome() {
            return (outcome, trace);
        }
    }
}

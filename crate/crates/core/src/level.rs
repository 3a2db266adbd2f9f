//! Level representation, coordinates, generation, dataset files and ASCII rendering.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Widest level that still has single-letter column labels.
pub const MAX_WIDTH: usize = 26;

#[derive(Debug, Error, PartialEq)]
pub enum LevelError {
    #[error("level must be at least 2x2 and at most {MAX_WIDTH} columns wide, got {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("expected {expected} tiles, got {actual}")]
    TileCount { expected: usize, actual: usize },
    #[error("spawn {0} is out of bounds")]
    SpawnOutOfBounds(Position),
    #[error("spawns must differ, both at {0}")]
    SpawnsCoincide(Position),
    #[error("spawn {0} is not on grass")]
    SpawnNotGrass(Position),
    #[error("position {0} is out of bounds")]
    OutOfBounds(Position),
    #[error("invalid tile glyph {0:?}")]
    BadGlyph(char),
    #[error("invalid coordinate label {0:?}")]
    BadLabel(String),
    #[error("invalid rendered level: {0}")]
    BadRender(String),
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("tile weights must be non-negative and sum to 1, got {0:?}")]
    Weights([f64; 4]),
    #[error("unsatisfiable constraints: {0}")]
    Unsatisfiable(String),
    #[error(transparent)]
    Level(#[from] LevelError),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("id {0:?} cannot be written (empty or contains tab/newline)")]
    BadId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Design-time terrain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TileKind {
    Grass,
    Rock,
    Water,
    Food,
}

impl TileKind {
    pub const ALL: [TileKind; 4] = [TileKind::Grass, TileKind::Rock, TileKind::Water, TileKind::Food];

    pub fn glyph(self) -> char {
        match self {
            TileKind::Grass => 'G',
            TileKind::Rock => 'R',
            TileKind::Water => 'W',
            TileKind::Food => 'F',
        }
    }

    pub fn from_glyph(c: char) -> Result<Self, LevelError> {
        match c {
            'G' => Ok(TileKind::Grass),
            'R' => Ok(TileKind::Rock),
            'W' => Ok(TileKind::Water),
            'F' => Ok(TileKind::Food),
            other => Err(LevelError::BadGlyph(other)),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Grid cell, `x` is the column and `y` the row, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Position {
    pub x: usize,
    pub y: usize,
}

impl Position {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Label such as `D3`: column letter then 1-based row.
    pub fn label(self) -> String {
        coord_label(self)
    }
}

impl fmt::Display for Position {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

impl FromStr for Position {
    type Err = LevelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_label(s)
    }
}

pub fn coord_label(pos: Position) -> String {
    assert!(pos.x < MAX_WIDTH, "column {} has no letter label", pos.x);
    format!("{}{}", (b'A' + pos.x as u8) as char, pos.y + 1)
}

pub fn parse_label(s: &str) -> Result<Position, LevelError> {
    let bad = || LevelError::BadLabel(s.to_string());
    let mut chars = s.chars();
    let col = chars.next().ok_or_else(bad)?;
    if !col.is_ascii_uppercase() {
        return Err(bad());
    }
    let digits = chars.as_str();
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
        return Err(bad());
    }
    let row: usize = digits.parse().map_err(|_| bad())?;
    Ok(Position::new((col as u8 - b'A') as usize, row - 1))
}

/// Parses a label and checks it against a grid size.
pub fn parse_label_in(s: &str, width: usize, height: usize) -> Result<Position, LevelError> {
    let pos = parse_label(s)?;
    if pos.x >= width || pos.y >= height {
        return Err(LevelError::BadLabel(s.to_string()));
    }
    Ok(pos)
}

/// A design grid with two spawn markers. Spawns always sit on grass.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Level {
    width: usize,
    height: usize,
    tiles: Vec<TileKind>,
    spawns: [Position; 2],
}

impl Level {
    pub fn new(
        width: usize,
        height: usize,
        tiles: Vec<TileKind>,
        spawn1: Position,
        spawn2: Position,
    ) -> Result<Self, LevelError> {
        if width < 2 || height < 2 || width > MAX_WIDTH {
            return Err(LevelError::BadDimensions { width, height });
        }
        if tiles.len() != width * height {
            return Err(LevelError::TileCount {
                expected: width * height,
                actual: tiles.len(),
            });
        }
        let level = Self {
            width,
            height,
            tiles,
            spawns: [spawn1, spawn2],
        };
        for spawn in level.spawns {
            if !level.in_bounds(spawn) {
                return Err(LevelError::SpawnOutOfBounds(spawn));
            }
            if level.tile(spawn) != TileKind::Grass {
                return Err(LevelError::SpawnNotGrass(spawn));
            }
        }
        if spawn1 == spawn2 {
            return Err(LevelError::SpawnsCoincide(spawn1));
        }
        Ok(level)
    }

    /// Builds a level from rows of glyphs, e.g. `["GGF", "RGW"]`.
    pub fn from_rows(rows: &[&str], spawn1: Position, spawn2: Position) -> Result<Self, LevelError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.chars().count());
        let mut tiles = Vec::with_capacity(width * height);
        for row in rows {
            if row.chars().count() != width {
                return Err(LevelError::TileCount {
                    expected: width * height,
                    actual: rows.iter().map(|r| r.chars().count()).sum(),
                });
            }
            for c in row.chars() {
                tiles.push(TileKind::from_glyph(c)?);
            }
        }
        Self::new(width, height, tiles, spawn1, spawn2)
    }

    /// All-grass level.
    pub fn grass(width: usize, height: usize, spawn1: Position, spawn2: Position) -> Result<Self, LevelError> {
        Self::new(width, height, vec![TileKind::Grass; width * height], spawn1, spawn2)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn tiles(&self) -> &[TileKind] {
        &self.tiles
    }

    pub fn spawns(&self) -> [Position; 2] {
        self.spawns
    }

    pub fn spawn(&self, player: usize) -> Position {
        self.spawns[player]
    }

    pub fn in_bounds(&self, pos: Position) -> bool {
        pos.x < self.width && pos.y < self.height
    }

    pub fn index_of(&self, pos: Position) -> usize {
        pos.y * self.width + pos.x
    }

    pub fn position_of(&self, index: usize) -> Position {
        Position::new(index % self.width, index / self.width)
    }

    pub fn tile(&self, pos: Position) -> TileKind {
        self.tiles[self.index_of(pos)]
    }

    pub fn count(&self, kind: TileKind) -> usize {
        self.tiles.iter().filter(|&&t| t == kind).count()
    }

    /// Row-major glyph string, the `tilestring` of the dataset format.
    pub fn tile_string(&self) -> String {
        self.tiles.iter().map(|t| t.glyph()).collect()
    }

    /// Exchanges the contents of two cells. Spawn markers move with their cells.
    pub fn swapped(&self, a: Position, b: Position) -> Result<Level, LevelError> {
        for p in [a, b] {
            if !self.in_bounds(p) {
                return Err(LevelError::OutOfBounds(p));
            }
        }
        let mut out = self.clone();
        if a == b {
            return Ok(out);
        }
        let (ia, ib) = (self.index_of(a), self.index_of(b));
        out.tiles.swap(ia, ib);
        for spawn in out.spawns.iter_mut() {
            if *spawn == a {
                *spawn = b;
            } else if *spawn == b {
                *spawn = a;
            }
        }
        Ok(out)
    }
}

/// Parameters for iid per-tile level generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    /// Probabilities indexed by [`TileKind::index`].
    pub tile_weights: [f64; 4],
    pub min_food_tiles: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 6,
            height: 6,
            tile_weights: [0.50, 0.20, 0.15, 0.15],
            min_food_tiles: 2,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    const MAX_ATTEMPTS: usize = 100_000;

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let w = self.tile_weights;
        let sum: f64 = w.iter().sum();
        if w.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(GeneratorError::Weights(w));
        }
        if self.width < 2 || self.height < 2 || self.width > MAX_WIDTH {
            return Err(LevelError::BadDimensions {
                width: self.width,
                height: self.height,
            }
            .into());
        }
        let area = self.width * self.height;
        if self.min_food_tiles + 2 > area {
            return Err(GeneratorError::Unsatisfiable(format!(
                "{} food tiles plus two spawns exceed area {area}",
                self.min_food_tiles
            )));
        }
        if w[TileKind::Grass.index()] == 0.0 {
            return Err(GeneratorError::Unsatisfiable("grass weight is zero".into()));
        }
        if self.min_food_tiles > 0 && w[TileKind::Food.index()] == 0.0 {
            return Err(GeneratorError::Unsatisfiable(
                "food weight is zero but food tiles are required".into(),
            ));
        }
        Ok(())
    }
}

fn sample_tile<R: Rng + ?Sized>(weights: &[f64; 4], rng: &mut R) -> TileKind {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for kind in TileKind::ALL {
        acc += weights[kind.index()];
        if u < acc {
            return kind;
        }
    }
    // rounding residue lands on the last kind with positive weight
    TileKind::ALL
        .into_iter()
        .rev()
        .find(|k| weights[k.index()] > 0.0)
        .unwrap_or(TileKind::Grass)
}

/// Draws one level. The `seed` field of the config is ignored here; the caller owns the stream.
pub fn generate_level<R: Rng + ?Sized>(config: &GeneratorConfig, rng: &mut R) -> Result<Level, GeneratorError> {
    config.validate()?;
    let area = config.width * config.height;
    for _ in 0..GeneratorConfig::MAX_ATTEMPTS {
        let tiles: Vec<TileKind> = (0..area).map(|_| sample_tile(&config.tile_weights, rng)).collect();
        let grass: Vec<usize> = (0..area).filter(|&i| tiles[i] == TileKind::Grass).collect();
        let food = tiles.iter().filter(|&&t| t == TileKind::Food).count();
        if grass.len() < 2 || food < config.min_food_tiles {
            continue;
        }
        let first = rng.gen_range(0..grass.len());
        let mut second = rng.gen_range(0..grass.len() - 1);
        if second >= first {
            second += 1;
        }
        let at = |i: usize| Position::new(i % config.width, i / config.width);
        return Ok(Level::new(
            config.width,
            config.height,
            tiles,
            at(grass[first]),
            at(grass[second]),
        )?);
    }
    Err(GeneratorError::Unsatisfiable(format!(
        "no admissible level after {} attempts",
        GeneratorConfig::MAX_ATTEMPTS
    )))
}

/// Generates `count` levels with ids `level-0000..` from a ChaCha stream seeded by `config.seed`.
pub fn generate_dataset(config: &GeneratorConfig, count: usize) -> Result<LevelDataset, GeneratorError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed);
    let mut ds = LevelDataset::default();
    for i in 0..count {
        let level = generate_level(config, &mut rng)?;
        let mut meta = BTreeMap::new();
        meta.insert("gen_seed".to_string(), serde_json::json!(config.seed));
        meta.insert("gen_index".to_string(), serde_json::json!(i));
        ds.records.push(LevelRecord {
            id: format!("level-{i:04}"),
            level,
            meta,
        });
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelRecord {
    pub id: String,
    pub level: Level,
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl LevelRecord {
    pub fn new(id: impl Into<String>, level: Level) -> Self {
        Self {
            id: id.into(),
            level,
            meta: BTreeMap::new(),
        }
    }

    /// One dataset line without the trailing newline.
    pub fn to_line(&self) -> Result<String, DatasetError> {
        if self.id.is_empty() || self.id.contains(['\t', '\n', '\r']) {
            return Err(DatasetError::BadId(self.id.clone()));
        }
        let [s1, s2] = self.level.spawns();
        let meta = serde_json::to_string(&self.meta).expect("json map serializes");
        Ok(format!(
            "{}\t{}\t{}\t{}\t{},{}\t{},{}\t{}",
            self.id,
            self.level.width(),
            self.level.height(),
            self.level.tile_string(),
            s1.x,
            s1.y,
            s2.x,
            s2.y,
            meta
        ))
    }

    /// Parses one dataset line. Errors carry no line number; see [`read_dataset`].
    pub fn from_line(line: &str) -> Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 tab-separated fields, got {}", fields.len()));
        }
        let id = fields[0];
        if id.is_empty() {
            return Err("empty id".into());
        }
        let dim = |s: &str, name: &str| s.parse::<usize>().map_err(|_| format!("bad {name} {s:?}"));
        let width = dim(fields[1], "width")?;
        let height = dim(fields[2], "height")?;
        let tilestring = fields[3];
        if tilestring.chars().count() != width.saturating_mul(height) {
            return Err(format!(
                "tile string has length {} but {width}x{height} needs {}",
                tilestring.chars().count(),
                width.saturating_mul(height)
            ));
        }
        let tiles = tilestring
            .chars()
            .enumerate()
            .map(|(i, c)| TileKind::from_glyph(c).map_err(|e| format!("tile {i}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let pos = |s: &str| -> Result<Position, String> {
            let (x, y) = s.split_once(',').ok_or_else(|| format!("bad position {s:?}"))?;
            Ok(Position::new(
                x.parse().map_err(|_| format!("bad position {s:?}"))?,
                y.parse().map_err(|_| format!("bad position {s:?}"))?,
            ))
        };
        let level = Level::new(width, height, tiles, pos(fields[4])?, pos(fields[5])?).map_err(|e| e.to_string())?;
        let meta: BTreeMap<String, serde_json::Value> =
            serde_json::from_str(fields[6]).map_err(|e| format!("bad meta json: {e}"))?;
        Ok(Self {
            id: id.to_string(),
            level,
            meta,
        })
    }
}

/// Ordered levels with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelDataset {
    pub records: Vec<LevelRecord>,
}

impl LevelDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LevelRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &LevelRecord> {
        self.records.iter()
    }
}

impl FromIterator<LevelRecord> for LevelDataset {
    fn from_iter<T: IntoIterator<Item = LevelRecord>>(iter: T) -> Self {
        Self {
            records: iter.into_iter().collect(),
        }
    }
}

pub fn write_dataset<W: Write>(ds: &LevelDataset, mut sink: W) -> Result<(), DatasetError> {
    let mut seen = HashSet::new();
    for (i, record) in ds.records.iter().enumerate() {
        if !seen.insert(record.id.as_str()) {
            return Err(DatasetError::DuplicateId {
                line: i + 1,
                id: record.id.clone(),
            });
        }
        writeln!(sink, "{}", record.to_line()?)?;
    }
    sink.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(source: R) -> Result<LevelDataset, DatasetError> {
    let mut ds = LevelDataset::default();
    let mut seen = HashSet::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        let record = LevelRecord::from_line(&line).map_err(|message| DatasetError::Malformed { line: line_no, message })?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        ds.records.push(record);
    }
    Ok(ds)
}

pub fn dataset_to_string(ds: &LevelDataset) -> Result<String, DatasetError> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    Ok(String::from_utf8(buf).expect("dataset lines are utf-8"))
}

/// Grid of glyphs with column letters on top and 1-based row numbers on the left.
/// Spawns are drawn as `1` and `2` over their (grass) cells.
pub fn render_ascii(level: &Level) -> String {
    let pad = level.height().to_string().len();
    let mut out = String::new();
    out.push_str(&" ".repeat(pad + 1));
    for x in 0..level.width() {
        out.push((b'A' + x as u8) as char);
    }
    out.push('\n');
    for y in 0..level.height() {
        out.push_str(&format!("{:>pad$} ", y + 1));
        for x in 0..level.width() {
            let pos = Position::new(x, y);
            let glyph = match level.spawns().iter().position(|&s| s == pos) {
                Some(0) => '1',
                Some(_) => '2',
                None => level.tile(pos).glyph(),
            };
            out.push(glyph);
        }
        out.push('\n');
    }
    out
}

/// Inverse of [`render_ascii`].
pub fn parse_ascii(text: &str) -> Result<Level, LevelError> {
    let bad = |m: &str| LevelError::BadRender(m.to_string());
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty input"))?.trim();
    let width = header.chars().count();
    if header.chars().enumerate().any(|(i, c)| c != (b'A' + i as u8) as char) {
        return Err(bad("header must list column letters from A"));
    }
    let mut tiles = Vec::new();
    let mut spawns: [Option<Position>; 2] = [None, None];
    let mut height = 0;
    for (y, line) in lines.enumerate() {
        let (num, cells) = line
            .trim_start()
            .split_once(' ')
            .ok_or_else(|| bad("row without number"))?;
        if num.parse::<usize>().ok() != Some(y + 1) {
            return Err(bad("row numbers must run 1.."));
        }
        if cells.chars().count() != width {
            return Err(bad("row width differs from header"));
        }
        for (x, c) in cells.chars().enumerate() {
            let tile = match c {
                '1' | '2' => {
                    let k = (c as u8 - b'1') as usize;
                    if spawns[k].replace(Position::new(x, y)).is_some() {
                        return Err(bad("spawn drawn twice"));
                    }
                    TileKind::Grass
                }
                other => TileKind::from_glyph(other)?,
            };
            tiles.push(tile);
        }
        height += 1;
    }
    match spawns {
        [Some(a), Some(b)] => Level::new(width, height, tiles, a, b),
        _ => Err(bad("both spawns must be drawn")),
    }
}

#![allow(dead_code)]

use std::collections::VecDeque;

use level_balance::level::{generate_level, GeneratorConfig};
use level_balance::sim::{passable, Action, ArchetypeSpec, GridView, MatchConfig, MatchState, RuntimeTile};
use level_balance::{Position, TileKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Plain BFS distances from `from` over cells passable for `arch`; `None` for unreachable.
pub fn bfs_distances(grid: GridView<'_>, from: Position, arch: &ArchetypeSpec) -> Vec<Option<usize>> {
    let (w, h) = (grid.width, grid.height);
    let mut dist = vec![None; w * h];
    let start = from.y * w + from.x;
    dist[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        for (dx, dy) in [(0, -1), (0, 1), (-1, 0), (1, 0)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if dist[j].is_none() && passable(grid.tiles[j], arch) {
                dist[j] = Some(dist[i].unwrap() + 1);
                queue.push_back(j);
            }
        }
    }
    dist
}

pub fn random_grid<R: Rng>(rng: &mut R, w: usize, h: usize) -> Vec<RuntimeTile> {
    (0..w * h)
        .map(|_| match rng.gen_range(0..10) {
            0..=4 => RuntimeTile::Grass,
            5 | 6 => RuntimeTile::Rock,
            7 => RuntimeTile::Water,
            8 => RuntimeTile::Food,
            _ => RuntimeTile::Scrub,
        })
        .collect()
}

pub fn presets() -> [ArchetypeSpec; 5] {
    [
        ArchetypeSpec::a(),
        ArchetypeSpec::b(),
        ArchetypeSpec::c(),
        ArchetypeSpec::d1(),
        ArchetypeSpec::d2(),
    ]
}

fn static_counts(state: &MatchState) -> [usize; 4] {
    [
        state.count(RuntimeTile::Grass),
        state.count(RuntimeTile::Rock),
        state.count(RuntimeTile::Water),
        state.count(RuntimeTile::Food) + state.count(RuntimeTile::Scrub),
    ]
}

/// Plays matches on random levels until `turns` turns have been simulated, checking
/// gauge bounds, tile conservation, victory-point monotonicity and the action period.
/// Odd-numbered matches use uniformly random actions instead of the heuristic policy.
pub fn conservation_fuzz(turns: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = GeneratorConfig::default();
    let archs = presets();
    let cfg = MatchConfig::default();
    let mut done = 0;
    let mut game = 0u64;
    while done < turns {
        let level = generate_level(&gen, &mut rng).map_err(|e| e.to_string())?;
        let pair = [&archs[rng.gen_range(0..5)], &archs[rng.gen_range(0..5)]];
        let mut state = MatchState::new(&level, pair[0], pair[1], &cfg.with_seed(game));
        let counts = static_counts(&state);
        if counts[3] != level.count(TileKind::Food) {
            return Err("initial food count mismatch".into());
        }
        while !state.is_finished() && done < turns {
            let before = *state.players();
            let turn = state.turn_index();
            let applied = if game % 2 == 0 {
                state.step_traced().map_err(|e| e.to_string())?.applied
            } else {
                let pick = |r: &mut ChaCha8Rng| [Action::Up, Action::Down, Action::Left, Action::Right, Action::DoNothing][r.gen_range(0..5)];
                let chosen = [pick(&mut rng), pick(&mut rng)];
                state.step_with(chosen).map_err(|e| e.to_string())?
            };
            done += 1;
            if static_counts(&state) != counts {
                return Err(format!("game {game} turn {turn}: tile counts changed"));
            }
            for k in 0..2 {
                let p = state.player(k);
                if p.health > cfg.max_health || p.food > cfg.max_food || p.water > cfg.max_water {
                    return Err(format!("game {game} turn {turn}: gauge out of range {p:?}"));
                }
                if p.victory_points < before[k].victory_points || p.victory_points > before[k].victory_points + 1 {
                    return Err(format!("game {game} turn {turn}: vp jumped"));
                }
                if !pair[k].acts_on(turn) && applied[k] != Action::DoNothing {
                    return Err(format!("game {game} turn {turn}: player {} acted off-period", k + 1));
                }
                if !passable(state.tile(p.pos), pair[k]) {
                    return Err(format!("game {game} turn {turn}: player {} on impassable tile", k + 1));
                }
            }
        }
        game += 1;
    }
    Ok(())
}

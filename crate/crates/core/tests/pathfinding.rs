mod common;

use common::{bfs_distances, random_grid};
use level_balance::level::{generate_level, GeneratorConfig};
use level_balance::sim::{passable, shortest_path, ArchetypeSpec, GridView, MatchConfig, MatchState};
use level_balance::Position;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_instance(rng: &mut ChaCha8Rng, w: usize, h: usize) {
    let tiles = random_grid(rng, w, h);
    let grid = GridView {
        width: w,
        height: h,
        tiles: &tiles,
    };
    let from = Position::new(rng.gen_range(0..w), rng.gen_range(0..h));
    let goals: Vec<Position> = (0..rng.gen_range(1..5))
        .map(|_| Position::new(rng.gen_range(0..w), rng.gen_range(0..h)))
        .collect();
    for arch in [ArchetypeSpec::a(), ArchetypeSpec::b()] {
        let dist = bfs_distances(grid, from, &arch);
        let best = goals
            .iter()
            .filter_map(|g| dist[g.y * w + g.x].map(|d| (d, g.y * w + g.x)))
            .min();
        let path = shortest_path(grid, from, &goals, &arch);
        match (best, path) {
            (None, None) => {}
            (Some((d, goal)), Some(p)) => {
                assert_eq!(p.len(), d, "length on {w}x{h} for {}", arch.name);
                let end = p.last().copied().unwrap_or(from);
                assert_eq!(end.y * w + end.x, goal, "goal tie-break");
                if d > 0 {
                    let back = bfs_distances(grid, Position::new(goal % w, goal / w), &arch);
                    let first = [(0i64, -1i64), (0, 1), (-1, 0), (1, 0)]
                        .into_iter()
                        .filter_map(|(dx, dy)| {
                            let (x, y) = (from.x as i64 + dx, from.y as i64 + dy);
                            (x >= 0 && y >= 0 && x < w as i64 && y < h as i64).then(|| Position::new(x as usize, y as usize))
                        })
                        .find(|n| back[n.y * w + n.x] == Some(d - 1))
                        .unwrap();
                    assert_eq!(p[0], first, "first step follows Up, Down, Left, Right order");
                }
                let mut prev = from;
                for step in &p {
                    assert_eq!(prev.x.abs_diff(step.x) + prev.y.abs_diff(step.y), 1);
                    assert!(passable(tiles[step.y * w + step.x], &arch));
                    prev = *step;
                }
            }
            (b, p) => panic!("oracle {b:?} vs search {p:?}"),
        }
    }
}

#[test]
fn shortest_path_matches_bfs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..500 {
        let (w, h) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        check_instance(&mut rng, w, h);
    }
    for _ in 0..200 {
        let (w, h) = (rng.gen_range(9..=20), rng.gen_range(5..=20));
        check_instance(&mut rng, w, h);
    }
}

#[test]
fn rock_crossers_reach_a_superset() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let (w, h) = (rng.gen_range(2..=10), rng.gen_range(2..=10));
        let tiles = random_grid(&mut rng, w, h);
        let grid = GridView {
            width: w,
            height: h,
            tiles: &tiles,
        };
        let from = Position::new(rng.gen_range(0..w), rng.gen_range(0..h));
        let a = bfs_distances(grid, from, &ArchetypeSpec::a());
        let b = bfs_distances(grid, from, &ArchetypeSpec::b());
        for i in 0..w * h {
            if let Some(da) = a[i] {
                assert!(b[i].is_some_and(|db| db <= da));
            }
            let goal = [Position::new(i % w, i / w)];
            if shortest_path(grid, from, &goal, &ArchetypeSpec::a()).is_some() {
                assert!(shortest_path(grid, from, &goal, &ArchetypeSpec::b()).is_some());
            }
        }
    }
}

#[test]
fn bitboard_and_general_policies_agree() {
    let gen = GeneratorConfig::default();
    let archs = [
        ArchetypeSpec::a(),
        ArchetypeSpec::b(),
        ArchetypeSpec::c(),
        ArchetypeSpec::d1(),
        ArchetypeSpec::d2(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for round in 0..200 {
        let level = generate_level(&gen, &mut rng).unwrap();
        let a1 = &archs[round % 5];
        let a2 = &archs[(round / 5) % 5];
        let cfg = MatchConfig {
            consume_on_stay: round % 3 == 0,
            ..MatchConfig::default()
        }
        .with_seed(round as u64);
        let mut state = MatchState::new(&level, a1, a2, &cfg);
        while !state.is_finished() {
            for k in 0..2 {
                assert_eq!(state.policy_action(k), state.general_policy(k), "round {round} turn {}", state.turn_index());
            }
            state.step().unwrap();
        }
    }
}

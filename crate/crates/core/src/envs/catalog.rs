use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::{GridGeometry, MOVES_2D};
use super::{EnvSpec, SamplingMode};
use crate::error::{Error, Result};
use crate::meanfield::{DecisionRule, Distribution, MeanFieldState};

pub const ENV_NAMES: [&str; 4] = ["grid1d", "four_room", "predator_prey4", "planning2d"];

pub const GRID1D_C1: f64 = 1000.0;
pub const GRID1D_C2: f64 = 10.0;

/// Door cells of the four-room map as `(x, y)`.
pub const FOUR_ROOM_DOORS: [(usize, usize); 4] = [(5, 2), (5, 8), (2, 5), (8, 5)];

const LOG_FLOOR: f64 = 1e-12;
const STAY_2D: usize = 2;
const TEST_SEED: u64 = 0x5eed_7e57;

/// Optional overrides of an environment's built-in parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub horizon: Option<usize>,
    pub gamma: Option<f64>,
    /// Four-room: probability of a uniform disturbance over the action set.
    pub p_noise: Option<f64>,
    /// grid1d: noise probabilities for displacements (0, −1, +1).
    pub noise: Option<[f64; 3]>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub door_penalty: Option<f64>,
    pub training_mode: Option<SamplingMode>,
}

pub fn build_env(name: &str, cfg: &EnvConfig) -> Result<EnvSpec> {
    match name {
        "grid1d" => grid1d(cfg),
        "four_room" => four_room(cfg),
        "predator_prey4" => predator_prey4(cfg),
        "planning2d" => planning2d(cfg),
        other => Err(Error::UnknownEnvironment(other.to_string())),
    }
}

pub fn build_grid1d() -> EnvSpec {
    grid1d(&EnvConfig::default()).expect("built-in environment is valid")
}

pub fn build_four_room() -> EnvSpec {
    four_room(&EnvConfig::default()).expect("built-in environment is valid")
}

pub fn build_predator_prey4() -> EnvSpec {
    predator_prey4(&EnvConfig::default()).expect("built-in environment is valid")
}

pub fn build_planning2d() -> EnvSpec {
    planning2d(&EnvConfig::default()).expect("built-in environment is valid")
}

fn dot(a: &Distribution, b: &Distribution) -> f64 {
    a.dot(b)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// −s̄ · log(s̄ + s̄′) / log 100 with a floor inside the log.
fn crowd_entropy(own: &Distribution, other: &Distribution) -> f64 {
    let s: f64 = own
        .probs()
        .iter()
        .zip(other.probs())
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p + q + LOG_FLOOR).ln() })
        .sum();
    -s / 100f64.ln()
}

/// −Σ_x s̄(x) Σ_{a ≠ stay} ā(a|x).
fn move_cost(s: &Distribution, rule: &DecisionRule, stay: usize) -> f64 {
    let mut c = 0.0;
    for x in 0..rule.n_states() {
        if s[x] == 0.0 {
            continue;
        }
        c += s[x] * (1.0 - rule.prob(x, stay));
    }
    -c
}

fn check_noise(p: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::InvalidArgument(format!("noise probability {p} outside [0, 1]")))
    }
}

fn grid1d(cfg: &EnvConfig) -> Result<EnvSpec> {
    let c1 = cfg.c1.unwrap_or(GRID1D_C1);
    let c2 = cfg.c2.unwrap_or(GRID1D_C2);
    let noise = cfg.noise.unwrap_or([0.99, 0.005, 0.005]);
    for &p in &noise {
        check_noise(p)?;
    }
    let geo = GridGeometry::open(3, 1, true);
    let noise = [((0, 0), noise[0]), ((-1, 0), noise[1]), ((1, 0), noise[2])];
    let moves = [(0i64, 0i64), (-1, 0), (1, 0)];
    let g = geo.clone();
    let stay = DecisionRule::pure(&[0, 0, 0], 3);
    let tests = vec![
        MeanFieldState::from_vecs(vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]])?,
        MeanFieldState::from_vecs(vec![vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]])?,
        MeanFieldState::from_vecs(vec![vec![0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0]])?,
    ];
    EnvSpec::builder("grid1d", vec![3, 3], vec![3, 3])
        .horizon(cfg.horizon.unwrap_or(5))
        .gamma(cfg.gamma.unwrap_or(0.9))
        .geometry(geo)
        .kernel(true, move |_, x, a, _| g.noisy_move(x, moves[a], &noise))
        .mean_field_reward(move |i, s, rule| {
            let (s1, s2) = (s.coalition(0), s.coalition(1));
            if i == 0 {
                -c1 * l2(stay.as_slice(), rule.as_slice()) - c2 * dot(s1, s2)
            } else {
                -c1 * l2(s1.probs(), s2.probs())
            }
        })
        .training_mode(cfg.training_mode.unwrap_or(SamplingMode::Training))
        .test_set(tests)
        .stay_action_all(0)
        .build()
}

fn four_room_geometry() -> GridGeometry {
    let mut g = GridGeometry::open(11, 11, false);
    for k in 0..11 {
        let (a, b) = (g.index(5, k), g.index(k, 5));
        g.walls[a] = true;
        g.walls[b] = true;
    }
    for &(x, y) in &FOUR_ROOM_DOORS {
        let j = g.index(x, y);
        g.walls[j] = false;
    }
    g.doors = FOUR_ROOM_DOORS.to_vec();
    g
}

fn grid_kernel(
    g: GridGeometry,
    noise: Vec<((i64, i64), f64)>,
) -> impl Fn(usize, usize, usize, &MeanFieldState) -> Vec<(usize, f64)> {
    move |_, x, a, _| {
        if g.walls[x] {
            // unreachable cells still need a valid row
            return vec![(x, 1.0)];
        }
        g.noisy_move(x, MOVES_2D[a], &noise)
    }
}

/// Uniform distribution over `cells`.
fn uniform_on(n: usize, cells: &[usize]) -> Result<Distribution> {
    let mut v = vec![0.0; n];
    for &c in cells {
        v[c] = 1.0;
    }
    Distribution::from_weights(v)
}

fn four_room(cfg: &EnvConfig) -> Result<EnvSpec> {
    let p = check_noise(cfg.p_noise.unwrap_or(0.0))?;
    let door_penalty = cfg.door_penalty.unwrap_or(30.0);
    let geo = four_room_geometry();
    let n = geo.num_cells();
    let mut noise = vec![((0, 0), 1.0 - p)];
    if p > 0.0 {
        noise.extend(MOVES_2D.iter().map(|&d| (d, p / MOVES_2D.len() as f64)));
    }
    let doors: Vec<usize> = FOUR_ROOM_DOORS.iter().map(|&(x, y)| geo.index(x, y)).collect();

    let rooms: Vec<Vec<usize>> = [(0, 0), (6, 0), (0, 6), (6, 6)]
        .iter()
        .map(|&(ox, oy)| {
            let mut cells = Vec::with_capacity(25);
            for y in oy..oy + 5 {
                for x in ox..ox + 5 {
                    cells.push(geo.index(x, y));
                }
            }
            cells
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(TEST_SEED);
    let mut tests = Vec::new();
    for _ in 0..3 {
        let mut order = [0usize, 1, 2, 3];
        order.shuffle(&mut rng);
        let mut pair = Vec::new();
        for &room in &order[..2] {
            let mut cells = rooms[room].clone();
            cells.shuffle(&mut rng);
            cells.truncate(6);
            cells.sort_unstable();
            pair.push(uniform_on(n, &cells)?);
        }
        tests.push(MeanFieldState::new(pair));
    }

    let mask = geo.walls.clone();
    EnvSpec::builder("four_room", vec![n, n], vec![5, 5])
        .horizon(cfg.horizon.unwrap_or(40))
        .gamma(cfg.gamma.unwrap_or(0.99))
        .forbidden(0, mask.clone())
        .forbidden(1, mask)
        .kernel(true, grid_kernel(geo.clone(), noise))
        .geometry(geo)
        .mean_field_reward(move |i, s, _| {
            let (s1, s2) = (s.coalition(0), s.coalition(1));
            if i == 0 {
                crowd_entropy(s1, s2)
            } else {
                crowd_entropy(s2, s1) - door_penalty * doors.iter().map(|&d| s2[d]).sum::<f64>()
            }
        })
        .training_mode(cfg.training_mode.unwrap_or(SamplingMode::Training))
        .test_set(tests)
        .stay_action_all(STAY_2D)
        .build()
}

fn predator_prey4(cfg: &EnvConfig) -> Result<EnvSpec> {
    let c1 = cfg.c1.unwrap_or(100.0);
    let c2 = cfg.c2.unwrap_or(100.0);
    let geo = GridGeometry::open(5, 5, false);
    let n = geo.num_cells();

    let mut rng = ChaCha8Rng::seed_from_u64(TEST_SEED ^ 4);
    let all: Vec<usize> = (0..n).collect();
    let mut tests = Vec::new();
    for _ in 0..5 {
        let mut tuple = Vec::new();
        for _ in 0..4 {
            let mut cells = all.clone();
            cells.shuffle(&mut rng);
            cells.truncate(3);
            cells.sort_unstable();
            tuple.push(uniform_on(n, &cells)?);
        }
        tests.push(MeanFieldState::new(tuple));
    }

    EnvSpec::builder("predator_prey4", vec![n; 4], vec![5; 4])
        .horizon(cfg.horizon.unwrap_or(21))
        .gamma(cfg.gamma.unwrap_or(0.99))
        .kernel(true, grid_kernel(geo.clone(), vec![((0, 0), 1.0)]))
        .geometry(geo)
        .mean_field_reward(move |i, s, rule| {
            let mv = c1 * move_cost(s.coalition(i), rule, STAY_2D);
            let c = |j: usize| s.coalition(j);
            let chase = match i {
                0 => dot(c(0), c(1)),
                3 => -dot(c(2), c(3)),
                _ => dot(c(i), c(i + 1)) - dot(c(i - 1), c(i)),
            };
            mv + c2 * chase
        })
        .training_mode(cfg.training_mode.unwrap_or(SamplingMode::Training))
        .test_set(tests)
        .stay_action_all(STAY_2D)
        .build()
}

fn planning2d(cfg: &EnvConfig) -> Result<EnvSpec> {
    let c1 = cfg.c1.unwrap_or(1.0);
    let c2 = cfg.c2.unwrap_or(2.0);
    let c3 = cfg.c3.unwrap_or(5.0);
    let mut geo = GridGeometry::open(5, 5, false);
    let center = geo.index(2, 2);
    geo.walls[center] = true;
    let n = geo.num_cells();
    let targets = [planning_target(0), planning_target(1)];

    let open: Vec<usize> = (0..n).filter(|&c| c != center).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(TEST_SEED ^ 2);
    let mut tests = Vec::new();
    for _ in 0..4 {
        let mut cells = open.clone();
        cells.shuffle(&mut rng);
        tests.push(MeanFieldState::new(vec![
            Distribution::point_mass(n, cells[0]),
            Distribution::point_mass(n, cells[1]),
        ]));
    }

    let mask = geo.walls.clone();
    EnvSpec::builder("planning2d", vec![n, n], vec![5, 5])
        .horizon(cfg.horizon.unwrap_or(10))
        .gamma(cfg.gamma.unwrap_or(0.99))
        .forbidden(0, mask.clone())
        .forbidden(1, mask)
        .kernel(true, grid_kernel(geo.clone(), vec![((0, 0), 1.0)]))
        .geometry(geo)
        .mean_field_reward(move |i, s, rule| {
            let own = s.coalition(i);
            c1 * move_cost(own, rule, STAY_2D)
                - c2 * l2(own.probs(), targets[i].probs())
                - c3 * dot(s.coalition(0), s.coalition(1))
        })
        .training_mode(cfg.training_mode.unwrap_or(SamplingMode::OneHot))
        .test_set(tests)
        .stay_action_all(STAY_2D)
        .build()
}

/// Target distribution of coalition `i` in `planning2d`.
pub fn planning_target(i: usize) -> Distribution {
    let x0 = if i == 0 { 0 } else { 3 };
    let cells: Vec<usize> = (x0..x0 + 2).flat_map(|y| (x0..x0 + 2).map(move |x| y * 5 + x)).collect();
    uniform_on(25, &cells).expect("non-empty target")
}

use std::cell::Cell;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use mftg::ddpg::{perturb_rule, train_ddpg_mftg_observed, DdpgAgent, DdpgHyper};
use mftg::envs::{build_env, build_grid1d, convex_target, decoupled_toy, EnvConfig, EnvSpec, ENV_NAMES};
use mftg::eval::{exploitability, rollout, BrConfig, Dynamics};
use mftg::nagents::{ols, simulate_finite, AgentPopulation};
use mftg::nashq::{train_dnashq, train_il_mftg, IlGreedyPolicy, NashQHyper, NashQPolicy, QTables};
use mftg::neural::{Activation, Head, InitScheme, LayerSpec, NetParams, NetSpec};
use mftg::policy::{FnPolicy, LinearSoftmaxPolicy, MeanFieldPolicy, PolicyProfile};
use mftg::quantize::{binomial, discretize_actions, DiscreteActionSet, SimplexGrid, StateGrid};
use mftg::stagegame::{solve_stage_nash, verify_nash, StagePayoffs};
use mftg::{DecisionRule, Distribution, MeanFieldState};
use mftg_cli::pipeline::{run_rate, RateRequest};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::oracles::{self, OwnModel, ToyOracle};
use crate::Verdict;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

fn pure_sets(env: &EnvSpec) -> Vec<DiscreteActionSet> {
    (0..env.num_coalitions()).map(|i| discretize_actions(env, i, 1).unwrap()).collect()
}

fn random_profile(env: &EnvSpec, scale: f64, rng: &mut ChaCha8Rng) -> PolicyProfile {
    (0..env.num_coalitions())
        .map(|i| Arc::new(LinearSoftmaxPolicy::random(env, i, scale, rng)) as Arc<dyn MeanFieldPolicy>)
        .collect()
}

pub fn population_rate() -> Verdict {
    let env = build_grid1d();
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let out = pool
        .install(|| {
            run_rate(RateRequest {
                env: &env,
                profile: None,
                n_list: vec![100, 1000, 10_000],
                reps: 30,
                t: 4,
                seed: 0,
                test_index: None,
                synthetic: false,
            })
        })
        .unwrap();
    let secs = start.elapsed().as_secs_f64();
    let slope = out.fit.slope;
    Verdict::new(
        (-0.7..=-0.3).contains(&slope) && secs <= 600.0,
        format!("slope {slope:.4} (se {:.4}) in [-0.7, -0.3], single-threaded {secs:.1} s <= 600 s", out.fit.slope_se),
    )
}

fn random_bimatrix(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut m = || (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    (m(), m())
}

pub fn stage_game_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut games = 0;
    let mut worst_eps: f64 = 0.0;
    let mut misses = Vec::new();
    for (n, count) in [(2, 500), (3, 100)] {
        for g in 0..count {
            let (a, b) = random_bimatrix(n, &mut rng);
            let game = StagePayoffs::bimatrix(&a, &b).unwrap();
            let p = solve_stage_nash(&game).unwrap();
            worst_eps = worst_eps.max(verify_nash(&game, &p).unwrap());
            let (x, y) = (p.strategies[0].probs(), p.strategies[1].probs());
            let member = oracles::support_enumeration(&a, &b)
                .iter()
                .any(|(ox, oy)| ox.iter().zip(x).chain(oy.iter().zip(y)).all(|(u, v)| (u - v).abs() <= 1e-6));
            if !member {
                misses.push(format!("{n}x{n}#{g}"));
            }
            games += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        worst_eps <= 1e-7 && misses.is_empty() && secs <= 120.0,
        format!(
            "{games} games, max deviation gain {worst_eps:.2e} <= 1e-7, {} outside the enumerated equilibrium set {:?}",
            misses.len(),
            &misses[..misses.len().min(5)]
        ),
    )
}

const TOY_GAMMA: f64 = 0.5;

fn toy_setup(k: usize) -> (EnvSpec, StateGrid, Vec<DiscreteActionSet>) {
    let env = decoupled_toy(TOY_GAMMA);
    let grid = StateGrid::new(&env, k).unwrap();
    let sets = pure_sets(&env);
    (env, grid, sets)
}

fn toy_tables(env: &EnvSpec, grid: &StateGrid, sets: &[DiscreteActionSet], episodes: usize, seed: u64) -> QTables {
    let hyper = NashQHyper::for_env(env, episodes);
    train_dnashq(env, grid, sets, &hyper, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().tables
}

/// Joint state indices whose trained greedy action leaves the oracle's argmax set.
fn greedy_mismatches(env: &EnvSpec, grid: &StateGrid, sets: &[DiscreteActionSet], tables: &QTables) -> Vec<usize> {
    let oracle: Vec<Vec<Vec<f64>>> = (0..env.num_coalitions())
        .map(|i| oracles::value_iteration(&oracles::own_model(env, grid, sets, i), TOY_GAMMA))
        .collect();
    let profile = NashQPolicy::profile(tables.clone(), grid.clone(), sets.to_vec());
    (0..grid.len())
        .filter(|&s| {
            let state = grid.state(s);
            let parts = grid.split(s);
            (0..env.num_coalitions()).any(|i| {
                let rule = profile[i].decide(0, &state).unwrap();
                let a = sets[i].index_of(&rule).unwrap();
                let q = &oracle[i][parts[i]];
                let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                q[a] < best - 1e-9
            })
        })
        .collect()
}

pub fn nashq_fixed_point() -> Verdict {
    let start = Instant::now();
    let env = EnvSpec::builder("single", vec![1, 1], vec![1, 1])
        .horizon(1)
        .gamma(0.5)
        .kernel(true, |_, _, _, _| vec![(0, 1.0)])
        .mean_field_reward(|_, _, _| 1.0)
        .build()
        .unwrap();
    let grid = StateGrid::new(&env, 1).unwrap();
    let sets = pure_sets(&env);
    let hyper = NashQHyper::for_env(&env, 10_000);
    let run = train_dnashq(&env, &grid, &sets, &hyper, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let updates = run.tables.total_visits();
    let err = (0..2).map(|i| (run.tables.get(i, 0, 0).unwrap() - 2.0).abs()).fold(0.0, f64::max);

    let (env, grid, sets) = toy_setup(9);
    let tables = toy_tables(&env, &grid, &sets, 100_000, 3);
    let misses = greedy_mismatches(&env, &grid, &sets, &tables);
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        err <= 1e-3 && updates <= 10_000 && misses.is_empty() && secs <= 300.0,
        format!(
            "single-state |Q - 2| = {err:.2e} after {updates} updates (need <= 1e-3); decoupled toy |S| = {}: {} states off the value-iteration argmax",
            grid.len(),
            misses.len()
        ),
    )
}

const REFINEMENT_EPISODES: usize = 400_000;

/// Max-norm gap between the exact fixed point of the projected game and the continuous optimum.
fn limit_error(k: usize, oracle: &[ToyOracle]) -> f64 {
    let (env, grid, sets) = toy_setup(k);
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        let q = oracles::value_iteration(&oracles::own_model(&env, &grid, &sets, i), TOY_GAMMA);
        for (x, row) in q.iter().enumerate() {
            let mu0 = grid.coalition_point(i, x).probs()[0];
            for (a, v) in row.iter().enumerate() {
                let pure = oracles::pure_actions(&sets[i].rule(a));
                worst = worst.max((v - oracle[i].q(mu0, [pure[0], pure[1]])).abs());
            }
        }
    }
    worst
}

/// Largest gap between trained entries and the continuous-state optimum over visited pairs.
fn refinement_error(k: usize, seed: u64, oracle: &[ToyOracle]) -> f64 {
    let (env, grid, sets) = toy_setup(k);
    let tables = toy_tables(&env, &grid, &sets, REFINEMENT_EPISODES, seed);
    let mut worst: f64 = 0.0;
    for s in 0..grid.len() {
        let state = grid.state(s);
        for joint in 0..tables.joint_size() {
            if tables.count(s, joint).unwrap() == 0 {
                continue;
            }
            let acts = [joint / sets[1].len(), joint % sets[1].len()];
            for i in 0..2 {
                let pure = oracles::pure_actions(&sets[i].rule(acts[i]));
                let exact = oracle[i].q(state.coalition(i)[0], [pure[0], pure[1]]);
                worst = worst.max((tables.get(i, s, joint).unwrap() - exact).abs());
            }
        }
    }
    worst
}

pub fn resolution_refinement() -> Verdict {
    let start = Instant::now();
    let oracle: Vec<ToyOracle> = (0..2).map(|i| ToyOracle::new(i, TOY_GAMMA, 4000)).collect();
    let stats: Vec<(usize, f64, f64)> = [2, 4, 8]
        .iter()
        .map(|&k| {
            let errs: Vec<f64> = (0..5u64).into_par_iter().map(|seed| refinement_error(k, seed, &oracle)).collect();
            let (m, s) = mean_std(&errs);
            (k, m, s)
        })
        .collect();
    let monotone = stats.windows(2).all(|w| w[1].1 <= w[0].1 + w[0].2.max(w[1].2));
    let secs = start.elapsed().as_secs_f64();
    let rows: Vec<String> = stats
        .iter()
        .map(|(k, m, s)| {
            format!("k={k}: {m:.4} ± {s:.4} (exact projected fixed point {:.4})", limit_error(*k, &oracle))
        })
        .collect();
    Verdict::new(
        monotone && secs <= 900.0,
        format!(
            "max-norm error after {REFINEMENT_EPISODES} episodes, 5 seeds: {}; {secs:.0} s <= 900 s",
            rows.join(", ")
        ),
    )
}

/// Player `i`'s policy re-expressed in the relabeled action order.
fn relabel_profile(profile: &PolicyProfile, i: usize, perm: Vec<usize>) -> PolicyProfile {
    let mut out = profile.clone();
    let inner = profile[i].clone();
    out[i] = Arc::new(FnPolicy(move |t: usize, s: &MeanFieldState| Ok(inner.decide(t, s)?.permute_actions(&perm))));
    out
}

fn exhaustive(env: &EnvSpec, k: usize) -> BrConfig {
    BrConfig::exhaustive(env, StateGrid::new(env, k).unwrap(), pure_sets(env))
}

/// Per-player backward induction on the decoupled toy's projected game.
fn toy_oracle_nash(env: &EnvSpec, k: usize) -> PolicyProfile {
    let grid = StateGrid::new(env, k).unwrap();
    let sets = pure_sets(env);
    (0..2)
        .map(|i| {
            let model: OwnModel = oracles::own_model(env, &grid, &sets, i);
            let plan = oracles::backward_induction(&model, env.gamma(), env.horizon());
            let (grid, set) = (grid.clone(), sets[i].clone());
            Arc::new(FnPolicy(move |t: usize, s: &MeanFieldState| {
                let x = grid.project_components(s)?[i];
                Ok(set.rule(plan[t.min(plan.len() - 1)][x]))
            })) as Arc<dyn MeanFieldPolicy>
        })
        .collect()
}

pub fn exploitability_soundness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut min_e = f64::INFINITY;
    let mut profiles = 0;
    for (env, k) in [(build_grid1d(), 4), (decoupled_toy(0.9), 8), (decoupled_toy(0.5), 4)] {
        let cfg = exhaustive(&env, k);
        for _ in 0..10 {
            let scale = rng.random_range(0.0..4.0);
            let profile = random_profile(&env, scale, &mut rng);
            let r = exploitability(&env, &profile, &env.test_set(), &cfg, &mut rng).unwrap();
            min_e = r.exploitabilities.iter().copied().fold(min_e, f64::min);
            profiles += 1;
        }
    }

    let mut max_nash_e: f64 = 0.0;
    for gamma in [0.5, 0.9] {
        for k in [4, 8] {
            let env = decoupled_toy(gamma);
            let profile = toy_oracle_nash(&env, k);
            let r = exploitability(&env, &profile, &env.test_set(), &exhaustive(&env, k), &mut rng).unwrap();
            max_nash_e = r.exploitabilities.iter().copied().fold(max_nash_e, f64::max);
        }
    }

    let mut max_shift: f64 = 0.0;
    for (env, k) in [(build_grid1d(), 2), (decoupled_toy(0.9), 4)] {
        for _ in 0..5 {
            let who = rng.random_range(0..2);
            let mut perm: Vec<usize> = (0..env.num_actions(who)).collect();
            perm.shuffle(&mut rng);
            let relabeled = env.relabel_actions(who, &perm).unwrap();
            let profile = random_profile(&env, 2.0, &mut rng);
            let moved = relabel_profile(&profile, who, perm);
            let a = exploitability(&env, &profile, &env.test_set(), &exhaustive(&env, k), &mut rng).unwrap();
            let b = exploitability(&relabeled, &moved, &env.test_set(), &exhaustive(&relabeled, k), &mut rng).unwrap();
            for i in 0..2 {
                max_shift = max_shift
                    .max((a.exploitabilities[i] - b.exploitabilities[i]).abs() / (1.0 + a.exploitabilities[i].abs()));
            }
        }
    }
    Verdict::new(
        min_e >= -1e-9 && max_nash_e <= 1e-6 && max_shift <= 1e-9,
        format!(
            "min E over {profiles} profiles {min_e:.3e} >= -1e-9; max E at oracle Nash {max_nash_e:.3e} <= 1e-6; relabeling changes E by {max_shift:.1e}"
        ),
    )
}

pub fn dnashq_vs_independent() -> Verdict {
    let start = Instant::now();
    let env = build_grid1d();
    let (k, episodes) = (10, 4000);
    let grid = StateGrid::new(&env, k).unwrap();
    let sets = pure_sets(&env);
    let hyper = NashQHyper::for_env(&env, episodes);
    let cfg = BrConfig::exhaustive(&env, grid.clone(), sets.clone());
    let tests = env.test_set();
    let totals: Vec<(f64, f64)> = (0..3u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = train_dnashq(&env, &grid, &sets, &hyper, &mut rng).unwrap().tables;
            let il = train_il_mftg(&env, &grid, &sets, &hyper, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().tables;
            let dn = NashQPolicy::profile(q, grid.clone(), sets.clone());
            let ind = IlGreedyPolicy::profile(il, grid.clone(), sets.clone());
            let e_dn =
                exploitability(&env, &dn, &tests, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap().total;
            let e_il =
                exploitability(&env, &ind, &tests, &cfg, &mut ChaCha8Rng::seed_from_u64(100 + seed)).unwrap().total;
            (e_dn, e_il)
        })
        .collect();
    let dn: Vec<f64> = totals.iter().map(|t| t.0).collect();
    let il: Vec<f64> = totals.iter().map(|t| t.1).collect();
    let (m_dn, _) = mean_std(&dn);
    let (m_il, _) = mean_std(&il);
    let secs = start.elapsed().as_secs_f64();
    Verdict::new(
        m_dn <= 0.7 * m_il && secs <= 3600.0,
        format!(
            "grid1d k = {k}, {episodes} episodes, 3 seeds: mean exploitability DNashQ {m_dn:.2} {dn:.1?} vs IL {m_il:.2} {il:.1?} (need ratio <= 0.7, got {:.3})",
            m_dn / m_il
        ),
    )
}

const FD_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    [Activation::Relu, Activation::Tanh, Activation::Linear][rng.random_range(0..3)]
}

fn random_spec(rng: &mut ChaCha8Rng) -> NetSpec {
    let hidden: Vec<LayerSpec> =
        (0..rng.random_range(0..3)).map(|_| LayerSpec::new(rng.random_range(1..=8), random_activation(rng))).collect();
    let embed = rng.random_bool(0.5).then(|| LayerSpec::new(rng.random_range(1..=8), random_activation(rng)));
    let blocks: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(1..=4)).collect();
    let (output, head) = if rng.random_bool(0.5) {
        let (r, c) = (rng.random_range(1..=3), rng.random_range(2..=3));
        (r * c, Head::RowSoftmax { rows: r, cols: c })
    } else {
        (rng.random_range(1..=3), Head::Identity)
    };
    NetSpec {
        blocks,
        passthrough: if embed.is_some() { rng.random_range(0..=3) } else { 0 },
        embed,
        hidden,
        output,
        output_activation: random_activation(rng),
        head,
    }
}

fn random_net(spec: &NetSpec, rng: &mut ChaCha8Rng) -> NetParams {
    let mut net = NetParams::init(spec, InitScheme::FanIn, rng).unwrap();
    let flat: Vec<f64> = net.flat().iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    net.set_flat(&flat).unwrap();
    net
}

/// Worst relative error of `grad` against central differences of `f` at `theta`.
fn fd_check(theta: &[f64], grad: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut t = theta.to_vec();
    for k in 0..theta.len() {
        t[k] = theta[k] + FD_STEP;
        let plus = f(&t);
        t[k] = theta[k] - FD_STEP;
        let minus = f(&t);
        t[k] = theta[k];
        worst = worst.max(relative_error(grad[k], (plus - minus) / (2.0 * FD_STEP)));
    }
    worst
}

fn plain_net_error(rng: &mut ChaCha8Rng) -> f64 {
    let spec = random_spec(rng);
    let net = random_net(&spec, rng);
    let batch = rng.random_range(1..=3);
    let x = Array2::from_shape_fn((batch, spec.input_dim()), |_| rng.random_range(-1.0..1.0));
    let c = Array2::from_shape_fn((batch, spec.output), |_| rng.random_range(-1.0..1.0));
    let (grads, dx) = net.backward(&net.forward_batch(x.view()).unwrap(), c.view()).unwrap();
    let loss = |p: &NetParams, x: &Array2<f64>| (p.forward_batch(x.view()).unwrap().output() * &c).sum();
    let by_params = fd_check(&net.flat(), &grads.flat(), |t| {
        let mut p = net.clone();
        p.set_flat(t).unwrap();
        loss(&p, &x)
    });
    let flat_x: Vec<f64> = x.iter().copied().collect();
    let by_input = fd_check(&flat_x, &dx.iter().copied().collect::<Vec<_>>(), |t| {
        loss(&net, &Array2::from_shape_vec(x.raw_dim(), t.to_vec()).unwrap())
    });
    by_params.max(by_input)
}

/// Q(s, π(s)) differentiated w.r.t. the actor parameters through the critic.
fn chained_error(rng: &mut ChaCha8Rng) -> f64 {
    let (ns, na, sdim) = (rng.random_range(1..=3), rng.random_range(2..=3), rng.random_range(2..=5));
    let width = rng.random_range(2..=6);
    let layer = |rng: &mut ChaCha8Rng| vec![LayerSpec::new(width, random_activation(rng))];
    let actor_spec = NetSpec {
        blocks: vec![sdim],
        passthrough: 0,
        embed: Some(LayerSpec::new(width, Activation::Tanh)),
        hidden: layer(rng),
        output: ns * na,
        output_activation: Activation::Linear,
        head: Head::RowSoftmax { rows: ns, cols: na },
    };
    let critic_spec = NetSpec {
        blocks: vec![sdim],
        passthrough: ns * na,
        embed: Some(LayerSpec::new(width, Activation::Tanh)),
        hidden: layer(rng),
        output: 1,
        output_activation: Activation::Linear,
        head: Head::Identity,
    };
    let actor = random_net(&actor_spec, rng);
    let critic = random_net(&critic_spec, rng);
    let s: Vec<f64> = (0..sdim).map(|_| rng.random_range(0.0..1.0)).collect();

    let s_row = Array2::from_shape_vec((1, sdim), s.clone()).unwrap();
    let a_cache = actor.forward_batch(s_row.view()).unwrap();
    let mut input = s.clone();
    input.extend(a_cache.output().iter());
    let c_in = Array2::from_shape_vec((1, input.len()), input).unwrap();
    let (_, d_in) = critic.backward(&critic.forward_batch(c_in.view()).unwrap(), Array2::ones((1, 1)).view()).unwrap();
    let d_action = d_in.slice(ndarray::s![.., sdim..]).to_owned();
    let (grads, _) = actor.backward(&a_cache, d_action.view()).unwrap();

    fd_check(&actor.flat(), &grads.flat(), |t| {
        let mut a = actor.clone();
        a.set_flat(t).unwrap();
        let mut input = s.clone();
        input.extend(a.forward(&s).unwrap());
        critic.forward(&input).unwrap()[0]
    })
}

pub fn gradient_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let plain = (0..50).map(|_| plain_net_error(&mut rng)).fold(0.0, f64::max);
    let chained = (0..50).map(|_| chained_error(&mut rng)).fold(0.0, f64::max);
    Verdict::new(
        plain <= 1e-4 && chained <= 1e-4,
        format!("worst relative error {plain:.2e} over 50 networks, {chained:.2e} over 50 actor-through-critic chains (<= 1e-4)"),
    )
}

/// First evaluated episode at which the actor is within 0.1 (L1) of the target rule.
fn convex_reach() -> (Option<usize>, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = DecisionRule::from_rows(
        (0..3)
            .map(|_| {
                Distribution::from_weights((0..3).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap().into_inner()
            })
            .collect(),
    )
    .unwrap();
    let env = convex_target(&target, 0.9).unwrap();
    let hyper = DdpgHyper { episodes: 5000, eval_every: 0, width: 64, ..DdpgHyper::for_env(&env) };
    let probe = env.test_set().entries[0].clone();
    let mut reached = None;
    let mut best = f64::INFINITY;
    train_ddpg_mftg_observed(&env, &hyper, false, &mut rng, &mut |m, agents| {
        if m.episode % 10 == 9 {
            let rule = agents[0].policy().decide(0, &probe)?;
            let d = oracles::l1(rule.as_slice(), target.as_slice());
            best = best.min(d);
            if d <= 0.1 && reached.is_none() {
                reached = Some(m.episode + 1);
            }
        }
        Ok(())
    })
    .unwrap();
    (reached, best)
}

/// Per-seed (episode, summed test return) points of a 2000-episode planning2d run.
fn planning_trend(seed: u64) -> Vec<(f64, f64)> {
    let env = build_env("planning2d", &EnvConfig::default()).unwrap();
    let base = DdpgHyper::for_env(&env);
    let episodes = 2000;
    let hyper = DdpgHyper {
        episodes,
        eval_every: 50,
        milestones: base.milestones.iter().map(|m| m * episodes / base.episodes).collect(),
        ..base
    };
    let mut points = Vec::new();
    train_ddpg_mftg_observed(&env, &hyper, false, &mut ChaCha8Rng::seed_from_u64(seed), &mut |m, _| {
        if let Some(r) = &m.test_returns {
            points.push((m.episode as f64, r.iter().sum()));
        }
        Ok(())
    })
    .unwrap();
    points
}

pub fn ddpg_smoke() -> Verdict {
    let ((reached, best), trend) =
        rayon::join(convex_reach, || (0..3u64).into_par_iter().map(planning_trend).collect::<Vec<_>>());
    let per_seed: Vec<String> = trend
        .iter()
        .map(|run| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = run.iter().copied().unzip();
            format!("{:.2e}", ols(&xs, &ys).unwrap().slope)
        })
        .collect();
    let points: Vec<(f64, f64)> = trend.into_iter().flatten().collect();
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = ols(&xs, &ys).unwrap();
    let dof = points.len() as f64 - 2.0;
    let critical = StudentsT::new(0.0, 1.0, dof).unwrap().inverse_cdf(0.95);
    let t = fit.slope / fit.slope_se;
    Verdict::new(
        reached.is_some() && fit.slope > 0.0 && t > critical,
        format!(
            "convex target within 0.1 at episode {reached:?} (best {best:.3}); planning2d test-return slope {:.3e}/episode, t = {t:.2} vs one-sided 95% critical {critical:.2} over {} points (per-seed slopes {})",
            fit.slope,
            points.len(),
            per_seed.join(", ")
        ),
    )
}

pub fn simplex_machinery() -> Verdict {
    let mut card_bad = 0;
    for n in 1..=6 {
        for k in 1..=12 {
            let expected = oracles::pascal(k + n - 1, n - 1);
            let grid = SimplexGrid::new(n, k).unwrap();
            if grid.len() as u128 != expected || binomial((k + n - 1) as u64, (n - 1) as u64) != expected {
                card_bad += 1;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut proj_bad = 0;
    for _ in 0..10_000 {
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=6);
        let weights: Vec<f64> =
            (0..n).map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) }).collect();
        let Ok(d) = Distribution::from_weights(weights) else { continue };
        let grid = SimplexGrid::new(n, k).unwrap();
        let p = grid.project(d.probs());
        let idempotent = grid.project(p.probs()) == p && grid.index_of(p.probs()).is_some();
        let best = oracles::compositions(n, k).iter().map(|c| oracles::l1(d.probs(), c)).fold(f64::INFINITY, f64::min);
        if !idempotent || oracles::l1(d.probs(), p.probs()) > best + 1e-12 {
            proj_bad += 1;
        }
    }

    let (checked, sweep_bad) = distribution_sweep(&mut rng);
    Verdict::new(
        card_bad == 0 && proj_bad == 0 && sweep_bad == 0,
        format!(
            "{card_bad} cardinality mismatches (n <= 6, k <= 12); {proj_bad} of 10000 projections not idempotent or not nearest; {sweep_bad} of {checked} distributions off the simplex"
        ),
    )
}

/// Checks every distribution the system hands out across environments and code paths.
fn distribution_sweep(rng: &mut ChaCha8Rng) -> (usize, usize) {
    let checked = Cell::new(0);
    let bad = Cell::new(0);
    let check = |d: &Distribution| {
        checked.set(checked.get() + 1);
        bad.set(bad.get() + usize::from(!oracles::sums_to_one(d)));
    };
    let rule_rows = |r: &DecisionRule| -> Vec<Distribution> {
        (0..r.n_states()).map(|x| Distribution::new(r.row(x).to_vec())).collect::<Result<_, _>>().unwrap_or_default()
    };

    let mut envs: Vec<EnvSpec> = ENV_NAMES.iter().map(|n| build_env(n, &EnvConfig::default()).unwrap()).collect();
    envs.push(decoupled_toy(0.9));
    envs.push(convex_target(&DecisionRule::uniform(2, 3), 0.9).unwrap());
    for env in &envs {
        let profile = random_profile(env, 2.0, rng);
        let mut starts = env.test_set().entries;
        for _ in 0..5 {
            starts.push(env.sample_training(rng).unwrap());
        }
        let small = env.state_sizes().iter().all(|&n| n <= 4);
        let grid = StateGrid::new(env, 3).ok().filter(|_| small);
        for s0 in &starts {
            s0.coalitions().iter().for_each(check);
            let mut runs = vec![rollout(env, &profile, s0, env.horizon(), Dynamics::Continuous).unwrap()];
            if let Some(g) = &grid {
                runs.push(rollout(env, &profile, s0, env.horizon(), Dynamics::Projected(g)).unwrap());
            }
            for run in &runs {
                run.states.iter().flat_map(|s| s.coalitions()).for_each(check);
                for rules in &run.rules {
                    for r in rules {
                        let rows = rule_rows(r);
                        bad.set(bad.get() + usize::from(rows.len() != r.n_states()));
                        rows.iter().for_each(check);
                    }
                }
            }
            let counts = vec![50; env.num_coalitions()];
            AgentPopulation::sample(s0, &counts, rng).unwrap().empirical().coalitions().iter().for_each(check);
            let finite = simulate_finite(env, &profile, &counts, s0, env.horizon().min(5), rng).unwrap();
            finite.path.iter().flat_map(|s| s.coalitions()).for_each(check);
        }
        let h = DdpgHyper { width: 8, ..DdpgHyper::for_env(env) };
        for i in 0..env.num_coalitions() {
            let agent = DdpgAgent::new(env, i, false, &h, rng).unwrap();
            let rule = agent.policy().decide(0, &starts[0]).unwrap();
            let noise: Vec<f64> = (0..rule.as_slice().len()).map(|_| rng.random_range(-2.0..2.0)).collect();
            for r in [&rule, &perturb_rule(&rule, &noise)] {
                rule_rows(r).iter().for_each(check);
            }
            if small {
                let set = discretize_actions(env, i, 2).unwrap();
                set.rules().flat_map(|r| rule_rows(&r)).for_each(|d| check(&d));
            }
        }
        if let Some(g) = &grid {
            (0..g.len()).flat_map(|s| g.state(s).into_inner()).for_each(|d| check(&d));
        }
    }
    (checked.get(), bad.get())
}

fn mftg(dir: &Path, args: &[&str]) -> bool {
    Command::new(std::env::current_exe().unwrap())
        .arg(crate::CLI_MODE)
        .args(args)
        .current_dir(dir)
        .env_remove("MFTG_SEED")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

pub fn determinism() -> Verdict {
    let roots = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let runs: [(&str, Vec<&str>); 4] = [
        ("dnashq", vec!["--episodes", "300", "--eval.every", "100"]),
        ("il_mftg", vec!["--episodes", "300", "--eval.every", "100"]),
        (
            "ddpg",
            vec![
                "--episodes",
                "30",
                "--ddpg.width",
                "16",
                "--ddpg.batch",
                "8",
                "--ddpg.eval_every",
                "10",
                "--eval.method",
                "exhaustive",
                "--eval.state_resolution",
                "3",
                "--eval.every",
                "15",
            ],
        ),
        (
            "ddpg_ablated",
            vec![
                "--episodes",
                "30",
                "--ddpg.width",
                "16",
                "--ddpg.batch",
                "8",
                "--eval.method",
                "tabular",
                "--eval.budget",
                "100",
                "--eval.state_resolution",
                "3",
                "--eval.every",
                "30",
            ],
        ),
    ];
    let mut ok = true;
    for root in &roots {
        let dir = root.path();
        for (algo, extra) in &runs {
            let mut args = vec!["train", "--algo", algo, "--seed", "11"];
            args.extend(extra.iter().copied());
            ok &= mftg(dir, &args);
        }
        let ck = dir.join("runs/grid1d-dnashq-seed11/checkpoints/tables.bin");
        ok &= mftg(dir, &["eval", "--checkpoint", ck.to_str().unwrap(), "--report-dir", "eval"]);
        let actors = dir.join("runs/grid1d-ddpg-seed11/checkpoints/actors.bin");
        ok &= mftg(
            dir,
            &[
                "exploitability",
                "--checkpoint",
                actors.to_str().unwrap(),
                "--eval.method",
                "deep",
                "--eval.budget",
                "20",
                "--report-dir",
                "deep",
            ],
        );
        ok &= mftg(dir, &["exploitability", "--profile", "random", "--seed", "4", "--report-dir", "random"]);
        ok &= mftg(dir, &["rate", "--n-list", "50,200,800", "--reps", "5", "--seed", "4", "--out", "rate"]);
    }
    if !ok {
        return Verdict::new(false, "a command failed");
    }
    let mut files = Vec::new();
    for (algo, _) in &runs {
        let run = format!("runs/grid1d-{algo}-seed11");
        for f in [
            "metrics.csv",
            "config.json",
            "reports/exploitability.json",
            "reports/exploitability.csv",
            "reports/trajectories.csv",
        ] {
            files.push(format!("{run}/{f}"));
        }
    }
    files.extend(
        [
            "eval/eval.json",
            "eval/eval.csv",
            "eval/trajectories.csv",
            "deep/exploitability.json",
            "random/exploitability.json",
            "rate/gap.csv",
            "rate/slope.txt",
        ]
        .map(String::from),
    );
    let differ: Vec<&String> = files
        .iter()
        .filter(|f| {
            fs::read(roots[0].path().join(f)).ok() != fs::read(roots[1].path().join(f)).ok()
                || !roots[0].path().join(f).is_file()
        })
        .collect();
    Verdict::new(
        differ.is_empty(),
        format!("{} artifacts compared byte for byte, differing or missing: {differ:?}", files.len()),
    )
}

//! Coupled actor-critic training of all central players, the masked-state
//! baseline, and single-learner best responses against frozen opponents.

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envs::{EnvSpec, TestSet};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Dynamics};
use crate::meanfield::{mean_field_reward, mean_field_transition, DecisionRule, MeanFieldState, SIMPLEX_TOL};
use crate::neural::{Activation, AdamState, Head, InitScheme, LayerSpec, NetParams, NetSpec};
use crate::policy::MeanFieldPolicy;

const LOSS_EMA_WINDOW: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgHyper {
    pub episodes: usize,
    pub horizon: usize,
    pub batch: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub buffer: usize,
    pub sigma: f64,
    pub theta_ou: f64,
    pub gamma: f64,
    /// Episodes at which both learning rates and sigma are halved.
    pub milestones: Vec<usize>,
    /// Evaluate the actors on the test set every this many episodes (0 disables).
    pub eval_every: usize,
    pub width: usize,
    pub embed_activation: Activation,
    pub actor_hidden: [Activation; 2],
    pub critic_hidden: [Activation; 2],
}

impl Default for DdpgHyper {
    fn default() -> Self {
        Self {
            episodes: 2000,
            horizon: 10,
            batch: 32,
            tau: 0.005,
            actor_lr: 5e-4,
            critic_lr: 1e-3,
            buffer: 50_000,
            sigma: 0.08,
            theta_ou: 0.15,
            gamma: 0.99,
            milestones: Vec::new(),
            eval_every: 10,
            width: 200,
            embed_activation: Activation::Relu,
            actor_hidden: [Activation::Relu, Activation::Tanh],
            critic_hidden: [Activation::Relu, Activation::Relu],
        }
    }
}

impl DdpgHyper {
    pub fn for_env(env: &EnvSpec) -> Self {
        let base = Self { horizon: env.horizon(), gamma: env.gamma(), ..Self::default() };
        match env.name() {
            "four_room" => Self {
                episodes: 50_000,
                batch: 32,
                tau: 0.005,
                actor_lr: 5e-5,
                critic_lr: 1e-4,
                buffer: 100_000,
                sigma: 0.08,
                embed_activation: Activation::Tanh,
                critic_hidden: [Activation::Relu, Activation::Tanh],
                ..base
            },
            "predator_prey4" => Self {
                episodes: 80_000,
                batch: 64,
                tau: 0.0025,
                actor_lr: 5e-4,
                critic_lr: 1e-3,
                buffer: 50_000,
                sigma: 0.8,
                ..base
            },
            "planning2d" => Self {
                episodes: 20_000,
                batch: 128,
                tau: 0.005,
                actor_lr: 5e-5,
                critic_lr: 1e-4,
                buffer: 50_000,
                sigma: 0.08,
                milestones: vec![6000, 12_000],
                ..base
            },
            _ => base,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidArgument(format!("soft-update rate {} outside (0, 1]", self.tau)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!("discount {} outside [0, 1)", self.gamma)));
        }
        if self.batch == 0 || self.buffer < self.batch || self.width == 0 {
            return Err(Error::InvalidArgument("batch, buffer and width must be positive with buffer ≥ batch".into()));
        }
        for v in [self.actor_lr, self.critic_lr, self.sigma, self.theta_ou] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!("invalid DDPG setting {v}")));
            }
        }
        Ok(())
    }
}

/// Ornstein-Uhlenbeck process with zero long-run mean and unit time step.
#[derive(Debug, Clone, PartialEq)]
pub struct OuNoise {
    pub state: Vec<f64>,
    pub theta: f64,
    pub sigma: f64,
    pub time_step: u64,
}

impl OuNoise {
    pub fn new(dim: usize, theta: f64, sigma: f64) -> Self {
        Self { state: vec![0.0; dim], theta, sigma, time_step: 0 }
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|x| *x = 0.0);
        self.time_step = 0;
    }

    /// One step driven by the given standard-normal draws.
    pub fn step_with(&mut self, xi: &[f64]) -> &[f64] {
        for (x, &z) in self.state.iter_mut().zip(xi) {
            *x += self.theta * (0.0 - *x) + self.sigma * z;
        }
        self.time_step += 1;
        &self.state
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &[f64] {
        let xi: Vec<f64> = (0..self.state.len()).map(|_| rng.sample(StandardNormal)).collect();
        self.step_with(&xi)
    }
}

/// Adds noise to a rule, clips to `[0, 1]` and renormalizes each row; a row
/// that clips to all zeros becomes uniform.
pub fn perturb_rule(rule: &DecisionRule, noise: &[f64]) -> DecisionRule {
    if noise.iter().all(|&e| e == 0.0) {
        return rule.clone();
    }
    let (ns, na) = (rule.n_states(), rule.n_actions());
    let mut data: Vec<f64> = rule.as_slice().iter().zip(noise).map(|(p, e)| (p + e).clamp(0.0, 1.0)).collect();
    for row in data.chunks_mut(na) {
        let z: f64 = row.iter().sum();
        if z > 0.0 {
            row.iter_mut().for_each(|v| *v /= z);
        } else {
            row.iter_mut().for_each(|v| *v = 1.0 / na as f64);
        }
    }
    DecisionRule::from_drifted(ns, na, data)
}

/// Actor output at `input`, perturbed by a fresh noise sample when given.
pub fn select_action<R: Rng + ?Sized>(
    actor: &NetParams,
    input: &[f64],
    noise: Option<&mut OuNoise>,
    rng: &mut R,
) -> Result<DecisionRule> {
    let rule = actor.forward_rule(input)?;
    match noise {
        Some(n) => Ok(perturb_rule(&rule, n.sample(rng))),
        None => Ok(rule),
    }
}

/// Stored environment step; decision rules are validated on insertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub rules: Vec<DecisionRule>,
    pub rewards: Vec<f64>,
    pub next: Vec<f64>,
}

/// FIFO ring buffer with uniform sampling with replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    entries: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), entries: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: T) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(item);
    }

    pub fn get(&self, k: usize) -> Option<&T> {
        self.entries.get(k)
    }

    /// `None` while the buffer holds fewer than `n` entries (warm-up).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&T>> {
        if self.entries.len() < n || n == 0 {
            return None;
        }
        Some((0..n).map(|_| &self.entries[rng.random_range(0..self.entries.len())]).collect())
    }

    pub fn push_and_sample<R: Rng + ?Sized>(&mut self, item: T, n: usize, rng: &mut R) -> Option<Vec<&T>> {
        self.push(item);
        self.sample(n, rng)
    }
}

impl ReplayBuffer<Transition> {
    pub fn push_transition(&mut self, t: Transition) -> Result<()> {
        for rule in &t.rules {
            for x in 0..rule.n_states() {
                let row = rule.row(x);
                let sum: f64 = row.iter().sum();
                if row.iter().any(|&p| !(0.0..=1.0 + SIMPLEX_TOL).contains(&p)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidDistribution(format!("stored rule row {x} sums to {sum}")));
                }
            }
        }
        self.push(t);
        Ok(())
    }
}

/// θ′ ← τθ + (1−τ)θ′.
pub fn soft_update(target: &mut NetParams, online: &NetParams, tau: f64) -> Result<()> {
    if tau == 1.0 {
        return target.zip_apply(online, |t, o| *t = o);
    }
    target.zip_apply(online, |t, o| *t = tau * o + (1.0 - tau) * *t)
}

/// y = r + γ·Q′(s̄′, π′(s̄′)) with `next_input` the state input of both target nets.
pub fn critic_target(
    rewards: &[f64],
    gamma: f64,
    target_critic: &NetParams,
    target_actor: &NetParams,
    next_input: &Array2<f64>,
) -> Result<Vec<f64>> {
    if gamma == 0.0 {
        return Ok(rewards.to_vec());
    }
    let actions = target_actor.forward_batch(next_input.view())?;
    let x = concatenate(Axis(1), &[next_input.view(), actions.output().view()]).expect("matching rows");
    let q = target_critic.forward_batch(x.view())?;
    Ok(rewards.iter().zip(q.output().column(0)).map(|(r, q)| r + gamma * q).collect())
}

fn state_blocks(env: &EnvSpec, i: usize, masked: bool) -> Vec<usize> {
    if masked {
        vec![env.num_states(i)]
    } else {
        env.state_sizes().to_vec()
    }
}

fn actor_spec(env: &EnvSpec, i: usize, masked: bool, h: &DdpgHyper) -> NetSpec {
    let (ns, na) = (env.num_states(i), env.num_actions(i));
    NetSpec {
        blocks: state_blocks(env, i, masked),
        passthrough: 0,
        embed: Some(LayerSpec::new(h.width, h.embed_activation)),
        hidden: h.actor_hidden.iter().map(|&a| LayerSpec::new(h.width, a)).collect(),
        output: ns * na,
        output_activation: Activation::Linear,
        head: Head::RowSoftmax { rows: ns, cols: na },
    }
}

fn critic_spec(env: &EnvSpec, i: usize, masked: bool, h: &DdpgHyper) -> NetSpec {
    NetSpec {
        blocks: state_blocks(env, i, masked),
        passthrough: env.num_states(i) * env.num_actions(i),
        embed: Some(LayerSpec::new(h.width, h.embed_activation)),
        hidden: h.critic_hidden.iter().map(|&a| LayerSpec::new(h.width, a)).collect(),
        output: 1,
        output_activation: Activation::Linear,
        head: Head::Identity,
    }
}

/// Actor and critic shapes seeing every coalition's distribution.
pub fn build_full_nets(env: &EnvSpec, i: usize, h: &DdpgHyper) -> (NetSpec, NetSpec) {
    (actor_spec(env, i, false, h), critic_spec(env, i, false, h))
}

/// Actor and critic shapes seeing only coalition `i`'s own distribution.
pub fn build_ablated_nets(env: &EnvSpec, i: usize, h: &DdpgHyper) -> (NetSpec, NetSpec) {
    (actor_spec(env, i, true, h), critic_spec(env, i, true, h))
}

fn coalition_offset(env: &EnvSpec, i: usize) -> usize {
    env.state_sizes()[..i].iter().sum()
}

fn encode(env: &EnvSpec, i: usize, masked: bool, flat: &[f64]) -> Vec<f64> {
    if masked {
        let off = coalition_offset(env, i);
        flat[off..off + env.num_states(i)].to_vec()
    } else {
        flat.to_vec()
    }
}

/// A trained actor used as a mean-field policy.
#[derive(Debug, Clone)]
pub struct ActorPolicy {
    pub net: NetParams,
    pub coalition: usize,
    pub masked: bool,
}

impl ActorPolicy {
    pub fn new(net: NetParams, coalition: usize, masked: bool) -> Self {
        Self { net, coalition, masked }
    }
}

impl MeanFieldPolicy for ActorPolicy {
    fn decide(&self, _t: usize, state: &MeanFieldState) -> Result<DecisionRule> {
        let input = if self.masked { state.coalition(self.coalition).probs().to_vec() } else { state.flatten() };
        self.net.forward_rule(&input)
    }

    fn describe(&self) -> String {
        format!("ddpg{}[{}]", if self.masked { "-masked" } else { "" }, self.coalition)
    }
}

/// Online and target networks of one learning player, with their optimizers.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub coalition: usize,
    pub masked: bool,
    pub actor: NetParams,
    pub critic: NetParams,
    pub target_actor: NetParams,
    pub target_critic: NetParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    noise: OuNoise,
    loss_ema: Option<f64>,
}

impl DdpgAgent {
    pub fn new<R: Rng + ?Sized>(env: &EnvSpec, i: usize, masked: bool, h: &DdpgHyper, rng: &mut R) -> Result<Self> {
        let actor = NetParams::init(&actor_spec(env, i, masked, h), InitScheme::FanIn, rng)?;
        let critic = NetParams::init(&critic_spec(env, i, masked, h), InitScheme::FanIn, rng)?;
        Ok(Self {
            coalition: i,
            masked,
            actor_opt: AdamState::new(&actor, h.actor_lr),
            critic_opt: AdamState::new(&critic, h.critic_lr),
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            noise: OuNoise::new(env.num_states(i) * env.num_actions(i), h.theta_ou, h.sigma),
            loss_ema: None,
            actor,
            critic,
        })
    }

    pub fn policy(&self) -> ActorPolicy {
        ActorPolicy::new(self.actor.clone(), self.coalition, self.masked)
    }

    /// One critic and actor step on a minibatch; returns the critic loss.
    fn update(&mut self, env: &EnvSpec, batch: &[&Transition], h: &DdpgHyper) -> Result<f64> {
        let i = self.coalition;
        let b = batch.len();
        let rows = |f: &dyn Fn(&Transition) -> Vec<f64>| -> Array2<f64> {
            let data: Vec<Vec<f64>> = batch.iter().map(|t| f(t)).collect();
            let cols = data[0].len();
            Array2::from_shape_vec((b, cols), data.concat()).expect("consistent rows")
        };
        let s_in = rows(&|t| encode(env, i, self.masked, &t.state));
        let next_in = rows(&|t| encode(env, i, self.masked, &t.next));
        let acts = rows(&|t| t.rules[i].as_slice().to_vec());
        let rewards: Vec<f64> = batch.iter().map(|t| t.rewards[i]).collect();
        let y = critic_target(&rewards, h.gamma, &self.target_critic, &self.target_actor, &next_in)?;

        let x = concatenate(Axis(1), &[s_in.view(), acts.view()]).expect("matching rows");
        let cache = self.critic.forward_batch(x.view())?;
        let q = cache.output().column(0).to_owned();
        let mut loss = 0.0;
        let mut d = Array2::zeros((b, 1));
        for j in 0..b {
            let r = q[j] - y[j];
            loss += r * r / b as f64;
            d[[j, 0]] = 2.0 * r / b as f64;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss of player {i}: {loss}")));
        }
        let ema = match self.loss_ema {
            None => loss,
            Some(e) => e + (loss - e) / LOSS_EMA_WINDOW,
        };
        if !ema.is_finite() {
            return Err(Error::NonFinite(format!("critic loss average of player {i}: {ema}")));
        }
        self.loss_ema = Some(ema);
        let (g, _) = self.critic.backward(&cache, d.view())?;
        self.critic_opt.step(&mut self.critic, &g)?;

        // deterministic policy gradient through the updated critic
        let a_cache = self.actor.forward_batch(s_in.view())?;
        let xa = concatenate(Axis(1), &[s_in.view(), a_cache.output().view()]).expect("matching rows");
        let c_cache = self.critic.forward_batch(xa.view())?;
        let ascend = Array2::from_elem((b, 1), -1.0 / b as f64);
        let (_, d_in) = self.critic.backward(&c_cache, ascend.view())?;
        let d_act = d_in.slice(s![.., s_in.ncols()..]).to_owned();
        let (ga, _) = self.actor.backward(&a_cache, d_act.view())?;
        self.actor_opt.step(&mut self.actor, &ga)?;

        soft_update(&mut self.target_critic, &self.critic, h.tau)?;
        soft_update(&mut self.target_actor, &self.actor, h.tau)?;
        Ok(loss)
    }

    fn halve_rates(&mut self) {
        self.actor_opt.learning_rate /= 2.0;
        self.critic_opt.learning_rate /= 2.0;
        self.noise.sigma /= 2.0;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpgMetrics {
    pub episode: usize,
    /// Discounted training-episode return per player.
    pub returns: Vec<f64>,
    pub test_returns: Option<Vec<f64>>,
    /// Mean critic loss over the episode's updates, per learning player (`None` during warm-up).
    pub critic_loss: Vec<Option<f64>>,
}

enum Player {
    Learner(Box<DdpgAgent>),
    Frozen(Arc<dyn MeanFieldPolicy>),
}

fn current_profile(players: &[Player]) -> Vec<Arc<dyn MeanFieldPolicy>> {
    players
        .iter()
        .map(|p| match p {
            Player::Learner(a) => Arc::new(a.policy()) as Arc<dyn MeanFieldPolicy>,
            Player::Frozen(f) => f.clone(),
        })
        .collect()
}

/// The episode loop shared by joint training and best responses. `start`
/// draws each episode's initial state.
#[allow(clippy::too_many_arguments)]
fn run_loop<R: Rng + ?Sized>(
    env: &EnvSpec,
    players: &mut [Player],
    h: &DdpgHyper,
    start: &mut dyn FnMut(usize, &mut R) -> Result<MeanFieldState>,
    tests: &TestSet,
    rng: &mut R,
    mut on_eval: impl FnMut(&[Player], &[f64]),
    after_episode: &mut dyn FnMut(&DdpgMetrics, &[Player]) -> Result<()>,
) -> Result<Vec<DdpgMetrics>> {
    h.validate()?;
    let m = env.num_coalitions();
    let mut buffer: ReplayBuffer<Transition> = ReplayBuffer::new(h.buffer);
    let mut metrics = Vec::with_capacity(h.episodes);
    for episode in 0..h.episodes {
        if h.milestones.contains(&episode) {
            for p in players.iter_mut() {
                if let Player::Learner(a) = p {
                    a.halve_rates();
                }
            }
        }
        let mut s = start(episode, rng).map_err(|e| e.at(episode, 0))?;
        for p in players.iter_mut() {
            if let Player::Learner(a) = p {
                a.noise.reset();
            }
        }
        let mut returns = vec![0.0; m];
        let mut losses = vec![(0.0, 0usize); m];
        let mut discount = 1.0;
        for step in 0..h.horizon {
            let at = |e: Error| e.at(episode, step);
            let flat = s.flatten();
            let mut rules = Vec::with_capacity(m);
            for p in players.iter_mut() {
                let rule = match p {
                    Player::Learner(a) => {
                        let input = encode(env, a.coalition, a.masked, &flat);
                        let agent = a.as_mut();
                        select_action(&agent.actor, &input, Some(&mut agent.noise), rng).map_err(at)?
                    }
                    Player::Frozen(f) => f.decide(step, &s).map_err(at)?,
                };
                rules.push(rule);
            }
            let rewards =
                (0..m).map(|i| mean_field_reward(env, i, &s, &rules[i])).collect::<Result<Vec<_>>>().map_err(at)?;
            let next = mean_field_transition(env, &s, &rules).map_err(at)?;
            for i in 0..m {
                returns[i] += discount * rewards[i];
            }
            discount *= h.gamma;
            buffer.push_transition(Transition { state: flat, rules, rewards, next: next.flatten() }).map_err(at)?;
            if let Some(batch) = buffer.sample(h.batch, rng) {
                for p in players.iter_mut() {
                    if let Player::Learner(a) = p {
                        let loss = a.update(env, &batch, h).map_err(at)?;
                        let slot = &mut losses[a.coalition];
                        slot.0 += loss;
                        slot.1 += 1;
                    }
                }
            }
            s = next;
        }
        let test_returns = if h.eval_every > 0 && !tests.is_empty() && (episode + 1) % h.eval_every == 0 {
            let profile = current_profile(players);
            let v = evaluate(env, &profile, tests, h.horizon, Dynamics::Continuous)
                .map_err(|e| e.at(episode, h.horizon))?;
            on_eval(players, &v);
            Some(v)
        } else {
            None
        };
        let critic_loss = players
            .iter()
            .filter_map(|p| match p {
                Player::Learner(a) => {
                    let (sum, n) = losses[a.coalition];
                    Some((n > 0).then(|| sum / n as f64))
                }
                Player::Frozen(_) => None,
            })
            .collect();
        let row = DdpgMetrics { episode, returns, test_returns, critic_loss };
        after_episode(&row, players)?;
        metrics.push(row);
    }
    Ok(metrics)
}

pub struct DdpgRun {
    pub agents: Vec<DdpgAgent>,
    pub metrics: Vec<DdpgMetrics>,
}

impl DdpgRun {
    pub fn profile(&self) -> Vec<Arc<dyn MeanFieldPolicy>> {
        self.agents.iter().map(|a| Arc::new(a.policy()) as Arc<dyn MeanFieldPolicy>).collect()
    }
}

/// Trains one actor-critic pair per coalition; `masked` hides the other coalitions' distributions.
pub fn train_ddpg_mftg<R: Rng + ?Sized>(
    env: &EnvSpec,
    hyper: &DdpgHyper,
    masked: bool,
    rng: &mut R,
) -> Result<DdpgRun> {
    train_ddpg_mftg_observed(env, hyper, masked, rng, &mut |_, _| Ok(()))
}

/// [`train_ddpg_mftg`] with `observe` called after every episode with that
/// episode's metrics and the current agents.
pub fn train_ddpg_mftg_observed<R: Rng + ?Sized>(
    env: &EnvSpec,
    hyper: &DdpgHyper,
    masked: bool,
    rng: &mut R,
    observe: &mut dyn FnMut(&DdpgMetrics, &[&DdpgAgent]) -> Result<()>,
) -> Result<DdpgRun> {
    let mut players = Vec::with_capacity(env.num_coalitions());
    for i in 0..env.num_coalitions() {
        players.push(Player::Learner(Box::new(DdpgAgent::new(env, i, masked, hyper, rng)?)));
    }
    let mut start = |_: usize, r: &mut R| env.sample_training(r);
    let mut after = |row: &DdpgMetrics, ps: &[Player]| {
        let agents: Vec<&DdpgAgent> = ps
            .iter()
            .filter_map(|p| match p {
                Player::Learner(a) => Some(a.as_ref()),
                Player::Frozen(_) => None,
            })
            .collect();
        observe(row, &agents)
    };
    let metrics = run_loop(env, &mut players, hyper, &mut start, &env.test_set(), rng, |_, _| {}, &mut after)?;
    let agents = players
        .into_iter()
        .map(|p| match p {
            Player::Learner(a) => *a,
            Player::Frozen(_) => unreachable!("every player learns"),
        })
        .collect();
    Ok(DdpgRun { agents, metrics })
}

pub struct DeepBr {
    pub policy: Arc<dyn MeanFieldPolicy>,
    pub best_value: f64,
    pub metrics: Vec<DdpgMetrics>,
}

/// Single-learner DDPG for player `i` against the frozen rest of `profile`,
/// started from the test distributions in turn. Returns the best evaluated actor.
pub fn train_best_response<R: Rng + ?Sized>(
    env: &EnvSpec,
    profile: &[Arc<dyn MeanFieldPolicy>],
    i: usize,
    tests: &TestSet,
    hyper: &DdpgHyper,
    rng: &mut R,
) -> Result<DeepBr> {
    if tests.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let agent = DdpgAgent::new(env, i, false, hyper, rng)?;
    let mut players: Vec<Player> = profile
        .iter()
        .enumerate()
        .map(|(j, p)| if j == i { Player::Learner(Box::new(agent.clone())) } else { Player::Frozen(p.clone()) })
        .collect();
    let mut h = hyper.clone();
    if h.eval_every == 0 {
        h.eval_every = (h.episodes / 20).max(1);
    }
    let mut start = |ep: usize, _: &mut R| Ok(tests.entries[ep % tests.len()].clone());
    let mut best: Option<(f64, NetParams)> = None;
    let metrics = run_loop(
        env,
        &mut players,
        &h,
        &mut start,
        tests,
        rng,
        |ps, v| {
            if best.as_ref().is_none_or(|b| v[i] > b.0) {
                if let Player::Learner(a) = &ps[i] {
                    best = Some((v[i], a.actor.clone()));
                }
            }
        },
        &mut |_, _| Ok(()),
    )?;
    let (best_value, net) = match best {
        Some(b) => b,
        None => {
            let Player::Learner(a) = &players[i] else { unreachable!("player i learns") };
            let mut prof = profile.to_vec();
            prof[i] = Arc::new(a.policy());
            (evaluate(env, &prof, tests, h.horizon, Dynamics::Continuous)?[i], a.actor.clone())
        }
    };
    Ok(DeepBr { policy: Arc::new(ActorPolicy::new(net, i, false)), best_value, metrics })
}

//! Small deterministic environments: CartPole (dense reward control),
//! Catch (sparse terminal reward) and a slippery GridWorld (stochastic
//! navigation).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnvId {
    CartPole,
    Catch,
    GridWorld,
}

impl EnvId {
    pub const ALL: [EnvId; 3] = [EnvId::CartPole, EnvId::Catch, EnvId::GridWorld];

    pub fn name(&self) -> &'static str {
        match self {
            EnvId::CartPole => "cartpole",
            EnvId::Catch => "catch",
            EnvId::GridWorld => "gridworld",
        }
    }

    /// Rough bound on the magnitude of a discounted return, used to place the
    /// categorical support.
    pub fn return_scale(&self) -> f64 {
        match self {
            EnvId::CartPole => 100.0,
            EnvId::Catch | EnvId::GridWorld => 1.0,
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cartpole" => Ok(EnvId::CartPole),
            "catch" => Ok(EnvId::Catch),
            "gridworld" => Ok(EnvId::GridWorld),
            other => Err(Error::InvalidArgument(format!("unknown environment '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// The MDP reached a terminal state.
    pub terminal: bool,
    /// The episode hit its step cap without terminating.
    pub truncated: bool,
}

impl Step {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

pub trait Environment: Send {
    fn id(&self) -> EnvId;
    fn obs_dim(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn max_episode_steps(&self) -> usize;
    fn reset(&mut self) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step>;
}

pub fn make_env(id: EnvId, rng: RngStream) -> Box<dyn Environment> {
    match id {
        EnvId::CartPole => Box::new(CartPole::new(rng)),
        EnvId::Catch => Box::new(Catch::new(rng)),
        EnvId::GridWorld => Box::new(GridWorld::new(rng)),
    }
}

fn check_action(action: usize, n_actions: usize) -> Result<()> {
    if action >= n_actions {
        Err(Error::InvalidAction { action, n_actions })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CartPole

pub mod cartpole {
    pub const GRAVITY: f64 = 9.8;
    pub const CART_MASS: f64 = 1.0;
    pub const POLE_MASS: f64 = 0.1;
    pub const HALF_LENGTH: f64 = 0.5;
    pub const FORCE: f64 = 10.0;
    pub const DT: f64 = 0.02;
    pub const X_LIMIT: f64 = 2.4;
    pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
    pub const MAX_STEPS: usize = 500;
}

/// Classic cart-pole with explicit Euler integration. Reward 1 on every
/// non-terminal step.
#[derive(Clone, Debug)]
pub struct CartPole {
    state: [f64; 4],
    steps: usize,
    rng: RngStream,
}

impl CartPole {
    pub fn new(rng: RngStream) -> Self {
        Self {
            state: [0.0; 4],
            steps: 0,
            rng,
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }
}

impl Environment for CartPole {
    fn id(&self) -> EnvId {
        EnvId::CartPole
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn n_actions(&self) -> usize {
        2
    }

    fn max_episode_steps(&self) -> usize {
        cartpole::MAX_STEPS
    }

    fn reset(&mut self) -> Vec<f64> {
        for s in &mut self.state {
            *s = self.rng.uniform(-0.05, 0.05);
        }
        self.steps = 0;
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        use cartpole::*;
        check_action(action, 2)?;
        let [x, x_dot, theta, theta_dot] = self.state;
        let force = if action == 1 { FORCE } else { -FORCE };
        let total_mass = CART_MASS + POLE_MASS;
        let pole_mass_length = POLE_MASS * HALF_LENGTH;
        let (sin, cos) = theta.sin_cos();
        let temp = (force + pole_mass_length * theta_dot * theta_dot * sin) / total_mass;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        self.state = [
            x + DT * x_dot,
            x_dot + DT * x_acc,
            theta + DT * theta_dot,
            theta_dot + DT * theta_acc,
        ];
        self.steps += 1;
        let terminal = self.state[0].abs() > X_LIMIT || self.state[2].abs() > THETA_LIMIT;
        let truncated = !terminal && self.steps >= MAX_STEPS;
        Ok(Step {
            obs: self.state.to_vec(),
            reward: if terminal { 0.0 } else { 1.0 },
            terminal,
            truncated,
        })
    }
}

// ---------------------------------------------------------------------------
// Catch

pub const CATCH_SIZE: usize = 10;

/// A ball falls one row per step from a random top-row column; the paddle
/// on the bottom row moves left, stays or moves right.
#[derive(Clone, Debug)]
pub struct Catch {
    ball_row: usize,
    ball_col: usize,
    paddle: usize,
    steps: usize,
    rng: RngStream,
}

impl Catch {
    pub fn new(rng: RngStream) -> Self {
        Self {
            ball_row: 0,
            ball_col: 0,
            paddle: CATCH_SIZE / 2,
            steps: 0,
            rng,
        }
    }

    pub fn ball(&self) -> (usize, usize) {
        (self.ball_row, self.ball_col)
    }

    pub fn paddle(&self) -> usize {
        self.paddle
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; CATCH_SIZE * CATCH_SIZE];
        obs[self.ball_row * CATCH_SIZE + self.ball_col] = 1.0;
        obs[(CATCH_SIZE - 1) * CATCH_SIZE + self.paddle] = 1.0;
        obs
    }
}

impl Environment for Catch {
    fn id(&self) -> EnvId {
        EnvId::Catch
    }

    fn obs_dim(&self) -> usize {
        CATCH_SIZE * CATCH_SIZE
    }

    fn n_actions(&self) -> usize {
        3
    }

    fn max_episode_steps(&self) -> usize {
        CATCH_SIZE - 1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.ball_row = 0;
        self.ball_col = self.rng.below(CATCH_SIZE);
        self.paddle = CATCH_SIZE / 2;
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        check_action(action, 3)?;
        self.paddle = match action {
            0 => self.paddle.saturating_sub(1),
            2 => (self.paddle + 1).min(CATCH_SIZE - 1),
            _ => self.paddle,
        };
        self.ball_row += 1;
        self.steps += 1;
        let terminal = self.ball_row == CATCH_SIZE - 1;
        let reward = if !terminal {
            0.0
        } else if self.paddle == self.ball_col {
            1.0
        } else {
            -1.0
        };
        Ok(Step {
            obs: self.observe(),
            reward,
            terminal,
            truncated: false,
        })
    }
}

// ---------------------------------------------------------------------------
// GridWorld

pub const GRID_SIZE: usize = 8;
pub const GRID_SLIP: f64 = 0.1;
pub const GRID_MAX_STEPS: usize = 100;
pub const GRID_START: (usize, usize) = (0, 0);
pub const GRID_GOAL: (usize, usize) = (4, 4);
pub const GRID_PITS: [(usize, usize); 6] = [(2, 6), (3, 3), (3, 5), (5, 3), (5, 5), (6, 2)];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cell {
    Free,
    Goal,
    Pit,
}

/// 8×8 navigation with pits. Actions are up/right/down/left; with
/// probability `GRID_SLIP` the move goes to one of the two perpendicular
/// directions instead. Observations are one-hot cell indicators.
#[derive(Clone, Debug)]
pub struct GridWorld {
    pos: (usize, usize),
    steps: usize,
    rng: RngStream,
}

impl GridWorld {
    pub fn new(rng: RngStream) -> Self {
        Self {
            pos: GRID_START,
            steps: 0,
            rng,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    fn cell(pos: (usize, usize)) -> Cell {
        if pos == GRID_GOAL {
            Cell::Goal
        } else if GRID_PITS.contains(&pos) {
            Cell::Pit
        } else {
            Cell::Free
        }
    }

    fn moved(pos: (usize, usize), dir: usize) -> (usize, usize) {
        let (r, c) = pos;
        match dir {
            0 => (r.saturating_sub(1), c),
            1 => (r, (c + 1).min(GRID_SIZE - 1)),
            2 => ((r + 1).min(GRID_SIZE - 1), c),
            _ => (r, c.saturating_sub(1)),
        }
    }

    /// Outcome distribution of taking `action` in `pos`: (next, probability).
    pub fn transitions(pos: (usize, usize), action: usize) -> [((usize, usize), f64); 3] {
        let left = (action + 3) % 4;
        let right = (action + 1) % 4;
        [
            (Self::moved(pos, action), 1.0 - GRID_SLIP),
            (Self::moved(pos, left), GRID_SLIP / 2.0),
            (Self::moved(pos, right), GRID_SLIP / 2.0),
        ]
    }

    pub fn reward_at(pos: (usize, usize)) -> f64 {
        match Self::cell(pos) {
            Cell::Goal => 1.0,
            Cell::Pit => -1.0,
            Cell::Free => 0.0,
        }
    }

    pub fn is_terminal(pos: (usize, usize)) -> bool {
        Self::cell(pos) != Cell::Free
    }

    pub fn one_hot(pos: (usize, usize)) -> Vec<f64> {
        let mut obs = vec![0.0; GRID_SIZE * GRID_SIZE];
        obs[pos.0 * GRID_SIZE + pos.1] = 1.0;
        obs
    }

    /// Greedy policy from value iteration at discount `gamma`.
    pub fn optimal_policy(gamma: f64) -> Vec<usize> {
        let n = GRID_SIZE * GRID_SIZE;
        let idx = |p: (usize, usize)| p.0 * GRID_SIZE + p.1;
        let pos_of = |i: usize| (i / GRID_SIZE, i % GRID_SIZE);
        let mut v = vec![0.0; n];
        let q = |v: &[f64], s: usize, a: usize| -> f64 {
            Self::transitions(pos_of(s), a)
                .iter()
                .map(|&(next, p)| {
                    let cont = if Self::is_terminal(next) { 0.0 } else { gamma * v[idx(next)] };
                    p * (Self::reward_at(next) + cont)
                })
                .sum()
        };
        for _ in 0..10_000 {
            let mut delta: f64 = 0.0;
            for s in 0..n {
                if Self::is_terminal(pos_of(s)) {
                    continue;
                }
                let best = (0..4).map(|a| q(&v, s, a)).fold(f64::NEG_INFINITY, f64::max);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-13 {
                break;
            }
        }
        (0..n)
            .map(|s| {
                let mut best = 0;
                for a in 1..4 {
                    if q(&v, s, a) > q(&v, s, best) + 1e-12 {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Exact expected undiscounted episode return of `policy` from the start
    /// cell under the step cap, by propagating the state distribution.
    pub fn expected_return(policy: &[usize]) -> f64 {
        let n = GRID_SIZE * GRID_SIZE;
        let idx = |p: (usize, usize)| p.0 * GRID_SIZE + p.1;
        let mut dist = vec![0.0; n];
        dist[idx(GRID_START)] = 1.0;
        let mut ret = 0.0;
        for _ in 0..GRID_MAX_STEPS {
            let mut next_dist = vec![0.0; n];
            for s in 0..n {
                if dist[s] == 0.0 {
                    continue;
                }
                let pos = (s / GRID_SIZE, s % GRID_SIZE);
                for (next, p) in Self::transitions(pos, policy[s]) {
                    let mass = dist[s] * p;
                    ret += mass * Self::reward_at(next);
                    if !Self::is_terminal(next) {
                        next_dist[idx(next)] += mass;
                    }
                }
            }
            dist = next_dist;
        }
        ret
    }

    /// Reference score: expected return of the value-iteration optimal policy.
    pub fn reference_return() -> f64 {
        Self::expected_return(&Self::optimal_policy(0.99))
    }
}

impl Environment for GridWorld {
    fn id(&self) -> EnvId {
        EnvId::GridWorld
    }

    fn obs_dim(&self) -> usize {
        GRID_SIZE * GRID_SIZE
    }

    fn n_actions(&self) -> usize {
        4
    }

    fn max_episode_steps(&self) -> usize {
        GRID_MAX_STEPS
    }

    fn reset(&mut self) -> Vec<f64> {
        self.pos = GRID_START;
        self.steps = 0;
        Self::one_hot(self.pos)
    }

    fn step(&mut self, action: usize) -> Result<Step> {
        check_action(action, 4)?;
        let u = self.rng.next_f64();
        let outcomes = Self::transitions(self.pos, action);
        let mut acc = 0.0;
        let mut next = outcomes[0].0;
        for (pos, p) in outcomes {
            acc += p;
            if u < acc {
                next = pos;
                break;
            }
        }
        self.pos = next;
        self.steps += 1;
        let terminal = Self::is_terminal(next);
        Ok(Step {
            obs: Self::one_hot(next),
            reward: Self::reward_at(next),
            terminal,
            truncated: !terminal && self.steps >= GRID_MAX_STEPS,
        })
    }
}

// ---------------------------------------------------------------------------
// Score normalisation

/// Per-environment (random-policy, reference) return pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRegistry {
    entries: BTreeMap<String, (f64, f64)>,
}

impl Default for ScoreRegistry {
    /// Baselines measured with `calibrate` (10k random-policy episodes, seed 0) and
    /// the value-iteration reference for GridWorld.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("cartpole", 21.2528, 500.0);
        r.register("catch", -0.8016, 1.0);
        r.register("gridworld", -0.8373, 0.794726);
        r
    }
}

impl ScoreRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, env: &str, random: f64, reference: f64) {
        self.entries.insert(env.to_string(), (random, reference));
    }

    pub fn get(&self, env: &str) -> Option<(f64, f64)> {
        self.entries.get(env).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, (f64, f64))> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn normalize(&self, env: &str, raw: f64) -> Result<f64> {
        human_normalized_score(self, env, raw)
    }
}

/// `(raw − random) / (reference − random)`.
pub fn human_normalized_score(registry: &ScoreRegistry, env: &str, raw: f64) -> Result<f64> {
    let (random, reference) = registry
        .get(env)
        .ok_or_else(|| Error::InvalidArgument(format!("no normalisation constants for '{env}'")))?;
    if reference == random {
        return Err(Error::InvalidArgument(format!("degenerate normalisation for '{env}'")));
    }
    Ok((raw - random) / (reference - random))
}

/// Mean return of the uniform-random policy over `episodes` episodes.
pub fn random_policy_return(id: EnvId, episodes: usize, seed: u64) -> f64 {
    let mut env = make_env(id, RngStream::new(seed, 0xE4));
    let mut pick = RngStream::new(seed, 0xA7);
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset();
        loop {
            let a = pick.below(env.n_actions());
            let s = env.step(a).expect("valid action");
            total += s.reward;
            if s.done() {
                break;
            }
        }
    }
    total / episodes.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_reset_within_bounds() {
        let mut env = CartPole::new(RngStream::new(0, 0));
        for _ in 0..100 {
            let obs = env.reset();
            assert!(obs.iter().all(|x| x.abs() <= 0.05));
        }
    }

    #[test]
    fn cartpole_balanced_pole_hits_cap_with_return_500() {
        // A linear state-feedback controller keeps the pole up indefinitely.
        let mut env = CartPole::new(RngStream::new(0, 0));
        env.reset();
        let mut ret = 0.0;
        let mut steps = 0;
        loop {
            let [x, v, th, w] = env.state();
            let a = usize::from(0.1 * x + 0.5 * v + 10.0 * th + 2.0 * w > 0.0);
            let s = env.step(a).unwrap();
            ret += s.reward;
            steps += 1;
            if s.done() {
                assert!(s.truncated && !s.terminal);
                break;
            }
        }
        assert_eq!(steps, 500);
        assert_eq!(ret, 500.0);
    }

    /// Independent restatement of the cart-pole equations of motion.
    fn cartpole_oracle(s: [f64; 4], push_right: bool) -> [f64; 4] {
        let (g, mc, mp, l, f, tau) = (9.8, 1.0, 0.1, 0.5, 10.0, 0.02);
        let force = if push_right { f } else { -f };
        let [x, v, th, w] = s;
        let m = mc + mp;
        let b = (force + mp * l * w.powi(2) * th.sin()) / m;
        let alpha = (g * th.sin() - th.cos() * b) / (l * (4.0 / 3.0 - mp * th.cos().powi(2) / m));
        let a = b - mp * l * alpha * th.cos() / m;
        [x + tau * v, v + tau * a, th + tau * w, w + tau * alpha]
    }

    #[test]
    fn cartpole_matches_oracle() {
        let mut pick = RngStream::new(99, 1);
        for seq in 0..100 {
            let mut env = CartPole::new(RngStream::new(seq, 2));
            env.reset();
            let mut s = env.state();
            loop {
                let a = pick.below(2);
                let step = env.step(a).unwrap();
                s = cartpole_oracle(s, a == 1);
                for (x, y) in step.obs.iter().zip(s) {
                    assert!((x - y).abs() <= 1e-12);
                }
                let fell = s[0].abs() > 2.4 || s[2].abs() > 12f64.to_radians();
                assert_eq!(step.terminal, fell);
                assert_eq!(step.reward, if fell { 0.0 } else { 1.0 });
                if step.done() {
                    break;
                }
            }
        }
    }

    #[test]
    fn invalid_action_errors() {
        let mut rng = RngStream::new(0, 0);
        for id in EnvId::ALL {
            let mut env = make_env(id, rng.fork(id as u64));
            env.reset();
            let n = env.n_actions();
            assert!(matches!(env.step(n), Err(Error::InvalidAction { .. })));
        }
        let _ = rng.next_u64();
    }

    #[test]
    fn catch_reset_and_rewards() {
        let mut env = Catch::new(RngStream::new(4, 0));
        let obs = env.reset();
        assert_eq!(env.ball().0, 0);
        assert_eq!(env.paddle(), 5);
        assert_eq!(obs.iter().filter(|&&x| x == 1.0).count(), 2);
        // Track the ball: always caught.
        let total = loop {
            let (_, col) = env.ball();
            let a = match env.paddle().cmp(&col) {
                std::cmp::Ordering::Greater => 0,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 2,
            };
            let s = env.step(a).unwrap();
            if !s.done() {
                assert_eq!(s.reward, 0.0);
            } else {
                break s.reward;
            }
        };
        assert_eq!(total, 1.0);
    }

    #[test]
    fn catch_miss_gives_minus_one() {
        let mut env = Catch::new(RngStream::new(5, 0));
        loop {
            env.reset();
            if env.ball().1 <= 2 {
                break;
            }
        }
        // paddle walks right, ball is far left
        let mut last = None;
        for _ in 0..9 {
            last = Some(env.step(2).unwrap());
        }
        let s = last.unwrap();
        assert!(s.terminal);
        assert_eq!(s.reward, -1.0);
    }

    #[test]
    fn gridworld_start_goal_pit() {
        let mut env = GridWorld::new(RngStream::new(0, 0));
        let obs = env.reset();
        assert_eq!(env.position(), GRID_START);
        assert_eq!(obs[0], 1.0);
        assert_eq!(GridWorld::reward_at(GRID_GOAL), 1.0);
        assert_eq!(GridWorld::reward_at((3, 3)), -1.0);
        assert_eq!(GridWorld::reward_at((0, 1)), 0.0);
    }

    #[test]
    fn gridworld_slip_frequencies() {
        let mut env = GridWorld::new(RngStream::new(1, 0));
        let mut counts = [0usize; 3];
        let n = 60_000;
        for _ in 0..n {
            env.reset();
            env.pos = (4, 0);
            let s = env.step(1).unwrap();
            let p = env.position();
            assert_eq!(s.reward, 0.0);
            match p {
                (4, 1) => counts[0] += 1,
                (3, 0) => counts[1] += 1,
                (5, 0) => counts[2] += 1,
                other => panic!("unexpected {other:?}"),
            }
        }
        assert!((counts[0] as f64 / n as f64 - 0.9).abs() < 0.01);
        assert!((counts[1] as f64 / n as f64 - 0.05).abs() < 0.005);
        assert!((counts[2] as f64 / n as f64 - 0.05).abs() < 0.005);
    }

    #[test]
    fn gridworld_truncates_at_cap() {
        let mut env = GridWorld::new(RngStream::new(2, 0));
        env.reset();
        let mut steps = 0;
        loop {
            // bump into the top wall; slips may move sideways along row 0/1
            let s = env.step(0).unwrap();
            steps += 1;
            if s.done() {
                assert!(s.truncated || s.terminal);
                break;
            }
        }
        assert!(steps <= GRID_MAX_STEPS);
    }

    #[test]
    fn gridworld_reference_beats_random_and_matches_simulation() {
        let policy = GridWorld::optimal_policy(0.99);
        let exact = GridWorld::expected_return(&policy);
        assert!(exact > 0.75 && exact <= 1.0);
        let mut env = GridWorld::new(RngStream::new(8, 8));
        let episodes = 20_000;
        let mut total = 0.0;
        for _ in 0..episodes {
            env.reset();
            loop {
                let (r, c) = env.position();
                let s = env.step(policy[r * GRID_SIZE + c]).unwrap();
                total += s.reward;
                if s.done() {
                    break;
                }
            }
        }
        assert!((total / episodes as f64 - exact).abs() < 0.02);
    }

    #[test]
    fn determinism_under_same_seed() {
        for id in EnvId::ALL {
            let run = || {
                let mut env = make_env(id, RngStream::new(77, 1));
                let mut acts = RngStream::new(1, 1);
                let mut trace = Vec::new();
                for _ in 0..3 {
                    trace.extend(env.reset());
                    loop {
                        let s = env.step(acts.below(env.n_actions())).unwrap();
                        trace.extend(&s.obs);
                        trace.push(s.reward);
                        if s.done() {
                            break;
                        }
                    }
                }
                trace
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn normalisation_examples() {
        let mut reg = ScoreRegistry::empty();
        reg.register("cartpole", 20.0, 500.0);
        assert_eq!(human_normalized_score(&reg, "cartpole", 500.0).unwrap(), 1.0);
        assert_eq!(human_normalized_score(&reg, "cartpole", 20.0).unwrap(), 0.0);
        let s = human_normalized_score(&reg, "cartpole", 250.0).unwrap();
        assert!((s - 230.0 / 480.0).abs() < 1e-15);
        assert!(human_normalized_score(&reg, "pong", 1.0).is_err());
    }

    #[test]
    fn default_registry_reference_is_value_iteration() {
        let (_, reference) = ScoreRegistry::default().get("gridworld").unwrap();
        assert!((reference - GridWorld::reference_return()).abs() < 1e-4);
    }
}

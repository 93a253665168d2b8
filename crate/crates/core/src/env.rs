//! Cooperative multi-agent gridworld with strictly local observations.
//!
//! Each agent observes only its own cell, moves independently (agents may
//! share a cell), and the whole team receives +1 when every agent stands on
//! its own goal after a transition, −0.01 otherwise. Behavior policies are
//! per-agent softmaxes over a distance potential, so the joint behavior policy
//! factorizes by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Trajectory, Transition};

pub const GOAL_REWARD: f64 = 1.0;
pub const STEP_PENALTY: f64 = -0.01;
pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("invalid environment: {0}")]
    InvalidSpec(String),
    #[error("episode already terminated at t = {0}")]
    Terminal(usize),
    #[error("agent {agent}: action {action} outside 0..{n_actions}")]
    BadAction {
        agent: usize,
        action: usize,
        n_actions: usize,
    },
    #[error("expected {expected} per-agent entries, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("not a micro-instance (need n <= 3, |S_i| <= 4, |A_i| <= 3): {0}")]
    NotMicro(String),
    #[error("joint enumeration needs {needed} entries, cap is {cap}")]
    EnumerationCap { needed: usize, cap: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    /// up, down, left, right, stay
    #[default]
    Grid,
    /// left, right, stay on a single row
    Line,
}

impl ActionSet {
    pub fn len(self) -> usize {
        match self {
            ActionSet::Grid => 5,
            ActionSet::Line => 3,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// `(dx, dy)` of action `a`.
    fn delta(self, a: usize) -> (isize, isize) {
        match (self, a) {
            (ActionSet::Grid, 0) => (0, -1),
            (ActionSet::Grid, 1) => (0, 1),
            (ActionSet::Grid, 2) | (ActionSet::Line, 0) => (-1, 0),
            (ActionSet::Grid, 3) | (ActionSet::Line, 1) => (1, 0),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Agent k starts in corner k mod 4 (end k mod 2 on a single row).
    #[default]
    Corners,
    /// Uniform random cells drawn from the reset seed.
    Random,
}

fn default_horizon() -> usize {
    20
}

fn default_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub width: usize,
    pub height: usize,
    pub n_agents: usize,
    /// One goal cell per agent, `y * width + x`.
    pub goal_cells: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub slip_prob: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub actions: ActionSet,
    #[serde(default)]
    pub start: StartRule,
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self::gridworld_4x4()
    }
}

impl EnvSpec {
    /// Two agents starting in opposite corners of a 4×4 grid, each heading for
    /// the other's corner.
    pub fn gridworld_4x4() -> Self {
        Self {
            width: 4,
            height: 4,
            n_agents: 2,
            goal_cells: vec![15, 0],
            horizon: 20,
            slip_prob: 0.0,
            gamma: 0.99,
            actions: ActionSet::Grid,
            start: StartRule::Corners,
        }
    }

    /// A single-row instance small enough for exact joint enumeration.
    /// Agent k starts at the opposite end from its goal.
    pub fn micro(n_agents: usize, width: usize) -> Self {
        let goal_cells = (0..n_agents)
            .map(|k| if k % 2 == 0 { width - 1 - k / 2 } else { k / 2 })
            .collect();
        Self {
            width,
            height: 1,
            n_agents,
            goal_cells,
            horizon: 5,
            slip_prob: 0.0,
            gamma: 0.99,
            actions: ActionSet::Line,
            start: StartRule::Corners,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidSpec(m));
        if self.width == 0 || self.height == 0 {
            return bad("grid must be at least 1×1".into());
        }
        if self.n_agents == 0 {
            return bad("need at least one agent".into());
        }
        if self.goal_cells.len() != self.n_agents {
            return bad(format!(
                "{} goal cells for {} agents",
                self.goal_cells.len(),
                self.n_agents
            ));
        }
        if let Some(g) = self.goal_cells.iter().find(|&&g| g >= self.n_cells()) {
            return bad(format!("goal cell {g} outside the grid"));
        }
        let mut sorted = self.goal_cells.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.goal_cells.len() {
            return bad("goal cells must be distinct".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.slip_prob) {
            return bad(format!("slip_prob {} not in [0, 1]", self.slip_prob));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} not in [0, 1)", self.gamma));
        }
        if self.actions == ActionSet::Line && self.height != 1 {
            return bad("line actions need height 1".into());
        }
        Ok(())
    }

    /// Stable content hash used to tie checkpoints to an environment.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("EnvSpec serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    /// Deterministic part of a move: the cell reached from `cell` by action
    /// `a`, clamped at the walls.
    pub fn move_cell(&self, cell: usize, a: usize) -> usize {
        let (x, y) = ((cell % self.width) as isize, (cell / self.width) as isize);
        let (dx, dy) = self.actions.delta(a);
        let nx = (x + dx).clamp(0, self.width as isize - 1);
        let ny = (y + dy).clamp(0, self.height as isize - 1);
        ny as usize * self.width + nx as usize
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = (a % self.width, a / self.width);
        let (bx, by) = (b % self.width, b / self.width);
        ax.abs_diff(bx) + ay.abs_diff(by)
    }

    fn corner(&self, k: usize) -> usize {
        let (w, h) = (self.width, self.height);
        if self.height == 1 {
            return if k % 2 == 0 { 0 } else { w - 1 };
        }
        match k % 4 {
            0 => 0,
            1 => (h - 1) * w + (w - 1),
            2 => w - 1,
            _ => (h - 1) * w,
        }
    }

    /// The team reward for landing in `next`. Depends on the next positions
    /// only.
    pub fn reward(&self, next: &[usize]) -> TrueReward {
        let all_home = next.iter().zip(&self.goal_cells).all(|(p, g)| p == g);
        TrueReward {
            value: if all_home { GOAL_REWARD } else { STEP_PENALTY },
        }
    }

    /// Per-agent `P(s'_i | s_i, a_i)` row including slip.
    pub fn local_transition(&self, cell: usize, a: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.n_cells()];
        row[self.move_cell(cell, a)] += 1.0 - self.slip_prob;
        if self.slip_prob > 0.0 {
            let share = self.slip_prob / self.n_actions() as f64;
            for b in 0..self.n_actions() {
                row[self.move_cell(cell, b)] += share;
            }
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointState {
    pub positions: Vec<usize>,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueReward {
    pub value: f64,
}

/// Start state for an episode. With [`StartRule::Corners`] the seed is unused.
pub fn reset(spec: &EnvSpec, seed: u64) -> JointState {
    let positions = match spec.start {
        StartRule::Corners => (0..spec.n_agents).map(|k| spec.corner(k)).collect(),
        StartRule::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..spec.n_agents)
                .map(|_| rng.random_range(0..spec.n_cells()))
                .collect()
        }
    };
    JointState { positions, t: 0 }
}

/// Advances one step. The rng is only consulted when `slip_prob > 0`.
pub fn step<R: Rng + ?Sized>(
    spec: &EnvSpec,
    state: &JointState,
    joint_action: &[usize],
    rng: &mut R,
) -> Result<(JointState, TrueReward), EnvError> {
    if state.t >= spec.horizon {
        return Err(EnvError::Terminal(state.t));
    }
    if joint_action.len() != spec.n_agents {
        return Err(EnvError::AgentCount {
            expected: spec.n_agents,
            got: joint_action.len(),
        });
    }
    let n_actions = spec.n_actions();
    let mut positions = Vec::with_capacity(spec.n_agents);
    for (agent, (&cell, &a)) in state.positions.iter().zip(joint_action).enumerate() {
        if a >= n_actions {
            return Err(EnvError::BadAction {
                agent,
                action: a,
                n_actions,
            });
        }
        let a = if spec.slip_prob > 0.0 && rng.random::<f64>() < spec.slip_prob {
            rng.random_range(0..n_actions)
        } else {
            a
        };
        positions.push(spec.move_cell(cell, a));
    }
    let reward = spec.reward(&positions);
    Ok((
        JointState {
            positions,
            t: state.t + 1,
        },
        reward,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Poor,
    Medium,
    Expert,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Poor, Tier::Medium, Tier::Expert];

    pub fn kappa(self) -> f64 {
        match self {
            Tier::Poor => 0.0,
            Tier::Medium => 2.0,
            Tier::Expert => 8.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Poor => "poor",
            Tier::Medium => "medium",
            Tier::Expert => "expert",
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A behavior policy `μ_i(a|o) ∝ exp(κ · Φ_i(move(o, a)))` with
/// `Φ_i = −manhattan(·, goal_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorTier {
    pub tier: Tier,
    pub kappa: f64,
    /// `[agent][obs * n_actions + action]`
    pub tables: Vec<Vec<f64>>,
    n_actions: usize,
}

impl BehaviorTier {
    pub fn new(spec: &EnvSpec, tier: Tier) -> Self {
        Self::with_kappa(spec, tier, tier.kappa())
    }

    pub fn with_kappa(spec: &EnvSpec, tier: Tier, kappa: f64) -> Self {
        let n_actions = spec.n_actions();
        let tables = (0..spec.n_agents)
            .map(|i| {
                let goal = spec.goal_cells[i];
                let mut table = Vec::with_capacity(spec.n_cells() * n_actions);
                for cell in 0..spec.n_cells() {
                    let logits: Vec<f64> = (0..n_actions)
                        .map(|a| -kappa * spec.manhattan(spec.move_cell(cell, a), goal) as f64)
                        .collect();
                    table.extend(softmax(&logits));
                }
                table
            })
            .collect();
        Self {
            tier,
            kappa,
            tables,
            n_actions,
        }
    }

    pub fn prob(&self, agent: usize, obs: usize, action: usize) -> f64 {
        self.tables[agent][obs * self.n_actions + action]
    }

    pub fn row(&self, agent: usize, obs: usize) -> &[f64] {
        &self.tables[agent][obs * self.n_actions..(obs + 1) * self.n_actions]
    }

    /// `μ_tot(a|s) = Π_i μ_i(a_i|s_i)`.
    pub fn joint_prob(&self, obs: &[usize], act: &[usize]) -> f64 {
        obs.iter()
            .zip(act)
            .enumerate()
            .map(|(i, (&o, &a))| self.prob(i, o, a))
            .product()
    }
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Inverse-CDF draw from a probability row.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Runs any per-agent stochastic policy for one full episode.
pub fn run_episode<F>(spec: &EnvSpec, seed: u64, mut choose: F) -> (Vec<Transition>, f64)
where
    F: FnMut(usize, usize, &mut ChaCha8Rng) -> usize,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = reset(spec, seed);
    let mut transitions = Vec::with_capacity(spec.horizon);
    let mut ret = 0.0;
    let mut discount = 1.0;
    while state.t < spec.horizon {
        let act: Vec<usize> = state
            .positions
            .iter()
            .enumerate()
            .map(|(i, &o)| choose(i, o, &mut rng))
            .collect();
        let (next, r) = step(spec, &state, &act, &mut rng).expect("policy emits valid actions");
        ret += discount * r.value;
        discount *= spec.gamma;
        transitions.push(Transition {
            obs: state.positions.clone(),
            act,
            next_obs: next.positions.clone(),
        });
        state = next;
    }
    (transitions, ret)
}

/// Samples one trajectory from the tier's joint behavior policy.
pub fn rollout(spec: &EnvSpec, tier: &BehaviorTier, seed: u64) -> Trajectory {
    let (transitions, ret) = run_episode(spec, seed, |i, o, rng| sample_index(tier.row(i, o), rng));
    Trajectory::new(transitions, ret, tier.tier.name())
}

/// Mixed-radix decode of `index` (agent 0 is the most significant digit).
pub fn decode(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for k in (0..radices.len()).rev() {
        digits[k] = index % radices[k];
        index /= radices[k];
    }
    digits
}

pub fn encode(digits: &[usize], radices: &[usize]) -> usize {
    digits.iter().zip(radices).fold(0, |acc, (&d, &r)| acc * r + d)
}

/// Exhaustive joint tables of a micro-instance.
#[derive(Debug, Clone)]
pub struct MicroEnumeration {
    pub n_agents: usize,
    pub n_local_states: usize,
    pub n_local_actions: usize,
    pub joint_states: Vec<Vec<usize>>,
    pub joint_actions: Vec<Vec<usize>>,
    /// `[(s * |A| + a) * |S| + s']`
    pub transition: Vec<f64>,
    /// `[s * |A| + a]`
    pub mu_tot: Vec<f64>,
    /// Expected one-step true reward `[s * |A| + a]`.
    pub reward: Vec<f64>,
    pub mu_local: Vec<Vec<f64>>,
}

impl MicroEnumeration {
    pub fn n_states(&self) -> usize {
        self.joint_states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.joint_actions.len()
    }

    pub fn p(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions() + a) * self.n_states() + s_next]
    }
}

pub fn enumerate_micro(
    spec: &EnvSpec,
    tier: &BehaviorTier,
    cap: usize,
) -> Result<MicroEnumeration, EnvError> {
    spec.validate()?;
    let (n, ns, na) = (spec.n_agents, spec.n_cells(), spec.n_actions());
    if n > 3 || ns > 4 || na > 3 {
        return Err(EnvError::NotMicro(format!(
            "n = {n}, |S_i| = {ns}, |A_i| = {na}"
        )));
    }
    let n_states = ns.pow(n as u32);
    let n_actions = na.pow(n as u32);
    let needed = n_states * n_actions * n_states;
    if needed > cap {
        return Err(EnvError::EnumerationCap { needed, cap });
    }
    let state_radix = vec![ns; n];
    let action_radix = vec![na; n];
    let joint_states: Vec<Vec<usize>> = (0..n_states).map(|k| decode(k, &state_radix)).collect();
    let joint_actions: Vec<Vec<usize>> = (0..n_actions).map(|k| decode(k, &action_radix)).collect();

    let mut transition = vec![0.0; needed];
    let mut mu_tot = vec![0.0; n_states * n_actions];
    let mut reward = vec![0.0; n_states * n_actions];
    for (s, cells) in joint_states.iter().enumerate() {
        for (a, acts) in joint_actions.iter().enumerate() {
            mu_tot[s * n_actions + a] = tier.joint_prob(cells, acts);
            let local: Vec<Vec<f64>> = cells
                .iter()
                .zip(acts)
                .map(|(&c, &x)| spec.local_transition(c, x))
                .collect();
            let base = (s * n_actions + a) * n_states;
            let mut expected_r = 0.0;
            for (s_next, next_cells) in joint_states.iter().enumerate() {
                let p: f64 = next_cells
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| local[i][c])
                    .product();
                transition[base + s_next] = p;
                expected_r += p * spec.reward(next_cells).value;
            }
            reward[s * n_actions + a] = expected_r;
        }
    }
    Ok(MicroEnumeration {
        n_agents: n,
        n_local_states: ns,
        n_local_actions: na,
        joint_states,
        joint_actions,
        transition,
        mu_tot,
        reward,
        mu_local: tier.tables.clone(),
    })
}

//! Alternating O-MAPL updates, the BC / IIPL / IPL-VDN baselines, policy
//! evaluation, and recovered-reward diagnostics.
//!
//! Every method runs one or more [`Learner`]s in lockstep. A learner owns a
//! view of the dataset restricted to its agents, its tables, its mixing layer
//! and the policies of its agents. O-MAPL is a single learner over all agents
//! with trainable mixing; IPL-VDN is the same learner with the mixing frozen at
//! unit weights; IIPL is one single-agent learner per agent.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{PreferencePair, Transition};
use crate::env::{run_episode, sample_index, EnvSpec};
use crate::factorization::{
    implicit_reward, Hyper, LocalTables, MixWeights, MixingParams, ModelError, TableShape,
};
use crate::losses::{extreme_v_loss, pref_loss, wbc_loss, weighted_log_likelihood, LossError};
use crate::optim::{Adam, AdamConfig};
use crate::policy::{PolicyTable, SoftmaxPolicy};

/// Offset between the training seed and the evaluation rollout seeds.
pub const EVAL_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty preference dataset")]
    EmptyDataset,
    #[error("step {step}: {what} is not finite")]
    Diverged { step: usize, what: String },
    #[error("evaluation needs at least one episode")]
    NoEpisodes,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Omapl,
    Bc,
    Iipl,
    IplVdn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Omapl, Method::Bc, Method::Iipl, Method::IplVdn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Omapl => "omapl",
            Method::Bc => "bc",
            Method::Iipl => "iipl",
            Method::IplVdn => "ipl_vdn",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected omapl, bc, iipl or ipl_vdn)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub lr: f64,
    pub batch_size: usize,
    pub gamma: f64,
    pub tau: f64,
    pub beta: f64,
    pub exponent_clip: [f64; 2],
    pub steps: usize,
    pub seed: u64,
    pub eval_episodes: usize,
    /// A metrics row is written every `eval_interval` steps, plus step 0 and
    /// the final step.
    pub eval_interval: usize,
    /// Read `v` from a Polyak-averaged copy in the preference loss.
    pub use_target: bool,
    /// Keep mixing at unit weights and zero biases instead of training θ.
    pub freeze_mixing: bool,
    pub greedy_eval: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Omapl,
            lr: 1e-4,
            batch_size: 32,
            gamma: 0.99,
            tau: 0.005,
            beta: 1.0,
            exponent_clip: [-20.0, 10.0],
            steps: 10_000,
            seed: 0,
            eval_episodes: 100,
            eval_interval: 1_000,
            use_target: false,
            freeze_mixing: false,
            greedy_eval: false,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            beta: self.beta,
            gamma: self.gamma,
            exponent_clip: self.exponent_clip,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr {} must be > 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.eval_interval == 0 {
            return Err(TrainError::Config("eval_interval must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(TrainError::Config(format!("tau {} not in [0, 1]", self.tau)));
        }
        self.hyper().validate()?;
        Ok(())
    }
}

/// How a learner combines its local values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mixing {
    Learned(MixingParams),
    Fixed(MixWeights),
}

impl Mixing {
    pub fn weights(&self) -> MixWeights {
        match self {
            Mixing::Learned(p) => p.effective(),
            Mixing::Fixed(w) => w.clone(),
        }
    }
}

/// Trained value model over a subset of agents (all agents for O-MAPL).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueHead {
    pub agents: Vec<usize>,
    pub tables: LocalTables,
    pub mixing: Mixing,
}

impl ValueHead {
    pub fn implicit_reward(&self, hyper: &Hyper, t: &Transition) -> Result<f64, ModelError> {
        let local = if self.agents.len() == t.obs.len() && self.agents.iter().enumerate().all(|(k, &a)| k == a) {
            std::borrow::Cow::Borrowed(t)
        } else {
            std::borrow::Cow::Owned(t.project(&self.agents))
        };
        implicit_reward(&self.tables, &self.mixing.weights(), hyper, &local, false)
    }
}

/// Sum of the heads' implicit rewards on one joint transition.
pub fn joint_implicit_reward(heads: &[ValueHead], hyper: &Hyper, t: &Transition) -> Result<f64, ModelError> {
    heads.iter().map(|h| h.implicit_reward(hyper, t)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub loss_pref: Option<f64>,
    pub loss_extreme_v: Option<f64>,
    pub loss_wbc_mean: f64,
    pub mean_return: Option<f64>,
    pub std_return: Option<f64>,
    pub rank_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "step,loss_pref,loss_extreme_v,loss_wbc_mean,mean_return,std_return,rank_accuracy";

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_metrics_csv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            cell(r.loss_pref),
            cell(r.loss_extreme_v),
            r.loss_wbc_mean,
            cell(r.mean_return),
            cell(r.std_return),
            cell(r.rank_accuracy)
        )?;
    }
    out.flush()
}

/// Optional environment and held-out pairs for the metrics columns that need
/// them.
#[derive(Debug, Clone, Copy, Default)]
pub struct EvalContext<'a> {
    pub env: Option<&'a EnvSpec>,
    pub heldout: Option<&'a [PreferencePair]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub method: Method,
    pub heads: Vec<ValueHead>,
    pub policies: Vec<SoftmaxPolicy>,
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutput {
    pub fn policy_tables(&self) -> Vec<PolicyTable> {
        self.policies.iter().map(SoftmaxPolicy::to_table).collect()
    }
}

struct Learner {
    agents: Vec<usize>,
    pairs: Vec<PreferencePair>,
    tables: LocalTables,
    mixing: Mixing,
    policies: Vec<SoftmaxPolicy>,
    opt_q: Vec<Adam>,
    opt_v: Vec<Adam>,
    opt_theta: Option<Adam>,
    opt_pi: Vec<Adam>,
    rng: ChaCha8Rng,
}

impl Learner {
    fn new(agents: Vec<usize>, pairs: &[PreferencePair], shape: &TableShape, mixing: Mixing, cfg: &TrainConfig, seed: u64) -> Self {
        let identity = agents.len() == shape.n_agents() && agents.iter().enumerate().all(|(k, &a)| k == a);
        let shape = shape.project(&agents);
        let pairs = pairs
            .iter()
            .map(|p| if identity { p.stripped() } else { p.project(&agents).stripped() })
            .collect();
        let mut tables = LocalTables::zeros(shape.clone());
        if cfg.use_target {
            tables = tables.with_target();
        }
        let policies: Vec<SoftmaxPolicy> = (0..shape.n_agents())
            .map(|k| SoftmaxPolicy::uniform(shape.n_obs[k], shape.n_act[k]))
            .collect();
        let opt_q = tables.q.iter().map(|t| Adam::new(t.len(), cfg.lr, cfg.adam)).collect();
        let opt_v = tables.v.iter().map(|t| Adam::new(t.len(), cfg.lr, cfg.adam)).collect();
        let opt_theta = match &mixing {
            Mixing::Learned(p) => Some(Adam::new(p.to_flat().len(), cfg.lr, cfg.adam)),
            Mixing::Fixed(_) => None,
        };
        let opt_pi = policies.iter().map(|p| Adam::new(p.logits.len(), cfg.lr, cfg.adam)).collect();
        Self {
            agents,
            pairs,
            tables,
            mixing,
            policies,
            opt_q,
            opt_v,
            opt_theta,
            opt_pi,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn sample_batch(&mut self, batch_size: usize) -> Vec<usize> {
        let n = self.pairs.len();
        rand::seq::index::sample(&mut self.rng, n, batch_size.min(n)).into_vec()
    }

    /// One iteration: ascend `L` in (ψ_q, θ), descend `J` in ψ_v, ascend `Ψ` in
    /// each ω_i, all on the same minibatch.
    fn step(&mut self, cfg: &TrainConfig, hyper: &Hyper, step: usize) -> Result<(), TrainError> {
        let idx = self.sample_batch(cfg.batch_size);
        let batch: Vec<&PreferencePair> = idx.iter().map(|&k| &self.pairs[k]).collect();
        let scale = 1.0 / batch.len() as f64;

        let mix = self.mixing.weights();
        let (pref, grad) = pref_loss(&self.tables, &mix, hyper, &batch, cfg.use_target)?;
        if !pref.value.is_finite() {
            return Err(TrainError::Diverged { step, what: "preference loss".into() });
        }
        for (i, g) in grad.q.iter().enumerate() {
            let descent: Vec<f64> = g.iter().map(|x| -x * scale).collect();
            self.opt_q[i].step(&mut self.tables.q[i], &descent);
        }
        if let (Mixing::Learned(params), Some(opt)) = (&mut self.mixing, &mut self.opt_theta) {
            let descent: Vec<f64> = params.backprop(&grad.mix).iter().map(|x| -x * scale).collect();
            let mut flat = params.to_flat();
            opt.step(&mut flat, &descent);
            params.set_flat(&flat);
        }

        let transitions: Vec<&Transition> = batch.iter().flat_map(|p| p.transitions()).collect();
        let mix = self.mixing.weights();
        let (ev, v_grad) = extreme_v_loss(&self.tables, &mix, hyper, &transitions)?;
        if !ev.value.is_finite() {
            return Err(TrainError::Diverged { step, what: "extreme-V loss".into() });
        }
        for (i, g) in v_grad.iter().enumerate() {
            self.opt_v[i].step(&mut self.tables.v[i], g);
        }

        let n_trans = 1.0 / transitions.len() as f64;
        for k in 0..self.policies.len() {
            let (wbc, g) = wbc_loss(&self.tables, &mix, hyper, &self.policies[k], &transitions, k)?;
            if !wbc.value.is_finite() {
                return Err(TrainError::Diverged { step, what: format!("WBC objective of agent {}", self.agents[k]) });
            }
            let descent: Vec<f64> = g.iter().map(|x| -x * n_trans).collect();
            self.opt_pi[k].step(&mut self.policies[k].logits, &descent);
        }

        if cfg.use_target {
            self.tables.polyak_update(cfg.tau)?;
        }
        if !self.tables.all_finite() {
            return Err(TrainError::Diverged { step, what: "value tables".into() });
        }
        Ok(())
    }

    /// Losses over the learner's whole dataset: `(L, J, Σ_agents Ψ)`.
    fn full_losses(&self, cfg: &TrainConfig, hyper: &Hyper) -> Result<(f64, f64, f64), TrainError> {
        let all: Vec<&PreferencePair> = self.pairs.iter().collect();
        let transitions: Vec<&Transition> = all.iter().flat_map(|p| p.transitions()).collect();
        let mix = self.mixing.weights();
        let (pref, _) = pref_loss(&self.tables, &mix, hyper, &all, cfg.use_target)?;
        let (ev, _) = extreme_v_loss(&self.tables, &mix, hyper, &transitions)?;
        let mut wbc = 0.0;
        for k in 0..self.policies.len() {
            wbc += wbc_loss(&self.tables, &mix, hyper, &self.policies[k], &transitions, k)?.0.value;
        }
        Ok((pref.value, ev.value, wbc))
    }

    fn head(&self) -> ValueHead {
        ValueHead {
            agents: self.agents.clone(),
            tables: self.tables.clone(),
            mixing: self.mixing.clone(),
        }
    }
}

fn eval_columns(
    policies: &[SoftmaxPolicy],
    heads: Option<&[ValueHead]>,
    hyper: &Hyper,
    cfg: &TrainConfig,
    ctx: &EvalContext<'_>,
) -> Result<(Option<f64>, Option<f64>, Option<f64>), TrainError> {
    let (mut mean, mut std) = (None, None);
    if let Some(env) = ctx.env {
        if cfg.eval_episodes > 0 {
            let tables: Vec<PolicyTable> = policies.iter().map(SoftmaxPolicy::to_table).collect();
            let summary = evaluate(&tables, env, cfg.eval_episodes, cfg.seed.wrapping_add(EVAL_SEED_OFFSET), cfg.greedy_eval)?;
            mean = Some(summary.mean_return);
            std = Some(summary.std_return);
        }
    }
    let rank = match (heads, ctx.heldout) {
        (Some(h), Some(pairs)) if !pairs.is_empty() => Some(reward_separation(h, hyper, pairs)?.accuracy),
        _ => None,
    };
    Ok((mean, std, rank))
}

fn should_log(step: usize, cfg: &TrainConfig) -> bool {
    step == 0 || step == cfg.steps || step % cfg.eval_interval == 0
}

fn run_learners(
    method: Method,
    mut learners: Vec<Learner>,
    cfg: &TrainConfig,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    let hyper = cfg.hyper();
    let n_agents: usize = learners.iter().map(|l| l.agents.len()).sum();
    let mut metrics = Vec::new();
    let collect_policies = |learners: &[Learner]| {
        let mut out: Vec<Option<SoftmaxPolicy>> = vec![None; n_agents];
        for l in learners {
            for (k, &a) in l.agents.iter().enumerate() {
                out[a] = Some(l.policies[k].clone());
            }
        }
        out.into_iter().map(|p| p.expect("every agent has a learner")).collect::<Vec<_>>()
    };

    for step in 0..=cfg.steps {
        if step > 0 {
            for l in learners.iter_mut() {
                l.step(cfg, &hyper, step)?;
            }
        }
        if should_log(step, cfg) {
            let (mut pref, mut ev, mut wbc) = (0.0, 0.0, 0.0);
            for l in &learners {
                let (p, e, w) = l.full_losses(cfg, &hyper)?;
                pref += p;
                ev += e;
                wbc += w;
            }
            ev /= learners.len() as f64;
            wbc /= n_agents as f64;
            for (what, x) in [("preference loss", pref), ("extreme-V loss", ev), ("WBC objective", wbc)] {
                if !x.is_finite() {
                    return Err(TrainError::Diverged { step, what: what.into() });
                }
            }
            let heads: Vec<ValueHead> = learners.iter().map(Learner::head).collect();
            let (mean, std, rank) = eval_columns(&collect_policies(&learners), Some(&heads), &hyper, cfg, &ctx)?;
            metrics.push(MetricsRow {
                step,
                loss_pref: Some(pref),
                loss_extreme_v: Some(ev),
                loss_wbc_mean: wbc,
                mean_return: mean,
                std_return: std,
                rank_accuracy: rank,
            });
        }
    }
    Ok(TrainOutput {
        method,
        heads: learners.iter().map(Learner::head).collect(),
        policies: collect_policies(&learners),
        metrics,
    })
}

fn check_inputs(cfg: &TrainConfig, pairs: &[PreferencePair], shape: &TableShape) -> Result<(), TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for p in pairs {
        for t in p.transitions() {
            shape.check(t)?;
        }
    }
    Ok(())
}

fn all_agents(shape: &TableShape) -> Vec<usize> {
    (0..shape.n_agents()).collect()
}

/// O-MAPL with trainable linear mixing (unless `freeze_mixing` is set).
pub fn train_omapl(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    shape: &TableShape,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    check_inputs(cfg, pairs, shape)?;
    let n = shape.n_agents();
    let mixing = if cfg.freeze_mixing {
        Mixing::Fixed(MixWeights::unit(n))
    } else {
        Mixing::Learned(MixingParams::unit(n))
    };
    let learner = Learner::new(all_agents(shape), pairs, shape, mixing, cfg, cfg.seed);
    run_learners(Method::Omapl, vec![learner], cfg, ctx)
}

/// O-MAPL with mixing fixed to a plain sum of local values.
pub fn train_ipl_vdn(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    shape: &TableShape,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    check_inputs(cfg, pairs, shape)?;
    let learner = Learner::new(
        all_agents(shape),
        pairs,
        shape,
        Mixing::Fixed(MixWeights::unit(shape.n_agents())),
        cfg,
        cfg.seed,
    );
    run_learners(Method::IplVdn, vec![learner], cfg, ctx)
}

/// Independent single-agent preference learners, one per agent, each seeing
/// only its own observations and actions. Learner `i` draws minibatches from
/// seed `seed + i`.
pub fn train_iipl(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    shape: &TableShape,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    check_inputs(cfg, pairs, shape)?;
    let learners = (0..shape.n_agents())
        .map(|i| Learner::new(vec![i], pairs, shape, Mixing::Fixed(MixWeights::unit(1)), cfg, cfg.seed.wrapping_add(i as u64)))
        .collect();
    run_learners(Method::Iipl, learners, cfg, ctx)
}

/// Behavior cloning on the preferred trajectories only.
pub fn train_bc(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    shape: &TableShape,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    check_inputs(cfg, pairs, shape)?;
    let hyper = cfg.hyper();
    let n = shape.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let preferred: Vec<Vec<Transition>> = pairs.iter().map(|p| p.sigma_plus.transitions.clone()).collect();
    let mut policies: Vec<SoftmaxPolicy> = (0..n).map(|i| SoftmaxPolicy::uniform(shape.n_obs[i], shape.n_act[i])).collect();
    let mut opts: Vec<Adam> = policies.iter().map(|p| Adam::new(p.logits.len(), cfg.lr, cfg.adam)).collect();
    let all: Vec<&Transition> = preferred.iter().flatten().collect();
    let log_likelihood = |policy: &SoftmaxPolicy, ts: &[&Transition], i: usize| {
        weighted_log_likelihood(policy, ts.iter().map(|t| (t.obs[i], t.act[i], 1.0)))
    };
    let mut metrics = Vec::new();
    for step in 0..=cfg.steps {
        if step > 0 {
            let idx = rand::seq::index::sample(&mut rng, preferred.len(), cfg.batch_size.min(preferred.len()));
            let batch: Vec<&Transition> = idx.iter().flat_map(|k| preferred[k].iter()).collect();
            let scale = 1.0 / batch.len() as f64;
            for i in 0..n {
                let (value, g) = log_likelihood(&policies[i], &batch, i);
                if !value.is_finite() {
                    return Err(TrainError::Diverged { step, what: format!("BC log-likelihood of agent {i}") });
                }
                let descent: Vec<f64> = g.iter().map(|x| -x * scale).collect();
                opts[i].step(&mut policies[i].logits, &descent);
            }
        }
        if should_log(step, cfg) {
            let ll: f64 = (0..n).map(|i| log_likelihood(&policies[i], &all, i).0).sum::<f64>() / n as f64;
            let (mean, std, _) = eval_columns(&policies, None, &hyper, cfg, &ctx)?;
            metrics.push(MetricsRow {
                step,
                loss_pref: None,
                loss_extreme_v: None,
                loss_wbc_mean: ll,
                mean_return: mean,
                std_return: std,
                rank_accuracy: None,
            });
        }
    }
    Ok(TrainOutput {
        method: Method::Bc,
        heads: Vec::new(),
        policies,
        metrics,
    })
}

/// Dispatches on `cfg.method`.
pub fn train(
    cfg: &TrainConfig,
    pairs: &[PreferencePair],
    shape: &TableShape,
    ctx: EvalContext<'_>,
) -> Result<TrainOutput, TrainError> {
    match cfg.method {
        Method::Omapl => train_omapl(cfg, pairs, shape, ctx),
        Method::Bc => train_bc(cfg, pairs, shape, ctx),
        Method::Iipl => train_iipl(cfg, pairs, shape, ctx),
        Method::IplVdn => train_ipl_vdn(cfg, pairs, shape, ctx),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean_return: f64,
    /// Sample standard deviation (zero for a single episode).
    pub std_return: f64,
    pub returns: Vec<f64>,
}

/// Rolls out decentralized policies; agent `i` acts on its own observation
/// only. Episode `e` uses seed `seed + e`.
pub fn evaluate(
    policies: &[PolicyTable],
    spec: &EnvSpec,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalSummary, TrainError> {
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    if policies.len() != spec.n_agents {
        return Err(TrainError::Config(format!("{} policies for {} agents", policies.len(), spec.n_agents)));
    }
    let returns: Vec<f64> = (0..episodes)
        .map(|e| {
            let (_, ret) = run_episode(spec, seed.wrapping_add(e as u64), |i, o, rng| {
                if greedy {
                    policies[i].greedy_action(o)
                } else {
                    sample_index(policies[i].row(o), rng)
                }
            });
            ret
        })
        .collect();
    let (mean, std) = mean_std(&returns);
    Ok(EvalSummary { mean_return: mean, std_return: std, returns })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardSeparation {
    pub mean_plus: f64,
    pub mean_minus: f64,
    /// Fraction of pairs with `Σ R(σ⁺) > Σ R(σ⁻)`; exact ties count one half.
    pub accuracy: f64,
}

/// Recovered per-transition rewards on preferred vs non-preferred trajectories.
pub fn reward_separation(heads: &[ValueHead], hyper: &Hyper, pairs: &[PreferencePair]) -> Result<RewardSeparation, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let (mut sum_plus, mut n_plus, mut sum_minus, mut n_minus) = (0.0, 0usize, 0.0, 0usize);
    let mut score = 0.0;
    for p in pairs {
        let mut s_plus = 0.0;
        for t in &p.sigma_plus.transitions {
            s_plus += joint_implicit_reward(heads, hyper, t)?;
        }
        let mut s_minus = 0.0;
        for t in &p.sigma_minus.transitions {
            s_minus += joint_implicit_reward(heads, hyper, t)?;
        }
        sum_plus += s_plus;
        n_plus += p.sigma_plus.len();
        sum_minus += s_minus;
        n_minus += p.sigma_minus.len();
        score += if s_plus > s_minus {
            1.0
        } else if s_plus == s_minus {
            0.5
        } else {
            0.0
        };
    }
    Ok(RewardSeparation {
        mean_plus: sum_plus / n_plus as f64,
        mean_minus: sum_minus / n_minus as f64,
        accuracy: score / pairs.len() as f64,
    })
}

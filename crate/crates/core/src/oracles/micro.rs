use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{OracleError, ORACLE_TOL};
use crate::dataset::Transition;
use crate::env::{decode, sample_index, DEFAULT_ENUMERATION_CAP};
use crate::factorization::{q_tot, v_tot, Hyper, LocalTables, MixWeights, TableShape};
use crate::losses::{table_objective, wbc_closed_form, wbc_weights};
use crate::policy::{max_row_tv, PolicyTable};

/// Factored behavior policy, local tables and constant mixing over a joint
/// space small enough to enumerate.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroModel {
    /// `mu[i][s * n_act + a]`
    pub mu: Vec<Vec<f64>>,
    pub tables: LocalTables,
    pub mix: MixWeights,
    pub hyper: Hyper,
}

impl MicroModel {
    /// Random model: 2 or 3 local states and actions per agent, q and v in
    /// (−1, 1), weights in (0.5, 1.5), biases in (−0.5, 0.5), β in (0.5, 2).
    pub fn random(n_agents: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_obs: Vec<usize> = (0..n_agents).map(|_| rng.random_range(2..=3)).collect();
        let n_act: Vec<usize> = (0..n_agents).map(|_| rng.random_range(2..=3)).collect();
        let mut tables = LocalTables::zeros(TableShape { n_obs: n_obs.clone(), n_act: n_act.clone() });
        let mut mu = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let mut rows = Vec::with_capacity(n_obs[i] * n_act[i]);
            for _ in 0..n_obs[i] {
                let raw: Vec<f64> = (0..n_act[i]).map(|_| rng.random_range(0.05..1.0)).collect();
                let total: f64 = raw.iter().sum();
                rows.extend(raw.iter().map(|x| x / total));
            }
            mu.push(rows);
            tables.q[i].iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
            tables.v[i].iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let mix = MixWeights {
            q: (0..n_agents).map(|_| rng.random_range(0.5..1.5)).collect(),
            v: (0..n_agents).map(|_| rng.random_range(0.5..1.5)).collect(),
            b_q: rng.random_range(-0.5..0.5),
            b_v: rng.random_range(-0.5..0.5),
        };
        let hyper = Hyper { beta: rng.random_range(0.5..2.0), ..Hyper::default() };
        Self { mu, tables, mix, hyper }
    }

    /// Uniform μ, given tables, unit mixing.
    pub fn with_uniform_mu(tables: LocalTables, hyper: Hyper) -> Self {
        let n = tables.n_agents();
        let mu = (0..n)
            .map(|i| vec![1.0 / tables.shape.n_act[i] as f64; tables.shape.n_obs[i] * tables.shape.n_act[i]])
            .collect();
        Self { mu, tables, mix: MixWeights::unit(n), hyper }
    }

    pub fn n_agents(&self) -> usize {
        self.tables.n_agents()
    }

    fn n_act(&self, i: usize) -> usize {
        self.tables.shape.n_act[i]
    }

    fn n_obs(&self, i: usize) -> usize {
        self.tables.shape.n_obs[i]
    }

    pub fn validate(&self, cap: usize) -> Result<(), OracleError> {
        let n = self.n_agents();
        if self.mu.len() != n || self.mix.n_agents() != n {
            return Err(OracleError::Invalid("agent count mismatch".into()));
        }
        self.hyper.validate()?;
        for i in 0..n {
            for s in 0..self.n_obs(i) {
                let row = &self.mu[i][s * self.n_act(i)..(s + 1) * self.n_act(i)];
                if row.iter().any(|&p| !(p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(OracleError::Invalid(format!("mu row ({i}, {s}) is not a distribution")));
                }
            }
        }
        let needed: usize = self.tables.shape.n_obs.iter().zip(&self.tables.shape.n_act).map(|(s, a)| s * a).product();
        if needed > cap {
            return Err(OracleError::EnumerationCap { needed, cap });
        }
        Ok(())
    }

    /// `μ_i(a|s) e^{(w^q_i q_i(s, a) − w^v_i v_i(s)) / β}`
    pub fn local_factor(&self, i: usize, s: usize, a: usize) -> f64 {
        let x = (self.mix.q[i] * self.tables.q_at(i, s, a) - self.mix.v[i] * self.tables.v_at(i, s)) / self.hyper.beta;
        self.mu[i][s * self.n_act(i) + a] * x.exp()
    }

    /// Every joint `(s, a)` with its weight `μ_tot(a|s) e^{(Q_tot − V_tot)/β}`,
    /// computed from the mixed totals rather than the factored form.
    fn joint_weights(&self) -> Result<Vec<(Vec<usize>, Vec<usize>, f64)>, OracleError> {
        self.validate(DEFAULT_ENUMERATION_CAP)?;
        let states = joint_space(&self.tables.shape.n_obs);
        let actions = joint_space(&self.tables.shape.n_act);
        let mut out = Vec::with_capacity(states.len() * actions.len());
        for s in &states {
            let v = v_tot(&self.tables, &self.mix, s)?;
            for a in &actions {
                let mu: f64 = (0..self.n_agents()).map(|i| self.mu[i][s[i] * self.n_act(i) + a[i]]).product();
                let q = q_tot(&self.tables, &self.mix, s, a)?;
                out.push((s.clone(), a.clone(), mu * ((q - v) / self.hyper.beta).exp()));
            }
        }
        Ok(out)
    }

    /// Accumulated `W_i(s_i, a_i)` of the uniform-state WBC objective.
    pub fn wbc_weight_tables(&self) -> Result<Vec<Vec<f64>>, OracleError> {
        let mut w: Vec<Vec<f64>> = (0..self.n_agents()).map(|i| vec![0.0; self.n_obs(i) * self.n_act(i)]).collect();
        for (s, a, x) in self.joint_weights()? {
            for i in 0..self.n_agents() {
                w[i][s[i] * self.n_act(i) + a[i]] += x;
            }
        }
        Ok(w)
    }
}

fn joint_space(radices: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = radices.iter().product();
    (0..total).map(|k| decode(k, radices)).collect()
}

/// `(η(s_i), Δ(s_i))` by direct enumeration of the joint states with
/// `s'_i = s_i` and the other agents' actions.
pub fn eta_delta(model: &MicroModel, i: usize, s_i: usize) -> Result<(f64, f64), OracleError> {
    model.validate(DEFAULT_ENUMERATION_CAP)?;
    let n = model.n_agents();
    let mut state_radix = model.tables.shape.n_obs.clone();
    let mut action_radix = model.tables.shape.n_act.clone();
    state_radix[i] = 1;
    action_radix[i] = 1;
    let bias = ((model.mix.b_q - model.mix.b_v) / model.hyper.beta).exp();
    let mut eta = 0.0;
    for mut s in joint_space(&state_radix) {
        s[i] = s_i;
        for a in joint_space(&action_radix) {
            let prod: f64 = (0..n).filter(|&j| j != i).map(|j| model.local_factor(j, s[j], a[j])).product();
            eta += bias * prod;
        }
    }
    let delta = eta * (0..model.n_act(i)).map(|a| model.local_factor(i, s_i, a)).sum::<f64>();
    Ok((eta, delta))
}

pub(super) fn closed_form_with(model: &MicroModel, i: usize, correct: bool) -> Result<PolicyTable, OracleError> {
    let (n_obs, n_act) = (model.n_obs(i), model.n_act(i));
    let mut probs = Vec::with_capacity(n_obs * n_act);
    for s in 0..n_obs {
        let ratio = if correct {
            let (eta, delta) = eta_delta(model, i, s)?;
            eta / delta
        } else {
            1.0
        };
        probs.extend((0..n_act).map(|a| ratio * model.local_factor(i, s, a)));
    }
    Ok(PolicyTable { n_obs, n_act, probs })
}

/// `π*_i(a|s) = (η/Δ) μ_i(a|s) e^{(w^q_i q_i − w^v_i v_i)/β}`
pub fn closed_form_policy(model: &MicroModel, i: usize) -> Result<PolicyTable, OracleError> {
    closed_form_with(model, i, true)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveRows {
    /// `μ_i e^{(w^q_i q_i − w^v_i v_i)/β}` without correction.
    pub raw: Vec<f64>,
    pub row_sums: Vec<f64>,
    pub normalized: PolicyTable,
}

pub fn naive_local_policy(model: &MicroModel, i: usize) -> NaiveRows {
    let (n_obs, n_act) = (model.n_obs(i), model.n_act(i));
    let raw: Vec<f64> = (0..n_obs).flat_map(|s| (0..n_act).map(move |a| (s, a))).map(|(s, a)| model.local_factor(i, s, a)).collect();
    let row_sums: Vec<f64> = raw.chunks(n_act).map(|r| r.iter().sum()).collect();
    let probs = raw.chunks(n_act).zip(&row_sums).flat_map(|(r, &z)| r.iter().map(move |x| x / z)).collect();
    NaiveRows { raw, row_sums, normalized: PolicyTable { n_obs, n_act, probs } }
}

/// Exact maximizer of the local WBC objective when every joint state counts
/// once and actions follow `μ_tot`.
pub fn uniform_state_maximizer(model: &MicroModel, i: usize) -> Result<PolicyTable, OracleError> {
    let w = model.wbc_weight_tables()?;
    Ok(wbc_closed_form(&w[i], model.n_obs(i), model.n_act(i))?.0)
}

/// Global WBC objective `G(π_tot)` of a decomposable policy.
pub fn glc_objective(model: &MicroModel, policies: &[PolicyTable]) -> Result<f64, OracleError> {
    let joint = model.joint_weights()?;
    Ok(glc_from(&joint, policies))
}

fn glc_from(joint: &[(Vec<usize>, Vec<usize>, f64)], policies: &[PolicyTable]) -> f64 {
    joint
        .iter()
        .map(|(s, a, w)| {
            let log_pi: f64 = policies.iter().enumerate().map(|(i, p)| p.prob(s[i], a[i]).ln()).sum();
            if *w == 0.0 {
                0.0
            } else {
                w * log_pi
            }
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlcReport {
    pub g_star: f64,
    /// Largest `G(sample) − G(π*_tot)`; positive beyond tolerance is a violation.
    pub max_gap: f64,
    pub violations: usize,
    pub n_samples: usize,
    /// `|G(π*_tot) − Σ_i g_i(π*_i)|`
    pub sum_residual: f64,
}

fn dirichlet_row<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

fn random_policy<R: Rng>(n_obs: usize, n_act: usize, rng: &mut R) -> PolicyTable {
    PolicyTable { n_obs, n_act, probs: (0..n_obs).flat_map(|_| dirichlet_row(n_act, rng)).collect() }
}

pub fn check_glc(model: &MicroModel, n_samples: usize, seed: u64) -> Result<GlcReport, OracleError> {
    glc_with(model, n_samples, seed, true)
}

/// Samples alternate between Dirichlet(1) rows and small mixtures of `π*`
/// with Dirichlet rows.
pub(super) fn glc_with(model: &MicroModel, n_samples: usize, seed: u64, correct: bool) -> Result<GlcReport, OracleError> {
    let n = model.n_agents();
    let star: Vec<PolicyTable> = (0..n).map(|i| closed_form_with(model, i, correct)).collect::<Result<_, _>>()?;
    let joint = model.joint_weights()?;
    let g_star = glc_from(&joint, &star);
    let w = model.wbc_weight_tables()?;
    let local_sum: f64 = (0..n).map(|i| table_objective(&w[i], &star[i])).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut max_gap, mut violations) = (f64::NEG_INFINITY, 0);
    for k in 0..n_samples {
        let sample: Vec<PolicyTable> = star
            .iter()
            .map(|p| {
                let noise = random_policy(p.n_obs, p.n_act, &mut rng);
                if k % 2 == 0 {
                    noise
                } else {
                    let eps = rng.random_range(1e-3..0.2);
                    let probs = p.probs.iter().zip(&noise.probs).map(|(x, y)| (1.0 - eps) * x + eps * y).collect();
                    PolicyTable { probs, ..noise }
                }
            })
            .collect();
        let gap = glc_from(&joint, &sample) - g_star;
        max_gap = max_gap.max(gap);
        if gap > ORACLE_TOL {
            violations += 1;
        }
    }
    Ok(GlcReport { g_star, max_gap, violations, n_samples, sum_residual: (g_star - local_sum).abs() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueIdentityReport {
    /// The input model with each `v_i` replaced by its solved value.
    pub solved: MicroModel,
    /// Largest violation of the log-sum-exp identity at the solved values.
    pub identity_residual: f64,
    /// Largest per-row TV between the closed form at the solved values and the
    /// enumerated WBC maximizer.
    pub policy_tv: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Solves `v_i(s) = (β/w^v_i) log Σ_a μ_i e^{w^q_i q_i/β} + (β/w^v_i) log(η/Δ)`
/// on the branch `η/Δ = 1`, then checks the identity and the extracted policy.
pub fn check_value_identity(model: &MicroModel) -> Result<ValueIdentityReport, OracleError> {
    value_identity_with(model, true)
}

pub(super) fn value_identity_with(model: &MicroModel, correct: bool) -> Result<ValueIdentityReport, OracleError> {
    model.validate(DEFAULT_ENUMERATION_CAP)?;
    let beta = model.hyper.beta;
    let lse = |m: &MicroModel, i: usize, s: usize| {
        log_sum_exp((0..m.n_act(i)).map(|a| {
            m.mu[i][s * m.n_act(i) + a].ln() + m.mix.q[i] * m.tables.q_at(i, s, a) / beta
        }))
    };
    let mut solved = model.clone();
    for i in 0..model.n_agents() {
        for s in 0..model.n_obs(i) {
            solved.tables.v[i][s] = beta / model.mix.v[i] * lse(model, i, s);
        }
    }
    let (mut identity_residual, mut policy_tv) = (0.0f64, 0.0f64);
    for i in 0..solved.n_agents() {
        let scale = beta / solved.mix.v[i];
        for s in 0..solved.n_obs(i) {
            let (eta, delta) = eta_delta(&solved, i, s)?;
            let rhs = scale * lse(&solved, i, s) + scale * (eta / delta).ln();
            identity_residual = identity_residual.max((solved.tables.v_at(i, s) - rhs).abs());
        }
        let extracted = closed_form_with(&solved, i, correct)?;
        policy_tv = policy_tv.max(max_row_tv(&extracted, &uniform_state_maximizer(&solved, i)?));
    }
    Ok(ValueIdentityReport { solved, identity_residual, policy_tv })
}

/// Largest per-row TV, over rows visited at least once, between the closed
/// form and the WBC maximizer built from `n_samples` joint states drawn
/// uniformly with actions drawn from `μ`.
pub fn empirical_discrepancy(model: &MicroModel, n_samples: usize, seed: u64) -> Result<f64, OracleError> {
    model.validate(DEFAULT_ENUMERATION_CAP)?;
    let n = model.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transitions: Vec<Transition> = (0..n_samples)
        .map(|_| {
            let obs: Vec<usize> = (0..n).map(|i| rng.random_range(0..model.n_obs(i))).collect();
            let act: Vec<usize> = (0..n)
                .map(|i| sample_index(&model.mu[i][obs[i] * model.n_act(i)..(obs[i] + 1) * model.n_act(i)], &mut rng))
                .collect();
            Transition { next_obs: obs.clone(), obs, act }
        })
        .collect();
    let refs: Vec<&Transition> = transitions.iter().collect();
    let mut worst = 0.0f64;
    for i in 0..n {
        let w = wbc_weights(&model.tables, &model.mix, &model.hyper, &refs, i)?;
        let (empirical, fallback) = wbc_closed_form(&w, model.n_obs(i), model.n_act(i))?;
        let exact = closed_form_policy(model, i)?;
        for s in (0..model.n_obs(i)).filter(|s| !fallback.contains(s)) {
            let tv = 0.5 * empirical.row(s).iter().zip(exact.row(s)).map(|(x, y)| (x - y).abs()).sum::<f64>();
            worst = worst.max(tv);
        }
    }
    Ok(worst)
}

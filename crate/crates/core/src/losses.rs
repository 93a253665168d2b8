//! Preference likelihood `L`, extreme-V loss `J`, and weighted behavior
//! cloning `Ψ`, each with exact analytic gradients.
//!
//! All three are written in their natural direction: `L` and `Ψ` are
//! maximized, `J` is minimized. The trainer flips signs.

use thiserror::Error;

use crate::dataset::{PreferencePair, Transition};
use crate::factorization::{
    implicit_reward_unchecked, q_tot_unchecked, v_tot_with, value_table, Hyper, LocalTables, MixGrad,
    MixWeights, ModelError,
};
use crate::policy::{PolicyTable, SoftmaxPolicy};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty input")]
    Empty,
    #[error("non-finite implicit reward in pair `{0}`")]
    NonFinite(String),
    #[error("negative WBC weight {weight} at obs {obs}, action {act}")]
    NegativeWeight { obs: usize, act: usize, weight: f64 },
    #[error("policy shape {got:?} does not match agent tables {expected:?}")]
    PolicyShape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// `(parameter group, L2 norm of its gradient)`
    pub grad_norms: Vec<(&'static str, f64)>,
    pub n_terms: usize,
}

/// χ² regularizer `φ(x) = −x²/2 + x`.
pub fn phi(x: f64) -> f64 {
    -0.5 * x * x + x
}

pub fn phi_prime(x: f64) -> f64 {
    1.0 - x
}

/// `e^x` inside `[lo, hi]`, continued by its tangent line outside, so the
/// value stays finite and convex and the slope equals `e^{clamp(x)}`.
/// Returns `(value, slope)`.
pub fn clipped_exp(x: f64, clip: [f64; 2]) -> (f64, f64) {
    let [lo, hi] = clip;
    if x > hi {
        let e = hi.exp();
        (e * (1.0 + x - hi), e)
    } else if x < lo {
        let e = lo.exp();
        (e * (1.0 + x - lo), e)
    } else {
        let e = x.exp();
        (e, e)
    }
}

/// WBC weight `e^{clamp((Q_tot − V_tot)/β)}`.
pub fn clipped_weight(x: f64, clip: [f64; 2]) -> f64 {
    x.clamp(clip[0], clip[1]).exp()
}

fn l2(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().map(|g| g * g).sum::<f64>().sqrt()
}

fn log_sum_exp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Gradient of `L` with respect to the q-tables and the effective mixing
/// weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefGrad {
    pub q: Vec<Vec<f64>>,
    pub mix: MixGrad,
}

/// `L = Σ_pairs [S⁺ − log(e^{S⁺} + e^{S⁻})] + Σ_transitions φ(R)` where
/// `S^± = Σ_{σ^±} R(o, a, o')`.
pub fn pref_loss(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    pairs: &[&PreferencePair],
    use_target: bool,
) -> Result<(LossReport, PrefGrad), LossError> {
    if pairs.is_empty() {
        return Err(LossError::Empty);
    }
    let n = tables.n_agents();
    if mix.n_agents() != n {
        return Err(ModelError::AgentCount { expected: n, got: mix.n_agents() }.into());
    }
    let v = value_table(tables, use_target)?;
    let gamma = hyper.gamma;
    let mut grad = PrefGrad {
        q: tables.q.iter().map(|t| vec![0.0; t.len()]).collect(),
        mix: MixGrad::zeros(n),
    };
    let mut value = 0.0;
    let mut n_terms = 0;
    let mut r_plus = Vec::new();
    let mut r_minus = Vec::new();

    for pair in pairs {
        for t in pair.transitions() {
            tables.shape.check(t)?;
        }
        r_plus.clear();
        r_minus.clear();
        r_plus.extend(
            pair.sigma_plus
                .transitions
                .iter()
                .map(|t| implicit_reward_unchecked(tables, v, mix, gamma, t)),
        );
        r_minus.extend(
            pair.sigma_minus
                .transitions
                .iter()
                .map(|t| implicit_reward_unchecked(tables, v, mix, gamma, t)),
        );
        let s_plus: f64 = r_plus.iter().sum();
        let s_minus: f64 = r_minus.iter().sum();
        if !s_plus.is_finite() || !s_minus.is_finite() {
            return Err(LossError::NonFinite(pair.pair_id.clone()));
        }
        let lse = log_sum_exp2(s_plus, s_minus);
        value += s_plus - lse;
        let p_plus = (s_plus - lse).exp();
        let p_minus = (s_minus - lse).exp();

        let sides = [
            (&pair.sigma_plus.transitions, &r_plus, 1.0 - p_plus),
            (&pair.sigma_minus.transitions, &r_minus, -p_minus),
        ];
        for (transitions, rewards, d_likelihood) in sides {
            for (t, &r) in transitions.iter().zip(rewards.iter()) {
                value += phi(r);
                n_terms += 1;
                let g = d_likelihood + phi_prime(r);
                for i in 0..n {
                    let idx = t.obs[i] * tables.shape.n_act[i] + t.act[i];
                    grad.q[i][idx] += g * mix.q[i];
                    grad.mix.q[i] += g * tables.q[i][idx];
                    grad.mix.v[i] -= g * gamma * v[i][t.next_obs[i]];
                }
                grad.mix.b_q += g;
                grad.mix.b_v -= g * gamma;
            }
        }
    }
    let report = LossReport {
        value,
        grad_norms: vec![
            ("q", l2(grad.q.iter().flatten().copied())),
            ("mixing", grad.mix.norm()),
        ],
        n_terms,
    };
    Ok((report, grad))
}

/// `J = mean[e^x] − mean[x] − 1`, `x = (Q_tot(o, a) − V_tot(o)) / β`, with the
/// exponential continued linearly outside the clip window. Returns the gradient
/// with respect to the v-tables.
pub fn extreme_v_loss(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    transitions: &[&Transition],
) -> Result<(LossReport, Vec<Vec<f64>>), LossError> {
    if transitions.is_empty() {
        return Err(LossError::Empty);
    }
    let n = tables.n_agents();
    let count = transitions.len() as f64;
    let mut grad: Vec<Vec<f64>> = tables.v.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut value = 0.0;
    for t in transitions {
        tables.shape.check(t)?;
        let x = (q_tot_unchecked(tables, mix, &t.obs, &t.act) - v_tot_with(&tables.v, mix, &t.obs)) / hyper.beta;
        let (e, slope) = clipped_exp(x, hyper.exponent_clip);
        value += e - x;
        let dx = (slope - 1.0) / count;
        for i in 0..n {
            grad[i][t.obs[i]] -= dx * mix.v[i] / hyper.beta;
        }
    }
    let report = LossReport {
        value: value / count - 1.0,
        grad_norms: vec![("v", l2(grad.iter().flatten().copied()))],
        n_terms: transitions.len(),
    };
    Ok((report, grad))
}

/// Clipped advantage weights `e^{(Q_tot − V_tot)/β}` per transition.
pub fn advantage_weights(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    transitions: &[&Transition],
) -> Result<Vec<f64>, LossError> {
    transitions
        .iter()
        .map(|t| {
            tables.shape.check(t)?;
            let x = (q_tot_unchecked(tables, mix, &t.obs, &t.act) - v_tot_with(&tables.v, mix, &t.obs)) / hyper.beta;
            Ok(clipped_weight(x, hyper.exponent_clip))
        })
        .collect()
}

/// `Σ_k weight_k · log π(act_k | obs_k)` and its gradient in the logits.
pub fn weighted_log_likelihood(
    policy: &SoftmaxPolicy,
    samples: impl IntoIterator<Item = (usize, usize, f64)>,
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; policy.logits.len()];
    let mut value = 0.0;
    let rows: Vec<Vec<f64>> = (0..policy.n_obs).map(|o| policy.probs(o)).collect();
    for (obs, act, w) in samples {
        value += w * policy.log_prob(obs, act);
        let base = obs * policy.n_act;
        for (b, &p) in rows[obs].iter().enumerate() {
            grad[base + b] -= w * p;
        }
        grad[base + act] += w;
    }
    (value, grad)
}

/// Local WBC objective `Ψ(ω_i) = Σ e^{(Q_tot − V_tot)/β} log π_i(a_i|o_i; ω_i)`
/// for agent column `agent`, with its logits gradient.
pub fn wbc_loss(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    policy: &SoftmaxPolicy,
    transitions: &[&Transition],
    agent: usize,
) -> Result<(LossReport, Vec<f64>), LossError> {
    if transitions.is_empty() {
        return Err(LossError::Empty);
    }
    let expected = (tables.shape.n_obs[agent], tables.shape.n_act[agent]);
    if (policy.n_obs, policy.n_act) != expected {
        return Err(LossError::PolicyShape { expected, got: (policy.n_obs, policy.n_act) });
    }
    let weights = advantage_weights(tables, mix, hyper, transitions)?;
    let (value, grad) = weighted_log_likelihood(
        policy,
        transitions
            .iter()
            .zip(&weights)
            .map(|(t, &w)| (t.obs[agent], t.act[agent], w)),
    );
    let report = LossReport {
        value,
        grad_norms: vec![("omega", l2(grad.iter().copied()))],
        n_terms: transitions.len(),
    };
    Ok((report, grad))
}

/// Accumulated WBC weight `W(o_i, a_i)` for one agent over a transition set.
pub fn wbc_weights(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    transitions: &[&Transition],
    agent: usize,
) -> Result<Vec<f64>, LossError> {
    let n_act = tables.shape.n_act[agent];
    let mut out = vec![0.0; tables.shape.n_obs[agent] * n_act];
    for (t, w) in transitions.iter().zip(advantage_weights(tables, mix, hyper, transitions)?) {
        out[t.obs[agent] * n_act + t.act[agent]] += w;
    }
    Ok(out)
}

/// Exact maximizer of `Σ_{o,a} W(o, a) log π(a|o)`: each row is `W` normalized.
/// Rows with zero total fall back to uniform and are listed in the second
/// return value.
pub fn wbc_closed_form(
    weights: &[f64],
    n_obs: usize,
    n_act: usize,
) -> Result<(PolicyTable, Vec<usize>), LossError> {
    if let Some(k) = weights.iter().position(|&w| w < 0.0 || w.is_nan()) {
        return Err(LossError::NegativeWeight { obs: k / n_act, act: k % n_act, weight: weights[k] });
    }
    let mut probs = Vec::with_capacity(n_obs * n_act);
    let mut fallback = Vec::new();
    for o in 0..n_obs {
        let row = &weights[o * n_act..(o + 1) * n_act];
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            probs.extend(row.iter().map(|w| w / total));
        } else {
            fallback.push(o);
            probs.extend(std::iter::repeat_n(1.0 / n_act as f64, n_act));
        }
    }
    Ok((PolicyTable { n_obs, n_act, probs }, fallback))
}

/// `Σ_{o,a} W(o, a) log π(a|o)` for an explicit table; `0 · log 0` counts as 0.
pub fn table_objective(weights: &[f64], policy: &PolicyTable) -> f64 {
    weights
        .iter()
        .zip(&policy.probs)
        .filter(|(&w, _)| w > 0.0)
        .map(|(&w, &p)| w * p.ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trajectory;
    use crate::factorization::TableShape;

    fn pair(id: &str, plus: Vec<Transition>, minus: Vec<Transition>) -> PreferencePair {
        PreferencePair {
            pair_id: id.into(),
            sigma_plus: Trajectory::without_return(plus, "x"),
            sigma_minus: Trajectory::without_return(minus, "y"),
        }
    }

    fn tr(obs: [usize; 2], act: [usize; 2], next: [usize; 2]) -> Transition {
        Transition { obs: obs.to_vec(), act: act.to_vec(), next_obs: next.to_vec() }
    }

    fn toy_pairs() -> Vec<PreferencePair> {
        vec![
            pair("a", vec![tr([0, 1], [1, 0], [1, 1]), tr([1, 1], [0, 0], [2, 0])], vec![tr([2, 2], [1, 1], [0, 1]), tr([0, 1], [0, 1], [0, 0])]),
            pair("b", vec![tr([1, 0], [1, 1], [2, 2])], vec![tr([2, 0], [0, 0], [1, 2])]),
        ]
    }

    #[test]
    fn zero_tables_give_minus_ln2_per_pair() {
        let t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        let pairs = toy_pairs();
        let refs: Vec<_> = pairs.iter().collect();
        let (r, _) = pref_loss(&t, &MixWeights::unit(2), &Hyper::default(), &refs, false).unwrap();
        assert!((r.value + 2.0 * std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(r.n_terms, 6);
    }

    #[test]
    fn empty_inputs_error() {
        let t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        let m = MixWeights::unit(2);
        let h = Hyper::default();
        assert_eq!(pref_loss(&t, &m, &h, &[], false).unwrap_err(), LossError::Empty);
        assert_eq!(extreme_v_loss(&t, &m, &h, &[]).unwrap_err(), LossError::Empty);
        let p = SoftmaxPolicy::uniform(3, 2);
        assert_eq!(wbc_loss(&t, &m, &h, &p, &[], 0).unwrap_err(), LossError::Empty);
    }

    #[test]
    fn nan_reward_names_the_pair() {
        let mut t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        t.q[0][1] = f64::NAN;
        let pairs = toy_pairs();
        let refs: Vec<_> = pairs.iter().collect();
        let err = pref_loss(&t, &MixWeights::unit(2), &Hyper::default(), &refs, false).unwrap_err();
        assert_eq!(err, LossError::NonFinite("a".into()));
    }

    #[test]
    fn extreme_v_zero_at_consistency_and_positive_otherwise() {
        let t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        let pairs = toy_pairs();
        let trans: Vec<_> = pairs.iter().flat_map(|p| p.transitions()).collect();
        let (r, _) = extreme_v_loss(&t, &MixWeights::unit(2), &Hyper::default(), &trans).unwrap();
        assert_eq!(r.value, 0.0);

        // x = ±1 on two transitions: mean 0, J = cosh(1) − 1 > 0.
        let mut t = LocalTables::zeros(TableShape::uniform(1, 2, 1));
        t.q[0] = vec![1.0, -1.0];
        let a = Transition { obs: vec![0], act: vec![0], next_obs: vec![0] };
        let b = Transition { obs: vec![1], act: vec![0], next_obs: vec![1] };
        let (r, _) = extreme_v_loss(&t, &MixWeights::unit(1), &Hyper::default(), &[&a, &b]).unwrap();
        assert!((r.value - (1f64.cosh() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn clipped_exp_is_continuous_at_the_edges() {
        let clip = [-20.0, 10.0];
        for edge in clip {
            let below = clipped_exp(edge - 1e-12, clip).0;
            let above = clipped_exp(edge + 1e-12, clip).0;
            assert!((below - above).abs() / edge.exp() < 1e-9);
        }
        let (v, s) = clipped_exp(50.0, clip);
        assert!(v.is_finite());
        assert_eq!(s, 10f64.exp());
    }

    #[test]
    fn uniform_weights_reduce_to_behavior_cloning() {
        let t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        let pairs = toy_pairs();
        let trans: Vec<_> = pairs.iter().flat_map(|p| p.transitions()).collect();
        let w = wbc_weights(&t, &MixWeights::unit(2), &Hyper::default(), &trans, 0).unwrap();
        // obs 0: actions {1, 0}; obs 1: {0, 1}; obs 2: {1, 0}
        assert_eq!(w, vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let (table, fallback) = wbc_closed_form(&w, 3, 2).unwrap();
        assert!(fallback.is_empty());
        assert_eq!(table.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn closed_form_normalizes_rows() {
        let (t, _) = wbc_closed_form(&[1.0, 1.0, 1.0], 1, 3).unwrap();
        for p in t.row(0) {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let (t, _) = wbc_closed_form(&[2.0, 1.0, 1.0], 1, 3).unwrap();
        assert_eq!(t.row(0), &[0.5, 0.25, 0.25]);
        let (t, fb) = wbc_closed_form(&[0.0, 0.0, 3.0, 1.0], 2, 2).unwrap();
        assert_eq!(fb, vec![0]);
        assert_eq!(t.row(0), &[0.5, 0.5]);
        assert!(matches!(wbc_closed_form(&[-1.0, 1.0], 1, 2), Err(LossError::NegativeWeight { .. })));
    }

    #[test]
    fn single_transition_maximizer_is_deterministic() {
        let (t, _) = wbc_closed_form(&[0.0, 3.7, 0.0], 1, 3).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn policy_shape_mismatch() {
        let t = LocalTables::zeros(TableShape::uniform(2, 3, 2));
        let pairs = toy_pairs();
        let trans: Vec<_> = pairs.iter().flat_map(|p| p.transitions()).collect();
        let p = SoftmaxPolicy::uniform(4, 2);
        assert!(matches!(
            wbc_loss(&t, &MixWeights::unit(2), &Hyper::default(), &p, &trans, 0),
            Err(LossError::PolicyShape { .. })
        ));
    }
}

//! Tabular local values and the linear, non-negative mixing layer.
//!
//! `Q_tot(o, a) = Σ_i w^q_i q_i(o_i, a_i) + b_q` and
//! `V_tot(o) = Σ_i w^v_i v_i(o_i) + b_v`, with weights that do not depend on
//! the observation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Transition;

/// Floor added after softplus so effective weights stay strictly positive.
pub const WEIGHT_EPS: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("expected {expected} agents, got {got}")]
    AgentCount { expected: usize, got: usize },
    #[error("agent {agent}: observation {obs} outside 0..{n_obs}")]
    ObsOutOfRange { agent: usize, obs: usize, n_obs: usize },
    #[error("agent {agent}: action {act} outside 0..{n_act}")]
    ActOutOfRange { agent: usize, act: usize, n_act: usize },
    #[error("target value table requested but not allocated")]
    NoTarget,
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
}

/// Temperature, discount and the exponent clip window for `e^{(Q−V)/β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub beta: f64,
    pub gamma: f64,
    pub exponent_clip: [f64; 2],
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            beta: 1.0,
            gamma: 0.99,
            exponent_clip: [-20.0, 10.0],
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.beta > 0.0) {
            return Err(ModelError::InvalidHyper(format!("beta {} must be > 0", self.beta)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ModelError::InvalidHyper(format!("gamma {} not in [0, 1)", self.gamma)));
        }
        if !(self.exponent_clip[0] < self.exponent_clip[1]) {
            return Err(ModelError::InvalidHyper("exponent_clip needs lo < hi".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableShape {
    pub n_obs: Vec<usize>,
    pub n_act: Vec<usize>,
}

impl TableShape {
    pub fn uniform(n_agents: usize, n_obs: usize, n_act: usize) -> Self {
        Self {
            n_obs: vec![n_obs; n_agents],
            n_act: vec![n_act; n_agents],
        }
    }

    pub fn n_agents(&self) -> usize {
        self.n_obs.len()
    }

    pub fn project(&self, agents: &[usize]) -> Self {
        Self {
            n_obs: agents.iter().map(|&i| self.n_obs[i]).collect(),
            n_act: agents.iter().map(|&i| self.n_act[i]).collect(),
        }
    }

    /// Range-checks every id in a transition.
    pub fn check(&self, t: &Transition) -> Result<(), ModelError> {
        let n = self.n_agents();
        for len in [t.obs.len(), t.act.len(), t.next_obs.len()] {
            if len != n {
                return Err(ModelError::AgentCount { expected: n, got: len });
            }
        }
        for agent in 0..n {
            for obs in [t.obs[agent], t.next_obs[agent]] {
                if obs >= self.n_obs[agent] {
                    return Err(ModelError::ObsOutOfRange {
                        agent,
                        obs,
                        n_obs: self.n_obs[agent],
                    });
                }
            }
            if t.act[agent] >= self.n_act[agent] {
                return Err(ModelError::ActOutOfRange {
                    agent,
                    act: t.act[agent],
                    n_act: self.n_act[agent],
                });
            }
        }
        Ok(())
    }
}

/// Local `q_i(o_i, a_i)` and `v_i(o_i)` tables, plus an optional slow copy of
/// `v` for target-network updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTables {
    pub shape: TableShape,
    /// `q[i][o * n_act[i] + a]`
    pub q: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub v_target: Option<Vec<Vec<f64>>>,
}

impl LocalTables {
    pub fn zeros(shape: TableShape) -> Self {
        let q = shape
            .n_obs
            .iter()
            .zip(&shape.n_act)
            .map(|(&o, &a)| vec![0.0; o * a])
            .collect();
        let v = shape.n_obs.iter().map(|&o| vec![0.0; o]).collect();
        Self {
            shape,
            q,
            v,
            v_target: None,
        }
    }

    pub fn with_target(mut self) -> Self {
        self.v_target = Some(self.v.clone());
        self
    }

    pub fn n_agents(&self) -> usize {
        self.shape.n_agents()
    }

    #[inline]
    pub fn q_at(&self, agent: usize, obs: usize, act: usize) -> f64 {
        self.q[agent][obs * self.shape.n_act[agent] + act]
    }

    #[inline]
    pub fn v_at(&self, agent: usize, obs: usize) -> f64 {
        self.v[agent][obs]
    }

    fn v_table(&self, use_target: bool) -> Result<&[Vec<f64>], ModelError> {
        if use_target {
            self.v_target.as_deref().ok_or(ModelError::NoTarget)
        } else {
            Ok(&self.v)
        }
    }

    pub fn all_finite(&self) -> bool {
        self.q.iter().chain(&self.v).flatten().all(|x| x.is_finite())
    }

    /// `v_target ← (1 − τ) v_target + τ v`.
    pub fn polyak_update(&mut self, tau: f64) -> Result<(), ModelError> {
        let target = self.v_target.as_mut().ok_or(ModelError::NoTarget)?;
        for (tgt, src) in target.iter_mut().zip(&self.v) {
            for (t, &s) in tgt.iter_mut().zip(src) {
                *t = (1.0 - tau) * *t + tau * s;
            }
        }
        Ok(())
    }
}

/// Effective mixing weights, the coordinates in which the preference loss is
/// linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixWeights {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub b_q: f64,
    pub b_v: f64,
}

impl MixWeights {
    /// Unit weights, zero biases: plain summation of local values.
    pub fn unit(n_agents: usize) -> Self {
        Self {
            q: vec![1.0; n_agents],
            v: vec![1.0; n_agents],
            b_q: 0.0,
            b_v: 0.0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.q.len()
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of `softplus(raw) + WEIGHT_EPS`; `w` must exceed `WEIGHT_EPS`.
pub fn raw_for_weight(w: f64) -> f64 {
    let y = w - WEIGHT_EPS;
    // softplus^{-1}(y) = y + ln(1 - e^{-y})
    y + (-(-y).exp()).ln_1p()
}

/// Unconstrained mixing parameters θ. Effective weights are
/// `softplus(raw) + WEIGHT_EPS`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingParams {
    pub raw_q: Vec<f64>,
    pub raw_v: Vec<f64>,
    pub b_q: f64,
    pub b_v: f64,
}

impl MixingParams {
    /// Raw values chosen so every effective weight is 1 (to round-off).
    pub fn unit(n_agents: usize) -> Self {
        let r = raw_for_weight(1.0);
        Self {
            raw_q: vec![r; n_agents],
            raw_v: vec![r; n_agents],
            b_q: 0.0,
            b_v: 0.0,
        }
    }

    pub fn from_weights(w: &MixWeights) -> Self {
        Self {
            raw_q: w.q.iter().map(|&x| raw_for_weight(x)).collect(),
            raw_v: w.v.iter().map(|&x| raw_for_weight(x)).collect(),
            b_q: w.b_q,
            b_v: w.b_v,
        }
    }

    pub fn effective(&self) -> MixWeights {
        MixWeights {
            q: self.raw_q.iter().map(|&r| softplus(r) + WEIGHT_EPS).collect(),
            v: self.raw_v.iter().map(|&r| softplus(r) + WEIGHT_EPS).collect(),
            b_q: self.b_q,
            b_v: self.b_v,
        }
    }

    /// Flat parameter vector `[raw_q.., raw_v.., b_q, b_v]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.raw_q.clone();
        out.extend(&self.raw_v);
        out.push(self.b_q);
        out.push(self.b_v);
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let n = self.raw_q.len();
        self.raw_q.copy_from_slice(&flat[..n]);
        self.raw_v.copy_from_slice(&flat[n..2 * n]);
        self.b_q = flat[2 * n];
        self.b_v = flat[2 * n + 1];
    }

    /// Chain rule from effective-weight gradients to the flat raw layout.
    pub fn backprop(&self, grad: &MixGrad) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .raw_q
            .iter()
            .zip(&grad.q)
            .map(|(&r, &g)| g * sigmoid(r))
            .collect();
        out.extend(self.raw_v.iter().zip(&grad.v).map(|(&r, &g)| g * sigmoid(r)));
        out.push(grad.b_q);
        out.push(grad.b_v);
        out
    }
}

/// Gradient with respect to effective mixing weights and biases.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixGrad {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub b_q: f64,
    pub b_v: f64,
}

impl MixGrad {
    pub fn zeros(n_agents: usize) -> Self {
        Self {
            q: vec![0.0; n_agents],
            v: vec![0.0; n_agents],
            b_q: 0.0,
            b_v: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (self.q.iter().chain(&self.v).map(|g| g * g).sum::<f64>()
            + self.b_q * self.b_q
            + self.b_v * self.b_v)
            .sqrt()
    }
}

fn check_ids(tables: &LocalTables, mix: &MixWeights, obs: &[usize], act: Option<&[usize]>) -> Result<(), ModelError> {
    let n = tables.n_agents();
    if mix.n_agents() != n {
        return Err(ModelError::AgentCount { expected: n, got: mix.n_agents() });
    }
    if obs.len() != n {
        return Err(ModelError::AgentCount { expected: n, got: obs.len() });
    }
    for (agent, &o) in obs.iter().enumerate() {
        if o >= tables.shape.n_obs[agent] {
            return Err(ModelError::ObsOutOfRange { agent, obs: o, n_obs: tables.shape.n_obs[agent] });
        }
    }
    if let Some(act) = act {
        if act.len() != n {
            return Err(ModelError::AgentCount { expected: n, got: act.len() });
        }
        for (agent, &a) in act.iter().enumerate() {
            if a >= tables.shape.n_act[agent] {
                return Err(ModelError::ActOutOfRange { agent, act: a, n_act: tables.shape.n_act[agent] });
            }
        }
    }
    Ok(())
}

pub fn q_tot(tables: &LocalTables, mix: &MixWeights, obs: &[usize], act: &[usize]) -> Result<f64, ModelError> {
    check_ids(tables, mix, obs, Some(act))?;
    Ok(q_tot_unchecked(tables, mix, obs, act))
}

pub fn v_tot(tables: &LocalTables, mix: &MixWeights, obs: &[usize]) -> Result<f64, ModelError> {
    check_ids(tables, mix, obs, None)?;
    Ok(v_tot_with(&tables.v, mix, obs))
}

#[inline]
pub(crate) fn q_tot_unchecked(tables: &LocalTables, mix: &MixWeights, obs: &[usize], act: &[usize]) -> f64 {
    let mut total = mix.b_q;
    for i in 0..obs.len() {
        total += mix.q[i] * tables.q_at(i, obs[i], act[i]);
    }
    total
}

#[inline]
pub(crate) fn v_tot_with(v: &[Vec<f64>], mix: &MixWeights, obs: &[usize]) -> f64 {
    let mut total = mix.b_v;
    for i in 0..obs.len() {
        total += mix.v[i] * v[i][obs[i]];
    }
    total
}

/// `R(o, a, o') = Q_tot(o, a) − γ V_tot(o')`, reading `v` from the target copy
/// when `use_target` is set.
pub fn implicit_reward(
    tables: &LocalTables,
    mix: &MixWeights,
    hyper: &Hyper,
    t: &Transition,
    use_target: bool,
) -> Result<f64, ModelError> {
    check_ids(tables, mix, &t.obs, Some(&t.act))?;
    check_ids(tables, mix, &t.next_obs, None)?;
    let v = tables.v_table(use_target)?;
    Ok(implicit_reward_unchecked(tables, v, mix, hyper.gamma, t))
}

#[inline]
pub(crate) fn implicit_reward_unchecked(
    tables: &LocalTables,
    v: &[Vec<f64>],
    mix: &MixWeights,
    gamma: f64,
    t: &Transition,
) -> f64 {
    q_tot_unchecked(tables, mix, &t.obs, &t.act) - gamma * v_tot_with(v, mix, &t.next_obs)
}

pub(crate) fn value_table(tables: &LocalTables, use_target: bool) -> Result<&[Vec<f64>], ModelError> {
    tables.v_table(use_target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_agent() -> LocalTables {
        LocalTables::zeros(TableShape::uniform(2, 3, 2))
    }

    #[test]
    fn zero_tables_give_zero() {
        let t = two_agent();
        let m = MixWeights::unit(2);
        assert_eq!(q_tot(&t, &m, &[0, 1], &[1, 0]).unwrap(), 0.0);
        assert_eq!(v_tot(&t, &m, &[2, 2]).unwrap(), 0.0);
        let tr = Transition { obs: vec![0, 1], act: vec![1, 1], next_obs: vec![2, 0] };
        assert_eq!(implicit_reward(&t, &m, &Hyper::default(), &tr, false).unwrap(), 0.0);
    }

    #[test]
    fn linear_mixing_arithmetic() {
        let mut t = two_agent();
        t.q[0][0] = 1.0;
        t.q[1][0] = 2.0;
        let m = MixWeights::unit(2);
        assert_eq!(q_tot(&t, &m, &[0, 0], &[0, 0]).unwrap(), 3.0);
        let doubled = MixWeights { q: vec![2.0, 2.0], ..m.clone() };
        assert_eq!(q_tot(&t, &doubled, &[0, 0], &[0, 0]).unwrap(), 6.0);

        t.v[0][1] = -1.0;
        t.v[1][1] = 1.0;
        let wv = MixWeights { v: vec![2.0, 2.0], b_v: 1.0, ..m };
        assert_eq!(v_tot(&t, &wv, &[1, 1]).unwrap(), 1.0);
    }

    #[test]
    fn v_tot_commutes_with_agent_permutation() {
        let mut t = two_agent();
        t.v[0] = vec![0.3, -1.2, 2.0];
        t.v[1] = vec![1.1, 0.4, -0.7];
        let m = MixWeights { q: vec![1.0, 1.0], v: vec![0.5, 3.0], b_q: 0.0, b_v: 0.2 };
        let mut swapped = t.clone();
        swapped.v.swap(0, 1);
        let ms = MixWeights { v: vec![3.0, 0.5], ..m.clone() };
        assert_eq!(v_tot(&t, &m, &[2, 0]).unwrap(), v_tot(&swapped, &ms, &[0, 2]).unwrap());
    }

    #[test]
    fn implicit_reward_arithmetic() {
        let mut t = LocalTables::zeros(TableShape::uniform(1, 2, 1));
        t.q[0][0] = 1.0;
        t.v[0][1] = 1.0;
        let m = MixWeights::unit(1);
        let tr = Transition { obs: vec![0], act: vec![0], next_obs: vec![1] };
        let h = Hyper { gamma: 0.99, ..Hyper::default() };
        assert!((implicit_reward(&t, &m, &h, &tr, false).unwrap() - 0.01).abs() < 1e-15);
        let h0 = Hyper { gamma: 0.0, ..h };
        assert_eq!(implicit_reward(&t, &m, &h0, &tr, false).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_ids_error() {
        let t = two_agent();
        let m = MixWeights::unit(2);
        assert!(matches!(q_tot(&t, &m, &[3, 0], &[0, 0]), Err(ModelError::ObsOutOfRange { agent: 0, .. })));
        assert!(matches!(q_tot(&t, &m, &[0, 0], &[0, 2]), Err(ModelError::ActOutOfRange { agent: 1, .. })));
        assert!(matches!(v_tot(&t, &m, &[0]), Err(ModelError::AgentCount { .. })));
        let tr = Transition { obs: vec![0, 0], act: vec![0, 0], next_obs: vec![0, 0] };
        assert_eq!(implicit_reward(&t, &m, &Hyper::default(), &tr, true), Err(ModelError::NoTarget));
    }

    #[test]
    fn polyak_rates() {
        let mut t = LocalTables::zeros(TableShape::uniform(1, 2, 1)).with_target();
        t.v[0] = vec![1.0, 1.0];
        t.polyak_update(0.005).unwrap();
        assert_eq!(t.v_target.as_ref().unwrap()[0], vec![0.005, 0.005]);
        t.polyak_update(0.0).unwrap();
        assert_eq!(t.v_target.as_ref().unwrap()[0], vec![0.005, 0.005]);
        t.polyak_update(1.0).unwrap();
        assert_eq!(t.v_target.as_ref().unwrap()[0], t.v[0]);
        let mut bare = LocalTables::zeros(TableShape::uniform(1, 2, 1));
        assert_eq!(bare.polyak_update(0.5), Err(ModelError::NoTarget));
    }

    #[test]
    fn unit_params_are_unit_weights() {
        let w = MixingParams::unit(3).effective();
        for x in w.q.iter().chain(&w.v) {
            assert!((x - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn backprop_matches_finite_difference() {
        let p = MixingParams { raw_q: vec![-0.7, 1.3], raw_v: vec![0.2, -2.0], b_q: 0.1, b_v: -0.3 };
        // f(θ) = Σ c_k · w_k + b_q − 2 b_v
        let c = [0.5, -1.5, 2.0, 0.25];
        let f = |p: &MixingParams| {
            let w = p.effective();
            c[0] * w.q[0] + c[1] * w.q[1] + c[2] * w.v[0] + c[3] * w.v[1] + w.b_q - 2.0 * w.b_v
        };
        let g = MixGrad { q: vec![c[0], c[1]], v: vec![c[2], c[3]], b_q: 1.0, b_v: -2.0 };
        let analytic = p.backprop(&g);
        let flat = p.to_flat();
        for k in 0..flat.len() {
            let h = 1e-6;
            let (mut plus, mut minus) = (p.clone(), p.clone());
            let mut fp = flat.clone();
            fp[k] += h;
            plus.set_flat(&fp);
            let mut fm = flat.clone();
            fm[k] -= h;
            minus.set_flat(&fm);
            let numeric = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((numeric - analytic[k]).abs() < 1e-8, "k={k}");
        }
    }

    proptest! {
        #[test]
        fn effective_weights_positive(raw in -800.0f64..800.0) {
            let p = MixingParams { raw_q: vec![raw], raw_v: vec![raw], b_q: 0.0, b_v: 0.0 };
            let w = p.effective();
            prop_assert!(w.q[0] > 0.0 && w.q[0].is_finite());
        }

        #[test]
        fn q_tot_affine_in_tables(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            lambda in 0.0f64..1.0,
        ) {
            let mut ta = two_agent();
            let mut tb = two_agent();
            ta.q = vec![a[..6].to_vec(), a.iter().rev().cloned().collect()];
            tb.q = vec![b[..6].to_vec(), b.iter().rev().cloned().collect()];
            let mut tm = two_agent();
            for i in 0..2 {
                tm.q[i] = ta.q[i].iter().zip(&tb.q[i]).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            }
            let m = MixWeights { q: vec![0.7, 1.9], v: vec![1.0, 1.0], b_q: 0.3, b_v: 0.0 };
            let (obs, act) = ([2, 1], [1, 0]);
            let lhs = q_tot(&tm, &m, &obs, &act).unwrap();
            let rhs = lambda * q_tot(&ta, &m, &obs, &act).unwrap() + (1.0 - lambda) * q_tot(&tb, &m, &obs, &act).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn implicit_reward_affine_in_params(
            qa in prop::collection::vec(-3.0f64..3.0, 2),
            qb in prop::collection::vec(-3.0f64..3.0, 2),
            va in prop::collection::vec(-3.0f64..3.0, 2),
            vb in prop::collection::vec(-3.0f64..3.0, 2),
            lambda in 0.0f64..1.0,
        ) {
            let shape = TableShape::uniform(1, 2, 1);
            let build = |q: &[f64], v: &[f64]| LocalTables { shape: shape.clone(), q: vec![q.to_vec()], v: vec![v.to_vec()], v_target: None };
            let mix = MixWeights { q: vec![1.3], v: vec![0.6], b_q: 0.1, b_v: -0.2 };
            let h = Hyper::default();
            let tr = Transition { obs: vec![0], act: vec![0], next_obs: vec![1] };
            let mid_q: Vec<f64> = qa.iter().zip(&qb).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let mid_v: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect();
            let r = |q: &[f64], v: &[f64]| implicit_reward(&build(q, v), &mix, &h, &tr, false).unwrap();
            let lhs = r(&mid_q, &mid_v);
            let rhs = lambda * r(&qa, &va) + (1.0 - lambda) * r(&qb, &vb);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}

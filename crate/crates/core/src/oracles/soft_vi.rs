use super::OracleError;
use crate::env::MicroEnumeration;
use crate::factorization::Hyper;

/// Stop when the sup-norm change of `Q` falls below this.
pub const VI_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 1_000_000;

/// Soft-optimal values and policy of the KL-regularized problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftVi {
    /// `[s * |A| + a]`
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    /// `μ_tot(a|s) e^{(Q − V)/β}`, `[s * |A| + a]`
    pub policy: Vec<f64>,
    pub sweeps: usize,
}

/// `β log Σ_a μ(a|s) e^{Q(s, a)/β}` for one state row, skipping zero-mass actions.
pub fn soft_value(mu_row: &[f64], q_row: &[f64], beta: f64) -> f64 {
    let m = mu_row
        .iter()
        .zip(q_row)
        .filter(|(&p, _)| p > 0.0)
        .map(|(_, &q)| q / beta)
        .fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = mu_row.iter().zip(q_row).filter(|(&p, _)| p > 0.0).map(|(&p, &q)| p * (q / beta - m).exp()).sum();
    beta * (m + s.ln())
}

/// Iterates `Q ← r + γ E_{s'}[V]`, `V(s) ← β log Σ_a μ_tot e^{Q/β}` to its
/// fixed point. `reward` is indexed `[s * |A| + a]`.
pub fn soft_value_iteration(en: &MicroEnumeration, reward: &[f64], hyper: &Hyper) -> Result<SoftVi, OracleError> {
    hyper.validate()?;
    let (ns, na) = (en.n_states(), en.n_actions());
    if reward.len() != ns * na {
        return Err(OracleError::Invalid(format!("reward has {} entries, expected {}", reward.len(), ns * na)));
    }
    if !(hyper.gamma < 1.0) {
        return Err(OracleError::Invalid("soft value iteration needs gamma < 1".into()));
    }
    let mut q = vec![0.0; ns * na];
    let mut v = vec![0.0; ns];
    for sweep in 1..=MAX_SWEEPS {
        for s in 0..ns {
            v[s] = soft_value(&en.mu_tot[s * na..(s + 1) * na], &q[s * na..(s + 1) * na], hyper.beta);
        }
        let mut change = 0.0f64;
        for sa in 0..ns * na {
            let expected: f64 = (0..ns).map(|s2| en.transition[sa * ns + s2] * v[s2]).sum();
            let next = reward[sa] + hyper.gamma * expected;
            change = change.max((next - q[sa]).abs());
            q[sa] = next;
        }
        if change < VI_TOL {
            for s in 0..ns {
                v[s] = soft_value(&en.mu_tot[s * na..(s + 1) * na], &q[s * na..(s + 1) * na], hyper.beta);
            }
            let policy = (0..ns * na)
                .map(|sa| en.mu_tot[sa] * ((q[sa] - v[sa / na]) / hyper.beta).exp())
                .collect();
            return Ok(SoftVi { q, v, policy, sweeps: sweep });
        }
    }
    Err(OracleError::NonConvergence(MAX_SWEEPS))
}

impl SoftVi {
    /// Largest `|Q(s, a) − γ E_{s'}[V(s')] − r(s, a)|`.
    pub fn inverse_residual(&self, en: &MicroEnumeration, reward: &[f64], gamma: f64) -> f64 {
        let ns = en.n_states();
        (0..reward.len())
            .map(|sa| {
                let expected: f64 = (0..ns).map(|s2| en.transition[sa * ns + s2] * self.v[s2]).sum();
                (self.q[sa] - gamma * expected - reward[sa]).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|V(s) − β log Σ_a μ_tot e^{Q/β}|`.
    pub fn value_residual(&self, en: &MicroEnumeration, beta: f64) -> f64 {
        let na = en.n_actions();
        (0..en.n_states())
            .map(|s| (self.v[s] - soft_value(&en.mu_tot[s * na..(s + 1) * na], &self.q[s * na..(s + 1) * na], beta)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{enumerate_micro, BehaviorTier, EnvSpec, Tier, DEFAULT_ENUMERATION_CAP};

    fn micro() -> MicroEnumeration {
        let spec = EnvSpec::micro(2, 3);
        enumerate_micro(&spec, &BehaviorTier::new(&spec, Tier::Medium), DEFAULT_ENUMERATION_CAP).unwrap()
    }

    #[test]
    fn zero_reward_is_a_fixed_point() {
        let en = micro();
        let vi = soft_value_iteration(&en, &vec![0.0; en.mu_tot.len()], &Hyper::default()).unwrap();
        assert!(vi.q.iter().chain(&vi.v).all(|&x| x.abs() < 1e-15));
        for (p, mu) in vi.policy.iter().zip(&en.mu_tot) {
            assert!((p - mu).abs() < 1e-15);
        }
    }

    #[test]
    fn round_trip_recovers_reward() {
        let en = micro();
        let hyper = Hyper::default();
        let vi = soft_value_iteration(&en, &en.reward, &hyper).unwrap();
        assert!(vi.inverse_residual(&en, &en.reward, hyper.gamma) <= 1e-8);
        assert!(vi.value_residual(&en, hyper.beta) < 1e-12);
        let na = en.n_actions();
        for s in 0..en.n_states() {
            assert!((vi.policy[s * na..(s + 1) * na].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_undiscounted() {
        let en = micro();
        let hyper = Hyper { gamma: 1.0, ..Hyper::default() };
        assert!(soft_value_iteration(&en, &en.reward, &hyper).is_err());
    }
}

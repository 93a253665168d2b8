use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::convexity::probe_dataset;
use super::OracleError;
use crate::dataset::{PreferencePair, Transition};
use crate::factorization::{Hyper, LocalTables, MixingParams, TableShape};
use crate::losses::{extreme_v_loss, pref_loss, wbc_loss};
use crate::policy::SoftmaxPolicy;

/// Pass threshold on `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub const GRAD_REL_TOL: f64 = 1e-6;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradTarget {
    /// `L` with respect to the q tables and the raw mixing parameters.
    Pref,
    /// `J` with respect to the v tables.
    ExtremeV,
    /// `Ψ` of agent 0 with respect to its logits.
    Wbc,
}

impl GradTarget {
    pub const ALL: [GradTarget; 3] = [Self::Pref, Self::ExtremeV, Self::Wbc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Pref => "gradient_pref",
            Self::ExtremeV => "gradient_extreme_v",
            Self::Wbc => "gradient_wbc",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub n_points: usize,
    pub n_coords: usize,
    pub max_rel_err: f64,
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / 1f64.max(a.abs()).max(n.abs())
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` against the analytic
/// gradient at random points on a fixed micro-instance dataset.
pub fn gradcheck(target: GradTarget, n_points: usize, seed: u64) -> Result<GradcheckReport, OracleError> {
    let pairs = probe_dataset();
    let pair_refs: Vec<&PreferencePair> = pairs.iter().collect();
    let transitions: Vec<&Transition> = pairs.iter().flat_map(|p| p.transitions()).collect();
    let shape = TableShape::uniform(2, 3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut coords) = (0.0f64, 0);

    for _ in 0..n_points {
        let hyper = Hyper { beta: rng.random_range(0.5..2.0), gamma: 0.99, ..Hyper::default() };
        let mut tables = LocalTables::zeros(shape.clone());
        for row in tables.q.iter_mut().chain(tables.v.iter_mut()) {
            row.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        }
        let mut mixing = MixingParams::unit(2);
        let mut flat = mixing.to_flat();
        flat.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        mixing.set_flat(&flat);

        // Each entry: analytic derivative and a closure evaluating f at an offset.
        let mut check = |analytic: f64, f: &dyn Fn(f64) -> Result<f64, OracleError>| -> Result<(), OracleError> {
            let numeric = (f(STEP)? - f(-STEP)?) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic, numeric));
            coords += 1;
            Ok(())
        };

        match target {
            GradTarget::Pref => {
                let mix = mixing.effective();
                let (_, grad) = pref_loss(&tables, &mix, &hyper, &pair_refs, false)?;
                for i in 0..2 {
                    for k in 0..tables.q[i].len() {
                        check(grad.q[i][k], &|h| {
                            let mut t = tables.clone();
                            t.q[i][k] += h;
                            Ok(pref_loss(&t, &mix, &hyper, &pair_refs, false)?.0.value)
                        })?;
                    }
                }
                let raw_grad = mixing.backprop(&grad.mix);
                for k in 0..flat.len() {
                    check(raw_grad[k], &|h| {
                        let mut m = mixing.clone();
                        let mut x = flat.clone();
                        x[k] += h;
                        m.set_flat(&x);
                        Ok(pref_loss(&tables, &m.effective(), &hyper, &pair_refs, false)?.0.value)
                    })?;
                }
            }
            GradTarget::ExtremeV => {
                let mix = mixing.effective();
                let (_, grad) = extreme_v_loss(&tables, &mix, &hyper, &transitions)?;
                for i in 0..2 {
                    for k in 0..tables.v[i].len() {
                        check(grad[i][k], &|h| {
                            let mut t = tables.clone();
                            t.v[i][k] += h;
                            Ok(extreme_v_loss(&t, &mix, &hyper, &transitions)?.0.value)
                        })?;
                    }
                }
            }
            GradTarget::Wbc => {
                let mix = mixing.effective();
                let mut policy = SoftmaxPolicy::uniform(3, 3);
                policy.logits.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
                let (_, grad) = wbc_loss(&tables, &mix, &hyper, &policy, &transitions, 0)?;
                for k in 0..policy.logits.len() {
                    check(grad[k], &|h| {
                        let mut p = policy.clone();
                        p.logits[k] += h;
                        Ok(wbc_loss(&tables, &mix, &hyper, &p, &transitions, 0)?.0.value)
                    })?;
                }
            }
        }
    }
    Ok(GradcheckReport { n_points, n_coords: coords, max_rel_err: worst })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_gradients_match() {
        for target in GradTarget::ALL {
            let r = gradcheck(target, 5, 11).unwrap();
            assert!(r.max_rel_err < GRAD_REL_TOL, "{target:?}: {}", r.max_rel_err);
            assert!(r.n_coords > 0);
        }
    }
}

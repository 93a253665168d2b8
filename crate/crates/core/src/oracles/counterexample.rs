use serde::{Deserialize, Serialize};

use super::ddouble::DD;
use super::{OracleError, ORACLE_TOL};

pub const GRID_LO: f64 = -4.0;
pub const GRID_HI: f64 = 0.0;
/// Dyadic grid spacing, so grid points and midpoints are exact in `f64`.
const GRID_STEP: f64 = 1.0 / 64.0;

/// `f(t) = e^{1 − e^t} + e^t − 1`, a one-dimensional restriction of `J` that
/// is not convex once values pass through a non-linear layer.
pub fn scalar_f(t: f64) -> f64 {
    let u = t.exp();
    (1.0 - u).exp() + u - 1.0
}

fn scalar_f_dd(t: f64) -> DD {
    let u = DD::from_f64(t).exp();
    (DD::ONE - u).exp() + u - DD::ONE
}

/// Points `t₁ < t₂` with `f((t₁+t₂)/2) − (f(t₁)+f(t₂))/2 > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub t1: f64,
    pub t2: f64,
    /// Midpoint excess in `f64`.
    pub gap: f64,
    /// The same excess recomputed in double-double arithmetic.
    pub gap_recheck: f64,
}

/// Grid search over `[GRID_LO, GRID_HI]` for the pair with the largest
/// midpoint excess; fails unless it exceeds the tolerance in both precisions.
pub fn nonconvex_counterexample() -> Result<Witness, OracleError> {
    let n = ((GRID_HI - GRID_LO) / GRID_STEP) as usize;
    let grid: Vec<f64> = (0..=n).map(|k| GRID_LO + k as f64 * GRID_STEP).collect();
    let values: Vec<f64> = grid.iter().map(|&t| scalar_f(t)).collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for j in 0..grid.len() {
        for k in (j + 2..grid.len()).step_by(2) {
            let m = (j + k) / 2;
            let gap = values[m] - 0.5 * (values[j] + values[k]);
            if best.is_none_or(|(_, _, g)| gap > g) {
                best = Some((j, k, gap));
            }
        }
    }
    let (j, k, gap) = best.ok_or(OracleError::NoWitness)?;
    let (t1, t2) = (grid[j], grid[k]);
    let mid = 0.5 * (t1 + t2);
    let gap_recheck = (scalar_f_dd(mid) - (scalar_f_dd(t1) + scalar_f_dd(t2)).div_f64(2.0)).to_f64();
    if gap <= ORACLE_TOL || gap_recheck <= ORACLE_TOL {
        return Err(OracleError::NoWitness);
    }
    Ok(Witness { t1, t2, gap, gap_recheck })
}

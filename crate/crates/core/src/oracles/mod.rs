//! Exact verifiers on enumerable instances: local policy extraction, the
//! global-local consistency of WBC, convexity probes, a scalar non-convexity
//! witness, soft value iteration, and finite-difference gradient checks.

mod convexity;
mod counterexample;
pub mod ddouble;
mod gradcheck;
mod micro;
mod soft_vi;
mod verify;

use thiserror::Error;

pub use convexity::{probe_convexity, ConvexityTarget, ProbeConfig, ProbeReport, CONVEXITY_TOL};
pub use counterexample::{nonconvex_counterexample, scalar_f, Witness, GRID_LO, GRID_HI};
pub use gradcheck::{gradcheck, GradTarget, GradcheckReport, GRAD_REL_TOL};
pub use micro::{
    check_glc, check_value_identity, closed_form_policy, empirical_discrepancy, eta_delta, glc_objective, naive_local_policy,
    uniform_state_maximizer, GlcReport, MicroModel, NaiveRows, ValueIdentityReport,
};
pub use soft_vi::{soft_value, soft_value_iteration, SoftVi, VI_TOL};
pub use verify::{run_verify, CheckResult, Fault, VerifyOptions};

use crate::env::EnvError;
use crate::factorization::ModelError;
use crate::losses::LossError;

/// Absolute tolerance for enumeration identities.
pub const ORACLE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("enumeration needs {needed} entries, cap is {cap}")]
    EnumerationCap { needed: usize, cap: usize },
    #[error("no convexity witness found on the grid")]
    NoWitness,
    #[error("value iteration did not converge in {0} sweeps")]
    NonConvergence(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::dataset::{make_pairs, Labeler, PreferencePair, Transition};
use crate::env::{rollout, BehaviorTier, EnvSpec, Tier};
use crate::factorization::{Hyper, LocalTables, MixWeights, TableShape};
use crate::losses::{extreme_v_loss, pref_loss};

/// Interpolation checks pass when the gap stays within this multiple of
/// `max(1, |f(x₁)|, |f(x₂)|)`.
pub const CONVEXITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityTarget {
    /// `L` is concave in the local q tables.
    PrefInQ,
    /// `L` is concave in the effective mixing weights and biases.
    PrefInWeights,
    /// `J` is convex in the local v tables.
    ExtremeVInV,
}

impl ConvexityTarget {
    pub const ALL: [ConvexityTarget; 3] = [Self::PrefInQ, Self::PrefInWeights, Self::ExtremeVInV];

    pub fn name(self) -> &'static str {
        match self {
            Self::PrefInQ => "concave_pref_in_q",
            Self::PrefInWeights => "concave_pref_in_weights",
            Self::ExtremeVInV => "convex_extreme_v_in_v",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub n_probes: usize,
    pub seed: u64,
    /// Fixed interpolation weight; drawn uniformly from (0, 1) when absent.
    pub lambda: Option<f64>,
    /// Test the reversed inequality (harness self-check).
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub n_probes: usize,
    pub violations: usize,
    /// Largest normalized excess over the checked inequality.
    pub max_excess: f64,
}

pub(super) fn probe_dataset() -> Vec<PreferencePair> {
    let spec = EnvSpec::micro(2, 3);
    let tiers: Vec<BehaviorTier> = Tier::ALL.iter().map(|&t| BehaviorTier::new(&spec, t)).collect();
    let pool: Vec<_> = (0..30).map(|k| rollout(&spec, &tiers[k % 3], 7_000 + k as u64)).collect();
    make_pairs(&pool, 12, Labeler::Deterministic, 0)
        .expect("tiered rollouts give enough distinct returns")
        .iter()
        .map(PreferencePair::stripped)
        .collect()
}

fn random_tables<R: Rng>(shape: &TableShape, rng: &mut R) -> LocalTables {
    let mut t = LocalTables::zeros(shape.clone());
    for row in t.q.iter_mut().chain(t.v.iter_mut()) {
        row.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    }
    t
}

fn random_mix<R: Rng>(n: usize, rng: &mut R) -> MixWeights {
    MixWeights {
        q: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
        v: (0..n).map(|_| rng.random_range(0.1..2.0)).collect(),
        b_q: rng.random_range(-1.0..1.0),
        b_v: rng.random_range(-1.0..1.0),
    }
}

fn lerp(a: &[f64], b: &[f64], lambda: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| lambda * x + (1.0 - lambda) * y).collect()
}

fn lerp_rows(a: &[Vec<f64>], b: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    a.iter().zip(b).map(|(x, y)| lerp(x, y, lambda)).collect()
}

fn lerp_mix(a: &MixWeights, b: &MixWeights, lambda: f64) -> MixWeights {
    MixWeights {
        q: lerp(&a.q, &b.q, lambda),
        v: lerp(&a.v, &b.v, lambda),
        b_q: lambda * a.b_q + (1.0 - lambda) * b.b_q,
        b_v: lambda * a.b_v + (1.0 - lambda) * b.b_v,
    }
}

/// Interpolation checks of the losses along random segments on a fixed
/// micro-instance dataset. A probe is a violation when
/// `λf(x₁) + (1−λ)f(x₂)` lies on the wrong side of `f(λx₁ + (1−λ)x₂)` by more
/// than the tolerance.
pub fn probe_convexity(target: ConvexityTarget, cfg: ProbeConfig) -> Result<ProbeReport, OracleError> {
    let pairs = probe_dataset();
    let pair_refs: Vec<&PreferencePair> = pairs.iter().collect();
    let transitions: Vec<&Transition> = pairs.iter().flat_map(|p| p.transitions()).collect();
    let shape = TableShape::uniform(2, 3, 3);
    let hyper = Hyper::default();
    let pref = |t: &LocalTables, m: &MixWeights| -> Result<f64, OracleError> { Ok(pref_loss(t, m, &hyper, &pair_refs, false)?.0.value) };
    let ev = |t: &LocalTables, m: &MixWeights| -> Result<f64, OracleError> { Ok(extreme_v_loss(t, m, &hyper, &transitions)?.0.value) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut violations, mut max_excess) = (0, f64::NEG_INFINITY);
    for _ in 0..cfg.n_probes {
        let lambda = cfg.lambda.unwrap_or_else(|| rng.random::<f64>());
        let base = random_tables(&shape, &mut rng);
        let mix = random_mix(2, &mut rng);
        let (f1, f2, fm, concave) = match target {
            ConvexityTarget::PrefInQ => {
                let (a, b) = (random_tables(&shape, &mut rng), random_tables(&shape, &mut rng));
                let mid = LocalTables { q: lerp_rows(&a.q, &b.q, lambda), ..base.clone() };
                let a = LocalTables { q: a.q, ..base.clone() };
                let b = LocalTables { q: b.q, ..base.clone() };
                (pref(&a, &mix)?, pref(&b, &mix)?, pref(&mid, &mix)?, true)
            }
            ConvexityTarget::PrefInWeights => {
                let (a, b) = (random_mix(2, &mut rng), random_mix(2, &mut rng));
                let mid = lerp_mix(&a, &b, lambda);
                (pref(&base, &a)?, pref(&base, &b)?, pref(&base, &mid)?, true)
            }
            ConvexityTarget::ExtremeVInV => {
                let (a, b) = (random_tables(&shape, &mut rng), random_tables(&shape, &mut rng));
                let mid = LocalTables { v: lerp_rows(&a.v, &b.v, lambda), ..base.clone() };
                let a = LocalTables { v: a.v, ..base.clone() };
                let b = LocalTables { v: b.v, ..base.clone() };
                (ev(&a, &mix)?, ev(&b, &mix)?, ev(&mid, &mix)?, false)
            }
        };
        let chord = lambda * f1 + (1.0 - lambda) * f2;
        // Positive when the expected inequality fails.
        let mut excess = if concave { chord - fm } else { fm - chord };
        if cfg.flipped {
            excess = -excess;
        }
        let scaled = excess / f1.abs().max(f2.abs()).max(1.0);
        max_excess = max_excess.max(scaled);
        if scaled > CONVEXITY_TOL {
            violations += 1;
        }
    }
    Ok(ProbeReport { n_probes: cfg.n_probes, violations, max_excess })
}

use std::collections::BTreeMap;

use anyhow::Result;
use omapl::dataset::{make_pairs, PreferencePair, Trajectory};
use omapl::env::{rollout, BehaviorTier, Tier};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;

/// Mixed into the run seed for the held-out split.
pub const HELDOUT_SALT: u64 = 0x5e_ed0f_f5e7;

/// Tiered rollouts in tier order; rollout seeds come from a stream keyed on
/// `seed`.
pub fn trajectory_pool(cfg: &RunConfig, n: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = Vec::with_capacity(n);
    for (tier, count) in cfg.tiers.counts(n) {
        let behavior = BehaviorTier::new(&cfg.env, tier);
        for _ in 0..count {
            pool.push(rollout(&cfg.env, &behavior, rng.random()));
        }
    }
    pool
}

pub fn training_pairs(cfg: &RunConfig) -> Result<Vec<PreferencePair>> {
    let pool = trajectory_pool(cfg, cfg.n_trajectories, cfg.seed);
    Ok(make_pairs(&pool, cfg.n_pairs, cfg.labeler, cfg.seed)?)
}

/// Pairs drawn from a separate pool, never seen in training.
pub fn heldout_pairs(cfg: &RunConfig) -> Result<Vec<PreferencePair>> {
    if cfg.heldout_pairs == 0 {
        return Ok(Vec::new());
    }
    let seed = cfg.seed ^ HELDOUT_SALT;
    let pool = trajectory_pool(cfg, cfg.heldout_trajectories.max(2), seed);
    Ok(make_pairs(&pool, cfg.heldout_pairs, cfg.labeler, seed)?)
}

/// Occurrences of each tier among all trajectories referenced by the pairs,
/// split by preferred / non-preferred side.
pub fn tier_histogram(pairs: &[PreferencePair]) -> BTreeMap<String, (usize, usize)> {
    let mut h: BTreeMap<String, (usize, usize)> = Tier::ALL.iter().map(|t| (t.name().to_string(), (0, 0))).collect();
    for p in pairs {
        h.entry(p.sigma_plus.tier.clone()).or_default().0 += 1;
        h.entry(p.sigma_minus.tier.clone()).or_default().1 += 1;
    }
    h
}

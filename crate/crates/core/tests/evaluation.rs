use omapl::env::{rollout, BehaviorTier, EnvSpec, Tier};
use omapl::policy::PolicyTable;
use omapl::trainer::{evaluate, mean_std};

fn tier_returns(spec: &EnvSpec, tier: Tier, n: u64) -> Vec<f64> {
    let b = BehaviorTier::new(spec, tier);
    (0..n).map(|s| rollout(spec, &b, 50_000 + s).hidden_return().unwrap()).collect()
}

/// Deterministic policy stepping to the neighbor closest to the goal.
fn goal_seeking(spec: &EnvSpec, agent: usize) -> PolicyTable {
    let n_act = spec.n_actions();
    let mut probs = vec![0.0; spec.n_cells() * n_act];
    for o in 0..spec.n_cells() {
        let best = (0..n_act)
            .min_by_key(|&a| spec.manhattan(spec.move_cell(o, a), spec.goal_cells[agent]))
            .unwrap();
        probs[o * n_act + best] = 1.0;
    }
    PolicyTable { n_obs: spec.n_cells(), n_act, probs }
}

#[test]
fn tiers_are_ordered_by_return() {
    let spec = EnvSpec::gridworld_4x4();
    let (poor, _) = mean_std(&tier_returns(&spec, Tier::Poor, 500));
    let (medium, _) = mean_std(&tier_returns(&spec, Tier::Medium, 500));
    let (expert, _) = mean_std(&tier_returns(&spec, Tier::Expert, 500));
    assert!(poor < medium && medium < expert, "{poor} {medium} {expert}");
}

#[test]
fn uniform_policies_match_poor_tier() {
    let spec = EnvSpec::gridworld_4x4();
    let uniform = vec![PolicyTable::uniform(16, 5); 2];
    let eval = evaluate(&uniform, &spec, 2000, 1, false).unwrap();
    let (poor, poor_sd) = mean_std(&tier_returns(&spec, Tier::Poor, 2000));
    // Both are means of 2000 draws from the same distribution.
    let band = 4.0 * poor_sd * (2.0f64 / 2000.0).sqrt();
    assert!((eval.mean_return - poor).abs() < band, "{} vs {poor} ± {band}", eval.mean_return);
}

#[test]
fn goal_seeking_policy_attains_the_maximum() {
    let spec = EnvSpec::gridworld_4x4();
    let policies: Vec<PolicyTable> = (0..2).map(|i| goal_seeking(&spec, i)).collect();
    let eval = evaluate(&policies, &spec, 5, 3, false).unwrap();
    // Both agents need 6 moves; from the 6th transition on every step pays +1.
    let arrive = 5;
    let expected: f64 = (0..spec.horizon)
        .map(|t| spec.gamma.powi(t as i32) * if t >= arrive { 1.0 } else { -0.01 })
        .sum();
    for r in &eval.returns {
        assert!((r - expected).abs() < 1e-12, "{r} vs {expected}");
    }
    assert_eq!(eval.std_return, 0.0);
}

#[test]
fn sampled_and_greedy_agree_for_deterministic_policies() {
    let spec = EnvSpec::gridworld_4x4();
    let policies: Vec<PolicyTable> = (0..2).map(|i| goal_seeking(&spec, i)).collect();
    let a = evaluate(&policies, &spec, 10, 9, false).unwrap();
    let b = evaluate(&policies, &spec, 10, 9, true).unwrap();
    assert_eq!(a, b);
}

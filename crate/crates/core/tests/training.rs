use omapl::dataset::{make_pairs, Labeler, PreferencePair, Trajectory, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use omapl::env::{rollout, BehaviorTier, EnvSpec, Tier};
use omapl::trainer::{reward_separation, train, EvalContext, Method, Mixing, TrainConfig};
use omapl::{PolicyTable, TableShape};

fn pool_pairs(spec: &EnvSpec, tiers: &[Tier], n_traj: usize, n_pairs: usize, seed: u64) -> Vec<PreferencePair> {
    let pool: Vec<_> = tiers
        .iter()
        .cycle()
        .take(n_traj)
        .enumerate()
        .map(|(k, &t)| rollout(spec, &BehaviorTier::new(spec, t), seed * 100_000 + k as u64))
        .collect();
    make_pairs(&pool, n_pairs, Labeler::Deterministic, seed).unwrap()
}

fn micro() -> (EnvSpec, TableShape) {
    let spec = EnvSpec::micro(2, 3);
    let shape = TableShape::uniform(2, spec.n_cells(), spec.n_actions());
    (spec, shape)
}

fn cfg(method: Method, steps: usize) -> TrainConfig {
    TrainConfig { method, steps, lr: 1e-2, eval_interval: steps, eval_episodes: 10, ..TrainConfig::default() }
}

#[test]
fn preference_methods_improve_their_objective() {
    let (spec, shape) = micro();
    let pairs = pool_pairs(&spec, &Tier::ALL, 120, 500, 1);
    for m in [Method::Omapl, Method::Iipl, Method::IplVdn] {
        let out = train(&cfg(m, 1000), &pairs, &shape, EvalContext::default()).unwrap();
        let first = out.metrics.first().unwrap().loss_pref.unwrap();
        let last = out.metrics.last().unwrap().loss_pref.unwrap();
        assert!(-last < -first, "{m}: {first} -> {last}");
        let jf = out.metrics.first().unwrap().loss_extreme_v.unwrap();
        let jl = out.metrics.last().unwrap().loss_extreme_v.unwrap();
        assert!(jl.is_finite() && jf.is_finite());
    }
}

#[test]
fn recovered_reward_ranks_heldout_pairs() {
    let (spec, shape) = micro();
    let pairs = pool_pairs(&spec, &Tier::ALL, 120, 500, 2);
    let heldout = pool_pairs(&spec, &Tier::ALL, 120, 200, 3);
    let c = cfg(Method::Omapl, 2000);
    let out = train(&c, &pairs, &shape, EvalContext::default()).unwrap();
    let sep = reward_separation(&out.heads, &c.hyper(), &heldout).unwrap();
    assert!(sep.mean_plus > sep.mean_minus, "{sep:?}");
    assert!(sep.accuracy >= 0.9, "{sep:?}");
}

#[test]
fn cloning_matches_preferred_action_frequencies() {
    let (spec, shape) = micro();
    let pairs = pool_pairs(&spec, &[Tier::Poor], 400, 2000, 4);
    let c = TrainConfig { lr: 1e-3, batch_size: 256, ..cfg(Method::Bc, 3000) };
    let out = train(&c, &pairs, &shape, EvalContext::default()).unwrap();
    let n_act = spec.n_actions();
    for (i, p) in out.policy_tables().iter().enumerate() {
        // The likelihood maximizer is the per-observation action histogram.
        let mut counts = vec![0usize; p.n_obs * n_act];
        for t in pairs.iter().flat_map(|q| &q.sigma_plus.transitions) {
            counts[t.obs[i] * n_act + t.act[i]] += 1;
        }
        let mut checked = 0;
        for o in 0..p.n_obs {
            let row = &counts[o * n_act..(o + 1) * n_act];
            let total: usize = row.iter().sum();
            if total < 1000 {
                continue;
            }
            checked += 1;
            let dev = p.row(o).iter().zip(row).map(|(x, &c)| (x - c as f64 / total as f64).abs()).fold(0.0, f64::max);
            assert!(dev < 0.05, "agent {i} obs {o}: {:?} vs {row:?}", p.row(o));
        }
        assert!(checked > 0);
    }
}

#[test]
fn cloning_uniform_actions_stays_near_uniform() {
    let (spec, shape) = micro();
    let (n_obs, n_act) = (spec.n_cells(), spec.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let traj = |rng: &mut ChaCha8Rng| {
        let ts = (0..5)
            .map(|_| {
                let obs: Vec<usize> = (0..2).map(|_| rng.random_range(0..n_obs)).collect();
                let act: Vec<usize> = (0..2).map(|_| rng.random_range(0..n_act)).collect();
                Transition { next_obs: obs.clone(), obs, act }
            })
            .collect();
        Trajectory::without_return(ts, "synthetic")
    };
    // 2000 pairs × 5 steps = 10⁴ preferred samples per agent.
    let pairs: Vec<PreferencePair> = (0..2000)
        .map(|k| PreferencePair { pair_id: format!("p{k}"), sigma_plus: traj(&mut rng), sigma_minus: traj(&mut rng) })
        .collect();
    let c = TrainConfig { lr: 1e-3, batch_size: 256, ..cfg(Method::Bc, 3000) };
    let out = train(&c, &pairs, &shape, EvalContext::default()).unwrap();
    let uniform = 1.0 / n_act as f64;
    for p in out.policy_tables() {
        for o in 0..n_obs {
            let dev = p.row(o).iter().map(|x| (x - uniform).abs()).fold(0.0, f64::max);
            assert!(dev < 0.05, "obs {o}: {:?}", p.row(o));
        }
    }
}

#[test]
fn vdn_mixing_stays_fixed() {
    let (spec, shape) = micro();
    let pairs = pool_pairs(&spec, &Tier::ALL, 60, 100, 5);
    let out = train(&cfg(Method::IplVdn, 200), &pairs, &shape, EvalContext::default()).unwrap();
    match &out.heads[0].mixing {
        Mixing::Fixed(w) => assert_eq!(w, &omapl::MixWeights::unit(2)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn single_agent_independent_learner_equals_frozen_omapl() {
    let spec = EnvSpec::micro(1, 4);
    let shape = TableShape::uniform(1, spec.n_cells(), spec.n_actions());
    let pairs = pool_pairs(&spec, &Tier::ALL, 60, 100, 6);
    let a = train(&cfg(Method::Iipl, 300), &pairs, &shape, EvalContext::default()).unwrap();
    let frozen = TrainConfig { freeze_mixing: true, ..cfg(Method::Omapl, 300) };
    let b = train(&frozen, &pairs, &shape, EvalContext::default()).unwrap();
    assert_eq!(a.heads[0].tables, b.heads[0].tables);
    let (pa, pb): (Vec<PolicyTable>, Vec<PolicyTable>) = (a.policy_tables(), b.policy_tables());
    assert_eq!(pa, pb);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn greedy_evaluation_on_the_micro_env_reaches_the_goal() {
    let (spec, shape) = micro();
    let pairs = pool_pairs(&spec, &Tier::ALL, 120, 500, 7);
    let c = TrainConfig { greedy_eval: true, ..cfg(Method::Omapl, 2000) };
    let out = train(&c, &pairs, &shape, EvalContext { env: Some(&spec), heldout: None }).unwrap();
    let last = out.metrics.last().unwrap();
    let expert = BehaviorTier::new(&spec, Tier::Expert);
    let expert_mean: f64 = (0..200).map(|s| rollout(&spec, &expert, s).hidden_return().unwrap()).sum::<f64>() / 200.0;
    assert!(last.mean_return.unwrap() >= expert_mean - 0.5, "{last:?} vs {expert_mean}");
}

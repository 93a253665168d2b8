//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails that is not listed in [`DOCUMENTED_FAILURES`].

use std::time::{Duration, Instant};

use omapl::env::{enumerate_micro, BehaviorTier, EnvSpec, Tier, DEFAULT_ENUMERATION_CAP};
use omapl::oracles::{
    check_glc, check_value_identity, closed_form_policy, gradcheck, nonconvex_counterexample, probe_convexity,
    soft_value_iteration, ConvexityTarget, GradTarget, MicroModel, ProbeConfig,
};
use omapl::policy::{max_row_tv, PolicyTable};
use omapl::trainer::{evaluate, mean_std, reward_separation, train, EvalContext, Method, EVAL_SEED_OFFSET};
use omapl::{Hyper, TableShape};
use omapl_cli::commands::{cmd_gen, cmd_train};
use omapl_cli::config::RunConfig;
use omapl_cli::data::{heldout_pairs, training_pairs};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const N_MODELS: u64 = 50;
const GLC_SAMPLES: usize = 1000;
const TV_TOL: f64 = 1e-9;
const GLC_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-8;
const N_PROBES: usize = 1000;
const GRAD_POINTS: usize = 50;
const GRAD_TOL: f64 = 1e-6;
const VI_TOL: f64 = 1e-8;
const RANK_THRESHOLD: f64 = 0.85;
const N_SEEDS: u64 = 4;
const EPISODES: usize = 100;

/// Criteria expected to fail under a faithful implementation; each has an
/// analysis in the decisions log. They still print FAIL.
const DOCUMENTED_FAILURES: &[u32] = &[9];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn models() -> Vec<MicroModel> {
    (0..N_MODELS).map(|k| MicroModel::random(2, 0xacce_0000 + k)).collect()
}

fn radix_decode(mut k: usize, radices: &[usize]) -> Vec<usize> {
    radices
        .iter()
        .map(|&r| {
            let d = k % r;
            k /= r;
            d
        })
        .collect()
}

/// Every joint `(s, a)` with its uniform-state WBC weight
/// `Π_j μ_j(a_j|s_j) · exp((Σ_j w^q_j q_j − Σ_j w^v_j v_j + b_q − b_v) / β)`.
fn joint_weights(m: &MicroModel) -> Vec<(Vec<usize>, Vec<usize>, f64)> {
    let (n_obs, n_act) = (&m.tables.shape.n_obs, &m.tables.shape.n_act);
    let n_states: usize = n_obs.iter().product();
    let n_actions: usize = n_act.iter().product();
    let mut out = Vec::new();
    for ks in 0..n_states {
        let s = radix_decode(ks, n_obs);
        for ka in 0..n_actions {
            let a = radix_decode(ka, n_act);
            let mut mu = 1.0;
            let mut x = m.mix.b_q - m.mix.b_v;
            for j in 0..s.len() {
                mu *= m.mu[j][s[j] * n_act[j] + a[j]];
                x += m.mix.q[j] * m.tables.q[j][s[j] * n_act[j] + a[j]] - m.mix.v[j] * m.tables.v[j][s[j]];
            }
            out.push((s.clone(), a, mu * (x / m.hyper.beta).exp()));
        }
    }
    out
}

/// Maximizer of `Σ_{s,a} ω(s, a) log π_i(a_i|s_i)`: row-normalized marginal weights.
fn wbc_maximizer(m: &MicroModel, i: usize) -> PolicyTable {
    let (n_obs, n_act) = (m.tables.shape.n_obs[i], m.tables.shape.n_act[i]);
    let mut w = vec![0.0; n_obs * n_act];
    for (s, a, x) in joint_weights(m) {
        w[s[i] * n_act + a[i]] += x;
    }
    for s in 0..n_obs {
        let z: f64 = w[s * n_act..(s + 1) * n_act].iter().sum();
        w[s * n_act..(s + 1) * n_act].iter_mut().for_each(|x| *x /= z);
    }
    PolicyTable { n_obs, n_act, probs: w }
}

fn global_objective(joint: &[(Vec<usize>, Vec<usize>, f64)], pis: &[PolicyTable]) -> f64 {
    joint
        .iter()
        .map(|(s, a, w)| w * pis.iter().enumerate().map(|(i, p)| p.prob(s[i], a[i]).ln()).sum::<f64>())
        .sum()
}

fn random_policy(like: &PolicyTable, rng: &mut ChaCha8Rng) -> PolicyTable {
    let mut probs = Vec::with_capacity(like.probs.len());
    for _ in 0..like.n_obs {
        let raw: Vec<f64> = (0..like.n_act).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let z: f64 = raw.iter().sum();
        probs.extend(raw.iter().map(|x| x / z));
    }
    PolicyTable { probs, ..like.clone() }
}

fn criterion_1() -> Outcome {
    let mut worst = 0.0f64;
    for m in models() {
        for i in 0..2 {
            worst = worst.max(max_row_tv(&closed_form_policy(&m, i).unwrap(), &wbc_maximizer(&m, i)));
        }
    }
    outcome(worst <= TV_TOL, format!("max TV {worst:.3e} over {N_MODELS} models"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut violations, mut worst_gap) = (0usize, f64::NEG_INFINITY);
    let mut library_violations = 0;
    for (k, m) in models().iter().enumerate() {
        let star: Vec<PolicyTable> = (0..2).map(|i| closed_form_policy(m, i).unwrap()).collect();
        let joint = joint_weights(m);
        let g_star = global_objective(&joint, &star);
        for n in 0..GLC_SAMPLES {
            let sample: Vec<PolicyTable> = star
                .iter()
                .map(|p| {
                    let noise = random_policy(p, &mut rng);
                    if n % 2 == 0 {
                        noise
                    } else {
                        let eps: f64 = rng.random_range(1e-4..0.3);
                        let probs = p.probs.iter().zip(&noise.probs).map(|(x, y)| (1.0 - eps) * x + eps * y).collect();
                        PolicyTable { probs, ..noise }
                    }
                })
                .collect();
            let gap = global_objective(&joint, &sample) - g_star;
            worst_gap = worst_gap.max(gap);
            if gap > GLC_TOL {
                violations += 1;
            }
        }
        library_violations += check_glc(m, GLC_SAMPLES, k as u64).unwrap().violations;
    }
    outcome(
        violations == 0 && library_violations == 0,
        format!(
            "{violations} + {library_violations} violations over {} samples, max G(π) − G(π*) = {worst_gap:.3e}",
            2 * N_MODELS as usize * GLC_SAMPLES
        ),
    )
}

fn criterion_3() -> Outcome {
    let (mut tv, mut residual) = (0.0f64, 0.0f64);
    for m in models() {
        let r = check_value_identity(&m).unwrap();
        residual = residual.max(r.identity_residual);
        tv = tv.max(r.policy_tv);
        for i in 0..2 {
            tv = tv.max(max_row_tv(&closed_form_policy(&r.solved, i).unwrap(), &wbc_maximizer(&r.solved, i)));
        }
    }
    outcome(tv <= TV_TOL && residual <= IDENTITY_TOL, format!("max TV {tv:.3e}, identity residual {residual:.3e}"))
}

fn criterion_4() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for target in ConvexityTarget::ALL {
        let r = probe_convexity(target, ProbeConfig { n_probes: N_PROBES, seed: 4, lambda: Some(0.5), flipped: false }).unwrap();
        pass &= r.violations == 0 && r.n_probes == N_PROBES;
        parts.push(format!("{} {}/{}", target.name(), r.violations, r.n_probes));
    }
    outcome(pass, format!("violations: {}", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let f = |t: f64| (1.0 - t.exp()).exp() + t.exp() - 1.0;
    match nonconvex_counterexample() {
        Ok(w) => {
            let gap = f(0.5 * (w.t1 + w.t2)) - 0.5 * (f(w.t1) + f(w.t2));
            let inside = (-4.0..=0.0).contains(&w.t1) && (-4.0..=0.0).contains(&w.t2);
            let agree = (gap - w.gap_recheck).abs() <= 1e-12 * gap.abs().max(1.0);
            outcome(
                inside && gap > 0.0 && w.gap_recheck > 0.0 && agree,
                format!("t1 = {}, t2 = {}, excess {gap:.6e} (extended precision {:.6e})", w.t1, w.t2, w.gap_recheck),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_6() -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for target in GradTarget::ALL {
        let r = gradcheck(target, GRAD_POINTS, 6).unwrap();
        pass &= r.max_rel_err < GRAD_TOL && r.n_points == GRAD_POINTS;
        parts.push(format!("{} {:.2e}", target.name(), r.max_rel_err));
    }
    outcome(pass, format!("max relative error: {}", parts.join(", ")))
}

fn criterion_7() -> Outcome {
    let spec = EnvSpec::micro(2, 3);
    let en = enumerate_micro(&spec, &BehaviorTier::new(&spec, Tier::Medium), DEFAULT_ENUMERATION_CAP).unwrap();
    let hyper = Hyper { gamma: spec.gamma, ..Hyper::default() };
    let vi = soft_value_iteration(&en, &en.reward, &hyper).unwrap();
    let (ns, na) = (en.n_states(), en.n_actions());
    let mut inverse = 0.0f64;
    for sa in 0..ns * na {
        let next: f64 = (0..ns).map(|s2| en.transition[sa * ns + s2] * vi.v[s2]).sum();
        inverse = inverse.max((vi.q[sa] - hyper.gamma * next - en.reward[sa]).abs());
    }
    let mut value = 0.0f64;
    for s in 0..ns {
        let z: f64 = (0..na).map(|a| en.mu_tot[s * na + a] * (vi.q[s * na + a] / hyper.beta).exp()).sum();
        value = value.max((vi.v[s] - hyper.beta * z.ln()).abs());
    }
    outcome(inverse <= VI_TOL && value <= VI_TOL, format!("inverse residual {inverse:.3e}, log-sum-exp residual {value:.3e}"))
}

/// The shared gridworld training setup for criteria 8 and 9.
fn gridworld_config(seed: u64, method: Method) -> RunConfig {
    let mut cfg = RunConfig::default().with_method(method);
    cfg.seed = seed;
    cfg.train.seed = seed;
    cfg.train.lr = 1e-2;
    cfg.train.beta = 0.1;
    cfg.train.steps = 20_000;
    cfg.train.eval_interval = cfg.train.steps;
    cfg.train.use_target = false;
    cfg
}

fn shape(cfg: &RunConfig) -> TableShape {
    TableShape::uniform(cfg.env.n_agents, cfg.env.n_cells(), cfg.env.n_actions())
}

fn criterion_8() -> Outcome {
    let cfg = gridworld_config(0, Method::Omapl);
    let pairs = training_pairs(&cfg).unwrap();
    let heldout = heldout_pairs(&cfg).unwrap();
    let out = train(&cfg.train, &pairs, &shape(&cfg), EvalContext::default()).unwrap();
    let sep = reward_separation(&out.heads, &cfg.train.hyper(), &heldout).unwrap();
    outcome(
        pairs.len() == 2000 && sep.mean_plus > sep.mean_minus && sep.accuracy >= RANK_THRESHOLD,
        format!(
            "{} training pairs, {} held out: mean R σ⁺ {:.4} vs σ⁻ {:.4}, rank accuracy {:.3} (threshold {RANK_THRESHOLD})",
            pairs.len(),
            heldout.len(),
            sep.mean_plus,
            sep.mean_minus,
            sep.accuracy
        ),
    )
}

/// Per-seed mean returns, their mean and standard error.
fn method_returns(method: Method) -> (Vec<f64>, f64, f64) {
    let per_seed: Vec<f64> = (0..N_SEEDS)
        .map(|seed| {
            let cfg = gridworld_config(seed, method);
            let pairs = training_pairs(&cfg).unwrap();
            let out = train(&cfg.train, &pairs, &shape(&cfg), EvalContext::default()).unwrap();
            evaluate(&out.policy_tables(), &cfg.env, EPISODES, seed + EVAL_SEED_OFFSET, false).unwrap().mean_return
        })
        .collect();
    let (mean, sd) = mean_std(&per_seed);
    (per_seed, mean, sd / (N_SEEDS as f64).sqrt())
}

fn criterion_9() -> Outcome {
    let (_, om, om_se) = method_returns(Method::Omapl);
    let mut pass = true;
    let mut parts = vec![format!("omapl {om:.3} (SE {om_se:.3})")];
    for baseline in [Method::IplVdn, Method::Bc] {
        let (_, m, se) = method_returns(baseline);
        // One standard error of the difference of two independent means.
        let margin = (om_se * om_se + se * se).sqrt();
        let ok = om - m > margin;
        pass &= ok;
        parts.push(format!("{baseline} {m:.3} (SE {se:.3}, needs diff > {margin:.3}: {})", if ok { "yes" } else { "no" }));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig { n_trajectories: 120, n_pairs: 300, heldout_trajectories: 60, heldout_pairs: 50, ..RunConfig::default() };
    cfg.seed = 10;
    cfg.train.seed = 10;
    cfg.train.lr = 1e-2;
    cfg.train.steps = 500;
    cfg.train.eval_interval = 100;
    cfg.train.eval_episodes = 20;
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        cmd_gen(&cfg, &out).unwrap();
        csvs.push(std::fs::read(cmd_train(&cfg, &out).unwrap().metrics_path).unwrap());
    }
    outcome(csvs[0] == csvs[1] && !csvs[0].is_empty(), format!("{} bytes each, identical: {}", csvs[0].len(), csvs[0] == csvs[1]))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome, Option<Duration>);
    let criteria: [Criterion; 10] = [
        (1, "closed-form local policy equals WBC maximizer", criterion_1, Some(Duration::from_secs(10))),
        (2, "global-local consistency", criterion_2, Some(Duration::from_secs(30))),
        (3, "policy from identity-solved values", criterion_3, None),
        (4, "concavity and convexity probes", criterion_4, None),
        (5, "non-convexity witness", criterion_5, None),
        (6, "analytic gradients", criterion_6, None),
        (7, "soft value iteration round trip", criterion_7, None),
        (8, "recovered reward separation", criterion_8, Some(Duration::from_secs(300))),
        (9, "method ordering on the gridworld", criterion_9, Some(Duration::from_secs(900))),
        (10, "deterministic metrics CSV", criterion_10, None),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run, budget) in criteria {
        let start = Instant::now();
        let mut o = run();
        let elapsed = start.elapsed();
        if let Some(b) = budget {
            if elapsed > b {
                o.pass = false;
                o.detail.push_str(&format!("; over time budget {b:?}"));
            }
        }
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && DOCUMENTED_FAILURES.contains(&id) { " [documented]" } else { "" };
        println!("criterion {id:>2} {status}{note}: {name}: {} [{:.2} s]", o.detail, elapsed.as_secs_f64());
        if !o.pass && !DOCUMENTED_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}

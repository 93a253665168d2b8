use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use omapl::dataset::Labeler;
use omapl::env::{EnvSpec, Tier};
use omapl::trainer::{Method, TrainConfig};
use serde::{Deserialize, Serialize};

/// Share of the trajectory pool rolled out by each behavior tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TierMixture {
    pub poor: f64,
    pub medium: f64,
    pub expert: f64,
}

impl Default for TierMixture {
    fn default() -> Self {
        Self { poor: 1.0 / 3.0, medium: 1.0 / 3.0, expert: 1.0 / 3.0 }
    }
}

impl TierMixture {
    pub fn get(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Poor => self.poor,
            Tier::Medium => self.medium,
            Tier::Expert => self.expert,
        }
    }

    /// Per-tier trajectory counts summing to `n`; the largest-remainder rule
    /// breaks rounding ties in tier order.
    pub fn counts(&self, n: usize) -> Vec<(Tier, usize)> {
        let exact: Vec<f64> = Tier::ALL.iter().map(|&t| self.get(t) * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let mut left = n - counts.iter().sum::<usize>();
        for k in order {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        Tier::ALL.iter().copied().zip(counts).collect()
    }
}

/// File locations; relative paths resolve against the run directory and
/// `{method}` expands to the training method's name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub dataset: String,
    pub checkpoint: String,
    pub metrics: String,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "dataset.jsonl".into(),
            checkpoint: "checkpoint_{method}.json".into(),
            metrics: "metrics_{method}.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Trajectories rolled out for the training pool.
    pub n_trajectories: usize,
    pub n_pairs: usize,
    pub heldout_trajectories: usize,
    pub heldout_pairs: usize,
    pub labeler: Labeler,
    pub tiers: TierMixture,
    pub env: EnvSpec,
    pub train: TrainConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_trajectories: 600,
            n_pairs: 2000,
            heldout_trajectories: 200,
            heldout_pairs: 200,
            labeler: Labeler::Deterministic,
            tiers: TierMixture::default(),
            env: EnvSpec::gridworld_4x4(),
            train: TrainConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        let t = &self.tiers;
        if [t.poor, t.medium, t.expert].iter().any(|&p| !(p >= 0.0)) {
            bail!("tier proportions must be non-negative");
        }
        let total = t.poor + t.medium + t.expert;
        if (total - 1.0).abs() > 1e-9 {
            bail!("tier proportions sum to {total}, expected 1");
        }
        if self.n_pairs == 0 {
            bail!("n_pairs must be >= 1");
        }
        if self.n_trajectories < 2 {
            bail!("n_trajectories must be >= 2");
        }
        if (self.train.gamma - self.env.gamma).abs() > 0.0 {
            bail!("train.gamma {} differs from env.gamma {}", self.train.gamma, self.env.gamma);
        }
        Ok(())
    }

    /// Resolves a configured path against the run directory.
    pub fn resolve(&self, out: &Path, template: &str) -> PathBuf {
        let p = PathBuf::from(template.replace("{method}", self.train.method.name()));
        if p.is_absolute() {
            p
        } else {
            out.join(p)
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.train.method = method;
        self
    }
}

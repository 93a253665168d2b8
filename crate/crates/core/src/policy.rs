//! Per-agent categorical policies.

use serde::{Deserialize, Serialize};

use crate::env::softmax;

/// Softmax policy `π_i(a|o; ω_i)` over a logits table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_obs: usize,
    pub n_act: usize,
    /// `logits[o * n_act + a]`
    pub logits: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Zero logits, i.e. uniform rows.
    pub fn uniform(n_obs: usize, n_act: usize) -> Self {
        Self {
            n_obs,
            n_act,
            logits: vec![0.0; n_obs * n_act],
        }
    }

    pub fn logits_row(&self, obs: usize) -> &[f64] {
        &self.logits[obs * self.n_act..(obs + 1) * self.n_act]
    }

    pub fn probs(&self, obs: usize) -> Vec<f64> {
        softmax(self.logits_row(obs))
    }

    pub fn log_prob(&self, obs: usize, act: usize) -> f64 {
        let row = self.logits_row(obs);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        row[act] - lse
    }

    pub fn to_table(&self) -> PolicyTable {
        PolicyTable {
            n_obs: self.n_obs,
            n_act: self.n_act,
            probs: (0..self.n_obs).flat_map(|o| self.probs(o)).collect(),
        }
    }
}

/// Explicit probability rows; may contain exact zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub n_obs: usize,
    pub n_act: usize,
    pub probs: Vec<f64>,
}

impl PolicyTable {
    pub fn uniform(n_obs: usize, n_act: usize) -> Self {
        Self {
            n_obs,
            n_act,
            probs: vec![1.0 / n_act as f64; n_obs * n_act],
        }
    }

    pub fn row(&self, obs: usize) -> &[f64] {
        &self.probs[obs * self.n_act..(obs + 1) * self.n_act]
    }

    pub fn prob(&self, obs: usize, act: usize) -> f64 {
        self.probs[obs * self.n_act + act]
    }

    pub fn greedy_action(&self, obs: usize) -> usize {
        let row = self.row(obs);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Largest per-row total variation `½ Σ_a |p(a|o) − q(a|o)|`.
pub fn max_row_tv(a: &PolicyTable, b: &PolicyTable) -> f64 {
    (0..a.n_obs)
        .map(|o| {
            0.5 * a
                .row(o)
                .iter()
                .zip(b.row(o))
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

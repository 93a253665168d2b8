//! Offline preference datasets: trajectories, labeled pairs, and the JSONL
//! wire format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of consecutive tied draws tolerated before `make_pairs` gives up.
pub const TIE_RETRY_CAP: usize = 1000;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("need at least 2 trajectories to form pairs, got {0}")]
    TooFewTrajectories(usize),
    #[error("trajectory {0} has no hidden return; labeling needs returns")]
    MissingReturn(usize),
    #[error("gave up after {0} consecutive tied draws (all sampled returns equal)")]
    TieCapExhausted(usize),
    #[error("line {line}: malformed record at `{field}`: {message}")]
    Malformed {
        line: usize,
        field: String,
        message: String,
    },
    #[error("pair `{pair_id}`: {message}")]
    Invalid { pair_id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One joint step `(o, a, o')`; every vector is indexed by agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub obs: Vec<usize>,
    pub act: Vec<usize>,
    pub next_obs: Vec<usize>,
}

impl Transition {
    /// Keeps only the listed agent columns, in the given order.
    pub fn project(&self, agents: &[usize]) -> Transition {
        Transition {
            obs: agents.iter().map(|&i| self.obs[i]).collect(),
            act: agents.iter().map(|&i| self.act[i]).collect(),
            next_obs: agents.iter().map(|&i| self.next_obs[i]).collect(),
        }
    }
}

/// An ordered sequence of joint transitions.
///
/// The discounted true return is carried for labeling and held-out evaluation
/// only. Training code works on [`PreferencePair::stripped`] copies, where it
/// is gone.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub tier: String,
    hidden_return: Option<f64>,
}

impl Trajectory {
    pub fn new(transitions: Vec<Transition>, hidden_return: f64, tier: impl Into<String>) -> Self {
        Self {
            transitions,
            tier: tier.into(),
            hidden_return: Some(hidden_return),
        }
    }

    pub fn without_return(transitions: Vec<Transition>, tier: impl Into<String>) -> Self {
        Self {
            transitions,
            tier: tier.into(),
            hidden_return: None,
        }
    }

    pub fn hidden_return(&self) -> Option<f64> {
        self.hidden_return
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.transitions.first().map_or(0, |t| t.obs.len())
    }

    pub fn stripped(&self) -> Trajectory {
        Trajectory {
            hidden_return: None,
            ..self.clone()
        }
    }

    pub fn project(&self, agents: &[usize]) -> Trajectory {
        Trajectory {
            transitions: self.transitions.iter().map(|t| t.project(agents)).collect(),
            tier: self.tier.clone(),
            hidden_return: self.hidden_return,
        }
    }
}

/// Two trajectories where `sigma_plus` is the preferred one.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub pair_id: String,
    pub sigma_plus: Trajectory,
    pub sigma_minus: Trajectory,
}

impl PreferencePair {
    pub fn stripped(&self) -> PreferencePair {
        PreferencePair {
            pair_id: self.pair_id.clone(),
            sigma_plus: self.sigma_plus.stripped(),
            sigma_minus: self.sigma_minus.stripped(),
        }
    }

    pub fn project(&self, agents: &[usize]) -> PreferencePair {
        PreferencePair {
            pair_id: self.pair_id.clone(),
            sigma_plus: self.sigma_plus.project(agents),
            sigma_minus: self.sigma_minus.project(agents),
        }
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> {
        self.sigma_plus
            .transitions
            .iter()
            .chain(self.sigma_minus.transitions.iter())
    }
}

/// How a candidate pair gets its label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeler {
    /// Strictly higher hidden return wins; ties are redrawn.
    #[default]
    Deterministic,
    /// Sample the label from the Bradley–Terry model on hidden returns.
    BradleyTerry,
}

/// `P(first ≻ second) = e^{g1} / (e^{g1} + e^{g2})`, evaluated without overflow.
pub fn bt_probability(g1: f64, g2: f64) -> f64 {
    let d = g1 - g2;
    if d.is_nan() {
        return 0.5;
    }
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Stochastic Bradley–Terry labeling of a candidate pair.
pub fn bt_label<R: Rng + ?Sized>(
    first: Trajectory,
    second: Trajectory,
    pair_id: String,
    rng: &mut R,
) -> Result<PreferencePair, DatasetError> {
    let g1 = first.hidden_return.ok_or(DatasetError::MissingReturn(0))?;
    let g2 = second.hidden_return.ok_or(DatasetError::MissingReturn(1))?;
    let p = bt_probability(g1, g2);
    let (sigma_plus, sigma_minus) = if rng.random::<f64>() < p {
        (first, second)
    } else {
        (second, first)
    };
    Ok(PreferencePair {
        pair_id,
        sigma_plus,
        sigma_minus,
    })
}

fn pair_id(k: usize) -> String {
    format!("p{k:06}")
}

/// Samples `n_pairs` labeled pairs from a trajectory pool.
///
/// Each draw picks two distinct trajectories. With the deterministic labeler a
/// tied draw is discarded and redrawn, failing after [`TIE_RETRY_CAP`]
/// consecutive ties.
pub fn make_pairs(
    trajectories: &[Trajectory],
    n_pairs: usize,
    labeler: Labeler,
    seed: u64,
) -> Result<Vec<PreferencePair>, DatasetError> {
    if trajectories.len() < 2 {
        return Err(DatasetError::TooFewTrajectories(trajectories.len()));
    }
    if let Some(k) = trajectories.iter().position(|t| t.hidden_return.is_none()) {
        return Err(DatasetError::MissingReturn(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut ties = 0usize;
    while pairs.len() < n_pairs {
        let draw = rand::seq::index::sample(&mut rng, trajectories.len(), 2);
        let (a, b) = (&trajectories[draw.index(0)], &trajectories[draw.index(1)]);
        let id = pair_id(pairs.len());
        match labeler {
            Labeler::Deterministic => {
                let (ga, gb) = (a.hidden_return.unwrap(), b.hidden_return.unwrap());
                if ga == gb {
                    ties += 1;
                    if ties >= TIE_RETRY_CAP {
                        return Err(DatasetError::TieCapExhausted(ties));
                    }
                    continue;
                }
                ties = 0;
                let (sigma_plus, sigma_minus) = if ga > gb { (a, b) } else { (b, a) };
                pairs.push(PreferencePair {
                    pair_id: id,
                    sigma_plus: sigma_plus.clone(),
                    sigma_minus: sigma_minus.clone(),
                });
            }
            Labeler::BradleyTerry => {
                pairs.push(bt_label(a.clone(), b.clone(), id, &mut rng)?);
            }
        }
    }
    Ok(pairs)
}

/// Checks structural consistency: non-empty trajectories and a single agent
/// count across every vector of every pair.
pub fn validate_pairs(pairs: &[PreferencePair]) -> Result<usize, DatasetError> {
    let Some(first) = pairs.first() else {
        return Ok(0);
    };
    let n_agents = first.sigma_plus.n_agents();
    for pair in pairs {
        for (name, traj) in [("sigma_plus", &pair.sigma_plus), ("sigma_minus", &pair.sigma_minus)] {
            if traj.is_empty() {
                return Err(DatasetError::Invalid {
                    pair_id: pair.pair_id.clone(),
                    message: format!("{name} is empty"),
                });
            }
            for (k, t) in traj.transitions.iter().enumerate() {
                if t.obs.len() != n_agents || t.act.len() != n_agents || t.next_obs.len() != n_agents {
                    return Err(DatasetError::Invalid {
                        pair_id: pair.pair_id.clone(),
                        message: format!("{name} step {k}: expected {n_agents} agents"),
                    });
                }
            }
        }
    }
    Ok(n_agents)
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    obs: Vec<Vec<usize>>,
    act: Vec<Vec<usize>>,
    next_obs: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct MetaRecord {
    return_plus: Option<f64>,
    return_minus: Option<f64>,
    tier_plus: String,
    tier_minus: String,
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    pair_id: String,
    sigma_plus: TrajectoryRecord,
    sigma_minus: TrajectoryRecord,
    meta: MetaRecord,
}

impl TrajectoryRecord {
    fn from_trajectory(t: &Trajectory) -> Self {
        Self {
            obs: t.transitions.iter().map(|x| x.obs.clone()).collect(),
            act: t.transitions.iter().map(|x| x.act.clone()).collect(),
            next_obs: t.transitions.iter().map(|x| x.next_obs.clone()).collect(),
        }
    }

    fn into_trajectory(
        self,
        side: &str,
        hidden_return: Option<f64>,
        tier: String,
        line: usize,
    ) -> Result<Trajectory, DatasetError> {
        let steps = self.obs.len();
        if self.act.len() != steps || self.next_obs.len() != steps {
            return Err(DatasetError::Malformed {
                line,
                field: format!("{side}.act"),
                message: format!(
                    "obs/act/next_obs step counts differ ({}/{}/{})",
                    steps,
                    self.act.len(),
                    self.next_obs.len()
                ),
            });
        }
        if steps == 0 {
            return Err(DatasetError::Malformed {
                line,
                field: format!("{side}.obs"),
                message: "trajectory has no steps".into(),
            });
        }
        let n = self.obs[0].len();
        let mut transitions = Vec::with_capacity(steps);
        for (k, ((obs, act), next_obs)) in self
            .obs
            .into_iter()
            .zip(self.act)
            .zip(self.next_obs)
            .enumerate()
        {
            for (name, v) in [("obs", &obs), ("act", &act), ("next_obs", &next_obs)] {
                if v.len() != n {
                    return Err(DatasetError::Malformed {
                        line,
                        field: format!("{side}.{name}[{k}]"),
                        message: format!("expected {n} agents, found {}", v.len()),
                    });
                }
            }
            transitions.push(Transition { obs, act, next_obs });
        }
        Ok(Trajectory {
            transitions,
            tier,
            hidden_return,
        })
    }
}

fn to_record(pair: &PreferencePair) -> PairRecord {
    PairRecord {
        pair_id: pair.pair_id.clone(),
        sigma_plus: TrajectoryRecord::from_trajectory(&pair.sigma_plus),
        sigma_minus: TrajectoryRecord::from_trajectory(&pair.sigma_minus),
        meta: MetaRecord {
            return_plus: pair.sigma_plus.hidden_return,
            return_minus: pair.sigma_minus.hidden_return,
            tier_plus: pair.sigma_plus.tier.clone(),
            tier_minus: pair.sigma_minus.tier.clone(),
        },
    }
}

pub fn write_jsonl<W: Write>(pairs: &[PreferencePair], mut out: W) -> Result<(), DatasetError> {
    for pair in pairs {
        serde_json::to_writer(&mut out, &to_record(pair))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: Read>(input: R) -> Result<Vec<PreferencePair>, DatasetError> {
    let mut pairs = Vec::new();
    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let record: PairRecord =
            serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Malformed {
                line: line_no,
                field: e.path().to_string(),
                message: e.inner().to_string(),
            })?;
        let meta = record.meta;
        let sigma_plus = record.sigma_plus.into_trajectory(
            "sigma_plus",
            meta.return_plus,
            meta.tier_plus,
            line_no,
        )?;
        let sigma_minus = record.sigma_minus.into_trajectory(
            "sigma_minus",
            meta.return_minus,
            meta.tier_minus,
            line_no,
        )?;
        if sigma_plus.n_agents() != sigma_minus.n_agents() {
            return Err(DatasetError::Malformed {
                line: line_no,
                field: "sigma_minus.obs".into(),
                message: "agent count differs from sigma_plus".into(),
            });
        }
        pairs.push(PreferencePair {
            pair_id: record.pair_id,
            sigma_plus,
            sigma_minus,
        });
    }
    Ok(pairs)
}

pub fn save_jsonl(pairs: &[PreferencePair], path: impl AsRef<Path>) -> Result<(), DatasetError> {
    write_jsonl(pairs, BufWriter::new(File::create(path)?))
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<PreferencePair>, DatasetError> {
    read_jsonl(File::open(path)?)
}

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use omapl::checkpoint::Checkpoint;
use omapl::dataset::{load_jsonl, save_jsonl, validate_pairs};
use omapl::factorization::TableShape;
use omapl::oracles::{run_verify, CheckResult, VerifyOptions};
use omapl::trainer::{evaluate, reward_separation, train, write_metrics_csv, EvalContext, MetricsRow, EVAL_SEED_OFFSET};
use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{heldout_pairs, tier_histogram, training_pairs};

/// Name of the resolved-config echo written into every run directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating run directory {}", out.display()))
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = out.join(RESOLVED_CONFIG);
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenSummary {
    pub path: PathBuf,
    pub n_pairs: usize,
    /// Tier name to (preferred, non-preferred) occurrences.
    pub tiers: BTreeMap<String, (usize, usize)>,
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<GenSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let pairs = training_pairs(cfg)?;
    let path = cfg.resolve(out, &cfg.paths.dataset);
    save_jsonl(&pairs, &path).with_context(|| format!("writing dataset {}", path.display()))?;
    echo_config(cfg, out)?;
    Ok(GenSummary { path, n_pairs: pairs.len(), tiers: tier_histogram(&pairs) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub metrics_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub last: MetricsRow,
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    ensure_dir(out)?;
    let data_path = cfg.resolve(out, &cfg.paths.dataset);
    let pairs = load_jsonl(&data_path).with_context(|| format!("loading dataset {} (run `omapl gen` first)", data_path.display()))?;
    let n_agents = validate_pairs(&pairs)?;
    if n_agents != cfg.env.n_agents {
        bail!("dataset has {n_agents} agents, env has {}", cfg.env.n_agents);
    }
    let heldout = heldout_pairs(cfg)?;
    let shape = TableShape::uniform(cfg.env.n_agents, cfg.env.n_cells(), cfg.env.n_actions());
    let ctx = EvalContext { env: Some(&cfg.env), heldout: Some(&heldout) };
    let output = train(&cfg.train, &pairs, &shape, ctx)?;

    let metrics_path = cfg.resolve(out, &cfg.paths.metrics);
    let file = fs::File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    write_metrics_csv(&output.metrics, std::io::BufWriter::new(file))?;
    let checkpoint_path = cfg.resolve(out, &cfg.paths.checkpoint);
    Checkpoint::from_output(&output, cfg.env.hash(), cfg.train.hyper()).save(&checkpoint_path)?;
    echo_config(cfg, out)?;
    let last = output.metrics.last().cloned().ok_or_else(|| anyhow!("training produced no metrics"))?;
    Ok(TrainSummary { metrics_path, checkpoint_path, last })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub method: String,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    /// Absent for methods without a reward model.
    pub rank_accuracy: Option<f64>,
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve(out, &cfg.paths.checkpoint));
    let ck = Checkpoint::load(&path, &cfg.env.hash())?;
    let tables: Vec<_> = ck.policies.iter().map(|p| p.to_table()).collect();
    let summary = evaluate(&tables, &cfg.env, cfg.train.eval_episodes, cfg.train.seed.wrapping_add(EVAL_SEED_OFFSET), cfg.train.greedy_eval)?;
    let rank_accuracy = if ck.heads.is_empty() {
        None
    } else {
        let heldout = heldout_pairs(cfg)?;
        if heldout.is_empty() {
            None
        } else {
            Some(reward_separation(&ck.heads, &ck.hyper, &heldout)?.accuracy)
        }
    };
    Ok(EvalReport {
        method: ck.method.name().into(),
        episodes: cfg.train.eval_episodes,
        mean_return: summary.mean_return,
        std_return: summary.std_return,
        rank_accuracy,
    })
}

pub fn cmd_verify(opts: &VerifyOptions) -> Result<Vec<CheckResult>> {
    Ok(run_verify(opts)?)
}

fn fmt_opt(x: Option<f64>, digits: usize) -> String {
    x.map(|v| format!("{v:.digits$}")).unwrap_or_else(|| "–".into())
}

/// Markdown table of the final metrics row of each CSV, one row per file.
pub fn cmd_report(files: &[PathBuf]) -> Result<String> {
    if files.is_empty() {
        bail!("no metrics files to report");
    }
    let mut table = String::from("| method | steps | loss_pref | loss_extreme_v | loss_wbc_mean | return (mean ± std) | rank_accuracy |\n");
    table.push_str("|---|---|---|---|---|---|---|\n");
    for f in files {
        let mut reader = csv::Reader::from_path(f).with_context(|| format!("reading {}", f.display()))?;
        let headers = reader.headers()?.clone();
        let last = reader
            .records()
            .last()
            .ok_or_else(|| anyhow!("{} has no rows", f.display()))?
            .with_context(|| format!("parsing {}", f.display()))?;
        let col = |name: &str| -> Result<Option<f64>> {
            let k = headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("{} lacks column {name}", f.display()))?;
            let cell = &last[k];
            if cell.is_empty() {
                Ok(None)
            } else {
                Ok(Some(cell.parse().with_context(|| format!("{}: bad {name} `{cell}`", f.display()))?))
            }
        };
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
        let method = stem.strip_prefix("metrics_").unwrap_or(stem);
        let ret = match (col("mean_return")?, col("std_return")?) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            _ => "–".into(),
        };
        table.push_str(&format!(
            "| {method} | {} | {} | {} | {} | {ret} | {} |\n",
            col("step")?.map(|s| s as u64).unwrap_or(0),
            fmt_opt(col("loss_pref")?, 3),
            fmt_opt(col("loss_extreme_v")?, 4),
            fmt_opt(col("loss_wbc_mean")?, 3),
            fmt_opt(col("rank_accuracy")?, 3),
        ));
    }
    Ok(table)
}

/// `metrics*.csv` files in a directory, sorted by name.
pub fn find_metrics(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("metrics"))
        })
        .collect();
    files.sort();
    Ok(files)
}

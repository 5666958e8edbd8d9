//! Writing campaign artifacts: statistics JSON, query histograms, PCA
//! coordinates and adversarial images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::RunRecord;

use super::campaign::{CampaignResult, CampaignStats, PointRun};
use super::pca::pca_trajectory;

/// Per-point line of `runs.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub index: usize,
    pub label: usize,
    pub clean_prediction: usize,
    pub attacked: bool,
    pub seed: u64,
    pub success: bool,
    pub queries_used: u64,
    pub queries_to_success: Option<u64>,
    pub final_prediction: Option<usize>,
    pub l2: Option<f64>,
    pub linf: Option<f64>,
    pub restarts: usize,
    pub error: Option<String>,
}

impl From<&PointRun> for RunReport {
    fn from(run: &PointRun) -> Self {
        let o = run.outcome.as_ref();
        RunReport {
            index: run.index,
            label: run.label,
            clean_prediction: run.clean_prediction,
            attacked: run.attacked(),
            seed: run.seed,
            success: o.is_some_and(|o| o.success),
            queries_used: o.map_or(0, |o| o.queries_used),
            queries_to_success: o.and_then(|o| o.queries_to_success),
            final_prediction: o.map(|o| o.final_prediction),
            l2: o.map(|o| o.l2),
            linf: o.map(|o| o.linf),
            restarts: o.map_or(0, |o| o.restarts.len()),
            error: run.error.clone(),
        }
    }
}

/// Histogram of queries per attacked run over `[0, Q]` with equal-width
/// bins; failures count `Q` and the last bin is closed on the right.
pub fn query_histogram(values: &[u64], query_budget: u64, bins: usize) -> Vec<(f64, f64, usize)> {
    let bins = bins.max(1);
    let width = query_budget as f64 / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if width > 0.0 { (v as f64 / width).floor() as usize } else { 0 };
        counts[k.min(bins - 1)] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| (k as f64 * width, (k + 1) as f64 * width, c))
        .collect()
}

/// Queries of every completed attacked run, failures counting `Q`.
pub fn histogram_values(result: &CampaignResult) -> Vec<u64> {
    let q = result.stats.query_budget;
    result
        .runs
        .iter()
        .filter_map(|r| r.outcome.as_ref())
        .map(|o| o.queries_to_success.unwrap_or(q))
        .collect()
}

fn write(path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

pub fn stats_json(stats: &CampaignStats) -> Result<String> {
    Ok(serde_json::to_string_pretty(stats)?)
}

/// Writes `stats.json`, `runs.json`, `records.json` (without trajectories),
/// `histogram.csv`, `pca/run_<i>.csv`, `pca/explained.csv` and
/// `adversarial/run_<i>.tensor` into `out_dir`. Returns the written paths.
pub fn export_results(result: &CampaignResult, bins: usize, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mkdir = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mkdir(out_dir)?;

    let path = out_dir.join("stats.json");
    write(path.clone(), stats_json(&result.stats)?)?;
    written.push(path);

    let reports: Vec<RunReport> = result.runs.iter().map(RunReport::from).collect();
    let path = out_dir.join("runs.json");
    write(path.clone(), serde_json::to_string_pretty(&reports)?)?;
    written.push(path);

    let records: Vec<Vec<RunRecord>> = result
        .runs
        .iter()
        .map(|r| {
            r.outcome.as_ref().map_or_else(Vec::new, |o| {
                o.restarts
                    .iter()
                    .map(|rec| RunRecord { trajectory: Vec::new(), ..rec.clone() })
                    .collect()
            })
        })
        .collect();
    let path = out_dir.join("records.json");
    write(path.clone(), serde_json::to_string(&records)?)?;
    written.push(path);

    let mut csv = String::from("bin_start,bin_end,count\n");
    for (a, b, c) in query_histogram(&histogram_values(result), result.stats.query_budget, bins) {
        writeln!(csv, "{a},{b},{c}").expect("string write");
    }
    let path = out_dir.join("histogram.csv");
    write(path.clone(), csv)?;
    written.push(path);

    let pca_dir = out_dir.join("pca");
    let adv_dir = out_dir.join("adversarial");
    let mut explained = String::from("run,component,fraction\n");
    for run in &result.runs {
        let Some(outcome) = &run.outcome else { continue };
        if let Some(last) = outcome.restarts.last() {
            if last.trajectory.len() >= 3 {
                mkdir(&pca_dir)?;
                let pca = pca_trajectory(&last.trajectory)?;
                let mut csv = String::from("step,pc1,pc2,residual\n");
                for (t, (c, r)) in pca.coords.iter().zip(&pca.residuals).enumerate() {
                    writeln!(csv, "{t},{},{},{r}", c[0], c[1]).expect("string write");
                }
                for (k, f) in pca.explained.iter().enumerate() {
                    writeln!(explained, "{},{k},{f}", run.index).expect("string write");
                }
                let path = pca_dir.join(format!("run_{}.csv", run.index));
                write(path.clone(), csv)?;
                written.push(path);
            }
        }
        mkdir(&adv_dir)?;
        let path = adv_dir.join(format!("run_{}.tensor", run.index));
        outcome.adversarial.write(&path)?;
        written.push(path);
    }
    if pca_dir.exists() {
        let path = pca_dir.join("explained.csv");
        write(path.clone(), explained)?;
        written.push(path);
    }
    Ok(written)
}

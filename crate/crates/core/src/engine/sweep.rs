//! Parameter sweeps: one config key over a list of values, several
//! replications each, run in parallel.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{emit_report, parse_value, run_episode, set_path, Config, EngineError, ExperimentReport, PolicyKind};

/// Environment variable holding the sweep worker count.
pub const THREADS_ENV: &str = "FOGSLICE_THREADS";

/// Worker threads: `FOGSLICE_THREADS` if set to a positive integer, else the
/// number of available cores.
pub fn sweep_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub value: String,
    pub rep: usize,
    pub seed: u64,
    pub report: ExperimentReport,
}

/// Mean and standard error over the replications of one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub reps: usize,
    pub offloaded_mean: f64,
    pub offloaded_stderr: f64,
    pub discounted_mean: f64,
    pub discounted_stderr: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub axis: String,
    pub policy: PolicyKind,
    pub runs: Vec<SweepRun>,
    pub rows: Vec<SweepRow>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `reps` episodes for each value of `axis`. Every config is built and
/// validated before any episode starts. Replication `r` uses seed
/// `base.seed + r` for every value, so values are compared on common seeds.
pub fn run_sweep(
    base: &Config,
    policy: Option<PolicyKind>,
    axis: &str,
    values: &[String],
    reps: usize,
) -> Result<SweepResult, EngineError> {
    let table = base.to_table();
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut t = table.clone();
        set_path(&mut t, axis, parse_value(v))?;
        let mut cfg = Config::from_table(t).map_err(|e| EngineError::Config(format!("{axis} = {v}: {e}")))?;
        cfg.base_dir = base.base_dir.clone();
        cfg.validate()?;
        configs.push(cfg);
    }
    if values.is_empty() {
        // Still reject unknown axes.
        set_path(&mut table.clone(), axis, toml::Value::Integer(0))?;
    }
    let policy = policy.unwrap_or(base.policy);
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|v| (0..reps).map(move |r| (v, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads())
        .build()
        .map_err(|e| EngineError::Runtime(e.to_string()))?;
    let runs: Vec<SweepRun> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, r)| {
                let seed = base.seed.wrapping_add(r as u64);
                run_episode(&configs[v], policy, seed).map(|report| SweepRun {
                    value: values[v].clone(),
                    rep: r,
                    seed,
                    report,
                })
            })
            .collect::<Result<_, _>>()
    })?;
    let rows = values
        .iter()
        .enumerate()
        .map(|(v, value)| {
            let mine = &runs[v * reps..(v + 1) * reps];
            let off: Vec<f64> = mine.iter().map(|r| r.report.aggregates.total_offloaded).collect();
            let disc: Vec<f64> = mine.iter().map(|r| r.report.aggregates.discounted_total).collect();
            let (om, os) = mean_stderr(&off);
            let (dm, ds) = mean_stderr(&disc);
            SweepRow {
                value: value.clone(),
                reps,
                offloaded_mean: om,
                offloaded_stderr: os,
                discounted_mean: dm,
                discounted_stderr: ds,
            }
        })
        .collect();
    Ok(SweepResult {
        axis: axis.to_string(),
        policy,
        runs,
        rows,
    })
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    axis: &'a str,
    policy: PolicyKind,
    rows: &'a [SweepRow],
}

/// Writes `run-v{i}-r{rep}/` report directories, `sweep.csv` and `sweep.json`.
pub fn emit_sweep(result: &SweepResult, dir: &Path) -> Result<(), EngineError> {
    fs::create_dir_all(dir)?;
    for run in &result.runs {
        let vi = result.rows.iter().position(|r| r.value == run.value).unwrap_or(0);
        emit_report(&run.report, &dir.join(format!("run-v{vi}-r{}", run.rep)))?;
    }
    let mut w = csv::Writer::from_path(dir.join("sweep.csv")).map_err(|e| EngineError::Runtime(e.to_string()))?;
    w.write_record([
        result.axis.as_str(),
        "reps",
        "offloaded_mean",
        "offloaded_stderr",
        "discounted_mean",
        "discounted_stderr",
    ])
    .map_err(|e| EngineError::Runtime(e.to_string()))?;
    for r in &result.rows {
        w.write_record([
            r.value.clone(),
            r.reps.to_string(),
            r.offloaded_mean.to_string(),
            r.offloaded_stderr.to_string(),
            r.discounted_mean.to_string(),
            r.discounted_stderr.to_string(),
        ])
        .map_err(|e| EngineError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    let summary = SweepSummary {
        axis: &result.axis,
        policy: result.policy,
        rows: &result.rows,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| EngineError::Runtime(e.to_string()))?;
    fs::write(dir.join("sweep.json"), json + "\n")?;
    Ok(())
}

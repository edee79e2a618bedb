use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{jsonl, unix_now, RunManifest, Staged};
use crate::diagnostics::{meanfield_scan, nonincreasing_until, theoretical_rate, window_until, MeanFieldScan};
use crate::error::{Error, Result};
use crate::objectives::BenchmarkProblem;
use crate::particle_sde::{decay_exponent_fit, run_sde, SdeTrajectory};

/// Interpolation parameter used when comparing fitted and predicted decay.
pub const TAU_THEORY: f64 = 0.5;
/// Decay is fitted until `V` first falls to this fraction of `V(0)`.
pub const DECAY_WINDOW: f64 = 1e-3;

/// The benchmark problem a configuration describes.
pub fn benchmark_problem(config: &ExperimentConfig) -> Result<BenchmarkProblem> {
    let p = &config.problem;
    let kind = p.benchmark().ok_or_else(|| {
        Error::Config(vec![format!(
            "problem.objective = \"{}\" is not a benchmark; particle runs need quadratic or rastrigin",
            p.objective
        )])
    })?;
    BenchmarkProblem::wells(kind, p.clusters, p.dim, p.offset, p.scale)
}

/// Decay statistics of one particle-system run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySummary {
    pub seed: u64,
    /// Fitted exponential rate of `V₁+…+V_K` over the decay window.
    pub fitted_rate: f64,
    pub theoretical_rate: f64,
    pub theory_regime: bool,
    /// `V` never increased between checkpoints inside the decay window.
    pub monotone: bool,
    /// Whether `V` reached `DECAY_WINDOW · V(0)` at all.
    pub reached_window: bool,
    pub final_v_sum: f64,
    /// Largest final `|m_k − θ_k*|` over clusters.
    pub max_consensus_error: f64,
}

pub fn decay_summary(traj: &SdeTrajectory, problem: &BenchmarkProblem, config: &ExperimentConfig, seed: u64) -> Result<DecaySummary> {
    let series = traj.v_series();
    let v0 = series.first().map_or(0.0, |p| p.1);
    let threshold = DECAY_WINDOW * v0;
    let window = window_until(&series, threshold);
    let theory = theoretical_rate(&config.hyperparams, problem.grad_lipschitz(), problem.dim(), TAU_THEORY);
    let last = traj.records.last().expect("trajectory has its initial record");
    Ok(DecaySummary {
        seed,
        fitted_rate: decay_exponent_fit(window)?,
        theoretical_rate: theory.rate,
        theory_regime: theory.theory_regime,
        monotone: nonincreasing_until(&series, threshold),
        reached_window: series.iter().any(|p| p.1 <= threshold),
        final_v_sum: last.v_sum,
        max_consensus_error: last.consensus_error.iter().copied().fold(0.0, f64::max),
    })
}

/// Runs the particle system for every configured seed and writes one JSONL
/// trajectory per seed plus `decay.csv`.
pub fn run_sde_experiment(config: &ExperimentConfig, out: &Path) -> Result<(RunManifest, Vec<DecaySummary>)> {
    config.validate()?;
    let problem = benchmark_problem(config)?;
    let margin = config.hyperparams.theory_margin(problem.grad_lipschitz(), problem.dim());
    if margin <= 0.0 {
        log::warn!("parameters outside the decay regime (margin {margin:.4}); the predicted rate is negative");
    }
    let started_at = unix_now();
    let results: Vec<(u64, SdeTrajectory)> = config
        .schedule
        .seeds
        .par_iter()
        .map(|&seed| run_sde(&problem, &config.hyperparams, &config.sde, seed).map(|t| (seed, t)))
        .collect::<Result<_>>()?;
    let summaries: Vec<DecaySummary> = results
        .iter()
        .map(|(seed, t)| decay_summary(t, &problem, config, *seed))
        .collect::<Result<_>>()?;

    let mut dir = Staged::create(out)?;
    let config_file = dir.write("config.toml", config.to_toml().as_bytes())?;
    let mut metric_files = Vec::new();
    for (seed, t) in &results {
        metric_files.push(dir.write(format!("sde/seed{seed}.jsonl"), &jsonl(&t.records)?)?);
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in &summaries {
        w.serialize(s)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("decay.csv", e.into_error()))?;
    let summary_file = dir.write("decay.csv", &bytes)?;
    let manifest = finish(&mut dir, config, "sde", config.schedule.seeds.clone(), started_at, config_file, metric_files, summary_file)?;
    dir.commit();
    Ok((manifest, summaries))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    dir: &mut Staged,
    config: &ExperimentConfig,
    kind: &str,
    seeds: Vec<u64>,
    started_at: u64,
    config_file: PathBuf,
    metric_files: Vec<PathBuf>,
    summary_file: PathBuf,
) -> Result<RunManifest> {
    let manifest = RunManifest {
        kind: kind.into(),
        config_hash: config.hash(),
        config_file,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seeds,
        protocols: Vec::new(),
        started_at,
        finished_at: unix_now(),
        metric_files,
        summary_file: Some(summary_file),
    };
    dir.write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

#[derive(Serialize)]
struct ScanRow {
    n: usize,
    mean: f64,
    stderr: f64,
}

/// Runs the mean-field scan and writes `scan.csv` and `scan.json`.
pub fn run_scan_experiment(config: &ExperimentConfig, out: &Path) -> Result<(RunManifest, MeanFieldScan)> {
    config.validate()?;
    let problem = benchmark_problem(config)?;
    let started_at = unix_now();
    let scan = meanfield_scan(&problem, &config.hyperparams, &config.scan)?;

    let mut dir = Staged::create(out)?;
    let config_file = dir.write("config.toml", config.to_toml().as_bytes())?;
    let json = dir.write("scan.json", serde_json::to_string_pretty(&scan)?.as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for e in &scan.entries {
        w.serialize(ScanRow {
            n: e.n,
            mean: e.mean,
            stderr: e.stderr,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("scan.csv", e.into_error()))?;
    let summary_file = dir.write("scan.csv", &bytes)?;
    let manifest = finish(&mut dir, config, "scan", config.scan.seeds.clone(), started_at, config_file, vec![json], summary_file)?;
    dir.commit();
    Ok((manifest, scan))
}

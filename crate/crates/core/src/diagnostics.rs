//! Measurements taken by the harness: variance functionals, decay-rate
//! comparisons, sliced Wasserstein distances, mean-field scans and
//! successful-selection-rate curves.
//!
//! Everything here may read hidden cluster labels; none of it feeds back
//! into the algorithms.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcbo::{oracle_sr, EpsilonSchedule, RoundLog};
use crate::objectives::BenchmarkProblem;
use crate::particle_sde::{em_step, HyperParams, InitSpec, ParticleCloud};
use crate::rng::{self, Domain};
use crate::vecops;

/// `V(ρ_k) = ½·mean |θ − θ_k*|²` over each cluster's particles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub per_cluster: Vec<f64>,
    pub total: f64,
}

pub fn variance_report(cloud: &ParticleCloud, minimizers: &[Vec<f64>]) -> Result<VarianceReport> {
    variance_of_rows(&cloud.rows(), cloud.hidden_labels(), minimizers)
}

/// Same as [`variance_report`] for loose rows with explicit labels.
pub fn variance_of_rows(rows: &[&[f64]], labels: &[usize], minimizers: &[Vec<f64>]) -> Result<VarianceReport> {
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    if clusters > minimizers.len() {
        return Err(Error::UnsupportedDiagnostic(format!(
            "variance needs a minimizer for each of {clusters} clusters, got {}",
            minimizers.len()
        )));
    }
    let mut sums = vec![0.0; clusters];
    let mut counts = vec![0usize; clusters];
    for (p, &k) in rows.iter().zip(labels) {
        sums[k] += vecops::dist_sq(p, &minimizers[k]);
        counts[k] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("cluster {k} has no particles")));
    }
    let per_cluster: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| 0.5 * s / c as f64).collect();
    Ok(VarianceReport {
        total: per_cluster.iter().sum(),
        per_cluster,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoreticalRate {
    pub rate: f64,
    /// False when the parameters violate the decay condition; `rate` is then
    /// still reported with its sign.
    pub theory_regime: bool,
}

/// `(1 − tau_theory)(2λ₁ − 2λ₂M − dσ₁² − dσ₂²M²)`.
pub fn theoretical_rate(hp: &HyperParams, grad_lipschitz: f64, dim: usize, tau_theory: f64) -> TheoreticalRate {
    let margin = hp.theory_margin(grad_lipschitz, dim);
    TheoreticalRate {
        rate: (1.0 - tau_theory) * margin,
        theory_regime: margin > 0.0,
    }
}

/// Prefix of `series` up to and including the first sample `<= threshold`.
pub fn window_until(series: &[(f64, f64)], threshold: f64) -> &[(f64, f64)] {
    match series.iter().position(|&(_, v)| v <= threshold) {
        Some(i) => &series[..=i],
        None => series,
    }
}

/// True when the values never increase between consecutive samples before
/// the first one reaching `threshold`.
pub fn nonincreasing_until(series: &[(f64, f64)], threshold: f64) -> bool {
    window_until(series, threshold).windows(2).all(|w| w[1].1 <= w[0].1)
}

/// Exact W₁ between two 1-D empirical measures with uniform weights.
pub fn w1_1d(xs: &mut [f64], ys: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    // Walk the merged quantile breakpoints i/n and j/m in integer units of 1/(n·m).
    let (mut i, mut j, mut u) = (0usize, 0usize, 0usize);
    let mut total = 0.0;
    while i < n && j < m {
        let next_x = (i + 1) * m;
        let next_y = (j + 1) * n;
        let next = next_x.min(next_y);
        total += (next - u) as f64 * (xs[i] - ys[j]).abs();
        u = next;
        if next_x == next {
            i += 1;
        }
        if next_y == next {
            j += 1;
        }
    }
    total / (n * m) as f64
}

/// `count` directions drawn uniformly from the unit sphere in `dim` dimensions.
pub fn random_directions<R: Rng>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            let n = vecops::norm(&v);
            if n > 1e-12 {
                break v.into_iter().map(|x| x / n).collect();
            }
        })
        .collect()
}

/// Sliced W₁ over the given projection directions.
pub fn sliced_w1_along(a: &[&[f64]], b: &[&[f64]], directions: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("sliced W1 of an empty cloud"));
    }
    if directions.is_empty() {
        return Err(Error::invalid("sliced W1 needs at least one projection"));
    }
    let dim = a[0].len();
    for p in a.iter().chain(b) {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
    }
    if directions[0].len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: directions[0].len(),
        });
    }
    let mut xs = vec![0.0; a.len()];
    let mut ys = vec![0.0; b.len()];
    let mut sum = 0.0;
    for dir in directions {
        xs.iter_mut().zip(a).for_each(|(x, p)| *x = vecops::dot(p, dir));
        ys.iter_mut().zip(b).for_each(|(y, p)| *y = vecops::dot(p, dir));
        sum += w1_1d(&mut xs, &mut ys);
    }
    Ok(sum / directions.len() as f64)
}

/// Sliced W₁: exact 1-D W₁ of the projected clouds averaged over
/// `n_projections` random unit directions.
pub fn sliced_w1<R: Rng>(a: &[&[f64]], b: &[&[f64]], n_projections: usize, rng: &mut R) -> Result<f64> {
    let dim = a.first().or(b.first()).map_or(0, |p| p.len());
    let dirs = random_directions(dim.max(1), n_projections, rng);
    sliced_w1_along(a, b, &dirs)
}

/// Settings of a mean-field convergence scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Particles per cluster; increasing, the last entry is the reference.
    pub n_list: Vec<usize>,
    pub seeds: Vec<u64>,
    pub steps: u64,
    /// Number of evenly spaced checkpoints, including time 0 and the end.
    pub checkpoints: usize,
    pub projections: usize,
    pub init: InitSpec,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_list: vec![50, 100, 200, 400, 800],
            seeds: (0..10).collect(),
            steps: 200,
            checkpoints: 20,
            projections: 64,
            init: InitSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanEntry {
    pub n: usize,
    /// Discrepancy to the reference, averaged over seeds.
    pub mean: f64,
    pub stderr: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldScan {
    pub reference_n: usize,
    pub entries: Vec<ScanEntry>,
    /// Discrepancy decreases along the non-reference entries, with at most one inversion.
    pub decreasing: bool,
}

fn checkpoint_clouds(
    problem: &BenchmarkProblem,
    hp: &HyperParams,
    per_cluster: usize,
    cfg: &ScanConfig,
    seed: u64,
) -> Result<Vec<ParticleCloud>> {
    let k = cfg.checkpoints.max(2);
    let marks: Vec<u64> = (0..k)
        .map(|i| ((i as f64) * cfg.steps as f64 / (k - 1) as f64).round() as u64)
        .collect();
    let mut cloud = ParticleCloud::sample(problem.clusters(), per_cluster, problem.dim(), &cfg.init, seed)?;
    let mut out = Vec::with_capacity(k);
    for &mark in &marks {
        while cloud.step_count() < mark {
            em_step(&mut cloud, &problem.cluster_objectives, hp)?;
        }
        out.push(cloud.clone());
    }
    Ok(out)
}

fn discrepancy(run: &[ParticleCloud], reference: &[ParticleCloud], clusters: usize, dirs: &[Vec<f64>]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, b) in run.iter().zip(reference) {
        let mut mean = 0.0;
        for k in 0..clusters {
            mean += sliced_w1_along(&a.cluster_rows(k), &b.cluster_rows(k), dirs)?;
        }
        worst = worst.max(mean / clusters as f64);
    }
    Ok(worst)
}

/// Discrepancy between particle systems of growing size and a large
/// reference system: the maximum over checkpoints of the cluster-averaged
/// sliced W₁, averaged over seeds.
pub fn meanfield_scan(problem: &BenchmarkProblem, hp: &HyperParams, cfg: &ScanConfig) -> Result<MeanFieldScan> {
    let reference_n = *cfg
        .n_list
        .last()
        .ok_or_else(|| Error::invalid("mean-field scan needs a nonempty N list"))?;
    if cfg.n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("mean-field scan N list must be strictly increasing"));
    }
    if cfg.seeds.is_empty() {
        return Err(Error::invalid("mean-field scan needs at least one seed"));
    }
    let clusters = problem.clusters();
    let per_seed: Vec<Vec<f64>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run_seed = |n: usize| rng::derive_seed(seed, n as u64);
            let reference = checkpoint_clouds(problem, hp, reference_n, cfg, run_seed(reference_n))?;
            let dirs = random_directions(problem.dim(), cfg.projections.max(1), &mut rng::stream(seed, Domain::Projections, 0, 0));
            cfg.n_list
                .iter()
                .map(|&n| {
                    if n == reference_n {
                        return Ok(0.0);
                    }
                    let run = checkpoint_clouds(problem, hp, n, cfg, run_seed(n))?;
                    discrepancy(&run, &reference, clusters, &dirs)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let s = per_seed.len() as f64;
    let entries: Vec<ScanEntry> = cfg
        .n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let vals: Vec<f64> = per_seed.iter().map(|row| row[i]).collect();
            let (mean, sd) = mean_std(&vals);
            ScanEntry {
                n,
                mean,
                stderr: sd / s.sqrt(),
                per_seed: vals,
            }
        })
        .collect();
    let compared: Vec<f64> = entries.iter().filter(|e| e.n != reference_n).map(|e| e.mean).collect();
    let inversions = compared.windows(2).filter(|w| w[1] >= w[0]).count();
    Ok(MeanFieldScan {
        reference_n,
        entries,
        decreasing: inversions <= 1,
    })
}

/// Sample mean and (n−1)-normalized standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fraction of `selected` agents sharing `agent`'s hidden cluster.
pub fn selection_rate(agent: usize, selected: &[usize], labels: &[usize]) -> Option<f64> {
    if selected.is_empty() {
        return None;
    }
    let hits = selected.iter().filter(|&&i| labels[i] == labels[agent]).count();
    Some(hits as f64 / selected.len() as f64)
}

/// Average successful selection rate of a round over agents that selected peers.
pub fn round_sr(log: &RoundLog, labels: &[usize]) -> Result<Option<f64>> {
    let selections = log
        .selections
        .as_ref()
        .ok_or_else(|| Error::UnsupportedDiagnostic(format!("round {} has no selection log", log.round)))?;
    let rates: Vec<f64> = selections
        .iter()
        .filter_map(|s| selection_rate(s.agent, &s.selected(), labels))
        .collect();
    Ok(if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrPoint {
    pub round: usize,
    pub sr: f64,
    pub oracle_sr: f64,
}

/// Per-round empirical selection rate paired with the oracle expectation.
pub fn sr_curve(logs: &[RoundLog], labels: &[usize], schedule: &EpsilonSchedule) -> Result<Vec<SrPoint>> {
    let clusters = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; clusters];
    labels.iter().for_each(|&k| sizes[k] += 1);
    let mut out = Vec::with_capacity(logs.len());
    for log in logs {
        if let Some(sr) = round_sr(log, labels)? {
            out.push(SrPoint {
                round: log.round,
                sr,
                oracle_sr: oracle_sr(log.round, schedule, &sizes),
            });
        }
    }
    Ok(out)
}

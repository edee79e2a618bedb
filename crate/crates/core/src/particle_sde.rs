//! Euler–Maruyama integration of the clustered consensus particle system.
//!
//! Each particle of hidden class `k` follows
//!
//! ```text
//! θ' = θ − λ₁γ(θ − m_k) − λ₂γ∇L_k(θ) + σ₁√γ |θ − m_k| z + σ₂√γ |∇L_k(θ)| z̃
//! ```
//!
//! where `m_k` is the consensus point of *all* particles under `L_k` and
//! `z`, `z̃` are independent standard Gaussian vectors. Noise for particle `i`
//! at step `n` comes from the stream `(seed, Sde, i, n)`, so the result does
//! not depend on how the particle loop is scheduled.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{consensus_point, ConsensusPoint};
use crate::diagnostics::variance_report;
use crate::error::{Error, Result};
use crate::fedcbo::EpsilonSchedule;
use crate::objectives::{BenchmarkProblem, SharedObjective};
use crate::rng::{self, Domain};
use crate::vecops;

/// Parameters shared by the particle system and the federated protocols.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperParams {
    /// Drift strength toward the consensus point.
    pub lambda1: f64,
    /// Gradient drift strength; local SGD runs with rate `lambda2 * gamma`.
    pub lambda2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    /// Inverse temperature of the Gibbs weights.
    pub alpha: f64,
    /// Discretization step size.
    pub gamma: f64,
    /// Local gradient steps per communication round.
    pub local_steps: usize,
    /// Number of peer models each agent downloads per round.
    pub download_budget: usize,
    pub epsilon: EpsilonSchedule,
    /// Heavy-ball momentum of local updates; 0 disables it.
    pub momentum: f64,
    /// Mini-batch size for local updates; `None` uses the full shard.
    pub batch_size: Option<usize>,
    /// Whether an agent's own model takes part in its consensus point.
    pub include_self: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            lambda1: 10.0,
            lambda2: 1.0,
            sigma1: 0.0,
            sigma2: 0.0,
            alpha: 10.0,
            gamma: 0.1,
            local_steps: 5,
            download_budget: 10,
            epsilon: EpsilonSchedule::default(),
            momentum: 0.0,
            batch_size: None,
            include_self: true,
        }
    }
}

impl HyperParams {
    /// `2λ₁ − 2λ₂M − dσ₁² − dσ₂²M²` for gradient Lipschitz constant `M`.
    pub fn theory_margin(&self, grad_lipschitz: f64, dim: usize) -> f64 {
        let d = dim as f64;
        let m = grad_lipschitz;
        2.0 * self.lambda1 - 2.0 * self.lambda2 * m - d * self.sigma1 * self.sigma1 - d * self.sigma2 * self.sigma2 * m * m
    }

    /// True when the consensus drift dominates gradient drift and noise.
    pub fn theory_regime(&self, grad_lipschitz: f64, dim: usize) -> bool {
        self.theory_margin(grad_lipschitz, dim) > 0.0
    }

    /// Every violated constraint, one message per field.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let nonneg = [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("sigma1", self.sigma1),
            ("sigma2", self.sigma2),
            ("alpha", self.alpha),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                out.push(format!("hyperparams.{name} must be finite and >= 0 (got {v})"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            out.push(format!("hyperparams.gamma must be > 0 (got {})", self.gamma));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            out.push(format!("hyperparams.momentum must lie in [0, 1) (got {})", self.momentum));
        }
        if self.batch_size == Some(0) {
            out.push("hyperparams.batch_size must be >= 1".into());
        }
        out.extend(self.epsilon.problems());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

/// Positions of all agents plus their hidden cluster labels.
///
/// The labels belong to the harness: the dynamics read them only to pick
/// which loss drives a particle's own drift and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    dim: usize,
    positions: Vec<f64>,
    labels: Vec<usize>,
    step_count: u64,
    seed: u64,
}

impl ParticleCloud {
    pub fn new(dim: usize, positions: Vec<f64>, labels: Vec<usize>, seed: u64) -> Result<Self> {
        if dim == 0 || labels.is_empty() {
            return Err(Error::invalid("particle cloud needs dim >= 1 and at least one particle"));
        }
        if positions.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                got: positions.len(),
            });
        }
        Ok(Self {
            dim,
            positions,
            labels,
            step_count: 0,
            seed,
        })
    }

    /// `per_cluster` particles for each of `clusters` classes, all drawn
    /// i.i.d. from the same initial law.
    pub fn sample(clusters: usize, per_cluster: usize, dim: usize, init: &InitSpec, seed: u64) -> Result<Self> {
        if clusters == 0 || per_cluster == 0 {
            return Err(Error::invalid("need at least one cluster and one particle per cluster"));
        }
        if init.std.is_nan() || init.std < 0.0 {
            return Err(Error::invalid(format!("init std must be >= 0 (got {})", init.std)));
        }
        let n = clusters * per_cluster;
        let mut positions = Vec::with_capacity(n * dim);
        for i in 0..n {
            let mut r = rng::stream(seed, Domain::Init, i as u64, 0);
            for _ in 0..dim {
                let z: f64 = StandardNormal.sample(&mut r);
                positions.push(init.mean + init.std * z);
            }
        }
        let labels = (0..n).map(|i| i / per_cluster).collect();
        Self::new(dim, positions, labels, seed)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn position(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> Vec<&[f64]> {
        self.positions.chunks_exact(self.dim).collect()
    }

    pub fn hidden_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn clusters(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    /// Positions of the particles whose hidden label is `k`.
    pub fn cluster_rows(&self, k: usize) -> Vec<&[f64]> {
        self.rows()
            .into_iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == k)
            .map(|(r, _)| r)
            .collect()
    }
}

/// Isotropic Gaussian initial law `N(mean·1, std²I)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub mean: f64,
    pub std: f64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { mean: 0.0, std: 3.0 }
    }
}

/// One consensus point per objective, each over every position. Takes no
/// labels: a cluster's consensus is computed without knowing who is in it.
pub fn cluster_consensus(positions: &[&[f64]], objectives: &[SharedObjective], alpha: f64) -> Result<Vec<ConsensusPoint>> {
    objectives
        .iter()
        .map(|obj| {
            let losses: Vec<f64> = positions.par_iter().map(|p| obj.eval(p)).collect();
            consensus_point(positions, &losses, alpha)
        })
        .collect()
}

/// A loss that overflows at some particle means the cloud has blown up.
fn diverged_at(step: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteLoss { index, .. } => Error::Divergence { step, particle: index },
        e => e,
    }
}

/// Advance every particle by one Euler–Maruyama step. Returns the consensus
/// points used for the step. On divergence the cloud is left untouched.
pub fn em_step(cloud: &mut ParticleCloud, objectives: &[SharedObjective], hp: &HyperParams) -> Result<Vec<ConsensusPoint>> {
    if hp.gamma.is_nan() || hp.gamma <= 0.0 {
        return Err(Error::invalid(format!("step size must be positive (got {})", hp.gamma)));
    }
    if cloud.clusters() > objectives.len() {
        return Err(Error::invalid(format!(
            "cloud has {} clusters but only {} objectives",
            cloud.clusters(),
            objectives.len()
        )));
    }
    let dim = cloud.dim;
    let rows = cloud.rows();
    let consensus = cluster_consensus(&rows, objectives, hp.alpha).map_err(diverged_at(cloud.step_count))?;

    let sqrt_g = hp.gamma.sqrt();
    let (seed, step) = (cloud.seed, cloud.step_count);
    let mut next = cloud.positions.clone();
    next.par_chunks_mut(dim)
        .zip(cloud.labels.par_iter())
        .enumerate()
        .for_each(|(i, (theta, &k))| {
            let obj = &objectives[k];
            let m = &consensus[k].value;
            let grad = obj.grad(theta);
            let to_m = vecops::sub(theta, m);
            let noise1 = hp.sigma1 * sqrt_g * vecops::norm(&to_m);
            let noise2 = hp.sigma2 * sqrt_g * vecops::norm(&grad);
            let mut r = rng::stream(seed, Domain::Sde, i as u64, step);
            for c in 0..dim {
                let z: f64 = StandardNormal.sample(&mut r);
                let zt: f64 = StandardNormal.sample(&mut r);
                theta[c] += -hp.lambda1 * hp.gamma * to_m[c] - hp.lambda2 * hp.gamma * grad[c] + noise1 * z + noise2 * zt;
            }
        });

    if let Some(bad) = next.chunks_exact(dim).position(|p| !vecops::all_finite(p)) {
        return Err(Error::Divergence {
            step: step + 1,
            particle: bad,
        });
    }
    cloud.positions = next;
    cloud.step_count += 1;
    Ok(consensus)
}

/// Size and recording cadence of a particle-system run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeConfig {
    pub particles_per_cluster: usize,
    pub steps: u64,
    /// Record a checkpoint every this many steps (step 0 and the last step are always recorded).
    pub record_every: u64,
    pub init: InitSpec,
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            particles_per_cluster: 200,
            steps: 5000,
            record_every: 10,
            init: InitSpec::default(),
        }
    }
}

/// One recorded checkpoint of a particle-system run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeRecord {
    pub step: u64,
    pub time: f64,
    /// `V(ρ_k)` per cluster.
    pub v: Vec<f64>,
    pub v_sum: f64,
    /// `|m_k − θ_k*|` per cluster.
    pub consensus_error: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct SdeTrajectory {
    pub records: Vec<SdeRecord>,
    pub final_cloud: ParticleCloud,
    pub final_consensus: Vec<Vec<f64>>,
    pub theory_regime: bool,
    pub theory_margin: f64,
}

impl SdeTrajectory {
    /// `(time, V₁+…+V_K)` for every checkpoint.
    pub fn v_series(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.time, r.v_sum)).collect()
    }

    /// One JSON object per checkpoint.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }
}

fn record(cloud: &ParticleCloud, problem: &BenchmarkProblem, hp: &HyperParams, minimizers: &[Vec<f64>]) -> Result<SdeRecord> {
    let report = variance_report(cloud, minimizers)?;
    let consensus =
        cluster_consensus(&cloud.rows(), &problem.cluster_objectives, hp.alpha).map_err(diverged_at(cloud.step_count))?;
    Ok(SdeRecord {
        step: cloud.step_count,
        time: cloud.step_count as f64 * hp.gamma,
        consensus_error: consensus
            .iter()
            .zip(minimizers)
            .map(|(c, m)| vecops::dist(&c.value, m))
            .collect(),
        v_sum: report.total,
        v: report.per_cluster,
    })
}

/// Simulate the particle system on a benchmark problem.
pub fn run_sde(problem: &BenchmarkProblem, hp: &HyperParams, cfg: &SdeConfig, seed: u64) -> Result<SdeTrajectory> {
    let mut cloud = ParticleCloud::sample(problem.clusters(), cfg.particles_per_cluster, problem.dim(), &cfg.init, seed)?;
    let minimizers = problem.minimizers();
    let every = cfg.record_every.max(1);
    let margin = hp.theory_margin(problem.grad_lipschitz(), problem.dim());

    let mut records = vec![record(&cloud, problem, hp, &minimizers)?];
    for _ in 0..cfg.steps {
        em_step(&mut cloud, &problem.cluster_objectives, hp)?;
        if cloud.step_count % every == 0 || cloud.step_count == cfg.steps {
            records.push(record(&cloud, problem, hp, &minimizers)?);
        }
    }
    let final_consensus = cluster_consensus(&cloud.rows(), &problem.cluster_objectives, hp.alpha)?
        .into_iter()
        .map(|c| c.value)
        .collect();
    Ok(SdeTrajectory {
        records,
        final_cloud: cloud,
        final_consensus,
        theory_regime: margin > 0.0,
        theory_margin: margin,
    })
}

/// Empirical exponential decay rate of a positive series: the least-squares
/// slope of `ln V` against time, sign flipped. Nonpositive samples are dropped.
pub fn decay_exponent_fit(series: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(_, v)| *v > 0.0 && v.is_finite())
        .map(|&(t, v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::invalid(format!(
            "decay fit needs at least two positive samples, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("decay fit needs samples at distinct times"));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    Ok(-(sxy / sxx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{make_quadratic, BenchmarkKind};
    use std::sync::Arc;

    fn quad(center: Vec<f64>) -> SharedObjective {
        let d = center.len();
        Arc::new(make_quadratic(d, center, 1.0).unwrap())
    }

    fn noiseless(lambda1: f64, lambda2: f64, gamma: f64) -> HyperParams {
        HyperParams {
            lambda1,
            lambda2,
            sigma1: 0.0,
            sigma2: 0.0,
            gamma,
            ..HyperParams::default()
        }
    }

    #[test]
    fn single_particle_without_gradient_is_a_fixed_point() {
        let mut cloud = ParticleCloud::new(2, vec![0.7, -1.3], vec![0], 1).unwrap();
        em_step(&mut cloud, &[quad(vec![0.0, 0.0])], &noiseless(3.0, 0.0, 0.1)).unwrap();
        assert_eq!(cloud.position(0), &[0.7, -1.3]);
        assert_eq!(cloud.step_count(), 1);
    }

    #[test]
    fn two_particles_contract_by_one_minus_lambda_gamma() {
        let (l1, g) = (2.0, 0.05);
        let mut cloud = ParticleCloud::new(1, vec![-1.0, 3.0], vec![0, 0], 1).unwrap();
        let objs = [quad(vec![0.5])];
        let mut gap = 4.0;
        for _ in 0..20 {
            em_step(&mut cloud, &objs, &noiseless(l1, 0.0, g)).unwrap();
            gap *= 1.0 - l1 * g;
            let d = cloud.position(1)[0] - cloud.position(0)[0];
            assert!((d - gap).abs() < 1e-12, "{d} vs {gap}");
        }
    }

    #[test]
    fn pure_gradient_step_matches_arithmetic() {
        let mut cloud = ParticleCloud::new(2, vec![3.0, -1.0], vec![0], 1).unwrap();
        let c = [1.0, 2.0];
        em_step(&mut cloud, &[quad(c.to_vec())], &noiseless(0.0, 1.0, 0.1)).unwrap();
        let expect = [3.0 - 0.2 * (3.0 - 1.0), -1.0 - 0.2 * (-1.0 - 2.0)];
        for (a, b) in cloud.position(0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_is_reported_and_state_kept() {
        let mut cloud = ParticleCloud::new(1, vec![0.0, 1e150], vec![0, 0], 1).unwrap();
        let before = cloud.clone();
        let objs: [SharedObjective; 1] = [Arc::new(crate::objectives::Quadratic::new(1, vec![0.0], 1.0, f64::INFINITY).unwrap())];
        let hp = noiseless(0.0, 1e160, 0.1);
        let err = em_step(&mut cloud, &objs, &hp).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1, particle: 1 }), "{err:?}");
        assert_eq!(cloud, before);
    }

    #[test]
    fn equal_losses_preserve_the_mean() {
        // Flat loss: consensus = mean, so the symmetric contraction keeps the mean.
        #[derive(Debug)]
        struct Flat;
        impl crate::objectives::Objective for Flat {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, _: &[f64]) -> f64 {
                1.0
            }
            fn grad(&self, _: &[f64]) -> Vec<f64> {
                vec![0.0, 0.0]
            }
        }
        let init = InitSpec { mean: 0.3, std: 2.0 };
        let mut cloud = ParticleCloud::sample(1, 50, 2, &init, 4).unwrap();
        let mean0 = vecops::mean_rows(cloud.rows(), 2);
        let objs: [SharedObjective; 1] = [Arc::new(Flat)];
        for _ in 0..30 {
            em_step(&mut cloud, &objs, &noiseless(1.5, 0.0, 0.1)).unwrap();
        }
        let mean1 = vecops::mean_rows(cloud.rows(), 2);
        assert!(vecops::dist(&mean0, &mean1) < 1e-12);
    }

    #[test]
    fn step_is_reproducible_and_thread_independent() {
        let problem = BenchmarkProblem::wells(BenchmarkKind::Quadratic, 2, 2, 2.0, 1.0).unwrap();
        let hp = HyperParams {
            lambda1: 4.0,
            lambda2: 0.1,
            sigma1: 0.2,
            sigma2: 0.1,
            alpha: 100.0,
            gamma: 0.005,
            ..HyperParams::default()
        };
        let cfg = SdeConfig {
            particles_per_cluster: 30,
            steps: 50,
            record_every: 5,
            init: InitSpec::default(),
        };
        let a = run_sde(&problem, &hp, &cfg, 9).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_sde(&problem, &hp, &cfg, 9).unwrap());
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_cloud, b.final_cloud);
        let c = run_sde(&problem, &hp, &cfg, 10).unwrap();
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn noiseless_single_cluster_variance_vanishes() {
        let problem = BenchmarkProblem::wells(BenchmarkKind::Quadratic, 1, 2, 0.0, 1.0).unwrap();
        let hp = HyperParams {
            lambda1: 1.0,
            gamma: 0.01,
            ..HyperParams::default()
        };
        let cfg = SdeConfig {
            particles_per_cluster: 20,
            steps: 2000,
            record_every: 100,
            init: InitSpec { mean: 0.0, std: 1.0 },
        };
        let t = run_sde(&problem, &hp, &cfg, 3).unwrap();
        let v0 = t.records[0].v_sum;
        let v_end = t.records.last().unwrap().v_sum;
        assert!(v_end < 1e-8 * v0, "v0 {v0}, v_end {v_end}");
        assert_eq!(t.records.len(), 21);
    }

    #[test]
    fn decay_fit_examples() {
        let exact: Vec<(f64, f64)> = (0..50).map(|i| {
            let t = i as f64 * 0.1;
            (t, (-3.0 * t).exp())
        }).collect();
        assert!((decay_exponent_fit(&exact).unwrap() - 3.0).abs() < 1e-9);
        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.5)).collect();
        assert_eq!(decay_exponent_fit(&flat).unwrap(), 0.0);
        let with_zero = vec![(0.0, 1.0), (1.0, 0.0), (2.0, (-2.0f64).exp())];
        assert!((decay_exponent_fit(&with_zero).unwrap() - 1.0).abs() < 1e-12);
        assert!(decay_exponent_fit(&[(0.0, 0.0), (1.0, -1.0)]).is_err());
        assert!(decay_exponent_fit(&[(0.0, 1.0)]).is_err());
    }

    #[test]
    fn consensus_only_decay_rate_is_two_lambda() {
        // V' = −2λ₁V once m sits at θ*; start symmetric about θ* so it does.
        let lambda1 = 1.5;
        let positions = vec![-1.0, 1.0, -0.5, 0.5, -2.0, 2.0];
        let mut cloud = ParticleCloud::new(1, positions, vec![0; 6], 0).unwrap();
        let objs = [quad(vec![0.0])];
        let hp = HyperParams {
            lambda1,
            lambda2: 0.0,
            alpha: 0.0,
            gamma: 0.001,
            ..HyperParams::default()
        };
        let mut series = Vec::new();
        for _ in 0..=1000 {
            let v = crate::diagnostics::variance_report(&cloud, &[vec![0.0]]).unwrap().total;
            series.push((cloud.step_count() as f64 * hp.gamma, v));
            em_step(&mut cloud, &objs, &hp).unwrap();
        }
        let rate = decay_exponent_fit(&series).unwrap();
        assert!((rate - 2.0 * lambda1).abs() < 0.05 * 2.0 * lambda1, "rate {rate}");
    }

    #[test]
    fn halving_the_step_halves_the_endpoint_error() {
        let objs = [quad(vec![1.0, -1.0])];
        let init = InitSpec { mean: 0.0, std: 1.5 };
        let endpoint = |gamma: f64| {
            let mut cloud = ParticleCloud::sample(1, 8, 2, &init, 11).unwrap();
            let hp = HyperParams {
                lambda1: 2.0,
                lambda2: 0.5,
                alpha: 1.0,
                gamma,
                ..HyperParams::default()
            };
            let steps = (1.0 / gamma).round() as usize;
            for _ in 0..steps {
                em_step(&mut cloud, &objs, &hp).unwrap();
            }
            cloud.positions.clone()
        };
        let reference = endpoint(0.1 / 256.0);
        let err = |g: f64| vecops::dist(&endpoint(g), &reference);
        for g in [0.1, 0.05] {
            let ratio = err(g) / err(g / 2.0);
            assert!((ratio - 2.0).abs() <= 0.5, "gamma {g}: ratio {ratio}");
        }
    }

    #[test]
    fn theory_regime_condition() {
        let hp = HyperParams {
            lambda1: 4.0,
            lambda2: 0.1,
            sigma1: 0.2,
            sigma2: 0.1,
            ..HyperParams::default()
        };
        assert!((hp.theory_margin(2.0, 2) - (8.0 - 0.4 - 0.08 - 0.08)).abs() < 1e-12);
        assert!(hp.theory_regime(2.0, 2));
        let weak = HyperParams { lambda1: 0.1, ..hp };
        assert!(!weak.theory_regime(2.0, 2));
    }

    #[test]
    fn hyperparams_validation_lists_every_problem() {
        let hp = HyperParams {
            gamma: 0.0,
            lambda1: -1.0,
            momentum: 1.5,
            ..HyperParams::default()
        };
        let p = hp.problems();
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(HyperParams::default().validate().is_ok());
    }
}

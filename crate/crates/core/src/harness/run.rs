use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ProblemConfig};
use crate::baselines::{fedavg_round, ifca_round, local_only_round, Protocol};
use crate::diagnostics::{mean_std, round_sr};
use crate::error::{Error, Result};
use crate::fedcbo::{fedcbo_round, oracle_sr, Federation, RoundLog};
use crate::learners::{Architecture, ClusteredDataset, EmpiricalLoss, Shard};
use crate::objectives::{BenchmarkProblem, ObjectiveKey, SharedObjective};
use crate::particle_sde::{HyperParams, InitSpec};
use crate::rng::{stream, Domain};
use crate::vecops;

use rand_distr::{Distribution, Normal};

enum Scorer {
    Benchmark { problem: BenchmarkProblem, init: InitSpec },
    Learner { arch: Architecture, test: Vec<Arc<Shard>> },
}

/// The agents of one run: their objectives, hidden cluster labels and the
/// held-out material used to score models.
pub struct Setup {
    objectives: Vec<SharedObjective>,
    labels: Vec<usize>,
    clusters: usize,
    scorer: Scorer,
}

impl Setup {
    pub fn build(problem: &ProblemConfig, seed: u64) -> Result<Self> {
        match &problem.objective {
            ObjectiveKey::Benchmark(kind) => {
                let bench = BenchmarkProblem::wells(*kind, problem.clusters, problem.dim, problem.offset, problem.scale)?;
                let (n, k) = (problem.agents, problem.clusters);
                let labels: Vec<usize> = (0..n).map(|j| j * k / n).collect();
                let objectives = labels.iter().map(|&c| bench.cluster_objectives[c].clone()).collect();
                Ok(Self {
                    objectives,
                    labels,
                    clusters: k,
                    scorer: Scorer::Benchmark {
                        problem: bench,
                        init: problem.init,
                    },
                })
            }
            ObjectiveKey::Learner(id) => {
                let data = if id == "synthetic" {
                    ClusteredDataset::generate(&problem.dataset_spec(seed))?
                } else {
                    ClusteredDataset::import(Path::new(id))?
                };
                Self::from_dataset(&data, problem.hidden)
            }
        }
    }

    pub fn from_dataset(data: &ClusteredDataset, hidden: usize) -> Result<Self> {
        let arch = Architecture {
            input: data.spec.input_dim,
            hidden,
            classes: data.spec.classes,
        };
        let objectives = data
            .shards
            .iter()
            .enumerate()
            .map(|(j, s)| {
                EmpiricalLoss::new(arch, s.clone())
                    .map(|l| Arc::new(l) as SharedObjective)
                    .map_err(|e| Error::Agent {
                        agent: j,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            objectives,
            labels: data.agent_cluster.clone(),
            clusters: data.spec.clusters,
            scorer: Scorer::Learner {
                arch,
                test: data.test.clone(),
            },
        })
    }

    pub fn agents(&self) -> usize {
        self.objectives.len()
    }

    pub fn objectives(&self) -> &[SharedObjective] {
        &self.objectives
    }

    pub fn hidden_labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.clusters];
        self.labels.iter().for_each(|&k| sizes[k] += 1);
        sizes
    }

    /// Starting model number `index`. Benchmark models are drawn from the
    /// configured Gaussian; network weights from the architecture's init.
    pub fn initial_model(&self, seed: u64, index: usize) -> Vec<f64> {
        let mut rng = stream(seed, Domain::ModelInit, index as u64, 0);
        match &self.scorer {
            Scorer::Benchmark { problem, init } => {
                let normal = Normal::new(init.mean, init.std).expect("validated init spec");
                (0..problem.dim()).map(|_| normal.sample(&mut rng)).collect()
            }
            Scorer::Learner { arch, .. } => arch.init_params(&mut rng),
        }
    }

    /// Loss used to pick the best shared model for cluster `k`.
    fn cluster_loss(&self, k: usize, model: &[f64]) -> f64 {
        match &self.scorer {
            Scorer::Benchmark { problem, .. } => problem.cluster_objectives[k].eval(model),
            Scorer::Learner { arch, test } => arch.loss_and_grad(model, &test[k], None, false).0,
        }
    }

    /// Per-agent model used for scoring, per protocol convention: agents'
    /// own models, or for shared models the lowest-loss one per cluster.
    fn scoring_models<'a>(&self, state: &'a State) -> Vec<&'a [f64]> {
        let shared: Vec<&[f64]> = match state {
            State::Fedcbo(fed) => return fed.models().iter().map(Vec::as_slice).collect(),
            State::Local(models) => return models.iter().map(Vec::as_slice).collect(),
            State::Fedavg(global) => vec![global.as_slice()],
            State::Ifca(servers) => servers.iter().map(Vec::as_slice).collect(),
        };
        let best: Vec<&[f64]> = (0..self.clusters)
            .map(|k| {
                shared
                    .iter()
                    .map(|m| self.cluster_loss(k, m))
                    .enumerate()
                    .fold((0, f64::INFINITY), |(bi, bl), (i, l)| if l < bl { (i, l) } else { (bi, bl) })
                    .0
            })
            .map(|i| shared[i])
            .collect();
        self.labels.iter().map(|&k| best[k]).collect()
    }

    /// Per-cluster accuracy or variance of the scoring models.
    pub fn evaluate_models(&self, models: &[&[f64]]) -> Evaluation {
        let per_agent: Vec<f64> = models
            .par_iter()
            .zip(self.labels.par_iter())
            .map(|(m, &k)| match &self.scorer {
                Scorer::Benchmark { problem, .. } => 0.5 * vecops::dist_sq(m, problem.cluster_objectives[k].minimizer().expect("benchmark minimizer")),
                Scorer::Learner { arch, test } => arch.accuracy(m, &test[k]),
            })
            .collect();
        let mut sums = vec![0.0; self.clusters];
        for (v, &k) in per_agent.iter().zip(&self.labels) {
            sums[k] += v;
        }
        let per_cluster: Vec<f64> = sums.iter().zip(self.cluster_sizes()).map(|(s, n)| s / n.max(1) as f64).collect();
        match self.scorer {
            Scorer::Benchmark { .. } => Evaluation {
                accuracy: None,
                macro_accuracy: None,
                v_sum: Some(per_cluster.iter().sum()),
                variance: Some(per_cluster),
            },
            Scorer::Learner { .. } => Evaluation {
                macro_accuracy: Some(per_cluster.iter().sum::<f64>() / self.clusters as f64),
                accuracy: Some(per_cluster),
                variance: None,
                v_sum: None,
            },
        }
    }
}

/// Test accuracy per cluster (learners) or `V` per cluster (benchmarks).
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Evaluation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub macro_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_sum: Option<f64>,
}

/// One line of a run's metric stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub participants: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_sr: Option<f64>,
    pub mean_local_loss: f64,
    pub excluded_models: usize,
    #[serde(flatten)]
    pub eval: Evaluation,
}

enum State {
    Fedcbo(Federation),
    Fedavg(Vec<f64>),
    Ifca(Vec<Vec<f64>>),
    Local(Vec<Vec<f64>>),
}

impl State {
    fn models(&self) -> Box<dyn Iterator<Item = &Vec<f64>> + '_> {
        match self {
            State::Fedcbo(f) => Box::new(f.models().iter()),
            State::Fedavg(g) => Box::new(std::iter::once(g)),
            State::Ifca(m) | State::Local(m) => Box::new(m.iter()),
        }
    }
}

/// Compute spent per agent; runs are comparable only when these agree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub rounds: usize,
    pub local_steps: usize,
    pub participation: f64,
    pub agents: usize,
}

/// Everything one `(protocol, seed)` run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub protocol: Protocol,
    pub seed: u64,
    pub budget: Budget,
    pub metrics: Vec<RoundMetrics>,
    /// Scores of the models at the end of the run.
    pub final_eval: Evaluation,
}

/// Runs `protocol` for `rounds` rounds on `setup`.
pub fn run_protocol(
    setup: &Setup,
    hp: &HyperParams,
    protocol: Protocol,
    rounds: usize,
    participation: f64,
    seed: u64,
) -> Result<ProtocolRun> {
    let n = setup.agents();
    let objectives = setup.objectives();
    let mut state = match protocol {
        Protocol::Fedcbo | Protocol::Local => {
            let models: Vec<Vec<f64>> = match setup.scorer {
                Scorer::Benchmark { .. } => (0..n).map(|j| setup.initial_model(seed, j)).collect(),
                Scorer::Learner { .. } => vec![setup.initial_model(seed, 0); n],
            };
            if protocol == Protocol::Fedcbo {
                State::Fedcbo(Federation::new(objectives.to_vec(), models, seed)?)
            } else {
                State::Local(models)
            }
        }
        Protocol::Fedavg => State::Fedavg(setup.initial_model(seed, 0)),
        Protocol::Ifca => State::Ifca((0..setup.clusters).map(|s| setup.initial_model(seed, s)).collect()),
    };
    let sizes = setup.cluster_sizes();
    let mut metrics = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let log: RoundLog = match &mut state {
            State::Fedcbo(fed) => fedcbo_round(fed, hp, round, participation)?,
            State::Fedavg(global) => fedavg_round(objectives, global, hp, seed, round, participation)?,
            State::Ifca(servers) => ifca_round(objectives, servers, hp, seed, round, participation)?,
            State::Local(models) => local_only_round(objectives, models, hp, seed, round, participation)?,
        };
        if let Some(bad) = state.models().position(|m| !vecops::all_finite(m)) {
            return Err(Error::Divergence {
                step: round as u64 + 1,
                particle: bad,
            });
        }
        let sr = if log.selections.is_some() {
            round_sr(&log, setup.hidden_labels())?
        } else {
            None
        };
        metrics.push(RoundMetrics {
            round,
            participants: log.participants.len(),
            epsilon: log.epsilon,
            oracle_sr: sr.map(|_| oracle_sr(round, &hp.epsilon, &sizes)),
            sr,
            mean_local_loss: log.mean_local_loss,
            excluded_models: log.excluded_models,
            eval: setup.evaluate_models(&setup.scoring_models(&state)),
        });
    }
    let final_eval = match metrics.last() {
        Some(m) => m.eval.clone(),
        None => setup.evaluate_models(&setup.scoring_models(&state)),
    };
    Ok(ProtocolRun {
        protocol,
        seed,
        budget: Budget {
            rounds,
            local_steps: hp.local_steps,
            participation,
            agents: n,
        },
        metrics,
        final_eval,
    })
}

/// Every `(protocol, seed)` run of a configuration, ordered by seed then by
/// protocol as listed. Seeds and protocols run in parallel.
pub fn run_all(config: &ExperimentConfig) -> Result<Vec<ProtocolRun>> {
    config.validate()?;
    let s = &config.schedule;
    let per_seed: Vec<Vec<ProtocolRun>> = s
        .seeds
        .par_iter()
        .map(|&seed| {
            let setup = Setup::build(&config.problem, seed)?;
            config
                .output
                .protocols
                .par_iter()
                .map(|&p| run_protocol(&setup, &config.hyperparams, p, s.rounds, s.participation, seed))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

/// Files written by a finished run. Written last: a run directory without
/// it is incomplete.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: String,
    /// SHA-256 of the resolved configuration file's bytes.
    pub config_hash: String,
    pub config_file: PathBuf,
    pub code_version: String,
    pub seeds: Vec<u64>,
    pub protocols: Vec<Protocol>,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    /// Paths relative to the run directory.
    pub metric_files: Vec<PathBuf>,
    pub summary_file: Option<PathBuf>,
}

pub(crate) fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Output directory that removes what it wrote unless [`commit`](Self::commit) is called.
pub(crate) struct Staged {
    root: PathBuf,
    created: Vec<PathBuf>,
    written: Vec<PathBuf>,
    done: bool,
}

impl Staged {
    pub(crate) fn create(root: &Path) -> Result<Self> {
        let mut s = Self {
            root: root.to_path_buf(),
            created: Vec::new(),
            written: Vec::new(),
            done: false,
        };
        s.ensure_dir(root)?;
        Ok(s)
    }

    fn ensure_dir(&mut self, dir: &Path) -> Result<()> {
        if dir.is_dir() {
            return Ok(());
        }
        if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
            self.ensure_dir(parent)?;
        }
        fs::create_dir(dir).map_err(|e| Error::io(dir, e))?;
        self.created.push(dir.to_path_buf());
        Ok(())
    }

    /// Writes `bytes` to `rel` under the root, returning `rel`.
    pub(crate) fn write(&mut self, rel: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let rel = rel.as_ref().to_path_buf();
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        self.written.push(path.clone());
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        Ok(rel)
    }

    pub(crate) fn commit(mut self) {
        self.done = true;
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        if self.done {
            return;
        }
        for f in self.written.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.created.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

pub(crate) fn jsonl<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    Ok(out)
}

/// Final-round statistics across seeds, one row per `(protocol, metric)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

fn final_values(run: &ProtocolRun) -> Vec<(String, f64)> {
    let e = &run.final_eval;
    let mut out = Vec::new();
    if let Some(m) = e.macro_accuracy {
        out.push(("macro_accuracy".to_string(), m));
    }
    for (k, a) in e.accuracy.iter().flatten().enumerate() {
        out.push((format!("accuracy_c{k}"), *a));
    }
    if let Some(v) = e.v_sum {
        out.push(("v_sum".to_string(), v));
    }
    for (k, v) in e.variance.iter().flatten().enumerate() {
        out.push((format!("v_c{k}"), *v));
    }
    if let Some(last) = run.metrics.last() {
        out.push(("mean_local_loss".to_string(), last.mean_local_loss));
        if let Some(sr) = last.sr {
            out.push(("sr".to_string(), sr));
        }
    }
    out
}

pub fn summarize(runs: &[ProtocolRun]) -> Vec<SummaryRow> {
    let mut protocols: Vec<Protocol> = Vec::new();
    for r in runs {
        if !protocols.contains(&r.protocol) {
            protocols.push(r.protocol);
        }
    }
    let mut rows = Vec::new();
    for p in protocols {
        let mine: Vec<&ProtocolRun> = runs.iter().filter(|r| r.protocol == p).collect();
        let mut names: Vec<String> = Vec::new();
        for r in &mine {
            for (name, _) in final_values(r) {
                if !names.contains(&name) {
                    names.push(name);
                }
            }
        }
        for name in names {
            let xs: Vec<f64> = mine
                .iter()
                .filter_map(|r| final_values(r).into_iter().find(|(n, _)| *n == name).map(|(_, v)| v))
                .collect();
            let (mean, std) = mean_std(&xs);
            rows.push(SummaryRow {
                protocol: p,
                metric: name,
                mean,
                std,
                seeds: xs.len(),
            });
        }
    }
    rows
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

pub(crate) fn summary_csv(runs: &[ProtocolRun]) -> Result<Vec<u8>> {
    csv_bytes(&summarize(runs))
}

pub(crate) fn metric_file_name(protocol: Protocol, seed: u64) -> PathBuf {
    PathBuf::from("metrics").join(format!("{protocol}-seed{seed}.jsonl"))
}

/// A completed experiment: its manifest and the in-memory runs.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub manifest: RunManifest,
    pub runs: Vec<ProtocolRun>,
}

/// Runs every protocol and seed of `config` and writes the run directory
/// `out`: the resolved configuration, one JSONL metric stream per
/// `(protocol, seed)`, `summary.csv`, and finally `manifest.json`.
///
/// On error everything this call wrote is removed again.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    config.validate()?;
    let started_at = unix_now();
    let runs = run_all(config)?;
    let manifest = write_run_dir(config, out, &runs, started_at, &[])?;
    Ok(ExperimentOutcome { manifest, runs })
}

pub(crate) fn write_run_dir(
    config: &ExperimentConfig,
    out: &Path,
    runs: &[ProtocolRun],
    started_at: u64,
    extra: &[(&str, Vec<u8>)],
) -> Result<RunManifest> {
    let mut dir = Staged::create(out)?;
    let text = config.to_toml();
    let config_file = dir.write("config.toml", text.as_bytes())?;
    let mut metric_files = Vec::with_capacity(runs.len());
    for r in runs {
        metric_files.push(dir.write(metric_file_name(r.protocol, r.seed), &jsonl(&r.metrics)?)?);
    }
    let summary_file = dir.write("summary.csv", &summary_csv(runs)?)?;
    for (name, bytes) in extra {
        dir.write(name, bytes)?;
    }
    let manifest = RunManifest {
        kind: "protocols".into(),
        config_hash: config.hash(),
        config_file,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seeds: config.schedule.seeds.clone(),
        protocols: config.output.protocols.clone(),
        started_at,
        finished_at: unix_now(),
        metric_files,
        summary_file: Some(summary_file),
    };
    dir.write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    dir.commit();
    Ok(manifest)
}

/// Reads a finished run directory's manifest.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::baselines::Protocol;
use crate::diagnostics::ScanConfig;
use crate::error::{Error, Result};
use crate::learners::DatasetSpec;
use crate::objectives::{BenchmarkKind, ObjectiveKey};
use crate::particle_sde::{HyperParams, InitSpec, SdeConfig};

fn ser_key<S: Serializer>(key: &ObjectiveKey, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(key)
}

fn de_key<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ObjectiveKey, D::Error> {
    let raw = String::deserialize(d)?;
    raw.parse().map_err(serde::de::Error::custom)
}

/// What the agents are trying to minimize.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// `quadratic`, `rastrigin`, `learner:synthetic` or `learner:<exported dataset dir>`.
    #[serde(serialize_with = "ser_key", deserialize_with = "de_key")]
    pub objective: ObjectiveKey,
    pub clusters: usize,
    pub agents: usize,
    pub unequal_clusters: bool,
    /// Parameter dimension of the benchmark objectives.
    pub dim: usize,
    /// Minimizers of the benchmark wells sit at `±offset·𝟙`.
    pub offset: f64,
    pub scale: f64,
    /// Initial model distribution for benchmark objectives.
    pub init: InitSpec,
    /// Hidden width of the learner MLP; 0 gives softmax regression.
    pub hidden: usize,
    pub samples_per_agent: usize,
    pub test_per_cluster: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub class_sep: f64,
    pub noise: f64,
    /// Fixed dataset seed; by default each run seed draws its own dataset.
    pub data_seed: Option<u64>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        Self {
            objective: ObjectiveKey::Learner("synthetic".into()),
            clusters: d.clusters,
            agents: d.agents,
            unequal_clusters: false,
            dim: 2,
            offset: 2.0,
            scale: 1.0,
            init: InitSpec::default(),
            hidden: 16,
            samples_per_agent: d.samples_per_agent,
            test_per_cluster: d.test_per_cluster,
            input_dim: d.input_dim,
            classes: d.classes,
            class_sep: d.class_sep,
            noise: d.noise,
            data_seed: None,
        }
    }
}

impl ProblemConfig {
    pub fn dataset_spec(&self, run_seed: u64) -> DatasetSpec {
        DatasetSpec {
            clusters: self.clusters,
            agents: self.agents,
            samples_per_agent: self.samples_per_agent,
            test_per_cluster: self.test_per_cluster,
            input_dim: self.input_dim,
            classes: self.classes,
            class_sep: self.class_sep,
            noise: self.noise,
            unequal_clusters: self.unequal_clusters,
            seed: self.data_seed.unwrap_or(run_seed),
        }
    }

    pub fn benchmark(&self) -> Option<BenchmarkKind> {
        match self.objective {
            ObjectiveKey::Benchmark(k) => Some(k),
            ObjectiveKey::Learner(_) => None,
        }
    }

    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        match &self.objective {
            ObjectiveKey::Benchmark(_) => {
                if self.clusters == 0 {
                    out.push("problem.clusters must be >= 1".into());
                }
                if self.agents < self.clusters.max(1) {
                    out.push(format!(
                        "problem.agents ({}) must be at least the number of clusters ({})",
                        self.agents, self.clusters
                    ));
                }
                if self.dim == 0 {
                    out.push("problem.dim must be >= 1".into());
                }
                if !(self.scale > 0.0 && self.scale.is_finite()) {
                    out.push(format!("problem.scale must be > 0 (got {})", self.scale));
                }
                if !self.offset.is_finite() {
                    out.push("problem.offset must be finite".into());
                }
                if !(self.init.std >= 0.0 && self.init.std.is_finite()) {
                    out.push(format!("problem.init.std must be finite and >= 0 (got {})", self.init.std));
                }
            }
            ObjectiveKey::Learner(id) if id == "synthetic" => out.extend(self.dataset_spec(0).problems()),
            ObjectiveKey::Learner(id) => {
                if !Path::new(id).join("manifest.json").is_file() {
                    out.push(format!("problem.objective: no exported dataset at {id:?} (expected learner:synthetic or a dataset directory)"));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Communication rounds per run.
    pub rounds: usize,
    /// Fraction of agents taking part in each round.
    pub participation: f64,
    pub seeds: Vec<u64>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            rounds: 30,
            participation: 1.0,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub protocols: Vec<Protocol>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            protocols: vec![Protocol::Fedcbo],
        }
    }
}

/// A complete, self-describing experiment.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub hyperparams: HyperParams,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
    /// Settings for particle-system runs (`sde` subcommand).
    pub sde: SdeConfig,
    /// Settings for mean-field scans (`scan-meanfield` subcommand).
    pub scan: ScanConfig,
}

impl ExperimentConfig {
    /// Parses TOML text and validates it, reporting every violated field.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string().trim().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Canonical TOML with every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    /// SHA-256 of [`to_toml`](Self::to_toml), hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = self.problem.problems();
        out.extend(self.hyperparams.problems());
        let s = &self.schedule;
        if !(s.participation > 0.0 && s.participation <= 1.0) {
            out.push(format!("schedule.participation must lie in (0, 1] (got {})", s.participation));
        }
        if s.seeds.is_empty() {
            out.push("schedule.seeds must list at least one seed".into());
        }
        let mut seen = s.seeds.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            out.push("schedule.seeds contains duplicates".into());
        }
        if self.output.protocols.is_empty() {
            out.push("output.protocols must list at least one protocol".into());
        }
        let n = &self.scan.n_list;
        if n.is_empty() || n.windows(2).any(|w| w[0] >= w[1]) || n[0] == 0 {
            out.push("scan.n_list must be nonempty, positive and strictly increasing".into());
        }
        if self.scan.seeds.is_empty() {
            out.push("scan.seeds must list at least one seed".into());
        }
        if self.scan.projections == 0 {
            out.push("scan.projections must be >= 1".into());
        }
        if self.sde.particles_per_cluster == 0 {
            out.push("sde.particles_per_cluster must be >= 1".into());
        }
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

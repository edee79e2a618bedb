use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Labeled samples stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Shard {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Shard {
    pub fn new(dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * labels.len(),
                got: features.len(),
            });
        }
        Ok(Self { dim, features, labels })
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

    pub fn features(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

/// Parameters of the synthetic clustered classification task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub clusters: usize,
    pub agents: usize,
    pub samples_per_agent: usize,
    pub test_per_cluster: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Distance of each class mean from the origin.
    pub class_sep: f64,
    /// Standard deviation of the isotropic noise around a class mean.
    pub noise: f64,
    /// Allow agent counts not divisible by the cluster count.
    pub unequal_clusters: bool,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            clusters: 4,
            agents: 40,
            samples_per_agent: 100,
            test_per_cluster: 1000,
            input_dim: 8,
            classes: 10,
            class_sep: 3.0,
            noise: 1.0,
            unequal_clusters: false,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.clusters == 0 {
            out.push("problem.clusters must be >= 1".into());
        }
        if self.agents < self.clusters.max(1) {
            out.push(format!(
                "problem.agents ({}) must be at least the number of clusters ({})",
                self.agents, self.clusters
            ));
        } else if self.clusters > 0 && !self.agents.is_multiple_of(self.clusters) && !self.unequal_clusters {
            out.push(format!(
                "problem.agents ({}) is not divisible by problem.clusters ({}); set unequal_clusters = true to allow it",
                self.agents, self.clusters
            ));
        }
        if self.samples_per_agent == 0 {
            out.push("problem.samples_per_agent must be >= 1".into());
        }
        if self.input_dim == 0 {
            out.push("problem.input_dim must be >= 1".into());
        }
        if self.classes < 2 {
            out.push("problem.classes must be >= 2".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            out.push(format!("problem.noise must be finite and >= 0 (got {})", self.noise));
        }
        if !self.class_sep.is_finite() {
            out.push("problem.class_sep must be finite".into());
        }
        out
    }

    /// Rotation angle of cluster `k`: `2πk/K`.
    pub fn angle(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.clusters as f64
    }
}

/// What gets written next to an exported dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub angles: Vec<f64>,
    pub class_means: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteredDataset {
    pub spec: DatasetSpec,
    pub shards: Vec<Arc<Shard>>,
    /// Hidden agent → cluster map; for the harness only.
    pub agent_cluster: Vec<usize>,
    /// Held-out test set of each cluster.
    pub test: Vec<Arc<Shard>>,
    pub class_means: Vec<Vec<f64>>,
}

/// Rotate consecutive coordinate pairs `(0,1), (2,3), …` by `angle`.
/// With an odd dimension the last coordinate is left alone.
pub(crate) fn rotate_pairs(x: &mut [f64], angle: f64) {
    let (s, c) = angle.sin_cos();
    for pair in x.chunks_exact_mut(2) {
        let (a, b) = (pair[0], pair[1]);
        pair[0] = c * a - s * b;
        pair[1] = s * a + c * b;
    }
}

fn draw_samples<R: Rng>(rng: &mut R, count: usize, spec: &DatasetSpec, means: &[Vec<f64>], angle: f64) -> Shard {
    let d = spec.input_dim;
    let mut features = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let y = rng.random_range(0..spec.classes);
        let mut x: Vec<f64> = means[y]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + spec.noise * z
            })
            .collect();
        rotate_pairs(&mut x, angle);
        features.extend_from_slice(&x);
        labels.push(y);
    }
    Shard { dim: d, features, labels }
}

impl ClusteredDataset {
    /// Deterministic in `spec` (including its seed).
    pub fn generate(spec: &DatasetSpec) -> Result<Self> {
        let problems = spec.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let seed = spec.seed;
        let mut meta_rng = rng::stream(seed, Domain::Data, u64::MAX, 0);
        let class_means: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| {
                let v: Vec<f64> = (0..spec.input_dim).map(|_| StandardNormal.sample(&mut meta_rng)).collect();
                let n = crate::vecops::norm(&v).max(1e-12);
                v.into_iter().map(|x| spec.class_sep * x / n).collect()
            })
            .collect();

        let (base, extra) = (spec.agents / spec.clusters, spec.agents % spec.clusters);
        let mut agent_cluster: Vec<usize> = (0..spec.clusters)
            .flat_map(|k| std::iter::repeat_n(k, base + usize::from(k < extra)))
            .collect();
        agent_cluster.shuffle(&mut rng::stream(seed, Domain::Data, u64::MAX - 1, 0));

        let shards = agent_cluster
            .iter()
            .enumerate()
            .map(|(a, &k)| {
                let mut r = rng::stream(seed, Domain::Data, a as u64, 0);
                Arc::new(draw_samples(&mut r, spec.samples_per_agent, spec, &class_means, spec.angle(k)))
            })
            .collect();
        let test = (0..spec.clusters)
            .map(|k| {
                let mut r = rng::stream(seed, Domain::Data, (1u64 << 32) + k as u64, 0);
                Arc::new(draw_samples(&mut r, spec.test_per_cluster, spec, &class_means, spec.angle(k)))
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            shards,
            agent_cluster,
            test,
            class_means,
        })
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            spec: self.spec.clone(),
            angles: (0..self.spec.clusters).map(|k| self.spec.angle(k)).collect(),
            class_means: self.class_means.clone(),
        }
    }

    /// Write `manifest.json`, `train.csv` and `test.csv` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest_path = dir.join("manifest.json");
        let f = fs::File::create(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        serde_json::to_writer_pretty(f, &self.manifest())?;

        let d = self.spec.input_dim;
        let feature_cols = (0..d).map(|i| format!("x{i}"));
        let mut w = csv::Writer::from_path(dir.join("train.csv"))?;
        w.write_record(["agent", "cluster", "label"].into_iter().map(String::from).chain(feature_cols.clone()))?;
        for (a, shard) in self.shards.iter().enumerate() {
            for i in 0..shard.len() {
                let mut rec = vec![a.to_string(), self.agent_cluster[a].to_string(), shard.label(i).to_string()];
                rec.extend(shard.features(i).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("train.csv"), e))?;

        let mut w = csv::Writer::from_path(dir.join("test.csv"))?;
        w.write_record(["cluster", "label"].into_iter().map(String::from).chain(feature_cols))?;
        for (k, shard) in self.test.iter().enumerate() {
            for i in 0..shard.len() {
                let mut rec = vec![k.to_string(), shard.label(i).to_string()];
                rec.extend(shard.features(i).iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(dir.join("test.csv"), e))?;
        Ok(())
    }

    /// Read a dataset written by [`ClusteredDataset::export`].
    pub fn import(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let f = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: DatasetManifest = serde_json::from_reader(f)?;
        let spec = manifest.spec;
        let d = spec.input_dim;
        let bad = |what: String| Error::invalid(format!("{}: {what}", dir.display()));
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| bad(format!("bad number `{s}`"))) };
        let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| bad(format!("bad index `{s}`"))) };

        let mut per_agent: Vec<(Vec<f64>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); spec.agents];
        let mut agent_cluster = vec![usize::MAX; spec.agents];
        let mut r = csv::Reader::from_path(dir.join("train.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 3 + d {
                return Err(bad(format!("train row has {} columns, expected {}", rec.len(), 3 + d)));
            }
            let a = idx(&rec[0])?;
            if a >= spec.agents {
                return Err(bad(format!("agent {a} out of range")));
            }
            agent_cluster[a] = idx(&rec[1])?;
            per_agent[a].1.push(idx(&rec[2])?);
            for v in rec.iter().skip(3) {
                per_agent[a].0.push(num(v)?);
            }
        }
        if let Some(a) = agent_cluster.iter().position(|&k| k == usize::MAX) {
            return Err(bad(format!("agent {a} has no samples")));
        }

        let mut per_cluster: Vec<(Vec<f64>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); spec.clusters];
        let mut r = csv::Reader::from_path(dir.join("test.csv"))?;
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != 2 + d {
                return Err(bad(format!("test row has {} columns, expected {}", rec.len(), 2 + d)));
            }
            let k = idx(&rec[0])?;
            if k >= spec.clusters {
                return Err(bad(format!("cluster {k} out of range")));
            }
            per_cluster[k].1.push(idx(&rec[1])?);
            for v in rec.iter().skip(2) {
                per_cluster[k].0.push(num(v)?);
            }
        }
        let shards = per_agent
            .into_iter()
            .map(|(f, l)| Shard::new(d, f, l).map(Arc::new))
            .collect::<Result<_>>()?;
        let test = per_cluster
            .into_iter()
            .map(|(f, l)| Shard::new(d, f, l).map(Arc::new))
            .collect::<Result<_>>()?;
        Ok(Self {
            spec,
            shards,
            agent_cluster,
            test,
            class_means: manifest.class_means,
        })
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.spec.clusters];
        self.agent_cluster.iter().for_each(|&k| sizes[k] += 1);
        sizes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetSpec {
        DatasetSpec {
            clusters: 4,
            agents: 8,
            samples_per_agent: 50,
            test_per_cluster: 20,
            input_dim: 2,
            classes: 2,
            seed: 1,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn shards_and_cluster_counts() {
        let ds = ClusteredDataset::generate(&small()).unwrap();
        assert_eq!(ds.shards.len(), 8);
        assert_eq!(ds.cluster_sizes(), vec![2, 2, 2, 2]);
        assert!(ds.shards.iter().all(|s| s.len() == 50));
        assert_eq!(ds.test.len(), 4);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = ClusteredDataset::generate(&small()).unwrap();
        let b = ClusteredDataset::generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = ClusteredDataset::generate(&DatasetSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.shards, c.shards);
    }

    #[test]
    fn indivisible_agent_count_needs_opt_in() {
        let spec = DatasetSpec { agents: 9, ..small() };
        assert!(matches!(ClusteredDataset::generate(&spec), Err(Error::Config(_))));
        let ds = ClusteredDataset::generate(&DatasetSpec {
            unequal_clusters: true,
            ..spec
        })
        .unwrap();
        assert_eq!(ds.cluster_sizes(), vec![3, 2, 2, 2]);
    }

    #[test]
    fn half_turn_cluster_mirrors_class_means() {
        // Cluster 2 of 4 is rotated by π, so its class-conditional means are
        // the negatives of cluster 0's.
        let spec = DatasetSpec {
            test_per_cluster: 4000,
            noise: 1.0,
            ..small()
        };
        let ds = ClusteredDataset::generate(&spec).unwrap();
        let class_mean = |k: usize, c: usize| -> (Vec<f64>, usize) {
            let t = &ds.test[k];
            let rows: Vec<&[f64]> = (0..t.len()).filter(|&i| t.label(i) == c).map(|i| t.features(i)).collect();
            (crate::vecops::mean_rows(rows.iter().copied(), 2), rows.len())
        };
        for c in 0..2 {
            let (m0, n0) = class_mean(0, c);
            let (m2, n2) = class_mean(2, c);
            let mut rotated = m0.clone();
            rotate_pairs(&mut rotated, PI);
            let stderr = spec.noise * (1.0 / n0 as f64 + 1.0 / n2 as f64).sqrt();
            for (a, b) in rotated.iter().zip(&m2) {
                assert!((a - b).abs() < 3.0 * stderr, "class {c}: {rotated:?} vs {m2:?}");
            }
        }
    }

    #[test]
    fn export_import_round_trip() {
        let ds = ClusteredDataset::generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.export(dir.path()).unwrap();
        let back = ClusteredDataset::import(dir.path()).unwrap();
        assert_eq!(ds, back);
    }
}

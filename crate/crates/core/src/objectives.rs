//! Loss functions with gradient oracles and the analytic benchmark suite.
//!
//! Benchmark gradients are clamped to a global bound so every objective has a
//! bounded, Lipschitz gradient. Near the minimizer the clamp is inactive; the
//! radius of that region is reported by [`Objective::clamp_free_radius`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::vecops;

/// Default global gradient bound applied to benchmark objectives.
pub const DEFAULT_GRAD_BOUND: f64 = 1e3;

/// A loss function over a flat parameter vector.
///
/// Implementations are immutable and may be evaluated from several threads.
pub trait Objective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn eval(&self, theta: &[f64]) -> f64;

    fn grad(&self, theta: &[f64]) -> Vec<f64>;

    /// Global minimizer, when known.
    fn minimizer(&self) -> Option<&[f64]> {
        None
    }

    /// Infimum of the loss, when known.
    fn min_value(&self) -> Option<f64> {
        None
    }

    /// Bound on the gradient norm; `f64::INFINITY` when none is enforced.
    fn grad_bound(&self) -> f64 {
        f64::INFINITY
    }

    /// Lipschitz constant of the gradient; `f64::INFINITY` when unknown.
    fn grad_lipschitz(&self) -> f64 {
        f64::INFINITY
    }

    /// Radius around the minimizer inside which the gradient is never clamped.
    fn clamp_free_radius(&self) -> Option<f64> {
        None
    }

    /// Gradient estimate on a random mini-batch. Deterministic objectives
    /// return the exact gradient.
    fn stochastic_grad(&self, theta: &[f64], _batch: Option<usize>, _rng: &mut StreamRng) -> Vec<f64> {
        self.grad(theta)
    }

    fn check_dim(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        Ok(())
    }
}

pub type SharedObjective = Arc<dyn Objective>;

/// Rescale `raw` onto the ball of radius `bound`, keeping its direction.
pub fn clamp_gradient(mut raw: Vec<f64>, bound: f64) -> Vec<f64> {
    debug_assert!(bound > 0.0);
    let n = vecops::norm(&raw);
    if n > bound {
        let s = bound / n;
        raw.iter_mut().for_each(|g| *g *= s);
    }
    raw
}

/// `scale * |theta - center|^2`.
#[derive(Clone, Debug)]
pub struct Quadratic {
    center: Vec<f64>,
    scale: f64,
    grad_bound: f64,
}

pub fn make_quadratic(dim: usize, center: Vec<f64>, scale: f64) -> Result<Quadratic> {
    Quadratic::new(dim, center, scale, DEFAULT_GRAD_BOUND)
}

impl Quadratic {
    pub fn new(dim: usize, center: Vec<f64>, scale: f64, grad_bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("quadratic dimension must be at least 1"));
        }
        if center.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: center.len(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::invalid(format!("quadratic scale must be positive, got {scale}")));
        }
        if grad_bound.is_nan() || grad_bound <= 0.0 {
            return Err(Error::invalid(format!("gradient bound must be positive, got {grad_bound}")));
        }
        Ok(Self {
            center,
            scale,
            grad_bound,
        })
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim(), "quadratic: dimension mismatch");
        self.scale * vecops::dist_sq(theta, &self.center)
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.dim(), "quadratic: dimension mismatch");
        let raw = theta
            .iter()
            .zip(&self.center)
            .map(|(t, c)| 2.0 * self.scale * (t - c))
            .collect();
        clamp_gradient(raw, self.grad_bound)
    }

    fn minimizer(&self) -> Option<&[f64]> {
        Some(&self.center)
    }

    fn min_value(&self) -> Option<f64> {
        Some(0.0)
    }

    fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    fn grad_lipschitz(&self) -> f64 {
        2.0 * self.scale
    }

    fn clamp_free_radius(&self) -> Option<f64> {
        Some(self.grad_bound / (2.0 * self.scale))
    }
}

/// Shifted Rastrigin function with its global minimum 0 at `center`.
#[derive(Clone, Debug)]
pub struct Rastrigin {
    center: Vec<f64>,
    grad_bound: f64,
}

pub fn make_rastrigin(dim: usize, center: Vec<f64>) -> Result<Rastrigin> {
    Rastrigin::new(dim, center, DEFAULT_GRAD_BOUND)
}

impl Rastrigin {
    pub fn new(dim: usize, center: Vec<f64>, grad_bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("rastrigin dimension must be at least 1"));
        }
        if center.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: center.len(),
            });
        }
        if grad_bound.is_nan() || grad_bound <= 0.0 {
            return Err(Error::invalid(format!("gradient bound must be positive, got {grad_bound}")));
        }
        Ok(Self { center, grad_bound })
    }
}

impl Objective for Rastrigin {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.dim(), "rastrigin: dimension mismatch");
        let sum: f64 = theta
            .iter()
            .zip(&self.center)
            .map(|(t, c)| {
                let x = t - c;
                x * x - 10.0 * (2.0 * PI * x).cos()
            })
            .sum();
        10.0 * self.dim() as f64 + sum
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        assert_eq!(theta.len(), self.dim(), "rastrigin: dimension mismatch");
        let raw = theta
            .iter()
            .zip(&self.center)
            .map(|(t, c)| {
                let x = t - c;
                2.0 * x + 20.0 * PI * (2.0 * PI * x).sin()
            })
            .collect();
        clamp_gradient(raw, self.grad_bound)
    }

    fn minimizer(&self) -> Option<&[f64]> {
        Some(&self.center)
    }

    fn min_value(&self) -> Option<f64> {
        Some(0.0)
    }

    fn grad_bound(&self) -> f64 {
        self.grad_bound
    }

    fn grad_lipschitz(&self) -> f64 {
        2.0 + 40.0 * PI * PI
    }

    // |grad| <= 2|x| + 20*pi*sqrt(d)
    fn clamp_free_radius(&self) -> Option<f64> {
        let r = (self.grad_bound - 20.0 * PI * (self.dim() as f64).sqrt()) / 2.0;
        Some(r.max(0.0))
    }
}

/// Which analytic benchmark to place in each cluster.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Quadratic,
    Rastrigin,
}

/// Objective selection key used in configuration files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObjectiveKey {
    Benchmark(BenchmarkKind),
    /// `learner:<dataset-id>`: `synthetic`, or a directory holding an exported dataset.
    Learner(String),
}

impl FromStr for ObjectiveKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ObjectiveKey::Benchmark(BenchmarkKind::Quadratic)),
            "rastrigin" => Ok(ObjectiveKey::Benchmark(BenchmarkKind::Rastrigin)),
            other => match other.strip_prefix("learner:") {
                Some(id) if !id.is_empty() => Ok(ObjectiveKey::Learner(id.to_string())),
                _ => Err(Error::invalid(format!(
                    "unknown objective `{other}` (expected quadratic, rastrigin or learner:<dataset-id>)"
                ))),
            },
        }
    }
}

impl fmt::Display for ObjectiveKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKey::Benchmark(BenchmarkKind::Quadratic) => f.write_str("quadratic"),
            ObjectiveKey::Benchmark(BenchmarkKind::Rastrigin) => f.write_str("rastrigin"),
            ObjectiveKey::Learner(id) => write!(f, "learner:{id}"),
        }
    }
}

/// One objective per hidden cluster, each with a known minimizer.
#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub cluster_objectives: Vec<SharedObjective>,
    /// Smallest distance between two cluster minimizers.
    pub separation: f64,
}

impl BenchmarkProblem {
    pub fn new(cluster_objectives: Vec<SharedObjective>) -> Result<Self> {
        if cluster_objectives.is_empty() {
            return Err(Error::invalid("a benchmark problem needs at least one cluster"));
        }
        let dim = cluster_objectives[0].dim();
        let mut minimizers = Vec::with_capacity(cluster_objectives.len());
        for (k, obj) in cluster_objectives.iter().enumerate() {
            if obj.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: obj.dim(),
                });
            }
            let m = obj
                .minimizer()
                .ok_or_else(|| Error::invalid(format!("cluster {k} objective has no known minimizer")))?;
            minimizers.push(m.to_vec());
        }
        let mut separation = f64::INFINITY;
        for i in 0..minimizers.len() {
            for j in i + 1..minimizers.len() {
                separation = separation.min(vecops::dist(&minimizers[i], &minimizers[j]));
            }
        }
        if minimizers.len() < 2 {
            separation = 0.0;
        }
        Ok(Self {
            cluster_objectives,
            separation,
        })
    }

    /// `clusters` wells of the given kind with minimizers spread along the
    /// diagonal: `offset * s_k * (1, .., 1)` with `s_k` evenly spaced from
    /// `+1` down to `-1`. Two clusters give minimizers at `+offset` and `-offset`.
    pub fn wells(kind: BenchmarkKind, clusters: usize, dim: usize, offset: f64, scale: f64) -> Result<Self> {
        if clusters == 0 {
            return Err(Error::invalid("number of clusters must be at least 1"));
        }
        let objectives = (0..clusters)
            .map(|k| {
                let s = if clusters == 1 {
                    0.0
                } else {
                    1.0 - 2.0 * k as f64 / (clusters - 1) as f64
                };
                let center = vec![offset * s; dim];
                let obj: SharedObjective = match kind {
                    BenchmarkKind::Quadratic => Arc::new(make_quadratic(dim, center, scale)?),
                    BenchmarkKind::Rastrigin => Arc::new(make_rastrigin(dim, center)?),
                };
                Ok(obj)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(objectives)
    }

    pub fn clusters(&self) -> usize {
        self.cluster_objectives.len()
    }

    pub fn dim(&self) -> usize {
        self.cluster_objectives[0].dim()
    }

    pub fn minimizers(&self) -> Vec<Vec<f64>> {
        self.cluster_objectives
            .iter()
            .map(|o| o.minimizer().expect("checked at construction").to_vec())
            .collect()
    }

    /// Largest gradient Lipschitz constant over the clusters.
    pub fn grad_lipschitz(&self) -> f64 {
        self.cluster_objectives
            .iter()
            .map(|o| o.grad_lipschitz())
            .fold(0.0, f64::max)
    }
}

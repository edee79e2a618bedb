use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Shard;
use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::rng::StreamRng;

/// Fully connected classifier: `input → hidden (ReLU) → classes`, or
/// multinomial logistic regression when `hidden == 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Dense layer with row-major weights `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Architecture {
    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        if self.hidden == 0 {
            vec![(self.classes, self.input)]
        } else {
            vec![(self.hidden, self.input), (self.classes, self.hidden)]
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    /// Uniform `±1/√fan_in` initialization for weights and biases.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (o, i) in self.layer_shapes() {
            let b = 1.0 / (i as f64).sqrt();
            for _ in 0..o * i + o {
                out.push(rng.random_range(-b..b));
            }
        }
        out
    }

    pub fn unflatten(&self, theta: &[f64]) -> Result<Vec<Layer>> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        let mut rest = theta;
        let mut layers = Vec::new();
        for (o, i) in self.layer_shapes() {
            let (w, tail) = rest.split_at(o * i);
            let (b, tail) = tail.split_at(o);
            layers.push(Layer {
                weights: w.chunks_exact(i).map(<[f64]>::to_vec).collect(),
                bias: b.to_vec(),
            });
            rest = tail;
        }
        Ok(layers)
    }

    pub fn flatten(layers: &[Layer]) -> Vec<f64> {
        let mut out = Vec::new();
        for l in layers {
            l.weights.iter().for_each(|row| out.extend_from_slice(row));
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Output logits for one input.
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut hidden = Vec::new();
        let mut logits = vec![0.0; self.classes];
        self.forward(theta, x, &mut hidden, &mut logits);
        logits
    }

    fn forward(&self, theta: &[f64], x: &[f64], hidden: &mut Vec<f64>, logits: &mut [f64]) {
        let (inp, h, c) = (self.input, self.hidden, self.classes);
        if h == 0 {
            let (w, b) = theta.split_at(c * inp);
            for k in 0..c {
                logits[k] = b[k] + dot(&w[k * inp..(k + 1) * inp], x);
            }
            return;
        }
        hidden.resize(h, 0.0);
        let (w1, rest) = theta.split_at(h * inp);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        for j in 0..h {
            hidden[j] = b1[j] + dot(&w1[j * inp..(j + 1) * inp], x);
        }
        for k in 0..c {
            let mut z = b2[k];
            for j in 0..h {
                z += w2[k * h + j] * hidden[j].max(0.0);
            }
            logits[k] = z;
        }
    }

    /// Cross-entropy of one sample; accumulates `scale * ∂loss/∂θ` into `grad` when given.
    fn sample_loss(&self, theta: &[f64], x: &[f64], y: usize, grad: Option<(&mut [f64], f64)>, scratch: &mut Scratch) -> f64 {
        let (inp, h, c) = (self.input, self.hidden, self.classes);
        scratch.logits.resize(c, 0.0);
        self.forward(theta, x, &mut scratch.hidden, &mut scratch.logits);
        let zmax = scratch.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = scratch.logits.iter().map(|z| (z - zmax).exp()).sum();
        let lse = zmax + sum.ln();
        let loss = lse - scratch.logits[y];

        let Some((g, scale)) = grad else {
            return loss;
        };
        // dL/dz = softmax(z) − onehot(y)
        let dz: Vec<f64> = scratch
            .logits
            .iter()
            .enumerate()
            .map(|(k, z)| scale * ((z - lse).exp() - if k == y { 1.0 } else { 0.0 }))
            .collect();
        if h == 0 {
            let (gw, gb) = g.split_at_mut(c * inp);
            for k in 0..c {
                axpy(dz[k], x, &mut gw[k * inp..(k + 1) * inp]);
                gb[k] += dz[k];
            }
            return loss;
        }
        let (gw1, rest) = g.split_at_mut(h * inp);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(c * h);
        let w2 = &theta[h * inp + h..h * inp + h + c * h];
        for j in 0..h {
            let pre = scratch.hidden[j];
            let act = pre.max(0.0);
            let mut dh = 0.0;
            for k in 0..c {
                gw2[k * h + j] += dz[k] * act;
                dh += w2[k * h + j] * dz[k];
            }
            if pre > 0.0 {
                axpy(dh, x, &mut gw1[j * inp..(j + 1) * inp]);
                gb1[j] += dh;
            }
        }
        for k in 0..c {
            gb2[k] += dz[k];
        }
        loss
    }

    /// Mean cross-entropy over the listed samples, with its gradient when asked.
    pub fn loss_and_grad(&self, theta: &[f64], shard: &Shard, indices: Option<&[usize]>, with_grad: bool) -> (f64, Option<Vec<f64>>) {
        let n = indices.map_or(shard.len(), <[usize]>::len);
        let scale = 1.0 / n as f64;
        let mut grad = with_grad.then(|| vec![0.0; self.param_count()]);
        let mut scratch = Scratch::default();
        let mut total = 0.0;
        let mut visit = |i: usize| {
            let g = grad.as_deref_mut().map(|g| (g, scale));
            total += self.sample_loss(theta, shard.features(i), shard.label(i), g, &mut scratch);
        };
        match indices {
            Some(ix) => ix.iter().for_each(|&i| visit(i)),
            None => (0..shard.len()).for_each(visit),
        }
        (total * scale, grad)
    }

    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        let z = self.logits(theta, x);
        // First maximum wins ties.
        z.iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bz), (i, &v)| if v > bz { (i, v) } else { (bi, bz) })
            .0
    }

    pub fn accuracy(&self, theta: &[f64], shard: &Shard) -> f64 {
        if shard.is_empty() {
            return f64::NAN;
        }
        let hits = (0..shard.len())
            .filter(|&i| self.predict(theta, shard.features(i)) == shard.label(i))
            .count();
        hits as f64 / shard.len() as f64
    }
}

#[derive(Default)]
struct Scratch {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// An agent's empirical cross-entropy over its shard.
#[derive(Clone, Debug)]
pub struct EmpiricalLoss {
    arch: Architecture,
    shard: Arc<Shard>,
}

impl EmpiricalLoss {
    pub fn new(arch: Architecture, shard: Arc<Shard>) -> Result<Self> {
        if shard.is_empty() {
            return Err(Error::invalid("empirical loss over an empty shard"));
        }
        if shard.dim() != arch.input {
            return Err(Error::DimensionMismatch {
                expected: arch.input,
                got: shard.dim(),
            });
        }
        if let Some(&bad) = shard.labels().iter().find(|&&y| y >= arch.classes) {
            return Err(Error::invalid(format!("label {bad} outside {} classes", arch.classes)));
        }
        Ok(Self { arch, shard })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }
}

impl Objective for EmpiricalLoss {
    fn dim(&self) -> usize {
        self.arch.param_count()
    }

    fn eval(&self, theta: &[f64]) -> f64 {
        self.arch.loss_and_grad(theta, &self.shard, None, false).0
    }

    fn grad(&self, theta: &[f64]) -> Vec<f64> {
        self.arch.loss_and_grad(theta, &self.shard, None, true).1.expect("gradient requested")
    }

    /// Batches are drawn without replacement; a batch at least as large as
    /// the shard is the full gradient.
    fn stochastic_grad(&self, theta: &[f64], batch: Option<usize>, rng: &mut StreamRng) -> Vec<f64> {
        match batch {
            Some(b) if b < self.shard.len() => {
                let ix = rand::seq::index::sample(rng, self.shard.len(), b).into_vec();
                self.arch.loss_and_grad(theta, &self.shard, Some(&ix), true).1.expect("gradient requested")
            }
            _ => self.grad(theta),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};

    fn shard_from(rows: &[(Vec<f64>, usize)]) -> Arc<Shard> {
        let dim = rows[0].0.len();
        let f = rows.iter().flat_map(|(x, _)| x.clone()).collect();
        let l = rows.iter().map(|(_, y)| *y).collect();
        Arc::new(Shard::new(dim, f, l).unwrap())
    }

    fn random_shard(n: usize, dim: usize, classes: usize, seed: u64) -> Arc<Shard> {
        let mut r = stream(seed, Domain::Harness, 0, 0);
        let rows: Vec<(Vec<f64>, usize)> = (0..n)
            .map(|_| ((0..dim).map(|_| r.random_range(-2.0..2.0)).collect(), r.random_range(0..classes)))
            .collect();
        shard_from(&rows)
    }

    #[test]
    fn param_counts() {
        assert_eq!(Architecture { input: 8, hidden: 16, classes: 4 }.param_count(), 8 * 16 + 16 + 16 * 4 + 4);
        assert_eq!(Architecture { input: 3, hidden: 0, classes: 2 }.param_count(), 8);
    }

    #[test]
    fn zero_parameters_give_log_classes() {
        let arch = Architecture { input: 3, hidden: 5, classes: 2 };
        let loss = EmpiricalLoss::new(arch, random_shard(40, 3, 2, 1)).unwrap();
        let v = loss.eval(&vec![0.0; arch.param_count()]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for hidden in [0, 6] {
            let arch = Architecture { input: 4, hidden, classes: 3 };
            let loss = EmpiricalLoss::new(arch, random_shard(30, 4, 3, 2)).unwrap();
            let theta = arch.init_params(&mut stream(3, Domain::ModelInit, 0, 0));
            let g = loss.grad(&theta);
            let mut r = stream(4, Domain::Harness, 0, 0);
            for _ in 0..20 {
                let i = r.random_range(0..theta.len());
                let h = 1e-6 * (1.0 + theta[i].abs());
                let mut p = theta.clone();
                let mut m = theta.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (loss.eval(&p) - loss.eval(&m)) / (2.0 * h);
                let rel = (fd - g[i]).abs() / g[i].abs().max(1e-3);
                assert!(rel <= 1e-4, "hidden {hidden}, coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn gradient_descent_decreases_a_separable_loss() {
        let rows: Vec<(Vec<f64>, usize)> = (0..20)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                (vec![s * (1.0 + 0.1 * i as f64), 0.3 * (i % 3) as f64], (i % 2) as usize)
            })
            .collect();
        let arch = Architecture { input: 2, hidden: 4, classes: 2 };
        let loss = EmpiricalLoss::new(arch, shard_from(&rows)).unwrap();
        let mut theta = arch.init_params(&mut stream(5, Domain::ModelInit, 0, 0));
        let mut prev = loss.eval(&theta);
        for _ in 0..10 {
            let g = loss.grad(&theta);
            theta.iter_mut().zip(&g).for_each(|(t, g)| *t -= 0.05 * g);
            let cur = loss.eval(&theta);
            assert!(cur < prev, "{cur} >= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn rejects_empty_or_mismatched_shards() {
        let arch = Architecture { input: 2, hidden: 0, classes: 2 };
        let empty = Arc::new(Shard::new(2, vec![], vec![]).unwrap());
        assert!(matches!(EmpiricalLoss::new(arch, empty), Err(Error::InvalidParameter(_))));
        assert!(EmpiricalLoss::new(arch, random_shard(5, 3, 2, 1)).is_err());
        assert!(EmpiricalLoss::new(arch, random_shard(5, 2, 3, 1)).is_err());
    }

    #[test]
    fn minibatch_larger_than_shard_is_full_batch() {
        let arch = Architecture { input: 3, hidden: 4, classes: 2 };
        let loss = EmpiricalLoss::new(arch, random_shard(10, 3, 2, 8)).unwrap();
        let theta = arch.init_params(&mut stream(1, Domain::ModelInit, 0, 0));
        let mut r = stream(1, Domain::LocalUpdate, 0, 0);
        assert_eq!(loss.stochastic_grad(&theta, Some(50), &mut r), loss.grad(&theta));
        assert_ne!(loss.stochastic_grad(&theta, Some(3), &mut r), loss.grad(&theta));
    }

    #[test]
    fn accuracy_counts_hits() {
        // Logistic regression that predicts class 0 iff x0 > 0.
        let arch = Architecture { input: 1, hidden: 0, classes: 2 };
        let theta = vec![1.0, -1.0, 0.0, 0.0];
        let shard = shard_from(&[(vec![1.0], 0), (vec![-1.0], 1), (vec![2.0], 1), (vec![-3.0], 1)]);
        assert_eq!(arch.accuracy(&theta, &shard), 0.75);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn flatten_round_trips(input in 1usize..5, hidden in 0usize..5, classes in 2usize..4, seed in 0u64..100) {
                let arch = Architecture { input, hidden, classes };
                let theta = arch.init_params(&mut stream(seed, Domain::ModelInit, 0, 0));
                let layers = arch.unflatten(&theta).unwrap();
                prop_assert_eq!(Architecture::flatten(&layers), theta);
            }
        }
    }
}

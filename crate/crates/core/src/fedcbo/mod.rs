//! The FedCBO protocol: local gradient steps followed by ε-greedy download
//! of peer models and a partial step toward their Gibbs-weighted consensus.

mod sampling;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sampling::{greedy_sample, participants, round_half_up, AgentSelection};

use crate::consensus::consensus_point_for_agent;
use crate::error::{Error, Result};
use crate::learners::local_update;
use crate::objectives::{Objective, SharedObjective};
use crate::particle_sde::HyperParams;
use crate::rng::{stream, Domain};

/// Exploration fraction `max(start − decay·n, floor)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub decay: f64,
    pub floor: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 0.5,
            decay: 0.01,
            floor: 0.1,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, round: usize) -> f64 {
        (self.start - self.decay * round as f64).max(self.floor)
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.start) {
            out.push(format!("hyperparams.epsilon.start must lie in [0, 1] (got {})", self.start));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            out.push(format!("hyperparams.epsilon.decay must be finite and >= 0 (got {})", self.decay));
        }
        if !(0.0..=1.0).contains(&self.floor) {
            out.push(format!("hyperparams.epsilon.floor must lie in [0, 1] (got {})", self.floor));
        }
        out
    }
}

/// The default schedule `max(0.5 − 0.01n, 0.1)`.
pub fn epsilon_schedule(round: usize) -> f64 {
    EpsilonSchedule::default().at(round)
}

/// Expected selection rate if every exploitation pick is a same-cluster peer:
/// `(1 − ε) + ε·(N_k − 1)/(N − 1)`, averaged over agents.
pub fn oracle_sr(round: usize, schedule: &EpsilonSchedule, cluster_sizes: &[usize]) -> f64 {
    let eps = schedule.at(round);
    let n: usize = cluster_sizes.iter().sum();
    if n < 2 {
        return 1.0 - eps;
    }
    let peers = (n - 1) as f64;
    let uniform: f64 = cluster_sizes
        .iter()
        .map(|&nk| nk as f64 / n as f64 * (nk.saturating_sub(1)) as f64 / peers)
        .sum();
    (1.0 - eps) + eps * uniform
}

/// Accumulated affinity scores `P[j][i]` for `i ≠ j`, stored without the diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodMatrix {
    agents: usize,
    scores: Vec<f64>,
}

impl LikelihoodMatrix {
    pub fn zeros(agents: usize) -> Self {
        Self {
            agents,
            scores: vec![0.0; agents * agents.saturating_sub(1)],
        }
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    fn slot(&self, j: usize, i: usize) -> usize {
        assert!(i != j, "likelihood matrix has no self entries");
        assert!(i < self.agents && j < self.agents, "agent id out of range");
        j * (self.agents - 1) + if i < j { i } else { i - 1 }
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.scores[self.slot(j, i)]
    }

    pub fn add(&mut self, j: usize, i: usize, delta: f64) {
        let s = self.slot(j, i);
        self.scores[s] += delta;
    }

    /// Row `j` as `(peer, score)` pairs in id order.
    pub fn row(&self, j: usize) -> Vec<(usize, f64)> {
        (0..self.agents).filter(|&i| i != j).map(|i| (i, self.get(j, i))).collect()
    }
}

/// Outcome of one agent's aggregation step.
#[derive(Clone, Debug)]
pub struct Aggregation {
    pub model: Vec<f64>,
    /// Score increments `L_j^j − L_j^i` for every peer that entered the average.
    pub deltas: Vec<(usize, f64)>,
    /// Peers whose model had a non-finite loss on the agent's data.
    pub excluded: Vec<usize>,
    /// Loss of the agent's own model on its data.
    pub own_loss: f64,
}

/// Moves `own` a fraction `λ₁γ` toward the consensus point of the downloaded
/// peer models (and `own`, when `hp.include_self`), weighted by their loss on
/// the agent's data.
pub fn local_aggregation(
    agent: usize,
    own: &[f64],
    objective: &dyn Objective,
    downloaded: &[(usize, &[f64])],
    hp: &HyperParams,
) -> Result<Aggregation> {
    objective.check_dim(own)?;
    for (owner, m) in downloaded {
        if m.len() != own.len() {
            return Err(Error::Agent {
                agent: *owner,
                source: Box::new(Error::DimensionMismatch {
                    expected: own.len(),
                    got: m.len(),
                }),
            });
        }
    }
    let own_loss = objective.eval(own);
    let mut pool: Vec<(usize, &[f64])> = Vec::with_capacity(downloaded.len() + 1);
    if hp.include_self {
        pool.push((agent, own));
    }
    pool.extend(downloaded.iter().filter(|(i, _)| *i != agent).copied());
    if pool.is_empty() {
        return Ok(Aggregation {
            model: own.to_vec(),
            deltas: Vec::new(),
            excluded: Vec::new(),
            own_loss,
        });
    }
    let c = consensus_point_for_agent(agent, &pool, |m| Ok(objective.eval(m)), hp.alpha)?;
    let step = hp.lambda1 * hp.gamma;
    let model = own.iter().zip(&c.point.value).map(|(t, m)| t - step * (t - m)).collect();
    let deltas = if own_loss.is_finite() {
        c.losses.iter().filter(|(i, _)| *i != agent).map(|&(i, l)| (i, own_loss - l)).collect()
    } else {
        Vec::new()
    };
    Ok(Aggregation {
        model,
        deltas,
        excluded: c.excluded.into_iter().filter(|&i| i != agent).collect(),
        own_loss,
    })
}

/// What happened in one round, as seen by the protocol (no cluster labels).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    /// Exploration fraction used; `None` for protocols without peer sampling.
    pub epsilon: Option<f64>,
    pub participants: Vec<usize>,
    pub selections: Option<Vec<AgentSelection>>,
    /// Server model adopted by each participant, in participant order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignments: Option<Vec<usize>>,
    /// Mean loss of participants' models on their own data after local training.
    pub mean_local_loss: f64,
    pub excluded_models: usize,
}

/// Agents, their current models and the likelihood matrix.
#[derive(Clone, Debug)]
pub struct Federation {
    objectives: Vec<SharedObjective>,
    models: Vec<Vec<f64>>,
    likelihood: LikelihoodMatrix,
    seed: u64,
}

impl Federation {
    pub fn new(objectives: Vec<SharedObjective>, models: Vec<Vec<f64>>, seed: u64) -> Result<Self> {
        if objectives.is_empty() {
            return Err(Error::invalid("federation needs at least one agent"));
        }
        if objectives.len() != models.len() {
            return Err(Error::invalid(format!(
                "{} objectives but {} models",
                objectives.len(),
                models.len()
            )));
        }
        for (j, (o, m)) in objectives.iter().zip(&models).enumerate() {
            o.check_dim(m).map_err(|e| Error::Agent {
                agent: j,
                source: Box::new(e),
            })?;
        }
        let n = objectives.len();
        Ok(Self {
            objectives,
            models,
            likelihood: LikelihoodMatrix::zeros(n),
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[Vec<f64>] {
        &self.models
    }

    pub fn objectives(&self) -> &[SharedObjective] {
        &self.objectives
    }

    pub fn likelihood(&self) -> &LikelihoodMatrix {
        &self.likelihood
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Runs the local updates of every participant in parallel, returning the
/// post-update snapshot of all models (non-participants unchanged).
pub(crate) fn local_phase(
    objectives: &[SharedObjective],
    start: &[&[f64]],
    participants: &[usize],
    hp: &HyperParams,
    seed: u64,
    round: usize,
) -> Result<Vec<Vec<f64>>> {
    let updated: Vec<Vec<f64>> = participants
        .par_iter()
        .map(|&j| {
            let mut rng = stream(seed, Domain::LocalUpdate, j as u64, round as u64);
            local_update(start[j], objectives[j].as_ref(), hp, &mut rng).map_err(|e| Error::Agent {
                agent: j,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let mut snapshot: Vec<Vec<f64>> = start.iter().map(|m| m.to_vec()).collect();
    for (&j, m) in participants.iter().zip(updated) {
        snapshot[j] = m;
    }
    Ok(snapshot)
}

/// One communication round. Either every participant's model and score row
/// are updated or, on error, nothing is.
pub fn fedcbo_round(fed: &mut Federation, hp: &HyperParams, round: usize, participation: f64) -> Result<RoundLog> {
    let n = fed.len();
    let group = participants(n, participation, fed.seed, round)?;
    let start: Vec<&[f64]> = fed.models.iter().map(Vec::as_slice).collect();
    let snapshot = local_phase(&fed.objectives, &start, &group, hp, fed.seed, round)?;

    let eps = hp.epsilon.at(round).clamp(0.0, 1.0);
    let likelihood = &fed.likelihood;
    let objectives = &fed.objectives;
    let results: Vec<(AgentSelection, Aggregation)> = group
        .par_iter()
        .map(|&j| {
            let mut rng = stream(fed.seed, Domain::Sampling, j as u64, round as u64);
            let sel = greedy_sample(j, likelihood, &group, hp.download_budget, eps, &mut rng)?;
            let downloaded: Vec<(usize, &[f64])> = sel.selected().into_iter().map(|i| (i, snapshot[i].as_slice())).collect();
            let agg = local_aggregation(j, &snapshot[j], objectives[j].as_ref(), &downloaded, hp).map_err(|e| match e {
                e @ Error::Agent { .. } => e,
                e => Error::Agent {
                    agent: j,
                    source: Box::new(e),
                },
            })?;
            Ok((sel, agg))
        })
        .collect::<Result<_>>()?;

    let mut excluded = 0;
    let mut loss_sum = 0.0;
    let mut selections = Vec::with_capacity(group.len());
    for (&j, (sel, agg)) in group.iter().zip(results) {
        for &(i, d) in &agg.deltas {
            fed.likelihood.add(j, i, d);
        }
        excluded += agg.excluded.len();
        loss_sum += agg.own_loss;
        fed.models[j] = agg.model;
        selections.push(sel);
    }
    Ok(RoundLog {
        round,
        epsilon: Some(eps),
        participants: group.clone(),
        selections: Some(selections),
        assignments: None,
        mean_local_loss: loss_sum / group.len() as f64,
        excluded_models: excluded,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::objectives::{make_quadratic, Quadratic};
    use crate::particle_sde::{em_step, ParticleCloud};

    #[derive(Debug)]
    struct Table(Vec<(Vec<f64>, f64)>);

    impl Objective for Table {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, theta: &[f64]) -> f64 {
            self.0.iter().find(|(p, _)| p[0] == theta[0]).map_or(0.0, |(_, l)| *l)
        }
        fn grad(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
    }

    fn hp(lambda1: f64, gamma: f64) -> HyperParams {
        HyperParams {
            lambda1,
            gamma,
            ..HyperParams::default()
        }
    }

    #[test]
    fn schedule_values() {
        assert_eq!(epsilon_schedule(0), 0.5);
        assert!((epsilon_schedule(40) - 0.1).abs() < 1e-15);
        assert_eq!(epsilon_schedule(100), 0.1);
        assert!((epsilon_schedule(10) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn oracle_values() {
        let pure = EpsilonSchedule {
            start: 0.0,
            decay: 0.0,
            floor: 0.0,
        };
        assert_eq!(oracle_sr(3, &pure, &[5, 5]), 1.0);
        let explore = EpsilonSchedule {
            start: 1.0,
            decay: 0.0,
            floor: 1.0,
        };
        assert!((oracle_sr(0, &explore, &[300; 4]) - 299.0 / 1199.0).abs() < 1e-12);
        assert!((oracle_sr(0, &explore, &[300; 4]) - 0.2494).abs() < 1e-4);
        assert!((oracle_sr(0, &EpsilonSchedule::default(), &[2, 2]) - (0.5 + 0.5 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn likelihood_layout_skips_the_diagonal() {
        let mut p = LikelihoodMatrix::zeros(4);
        p.add(2, 3, 1.5);
        p.add(2, 0, -1.0);
        p.add(0, 2, 7.0);
        assert_eq!(p.row(2), vec![(0, -1.0), (1, 0.0), (3, 1.5)]);
        assert_eq!(p.get(0, 2), 7.0);
        assert_eq!(p.scores.len(), 12);
    }

    #[test]
    fn full_step_lands_on_consensus() {
        let q = make_quadratic(1, vec![0.0], 1.0).unwrap();
        let peer = [2.0];
        let agg = local_aggregation(0, &[1.0], &q, &[(1, &peer)], &hp(10.0, 0.1)).unwrap();
        let c = crate::consensus::consensus_point(&[&[1.0], &[2.0]], &[1.0, 4.0], 10.0).unwrap();
        assert!((agg.model[0] - c.value[0]).abs() < 1e-15);
    }

    #[test]
    fn aggregation_with_only_self_is_identity() {
        let q = make_quadratic(1, vec![0.0], 1.0).unwrap();
        let agg = local_aggregation(0, &[1.3], &q, &[], &hp(5.0, 0.1)).unwrap();
        assert_eq!(agg.model, vec![1.3]);
        assert!(agg.deltas.is_empty());
        let agg = local_aggregation(0, &[1.3], &q, &[(0, &[1.3])], &hp(5.0, 0.1)).unwrap();
        assert_eq!(agg.model, vec![1.3]);
        assert!(agg.deltas.is_empty());
    }

    #[test]
    fn score_increments_are_loss_differences() {
        let table = Table(vec![(vec![0.0], 2.0), (vec![1.0], 1.0), (vec![2.0], 3.0)]);
        let (a, b) = ([1.0], [2.0]);
        let agg = local_aggregation(0, &[0.0], &table, &[(1, &a), (2, &b)], &hp(1.0, 0.1)).unwrap();
        assert_eq!(agg.deltas, vec![(1, 1.0), (2, -1.0)]);
        assert_eq!(agg.own_loss, 2.0);
    }

    #[test]
    fn non_finite_peer_loss_is_dropped() {
        let table = Table(vec![(vec![0.0], 1.0), (vec![1.0], f64::NAN), (vec![2.0], 1.0)]);
        let (a, b) = ([1.0], [2.0]);
        let agg = local_aggregation(0, &[0.0], &table, &[(1, &a), (2, &b)], &hp(10.0, 0.1)).unwrap();
        assert_eq!(agg.excluded, vec![1]);
        assert_eq!(agg.deltas, vec![(2, 0.0)]);
        assert!((agg.model[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn aggregation_stays_between_model_and_consensus() {
        let q = make_quadratic(2, vec![0.5, -0.5], 1.0).unwrap();
        let own = [2.0, 1.0];
        let peers = [[-1.0, 0.0], [0.3, -2.0], [1.0, 1.0]];
        let downloaded: Vec<(usize, &[f64])> = peers.iter().enumerate().map(|(i, p)| (i + 1, p.as_slice())).collect();
        for step in [0.0, 0.25, 0.5, 1.0] {
            let agg = local_aggregation(0, &own, &q, &downloaded, &hp(step / 0.1, 0.1)).unwrap();
            let full = local_aggregation(0, &own, &q, &downloaded, &hp(10.0, 0.1)).unwrap().model;
            for d in 0..2 {
                let (lo, hi) = (own[d].min(full[d]), own[d].max(full[d]));
                assert!(agg.model[d] >= lo - 1e-12 && agg.model[d] <= hi + 1e-12);
            }
        }
    }

    fn quad_federation(n: usize, seed: u64) -> Federation {
        let objectives: Vec<SharedObjective> = (0..n)
            .map(|j| {
                let c = if j % 2 == 0 { 1.0 } else { -1.0 };
                Arc::new(make_quadratic(2, vec![c, c], 1.0).unwrap()) as SharedObjective
            })
            .collect();
        let models = (0..n).map(|j| vec![0.1 * j as f64, -0.05 * j as f64]).collect();
        Federation::new(objectives, models, seed).unwrap()
    }

    #[test]
    fn full_participation_includes_everyone() {
        let mut fed = quad_federation(8, 1);
        let log = fedcbo_round(&mut fed, &HyperParams { download_budget: 3, ..HyperParams::default() }, 0, 1.0).unwrap();
        assert_eq!(log.participants.len(), 8);
        assert_eq!(log.selections.unwrap().len(), 8);
    }

    #[test]
    fn no_local_steps_and_no_pull_is_a_no_op() {
        let mut fed = quad_federation(6, 2);
        let before = fed.models().to_vec();
        let hp = HyperParams {
            local_steps: 0,
            lambda1: 0.0,
            download_budget: 3,
            ..HyperParams::default()
        };
        fedcbo_round(&mut fed, &hp, 0, 1.0).unwrap();
        assert_eq!(fed.models(), before.as_slice());
    }

    #[test]
    fn rounds_are_reproducible() {
        let hp = HyperParams {
            download_budget: 3,
            ..HyperParams::default()
        };
        let run = || {
            let mut fed = quad_federation(10, 5);
            let logs: Vec<RoundLog> = (0..4).map(|r| fedcbo_round(&mut fed, &hp, r, 0.7).unwrap()).collect();
            (logs, fed.models().to_vec(), fed.likelihood().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_participants_are_untouched() {
        let mut fed = quad_federation(10, 9);
        let before = fed.models().to_vec();
        let log = fedcbo_round(&mut fed, &HyperParams { download_budget: 2, ..HyperParams::default() }, 0, 0.5).unwrap();
        for (j, old) in before.iter().enumerate() {
            if !log.participants.contains(&j) {
                assert_eq!(&fed.models()[j], old);
                assert!(fed.likelihood().row(j).iter().all(|&(_, s)| s == 0.0));
            }
        }
    }

    #[derive(Debug)]
    struct Exploding;

    impl Objective for Exploding {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _: &[f64]) -> f64 {
            0.0
        }
        fn grad(&self, _: &[f64]) -> Vec<f64> {
            vec![0.0; 2]
        }
        fn check_dim(&self, theta: &[f64]) -> Result<()> {
            if theta[0] > 0.35 {
                Err(Error::invalid("refuses this model"))
            } else {
                Ok(())
            }
        }
    }

    #[test]
    fn failed_round_leaves_state_untouched() {
        let mut fed = quad_federation(6, 4);
        let mut objectives = fed.objectives().to_vec();
        objectives[5] = Arc::new(Exploding);
        let models: Vec<Vec<f64>> = fed.models().to_vec();
        let mut bad = Federation::new(objectives.clone(), models.iter().map(|m| vec![0.0, m[1]]).collect(), 4).unwrap();
        // Agent 5's local update is fine at 0.0; shift it so the update fails.
        bad.models[5][0] = 0.5;
        let before = bad.clone();
        let err = fedcbo_round(&mut bad, &HyperParams::default(), 0, 1.0).unwrap_err();
        assert!(matches!(err, Error::Agent { agent: 5, .. }), "{err}");
        assert_eq!(bad.models(), before.models());
        assert_eq!(bad.likelihood(), before.likelihood());
        fedcbo_round(&mut fed, &HyperParams::default(), 0, 1.0).unwrap();
    }

    #[test]
    fn scores_grow_for_consistently_better_peers() {
        // Agent 0's own model is poor on its data; agent 1's is at the optimum.
        let q: SharedObjective = Arc::new(make_quadratic(1, vec![0.0], 1.0).unwrap());
        let far: SharedObjective = Arc::new(make_quadratic(1, vec![5.0], 1.0).unwrap());
        let mut fed = Federation::new(vec![q.clone(), q, far], vec![vec![3.0], vec![0.0], vec![5.0]], 3).unwrap();
        let hp = HyperParams {
            lambda1: 1.0,
            gamma: 0.1,
            local_steps: 0,
            download_budget: 2,
            ..HyperParams::default()
        };
        let mut prev = fed.likelihood().get(0, 1);
        for r in 0..5 {
            fedcbo_round(&mut fed, &hp, r, 1.0).unwrap();
            let cur = fed.likelihood().get(0, 1);
            assert!(cur > prev, "round {r}: {cur} <= {prev}");
            prev = cur;
        }
    }

    #[test]
    fn one_round_tracks_the_noiseless_particle_step() {
        // Single cluster, every agent downloads every peer, one local step:
        // the round and an Euler step differ by O(γ²).
        let n = 6;
        let center = vec![0.5, -0.25];
        let objective: SharedObjective = Arc::new(Quadratic::new(2, center, 1.0, 1e3).unwrap());
        let start: Vec<Vec<f64>> = (0..n).map(|j| vec![(j as f64 * 0.7).sin() * 2.0, (j as f64 * 1.3).cos()]).collect();
        let gap = |gamma: f64| {
            let hp = HyperParams {
                lambda1: 1.0,
                lambda2: 1.0,
                alpha: 1.0,
                gamma,
                local_steps: 1,
                download_budget: n - 1,
                ..HyperParams::default()
            };
            let mut fed = Federation::new(vec![objective.clone(); n], start.clone(), 0).unwrap();
            fedcbo_round(&mut fed, &hp, 0, 1.0).unwrap();
            let mut cloud = ParticleCloud::new(2, start.concat(), vec![0; n], 0).unwrap();
            em_step(&mut cloud, std::slice::from_ref(&objective), &hp).unwrap();
            (0..n)
                .map(|j| crate::vecops::dist(&fed.models()[j], cloud.position(j)))
                .fold(0.0, f64::max)
        };
        let (a, b) = (gap(0.1), gap(0.05));
        let order = (a / b).log2();
        assert!(order > 1.8, "observed order {order} ({a}, {b})");
    }
}

//! Reference protocols: a single averaged model, per-cluster server models
//! chosen by lowest local loss, and purely local training.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedcbo::{local_phase, participants, RoundLog};
use crate::objectives::SharedObjective;
use crate::particle_sde::HyperParams;
use crate::vecops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FedAvg,
    LocalOnly,
    Ifca,
}

/// Every protocol the simulator can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Fedcbo,
    Fedavg,
    Ifca,
    Local,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [Protocol::Fedcbo, Protocol::Ifca, Protocol::Fedavg, Protocol::Local];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Fedcbo => "fedcbo",
            Protocol::Fedavg => "fedavg",
            Protocol::Ifca => "ifca",
            Protocol::Local => "local",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Protocol::Fedcbo => None,
            Protocol::Fedavg => Some(BaselineKind::FedAvg),
            Protocol::Ifca => Some(BaselineKind::Ifca),
            Protocol::Local => Some(BaselineKind::LocalOnly),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown protocol {s:?} (expected fedcbo, fedavg, ifca or local)")))
    }
}

fn mean_own_loss(objectives: &[SharedObjective], models: &[Vec<f64>], group: &[usize]) -> f64 {
    group.iter().map(|&j| objectives[j].eval(&models[j])).sum::<f64>() / group.len() as f64
}

/// Every participant trains from the global model; the new global model is
/// the plain mean of their results.
pub fn fedavg_round(
    objectives: &[SharedObjective],
    global: &mut Vec<f64>,
    hp: &HyperParams,
    seed: u64,
    round: usize,
    participation: f64,
) -> Result<RoundLog> {
    let mut servers = vec![std::mem::take(global)];
    let out = ifca_round(objectives, &mut servers, hp, seed, round, participation);
    *global = servers.pop().expect("one server model");
    out.map(|log| RoundLog {
        assignments: None,
        ..log
    })
}

/// Each participant adopts the server model with the lowest loss on its data
/// (ties to the lower model id), trains it locally, and every server model
/// becomes the mean of its adopters' results. Models nobody adopted are kept.
pub fn ifca_round(
    objectives: &[SharedObjective],
    servers: &mut [Vec<f64>],
    hp: &HyperParams,
    seed: u64,
    round: usize,
    participation: f64,
) -> Result<RoundLog> {
    if servers.is_empty() {
        return Err(Error::invalid("ifca needs at least one server model"));
    }
    let n = objectives.len();
    let group = participants(n, participation, seed, round)?;
    let assignments: Vec<usize> = group
        .iter()
        .map(|&j| {
            let losses = servers.iter().map(|s| objectives[j].eval(s));
            losses
                .enumerate()
                .fold((0, f64::INFINITY), |(bi, bl), (i, l)| if l < bl { (i, l) } else { (bi, bl) })
                .0
        })
        .collect();
    let mut start: Vec<&[f64]> = vec![servers[0].as_slice(); n];
    for (&j, &s) in group.iter().zip(&assignments) {
        start[j] = &servers[s];
    }
    let trained = local_phase(objectives, &start, &group, hp, seed, round)?;
    let loss = mean_own_loss(objectives, &trained, &group);

    let dim = servers[0].len();
    let mut fresh: Vec<Option<Vec<f64>>> = vec![None; servers.len()];
    for (s, slot) in fresh.iter_mut().enumerate() {
        let adopters: Vec<&[f64]> = group
            .iter()
            .zip(&assignments)
            .filter(|(_, &a)| a == s)
            .map(|(&j, _)| trained[j].as_slice())
            .collect();
        if !adopters.is_empty() {
            *slot = Some(vecops::mean_rows(adopters, dim));
        }
    }
    for (server, new) in servers.iter_mut().zip(fresh) {
        if let Some(m) = new {
            *server = m;
        }
    }
    Ok(RoundLog {
        round,
        epsilon: None,
        participants: group,
        selections: None,
        assignments: Some(assignments),
        mean_local_loss: loss,
        excluded_models: 0,
    })
}

/// Participants train their own models; nothing is exchanged.
pub fn local_only_round(
    objectives: &[SharedObjective],
    models: &mut [Vec<f64>],
    hp: &HyperParams,
    seed: u64,
    round: usize,
    participation: f64,
) -> Result<RoundLog> {
    let n = objectives.len();
    if models.len() != n {
        return Err(Error::invalid(format!("{n} objectives but {} models", models.len())));
    }
    let group = participants(n, participation, seed, round)?;
    let start: Vec<&[f64]> = models.iter().map(Vec::as_slice).collect();
    let trained = local_phase(objectives, &start, &group, hp, seed, round)?;
    let loss = mean_own_loss(objectives, &trained, &group);
    for &j in &group {
        models[j] = trained[j].clone();
    }
    Ok(RoundLog {
        round,
        epsilon: None,
        participants: group,
        selections: None,
        assignments: None,
        mean_local_loss: loss,
        excluded_models: 0,
    })
}

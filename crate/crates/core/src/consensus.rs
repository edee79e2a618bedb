//! Gibbs-weighted consensus points.
//!
//! The consensus point of a particle collection under a loss `L` is the
//! average of the positions weighted by `exp(-alpha * L)`. Weights are formed
//! after subtracting the smallest loss, so large `alpha` cannot overflow and
//! the result does not change when every loss is shifted by a constant.

use crate::error::{Error, Result};
use crate::objectives::Objective;
use crate::vecops;

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusPoint {
    pub value: Vec<f64>,
    /// Sum of the shifted weights `exp(-alpha * (L_i - min L))`; always >= 1.
    pub total_weight: f64,
    /// `ln sum_i exp(-alpha * L_i)`, the unshifted normalization mass in log space.
    pub log_mass: f64,
    pub alpha: f64,
}

/// Consensus point of `positions` weighted by `exp(-alpha * losses)`.
pub fn consensus_point(positions: &[&[f64]], losses: &[f64], alpha: f64) -> Result<ConsensusPoint> {
    let first = positions
        .first()
        .ok_or_else(|| Error::invalid("consensus point of an empty collection"))?;
    if losses.len() != positions.len() {
        return Err(Error::invalid(format!(
            "{} positions but {} losses",
            positions.len(),
            losses.len()
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    let dim = first.len();
    let mut min_loss = f64::INFINITY;
    for (index, (&l, p)) in losses.iter().zip(positions).enumerate() {
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { index, value: l });
        }
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: p.len(),
            });
        }
        min_loss = min_loss.min(l);
    }

    let mut value = vec![0.0; dim];
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    let mut total_weight = 0.0;
    for (p, &l) in positions.iter().zip(losses) {
        let w = (-alpha * (l - min_loss)).exp();
        total_weight += w;
        vecops::axpy(w, p, &mut value);
        for ((a, b), x) in lo.iter_mut().zip(hi.iter_mut()).zip(p.iter()) {
            *a = a.min(*x);
            *b = b.max(*x);
        }
    }
    let inv = 1.0 / total_weight;
    // Rounding in the normalization can push a coordinate one ulp past the hull.
    for ((v, a), b) in value.iter_mut().zip(&lo).zip(&hi) {
        *v = (*v * inv).clamp(*a, *b);
    }
    Ok(ConsensusPoint {
        value,
        total_weight,
        log_mass: -alpha * min_loss + total_weight.ln(),
        alpha,
    })
}

/// Result of an agent weighing the models it downloaded against its own data.
#[derive(Clone, Debug)]
pub struct AgentConsensus {
    pub point: ConsensusPoint,
    /// `(model owner, loss on the agent's data)` for every model that entered the average.
    pub losses: Vec<(usize, f64)>,
    /// Owners whose model evaluated to a non-finite loss and was dropped.
    pub excluded: Vec<usize>,
}

/// Consensus point computed by `agent` over the `downloaded` models
/// `(owner id, parameters)`, each scored with `evaluate` on the agent's data.
///
/// Models whose loss is not finite are dropped from the average; errors from
/// `evaluate` are returned tagged with the owning agent.
pub fn consensus_point_for_agent<F>(
    agent: usize,
    downloaded: &[(usize, &[f64])],
    mut evaluate: F,
    alpha: f64,
) -> Result<AgentConsensus>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if downloaded.is_empty() {
        return Err(Error::invalid(format!("agent {agent} downloaded no models")));
    }
    let mut kept: Vec<&[f64]> = Vec::with_capacity(downloaded.len());
    let mut losses = Vec::with_capacity(downloaded.len());
    let mut excluded = Vec::new();
    for &(owner, model) in downloaded {
        let l = evaluate(model).map_err(|e| Error::Agent {
            agent: owner,
            source: Box::new(e),
        })?;
        if l.is_finite() {
            kept.push(model);
            losses.push((owner, l));
        } else {
            log::warn!("agent {agent}: model of agent {owner} has non-finite loss {l}, excluded");
            excluded.push(owner);
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid(format!("agent {agent}: every downloaded model has a non-finite loss")));
    }
    let raw: Vec<f64> = losses.iter().map(|&(_, l)| l).collect();
    let point = consensus_point(&kept, &raw, alpha)?;
    Ok(AgentConsensus {
        point,
        losses,
        excluded,
    })
}

/// Distance between the consensus points of two clouds under the same objective.
pub fn stability_gap(cloud_a: &[Vec<f64>], cloud_b: &[Vec<f64>], objective: &dyn Objective, alpha: f64) -> Result<f64> {
    let m = |cloud: &[Vec<f64>]| -> Result<Vec<f64>> {
        for p in cloud {
            objective.check_dim(p)?;
        }
        let rows: Vec<&[f64]> = cloud.iter().map(Vec::as_slice).collect();
        let losses: Vec<f64> = rows.iter().map(|p| objective.eval(p)).collect();
        Ok(consensus_point(&rows, &losses, alpha)?.value)
    };
    let a = m(cloud_a)?;
    let b = m(cloud_b)?;
    Ok(vecops::dist(&a, &b))
}

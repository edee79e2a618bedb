//! Participation subsets and ε-greedy peer selection.

use std::cmp::Ordering;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::LikelihoodMatrix;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain, StreamRng};

/// `round(x)` with halves going up; the tiny slack keeps products such as
/// `0.7 * 5` that land just below `.5` from rounding down.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Peers an agent downloads in one round: `explore` drawn uniformly,
/// `exploit` taken by score.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentSelection {
    pub agent: usize,
    pub explore: Vec<usize>,
    pub exploit: Vec<usize>,
}

impl AgentSelection {
    pub fn selected(&self) -> Vec<usize> {
        self.explore.iter().chain(&self.exploit).copied().collect()
    }
}

/// Participating agents of a round, sorted by id.
///
/// The subset has `round_half_up(fraction * n)` members (at least one) and
/// is drawn from the `(seed, Participation, 0, round)` stream.
pub fn participants(n_agents: usize, fraction: f64, seed: u64, round: usize) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("participation fraction must lie in (0, 1] (got {fraction})")));
    }
    let count = round_half_up(fraction * n_agents as f64).clamp(1, n_agents.max(1));
    if count >= n_agents {
        return Ok((0..n_agents).collect());
    }
    let mut rng = stream(seed, Domain::Participation, 0, round as u64);
    let mut picked = index::sample(&mut rng, n_agents, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// ε-greedy choice of `budget` peers for `agent` among `participants`.
///
/// `round_half_up(ε·budget)` peers are drawn uniformly without replacement;
/// the rest are the highest-scoring remaining peers in row `agent` of
/// `scores`, ties going to the lower id. A budget larger than the number of
/// available peers is clamped.
pub fn greedy_sample(
    agent: usize,
    scores: &LikelihoodMatrix,
    participants: &[usize],
    budget: usize,
    epsilon: f64,
    rng: &mut StreamRng,
) -> Result<AgentSelection> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon must lie in [0, 1] (got {epsilon})")));
    }
    let mut peers: Vec<usize> = participants.iter().copied().filter(|&i| i != agent).collect();
    peers.sort_unstable();
    peers.dedup();
    if let Some(&bad) = peers.iter().find(|&&i| i >= scores.agents()) {
        return Err(Error::invalid(format!("participant {bad} outside the federation")));
    }
    let budget = if budget > peers.len() {
        log::warn!("agent {agent}: download budget {budget} exceeds {} available peers; clamped", peers.len());
        peers.len()
    } else {
        budget
    };
    let n_explore = round_half_up(epsilon * budget as f64).min(budget);

    let mut explore: Vec<usize> = index::sample(rng, peers.len(), n_explore).into_iter().map(|x| peers[x]).collect();
    explore.sort_unstable();

    let mut rest: Vec<usize> = peers.into_iter().filter(|i| explore.binary_search(i).is_err()).collect();
    rest.sort_by(|&a, &b| match scores.get(agent, b).total_cmp(&scores.get(agent, a)) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    rest.truncate(budget - n_explore);

    Ok(AgentSelection {
        agent,
        explore,
        exploit: rest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(n: usize, agent: usize, values: &[(usize, f64)]) -> LikelihoodMatrix {
        let mut p = LikelihoodMatrix::zeros(n);
        for &(i, v) in values {
            p.add(agent, i, v);
        }
        p
    }

    #[test]
    fn rounding_goes_half_up() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.49), 2);
        assert_eq!(round_half_up(0.7 * 5.0), 4);
        assert_eq!(round_half_up(0.0), 0);
    }

    #[test]
    fn full_participation_is_everyone() {
        assert_eq!(participants(8, 1.0, 3, 0).unwrap().len(), 8);
        let half = participants(10, 0.5, 3, 4).unwrap();
        assert_eq!(half.len(), 5);
        assert!(half.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(half, participants(10, 0.5, 3, 4).unwrap());
        assert!(participants(10, 0.0, 3, 4).is_err());
        assert!(participants(10, 1.5, 3, 4).is_err());
    }

    #[test]
    fn pure_exploration_is_a_uniform_subset() {
        let p = scored(6, 0, &[(5, 10.0)]);
        let all: Vec<usize> = (0..6).collect();
        let mut counts = [0usize; 6];
        let trials = 20_000;
        for t in 0..trials {
            let s = greedy_sample(0, &p, &all, 2, 1.0, &mut stream(1, Domain::Sampling, 0, t)).unwrap();
            assert!(s.exploit.is_empty());
            assert_eq!(s.explore.len(), 2);
            s.explore.iter().for_each(|&i| counts[i] += 1);
        }
        assert_eq!(counts[0], 0);
        // Each of 5 peers appears with probability 2/5.
        let p_hit = 0.4;
        let sigma = (trials as f64 * p_hit * (1.0 - p_hit)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - trials as f64 * p_hit).abs() < 4.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn pure_exploitation_takes_the_top_scores() {
        let p = scored(6, 2, &[(0, 1.0), (1, 5.0), (3, -2.0), (4, 3.0), (5, 0.5)]);
        let all: Vec<usize> = (0..6).collect();
        let s = greedy_sample(2, &p, &all, 3, 0.0, &mut stream(0, Domain::Sampling, 2, 0)).unwrap();
        assert!(s.explore.is_empty());
        assert_eq!(s.exploit, vec![1, 4, 0]);
    }

    #[test]
    fn zero_scores_break_ties_by_id() {
        let p = LikelihoodMatrix::zeros(6);
        let s = greedy_sample(3, &p, &(0..6).collect::<Vec<_>>(), 3, 0.0, &mut stream(0, Domain::Sampling, 3, 0)).unwrap();
        assert_eq!(s.exploit, vec![0, 1, 2]);
    }

    #[test]
    fn budget_is_clamped_to_available_peers() {
        let p = LikelihoodMatrix::zeros(4);
        let s = greedy_sample(0, &p, &[0, 2, 3], 5, 0.5, &mut stream(0, Domain::Sampling, 0, 0)).unwrap();
        let mut sel = s.selected();
        sel.sort_unstable();
        assert_eq!(sel, vec![2, 3]);
    }

    #[test]
    fn two_stage_inclusion_matches_enumeration() {
        // Agent 0 among 5; peers 1..=4 score 3, 2, 1, 0. One uniform pick,
        // then the best remaining scorer.
        let p = scored(5, 0, &[(1, 3.0), (2, 2.0), (3, 1.0), (4, 0.0)]);
        let all: Vec<usize> = (0..5).collect();
        let peers = [1usize, 2, 3, 4];
        let mut expected = [0.0; 5];
        for &e in &peers {
            let best = peers.iter().copied().find(|&i| i != e).unwrap();
            expected[e] += 0.25;
            expected[best] += 0.25;
        }
        assert_eq!(expected, [0.0, 1.0, 0.5, 0.25, 0.25]);

        let trials = 10_000u64;
        let mut counts = [0usize; 5];
        for t in 0..trials {
            let s = greedy_sample(0, &p, &all, 2, 0.5, &mut stream(7, Domain::Sampling, 0, t)).unwrap();
            assert_eq!((s.explore.len(), s.exploit.len()), (1, 1));
            s.selected().iter().for_each(|&i| counts[i] += 1);
        }
        for i in 1..5 {
            let q = expected[i];
            let sigma = (trials as f64 * q * (1.0 - q)).sqrt();
            let dev = (counts[i] as f64 - trials as f64 * q).abs();
            assert!(dev <= 3.0 * sigma.max(1e-9), "agent {i}: {} vs {}", counts[i], trials as f64 * q);
        }
    }
}

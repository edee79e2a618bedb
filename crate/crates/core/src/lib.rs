//! Clustered consensus-based optimization: the interacting particle system,
//! the FedCBO federated protocol, reference baselines and the diagnostics
//! used to check them.

pub mod baselines;
pub mod consensus;
pub mod diagnostics;
pub mod error;
pub mod fedcbo;
pub mod harness;
pub mod learners;
pub mod objectives;
pub mod particle_sde;
pub mod rng;
pub mod vecops;

pub use baselines::{fedavg_round, ifca_round, local_only_round, BaselineKind, Protocol};
pub use consensus::{consensus_point, consensus_point_for_agent, stability_gap, AgentConsensus, ConsensusPoint};
pub use diagnostics::{
    meanfield_scan, sliced_w1, sr_curve, theoretical_rate, variance_report, MeanFieldScan, ScanConfig, SrPoint, TheoreticalRate,
    VarianceReport,
};
pub use error::{Error, Result};
pub use harness::{compare_protocols, run_experiment, ExperimentConfig, RoundMetrics, RunManifest};
pub use fedcbo::{
    epsilon_schedule, fedcbo_round, greedy_sample, local_aggregation, oracle_sr, AgentSelection, EpsilonSchedule, Federation,
    LikelihoodMatrix, RoundLog,
};
pub use learners::{Architecture, ClusteredDataset, DatasetSpec, EmpiricalLoss};
pub use objectives::{
    clamp_gradient, make_quadratic, make_rastrigin, BenchmarkKind, BenchmarkProblem, Objective, ObjectiveKey, SharedObjective,
};
pub use particle_sde::{decay_exponent_fit, em_step, run_sde, HyperParams, InitSpec, ParticleCloud, SdeConfig, SdeTrajectory};

//! Fixtures shared by the kernel benchmarks.

use std::sync::Arc;

use fedcbo_core::{
    Architecture, BenchmarkKind, BenchmarkProblem, ClusteredDataset, DatasetSpec, EmpiricalLoss, Federation, InitSpec,
    ParticleCloud, SharedObjective,
};

/// Two quadratic wells at `±2·𝟙` in `dim` dimensions.
pub fn wells(dim: usize) -> BenchmarkProblem {
    BenchmarkProblem::wells(BenchmarkKind::Quadratic, 2, dim, 2.0, 1.0).expect("valid wells")
}

/// A cloud with `per_cluster` particles per well.
pub fn cloud(problem: &BenchmarkProblem, per_cluster: usize) -> ParticleCloud {
    ParticleCloud::sample(problem.clusters(), per_cluster, problem.dim(), &InitSpec::default(), 0).expect("valid cloud")
}

/// The desk-scale learner federation: 4 rotated clusters, 40 agents.
pub fn learner_federation(hidden: usize) -> Federation {
    let ds = ClusteredDataset::generate(&DatasetSpec::default()).expect("valid dataset");
    let arch = Architecture {
        input: ds.spec.input_dim,
        hidden,
        classes: ds.spec.classes,
    };
    let objectives: Vec<SharedObjective> = ds
        .shards
        .iter()
        .map(|s| Arc::new(EmpiricalLoss::new(arch, s.clone()).expect("nonempty shard")) as SharedObjective)
        .collect();
    let init = arch.init_params(&mut fedcbo_core::rng::stream(0, fedcbo_core::rng::Domain::ModelInit, 0, 0));
    let models = vec![init; objectives.len()];
    Federation::new(objectives, models, 0).expect("consistent federation")
}

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{run_all, unix_now, write_run_dir, Budget, ExperimentOutcome, ProtocolRun};
use crate::baselines::Protocol;
use crate::diagnostics::mean_std;
use crate::error::{Error, Result};

/// Full-scale rotated-digit accuracies (%) that the desk-scale comparison
/// mirrors in ordering only.
pub const REFERENCE_ACCURACY: [(Protocol, f64); 4] = [
    (Protocol::Fedcbo, 96.51),
    (Protocol::Ifca, 94.44),
    (Protocol::Fedavg, 85.50),
    (Protocol::Local, 81.27),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub protocol: Protocol,
    pub seeds: usize,
    /// `(mean, std)` of the final macro-averaged accuracy, or of `V₁+…+V_K`
    /// for benchmark problems.
    pub overall: (f64, f64),
    /// `(mean, std)` per cluster of the same quantity.
    pub per_cluster: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingFlag {
    pub better: Protocol,
    pub worse: Protocol,
    /// Mean difference `better − worse` in the overall score (sign adjusted
    /// so that positive always means `better` did better).
    pub margin: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `accuracy` for learners, `v_sum` for benchmarks (lower is better).
    pub score: String,
    pub budget: Budget,
    pub rows: Vec<ComparisonRow>,
    /// Checks of the reference ordering between every pair of protocols present.
    pub flags: Vec<OrderingFlag>,
    pub reference: Vec<(Protocol, f64)>,
}

impl Comparison {
    pub fn row(&self, p: Protocol) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.protocol == p)
    }

    pub fn flag(&self, better: Protocol, worse: Protocol) -> Option<&OrderingFlag> {
        self.flags.iter().find(|f| f.better == better && f.worse == worse)
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let scale = if self.score == "accuracy" { 100.0 } else { 1.0 };
        let _ = writeln!(s, "{:<8} {:>18}  per cluster", "protocol", self.score);
        for r in &self.rows {
            let clusters: Vec<String> = r
                .per_cluster
                .iter()
                .map(|(m, sd)| format!("{:.2}±{:.2}", m * scale, sd * scale))
                .collect();
            let _ = writeln!(
                s,
                "{:<8} {:>10.2} ± {:<5.2}  {}",
                r.protocol.name(),
                r.overall.0 * scale,
                r.overall.1 * scale,
                clusters.join("  ")
            );
        }
        for f in &self.flags {
            let _ = writeln!(
                s,
                "{} >= {}: {} (margin {:+.2})",
                f.better,
                f.worse,
                if f.holds { "yes" } else { "no" },
                f.margin * scale
            );
        }
        s
    }
}

/// Tabulates final scores per protocol. Refuses runs that spent different
/// compute or used different seeds.
pub fn compare_protocols(runs: &[ProtocolRun]) -> Result<Comparison> {
    let first = runs.first().ok_or_else(|| Error::invalid("nothing to compare"))?;
    if let Some(r) = runs.iter().find(|r| r.budget != first.budget) {
        return Err(Error::invalid(format!(
            "mismatched compute budgets: {} ran {:?}, {} ran {:?}",
            first.protocol, first.budget, r.protocol, r.budget
        )));
    }
    let mut protocols: Vec<Protocol> = Vec::new();
    for r in runs {
        if !protocols.contains(&r.protocol) {
            protocols.push(r.protocol);
        }
    }
    let seeds_of = |p: Protocol| {
        let mut s: Vec<u64> = runs.iter().filter(|r| r.protocol == p).map(|r| r.seed).collect();
        s.sort_unstable();
        s
    };
    let base_seeds = seeds_of(protocols[0]);
    if let Some(&p) = protocols.iter().find(|&&p| seeds_of(p) != base_seeds) {
        return Err(Error::invalid(format!("protocol {p} ran different seeds than {}", protocols[0])));
    }

    let learner = first.final_eval.macro_accuracy.is_some();
    let rows: Vec<ComparisonRow> = protocols
        .iter()
        .map(|&p| {
            let evals: Vec<_> = runs.iter().filter(|r| r.protocol == p).map(|r| &r.final_eval).collect();
            let overall: Vec<f64> = evals
                .iter()
                .map(|e| if learner { e.macro_accuracy } else { e.v_sum }.unwrap_or(f64::NAN))
                .collect();
            let per: Vec<&Vec<f64>> = evals
                .iter()
                .filter_map(|e| if learner { e.accuracy.as_ref() } else { e.variance.as_ref() })
                .collect();
            let k = per.first().map_or(0, |v| v.len());
            let per_cluster = (0..k)
                .map(|c| mean_std(&per.iter().map(|v| v[c]).collect::<Vec<_>>()))
                .collect();
            ComparisonRow {
                protocol: p,
                seeds: evals.len(),
                overall: mean_std(&overall),
                per_cluster,
            }
        })
        .collect();

    let order: Vec<Protocol> = REFERENCE_ACCURACY.iter().map(|(p, _)| *p).collect();
    let mut flags = Vec::new();
    for (i, &a) in order.iter().enumerate() {
        for &b in &order[i + 1..] {
            let (Some(ra), Some(rb)) = (rows.iter().find(|r| r.protocol == a), rows.iter().find(|r| r.protocol == b)) else {
                continue;
            };
            let margin = if learner {
                ra.overall.0 - rb.overall.0
            } else {
                rb.overall.0 - ra.overall.0
            };
            flags.push(OrderingFlag {
                better: a,
                worse: b,
                margin,
                holds: margin >= 0.0,
            });
        }
    }
    Ok(Comparison {
        score: if learner { "accuracy" } else { "v_sum" }.into(),
        budget: first.budget.clone(),
        rows,
        flags,
        reference: REFERENCE_ACCURACY.to_vec(),
    })
}

impl Comparison {
    /// One row per protocol: overall and per-cluster mean and std.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let k = self.rows.first().map_or(0, |r| r.per_cluster.len());
        let mut header = vec!["protocol".to_string(), "seeds".into(), format!("{}_mean", self.score), format!("{}_std", self.score)];
        for c in 0..k {
            header.push(format!("c{c}_mean"));
            header.push(format!("c{c}_std"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.protocol.to_string(), r.seeds.to_string(), r.overall.0.to_string(), r.overall.1.to_string()];
            for (m, s) in &r.per_cluster {
                rec.push(m.to_string());
                rec.push(s.to_string());
            }
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::io("comparison.csv", e.into_error()))
    }
}

/// Runs every configured protocol on the same problems and seeds, writes
/// the run directory plus `comparison.json` and `comparison.csv`.
pub fn run_comparison(config: &ExperimentConfig, out: &Path) -> Result<(ExperimentOutcome, Comparison)> {
    config.validate()?;
    let started_at = unix_now();
    let runs = run_all(config)?;
    let cmp = compare_protocols(&runs)?;
    let extra = [
        ("comparison.json", serde_json::to_string_pretty(&cmp)?.into_bytes()),
        ("comparison.csv", cmp.to_csv()?),
    ];
    let manifest = write_run_dir(config, out, &runs, started_at, &extra)?;
    Ok((ExperimentOutcome { manifest, runs }, cmp))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::run::Evaluation;

    fn run(protocol: Protocol, seed: u64, acc: f64, rounds: usize) -> ProtocolRun {
        ProtocolRun {
            protocol,
            seed,
            budget: Budget {
                rounds,
                local_steps: 5,
                participation: 1.0,
                agents: 4,
            },
            metrics: vec![],
            final_eval: Evaluation {
                accuracy: Some(vec![acc, acc]),
                macro_accuracy: Some(acc),
                ..Evaluation::default()
            },
        }
    }

    #[test]
    fn single_protocol_gives_one_row() {
        let c = compare_protocols(&[run(Protocol::Fedcbo, 0, 0.9, 3), run(Protocol::Fedcbo, 1, 0.8, 3)]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert!((c.rows[0].overall.0 - 0.85).abs() < 1e-12);
        assert!(c.flags.is_empty());
    }

    #[test]
    fn ordering_flags_follow_means() {
        let runs = [
            run(Protocol::Fedcbo, 0, 0.9, 3),
            run(Protocol::Ifca, 0, 0.92, 3),
            run(Protocol::Local, 0, 0.6, 3),
        ];
        let c = compare_protocols(&runs).unwrap();
        assert!(!c.flag(Protocol::Fedcbo, Protocol::Ifca).unwrap().holds);
        assert!(c.flag(Protocol::Ifca, Protocol::Local).unwrap().holds);
        assert!((c.flag(Protocol::Fedcbo, Protocol::Local).unwrap().margin - 0.3).abs() < 1e-12);
        assert!(c.render().contains("fedcbo >= ifca: no"));
    }

    #[test]
    fn mismatched_budgets_are_refused() {
        assert!(compare_protocols(&[run(Protocol::Fedcbo, 0, 0.9, 3), run(Protocol::Ifca, 0, 0.9, 4)]).is_err());
        assert!(compare_protocols(&[run(Protocol::Fedcbo, 0, 0.9, 3), run(Protocol::Ifca, 1, 0.9, 3)]).is_err());
        assert!(compare_protocols(&[]).is_err());
    }

    #[test]
    fn reference_table_is_ordered() {
        assert!(REFERENCE_ACCURACY.windows(2).all(|w| w[0].1 > w[1].1));
    }
}

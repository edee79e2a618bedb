use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Serialize;

use super::run::{read_manifest, RoundMetrics};
use crate::diagnostics::MeanFieldScan;
use crate::error::{Error, Result};
use crate::particle_sde::SdeRecord;

/// One observation in long format.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TidyRow {
    /// Protocol name, `sde` or `scan`.
    pub source: String,
    pub seed: Option<u64>,
    /// Round, step or particle count, depending on `source`.
    pub x: f64,
    pub metric: String,
    pub value: f64,
}

fn push_vec(rows: &mut Vec<TidyRow>, base: &TidyRow, prefix: &str, values: &[f64]) {
    for (k, v) in values.iter().enumerate() {
        rows.push(TidyRow {
            metric: format!("{prefix}_c{k}"),
            value: *v,
            ..base.clone()
        });
    }
}

fn round_rows(source: &str, seed: u64, m: &RoundMetrics, rows: &mut Vec<TidyRow>) {
    let base = TidyRow {
        source: source.into(),
        seed: Some(seed),
        x: m.round as f64,
        metric: String::new(),
        value: 0.0,
    };
    let mut scalar = |name: &str, v: Option<f64>| {
        if let Some(value) = v {
            rows.push(TidyRow {
                metric: name.into(),
                value,
                ..base.clone()
            });
        }
    };
    scalar("participants", Some(m.participants as f64));
    scalar("mean_local_loss", Some(m.mean_local_loss));
    scalar("epsilon", m.epsilon);
    scalar("sr", m.sr);
    scalar("oracle_sr", m.oracle_sr);
    scalar("macro_accuracy", m.eval.macro_accuracy);
    scalar("v_sum", m.eval.v_sum);
    if let Some(a) = &m.eval.accuracy {
        push_vec(rows, &base, "accuracy", a);
    }
    if let Some(v) = &m.eval.variance {
        push_vec(rows, &base, "v", v);
    }
}

fn sde_rows(seed: u64, r: &SdeRecord, rows: &mut Vec<TidyRow>) {
    let base = TidyRow {
        source: "sde".into(),
        seed: Some(seed),
        x: r.step as f64,
        metric: "v_sum".into(),
        value: r.v_sum,
    };
    rows.push(base.clone());
    rows.push(TidyRow {
        metric: "time".into(),
        value: r.time,
        ..base.clone()
    });
    push_vec(rows, &base, "v", &r.v);
    push_vec(rows, &base, "consensus_error", &r.consensus_error);
}

fn seed_of(file: &Path) -> Option<u64> {
    let stem = file.file_stem()?.to_str()?;
    stem.rsplit("seed").next()?.parse().ok()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .map(|l| l.map_err(|e| Error::io(path, e)))
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .collect()
}

/// Long-format rows for every metric of a finished run directory.
pub fn tidy_rows(run_dir: &Path) -> Result<Vec<TidyRow>> {
    let manifest = read_manifest(run_dir)?;
    let mut rows = Vec::new();
    for rel in &manifest.metric_files {
        let path = run_dir.join(rel);
        match manifest.kind.as_str() {
            "protocols" => {
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let source = stem.split("-seed").next().unwrap_or(stem);
                let seed = seed_of(&path).unwrap_or(0);
                for line in read_lines(&path)? {
                    round_rows(source, seed, &serde_json::from_str(&line)?, &mut rows);
                }
            }
            "sde" => {
                let seed = seed_of(&path).unwrap_or(0);
                for line in read_lines(&path)? {
                    sde_rows(seed, &serde_json::from_str(&line)?, &mut rows);
                }
            }
            "scan" => {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let scan: MeanFieldScan = serde_json::from_str(&text)?;
                for e in &scan.entries {
                    for (metric, value) in [("w1_mean", e.mean), ("w1_stderr", e.stderr)] {
                        rows.push(TidyRow {
                            source: "scan".into(),
                            seed: None,
                            x: e.n as f64,
                            metric: metric.into(),
                            value,
                        });
                    }
                    for (s, v) in scan_seeds(&manifest.seeds, &e.per_seed) {
                        rows.push(TidyRow {
                            source: "scan".into(),
                            seed: Some(s),
                            x: e.n as f64,
                            metric: "w1".into(),
                            value: v,
                        });
                    }
                }
            }
            other => return Err(Error::invalid(format!("unknown run kind {other:?} in manifest"))),
        }
    }
    Ok(rows)
}

fn scan_seeds<'a>(seeds: &'a [u64], values: &'a [f64]) -> impl Iterator<Item = (u64, f64)> + 'a {
    seeds.iter().copied().zip(values.iter().copied())
}

/// Writes [`tidy_rows`] of `run_dir` as CSV to `dest`. Returns the row count.
pub fn plot_export(run_dir: &Path, dest: &Path) -> Result<usize> {
    let rows = tidy_rows(run_dir)?;
    let mut w = csv::Writer::from_path(dest)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(dest, e))?;
    Ok(rows.len())
}

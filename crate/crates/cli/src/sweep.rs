use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use uman_core::uman::Method;

use crate::config::ExperimentConfig;
use crate::runner::{run_experiment, RunRecord, RunStatus};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Number of source domains; new sources copy the first source's column.
    NumSources,
    /// `|C_1 ∩ C_2|` for two sources, splitting `|C| + v` as evenly as possible.
    CommonOverlap,
    /// `|C̄_t|`.
    TargetPrivateSize,
    /// `Σ|C̄_si| − |C̄_s|`.
    SourcePrivateOverlap,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::NumSources => "num_sources",
            SweepAxis::CommonOverlap => "common_overlap",
            SweepAxis::TargetPrivateSize => "target_private_size",
            SweepAxis::SourcePrivateOverlap => "source_private_overlap",
        }
    }

    /// The config with this axis set to `value`, or the reason it cannot be.
    pub fn apply(
        self,
        base: &ExperimentConfig,
        value: usize,
    ) -> std::result::Result<ExperimentConfig, String> {
        let mut cfg = base.clone();
        let m = &mut cfg.umda_matrix;
        match self {
            SweepAxis::NumSources => {
                if value == 0 {
                    return Err("at least one source domain is required".into());
                }
                let (c, p) = match (m.common_sizes.first(), m.private_sizes.first()) {
                    (Some(&c), Some(&p)) => (c, p),
                    _ => return Err("the base matrix has no source column".into()),
                };
                m.common_sizes = vec![c; value];
                m.private_sizes = vec![p; value];
            }
            SweepAxis::CommonOverlap => {
                if m.num_sources() != 2 {
                    return Err(format!(
                        "common_overlap needs exactly two sources, the base has {}",
                        m.num_sources()
                    ));
                }
                let total = m.target_common + value;
                m.common_sizes = vec![total.div_ceil(2), total / 2];
            }
            SweepAxis::TargetPrivateSize => m.target_private = value,
            SweepAxis::SourcePrivateOverlap => m.source_private_overlap = Some(value),
        }
        let violations = cfg.violations();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(violations.join("; "))
        }
    }
}

/// One row of the aggregated sweep table.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: usize,
    pub status: String,
    pub config_hash: Option<String>,
    pub method: Option<Method>,
    /// Mean accuracy over the seeds that finished.
    pub mean: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
    /// Mean over seeds of `method − source_only`, when both finished.
    pub transfer_gain: Option<f64>,
    pub note: String,
}

pub fn value_dir(output_dir: &Path, axis: SweepAxis, value: usize) -> PathBuf {
    output_dir
        .join(format!("sweep_{}", axis.name()))
        .join(format!("{}={value}", axis.name()))
}

/// Runs the experiment once per axis value and aggregates the results into
/// `output_dir/sweep_<axis>.csv`. Infeasible values are recorded and skipped.
pub fn run_sweep(
    base: &ExperimentConfig,
    output_dir: &Path,
    axis: SweepAxis,
    values: &[usize],
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("a sweep needs at least one value");
    }
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;
    let mut rows = Vec::new();
    for &value in values {
        let cfg = match axis.apply(base, value) {
            Ok(cfg) => cfg,
            Err(reason) => {
                log::warn!("{}={value} is infeasible: {reason}", axis.name());
                rows.push(SweepRow {
                    value,
                    status: "infeasible".into(),
                    config_hash: None,
                    method: None,
                    mean: None,
                    per_seed: vec![None; base.seeds.len()],
                    transfer_gain: None,
                    note: reason,
                });
                continue;
            }
        };
        let records = run_experiment(&cfg, &value_dir(output_dir, axis, value), jobs)?;
        rows.extend(aggregate(&cfg, value, &records));
    }
    write_sweep(
        &output_dir.join(format!("sweep_{}.csv", axis.name())),
        axis,
        &base.seeds,
        &rows,
    )?;
    Ok(rows)
}

fn aggregate(cfg: &ExperimentConfig, value: usize, records: &[RunRecord]) -> Vec<SweepRow> {
    let find = |m: Method, s: u64| records.iter().find(|r| r.method == m && r.seed == s);
    cfg.methods
        .iter()
        .map(|&method| {
            let per_seed: Vec<Option<f64>> = cfg
                .seeds
                .iter()
                .map(|&s| find(method, s).and_then(RunRecord::mean_accuracy))
                .collect();
            let done: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let failed = cfg
                .seeds
                .iter()
                .filter_map(|&s| find(method, s))
                .any(|r| r.status == RunStatus::Failed);
            let gains: Vec<f64> = cfg
                .seeds
                .iter()
                .filter_map(|&s| {
                    let a = find(method, s)?.mean_accuracy()?;
                    let b = find(Method::SourceOnly, s)?.mean_accuracy()?;
                    Some(a - b)
                })
                .collect();
            SweepRow {
                value,
                status: if failed { "failed" } else { "ok" }.into(),
                config_hash: Some(cfg.hash()),
                method: Some(method),
                mean: (!done.is_empty()).then(|| done.iter().sum::<f64>() / done.len() as f64),
                per_seed,
                transfer_gain: (!gains.is_empty())
                    .then(|| gains.iter().sum::<f64>() / gains.len() as f64),
                note: String::new(),
            }
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_sweep(path: &Path, axis: SweepAxis, seeds: &[u64], rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "axis",
        "value",
        "status",
        "config_hash",
        "method",
        "mean_per_class_accuracy",
    ]
    .map(String::from)
    .to_vec();
    header.extend(seeds.iter().map(|s| format!("seed_{s}")));
    header.push("transfer_gain".into());
    header.push("note".into());
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![
            axis.name().to_string(),
            r.value.to_string(),
            r.status.clone(),
            r.config_hash.clone().unwrap_or_default(),
            r.method.map(|m| m.name().to_string()).unwrap_or_default(),
            opt(r.mean),
        ];
        row.extend(r.per_seed.iter().map(|&v| opt(v)));
        row.push(opt(r.transfer_gain));
        row.push(r.note.clone());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

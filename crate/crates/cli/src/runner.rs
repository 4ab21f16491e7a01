use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use uman_core::eval::{run_method, EvalClass, EvalReport};
use uman_core::labelspace::LabelPartition;
use uman_core::synthgen::SyntheticWorld;
use uman_core::uman::{Method, TrainOutcome};

use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        }
    }
}

/// Outcome of one `(method, seed)` training run.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub status: RunStatus,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn mean_accuracy(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.mean_per_class_accuracy)
    }
}

pub fn run_dir(output_dir: &Path, method: Method, seed: u64) -> PathBuf {
    output_dir
        .join("runs")
        .join(format!("{}_{seed}", method.name()))
}

/// Trains and evaluates every method on every seed, writing per-run
/// artifacts and `summary.csv` under `output_dir`. Individual failures are
/// recorded as failed rows; only I/O or an invalid config is an error.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    output_dir: &Path,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        bail!("invalid config:\n  {}", violations.join("\n  "));
    }
    let partition = cfg.partition()?;
    let hash = cfg.hash();
    fs::create_dir_all(output_dir).with_context(|| format!("creating {}", output_dir.display()))?;

    let tasks: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building the worker pool")?;
    let records = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(method, seed)| run_one(cfg, &partition, &hash, output_dir, method, seed))
            .collect::<Result<Vec<_>>>()
    })?;
    write_summary(&output_dir.join("summary.csv"), &hash, &partition, &records)?;
    Ok(records)
}

fn run_one(
    cfg: &ExperimentConfig,
    partition: &LabelPartition,
    hash: &str,
    output_dir: &Path,
    method: Method,
    seed: u64,
) -> Result<RunRecord> {
    let dir = run_dir(output_dir, method, seed);
    for stale in ["trace.csv", "tmr.csv", "report.json"] {
        let path = dir.join(stale);
        if path.exists() {
            fs::remove_file(&path).with_context(|| format!("removing {}", path.display()))?;
        }
    }
    log::info!("training {method} with seed {seed}");
    let trained = SyntheticWorld::new(&cfg.synthetic_for(seed), partition).and_then(|world| {
        let data = world.training_sets();
        let test = world.target_test_set(cfg.test_samples_per_class);
        run_method(method, &data, &test, partition, &cfg.hyperparams_for(seed))
    });
    match trained {
        Ok((outcome, report)) => {
            let report = report.tagged(method.name(), Some(hash), Some(seed));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            write_trace(&dir.join("trace.csv"), hash, &outcome)?;
            write_tmr(&dir.join("tmr.csv"), hash, &outcome)?;
            fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            Ok(RunRecord {
                method,
                seed,
                status: RunStatus::Ok,
                report: Some(report),
                error: None,
            })
        }
        Err(e) => {
            log::warn!("{method} seed {seed} failed: {e}");
            Ok(RunRecord {
                method,
                seed,
                status: RunStatus::Failed,
                report: None,
                error: Some(e.to_string()),
            })
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_trace(path: &Path, hash: &str, outcome: &TrainOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let m = outcome.trace.first().map_or(0, |r| r.source_errors.len());
    let mut header: Vec<String> = [
        "config_hash",
        "step",
        "e_g",
        "e_d",
        "grl_lambda",
        "tmr_updated",
        "mean_source_weight",
        "mean_target_weight",
        "mean_source_weight_common",
        "mean_source_weight_private",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..m).map(|i| format!("source_error_{i}")));
    w.write_record(&header)?;
    for r in &outcome.trace {
        let mut row = vec![
            hash.to_string(),
            r.step.to_string(),
            r.e_g.to_string(),
            r.e_d.to_string(),
            r.grl_lambda.to_string(),
            r.tmr_updated.to_string(),
            r.mean_source_weight.to_string(),
            r.mean_target_weight.to_string(),
            opt(r.mean_source_weight_common),
            opt(r.mean_source_weight_private),
        ];
        row.extend(r.source_errors.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_tmr(path: &Path, hash: &str, outcome: &TrainOutcome) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config_hash", "class", "value", "updates"])?;
    let reg = &outcome.tmr;
    for (c, (v, n)) in reg.values().iter().zip(reg.counts()).enumerate() {
        w.write_record([
            hash.to_string(),
            c.to_string(),
            v.to_string(),
            n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(
    path: &Path,
    hash: &str,
    partition: &LabelPartition,
    records: &[RunRecord],
) -> Result<()> {
    let mut classes: Vec<EvalClass> = partition
        .common()
        .iter()
        .map(|&c| EvalClass::Known(c))
        .collect();
    classes.push(EvalClass::Unknown);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![
        "config_hash".to_string(),
        "method".into(),
        "seed".into(),
        "status".into(),
        "mean_per_class_accuracy".into(),
    ];
    header.extend(classes.iter().map(|c| format!("acc_{c}")));
    header.push("report".into());
    header.push("error".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            hash.to_string(),
            r.method.name().to_string(),
            r.seed.to_string(),
            r.status.as_str().to_string(),
            opt(r.mean_accuracy()),
        ];
        row.extend(
            classes
                .iter()
                .map(|&c| opt(r.report.as_ref().and_then(|rep| rep.accuracy_of(c)))),
        );
        row.push(if r.report.is_some() {
            format!("runs/{}_{}/report.json", r.method.name(), r.seed)
        } else {
            String::new()
        });
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

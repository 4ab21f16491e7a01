//! Two-sample classifier probes on frozen features.
//!
//! A fresh logistic-regression probe is fit to tell two feature populations
//! apart; its held-out balanced accuracy is near 0.5 when the populations
//! are aligned and near 1 when they are separated.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelPartition;
use crate::nn::{sigmoid, Tensor2};
use crate::synthgen::DomainDataset;
use crate::uman::Networks;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProbeKind {
    /// Source samples labeled in `C` vs target samples whose true label is in `C`.
    SourceVsTargetCommon,
    /// Source samples labeled in `C̄_s` vs target samples in `C̄_t`.
    SourceVsTargetPrivate,
    /// Two sources, restricted to the classes both of them carry.
    SourceVsSourceShared { first: usize, second: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            epochs: 500,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub kind: Option<ProbeKind>,
    /// Mean of the held-out recall on each population.
    pub balanced_accuracy: f64,
    pub n_first: usize,
    pub n_second: usize,
    pub n_first_test: usize,
    pub n_second_test: usize,
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let test = idx.split_off(n_train);
    (idx, test)
}

/// Fits a class-balanced logistic regression (zero init, full-batch gradient
/// descent) separating `first` (label 1) from `second` (label 0) and returns
/// the held-out balanced accuracy.
pub fn two_sample_probe(
    first: &Tensor2,
    second: &Tensor2,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    if first.rows() < 2 || second.rows() < 2 {
        return Err(Error::EmptyPopulation(format!(
            "probe populations need at least two samples each (got {} and {})",
            first.rows(),
            second.rows()
        )));
    }
    if first.cols() != second.cols() {
        return Err(Error::dim("two_sample_probe", first.cols(), second.cols()));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::config("probe train_fraction must lie in (0, 1)"));
    }
    // Each population is split independently of its position so that
    // swapping the arguments reproduces the same partitions.
    let (a_train, a_test) = split(first.rows(), cfg.train_fraction, cfg.seed);
    let (b_train, b_test) = split(second.rows(), cfg.train_fraction, cfg.seed);

    let d = first.cols();
    let mut rows: Vec<(&[f64], f64, f64)> = Vec::new();
    let ca = 0.5 / a_train.len() as f64;
    let cb = 0.5 / b_train.len() as f64;
    rows.extend(a_train.iter().map(|&i| (first.row(i), 1.0, ca)));
    rows.extend(b_train.iter().map(|&i| (second.row(i), 0.0, cb)));

    let mut w = vec![0.0; d];
    let mut bias = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..cfg.epochs {
        gw.fill(0.0);
        let mut gb = 0.0;
        for &(x, y, c) in &rows {
            let z = bias + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let r = c * (sigmoid(z) - y);
            gb += r;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += r * xv;
            }
        }
        bias -= cfg.learning_rate * gb;
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= cfg.learning_rate * g;
        }
    }

    let score = |x: &[f64]| bias + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let recall_a = a_test
        .iter()
        .filter(|&&i| score(first.row(i)) > 0.0)
        .count() as f64
        / a_test.len() as f64;
    let recall_b = b_test
        .iter()
        .filter(|&&i| score(second.row(i)) < 0.0)
        .count() as f64
        / b_test.len() as f64;
    Ok(ProbeReport {
        kind: None,
        balanced_accuracy: 0.5 * (recall_a + recall_b),
        n_first: first.rows(),
        n_second: second.rows(),
        n_first_test: a_test.len(),
        n_second_test: b_test.len(),
    })
}

fn select(data: &DomainDataset, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    data.samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.true_label().is_some_and(&keep))
        .map(|(i, _)| i)
        .collect()
}

/// Gathers the two populations selected by `kind` from `datasets` (sources
/// then target, with evaluation labels on the target), embeds them with the
/// frozen feature extractor and runs [`two_sample_probe`].
pub fn alignment_probe(
    nets: &Networks,
    datasets: &[DomainDataset],
    partition: &LabelPartition,
    kind: ProbeKind,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let m = partition.num_sources();
    if datasets.len() != m + 1 {
        return Err(Error::config(format!(
            "expected {} datasets, got {}",
            m + 1,
            datasets.len()
        )));
    }
    let in_set = |set: &[usize], c: usize| set.contains(&c);
    let stack = |pairs: Vec<(usize, Vec<usize>)>| -> Result<Tensor2> {
        let parts = pairs
            .iter()
            .map(|(k, idx)| datasets[*k].gather(idx))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor2> = parts.iter().collect();
        Tensor2::vstack(&refs)
    };
    let (first, second, names) = match kind {
        ProbeKind::SourceVsTargetCommon => {
            let src = (0..m)
                .map(|k| (k, select(&datasets[k], |c| in_set(partition.common(), c))))
                .collect();
            let tgt = vec![(m, select(&datasets[m], |c| in_set(partition.common(), c)))];
            (
                stack(src)?,
                stack(tgt)?,
                ("source samples in C", "target samples in C"),
            )
        }
        ProbeKind::SourceVsTargetPrivate => {
            let src = (0..m)
                .map(|k| {
                    (
                        k,
                        select(&datasets[k], |c| in_set(partition.source_private(), c)),
                    )
                })
                .collect();
            let tgt = vec![(
                m,
                select(&datasets[m], |c| in_set(partition.target_private(), c)),
            )];
            (
                stack(src)?,
                stack(tgt)?,
                ("source samples in C̄_s", "target samples in C̄_t"),
            )
        }
        ProbeKind::SourceVsSourceShared { first, second } => {
            if first >= m || second >= m || first == second {
                return Err(Error::invalid(format!(
                    "source pair ({first}, {second}) invalid for {m} sources"
                )));
            }
            let shared: Vec<usize> = partition
                .source(first)
                .iter()
                .copied()
                .filter(|c| partition.source(second).contains(c))
                .collect();
            let a = vec![(first, select(&datasets[first], |c| shared.contains(&c)))];
            let b = vec![(second, select(&datasets[second], |c| shared.contains(&c)))];
            (
                stack(a)?,
                stack(b)?,
                (
                    "first source on shared classes",
                    "second source on shared classes",
                ),
            )
        }
    };
    for (pop, name) in [(&first, names.0), (&second, names.1)] {
        if pop.rows() == 0 {
            return Err(Error::EmptyPopulation(name.to_string()));
        }
    }
    let mut report = two_sample_probe(&nets.embed(&first)?, &nets.embed(&second)?, cfg)?;
    report.kind = Some(kind);
    Ok(report)
}

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelPartition;
use crate::synthgen::DomainDataset;
use crate::uman::{infer_batch, Networks, Prediction};

/// One entry of the `|C| + 1` evaluation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalClass {
    Known(usize),
    Unknown,
}

impl std::fmt::Display for EvalClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalClass::Known(c) => write!(f, "{c}"),
            EvalClass::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: EvalClass,
    /// `None` when the test set had no samples of this class.
    pub accuracy: Option<f64>,
    pub n_evaluated: usize,
    pub n_correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Classes of `C` in ascending order, then the unknown entry.
    pub per_class: Vec<ClassAccuracy>,
    pub mean_per_class_accuracy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn accuracy_of(&self, class: EvalClass) -> Option<f64> {
        self.per_class
            .iter()
            .find(|c| c.class == class)
            .and_then(|c| c.accuracy)
    }

    pub fn tagged(mut self, method: &str, config_hash: Option<&str>, seed: Option<u64>) -> Self {
        self.method = Some(method.to_string());
        self.config_hash = config_hash.map(str::to_string);
        self.seed = seed;
        self
    }
}

/// Scores predictions against true target labels: a sample of a class in
/// `C` is correct iff predicted as exactly that class; a sample of a
/// target-private class is correct iff predicted unknown.
pub fn evaluate_predictions(
    truths: &[usize],
    predictions: &[Prediction],
    partition: &LabelPartition,
) -> Result<EvalReport> {
    if truths.is_empty() {
        return Err(Error::invalid("evaluation on an empty test set"));
    }
    if truths.len() != predictions.len() {
        return Err(Error::dim("evaluate", truths.len(), predictions.len()));
    }
    let common: BTreeSet<usize> = partition.common().iter().copied().collect();
    let private: BTreeSet<usize> = partition.target_private().iter().copied().collect();
    let mut slots: Vec<EvalClass> = common.iter().map(|&c| EvalClass::Known(c)).collect();
    slots.push(EvalClass::Unknown);
    let mut n = vec![0usize; slots.len()];
    let mut ok = vec![0usize; slots.len()];
    let unknown_slot = slots.len() - 1;

    for (&t, &p) in truths.iter().zip(predictions) {
        let (slot, correct) = if common.contains(&t) {
            let slot = slots
                .iter()
                .position(|s| *s == EvalClass::Known(t))
                .unwrap();
            (slot, p == Prediction::Known(t))
        } else if private.contains(&t) {
            (unknown_slot, p == Prediction::Unknown)
        } else {
            return Err(Error::invalid(format!(
                "test label {t} is not in the target label set"
            )));
        };
        n[slot] += 1;
        ok[slot] += usize::from(correct);
    }

    let per_class: Vec<ClassAccuracy> = slots
        .iter()
        .enumerate()
        .map(|(i, &class)| ClassAccuracy {
            class,
            accuracy: (n[i] > 0).then(|| ok[i] as f64 / n[i] as f64),
            n_evaluated: n[i],
            n_correct: ok[i],
        })
        .collect();
    let present: Vec<f64> = per_class.iter().filter_map(|c| c.accuracy).collect();
    for c in per_class.iter().filter(|c| c.accuracy.is_none()) {
        log::warn!(
            "no test samples for class {}; excluded from the mean",
            c.class
        );
    }
    Ok(EvalReport {
        mean_per_class_accuracy: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        method: None,
        config_hash: None,
        seed: None,
    })
}

/// Routes every target test sample through thresholded inference and scores it.
pub fn evaluate(
    nets: &Networks,
    test: &DomainDataset,
    partition: &LabelPartition,
    w0: f64,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("evaluation on an empty test set"));
    }
    let truths = test
        .samples
        .iter()
        .map(|s| {
            s.true_label()
                .ok_or_else(|| Error::invalid("test samples need evaluation labels"))
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions = infer_batch(nets, &test.features()?, w0)?;
    evaluate_predictions(&truths, &predictions, partition)
}

/// Mean per-class accuracy of `method` minus that of `source_only`.
pub fn transfer_gain(method: &EvalReport, source_only: &EvalReport) -> Result<f64> {
    let classes = |r: &EvalReport| r.per_class.iter().map(|c| c.class).collect::<Vec<_>>();
    if classes(method) != classes(source_only) {
        return Err(Error::invalid("reports cover different evaluation classes"));
    }
    if let (Some(a), Some(b)) = (&method.config_hash, &source_only.config_hash) {
        if a != b {
            return Err(Error::invalid(format!(
                "reports come from different configs ({a} vs {b})"
            )));
        }
    }
    Ok(method.mean_per_class_accuracy - source_only.mean_per_class_accuracy)
}

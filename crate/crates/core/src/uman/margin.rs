use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_row, Tensor2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginResult {
    pub pseudo_label: usize,
    /// Top probability minus runner-up, in `[0, 1]`.
    pub margin: f64,
    pub probs: Vec<f64>,
}

/// Lowest index among the maxima.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn margin_unchecked(probs: Vec<f64>) -> MarginResult {
    let top = argmax(&probs);
    let runner_up = probs
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, &p)| p)
        .fold(f64::NEG_INFINITY, f64::max);
    let margin = (probs[top] - runner_up).clamp(0.0, 1.0);
    MarginResult {
        pseudo_label: top,
        margin,
        probs,
    }
}

/// Pseudo-label and prediction margin of one probability vector.
pub fn margin_of(probs: &[f64]) -> Result<MarginResult> {
    if probs.len() < 2 {
        return Err(Error::invalid(format!(
            "margin needs at least two classes, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|&p| !p.is_finite() || p < 0.0) {
        return Err(Error::invalid(
            "probabilities must be finite and non-negative",
        ));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(margin_unchecked(probs.to_vec()))
}

/// Margins of every row of a logit matrix.
pub fn margins_from_logits(logits: &Tensor2) -> Result<Vec<MarginResult>> {
    if logits.cols() < 2 {
        return Err(Error::invalid(format!(
            "margin needs at least two classes, got {}",
            logits.cols()
        )));
    }
    Ok(logits
        .iter_rows()
        .map(|row| margin_unchecked(softmax_row(row)))
        .collect())
}

/// Per-class mean margin over the samples pseudo-labeled with that class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginVector {
    pub values: Vec<f64>,
    /// Whether any sample in the batch carried that pseudo-label.
    pub present: Vec<bool>,
}

impl MarginVector {
    pub fn from_margins(margins: &[MarginResult], num_classes: usize) -> Result<Self> {
        let mut sums = vec![0.0; num_classes];
        let mut counts = vec![0usize; num_classes];
        for m in margins {
            if m.pseudo_label >= num_classes {
                return Err(Error::invalid(format!(
                    "pseudo-label {} outside 0..{num_classes}",
                    m.pseudo_label
                )));
            }
            sums[m.pseudo_label] += m.margin;
            counts[m.pseudo_label] += 1;
        }
        Ok(Self {
            values: sums
                .iter()
                .zip(&counts)
                .map(|(&s, &n)| if n > 0 { s / n as f64 } else { 0.0 })
                .collect(),
            present: counts.iter().map(|&n| n > 0).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Margin vector of a batch of probability vectors.
pub fn margin_vector<P: AsRef<[f64]>>(batch_probs: &[P]) -> Result<MarginVector> {
    let first = batch_probs
        .first()
        .ok_or_else(|| Error::invalid("margin vector of an empty batch"))?;
    let k = first.as_ref().len();
    let margins = batch_probs
        .iter()
        .map(|p| {
            let p = p.as_ref();
            if p.len() != k {
                return Err(Error::dim("margin_vector", k, p.len()));
            }
            margin_of(p)
        })
        .collect::<Result<Vec<_>>>()?;
    MarginVector::from_margins(&margins, k)
}

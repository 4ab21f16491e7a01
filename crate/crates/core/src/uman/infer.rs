use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::uman::margin::margin_of;
use crate::uman::train::Networks;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Known(usize),
    Unknown,
}

/// Known class when the margin reaches `w0` (inclusive), otherwise unknown.
pub fn decide(probs: &[f64], w0: f64) -> Result<Prediction> {
    let mr = margin_of(probs)?;
    Ok(if mr.margin >= w0 {
        Prediction::Known(mr.pseudo_label)
    } else {
        Prediction::Unknown
    })
}

fn check_threshold(w0: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w0) {
        return Err(Error::invalid(format!(
            "threshold w0 = {w0} outside [0, 1]"
        )));
    }
    Ok(())
}

pub fn infer(nets: &Networks, x: &[f64], w0: f64) -> Result<Prediction> {
    check_threshold(w0)?;
    let probs = nets.class_probs(&Tensor2::from_vec(1, x.len(), x.to_vec())?)?;
    decide(probs.row(0), w0)
}

pub fn infer_batch(nets: &Networks, x: &Tensor2, w0: f64) -> Result<Vec<Prediction>> {
    check_threshold(w0)?;
    nets.class_probs(x)?
        .iter_rows()
        .map(|p| decide(p, w0))
        .collect()
}

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uman::margin::{MarginResult, MarginVector};

/// Target margin register: per-class running mean of batch margin vectors.
///
/// A class only accumulates on batches where some target sample carried its
/// pseudo-label; classes never pseudo-predicted stay at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmrRegister {
    values: Vec<f64>,
    sums: Vec<f64>,
    counts: Vec<u64>,
    step: u64,
}

impl TmrRegister {
    pub fn new(num_classes: usize) -> Self {
        Self {
            values: vec![0.0; num_classes],
            sums: vec![0.0; num_classes],
            counts: vec![0; num_classes],
            step: 0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of updates applied.
    pub fn step(&self) -> u64 {
        self.step
    }

    /// Number of batches that contributed to each class.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn update(&mut self, mv: &MarginVector) -> Result<()> {
        if mv.values.len() != self.values.len() || mv.present.len() != self.values.len() {
            return Err(Error::dim("tmr_update", self.values.len(), mv.values.len()));
        }
        for c in 0..self.values.len() {
            if mv.present[c] {
                self.sums[c] += mv.values[c];
                self.counts[c] += 1;
                self.values[c] = self.sums[c] / self.counts[c] as f64;
            }
        }
        self.step += 1;
        Ok(())
    }

    /// Updates only when every source's batch error is below `epsilon`.
    /// Returns whether the update happened.
    pub fn gated_update(
        &mut self,
        source_errors: &[f64],
        epsilon: f64,
        mv: &MarginVector,
    ) -> Result<bool> {
        if gate_open(source_errors, epsilon) {
            self.update(mv)?;
            Ok(true)
        } else {
            Ok(false)
        }
    }
}

/// `max_i error_i < epsilon`.
pub fn gate_open(source_errors: &[f64], epsilon: f64) -> bool {
    let worst = source_errors
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    !source_errors.is_empty() && worst < epsilon
}

/// Class weight of a source sample: the register component of its label.
pub fn source_weight(reg: &TmrRegister, label: usize) -> Result<f64> {
    reg.values
        .get(label)
        .copied()
        .ok_or_else(|| Error::invalid(format!("source label {label} outside 0..{}", reg.len())))
}

/// Target sample weight: its margin times the register component of its
/// pseudo-label.
pub fn target_weight(reg: &TmrRegister, mr: &MarginResult) -> f64 {
    mr.margin * reg.values.get(mr.pseudo_label).copied().unwrap_or(0.0)
}

/// Divides every weight by the group mean. An all-zero group stays zero.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::invalid("cannot normalize an empty weight group"));
    }
    if let Some(&w) = raw.iter().find(|&&w| !w.is_finite() || w < 0.0) {
        return Err(Error::invalid(format!(
            "weight {w} must be finite and >= 0"
        )));
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    if mean == 0.0 {
        return Ok(vec![0.0; raw.len()]);
    }
    Ok(raw.iter().map(|w| w / mean).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mv(values: &[f64]) -> MarginVector {
        MarginVector {
            values: values.to_vec(),
            present: vec![true; values.len()],
        }
    }

    #[test]
    fn update_examples() {
        let mut r = TmrRegister::new(1);
        r.update(&mv(&[0.8])).unwrap();
        assert_eq!(r.values(), &[0.8]);

        let mut r = TmrRegister::new(1);
        r.update(&mv(&[0.4])).unwrap();
        r.update(&mv(&[0.8])).unwrap();
        assert!((r.values()[0] - 0.6).abs() < 1e-15);
        assert_eq!(r.step(), 2);
    }

    #[test]
    fn absent_classes_do_not_move() {
        let mut r = TmrRegister::new(2);
        r.update(&MarginVector {
            values: vec![0.5, 0.0],
            present: vec![true, false],
        })
        .unwrap();
        assert_eq!(r.values(), &[0.5, 0.0]);
        assert_eq!(r.counts(), &[1, 0]);
        assert!(r.update(&mv(&[0.1])).is_err());
    }

    #[test]
    fn weight_examples() {
        let r = TmrRegister::new(3);
        assert!((0..3).all(|l| source_weight(&r, l).unwrap() == 0.0));
        assert!(source_weight(&r, 3).is_err());

        let mut r = TmrRegister::new(2);
        r.update(&mv(&[0.3, 0.9])).unwrap();
        assert_eq!(source_weight(&r, 1).unwrap(), 0.9);

        let mr = |label, margin| MarginResult {
            pseudo_label: label,
            margin,
            probs: vec![],
        };
        let mut one = TmrRegister::new(1);
        one.update(&mv(&[1.0])).unwrap();
        assert_eq!(target_weight(&one, &mr(0, 1.0)), 1.0);
        assert_eq!(target_weight(&one, &mr(0, 0.0)), 0.0);
        let mut r = TmrRegister::new(1);
        r.update(&mv(&[0.6])).unwrap();
        assert!((target_weight(&r, &mr(0, 0.5)) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_weights(&[2.0, 4.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(normalize_weights(&[0.3; 4]).unwrap(), vec![1.0; 4]);
        assert_eq!(normalize_weights(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(normalize_weights(&[1.0, -0.1]).is_err());
        assert!(normalize_weights(&[]).is_err());
    }

    #[test]
    fn gate_semantics() {
        assert!(!gate_open(&[0.0, 0.0], 0.0));
        assert!(gate_open(&[0.05, 0.09], 0.1));
        assert!(!gate_open(&[0.05, 0.1], 0.1));
        assert!(!gate_open(&[], 1.0));
    }
}

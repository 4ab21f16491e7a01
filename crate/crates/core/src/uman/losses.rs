use crate::error::{Error, Result};
use crate::nn::{GradTape, Var};

/// Joint classification loss: the mean over sources of each source's mean
/// cross-entropy. `logits[i]` and `labels[i]` belong to source `i`.
pub fn loss_eg(tape: &mut GradTape, logits: &[Var], labels: &[&[usize]]) -> Result<Var> {
    if logits.is_empty() || logits.len() != labels.len() {
        return Err(Error::dim(
            "loss_eg",
            "one label list per source",
            labels.len(),
        ));
    }
    let mut total: Option<Var> = None;
    for (&l, y) in logits.iter().zip(labels) {
        let ones = vec![1.0; y.len()];
        let ce = tape.softmax_cross_entropy(l, y, &ones)?;
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let total = total.expect("at least one source");
    Ok(tape.scale(total, 1.0 / logits.len() as f64))
}

/// Weighted domain loss on discriminator outputs stacked as all source rows
/// (source 0 first) followed by the target rows:
///
/// `-(1/M) Σ_i mean_j[w^s_ij log D] - mean_k[w^t_k log(1 - D)]`.
///
/// Weights are constants; no gradient flows through them.
pub fn loss_ed(
    tape: &mut GradTape,
    disc_probs: Var,
    source_sizes: &[usize],
    source_weights: &[f64],
    target_weights: &[f64],
) -> Result<Var> {
    let m = source_sizes.len();
    let n_source: usize = source_sizes.iter().sum();
    let rows = tape.value(disc_probs).rows();
    if m == 0 || source_sizes.contains(&0) || target_weights.is_empty() {
        return Err(Error::invalid(
            "domain loss needs nonempty source and target batches",
        ));
    }
    if source_weights.len() != n_source || rows != n_source + target_weights.len() {
        return Err(Error::dim(
            "loss_ed",
            format!(
                "{} source + {} target rows",
                source_weights.len(),
                target_weights.len()
            ),
            rows,
        ));
    }
    let mut coeffs = Vec::with_capacity(rows);
    let mut targets = Vec::with_capacity(rows);
    let mut offset = 0;
    for &n in source_sizes {
        for w in &source_weights[offset..offset + n] {
            coeffs.push(w / (m as f64 * n as f64));
            targets.push(1.0);
        }
        offset += n;
    }
    let nt = target_weights.len() as f64;
    for w in target_weights {
        coeffs.push(w / nt);
        targets.push(0.0);
    }
    tape.weighted_bce(disc_probs, &targets, &coeffs)
}

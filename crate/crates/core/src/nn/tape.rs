//! Reverse-mode differentiation over a linear operation record.
//!
//! Every forward operation appends one node holding its output value and
//! whatever it needs for the backward sweep. `backward` walks the nodes in
//! exact reverse order, so each node's gradient is complete (all consumers
//! appear later on the tape) by the time it is propagated.

use crate::error::{Error, Result};
use crate::nn::tensor::{softmax_row, Tensor2};

/// Handle to a value recorded on a [`GradTape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Clamp applied to probabilities before taking logs in the binary
/// cross-entropy.
pub const PROB_CLAMP: f64 = 1e-7;

/// Added to a row norm below this value in [`GradTape::l2_normalize`].
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    L2Normalize {
        input: Var,
        norms: Vec<f64>,
        denoms: Vec<f64>,
    },
    GradReverse {
        input: Var,
        lambda: f64,
    },
    SliceRows {
        input: Var,
        start: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: f64,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        /// Per-row weight already divided by the weight total.
        coeffs: Vec<f64>,
        probs: Tensor2,
    },
    WeightedBce {
        probs: Var,
        targets: Vec<f64>,
        coeffs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
}

#[derive(Debug, Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor2>>,
    visit_order: Vec<usize>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward seed with respect to `v`, if any
    /// gradient reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Node indices in the order the last backward sweep propagated them.
    pub fn last_backward_order(&self) -> &[usize] {
        &self.visit_order
    }

    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// Adds a `1 x m` bias row to every row of `input`.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let b = self.value(bias);
        let x = self.value(input);
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(Error::dim(
                "add_bias",
                format!("1x{}", x.cols()),
                format!("{}x{}", b.rows(), b.cols()),
            ));
        }
        let mut value = x.clone();
        let bias_row = b.row(0).to_vec();
        for r in 0..value.rows() {
            for (v, bb) in value.row_mut(r).iter_mut().zip(&bias_row) {
                *v += bb;
            }
        }
        Ok(self.push(value, Op::AddBias { input, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.max(0.0));
        self.push(value, Op::Relu { input })
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = self.value(input).map(sigmoid);
        self.push(value, Op::Sigmoid { input })
    }

    /// Scales every row to unit Euclidean norm. Rows with norm below
    /// [`NORM_EPS`] get the epsilon added to the denominator instead.
    pub fn l2_normalize(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let norms = x.row_norms();
        let denoms: Vec<f64> = norms
            .iter()
            .map(|&n| if n < NORM_EPS { n + NORM_EPS } else { n })
            .collect();
        let mut value = x.clone();
        for (r, d) in denoms.iter().enumerate() {
            for v in value.row_mut(r) {
                *v /= d;
            }
        }
        self.push(
            value,
            Op::L2Normalize {
                input,
                norms,
                denoms,
            },
        )
    }

    /// Identity forward; backward multiplies the incoming gradient by `-lambda`.
    pub fn grad_reverse(&mut self, input: Var, lambda: f64) -> Result<Var> {
        if !lambda.is_finite() {
            return Err(Error::invalid(format!("gradient reversal lambda {lambda}")));
        }
        let value = self.value(input).clone();
        Ok(self.push(value, Op::GradReverse { input, lambda }))
    }

    pub fn slice_rows(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(input).slice_rows(start, end)?;
        Ok(self.push(value, Op::SliceRows { input, start }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(
                "add",
                format!("{:?}", va.shape()),
                format!("{:?}", vb.shape()),
            ));
        }
        let mut value = va.clone();
        value.add_assign(vb);
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        let value = self.value(input).map(|v| v * factor);
        self.push(value, Op::Scale { input, factor })
    }

    /// Weighted mean softmax cross-entropy:
    /// `sum_i w_i * -log softmax(logits_i)[label_i] / sum_i w_i`.
    ///
    /// All-zero weights give a zero loss with zero gradient.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
        weights: &[f64],
    ) -> Result<Var> {
        let x = self.value(logits);
        if x.rows() == 0 {
            return Err(Error::invalid("cross-entropy over an empty batch"));
        }
        if labels.len() != x.rows() || weights.len() != x.rows() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("{} labels and weights", x.rows()),
                format!("{} labels, {} weights", labels.len(), weights.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.cols()) {
            return Err(Error::invalid(format!(
                "label {bad} outside 0..{}",
                x.cols()
            )));
        }
        if let Some(&w) = weights.iter().find(|&&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid(format!(
                "sample weight {w} must be finite and >= 0"
            )));
        }
        let total: f64 = weights.iter().sum();
        let coeffs: Vec<f64> = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![0.0; weights.len()]
        };
        let mut probs = Tensor2::zeros(x.rows(), x.cols());
        let mut loss = 0.0;
        for (r, row) in x.iter_rows().enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if coeffs[r] > 0.0 {
                loss += coeffs[r] * (lse - row[labels[r]]);
            }
            probs.row_mut(r).copy_from_slice(&softmax_row(row));
        }
        Ok(self.push(
            Tensor2::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                coeffs,
                probs,
            },
        ))
    }

    /// `-sum_r c_r * (t_r log p_r + (1 - t_r) log(1 - p_r))` over a single
    /// probability column, with `p` clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    /// Coefficients act as constants.
    pub fn weighted_bce(&mut self, probs: Var, targets: &[f64], coeffs: &[f64]) -> Result<Var> {
        let p = self.value(probs);
        if p.cols() != 1 || targets.len() != p.rows() || coeffs.len() != p.rows() {
            return Err(Error::dim(
                "weighted_bce",
                format!("{}x1 probabilities with matching targets/coeffs", p.rows()),
                format!(
                    "{}x{}, {} targets, {} coeffs",
                    p.rows(),
                    p.cols(),
                    targets.len(),
                    coeffs.len()
                ),
            ));
        }
        let mut loss = 0.0;
        for ((&pr, &t), &c) in p.data().iter().zip(targets).zip(coeffs) {
            if c == 0.0 {
                continue;
            }
            let q = pr.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            loss -= c * (t * q.ln() + (1.0 - t) * (1.0 - q).ln());
        }
        Ok(self.push(
            Tensor2::scalar(loss),
            Op::WeightedBce {
                probs,
                targets: targets.to_vec(),
                coeffs: coeffs.to_vec(),
            },
        ))
    }

    /// Backward sweep seeded with `d loss / d loss = 1`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::dim("backward", "1x1 loss", format!("{shape:?}")));
        }
        self.backward_from(loss, Tensor2::scalar(1.0))
    }

    /// Backward sweep with an explicit upstream gradient for `output`.
    pub fn backward_from(&mut self, output: Var, seed: Tensor2) -> Result<()> {
        if seed.shape() != self.value(output).shape() {
            return Err(Error::dim(
                "backward_from",
                format!("{:?}", self.value(output).shape()),
                format!("{:?}", seed.shape()),
            ));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.visit_order.clear();
        self.grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of tape node {idx}")));
            }
            self.visit_order.push(idx);
            self.propagate(idx, &g)?;
            self.grads[idx] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor2) {
        match &mut self.grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&mut self, idx: usize, g: &Tensor2) -> Result<()> {
        let node = &self.nodes[idx];
        let mut pending: Vec<(Var, Tensor2)> = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let va = &self.nodes[a.0].value;
                let vb = &self.nodes[b.0].value;
                pending.push((*a, g.matmul_t(vb)?));
                pending.push((*b, va.t_matmul(g)?));
            }
            Op::AddBias { input, bias } => {
                let mut gb = Tensor2::zeros(1, g.cols());
                for row in g.iter_rows() {
                    for (acc, v) in gb.row_mut(0).iter_mut().zip(row) {
                        *acc += v;
                    }
                }
                pending.push((*input, g.clone()));
                pending.push((*bias, gb));
            }
            Op::Relu { input } => {
                let x = &self.nodes[input.0].value;
                let mut gx = g.clone();
                for (gv, xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if *xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                pending.push((*input, gx));
            }
            Op::Sigmoid { input } => {
                let mut gx = g.clone();
                for (gv, s) in gx.data_mut().iter_mut().zip(node.value.data()) {
                    *gv *= s * (1.0 - s);
                }
                pending.push((*input, gx));
            }
            Op::L2Normalize {
                input,
                norms,
                denoms,
            } => {
                // y = x / d with d = |x| (+eps): dx = g / d - y (y.g) / |x|
                let y = &node.value;
                let mut gx = g.clone();
                for r in 0..gx.rows() {
                    let yr = y.row(r);
                    let dot: f64 = yr.iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    let ratio = if norms[r] > 0.0 {
                        denoms[r] / norms[r]
                    } else {
                        0.0
                    };
                    for (gv, yv) in gx.row_mut(r).iter_mut().zip(yr) {
                        *gv = (*gv - yv * dot * ratio) / denoms[r];
                    }
                }
                pending.push((*input, gx));
            }
            Op::GradReverse { input, lambda } => {
                pending.push((*input, g.map(|v| -lambda * v)));
            }
            Op::SliceRows { input, start } => {
                let x = &self.nodes[input.0].value;
                let mut gx = Tensor2::zeros(x.rows(), x.cols());
                for r in 0..g.rows() {
                    gx.row_mut(start + r).copy_from_slice(g.row(r));
                }
                pending.push((*input, gx));
            }
            Op::Add { a, b } => {
                pending.push((*a, g.clone()));
                pending.push((*b, g.clone()));
            }
            Op::Scale { input, factor } => {
                pending.push((*input, g.map(|v| v * factor)));
            }
            Op::SoftmaxCrossEntropy {
                logits,
                labels,
                coeffs,
                probs,
            } => {
                let upstream = g.item();
                let mut gx = probs.clone();
                for r in 0..gx.rows() {
                    let c = coeffs[r] * upstream;
                    let row = gx.row_mut(r);
                    row[labels[r]] -= 1.0;
                    for v in row.iter_mut() {
                        *v *= c;
                    }
                }
                pending.push((*logits, gx));
            }
            Op::WeightedBce {
                probs,
                targets,
                coeffs,
            } => {
                let upstream = g.item();
                let p = &self.nodes[probs.0].value;
                let mut gp = Tensor2::zeros(p.rows(), 1);
                for r in 0..p.rows() {
                    let pr = p.data()[r];
                    if coeffs[r] == 0.0 || !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&pr) {
                        continue;
                    }
                    let t = targets[r];
                    gp.data_mut()[r] = -upstream * coeffs[r] * (t / pr - (1.0 - t) / (1.0 - pr));
                }
                pending.push((*probs, gp));
            }
        }
        for (v, gv) in pending {
            self.accumulate(v, gv);
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

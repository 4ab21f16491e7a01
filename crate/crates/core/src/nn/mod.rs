//! Dense tensors, a gradient tape, small MLPs and SGD.

mod mlp;
mod optim;
mod tape;
mod tensor;

pub use mlp::{Activation, Dense, Mlp};
pub use optim::sgd_step;
pub use tape::{sigmoid, GradTape, Var, NORM_EPS, PROB_CLAMP};
pub use tensor::{softmax, softmax_row, Tensor2};

/// L2-normalizes each row of `z` outside of any tape.
pub fn l2_normalize(z: &Tensor2) -> Tensor2 {
    let mut out = z.clone();
    for (r, n) in z.row_norms().into_iter().enumerate() {
        let d = if n < NORM_EPS { n + NORM_EPS } else { n };
        for v in out.row_mut(r) {
            *v /= d;
        }
    }
    out
}

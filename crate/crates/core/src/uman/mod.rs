//! Margin-based class weighting, the joint losses, the adversarial training
//! loop and thresholded open-set inference.

mod infer;
mod losses;
mod margin;
mod tmr;
mod train;

pub use infer::{decide, infer, infer_batch, Prediction};
pub use losses::{loss_ed, loss_eg};
pub use margin::{
    argmax, margin_of, margin_vector, margins_from_logits, MarginResult, MarginVector,
};
pub use tmr::{gate_open, normalize_weights, source_weight, target_weight, TmrRegister};
pub use train::{
    check_datasets, train, Architecture, GrlSchedule, Hyperparams, LossReport, Method, Networks,
    TrainOutcome, Trainer,
};

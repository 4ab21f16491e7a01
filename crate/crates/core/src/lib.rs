//! Multi-source open-set domain adaptation with margin-weighted adversarial
//! alignment, on a small autodiff core and a synthetic data generator.

pub mod error;
pub mod eval;
pub mod labelspace;
pub mod nn;
pub mod synthgen;
pub mod uman;

pub use error::{Error, Result};
pub use eval::{
    alignment_probe, evaluate, transfer_gain, EvalClass, EvalReport, ProbeConfig, ProbeKind,
    ProbeReport,
};
pub use labelspace::{partition_from_matrix, LabelPartition, UmdaMatrix};
pub use synthgen::{generate, DomainDataset, SyntheticSpec, SyntheticWorld};
pub use uman::{
    train, Hyperparams, LossReport, Method, Networks, Prediction, TrainOutcome, Trainer,
};

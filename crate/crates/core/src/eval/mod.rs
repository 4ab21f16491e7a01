//! Open-set evaluation, baselines and feature-alignment probes.

mod baselines;
mod probe;
mod report;

pub use baselines::{baseline_source_only, baseline_unweighted_adversarial, run_method};
pub use probe::{alignment_probe, two_sample_probe, ProbeConfig, ProbeKind, ProbeReport};
pub use report::{
    evaluate, evaluate_predictions, transfer_gain, ClassAccuracy, EvalClass, EvalReport,
};

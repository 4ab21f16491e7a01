use crate::error::Result;
use crate::labelspace::LabelPartition;
use crate::synthgen::DomainDataset;
use crate::uman::{Hyperparams, Method, TrainOutcome, Trainer};

use super::report::{evaluate, EvalReport};

/// Trains `method` on `datasets` (sources then target) and scores it on
/// `test`. The report is tagged with the method name and seed.
pub fn run_method(
    method: Method,
    datasets: &[DomainDataset],
    test: &DomainDataset,
    partition: &LabelPartition,
    hp: &Hyperparams,
) -> Result<(TrainOutcome, EvalReport)> {
    let outcome = Trainer::new(method, hp.clone()).run(datasets, partition)?;
    let report = evaluate(&outcome.networks, test, partition, hp.w0)?.tagged(
        method.name(),
        None,
        Some(hp.seed),
    );
    Ok((outcome, report))
}

/// Feature extractor and classifier trained on the pooled sources only.
pub fn baseline_source_only(
    datasets: &[DomainDataset],
    test: &DomainDataset,
    partition: &LabelPartition,
    hp: &Hyperparams,
) -> Result<EvalReport> {
    run_method(Method::SourceOnly, datasets, test, partition, hp).map(|(_, r)| r)
}

/// The adversarial pipeline with every sample weight fixed to one.
pub fn baseline_unweighted_adversarial(
    datasets: &[DomainDataset],
    test: &DomainDataset,
    partition: &LabelPartition,
    hp: &Hyperparams,
) -> Result<EvalReport> {
    run_method(Method::UnweightedAdversarial, datasets, test, partition, hp).map(|(_, r)| r)
}

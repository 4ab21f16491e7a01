use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelPartition;
use crate::nn::{l2_normalize, sgd_step, softmax, Activation, GradTape, Mlp, Tensor2};
use crate::synthgen::{batch_iterator, DomainDataset, DomainKind};
use crate::uman::losses::{loss_ed, loss_eg};
use crate::uman::margin::{argmax, margins_from_logits, MarginVector};
use crate::uman::tmr::{normalize_weights, source_weight, target_weight, TmrRegister};

/// Widths of the three networks. `F` ends in a linear layer of width
/// `feature_dim`; `G` is a single linear layer; `D` ends in one logit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_hidden: Vec<usize>,
    pub feature_dim: usize,
    pub discriminator_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            feature_hidden: vec![32],
            feature_dim: 16,
            discriminator_hidden: vec![32],
        }
    }
}

/// `λ(p) = λ_max (2 / (1 + exp(-γ p)) - 1)` with `p = t / T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrlSchedule {
    pub lambda_max: f64,
    pub gamma: f64,
}

impl Default for GrlSchedule {
    fn default() -> Self {
        Self {
            lambda_max: 1.0,
            gamma: 10.0,
        }
    }
}

impl GrlSchedule {
    pub fn lambda(&self, step: usize, max_steps: usize) -> f64 {
        let p = if max_steps == 0 {
            0.0
        } else {
            step as f64 / max_steps as f64
        };
        self.lambda_max * (2.0 / (1.0 + (-self.gamma * p).exp()) - 1.0)
    }
}

fn default_w0() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Rejection threshold on the prediction margin.
    #[serde(default = "default_w0")]
    pub w0: f64,
    /// The register only updates while every source batch error is below this.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub max_steps: usize,
    pub lr_feature: f64,
    pub lr_classifier: f64,
    pub lr_discriminator: f64,
    #[serde(default)]
    pub grl: GrlSchedule,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub architecture: Architecture,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            w0: 0.5,
            epsilon: 0.1,
            max_steps: 1000,
            lr_feature: 0.05,
            lr_classifier: 0.05,
            lr_discriminator: 0.05,
            grl: GrlSchedule::default(),
            batch_size: 32,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl Hyperparams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(0.0..=1.0).contains(&self.w0) {
            out.push(format!("w0 must lie in [0, 1], got {}", self.w0));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            out.push(format!("epsilon must lie in [0, 1], got {}", self.epsilon));
        }
        for (name, lr) in [
            ("lr_feature", self.lr_feature),
            ("lr_classifier", self.lr_classifier),
            ("lr_discriminator", self.lr_discriminator),
        ] {
            if !lr.is_finite() || lr <= 0.0 {
                out.push(format!("{name} must be finite and > 0, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".to_string());
        }
        if !self.grl.lambda_max.is_finite() || self.grl.lambda_max < 0.0 {
            out.push(format!(
                "grl.lambda_max must be finite and >= 0, got {}",
                self.grl.lambda_max
            ));
        }
        if !self.grl.gamma.is_finite() {
            out.push("grl.gamma must be finite".to_string());
        }
        let a = &self.architecture;
        if a.feature_dim == 0
            || a.feature_hidden.contains(&0)
            || a.discriminator_hidden.contains(&0)
        {
            out.push("network widths must be >= 1".to_string());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::Config(v)),
        }
    }
}

/// Feature extractor `F`, classifier `G` and domain discriminator `D`,
/// shared across all domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub feature: Mlp,
    pub classifier: Mlp,
    pub discriminator: Mlp,
}

impl Networks {
    pub fn init(
        input_dim: usize,
        num_classes: usize,
        arch: &Architecture,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(3);
        let mut f_widths = vec![input_dim];
        f_widths.extend(&arch.feature_hidden);
        f_widths.push(arch.feature_dim);
        let mut d_widths = vec![arch.feature_dim];
        d_widths.extend(&arch.discriminator_hidden);
        d_widths.push(1);
        Ok(Self {
            feature: Mlp::new(&f_widths, Activation::Relu, Activation::Identity, &mut rng)?,
            classifier: Mlp::new(
                &[arch.feature_dim, num_classes],
                Activation::Identity,
                Activation::Identity,
                &mut rng,
            )?,
            discriminator: Mlp::new(&d_widths, Activation::Relu, Activation::Identity, &mut rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_width()
    }

    /// L2-normalized features `z`.
    pub fn embed(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(l2_normalize(&self.feature.predict(x)?))
    }

    pub fn class_probs(&self, x: &Tensor2) -> Result<Tensor2> {
        Ok(softmax(&self.classifier.predict(&self.embed(x)?)?))
    }

    fn zero_grad(&mut self) {
        self.feature.zero_grad();
        self.classifier.zero_grad();
        self.discriminator.zero_grad();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Margin-register weighted adversarial training.
    Uman,
    /// Classification loss only.
    SourceOnly,
    /// Adversarial training with every weight fixed at 1.
    #[serde(rename = "unweighted_adv")]
    UnweightedAdversarial,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Uman => "uman",
            Method::SourceOnly => "source_only",
            Method::UnweightedAdversarial => "unweighted_adv",
        }
    }

    pub fn is_adversarial(self) -> bool {
        !matches!(self, Method::SourceOnly)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uman" => Ok(Method::Uman),
            "source_only" => Ok(Method::SourceOnly),
            "unweighted_adv" => Ok(Method::UnweightedAdversarial),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

/// Per-step training record. Weight means are taken over the raw
/// (pre-normalization) weights; `None` when the batch had no such samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub e_g: f64,
    pub e_d: f64,
    pub source_errors: Vec<f64>,
    pub tmr_updated: bool,
    pub grl_lambda: f64,
    pub mean_source_weight_common: Option<f64>,
    pub mean_source_weight_private: Option<f64>,
    pub mean_source_weight: f64,
    pub mean_target_weight: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub networks: Networks,
    pub tmr: TmrRegister,
    pub trace: Vec<LossReport>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Checks that `datasets` holds `M` labeled sources plus a target whose
/// labels stay inside the partition. Returns `|C_s|`.
pub fn check_datasets(datasets: &[DomainDataset], partition: &LabelPartition) -> Result<usize> {
    let m = partition.num_sources();
    if datasets.len() != m + 1 {
        return Err(Error::config(format!(
            "expected {} datasets ({m} sources + target), got {}",
            m + 1,
            datasets.len()
        )));
    }
    let num_classes = partition.contiguous_source_classes()?;
    if num_classes < 2 {
        return Err(Error::config(
            "the source label union needs at least two classes",
        ));
    }
    let dim = datasets[0].feature_dim();
    for (k, d) in datasets.iter().enumerate() {
        let expect_kind = if k < m {
            DomainKind::Source
        } else {
            DomainKind::Target
        };
        if d.kind != expect_kind {
            return Err(Error::config(format!("dataset {k} has kind {:?}", d.kind)));
        }
        if d.is_empty() {
            return Err(Error::EmptyPopulation(format!("dataset of domain {k}")));
        }
        if d.samples.iter().any(|s| s.features.len() != dim) {
            return Err(Error::dim(
                "check_datasets",
                dim,
                format!("mixed widths in domain {k}"),
            ));
        }
        if k < m {
            let allowed = partition.source(k);
            if let Some(s) = d
                .samples
                .iter()
                .find(|s| s.label.is_none_or(|l| !allowed.contains(&l)))
            {
                return Err(Error::config(format!(
                    "source {k} sample label {:?} outside C_s{}",
                    s.label,
                    k + 1
                )));
            }
        } else if d.samples.iter().any(|s| s.label.is_some()) {
            return Err(Error::config(
                "target samples must be unlabeled at training time",
            ));
        }
    }
    Ok(num_classes)
}

/// Runs one training method. The weighting rule is the only thing that
/// differs between methods; `freeze_weights` pins every weight to 1 so
/// that the remaining code path can be compared across methods.
#[derive(Clone, Debug)]
pub struct Trainer {
    method: Method,
    hp: Hyperparams,
    freeze_weights: bool,
}

impl Trainer {
    pub fn new(method: Method, hp: Hyperparams) -> Self {
        Self {
            method,
            hp,
            freeze_weights: false,
        }
    }

    pub fn freeze_weights(mut self, freeze: bool) -> Self {
        self.freeze_weights = freeze;
        self
    }

    pub fn run(
        &self,
        datasets: &[DomainDataset],
        partition: &LabelPartition,
    ) -> Result<TrainOutcome> {
        let hp = &self.hp;
        hp.validate()?;
        let num_classes = check_datasets(datasets, partition)?;
        let m = partition.num_sources();
        let mut nets = Networks::init(
            datasets[0].feature_dim(),
            num_classes,
            &hp.architecture,
            hp.seed,
        )?;
        let mut tmr = TmrRegister::new(num_classes);
        let mut trace: Vec<LossReport> = Vec::with_capacity(hp.max_steps);
        let mut is_common = vec![false; num_classes];
        for &c in partition.common() {
            is_common[c] = true;
        }

        let mut batches = batch_iterator(datasets, hp.batch_size, hp.seed)?;
        for step in 0..hp.max_steps {
            let batch = batches.next_batch()?;
            nets.zero_grad();
            let sizes: Vec<usize> = batch.sources.iter().map(|s| s.labels.len()).collect();
            let n_source: usize = sizes.iter().sum();
            let n_total = n_source + batch.target.indices.len();

            let mut parts: Vec<&Tensor2> = batch.sources.iter().map(|s| &s.features).collect();
            parts.push(&batch.target.features);
            let mut tape = GradTape::new();
            let x = tape.leaf(Tensor2::vstack(&parts)?);
            let z_raw = nets.feature.forward(&mut tape, x)?;
            let z = tape.l2_normalize(z_raw);
            let logits = nets.classifier.forward(&mut tape, z)?;

            let mut source_logits = Vec::with_capacity(m);
            let mut source_errors = Vec::with_capacity(m);
            let mut offset = 0;
            for (src, &n) in batch.sources.iter().zip(&sizes) {
                let v = tape.slice_rows(logits, offset, offset + n)?;
                let wrong = tape
                    .value(v)
                    .iter_rows()
                    .zip(&src.labels)
                    .filter(|(row, &y)| argmax(row) != y)
                    .count();
                source_errors.push(wrong as f64 / n as f64);
                source_logits.push(v);
                offset += n;
            }

            // weighting path is computed on detached values
            let target_margins =
                margins_from_logits(&tape.value(logits).slice_rows(n_source, n_total)?)?;
            let tmr_updated = if self.method.is_adversarial() {
                let mv = MarginVector::from_margins(&target_margins, num_classes)?;
                tmr.gated_update(&source_errors, hp.epsilon, &mv)?
            } else {
                false
            };

            let labels: Vec<usize> = batch
                .sources
                .iter()
                .flat_map(|s| s.labels.iter().copied())
                .collect();
            let uniform = self.freeze_weights || self.method != Method::Uman;
            let raw_ws: Vec<f64> = if uniform {
                vec![1.0; n_source]
            } else {
                labels
                    .iter()
                    .map(|&y| source_weight(&tmr, y))
                    .collect::<Result<_>>()?
            };
            let raw_wt: Vec<f64> = if uniform {
                vec![1.0; target_margins.len()]
            } else {
                target_margins
                    .iter()
                    .map(|mr| target_weight(&tmr, mr))
                    .collect()
            };

            let label_refs: Vec<&[usize]> =
                batch.sources.iter().map(|s| s.labels.as_slice()).collect();
            let e_g_var = loss_eg(&mut tape, &source_logits, &label_refs)?;
            let lambda = hp.grl.lambda(step, hp.max_steps);

            let (loss, e_d_var) = if self.method.is_adversarial() {
                let ws = normalize_weights(&raw_ws)?;
                let wt = normalize_weights(&raw_wt)?;
                let reversed = tape.grad_reverse(z, lambda)?;
                let d_logit = nets.discriminator.forward(&mut tape, reversed)?;
                let d = tape.sigmoid(d_logit);
                let e_d = loss_ed(&mut tape, d, &sizes, &ws, &wt)?;
                (tape.add(e_g_var, e_d)?, Some(e_d))
            } else {
                (e_g_var, None)
            };

            let report = LossReport {
                step,
                e_g: tape.value(e_g_var).item(),
                e_d: e_d_var.map_or(0.0, |v| tape.value(v).item()),
                source_errors,
                tmr_updated,
                grl_lambda: lambda,
                mean_source_weight_common: mean(
                    labels
                        .iter()
                        .zip(&raw_ws)
                        .filter(|(&y, _)| is_common[y])
                        .map(|(_, &w)| w),
                ),
                mean_source_weight_private: mean(
                    labels
                        .iter()
                        .zip(&raw_ws)
                        .filter(|(&y, _)| !is_common[y])
                        .map(|(_, &w)| w),
                ),
                mean_source_weight: mean(raw_ws.iter().copied()).unwrap_or(0.0),
                mean_target_weight: mean(raw_wt.iter().copied()).unwrap_or(0.0),
            };
            if !report.e_g.is_finite() || !report.e_d.is_finite() {
                return Err(Error::Divergence {
                    step,
                    reason: format!(
                        "non-finite loss (E_G = {}, E_D = {})",
                        report.e_g, report.e_d
                    ),
                    last_finite: trace.last().cloned().map(Box::new),
                });
            }

            tape.backward(loss).map_err(|e| Error::Divergence {
                step,
                reason: e.to_string(),
                last_finite: trace.last().cloned().map(Box::new),
            })?;
            nets.feature.collect_grads(&tape);
            nets.classifier.collect_grads(&tape);
            nets.discriminator.collect_grads(&tape);
            let diverged = |e: Error| Error::Divergence {
                step,
                reason: e.to_string(),
                last_finite: trace.last().cloned().map(Box::new),
            };
            sgd_step(&mut nets.feature, hp.lr_feature).map_err(diverged)?;
            sgd_step(&mut nets.classifier, hp.lr_classifier).map_err(diverged)?;
            if self.method.is_adversarial() {
                sgd_step(&mut nets.discriminator, hp.lr_discriminator).map_err(diverged)?;
            }
            if step % 500 == 0 {
                log::debug!(
                    "{} step {step}: E_G {:.4} E_D {:.4} errors {:?}",
                    self.method,
                    report.e_g,
                    report.e_d,
                    report.source_errors
                );
            }
            trace.push(report);
        }
        Ok(TrainOutcome {
            networks: nets,
            tmr,
            trace,
        })
    }
}

/// Trains the full method with its margin-register weighting.
pub fn train(
    datasets: &[DomainDataset],
    partition: &LabelPartition,
    hp: &Hyperparams,
) -> Result<TrainOutcome> {
    Trainer::new(Method::Uman, hp.clone()).run(datasets, partition)
}

//! Seeded Gaussian-cluster domains.
//!
//! Every class gets one global center. Each domain draws samples around the
//! centers of the classes in its label set and then applies its own affine
//! map `x -> R_k x + b_k`, which is the domain gap.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::LabelPartition;
use crate::nn::Tensor2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub feature_dim: usize,
    pub samples_per_class_per_domain: usize,
    pub class_center_scale: f64,
    pub domain_shift_scale: f64,
    #[serde(default)]
    pub domain_rotation: bool,
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.feature_dim == 0 {
            out.push("feature_dim must be >= 1".to_string());
        }
        if self.samples_per_class_per_domain == 0 {
            out.push("samples_per_class_per_domain must be >= 1".to_string());
        }
        for (name, v) in [
            ("class_center_scale", self.class_center_scale),
            ("domain_shift_scale", self.domain_shift_scale),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !v.is_finite() || v < 0.0 {
                out.push(format!("{name} must be finite and >= 0, got {v}"));
            }
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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKind {
    Source,
    Target,
}

/// One feature vector. `label` is the training-time view (absent for the
/// target); the true class is kept separately and only read by evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: Option<usize>,
    truth: Option<usize>,
}

impl Sample {
    pub fn labeled(features: Vec<f64>, label: usize) -> Self {
        Self {
            features,
            label: Some(label),
            truth: Some(label),
        }
    }

    pub fn unlabeled(features: Vec<f64>, truth: Option<usize>) -> Self {
        Self {
            features,
            label: None,
            truth,
        }
    }

    /// Evaluation-only class.
    pub fn true_label(&self) -> Option<usize> {
        self.truth
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    /// Sources are `0..M`, the target is `M`.
    pub domain_id: usize,
    pub kind: DomainKind,
    pub samples: Vec<Sample>,
}

impl DomainDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.features.len())
    }

    pub fn features(&self) -> Result<Tensor2> {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.features.as_slice()).collect();
        Tensor2::from_rows(&rows)
    }

    pub fn gather(&self, idx: &[usize]) -> Result<Tensor2> {
        let rows: Vec<&[f64]> = idx
            .iter()
            .map(|&i| self.samples[i].features.as_slice())
            .collect();
        Tensor2::from_rows(&rows)
    }
}

/// Class centers and per-domain affine maps for one (spec, partition).
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    spec: SyntheticSpec,
    partition: LabelPartition,
    centers: Vec<Vec<f64>>,
    /// `(R_k, b_k)` for every domain, target last.
    transforms: Vec<(Tensor2, Vec<f64>)>,
}

fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect()
}

/// Gram-Schmidt orthonormalization of a Gaussian matrix.
fn random_rotation<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Tensor2 {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while basis.len() < dim {
        let mut v = gaussian_vec(rng, dim, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Tensor2::from_rows(&basis).expect("square basis")
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec, partition: &LabelPartition) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.feature_dim;
        let centers = (0..partition.total_classes())
            .map(|_| gaussian_vec(&mut rng, d, spec.class_center_scale))
            .collect();
        let transforms = (0..=partition.num_sources())
            .map(|_| {
                let rot = if spec.domain_rotation {
                    random_rotation(&mut rng, d)
                } else {
                    Tensor2::identity(d)
                };
                let shift = gaussian_vec(&mut rng, d, spec.domain_shift_scale);
                (rot, shift)
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            partition: partition.clone(),
            centers,
            transforms,
        })
    }

    pub fn center(&self, class: usize) -> &[f64] {
        &self.centers[class]
    }

    /// `R_k x + b_k`.
    pub fn apply_domain(&self, domain: usize, x: &[f64]) -> Vec<f64> {
        let (rot, shift) = &self.transforms[domain];
        (0..x.len())
            .map(|i| rot.row(i).iter().zip(x).map(|(r, v)| r * v).sum::<f64>() + shift[i])
            .collect()
    }

    fn classes_of(&self, domain: usize) -> &[usize] {
        if domain < self.partition.num_sources() {
            self.partition.source(domain)
        } else {
            self.partition.target()
        }
    }

    /// Draws `per_class` samples of every class present in `domain`.
    pub fn sample_domain<R: Rng + ?Sized>(
        &self,
        domain: usize,
        per_class: usize,
        rng: &mut R,
    ) -> DomainDataset {
        let is_target = domain == self.partition.num_sources();
        let d = self.spec.feature_dim;
        let mut samples = Vec::with_capacity(per_class * self.classes_of(domain).len());
        for &c in self.classes_of(domain) {
            for _ in 0..per_class {
                let raw: Vec<f64> = self.centers[c]
                    .iter()
                    .zip(gaussian_vec(rng, d, self.spec.noise_sigma))
                    .map(|(m, e)| m + e)
                    .collect();
                let x = self.apply_domain(domain, &raw);
                samples.push(if is_target {
                    Sample::unlabeled(x, Some(c))
                } else {
                    Sample::labeled(x, c)
                });
            }
        }
        DomainDataset {
            domain_id: domain,
            kind: if is_target {
                DomainKind::Target
            } else {
                DomainKind::Source
            },
            samples,
        }
    }

    /// Training sets: `M` labeled sources followed by the unlabeled target.
    pub fn training_sets(&self) -> Vec<DomainDataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(1);
        (0..=self.partition.num_sources())
            .map(|k| self.sample_domain(k, self.spec.samples_per_class_per_domain, &mut rng))
            .collect()
    }

    /// A fresh target draw, independent of the training draw.
    pub fn target_test_set(&self, per_class: usize) -> DomainDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(2);
        self.sample_domain(self.partition.num_sources(), per_class, &mut rng)
    }
}

/// `M` source datasets followed by the target dataset.
pub fn generate(spec: &SyntheticSpec, partition: &LabelPartition) -> Result<Vec<DomainDataset>> {
    Ok(SyntheticWorld::new(spec, partition)?.training_sets())
}

/// Index sampler for one domain: uniform without replacement within an
/// epoch, reshuffled at every epoch boundary.
#[derive(Clone, Debug)]
struct EpochSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    fn new(len: usize, rng: ChaCha8Rng) -> Self {
        let mut s = Self {
            order: (0..len).collect(),
            cursor: 0,
            rng,
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SourceBatch {
    pub indices: Vec<usize>,
    pub features: Tensor2,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TargetBatch {
    pub indices: Vec<usize>,
    pub features: Tensor2,
}

/// One sub-batch per source plus one target sub-batch.
#[derive(Clone, Debug)]
pub struct AlignedBatch {
    pub sources: Vec<SourceBatch>,
    pub target: TargetBatch,
}

/// Endless stream of aligned batches over `M` sources and a target.
pub struct BatchIterator<'a> {
    datasets: &'a [DomainDataset],
    samplers: Vec<EpochSampler>,
    batch_size: usize,
}

/// `datasets` holds the sources followed by the target.
pub fn batch_iterator(
    datasets: &[DomainDataset],
    batch_size: usize,
    seed: u64,
) -> Result<BatchIterator<'_>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be >= 1"));
    }
    if datasets.len() < 2 {
        return Err(Error::config(
            "need at least one source dataset and a target dataset",
        ));
    }
    if let Some(d) = datasets.iter().find(|d| d.is_empty()) {
        return Err(Error::EmptyPopulation(format!(
            "dataset of domain {}",
            d.domain_id
        )));
    }
    let target = datasets.len() - 1;
    for (k, d) in datasets.iter().enumerate() {
        if k < target && d.samples.iter().any(|s| s.label.is_none()) {
            return Err(Error::invalid(format!(
                "source domain {k} has unlabeled samples"
            )));
        }
    }
    let samplers = datasets
        .iter()
        .enumerate()
        .map(|(k, d)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 16);
            EpochSampler::new(d.len(), rng)
        })
        .collect();
    Ok(BatchIterator {
        datasets,
        samplers,
        batch_size,
    })
}

impl BatchIterator<'_> {
    pub fn next_batch(&mut self) -> Result<AlignedBatch> {
        let m = self.datasets.len() - 1;
        let mut sources = Vec::with_capacity(m);
        for k in 0..m {
            let indices = self.samplers[k].take(self.batch_size);
            let data = &self.datasets[k];
            let labels = indices
                .iter()
                .map(|&i| data.samples[i].label.expect("checked at construction"))
                .collect();
            sources.push(SourceBatch {
                features: data.gather(&indices)?,
                indices,
                labels,
            });
        }
        let indices = self.samplers[m].take(self.batch_size);
        let target = TargetBatch {
            features: self.datasets[m].gather(&indices)?,
            indices,
        };
        Ok(AlignedBatch { sources, target })
    }
}

impl Iterator for BatchIterator<'_> {
    type Item = AlignedBatch;

    fn next(&mut self) -> Option<AlignedBatch> {
        self.next_batch().ok()
    }
}

/// Whether the exported file carries a `label` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelColumn {
    /// Training label for sources, true label for a target test set.
    Include,
    Omit,
}

/// Writes `domain_id,label,f0..f{d-1}` rows (no `label` column with
/// [`LabelColumn::Omit`]).
pub fn export_csv<W: Write>(writer: W, data: &DomainDataset, labels: LabelColumn) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = data.feature_dim();
    let mut header = vec!["domain_id".to_string()];
    if labels == LabelColumn::Include {
        header.push("label".to_string());
    }
    header.extend((0..d).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for s in &data.samples {
        let mut rec = vec![data.domain_id.to_string()];
        if labels == LabelColumn::Include {
            let l = s.label.or(s.truth).ok_or_else(|| {
                Error::invalid("cannot export a label column for samples without labels")
            })?;
            rec.push(l.to_string());
        }
        rec.extend(s.features.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`export_csv`]. Labels of a target file are
/// treated as evaluation-only truth.
pub fn import_csv<R: Read>(reader: R, kind: DomainKind) -> Result<DomainDataset> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let has_label = headers.get(1) == Some("label");
    let first_feature = if has_label { 2 } else { 1 };
    if kind == DomainKind::Source && !has_label {
        return Err(Error::invalid("source CSV needs a label column"));
    }
    let mut domain_id = None;
    let mut samples = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| Error::invalid(format!("row {}: bad {what}", line + 1));
        let id: usize = rec[0].parse().map_err(|_| parse_err("domain_id"))?;
        if *domain_id.get_or_insert(id) != id {
            return Err(Error::invalid(format!(
                "row {}: mixed domain ids",
                line + 1
            )));
        }
        let features = rec
            .iter()
            .skip(first_feature)
            .map(|v| v.parse::<f64>().map_err(|_| parse_err("feature")))
            .collect::<Result<Vec<_>>>()?;
        let label = if has_label {
            Some(rec[1].parse::<usize>().map_err(|_| parse_err("label"))?)
        } else {
            None
        };
        samples.push(match (kind, label) {
            (DomainKind::Source, Some(l)) => Sample::labeled(features, l),
            (_, truth) => Sample::unlabeled(features, truth),
        });
    }
    Ok(DomainDataset {
        domain_id: domain_id.unwrap_or(0),
        kind,
        samples,
    })
}

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use uman_core::labelspace::{partition_from_matrix, LabelPartition, UmdaMatrix};
use uman_core::synthgen::SyntheticSpec;
use uman_core::uman::{Hyperparams, Method};

fn default_test_samples() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("uman-out")
}

/// A complete experiment: label layout, data generator, training settings,
/// the methods to compare and the seeds to run them on.
///
/// The `seed` fields of `synthetic` and `hyperparams` are driven by `seeds`
/// and must be left at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub umda_matrix: UmdaMatrix,
    pub synthetic: SyntheticSpec,
    pub hyperparams: Hyperparams,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_test_samples")]
    pub test_samples_per_class: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Every violated constraint across all sub-configurations.
    pub fn violations(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .umda_matrix
            .violations()
            .into_iter()
            .map(|v| format!("umda_matrix: {v}"))
            .collect();
        out.extend(
            self.synthetic
                .violations()
                .into_iter()
                .map(|v| format!("synthetic: {v}")),
        );
        out.extend(
            self.hyperparams
                .violations()
                .into_iter()
                .map(|v| format!("hyperparams: {v}")),
        );
        if self.synthetic.seed != 0 || self.hyperparams.seed != 0 {
            out.push("seeds are taken from the `seeds` list; leave synthetic.seed and hyperparams.seed unset".into());
        }
        if self.methods.is_empty() {
            out.push("methods: at least one method is required".into());
        }
        if has_duplicates(&self.methods) {
            out.push("methods: duplicate entries".into());
        }
        if self.seeds.is_empty() {
            out.push("seeds: at least one seed is required".into());
        }
        if has_duplicates(&self.seeds) {
            out.push("seeds: duplicate entries".into());
        }
        if self.test_samples_per_class == 0 {
            out.push("test_samples_per_class must be >= 1".into());
        }
        if out.is_empty() {
            if let Ok(p) = partition_from_matrix(&self.umda_matrix) {
                if p.source_union().len() < 2 {
                    out.push("umda_matrix: the sources need at least two classes in total".into());
                }
            }
        }
        out
    }

    pub fn partition(&self) -> Result<LabelPartition> {
        Ok(partition_from_matrix(&self.umda_matrix)?)
    }

    pub fn synthetic_for(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            seed,
            ..self.synthetic.clone()
        }
    }

    pub fn hyperparams_for(&self, seed: u64) -> Hyperparams {
        Hyperparams {
            seed,
            ..self.hyperparams.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form (sorted
    /// keys, defaults filled in, `output_dir` left out).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
        }
        let text = serde_json::to_string(&canonical(&v)).expect("value serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}

fn canonical(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = serde_json::Map::new();
            for k in keys {
                out.insert(k.clone(), canonical(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(canonical).collect()),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"{
        "umda_matrix": {"rows": [[2, 2, 3], [1, 1, 1]]},
        "synthetic": {"feature_dim": 4, "samples_per_class_per_domain": 10,
                      "class_center_scale": 1.0, "domain_shift_scale": 0.5, "noise_sigma": 0.3},
        "hyperparams": {"max_steps": 5, "lr_feature": 0.05, "lr_classifier": 0.05,
                        "lr_discriminator": 0.05, "batch_size": 4},
        "methods": ["uman", "source_only"],
        "seeds": [0, 1]
    }"#;

    #[test]
    fn hash_ignores_field_order_and_output_dir() {
        let a = ExperimentConfig::from_json(SAMPLE).unwrap();
        let reordered = r#"{
            "seeds": [0, 1],
            "methods": ["uman", "source_only"],
            "output_dir": "elsewhere",
            "hyperparams": {"batch_size": 4, "lr_discriminator": 0.05, "lr_classifier": 0.05,
                            "lr_feature": 0.05, "max_steps": 5},
            "synthetic": {"noise_sigma": 0.3, "domain_shift_scale": 0.5, "class_center_scale": 1.0,
                          "samples_per_class_per_domain": 10, "feature_dim": 4},
            "umda_matrix": {"rows": [[2, 2, 3], [1, 1, 1]]}
        }"#;
        let b = ExperimentConfig::from_json(reordered).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        let mut c = a.clone();
        c.seeds.push(2);
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn violations_are_collected_together() {
        let mut cfg = ExperimentConfig::from_json(SAMPLE).unwrap();
        assert!(cfg.violations().is_empty());
        cfg.umda_matrix.common_sizes[0] = 5;
        cfg.methods.clear();
        cfg.seeds.clear();
        let v = cfg.violations();
        assert!(
            v.iter().any(|s| s.contains("|C_1| = 5 exceeds |C| = 3")),
            "{v:?}"
        );
        assert!(v.iter().any(|s| s.contains("at least one method")));
        assert!(v.iter().any(|s| s.contains("at least one seed")));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = SAMPLE.replacen("\"seeds\"", "\"seedz\": [], \"seeds\"", 1);
        assert!(ExperimentConfig::from_json(&text).is_err());
    }
}

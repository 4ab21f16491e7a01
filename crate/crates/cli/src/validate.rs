use std::collections::BTreeSet;
use std::fmt::Write;

use uman_core::labelspace::LabelPartition;

use crate::config::ExperimentConfig;

/// `|a ∩ b|` and `|a ∪ b|`.
pub fn overlap_counts(a: &[usize], b: &[usize]) -> (usize, usize) {
    let a: BTreeSet<_> = a.iter().collect();
    let b: BTreeSet<_> = b.iter().collect();
    (a.intersection(&b).count(), a.union(&b).count())
}

fn ratio(num: usize, den: usize) -> String {
    if den == 0 {
        "undefined".into()
    } else {
        format!("{num}/{den} = {:.4}", num as f64 / den as f64)
    }
}

fn ranges(classes: &[usize]) -> String {
    if classes.is_empty() {
        return "{}".into();
    }
    let mut parts = Vec::new();
    let mut start = classes[0];
    let mut prev = start;
    for &c in &classes[1..] {
        if c != prev + 1 {
            parts.push((start, prev));
            start = c;
        }
        prev = c;
    }
    parts.push((start, prev));
    let body: Vec<String> = parts
        .into_iter()
        .map(|(a, b)| {
            if a == b {
                a.to_string()
            } else {
                format!("{a}-{b}")
            }
        })
        .collect();
    let n = classes.len();
    format!(
        "{{{}}} ({n} class{})",
        body.join(", "),
        if n == 1 { "" } else { "es" }
    )
}

/// Human-readable layout of the label space and its Jaccard overlaps.
pub fn describe(cfg: &ExperimentConfig, partition: &LabelPartition) -> String {
    let mut out = String::new();
    let m = partition.num_sources();
    let _ = writeln!(out, "config hash: {}", cfg.hash());
    let _ = writeln!(out, "classes: {} total", partition.total_classes());
    let _ = writeln!(out, "  C      {}", ranges(partition.common()));
    let _ = writeln!(out, "  C̄_s    {}", ranges(partition.source_private()));
    let _ = writeln!(out, "  C̄_t    {}", ranges(partition.target_private()));
    for i in 0..m {
        let _ = writeln!(out, "  C_s{}   {}", i + 1, ranges(partition.source(i)));
    }
    let _ = writeln!(out, "  C_t    {}", ranges(partition.target()));
    let _ = writeln!(out, "source/target overlap (Jaccard):");
    for i in 0..m {
        let (n, d) = overlap_counts(partition.source(i), partition.target());
        let _ = writeln!(out, "  xi_{}    {}", i + 1, ratio(n, d));
    }
    if m > 1 {
        let _ = writeln!(out, "source/source overlap (Jaccard):");
        for i in 0..m {
            for j in i + 1..m {
                let (n, d) = overlap_counts(partition.source(i), partition.source(j));
                let _ = writeln!(out, "  xi_{}{}   {}", i + 1, j + 1, ratio(n, d));
            }
        }
    }
    let _ = writeln!(
        out,
        "runs: {} method(s) x {} seed(s)",
        cfg.methods.len(),
        cfg.seeds.len()
    );
    out
}

//! Label-set configurations of a multi-source open-set problem.
//!
//! Class indices are laid out as `C` first, then the source-private union
//! `C̄_s`, then the target-private set `C̄_t`. A generated partition therefore
//! has `C_s = 0..|C| + |C̄_s|`, which is also the classifier's output width.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sizes of the common/private label sets per domain, plus an optional
/// override for how much the source-private blocks overlap.
///
/// Serialized as two rows `[|C_1| .. |C_M|, |C|]` and
/// `[|C̄_s1| .. |C̄_sM|, |C̄_t|]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct UmdaMatrix {
    pub common_sizes: Vec<usize>,
    pub private_sizes: Vec<usize>,
    pub target_common: usize,
    pub target_private: usize,
    /// `Σ|C̄_si| − |C̄_s|`. For two sources this is `|C̄_s1 ∩ C̄_s2|`.
    /// Defaults to 0 (disjoint private blocks).
    pub source_private_overlap: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: [Vec<usize>; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    source_private_overlap: Option<usize>,
}

impl TryFrom<MatrixRepr> for UmdaMatrix {
    type Error = String;

    fn try_from(repr: MatrixRepr) -> std::result::Result<Self, String> {
        let [top, bottom] = repr.rows;
        if top.len() != bottom.len() {
            return Err(format!(
                "UMDA matrix rows differ in length ({} vs {})",
                top.len(),
                bottom.len()
            ));
        }
        if top.len() < 2 {
            return Err(
                "UMDA matrix needs at least one source column plus the target column".into(),
            );
        }
        let m = top.len() - 1;
        Ok(UmdaMatrix {
            common_sizes: top[..m].to_vec(),
            private_sizes: bottom[..m].to_vec(),
            target_common: top[m],
            target_private: bottom[m],
            source_private_overlap: repr.source_private_overlap,
        })
    }
}

impl From<UmdaMatrix> for MatrixRepr {
    fn from(m: UmdaMatrix) -> Self {
        let mut top = m.common_sizes;
        top.push(m.target_common);
        let mut bottom = m.private_sizes;
        bottom.push(m.target_private);
        MatrixRepr {
            rows: [top, bottom],
            source_private_overlap: m.source_private_overlap,
        }
    }
}

impl UmdaMatrix {
    pub fn new(
        common_sizes: Vec<usize>,
        private_sizes: Vec<usize>,
        target_common: usize,
        target_private: usize,
    ) -> Self {
        Self {
            common_sizes,
            private_sizes,
            target_common,
            target_private,
            source_private_overlap: None,
        }
    }

    pub fn num_sources(&self) -> usize {
        self.common_sizes.len()
    }

    pub fn source_private_union(&self) -> usize {
        let total: usize = self.private_sizes.iter().sum();
        total.saturating_sub(self.source_private_overlap.unwrap_or(0))
    }

    /// Every violated constraint, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let m = self.num_sources();
        if m == 0 {
            out.push("at least one source domain is required".to_string());
        }
        if self.private_sizes.len() != m {
            out.push(format!(
                "{} common sizes but {} private sizes",
                m,
                self.private_sizes.len()
            ));
        }
        for (i, &c) in self.common_sizes.iter().enumerate() {
            if c > self.target_common {
                out.push(format!(
                    "|C_{}| = {c} exceeds |C| = {}",
                    i + 1,
                    self.target_common
                ));
            }
        }
        let common_total: usize = self.common_sizes.iter().sum();
        if common_total < self.target_common {
            out.push(format!(
                "common blocks sum to {common_total} and cannot cover |C| = {}",
                self.target_common
            ));
        }
        let private_total: usize = self.private_sizes.iter().sum();
        let overlap = self.source_private_overlap.unwrap_or(0);
        if overlap > private_total {
            out.push(format!(
                "source-private overlap {overlap} exceeds the private total {private_total}"
            ));
        } else {
            let union = private_total - overlap;
            for (i, &p) in self.private_sizes.iter().enumerate() {
                if p > union {
                    out.push(format!(
                        "|C̄_s{}| = {p} exceeds |C̄_s| = {union} implied by the overlap override",
                        i + 1
                    ));
                }
            }
        }
        if out.is_empty() && m > 0 {
            if let Err(e) = chain_overlaps(&self.common_sizes, self.target_common) {
                out.push(format!("common blocks: {e}"));
            }
            if let Err(e) = chain_overlaps(&self.private_sizes, self.source_private_union()) {
                out.push(format!("source-private blocks: {e}"));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations().into_iter().next() {
            None => Ok(()),
            Some(first) => Err(Error::Config(first)),
        }
    }
}

/// Concrete class-index sets realizing a [`UmdaMatrix`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPartition {
    total_classes: usize,
    sources: Vec<Vec<usize>>,
    target: Vec<usize>,
    common_per_source: Vec<Vec<usize>>,
    private_per_source: Vec<Vec<usize>>,
    common: Vec<usize>,
    source_union: Vec<usize>,
    source_private: Vec<usize>,
    target_private: Vec<usize>,
}

fn sorted(set: &BTreeSet<usize>) -> Vec<usize> {
    set.iter().copied().collect()
}

fn to_set(v: &[usize]) -> BTreeSet<usize> {
    v.iter().copied().collect()
}

impl LabelPartition {
    /// Derives `C_i`, `C̄_si`, `C`, `C_s`, `C̄_s` and `C̄_t` from the source and
    /// target label sets.
    pub fn from_sets(
        total_classes: usize,
        sources: Vec<Vec<usize>>,
        target: Vec<usize>,
    ) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::config("at least one source label set is required"));
        }
        let check = |name: &str, set: &[usize]| -> Result<()> {
            if let Some(&c) = set.iter().find(|&&c| c >= total_classes) {
                return Err(Error::config(format!(
                    "{name} contains class {c} outside 0..{total_classes}"
                )));
            }
            Ok(())
        };
        let source_sets: Vec<BTreeSet<usize>> = sources.iter().map(|s| to_set(s)).collect();
        for (i, s) in sources.iter().enumerate() {
            check(&format!("C_s{}", i + 1), s)?;
        }
        check("C_t", &target)?;
        let target_set = to_set(&target);

        let common_sets: Vec<BTreeSet<usize>> = source_sets
            .iter()
            .map(|s| s.intersection(&target_set).copied().collect())
            .collect();
        let private_sets: Vec<BTreeSet<usize>> = source_sets
            .iter()
            .zip(&common_sets)
            .map(|(s, c)| s.difference(c).copied().collect())
            .collect();
        let common: BTreeSet<usize> = common_sets.iter().flatten().copied().collect();
        let source_union: BTreeSet<usize> = source_sets.iter().flatten().copied().collect();
        let source_private: BTreeSet<usize> = private_sets.iter().flatten().copied().collect();
        let target_private: BTreeSet<usize> = target_set.difference(&common).copied().collect();

        Ok(Self {
            total_classes,
            sources: source_sets.iter().map(sorted).collect(),
            target: sorted(&target_set),
            common_per_source: common_sets.iter().map(sorted).collect(),
            private_per_source: private_sets.iter().map(sorted).collect(),
            common: sorted(&common),
            source_union: sorted(&source_union),
            source_private: sorted(&source_private),
            target_private: sorted(&target_private),
        })
    }

    pub fn total_classes(&self) -> usize {
        self.total_classes
    }
    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }
    /// `C_si`.
    pub fn source(&self, i: usize) -> &[usize] {
        &self.sources[i]
    }
    pub fn sources(&self) -> &[Vec<usize>] {
        &self.sources
    }
    /// `C_t`.
    pub fn target(&self) -> &[usize] {
        &self.target
    }
    /// `C_i = C_si ∩ C_t`.
    pub fn common_of(&self, i: usize) -> &[usize] {
        &self.common_per_source[i]
    }
    /// `C̄_si = C_si \ C_i`.
    pub fn private_of(&self, i: usize) -> &[usize] {
        &self.private_per_source[i]
    }
    /// `C = ∪ C_i`.
    pub fn common(&self) -> &[usize] {
        &self.common
    }
    /// `C_s = ∪ C_si`.
    pub fn source_union(&self) -> &[usize] {
        &self.source_union
    }
    /// `C̄_s = ∪ C̄_si`.
    pub fn source_private(&self) -> &[usize] {
        &self.source_private
    }
    /// `C̄_t = C_t \ C`.
    pub fn target_private(&self) -> &[usize] {
        &self.target_private
    }

    /// `|C_s|` when `C_s` is exactly `0..|C_s|`, which the classifier head
    /// relies on.
    pub fn contiguous_source_classes(&self) -> Result<usize> {
        let n = self.source_union.len();
        if self.source_union.iter().enumerate().all(|(i, &c)| i == c) {
            Ok(n)
        } else {
            Err(Error::config(
                "source label union must be the contiguous range 0..|C_s|",
            ))
        }
    }

    /// Sizes measured back into matrix form.
    pub fn measure(&self) -> UmdaMatrix {
        let private_total: usize = self.private_per_source.iter().map(Vec::len).sum();
        let overlap = private_total - self.source_private.len();
        UmdaMatrix {
            common_sizes: self.common_per_source.iter().map(Vec::len).collect(),
            private_sizes: self.private_per_source.iter().map(Vec::len).collect(),
            target_common: self.common.len(),
            target_private: self.target_private.len(),
            source_private_overlap: (overlap > 0).then_some(overlap),
        }
    }
}

/// Overlap between consecutive nonzero blocks (block `j` and `j+1`, the last
/// wrapping onto the first) so that the chain covers exactly `universe`
/// indices, spread as evenly as each adjacent pair allows.
fn chain_overlaps(sizes: &[usize], universe: usize) -> std::result::Result<Vec<usize>, String> {
    let blocks: Vec<usize> = sizes.iter().copied().filter(|&s| s > 0).collect();
    let total: usize = blocks.iter().sum();
    if total < universe {
        return Err(format!(
            "blocks sum to {total} and cannot cover {universe} classes"
        ));
    }
    if let Some(&s) = blocks.iter().find(|&&s| s > universe) {
        return Err(format!(
            "block of size {s} exceeds the {universe} available classes"
        ));
    }
    let k = blocks.len();
    let excess = total - universe;
    if k == 0 {
        return Ok(Vec::new());
    }
    if k == 1 {
        // a single block of size <= universe with total >= universe tiles it exactly
        return Ok(vec![0]);
    }
    let caps: Vec<usize> = (0..k).map(|j| blocks[j].min(blocks[(j + 1) % k])).collect();
    let mut overlaps: Vec<usize> = (0..k)
        .map(|j| excess / k + usize::from(j < excess % k))
        .collect();
    let mut spill = 0;
    for (o, &cap) in overlaps.iter_mut().zip(&caps) {
        if *o > cap {
            spill += *o - cap;
            *o = cap;
        }
    }
    while spill > 0 {
        let mut placed = false;
        for (o, &cap) in overlaps.iter_mut().zip(&caps) {
            if spill > 0 && *o < cap {
                *o += 1;
                spill -= 1;
                placed = true;
            }
        }
        if !placed {
            return Err(format!(
                "blocks {blocks:?} overlap by {excess} in total, more than adjacent blocks can share"
            ));
        }
    }
    Ok(overlaps)
}

/// Lays blocks around a circle of `universe` positions, returning each
/// block's positions (empty for zero-size blocks).
fn place_chain(sizes: &[usize], universe: usize) -> std::result::Result<Vec<Vec<usize>>, String> {
    let overlaps = chain_overlaps(sizes, universe)?;
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0usize;
    let mut j = 0;
    for &s in sizes {
        if s == 0 {
            out.push(Vec::new());
            continue;
        }
        out.push((0..s).map(|o| (start + o) % universe).collect());
        start += s - overlaps[j];
        j += 1;
    }
    Ok(out)
}

/// Assigns concrete class indices realizing `m`.
///
/// Common blocks `C_i` are chained around a circular ordering of `C` with
/// pairwise overlaps as equal as possible; source-private blocks are chained
/// the same way over `C̄_s`. With equal block sizes the `i`-th block starts at
/// offset `⌊(i−1)|C|/M⌋`.
pub fn partition_from_matrix(m: &UmdaMatrix) -> Result<LabelPartition> {
    m.validate()?;
    let n_common = m.target_common;
    let n_private = m.source_private_union();
    let common_blocks = place_chain(&m.common_sizes, n_common).map_err(Error::Config)?;
    let private_blocks = place_chain(&m.private_sizes, n_private).map_err(Error::Config)?;

    let sources: Vec<Vec<usize>> = common_blocks
        .iter()
        .zip(&private_blocks)
        .map(|(c, p)| {
            let mut s: Vec<usize> = c.clone();
            s.extend(p.iter().map(|&i| n_common + i));
            s.sort_unstable();
            s
        })
        .collect();
    let total = n_common + n_private + m.target_private;
    let target_private_start = n_common + n_private;
    let target: Vec<usize> = (0..n_common).chain(target_private_start..total).collect();
    LabelPartition::from_sets(total, sources, target)
}

/// `|A ∩ B| / |A ∪ B|`; errors when both sets are empty.
pub fn jaccard(a: &[usize], b: &[usize]) -> Result<f64> {
    let a = to_set(a);
    let b = to_set(b);
    let union = a.union(&b).count();
    if union == 0 {
        return Err(Error::invalid("Jaccard index of two empty label sets"));
    }
    Ok(a.intersection(&b).count() as f64 / union as f64)
}

/// `ξ_i` between source `i` (0-based) and the target.
pub fn jaccard_source_target(p: &LabelPartition, i: usize) -> Result<f64> {
    if i >= p.num_sources() {
        return Err(Error::invalid(format!(
            "source index {i} outside 0..{}",
            p.num_sources()
        )));
    }
    jaccard(p.source(i), p.target())
}

/// `ξ_ij` between sources `i` and `j` (0-based).
pub fn jaccard_source_source(p: &LabelPartition, i: usize, j: usize) -> Result<f64> {
    let m = p.num_sources();
    if i >= m || j >= m {
        return Err(Error::invalid(format!(
            "source indices ({i}, {j}) outside 0..{m}"
        )));
    }
    jaccard(p.source(i), p.source(j))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMembership {
    pub class: usize,
    pub in_common: bool,
    pub in_source_private: bool,
    pub in_target_private: bool,
    pub in_source: Vec<bool>,
}

pub fn membership_masks(p: &LabelPartition) -> Vec<ClassMembership> {
    let common = to_set(p.common());
    let source_private = to_set(p.source_private());
    let target_private = to_set(p.target_private());
    let sources: Vec<BTreeSet<usize>> = p.sources().iter().map(|s| to_set(s)).collect();
    (0..p.total_classes())
        .map(|c| ClassMembership {
            class: c,
            in_common: common.contains(&c),
            in_source_private: source_private.contains(&c),
            in_target_private: target_private.contains(&c),
            in_source: sources.iter().map(|s| s.contains(&c)).collect(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_source_forced_layout() {
        let p = partition_from_matrix(&UmdaMatrix::new(vec![3], vec![2], 3, 1)).unwrap();
        assert_eq!(p.common_of(0), &[0, 1, 2]);
        assert_eq!(p.private_of(0), &[3, 4]);
        assert_eq!(p.target_private(), &[5]);
    }

    #[test]
    fn office31_matrix_overlap() {
        let m = UmdaMatrix::new(vec![7, 7], vec![5, 5], 10, 11);
        let p = partition_from_matrix(&m).unwrap();
        let inter: Vec<_> = p
            .common_of(0)
            .iter()
            .filter(|c| p.common_of(1).contains(c))
            .collect();
        assert_eq!(inter.len(), 4);
        assert_eq!(p.common().len(), 10);
        assert_eq!(p.total_classes(), 31);
        assert!((jaccard_source_target(&p, 0).unwrap() - 7.0 / 26.0).abs() < 1e-15);
    }

    #[test]
    fn exact_tiling_has_no_overlap() {
        let p = partition_from_matrix(&UmdaMatrix::new(vec![5, 5], vec![0, 0], 10, 0)).unwrap();
        assert!(p.common_of(0).iter().all(|c| !p.common_of(1).contains(c)));
    }

    #[test]
    fn equal_blocks_start_at_even_offsets() {
        let p =
            partition_from_matrix(&UmdaMatrix::new(vec![4, 4, 4], vec![2, 2, 2], 10, 5)).unwrap();
        // offsets floor((i-1)*10/3) = 0, 3, 6
        assert_eq!(p.common_of(0), &[0, 1, 2, 3]);
        assert_eq!(p.common_of(1), &[3, 4, 5, 6]);
        assert_eq!(p.common_of(2), &[6, 7, 8, 9]);
    }

    #[test]
    fn infeasible_matrices_name_the_constraint() {
        let err = partition_from_matrix(&UmdaMatrix::new(vec![11, 3], vec![1, 1], 10, 0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("|C_1| = 11 exceeds |C| = 10"), "{err}");

        let err = partition_from_matrix(&UmdaMatrix::new(vec![3, 3], vec![1, 1], 10, 0))
            .unwrap_err()
            .to_string();
        assert!(err.contains("cannot cover"), "{err}");

        let mut m = UmdaMatrix::new(vec![3, 3], vec![1, 1], 6, 0);
        m.source_private_overlap = Some(3);
        assert!(partition_from_matrix(&m).is_err());
        assert!(partition_from_matrix(&UmdaMatrix::new(vec![], vec![], 0, 0)).is_err());
    }

    #[test]
    fn private_overlap_override() {
        let mut m = UmdaMatrix::new(vec![10, 10], vec![6, 6], 10, 11);
        m.source_private_overlap = Some(4);
        let p = partition_from_matrix(&m).unwrap();
        assert_eq!(p.source_private().len(), 8);
        let shared = p
            .private_of(0)
            .iter()
            .filter(|c| p.private_of(1).contains(c))
            .count();
        assert_eq!(shared, 4);
        assert_eq!(p.measure(), m);
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&[1, 2], &[2, 1]).unwrap(), 1.0);
        assert_eq!(jaccard(&[1], &[2]).unwrap(), 0.0);
        assert!(jaccard(&[], &[]).is_err());
        let p = partition_from_matrix(&UmdaMatrix::new(vec![2, 2], vec![1, 1], 4, 1)).unwrap();
        assert_eq!(jaccard_source_source(&p, 1, 1).unwrap(), 1.0);
        assert!(jaccard_source_source(&p, 0, 2).is_err());
        assert!(jaccard_source_target(&p, 2).is_err());
    }

    #[test]
    fn masks_follow_definitions() {
        let p = partition_from_matrix(&UmdaMatrix::new(vec![2, 2], vec![1, 1], 4, 2)).unwrap();
        let masks = membership_masks(&p);
        // class 0 is only in C_1
        assert!(masks[0].in_common && masks[0].in_source[0] && !masks[0].in_source[1]);
        assert!(!masks[0].in_source_private);
        for m in masks.iter().filter(|m| m.in_target_private) {
            assert!(m.in_source.iter().all(|&b| !b));
        }
    }

    #[test]
    fn matrix_json_layout() {
        let m: UmdaMatrix = serde_json::from_str(r#"{"rows": [[7, 7, 10], [5, 5, 11]]}"#).unwrap();
        assert_eq!(m, UmdaMatrix::new(vec![7, 7], vec![5, 5], 10, 11));
        let back = serde_json::to_value(&m).unwrap();
        assert_eq!(back, serde_json::json!({"rows": [[7, 7, 10], [5, 5, 11]]}));
        assert!(serde_json::from_str::<UmdaMatrix>(r#"{"rows": [[7, 10], [5]]}"#).is_err());
    }
}

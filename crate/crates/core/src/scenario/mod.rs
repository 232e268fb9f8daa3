//! Scenario definition: UMDA-Matrix parsing, per-domain label spaces, and
//! synthetic feature-space domains with controllable domain shift and
//! category shift.
//!
//! A scenario has `M` source domains and one target domain. The 2x(M+1)
//! UMDA-Matrix fixes, per column, the number of classes a domain shares
//! with the target (row 1) and the number of classes private to it
//! (row 2); the last column describes the target itself: the size of the
//! union of shared classes and the number of target-only (unknown)
//! classes.

mod dataset;

pub use dataset::{
    generate_domain, AnchorSet, DomainDataset, DomainId, DomainParams, DomainTransform,
};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2x(M+1) grid of shared/unknown class counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UmdaMatrix {
    shared_counts: Vec<usize>,
    unknown_counts: Vec<usize>,
}

impl UmdaMatrix {
    /// Validates a 2-row grid. Row 1 holds `|C_1| .. |C_M| |C|`, row 2
    /// `|private_1| .. |private_M| |unknown_target|`.
    pub fn parse(rows: &[Vec<i64>]) -> Result<Self> {
        if rows.len() != 2 {
            return Err(Error::Config(format!(
                "UMDA-Matrix needs exactly 2 rows, got {}",
                rows.len()
            )));
        }
        if rows[0].len() != rows[1].len() {
            return Err(Error::Config("UMDA-Matrix rows have unequal lengths".into()));
        }
        if rows[0].len() < 2 {
            return Err(Error::Config(
                "UMDA-Matrix needs at least one source column and the target column".into(),
            ));
        }
        for &v in rows.iter().flatten() {
            if v < 0 {
                return Err(Error::Config(format!("negative count {v} in UMDA-Matrix")));
            }
        }
        Ok(Self {
            shared_counts: rows[0].iter().map(|&v| v as usize).collect(),
            unknown_counts: rows[1].iter().map(|&v| v as usize).collect(),
        })
    }

    /// Number of source domains.
    pub fn num_sources(&self) -> usize {
        self.shared_counts.len() - 1
    }

    /// Shared-class count for source `m`.
    pub fn shared_count(&self, m: usize) -> usize {
        self.shared_counts[m]
    }

    /// Size of the union of shared classes, `|C|`.
    pub fn shared_union_count(&self) -> usize {
        *self.shared_counts.last().unwrap()
    }

    /// Private-class count for source `m`.
    pub fn private_count(&self, m: usize) -> usize {
        self.unknown_counts[m]
    }

    /// Number of target-only classes, `|unknown_target|`.
    pub fn target_unknown_count(&self) -> usize {
        *self.unknown_counts.last().unwrap()
    }

    pub fn rows(&self) -> [Vec<usize>; 2] {
        [self.shared_counts.clone(), self.unknown_counts.clone()]
    }
}

/// How the shared class sets of different sources may overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    /// Pairwise disjoint shared sets; requires `sum |C_m| == |C|`.
    Empty,
    /// Each source takes a prefix of the union; requires `max |C_m| == |C|`.
    Nested,
    /// Random subsets of the union whose union covers it exactly.
    Random,
}

/// Realized label sets of one scenario.
///
/// Global class ids are allocated in blocks: the shared union `C` first,
/// then each source's private classes, then the target-only classes. Ids
/// are opaque labels; no algorithm depends on their order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    source_shared: Vec<BTreeSet<usize>>,
    source_private: Vec<BTreeSet<usize>>,
    target_unknown: BTreeSet<usize>,
}

impl LabelSpace {
    pub fn num_sources(&self) -> usize {
        self.source_shared.len()
    }

    /// Classes of source `m` shared with the target (`C_m`).
    pub fn source_shared(&self, m: usize) -> &BTreeSet<usize> {
        &self.source_shared[m]
    }

    /// Classes private to source `m`.
    pub fn source_private(&self, m: usize) -> &BTreeSet<usize> {
        &self.source_private[m]
    }

    /// Full label set of source `m` (`C_{s_m}`), sorted.
    pub fn source_classes(&self, m: usize) -> Vec<usize> {
        self.source_shared[m]
            .union(&self.source_private[m])
            .copied()
            .collect()
    }

    /// Union of all shared classes (`C`).
    pub fn shared_union(&self) -> BTreeSet<usize> {
        self.source_shared
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect()
    }

    /// Target-only classes, never present in any source.
    pub fn target_unknown(&self) -> &BTreeSet<usize> {
        &self.target_unknown
    }

    /// Full target label set (`C` plus unknown classes), sorted.
    pub fn target_classes(&self) -> Vec<usize> {
        let mut all = self.shared_union();
        all.extend(self.target_unknown.iter().copied());
        all.into_iter().collect()
    }

    /// Union pseudo-label set over all sources, sorted.
    pub fn union_pseudo_classes(&self) -> Vec<usize> {
        let mut all = BTreeSet::new();
        for m in 0..self.num_sources() {
            all.extend(self.source_shared[m].iter().copied());
            all.extend(self.source_private[m].iter().copied());
        }
        all.into_iter().collect()
    }

    /// Every class id used anywhere in the scenario, sorted.
    pub fn all_classes(&self) -> Vec<usize> {
        let mut all: BTreeSet<usize> = self.union_pseudo_classes().into_iter().collect();
        all.extend(self.target_unknown.iter().copied());
        all.into_iter().collect()
    }

    fn check_against(&self, matrix: &UmdaMatrix) -> Result<()> {
        let m = self.num_sources();
        for i in 0..m {
            if self.source_shared[i].len() != matrix.shared_count(i) {
                return Err(Error::Invariant(format!(
                    "source {i} realized {} shared classes, matrix says {}",
                    self.source_shared[i].len(),
                    matrix.shared_count(i)
                )));
            }
            if self.source_private[i].len() != matrix.private_count(i) {
                return Err(Error::Invariant(format!(
                    "source {i} realized {} private classes, matrix says {}",
                    self.source_private[i].len(),
                    matrix.private_count(i)
                )));
            }
        }
        if self.shared_union().len() != matrix.shared_union_count() {
            return Err(Error::Invariant(format!(
                "shared union has {} classes, matrix says {}",
                self.shared_union().len(),
                matrix.shared_union_count()
            )));
        }
        if self.target_unknown.len() != matrix.target_unknown_count() {
            return Err(Error::Invariant("target unknown count mismatch".into()));
        }
        let union: BTreeSet<usize> = self.union_pseudo_classes().into_iter().collect();
        if self.target_unknown.intersection(&union).next().is_some() {
            return Err(Error::Invariant(
                "target-only classes leaked into a source label set".into(),
            ));
        }
        Ok(())
    }
}

/// Realizes concrete label sets satisfying `matrix` under the given
/// overlap policy.
pub fn build_label_spaces(
    matrix: &UmdaMatrix,
    policy: OverlapPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<LabelSpace> {
    let m = matrix.num_sources();
    let n_union = matrix.shared_union_count();
    let max_shared = (0..m).map(|i| matrix.shared_count(i)).max().unwrap_or(0);
    let sum_shared: usize = (0..m).map(|i| matrix.shared_count(i)).sum();

    if max_shared > n_union {
        return Err(Error::Config(format!(
            "|C| = {n_union} is smaller than the largest per-source shared count {max_shared}"
        )));
    }
    if sum_shared < n_union {
        return Err(Error::Config(format!(
            "shared counts sum to {sum_shared}, cannot cover a union of {n_union}"
        )));
    }
    match policy {
        OverlapPolicy::Empty if sum_shared != n_union => {
            return Err(Error::Config(format!(
                "empty-intersection policy needs sum of shared counts {sum_shared} == |C| = {n_union}"
            )));
        }
        OverlapPolicy::Nested if max_shared != n_union => {
            return Err(Error::Config(format!(
                "nested policy needs max shared count {max_shared} == |C| = {n_union}"
            )));
        }
        _ => {}
    }

    // Shared union takes ids 0..n_union.
    let union: Vec<usize> = (0..n_union).collect();
    let mut source_shared: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); m];
    match policy {
        OverlapPolicy::Empty => {
            let mut next = 0;
            for (i, set) in source_shared.iter_mut().enumerate() {
                set.extend(next..next + matrix.shared_count(i));
                next += matrix.shared_count(i);
            }
        }
        OverlapPolicy::Nested => {
            for (i, set) in source_shared.iter_mut().enumerate() {
                set.extend(0..matrix.shared_count(i));
            }
        }
        OverlapPolicy::Random => {
            // Deal every union class to one source with spare capacity so the
            // union is covered, then fill remaining capacity at random.
            let mut capacity: Vec<usize> = (0..m).map(|i| matrix.shared_count(i)).collect();
            let mut order = union.clone();
            order.shuffle(rng);
            for &class in &order {
                let open: Vec<usize> = (0..m).filter(|&i| capacity[i] > 0).collect();
                let &pick = open
                    .get(rng.random_range(0..open.len()))
                    .expect("capacity feasibility checked above");
                source_shared[pick].insert(class);
                capacity[pick] -= 1;
            }
            for i in 0..m {
                while capacity[i] > 0 {
                    let remaining: Vec<usize> = union
                        .iter()
                        .copied()
                        .filter(|c| !source_shared[i].contains(c))
                        .collect();
                    let &pick = &remaining[rng.random_range(0..remaining.len())];
                    source_shared[i].insert(pick);
                    capacity[i] -= 1;
                }
            }
        }
    }

    // Private blocks follow the union; target-only classes come last.
    let mut next_id = n_union;
    let mut source_private: Vec<BTreeSet<usize>> = Vec::with_capacity(m);
    for i in 0..m {
        let set: BTreeSet<usize> = (next_id..next_id + matrix.private_count(i)).collect();
        next_id += matrix.private_count(i);
        source_private.push(set);
    }
    let target_unknown: BTreeSet<usize> =
        (next_id..next_id + matrix.target_unknown_count()).collect();

    let space = LabelSpace {
        source_shared,
        source_private,
        target_unknown,
    };
    space.check_against(matrix)?;
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn grid(rows: [&[i64]; 2]) -> Vec<Vec<i64>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn parses_benchmark_matrices() {
        let m = UmdaMatrix::parse(&grid([&[3, 3, 2, 8], &[2, 2, 1, 52]])).unwrap();
        assert_eq!(m.num_sources(), 3);
        assert_eq!(m.shared_union_count(), 8);
        assert_eq!(m.target_unknown_count(), 52);

        let m = UmdaMatrix::parse(&grid([&[4, 4, 4, 10], &[2, 2, 2, 50]])).unwrap();
        assert_eq!(m.num_sources(), 3);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(matches!(
            UmdaMatrix::parse(&grid([&[1], &[0]])).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            UmdaMatrix::parse(&grid([&[1, 2], &[0, 1, 2]])).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            UmdaMatrix::parse(&grid([&[1, -2], &[0, 1]])).unwrap_err(),
            Error::Config(_)
        ));
        assert!(matches!(
            UmdaMatrix::parse(&[vec![1, 2]]).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn empty_intersection_policy_gives_disjoint_shared_sets() {
        let matrix = UmdaMatrix::parse(&grid([&[3, 3, 2, 8], &[2, 2, 1, 52]])).unwrap();
        let mut r = rng::derive(3, 1);
        let space = build_label_spaces(&matrix, OverlapPolicy::Empty, &mut r).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(space
                    .source_shared(a)
                    .intersection(space.source_shared(b))
                    .next()
                    .is_none());
            }
        }
        assert_eq!(space.shared_union().len(), 8);
    }

    #[test]
    fn random_policy_respects_cardinality_oracle() {
        // Set-cardinality oracle over the construction: recompute every
        // count from the realized sets with plain set algebra.
        let matrix = UmdaMatrix::parse(&grid([&[4, 4, 4, 10], &[2, 2, 2, 50]])).unwrap();
        for seed in 0..20 {
            let mut r = rng::derive(seed, 1);
            let space = build_label_spaces(&matrix, OverlapPolicy::Random, &mut r).unwrap();
            let union = space.union_pseudo_classes();
            assert!(union.len() >= 6 && union.len() <= 18);
            assert_eq!(space.target_unknown().len(), 50);
            for m in 0..3 {
                assert_eq!(space.source_shared(m).len(), 4);
                assert_eq!(space.source_private(m).len(), 2);
                // shared sets live inside the union of shared classes
                assert!(space
                    .source_shared(m)
                    .iter()
                    .all(|c| space.shared_union().contains(c)));
            }
            assert_eq!(space.shared_union().len(), 10);
            // target-only classes never appear in any source label set
            for m in 0..3 {
                let classes = space.source_classes(m);
                assert!(space.target_unknown().iter().all(|c| !classes.contains(c)));
            }
        }
    }

    #[test]
    fn single_source_union_equals_its_label_set() {
        let matrix = UmdaMatrix::parse(&grid([&[5, 5], &[0, 3]])).unwrap();
        let mut r = rng::derive(9, 1);
        let space = build_label_spaces(&matrix, OverlapPolicy::Random, &mut r).unwrap();
        assert_eq!(space.union_pseudo_classes(), space.source_classes(0));
    }

    #[test]
    fn infeasible_counts_are_rejected() {
        // |C| larger than the sources can cover
        let matrix = UmdaMatrix::parse(&grid([&[2, 2, 9], &[0, 0, 1]])).unwrap();
        let mut r = rng::derive(0, 1);
        assert!(matches!(
            build_label_spaces(&matrix, OverlapPolicy::Random, &mut r).unwrap_err(),
            Error::Config(_)
        ));
        // |C| smaller than one source's shared count
        let matrix = UmdaMatrix::parse(&grid([&[5, 2, 3], &[0, 0, 1]])).unwrap();
        assert!(matches!(
            build_label_spaces(&matrix, OverlapPolicy::Random, &mut r).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn nested_policy_builds_prefix_chains() {
        let matrix = UmdaMatrix::parse(&grid([&[2, 3, 5, 5], &[1, 1, 1, 4]])).unwrap();
        let mut r = rng::derive(0, 1);
        let space = build_label_spaces(&matrix, OverlapPolicy::Nested, &mut r).unwrap();
        assert!(space.source_shared(0).is_subset(space.source_shared(1)));
        assert!(space.source_shared(1).is_subset(space.source_shared(2)));
    }

    #[test]
    fn realization_is_deterministic_in_the_seed() {
        let matrix = UmdaMatrix::parse(&grid([&[4, 4, 4, 10], &[2, 2, 2, 5]])).unwrap();
        let a = build_label_spaces(&matrix, OverlapPolicy::Random, &mut rng::derive(5, 1)).unwrap();
        let b = build_label_spaces(&matrix, OverlapPolicy::Random, &mut rng::derive(5, 1)).unwrap();
        assert_eq!(a, b);
    }
}

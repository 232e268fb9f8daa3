//! Target-sample pseudo-labels over the union of source label sets.
//!
//! Two generators: PHL averages the one-hot (argmax) votes of all source
//! APIs, so every class voted by at least one API keeps positive mass;
//! PSL, the soft baseline, averages full probability rows weighted by how
//! many sources contain each class. A [`PseudoLabelState`] then evolves
//! the rows each epoch: likely-shared samples are sharpened toward their
//! memory-bank argmax, likely-unknown samples are smoothed toward uniform.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gcld::{Division, MemoryBank};
use crate::numkit::{argmax, PROB_TOL};
use crate::source_client::{LabelSetDescriptor, QueryResponse, ResponsePayload};

/// Index over the union pseudo-label set: the sorted union of all source
/// classes, with per-source local-to-union lookup tables. Built purely
/// from public label-set descriptors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnionIndex {
    classes: Vec<usize>,
    source_to_union: Vec<Vec<usize>>,
    /// Per union class: how many sources contain it.
    coverage: Vec<usize>,
}

impl UnionIndex {
    pub fn from_descriptors(descriptors: &[LabelSetDescriptor]) -> Result<Self> {
        if descriptors.is_empty() {
            return Err(Error::Config("need at least one source descriptor".into()));
        }
        let mut union: BTreeMap<usize, usize> = BTreeMap::new();
        for d in descriptors {
            for &c in &d.classes {
                *union.entry(c).or_insert(0) += 1;
            }
        }
        let classes: Vec<usize> = union.keys().copied().collect();
        let position: BTreeMap<usize, usize> = classes
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
        let source_to_union = descriptors
            .iter()
            .map(|d| d.classes.iter().map(|c| position[c]).collect())
            .collect();
        let coverage = classes.iter().map(|c| union[c]).collect();
        Ok(Self {
            classes,
            source_to_union,
            coverage,
        })
    }

    /// Number of classes in the union pseudo-label set.
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn num_sources(&self) -> usize {
        self.source_to_union.len()
    }

    /// Sorted global class ids of the union.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn global_class(&self, union_idx: usize) -> usize {
        self.classes[union_idx]
    }

    pub fn union_index(&self, global: usize) -> Option<usize> {
        self.classes.binary_search(&global).ok()
    }

    /// Union index of source `m`'s local class `local`.
    pub fn union_of_local(&self, source: usize, local: usize) -> Result<usize> {
        self.source_to_union
            .get(source)
            .and_then(|map| map.get(local))
            .copied()
            .ok_or_else(|| {
                Error::Protocol(format!(
                    "vote for local class {local} outside source {source}'s label set"
                ))
            })
    }

    pub fn coverage(&self, union_idx: usize) -> usize {
        self.coverage[union_idx]
    }
}

fn onehot_votes(responses: &[QueryResponse]) -> Result<Vec<(&LabelSetDescriptor, &[usize])>> {
    responses
        .iter()
        .map(|r| match &r.payload {
            ResponsePayload::Onehot(votes) => Ok((&r.label_set, votes.as_slice())),
            ResponsePayload::Soft(_) => Err(Error::Protocol(
                "hot-label generation needs one-hot responses".into(),
            )),
        })
        .collect()
}

fn check_sample_counts(lens: impl Iterator<Item = usize>) -> Result<usize> {
    let mut n = None;
    for len in lens {
        match n {
            None => n = Some(len),
            Some(expected) if expected != len => {
                return Err(Error::Protocol(format!(
                    "responses cover {expected} vs {len} samples"
                )))
            }
            _ => {}
        }
    }
    n.ok_or_else(|| Error::Protocol("no responses".into()))
}

/// Pseudo-hot-labels: each row is the average of the sources' one-hot
/// votes mapped into the union set. Row support is exactly the set of
/// classes voted by at least one API.
pub fn generate_phl(responses: &[QueryResponse], union: &UnionIndex) -> Result<Vec<Vec<f64>>> {
    let votes = onehot_votes(responses)?;
    if votes.len() != union.num_sources() {
        return Err(Error::Protocol(format!(
            "{} responses for {} sources",
            votes.len(),
            union.num_sources()
        )));
    }
    let n = check_sample_counts(votes.iter().map(|(_, v)| v.len()))?;
    let m = votes.len() as f64;
    let mut rows = vec![vec![0.0; union.len()]; n];
    for (source, (_, v)) in votes.iter().enumerate() {
        for (i, &local) in v.iter().enumerate() {
            let u = union.union_of_local(source, local)?;
            rows[i][u] += 1.0 / m;
        }
    }
    Ok(rows)
}

/// Pseudo-soft-labels: scatter each source's probability row to union
/// indices, divide each class total by the number of sources containing
/// that class, and renormalize.
pub fn generate_psl(responses: &[QueryResponse], union: &UnionIndex) -> Result<Vec<Vec<f64>>> {
    let soft: Vec<(&LabelSetDescriptor, &Vec<Vec<f64>>)> = responses
        .iter()
        .map(|r| match &r.payload {
            ResponsePayload::Soft(rows) => Ok((&r.label_set, rows)),
            ResponsePayload::Onehot(_) => Err(Error::Protocol(
                "soft-label generation needs soft responses".into(),
            )),
        })
        .collect::<Result<_>>()?;
    if soft.len() != union.num_sources() {
        return Err(Error::Protocol(format!(
            "{} responses for {} sources",
            soft.len(),
            union.num_sources()
        )));
    }
    let n = check_sample_counts(soft.iter().map(|(_, rows)| rows.len()))?;
    let mut rows = vec![vec![0.0; union.len()]; n];
    for (source, (descriptor, source_rows)) in soft.iter().enumerate() {
        for (i, p) in source_rows.iter().enumerate() {
            if p.len() != descriptor.classes.len() {
                return Err(Error::Protocol(format!(
                    "soft row of length {} for a label set of {}",
                    p.len(),
                    descriptor.classes.len()
                )));
            }
            for (local, &mass) in p.iter().enumerate() {
                let u = union.union_of_local(source, local)?;
                rows[i][u] += mass / union.coverage(u) as f64;
            }
        }
    }
    for row in &mut rows {
        let sum: f64 = row.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Invariant("soft aggregation produced a zero row".into()));
        }
        for x in row {
            *x /= sum;
        }
    }
    Ok(rows)
}

/// Per-target-sample pseudo-label rows with the previous epoch's snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelState {
    current: Vec<Vec<f64>>,
    previous: Vec<Vec<f64>>,
    epoch: usize,
}

impl PseudoLabelState {
    /// Starts with `current == previous == rows`, so the first sharpening
    /// update is well-defined.
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let state = Self {
            previous: rows.clone(),
            current: rows,
            epoch: 0,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn num_samples(&self) -> usize {
        self.current.len()
    }

    pub fn num_classes(&self) -> usize {
        self.current.first().map_or(0, Vec::len)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.current
    }

    pub fn previous_rows(&self) -> &[Vec<f64>] {
        &self.previous
    }

    pub fn validate(&self) -> Result<()> {
        if self.current.is_empty() {
            return Err(Error::Invariant("pseudo-label state with no samples".into()));
        }
        if self.previous.len() != self.current.len() {
            return Err(Error::Invariant("pseudo-label snapshots differ in size".into()));
        }
        let n_c = self.num_classes();
        for row in self.current.iter().chain(&self.previous) {
            if row.len() != n_c {
                return Err(Error::Invariant("pseudo-label row with wrong width".into()));
            }
            if row.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                return Err(Error::Invariant(
                    "pseudo-label row with negative or non-finite mass".into(),
                ));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::Invariant(format!(
                    "pseudo-label row sums to {sum}"
                )));
            }
        }
        Ok(())
    }

    /// The per-epoch update: likely-shared samples move toward the one-hot
    /// argmax of their memory-bank row, likely-unknown samples toward
    /// uniform. The mixing weight is
    /// `new = phi*(phi*current + (1-phi)*previous) + (1-phi)*z`,
    /// which keeps every row on the simplex. Snapshots rotate afterwards.
    pub fn update(
        &mut self,
        division: &[Division],
        bank: &MemoryBank,
        phi: f64,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Config(format!("phi must be in [0,1], got {phi}")));
        }
        if division.len() != self.current.len() {
            return Err(Error::Config(format!(
                "division covers {} samples, state has {}",
                division.len(),
                self.current.len()
            )));
        }
        if bank.num_rows() != self.current.len() || bank.num_classes() != self.num_classes() {
            return Err(Error::Config("memory bank shape mismatch".into()));
        }
        let n_c = self.num_classes();
        let uniform = 1.0 / n_c as f64;
        let mut next = Vec::with_capacity(self.current.len());
        for (i, (cur, prev)) in self.current.iter().zip(&self.previous).enumerate() {
            let mut row = vec![0.0; n_c];
            match division[i] {
                Division::LikelyShared => {
                    let k = argmax(bank.row(i));
                    row[k] = 1.0;
                }
                Division::LikelyUnknown => {
                    row.fill(uniform);
                }
            }
            for ((z, &c), &p) in row.iter_mut().zip(cur).zip(prev) {
                *z = phi * (phi * c + (1.0 - phi) * p) + (1.0 - phi) * *z;
            }
            next.push(row);
        }
        self.previous = std::mem::replace(&mut self.current, next);
        self.epoch += 1;
        self.validate()
    }

    /// Folds freshly regenerated pseudo-labels from a communication round
    /// into the current rows: `row <- phi*row + (1-phi)*fresh`. The
    /// previous snapshot is left alone.
    pub fn blend_fresh(&mut self, fresh: &[Vec<f64>], phi: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::Config(format!("phi must be in [0,1], got {phi}")));
        }
        if fresh.len() != self.current.len() {
            return Err(Error::Config("fresh labels cover a different sample count".into()));
        }
        for (row, f) in self.current.iter_mut().zip(fresh) {
            if f.len() != row.len() {
                return Err(Error::Config("fresh label row width mismatch".into()));
            }
            for (x, &y) in row.iter_mut().zip(f) {
                *x = phi * *x + (1.0 - phi) * y;
            }
        }
        self.validate()
    }

    /// Pseudo-label snapshot as CSV (`sample,p0,p1,...`).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample");
        for c in 0..self.num_classes() {
            out.push_str(&format!(",p{c}"));
        }
        out.push('\n');
        for (i, row) in self.current.iter().enumerate() {
            out.push_str(&i.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

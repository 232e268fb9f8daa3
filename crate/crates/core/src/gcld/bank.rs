//! Per-sample memory bank of class-similarity rows.
//!
//! Row `i` is a running mix of the prototype-similarity vector of target
//! sample `i`: on every write the candidate row `q . mu_c` (one entry per
//! union class) is folded in as `row <- delta*candidate + (1-delta)*row`.
//! Rows start as random unit vectors.

use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gcld::PrototypeSet;
use crate::numkit::{dot, entropy, l2_normalize, softmax};

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    rows: Vec<Vec<f64>>,
    delta: f64,
}

impl MemoryBank {
    /// Random unit-norm rows, one per target sample.
    pub fn random_unit(
        num_samples: usize,
        num_classes: usize,
        delta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if num_samples == 0 || num_classes == 0 {
            return Err(Error::Config("memory bank needs samples and classes".into()));
        }
        let mut rows = Vec::with_capacity(num_samples);
        for _ in 0..num_samples {
            let raw: Vec<f64> = (0..num_classes)
                .map(|_| rand::Rng::sample::<f64, _>(rng, StandardNormal))
                .collect();
            rows.push(l2_normalize(&raw)?);
        }
        Self::from_rows(rows, delta)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::Config(format!(
                "mixing parameter delta must be in (0,1], got {delta}"
            )));
        }
        if rows.is_empty() {
            return Err(Error::Config("memory bank needs at least one row".into()));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::Config("memory bank rows must share a width".into()));
        }
        if rows.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Invariant("non-finite memory bank entry".into()));
        }
        Ok(Self { rows, delta })
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_classes(&self) -> usize {
        self.rows[0].len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    /// Writes the similarity row of sample `i` against the current
    /// prototypes, mixed into the stored row.
    pub fn update_row(&mut self, i: usize, q: &[f64], protos: &PrototypeSet) -> Result<()> {
        if i >= self.rows.len() {
            return Err(Error::Config(format!("bank row {i} out of range")));
        }
        if protos.num_classes() != self.num_classes() {
            return Err(Error::Config(
                "prototype count does not match bank width".into(),
            ));
        }
        if q.len() != protos.dim() {
            return Err(Error::Config("embedding dim does not match prototypes".into()));
        }
        let row = &mut self.rows[i];
        for (c, slot) in row.iter_mut().enumerate() {
            let candidate = dot(q, protos.proto(c));
            *slot = self.delta * candidate + (1.0 - self.delta) * *slot;
        }
        Ok(())
    }

    /// Softmax of each row: similarity rows are not distributions, so the
    /// self-entropy computation normalizes them first (temperature 1).
    pub fn normalized_rows(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| softmax(r).into_inner()).collect()
    }

    /// Self-entropy per sample of the normalized rows.
    pub fn self_entropies(&self) -> Vec<f64> {
        self.normalized_rows().iter().map(|r| entropy(r)).collect()
    }

    #[cfg(test)]
    pub(crate) fn set_row_for_test(&mut self, i: usize, row: Vec<f64>) {
        assert_eq!(row.len(), self.num_classes());
        self.rows[i] = row;
    }
}

//! Unit-norm class prototypes with momentum updates, and the FIFO queue of
//! recent key embeddings forming the contrastive pool.

use std::collections::VecDeque;

use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numkit::{argmax, l2_norm, l2_normalize};

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    protos: Vec<Vec<f64>>,
    gamma: f64,
}

impl PrototypeSet {
    pub fn random_unit(
        num_classes: usize,
        dim: usize,
        gamma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::Config("prototypes need classes and a dimension".into()));
        }
        let protos = (0..num_classes)
            .map(|_| {
                let raw: Vec<f64> = (0..dim)
                    .map(|_| rand::Rng::sample::<f64, _>(rng, StandardNormal))
                    .collect();
                l2_normalize(&raw)
            })
            .collect::<Result<_>>()?;
        Self::from_vectors(protos, gamma)
    }

    pub fn from_vectors(protos: Vec<Vec<f64>>, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::Config(format!(
                "prototype momentum gamma must be in [0,1], got {gamma}"
            )));
        }
        if protos.is_empty() {
            return Err(Error::Config("prototype set is empty".into()));
        }
        let dim = protos[0].len();
        if dim == 0 || protos.iter().any(|p| p.len() != dim) {
            return Err(Error::Config("prototypes must share a dimension".into()));
        }
        let set = Self { protos, gamma };
        set.check_unit_norms()?;
        Ok(set)
    }

    pub fn num_classes(&self) -> usize {
        self.protos.len()
    }

    pub fn dim(&self) -> usize {
        self.protos[0].len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn proto(&self, class: usize) -> &[f64] {
        &self.protos[class]
    }

    /// Momentum update of the prototype of the class the classifier
    /// currently predicts for this query embedding:
    /// `mu_c = normalize(gamma*mu_c + (1-gamma)*q)` where
    /// `c = argmax(f_out)`. Only that one prototype moves.
    pub fn update(&mut self, q: &[f64], f_out: &[f64]) -> Result<()> {
        if q.len() != self.dim() {
            return Err(Error::Config("query embedding dim mismatch".into()));
        }
        if f_out.len() != self.num_classes() {
            return Err(Error::Config("classifier output width mismatch".into()));
        }
        let norm = l2_norm(q);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Invariant(format!(
                "prototype update needs a unit-norm query, got norm {norm}"
            )));
        }
        let c = argmax(f_out);
        let mixed: Vec<f64> = self.protos[c]
            .iter()
            .zip(q)
            .map(|(&mu, &qi)| self.gamma * mu + (1.0 - self.gamma) * qi)
            .collect();
        self.protos[c] = l2_normalize(&mixed)?;
        Ok(())
    }

    pub fn check_unit_norms(&self) -> Result<()> {
        for (c, p) in self.protos.iter().enumerate() {
            let norm = l2_norm(p);
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Invariant(format!(
                    "prototype {c} has norm {norm}"
                )));
            }
        }
        Ok(())
    }
}

/// FIFO of recent key embeddings and their predicted labels. Strictly
/// chronological: pushing at capacity evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct EmbeddingQueue {
    entries: VecDeque<(Vec<f64>, usize)>,
    capacity: usize,
}

impl EmbeddingQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, key: Vec<f64>, label: usize) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((key, label));
    }

    /// Oldest-to-newest iteration.
    pub fn iter(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.entries.iter().map(|(k, l)| (k.as_slice(), *l))
    }
}

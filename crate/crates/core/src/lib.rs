//! Desk-scale simulator and algorithm library for universal federated
//! domain adaptation (UFDA) with black-box source models.
//!
//! The crate generates synthetic multi-source/target scenarios with both
//! domain shift and category shift, simulates source-domain prediction APIs
//! that communicate over scheduled rounds, and implements the full
//! hot-label disambiguation pipeline on the target side:
//!
//! * [`pseudo_label`] — pseudo-hot-label (PHL) ensembling of one-hot API
//!   outputs, the pseudo-soft-label (PSL) baseline, and the
//!   sharpen/smooth pseudo-target update.
//! * [`gcld`] — GMM-based contrastive label disambiguation: memory bank,
//!   self-entropy sample division, class prototypes, momentum key encoder,
//!   and the combined classification + contrastive training loop.
//! * [`mvd`] — cluster-level mutual-voting decision that labels each union
//!   class as shared or unknown for final open-set inference.
//! * [`federation`] — round scheduling, query fan-out, and end-to-end
//!   experiment orchestration with mean per-class evaluation.
//!
//! Everything is deterministic given a seed: repeated runs with the same
//! config produce byte-identical reports.

pub mod error;
pub mod gcld;
pub mod numkit;
pub mod pseudo_label;
pub mod rng;
pub mod scenario;
pub mod source_client;

pub use error::{Error, Result};

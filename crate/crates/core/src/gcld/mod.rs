//! GMM-based contrastive label disambiguation: the target-side training
//! engine.
//!
//! Each epoch runs minibatches of the combined objective
//! `L = L_cls + beta * L_cont` (soft cross-entropy on the current
//! pseudo-labels plus supervised contrastive loss over query/key/queue
//! embeddings), updates class prototypes and the per-sample memory bank,
//! and then refits a two-component GMM to the bank's self-entropy
//! distribution to divide samples and sharpen/smooth their pseudo-labels.

mod bank;
mod contrast;
mod gmm;
mod prototypes;
mod target_model;

pub use bank::MemoryBank;
pub use contrast::{augment, contrastive_loss};
pub use gmm::{divide_samples, fit_gmm2, Division, GmmFit, GmmSummary};
pub use prototypes::{EmbeddingQueue, PrototypeSet};
pub use target_model::{QueryForward, TargetGradients, TargetModel};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::{cosine_lr, cross_entropy, OptimizerState};
use crate::pseudo_label::PseudoLabelState;

/// Hyperparameters of the target training loop.
#[derive(Debug, Clone)]
pub struct GcldHyper {
    /// Disambiguation on/off. Off reduces the loop to plain classifier
    /// training on frozen pseudo-labels (the no-GCLD ablation).
    pub enabled: bool,
    /// Pseudo-target mixing weight.
    pub phi: f64,
    /// GMM posterior threshold for the shared/unknown division.
    pub sigma: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive term.
    pub beta: f64,
    /// Peak learning rate of the cosine schedule.
    pub lr0: f64,
    /// SGD momentum.
    pub momentum: f64,
    /// Augmentation noise scale.
    pub sigma_aug: f64,
    /// Augmentation dropout probability.
    pub p_drop: f64,
    pub batch_size: usize,
}

impl GcldHyper {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::Config(format!("phi must be in [0,1], got {}", self.phi)));
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return Err(Error::Config(format!(
                "sigma must be in [0,1], got {}",
                self.sigma
            )));
        }
        if self.tau <= 0.0 {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(0.0..=1.0).contains(&self.p_drop) {
            return Err(Error::Config(format!(
                "p_drop must be in [0,1], got {}",
                self.p_drop
            )));
        }
        if self.sigma_aug < 0.0 {
            return Err(Error::Config("sigma_aug must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub mean_cls_loss: f64,
    pub mean_cont_loss: f64,
    /// Epoch-end sample division (disambiguation enabled only).
    pub division: Option<Vec<Division>>,
    pub gmm: Option<GmmSummary>,
}

impl EpochStats {
    pub fn shared_count(&self) -> usize {
        self.division
            .as_ref()
            .map(|d| d.iter().filter(|x| **x == Division::LikelyShared).count())
            .unwrap_or(0)
    }

    pub fn unknown_count(&self) -> usize {
        self.division
            .as_ref()
            .map(|d| d.iter().filter(|x| **x == Division::LikelyUnknown).count())
            .unwrap_or(0)
    }
}

/// Owns the target model, its optimizer state, and all disambiguation
/// state, and drives per-epoch training.
pub struct TargetTrainer {
    model: TargetModel,
    backbone_opt: OptimizerState,
    proj_opt: OptimizerState,
    cls_opt: OptimizerState,
    pub bank: MemoryBank,
    pub protos: PrototypeSet,
    pub queue: EmbeddingQueue,
    hyper: GcldHyper,
    total_steps: usize,
    step: usize,
    rng: ChaCha8Rng,
}

impl TargetTrainer {
    pub fn new(
        model: TargetModel,
        bank: MemoryBank,
        protos: PrototypeSet,
        queue: EmbeddingQueue,
        hyper: GcldHyper,
        total_steps: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        hyper.validate()?;
        if total_steps == 0 {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if bank.num_classes() != model.num_classes()
            || protos.num_classes() != model.num_classes()
        {
            return Err(Error::Config(
                "bank/prototype class counts do not match the model".into(),
            ));
        }
        if protos.dim() != model.embed_dim() {
            return Err(Error::Config("prototype dim does not match embeddings".into()));
        }
        let backbone_opt = OptimizerState::new(hyper.momentum, &model.backbone)?;
        let proj_opt = OptimizerState::new(hyper.momentum, &model.proj_head)?;
        let cls_opt = OptimizerState::new(hyper.momentum, &model.cls_head)?;
        Ok(Self {
            model,
            backbone_opt,
            proj_opt,
            cls_opt,
            bank,
            protos,
            queue,
            hyper,
            total_steps,
            step: 0,
            rng,
        })
    }

    pub fn model(&self) -> &TargetModel {
        &self.model
    }

    pub fn hyper(&self) -> &GcldHyper {
        &self.hyper
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn batches_per_epoch(num_samples: usize, batch_size: usize) -> usize {
        num_samples.div_ceil(batch_size)
    }

    /// Runs one epoch over `data`. `on_batch_start` fires before every
    /// minibatch and may mutate the pseudo-label state (communication
    /// rounds blend re-queried labels there). With disambiguation enabled
    /// the epoch ends with the GMM division and pseudo-target update.
    pub fn train_epoch(
        &mut self,
        data: &[Vec<f64>],
        state: &mut PseudoLabelState,
        on_batch_start: &mut dyn FnMut(usize, &mut PseudoLabelState) -> Result<()>,
    ) -> Result<EpochStats> {
        if data.len() != state.num_samples() {
            return Err(Error::Config(format!(
                "{} samples but {} pseudo-label rows",
                data.len(),
                state.num_samples()
            )));
        }
        if state.num_classes() != self.model.num_classes() {
            return Err(Error::Config("pseudo-label width != model classes".into()));
        }

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);

        let mut cls_sum = 0.0;
        let mut cont_sum = 0.0;
        let mut batches = 0usize;
        let chunks: Vec<Vec<usize>> = order
            .chunks(self.hyper.batch_size)
            .map(|c| c.to_vec())
            .collect();
        for (batch_idx, chunk) in chunks.iter().enumerate() {
            on_batch_start(batch_idx, state)?;
            let (cls_loss, cont_loss) = self.train_batch(data, state, chunk)?;
            cls_sum += cls_loss;
            cont_sum += cont_loss;
            batches += 1;
        }

        let mut stats = EpochStats {
            mean_cls_loss: cls_sum / batches.max(1) as f64,
            mean_cont_loss: cont_sum / batches.max(1) as f64,
            division: None,
            gmm: None,
        };

        if self.hyper.enabled {
            let entropies = self.bank.self_entropies();
            let fit = fit_gmm2(&entropies)?;
            let division = divide_samples(&fit, self.hyper.sigma)?;
            state.update(&division, &self.bank, self.hyper.phi)?;
            stats.gmm = Some(fit.summary());
            stats.division = Some(division);
        }
        Ok(stats)
    }

    fn train_batch(
        &mut self,
        data: &[Vec<f64>],
        state: &PseudoLabelState,
        chunk: &[usize],
    ) -> Result<(f64, f64)> {
        let use_contrastive = self.hyper.enabled && self.hyper.beta > 0.0;
        // Query/key views for the whole batch first (fixed RNG order).
        let mut fwds = Vec::with_capacity(chunk.len());
        let mut keys = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let xq = augment(&data[i], self.hyper.sigma_aug, self.hyper.p_drop, &mut self.rng);
            let xk = augment(&data[i], self.hyper.sigma_aug, self.hyper.p_drop, &mut self.rng);
            fwds.push(self.model.encode_query(&xq)?);
            keys.push(self.model.encode_key(&xk)?);
        }
        let labels: Vec<usize> = fwds.iter().map(|f| f.predicted()).collect();

        let inv_b = 1.0 / chunk.len() as f64;
        let mut grads = TargetGradients::zeros_like(&self.model);
        let mut cls_loss = 0.0;
        let mut cont_loss = 0.0;
        {
            // Pool = other queries + all keys + queue snapshot. Keys are
            // enqueued only after the batch, so the snapshot is stable.
            let queue_entries: Vec<(&[f64], usize)> = self.queue.iter().collect();
            for (p, fwd) in fwds.iter().enumerate() {
                let row = &state.rows()[chunk[p]];
                cls_loss += cross_entropy(row, &fwd.probs)?;
                let mut d_logits: Vec<f64> = fwd
                    .probs
                    .iter()
                    .zip(row)
                    .map(|(pr, t)| (pr - t) * inv_b)
                    .collect();
                let d_q;
                if use_contrastive {
                    let mut pool: Vec<(&[f64], usize)> = Vec::with_capacity(
                        fwds.len().saturating_sub(1) + keys.len() + queue_entries.len(),
                    );
                    for (p2, other) in fwds.iter().enumerate() {
                        if p2 != p {
                            pool.push((other.q.as_slice(), labels[p2]));
                        }
                    }
                    for (p2, key) in keys.iter().enumerate() {
                        pool.push((key.as_slice(), labels[p2]));
                    }
                    pool.extend(queue_entries.iter().copied());
                    let (loss, mut grad) =
                        contrastive_loss(&fwd.q, &pool, labels[p], self.hyper.tau)?;
                    cont_loss += loss;
                    for g in &mut grad {
                        *g *= self.hyper.beta * inv_b;
                    }
                    d_q = grad;
                } else {
                    d_q = vec![0.0; self.model.embed_dim()];
                }
                if !cls_loss.is_finite() || !cont_loss.is_finite() {
                    return Err(Error::Divergence("target loss became non-finite".into()));
                }
                for g in &mut d_logits {
                    // already scaled by inv_b above
                    let _ = g;
                }
                let g = self.model.backward_query(fwd, &d_logits, &d_q)?;
                grads.add_assign(&g);
            }
        }

        let lr = cosine_lr(self.step.min(self.total_steps), self.total_steps, self.hyper.lr0)?;
        self.backbone_opt
            .step(&mut self.model.backbone, &grads.backbone, lr)?;
        self.proj_opt
            .step(&mut self.model.proj_head, &grads.proj, lr)?;
        self.cls_opt.step(&mut self.model.cls_head, &grads.cls, lr)?;
        self.model.momentum_update_key()?;
        self.step += 1;

        if self.hyper.enabled {
            // Prototype then bank-row write per sample, in batch order.
            for (p, fwd) in fwds.iter().enumerate() {
                self.protos.update(&fwd.q, &fwd.probs)?;
                self.bank.update_row(chunk[p], &fwd.q, &self.protos)?;
            }
            for (p, key) in keys.into_iter().enumerate() {
                self.queue.push(key, labels[p]);
            }
        }
        Ok((cls_loss * inv_b, cont_loss * inv_b))
    }

    /// Clean classifier outputs for every sample: `(probs, argmax union
    /// index)` per row.
    pub fn predictions(&self, data: &[Vec<f64>]) -> Result<Vec<(Vec<f64>, usize)>> {
        data.iter().map(|x| self.model.classify(x)).collect()
    }
}

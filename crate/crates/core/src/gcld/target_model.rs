//! The target-side network: a shared MLP backbone feeding a linear
//! classifier over the union label set and a 2-layer projection head that
//! emits unit-norm 128-d (configurable) contrastive embeddings. A
//! structurally identical momentum ("key") copy of backbone + projection
//! encodes key views; it receives no gradients, only EMA updates from the
//! query side.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::{argmax, l2_norm, softmax, Activation, ForwardTrace, Mlp, MlpGradients};

#[derive(Debug, Clone)]
pub struct TargetModel {
    pub(crate) backbone: Mlp,
    pub(crate) proj_head: Mlp,
    pub(crate) cls_head: Mlp,
    key_backbone: Mlp,
    key_proj: Mlp,
    key_momentum: f64,
}

/// Everything produced by one query-view forward pass, kept for backward.
#[derive(Debug, Clone)]
pub struct QueryForward {
    /// Unit-norm contrastive embedding.
    pub q: Vec<f64>,
    /// Norm of the projection output before normalization.
    pub embed_norm: f64,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    backbone_trace: ForwardTrace,
    proj_trace: ForwardTrace,
    cls_trace: ForwardTrace,
}

impl QueryForward {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }
}

#[derive(Debug, Clone)]
pub struct TargetGradients {
    pub backbone: MlpGradients,
    pub proj: MlpGradients,
    pub cls: MlpGradients,
}

impl TargetGradients {
    pub fn zeros_like(model: &TargetModel) -> Self {
        Self {
            backbone: MlpGradients::zeros_like(&model.backbone),
            proj: MlpGradients::zeros_like(&model.proj_head),
            cls: MlpGradients::zeros_like(&model.cls_head),
        }
    }

    pub fn add_assign(&mut self, other: &TargetGradients) {
        self.backbone.add_assign(&other.backbone);
        self.proj.add_assign(&other.proj);
        self.cls.add_assign(&other.cls);
    }
}

impl TargetModel {
    pub fn new(
        feature_dim: usize,
        hidden: usize,
        proj_hidden: usize,
        embed_dim: usize,
        num_classes: usize,
        key_momentum: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&key_momentum) {
            return Err(Error::Config(format!(
                "key encoder momentum must be in [0,1), got {key_momentum}"
            )));
        }
        let backbone = Mlp::new(&[feature_dim, hidden], &[Activation::Relu], rng)?;
        let proj_head = Mlp::new(
            &[hidden, proj_hidden, embed_dim],
            &[Activation::Relu, Activation::Linear],
            rng,
        )?;
        let cls_head = Mlp::new(&[hidden, num_classes], &[Activation::Linear], rng)?;
        // The key encoder starts as an exact copy of the query encoder.
        let key_backbone = backbone.clone();
        let key_proj = proj_head.clone();
        Ok(Self {
            backbone,
            proj_head,
            cls_head,
            key_backbone,
            key_proj,
            key_momentum,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.cls_head.output_dim()
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_head.output_dim()
    }

    pub fn key_momentum(&self) -> f64 {
        self.key_momentum
    }

    /// Query-view pass: classifier probabilities and the unit contrastive
    /// embedding, with traces retained for `backward_query`.
    pub fn encode_query(&self, x: &[f64]) -> Result<QueryForward> {
        let (h, backbone_trace) = self.backbone.forward(x)?;
        let (logits, cls_trace) = self.cls_head.forward(&h)?;
        let (embed, proj_trace) = self.proj_head.forward(&h)?;
        let embed_norm = l2_norm(&embed);
        if embed_norm <= 0.0 || !embed_norm.is_finite() {
            return Err(Error::Degenerate(
                "projection head produced a zero embedding".into(),
            ));
        }
        let q = embed.iter().map(|v| v / embed_norm).collect();
        let probs = softmax(&logits).into_inner();
        Ok(QueryForward {
            q,
            embed_norm,
            logits,
            probs,
            backbone_trace,
            proj_trace,
            cls_trace,
        })
    }

    /// Key-view pass through the momentum encoder. No trace: gradients
    /// never flow here.
    pub fn encode_key(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (h, _) = self.key_backbone.forward(x)?;
        let (embed, _) = self.key_proj.forward(&h)?;
        let norm = l2_norm(&embed);
        if norm <= 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(
                "key projection produced a zero embedding".into(),
            ));
        }
        Ok(embed.iter().map(|v| v / norm).collect())
    }

    /// Backpropagates `d_logits` (gradient at the classifier logits) and
    /// `d_q` (gradient at the unit embedding) through the query-side
    /// networks, including the normalization layer.
    pub fn backward_query(
        &self,
        fwd: &QueryForward,
        d_logits: &[f64],
        d_q: &[f64],
    ) -> Result<TargetGradients> {
        // Through the normalization: e = embed, q = e/|e|,
        // de = (dq - (dq.q) q) / |e|
        let dq_dot_q: f64 = d_q.iter().zip(&fwd.q).map(|(a, b)| a * b).sum();
        let d_embed: Vec<f64> = d_q
            .iter()
            .zip(&fwd.q)
            .map(|(&g, &qi)| (g - dq_dot_q * qi) / fwd.embed_norm)
            .collect();
        let (proj, d_h_proj) = self.proj_head.backward(&fwd.proj_trace, &d_embed)?;
        let (cls, d_h_cls) = self.cls_head.backward(&fwd.cls_trace, d_logits)?;
        let d_h: Vec<f64> = d_h_proj.iter().zip(&d_h_cls).map(|(a, b)| a + b).collect();
        let (backbone, _) = self.backbone.backward(&fwd.backbone_trace, &d_h)?;
        Ok(TargetGradients {
            backbone,
            proj,
            cls,
        })
    }

    /// EMA step of the key encoder toward the query encoder.
    pub fn momentum_update_key(&mut self) -> Result<()> {
        let m = self.key_momentum;
        self.key_backbone
            .zip_params_mut(&self.backbone, |k, q| *k = m * *k + (1.0 - m) * q)?;
        self.key_proj
            .zip_params_mut(&self.proj_head, |k, q| *k = m * *k + (1.0 - m) * q)?;
        Ok(())
    }

    /// Clean inference path (no augmentation, no projection): classifier
    /// probabilities and the arg-max union class index.
    pub fn classify(&self, x: &[f64]) -> Result<(Vec<f64>, usize)> {
        let (h, _) = self.backbone.forward(x)?;
        let (logits, _) = self.cls_head.forward(&h)?;
        let probs = softmax(&logits).into_inner();
        let pred = argmax(&probs);
        Ok((probs, pred))
    }

    pub fn query_params_flat(&self) -> Vec<f64> {
        let mut out = self.backbone.params_flat();
        out.extend(self.proj_head.params_flat());
        out.extend(self.cls_head.params_flat());
        out
    }

    pub fn key_params_flat(&self) -> Vec<f64> {
        let mut out = self.key_backbone.params_flat();
        out.extend(self.key_proj.params_flat());
        out
    }

    /// Query-encoder (backbone + projection) parameters only, matching the
    /// layout of [`TargetModel::key_params_flat`].
    pub fn encoder_params_flat(&self) -> Vec<f64> {
        let mut out = self.backbone.params_flat();
        out.extend(self.proj_head.params_flat());
        out
    }
}

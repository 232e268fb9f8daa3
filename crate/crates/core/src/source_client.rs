//! Simulated source-domain clients.
//!
//! A source client trains a private classifier on its own labeled data and
//! exposes exactly two things to the outside world: a label-set descriptor
//! and a batch prediction endpoint. Weights, gradients, and raw data never
//! cross that boundary, so an out-of-process implementation speaking the
//! same message schema is a drop-in replacement (the canonical
//! serialization is line-delimited JSON; see `docs/formats.md`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{
    argmax, cross_entropy, softmax, Activation, LrSchedule, Mlp, MlpGradients, OptimizerState,
};
use crate::scenario::DomainDataset;

/// Public description of one source API's label set. `classes` holds
/// global class ids sorted ascending; the position of an id is the
/// source-local class index used in responses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSetDescriptor {
    pub client_id: usize,
    pub classes: Vec<usize>,
}

impl LabelSetDescriptor {
    pub fn local_index(&self, global: usize) -> Option<usize> {
        self.classes.binary_search(&global).ok()
    }

    pub fn global_class(&self, local: usize) -> Option<usize> {
        self.classes.get(local).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    /// Argmax class per sample, ties broken toward the lowest local index.
    Onehot,
    /// Full softmax row per sample.
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub client_id: usize,
    pub mode: QueryMode,
    pub batch: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "rows")]
pub enum ResponsePayload {
    /// One local class index per sample.
    Onehot(Vec<usize>),
    /// One probability row per sample, in local class order.
    Soft(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub client_id: usize,
    pub payload: ResponsePayload,
    pub label_set: LabelSetDescriptor,
}

impl QueryResponse {
    pub fn len(&self) -> usize {
        match &self.payload {
            ResponsePayload::Onehot(v) => v.len(),
            ResponsePayload::Soft(rows) => rows.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The private model behind one source API: a one-hidden-layer encoder
/// with a linear head over the source's local label set.
#[derive(Debug, Clone)]
pub struct SourceModel {
    net: Mlp,
    classes: Vec<usize>,
    steps_completed: usize,
}

impl SourceModel {
    pub fn new(
        feature_dim: usize,
        hidden: usize,
        classes: Vec<usize>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Config("source model needs a non-empty label set".into()));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("source classes must be sorted and distinct".into()));
        }
        let net = Mlp::new(
            &[feature_dim, hidden, classes.len()],
            &[Activation::Relu, Activation::Linear],
            rng,
        )?;
        Ok(Self {
            net,
            classes,
            steps_completed: 0,
        })
    }

    pub fn steps_completed(&self) -> usize {
        self.steps_completed
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(x)?.0)
    }
}

/// One simulated source client: private dataset + model + optimizer.
pub struct SourceClient {
    id: usize,
    model: SourceModel,
    dataset: DomainDataset,
    optimizer: OptimizerState,
    schedule: LrSchedule,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl SourceClient {
    pub fn new(
        id: usize,
        model: SourceModel,
        dataset: DomainDataset,
        momentum: f64,
        schedule: LrSchedule,
        batch_size: usize,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        let labels = dataset.training_labels()?;
        if labels
            .iter()
            .any(|y| !model.classes.binary_search(y).is_ok())
        {
            return Err(Error::Config(
                "dataset contains labels outside the source label set".into(),
            ));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        let optimizer = OptimizerState::new(momentum, &model.net)?;
        Ok(Self {
            id,
            model,
            dataset,
            optimizer,
            schedule,
            batch_size,
            rng,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn descriptor(&self) -> LabelSetDescriptor {
        LabelSetDescriptor {
            client_id: self.id,
            classes: self.model.classes.clone(),
        }
    }

    /// Advances local supervised training by `steps` minibatch SGD steps of
    /// cross-entropy on the client's own data. Deterministic given the
    /// client's RNG state.
    pub fn train_local(&mut self, steps: usize) -> Result<()> {
        let labels = self.dataset.training_labels()?.to_vec();
        let n = self.dataset.len();
        for _ in 0..steps {
            let lr = self.schedule.at(self.model.steps_completed)?;
            let mut grads = MlpGradients::zeros_like(&self.model.net);
            let take = self.batch_size.min(n);
            let mut batch_loss = 0.0;
            for _ in 0..take {
                let i = self.rng.random_range(0..n);
                let x = &self.dataset.features()[i];
                let (logits, trace) = self.model.net.forward(x)?;
                let probs = softmax(&logits);
                let local = self
                    .model
                    .classes
                    .binary_search(&labels[i])
                    .expect("label membership checked at construction");
                batch_loss += -probs[local].max(crate::numkit::LOG_EPS).ln();
                let mut d: Vec<f64> = probs.to_vec();
                d[local] -= 1.0;
                for g in &mut d {
                    *g /= take as f64;
                }
                let (g, _) = self.model.net.backward(&trace, &d)?;
                grads.add_assign(&g);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "source {} local loss became non-finite",
                    self.id
                )));
            }
            self.optimizer.step(&mut self.model.net, &grads, lr)?;
            self.model.steps_completed += 1;
        }
        Ok(())
    }

    /// The black-box prediction endpoint. Only the response ever leaves
    /// the client.
    pub fn predict(&self, request: &QueryRequest) -> Result<QueryResponse> {
        for row in &request.batch {
            if row.len() != self.model.net.input_dim() {
                return Err(Error::Protocol(format!(
                    "query row has dim {}, source {} expects {}",
                    row.len(),
                    self.id,
                    self.model.net.input_dim()
                )));
            }
        }
        let payload = match request.mode {
            QueryMode::Onehot => {
                let mut votes = Vec::with_capacity(request.batch.len());
                for row in &request.batch {
                    votes.push(argmax(&self.model.logits(row)?));
                }
                ResponsePayload::Onehot(votes)
            }
            QueryMode::Soft => {
                let mut rows = Vec::with_capacity(request.batch.len());
                for row in &request.batch {
                    rows.push(softmax(&self.model.logits(row)?).into_inner());
                }
                ResponsePayload::Soft(rows)
            }
        };
        Ok(QueryResponse {
            client_id: self.id,
            payload,
            label_set: self.descriptor(),
        })
    }

    /// Mean cross-entropy of the current model on a fixed sample list;
    /// used by tests and diagnostics.
    pub fn loss_on(&self, indices: &[usize]) -> Result<f64> {
        let labels = self.dataset.training_labels()?;
        let mut total = 0.0;
        for &i in indices {
            let (logits, _) = self.model.net.forward(&self.dataset.features()[i])?;
            let probs = softmax(&logits);
            let local = self.model.classes.binary_search(&labels[i]).unwrap();
            let mut target = vec![0.0; probs.len()];
            target[local] = 1.0;
            total += cross_entropy(&target, &probs)?;
        }
        Ok(total / indices.len() as f64)
    }

    /// Local training accuracy of the current model (client-side
    /// self-evaluation; never exposed over the wire).
    pub fn local_accuracy(&self) -> Result<f64> {
        let labels = self.dataset.training_labels()?;
        let mut correct = 0;
        for (x, &y) in self.dataset.features().iter().zip(labels) {
            let (logits, _) = self.model.net.forward(x)?;
            if self.model.classes[argmax(&logits)] == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / self.dataset.len() as f64)
    }
}

/// Serializes a request/response pair stream as line-delimited JSON, the
/// canonical wire encoding.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(
            &serde_json::to_string(r)
                .map_err(|e| Error::Protocol(format!("jsonl encode failed: {e}")))?,
        );
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Protocol(format!("jsonl decode failed: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::scenario::{
        build_label_spaces, generate_domain, AnchorSet, DomainId, DomainParams, OverlapPolicy,
        UmdaMatrix,
    };

    fn fixture_client(seed: u64) -> SourceClient {
        let matrix = UmdaMatrix::parse(&[vec![4, 4], vec![1, 2]]).unwrap();
        let space =
            build_label_spaces(&matrix, OverlapPolicy::Random, &mut rng::derive(seed, 1)).unwrap();
        let anchors =
            AnchorSet::generate(&space.all_classes(), 12, 4.0, &mut rng::derive(seed, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 30,
            shift_strength: 0.4,
            noise_std: 0.3,
        };
        let dataset = generate_domain(
            &space,
            &anchors,
            DomainId::Source(0),
            params,
            &mut rng::derive(seed, 100),
        )
        .unwrap();
        let model = SourceModel::new(12, 32, dataset.classes(), &mut rng::derive(seed, 200)).unwrap();
        SourceClient::new(
            0,
            model,
            dataset,
            0.9,
            LrSchedule::Constant { lr: 0.01 },
            16,
            rng::derive(seed, 201),
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let mut client = fixture_client(3);
        let before = client.model.net.params_flat();
        client.train_local(0).unwrap();
        assert_eq!(before, client.model.net.params_flat());
        assert_eq!(client.model.steps_completed(), 0);
    }

    #[test]
    fn training_descends_on_a_frozen_batch_and_separates() {
        let mut client = fixture_client(5);
        let frozen: Vec<usize> = (0..client.dataset.len()).collect();
        let before = client.loss_on(&frozen).unwrap();
        client.train_local(400).unwrap();
        let after = client.loss_on(&frozen).unwrap();
        assert!(
            after < before,
            "loss did not descend: {before} -> {after}"
        );
        assert!(client.local_accuracy().unwrap() >= 0.99);
        assert_eq!(client.model.steps_completed(), 400);
    }

    #[test]
    fn constant_head_bias_pins_every_prediction() {
        let mut client = fixture_client(7);
        // Zero the head and push its class-1 bias up: every input maps to 1.
        let head = client.model.net.layers_mut().last_mut().unwrap();
        for row in &mut head.weights {
            row.fill(0.0);
        }
        head.bias.fill(0.0);
        head.bias[1] = 10.0;

        let req = QueryRequest {
            client_id: 0,
            mode: QueryMode::Onehot,
            batch: client.dataset.features()[..8].to_vec(),
        };
        match client.predict(&req).unwrap().payload {
            ResponsePayload::Onehot(votes) => assert!(votes.iter().all(|&v| v == 1)),
            _ => panic!("expected onehot payload"),
        }
    }

    #[test]
    fn soft_rows_are_probability_vectors() {
        let client = fixture_client(9);
        let req = QueryRequest {
            client_id: 0,
            mode: QueryMode::Soft,
            batch: client.dataset.features()[..6].to_vec(),
        };
        match client.predict(&req).unwrap().payload {
            ResponsePayload::Soft(rows) => {
                for row in rows {
                    crate::numkit::ProbVector::new(row).unwrap();
                }
            }
            _ => panic!("expected soft payload"),
        }
    }

    /// Cross-mode consistency oracle: the one-hot vote equals the argmax
    /// of the soft row on the same batch.
    #[test]
    fn onehot_equals_argmax_of_soft() {
        let mut client = fixture_client(11);
        client.train_local(50).unwrap();
        let batch = client.dataset.features()[..20].to_vec();
        let onehot = client
            .predict(&QueryRequest {
                client_id: 0,
                mode: QueryMode::Onehot,
                batch: batch.clone(),
            })
            .unwrap();
        let soft = client
            .predict(&QueryRequest {
                client_id: 0,
                mode: QueryMode::Soft,
                batch,
            })
            .unwrap();
        match (onehot.payload, soft.payload) {
            (ResponsePayload::Onehot(votes), ResponsePayload::Soft(rows)) => {
                for (v, row) in votes.iter().zip(&rows) {
                    assert_eq!(*v, argmax(row));
                }
            }
            _ => panic!("unexpected payloads"),
        }
    }

    #[test]
    fn snapshot_predictions_are_reproducible() {
        let mut client = fixture_client(13);
        client.train_local(25).unwrap();
        let req = QueryRequest {
            client_id: 0,
            mode: QueryMode::Soft,
            batch: client.dataset.features()[..5].to_vec(),
        };
        assert_eq!(client.predict(&req).unwrap(), client.predict(&req).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_a_protocol_error() {
        let client = fixture_client(15);
        let req = QueryRequest {
            client_id: 0,
            mode: QueryMode::Onehot,
            batch: vec![vec![0.0; 5]],
        };
        assert!(matches!(
            client.predict(&req).unwrap_err(),
            Error::Protocol(_)
        ));
    }

    #[test]
    fn message_schema_round_trips_through_jsonl() {
        let client = fixture_client(17);
        let req = QueryRequest {
            client_id: 0,
            mode: QueryMode::Soft,
            batch: client.dataset.features()[..3].to_vec(),
        };
        let resp = client.predict(&req).unwrap();
        let text = to_jsonl(&[resp.clone()]).unwrap();
        let back: Vec<QueryResponse> = from_jsonl(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0], resp);
    }
}

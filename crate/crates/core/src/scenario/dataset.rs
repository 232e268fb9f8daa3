//! Synthetic feature-space domains and their on-disk dump format.
//!
//! Every global class has one anchor vector shared by all domains. A
//! domain applies its own orthogonal transform (a product of random plane
//! rotations, interpolated by `shift_strength`) plus a translation, and
//! samples are transformed anchors plus isotropic Gaussian noise. Domain
//! shift is therefore controllable and vanishes at `shift_strength = 0`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::LabelSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum DomainId {
    Source(usize),
    Target,
}

impl std::fmt::Display for DomainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DomainId::Source(m) => write!(f, "source {m}"),
            DomainId::Target => write!(f, "target"),
        }
    }
}

/// A labeled feature dataset for one domain.
///
/// Target labels exist only for evaluation; [`DomainDataset::training_labels`]
/// refuses to hand them out, and nothing on the training path calls
/// [`DomainDataset::evaluation_labels`].
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain: DomainId,
    pub dim: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl DomainDataset {
    pub fn new(
        domain: DomainId,
        dim: usize,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Config("features/labels length mismatch".into()));
        }
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Config("feature row with wrong dimension".into()));
        }
        if features.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Invariant("non-finite feature value".into()));
        }
        Ok(Self {
            domain,
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    /// Labels for supervised training. Refused for the target domain,
    /// whose ground truth is evaluation-only.
    pub fn training_labels(&self) -> Result<&[usize]> {
        match self.domain {
            DomainId::Target => Err(Error::Invariant(
                "target labels are evaluation-only and cannot be used for training".into(),
            )),
            DomainId::Source(_) => Ok(&self.labels),
        }
    }

    /// Ground-truth labels for evaluation and diagnostics only.
    pub fn evaluation_labels(&self) -> &[usize] {
        &self.labels
    }

    /// Distinct classes present, sorted.
    pub fn classes(&self) -> Vec<usize> {
        let mut set: Vec<usize> = self.labels.clone();
        set.sort_unstable();
        set.dedup();
        set
    }

    /// Serializes to the line-oriented dump format (see `docs/formats.md`).
    /// Floats use shortest round-trip formatting, so dump -> load -> dump
    /// is byte-identical.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str("ufda-dataset v1\n");
        let _ = writeln!(out, "domain {}", self.domain);
        let _ = writeln!(out, "dim {}", self.dim);
        let classes = self.classes();
        out.push_str("classes");
        for c in &classes {
            let _ = write!(out, " {c}");
        }
        out.push('\n');
        let _ = writeln!(out, "samples {}", self.len());
        for (x, y) in self.features.iter().zip(&self.labels) {
            let _ = write!(out, "{y}");
            for v in x {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let magic = lines
            .next()
            .ok_or_else(|| Error::Config("empty dataset file".into()))?;
        if magic != "ufda-dataset v1" {
            return Err(Error::Config(format!("unrecognized dataset header: {magic}")));
        }
        let domain_line = expect_line(&mut lines, "domain")?;
        let domain = match domain_line.as_slice() {
            ["target"] => DomainId::Target,
            ["source", idx] => DomainId::Source(parse_num::<usize>(idx, "source index")?),
            _ => return Err(Error::Config("bad domain line in dataset file".into())),
        };
        let dim_line = expect_line(&mut lines, "dim")?;
        let dim: usize = match dim_line.as_slice() {
            [d] => parse_num(d, "dim")?,
            _ => return Err(Error::Config("bad dim line in dataset file".into())),
        };
        let _classes = expect_line(&mut lines, "classes")?;
        let samples_line = expect_line(&mut lines, "samples")?;
        let n: usize = match samples_line.as_slice() {
            [n] => parse_num(n, "samples")?,
            _ => return Err(Error::Config("bad samples line in dataset file".into())),
        };
        let mut features = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Config("dataset file truncated".into()))?;
            let mut parts = line.split_ascii_whitespace();
            let label: usize = parse_num(
                parts
                    .next()
                    .ok_or_else(|| Error::Config("empty sample line".into()))?,
                "label",
            )?;
            let row: Vec<f64> = parts
                .map(|p| parse_num::<f64>(p, "feature"))
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::Config(format!(
                    "sample has {} features, expected {dim}",
                    row.len()
                )));
            }
            labels.push(label);
            features.push(row);
        }
        Self::new(domain, dim, features, labels)
    }
}

fn expect_line<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    key: &str,
) -> Result<Vec<&'a str>> {
    let line = lines
        .next()
        .ok_or_else(|| Error::Config(format!("dataset file missing `{key}` line")))?;
    let mut parts = line.split_ascii_whitespace();
    match parts.next() {
        Some(k) if k == key => Ok(parts.collect()),
        _ => Err(Error::Config(format!("expected `{key}` line, got `{line}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Config(format!("cannot parse {what}: `{s}`")))
}

/// Fixed per-class anchor vectors shared by every domain. Anchors are
/// standard-normal draws rescaled so the minimum pairwise distance reaches
/// `min_dist`, which controls class separability.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    anchors: BTreeMap<usize, Vec<f64>>,
    pub dim: usize,
}

impl AnchorSet {
    pub fn generate(
        classes: &[usize],
        dim: usize,
        min_dist: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("anchor dimension must be >= 2".into()));
        }
        if classes.is_empty() {
            return Err(Error::Config("anchor set needs at least one class".into()));
        }
        let mut anchors = BTreeMap::new();
        for &c in classes {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            anchors.insert(c, v);
        }
        if anchors.len() >= 2 && min_dist > 0.0 {
            let list: Vec<&Vec<f64>> = anchors.values().collect();
            let mut smallest = f64::INFINITY;
            for i in 0..list.len() {
                for j in (i + 1)..list.len() {
                    let d = list[i]
                        .iter()
                        .zip(list[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    smallest = smallest.min(d);
                }
            }
            if smallest < 1e-6 {
                return Err(Error::Invariant(
                    "anchor draw produced coincident classes".into(),
                ));
            }
            if smallest < min_dist {
                let scale = min_dist / smallest;
                for v in anchors.values_mut() {
                    for x in v {
                        *x *= scale;
                    }
                }
            }
        }
        Ok(Self { anchors, dim })
    }

    pub fn get(&self, class: usize) -> Option<&Vec<f64>> {
        self.anchors.get(&class)
    }
}

/// A domain's affine map: a product of plane (Givens) rotations with
/// angles scaled by `shift_strength`, plus a translation scaled the same
/// way. `shift_strength = 0` is exactly the identity.
#[derive(Debug, Clone)]
pub struct DomainTransform {
    planes: Vec<(usize, usize, f64)>,
    translation: Vec<f64>,
}

impl DomainTransform {
    pub fn sample(dim: usize, shift_strength: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(0.0..=1.0).contains(&shift_strength) {
            return Err(Error::Config(format!(
                "shift_strength must be in [0,1], got {shift_strength}"
            )));
        }
        let mut planes = Vec::with_capacity(dim);
        for _ in 0..dim {
            let i = rng.random_range(0..dim);
            let mut j = rng.random_range(0..dim - 1);
            if j >= i {
                j += 1;
            }
            let max_angle = std::f64::consts::FRAC_PI_2;
            let theta: f64 = rng.random_range(-max_angle..max_angle);
            planes.push((i, j, shift_strength * theta));
        }
        let translation: Vec<f64> = (0..dim)
            .map(|_| shift_strength * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self {
            planes,
            translation,
        })
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for &(i, j, theta) in &self.planes {
            let (s, c) = theta.sin_cos();
            let (vi, vj) = (out[i], out[j]);
            out[i] = c * vi - s * vj;
            out[j] = s * vi + c * vj;
        }
        for (o, t) in out.iter_mut().zip(&self.translation) {
            *o += t;
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DomainParams {
    pub samples_per_class: usize,
    pub shift_strength: f64,
    pub noise_std: f64,
}

/// Generates one domain's dataset: `samples_per_class` noisy copies of
/// each transformed class anchor. Pure in `(inputs, rng)`: identical
/// arguments give a bit-identical dataset.
pub fn generate_domain(
    space: &LabelSpace,
    anchors: &AnchorSet,
    domain: DomainId,
    params: DomainParams,
    rng: &mut ChaCha8Rng,
) -> Result<DomainDataset> {
    if params.samples_per_class == 0 {
        return Err(Error::Config("samples_per_class must be >= 1".into()));
    }
    if params.noise_std < 0.0 {
        return Err(Error::Config("noise_std must be non-negative".into()));
    }
    let classes = match domain {
        DomainId::Source(m) => {
            if m >= space.num_sources() {
                return Err(Error::Config(format!("no source domain {m}")));
            }
            space.source_classes(m)
        }
        DomainId::Target => space.target_classes(),
    };
    let transform = DomainTransform::sample(anchors.dim, params.shift_strength, rng)?;
    let mut features = Vec::with_capacity(classes.len() * params.samples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for &class in &classes {
        let anchor = anchors
            .get(class)
            .ok_or_else(|| Error::Config(format!("no anchor for class {class}")))?;
        let center = transform.apply(anchor);
        for _ in 0..params.samples_per_class {
            let sample: Vec<f64> = center
                .iter()
                .map(|&c| c + params.noise_std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            features.push(sample);
            labels.push(class);
        }
    }
    DomainDataset::new(domain, anchors.dim, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{argmax, softmax, Activation, Mlp, MlpGradients, OptimizerState};
    use crate::rng;
    use crate::scenario::{build_label_spaces, OverlapPolicy, UmdaMatrix};

    fn small_space(seed: u64) -> LabelSpace {
        let matrix =
            UmdaMatrix::parse(&[vec![3, 3, 4], vec![1, 1, 2]]).unwrap();
        build_label_spaces(&matrix, OverlapPolicy::Random, &mut rng::derive(seed, 1)).unwrap()
    }

    #[test]
    fn zero_noise_zero_shift_samples_sit_on_anchors() {
        let space = small_space(4);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 8, 4.0, &mut rng::derive(4, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 3,
            shift_strength: 0.0,
            noise_std: 0.0,
        };
        let ds = generate_domain(
            &space,
            &anchors,
            DomainId::Source(0),
            params,
            &mut rng::derive(4, 100),
        )
        .unwrap();
        for (x, &y) in ds.features().iter().zip(ds.evaluation_labels()) {
            assert_eq!(x, anchors.get(y).unwrap());
        }
    }

    #[test]
    fn zero_shift_domains_share_class_means() {
        let space = small_space(4);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 8, 4.0, &mut rng::derive(4, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 1,
            shift_strength: 0.0,
            noise_std: 0.0,
        };
        let a = generate_domain(&space, &anchors, DomainId::Source(0), params, &mut rng::derive(4, 100)).unwrap();
        let b = generate_domain(&space, &anchors, DomainId::Source(1), params, &mut rng::derive(4, 101)).unwrap();
        // Both domains put each common class exactly on its anchor.
        for (x, &y) in a.features().iter().zip(a.evaluation_labels()) {
            assert_eq!(x, anchors.get(y).unwrap());
        }
        for (x, &y) in b.features().iter().zip(b.evaluation_labels()) {
            assert_eq!(x, anchors.get(y).unwrap());
        }
    }

    #[test]
    fn transform_is_orthogonal_plus_translation() {
        let mut r = rng::derive(7, 3);
        let t = DomainTransform::sample(6, 1.0, &mut r).unwrap();
        // Distances are preserved by the rotation part.
        let a = vec![1.0, -2.0, 0.5, 3.0, 0.0, -1.0];
        let b = vec![0.2, 0.1, -0.7, 1.5, 2.0, 0.3];
        let dist = |x: &[f64], y: &[f64]| {
            x.iter()
                .zip(y)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        };
        let (ta, tb) = (t.apply(&a), t.apply(&b));
        approx::assert_relative_eq!(dist(&a, &b), dist(&ta, &tb), epsilon = 1e-9);
    }

    #[test]
    fn generation_is_deterministic() {
        let space = small_space(11);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 8, 4.0, &mut rng::derive(11, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 5,
            shift_strength: 0.6,
            noise_std: 0.3,
        };
        let a = generate_domain(&space, &anchors, DomainId::Target, params, &mut rng::derive(11, 163)).unwrap();
        let b = generate_domain(&space, &anchors, DomainId::Target, params, &mut rng::derive(11, 163)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn target_training_labels_are_gated() {
        let space = small_space(2);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 8, 4.0, &mut rng::derive(2, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 2,
            shift_strength: 0.5,
            noise_std: 0.1,
        };
        let target = generate_domain(&space, &anchors, DomainId::Target, params, &mut rng::derive(2, 163)).unwrap();
        assert!(target.training_labels().is_err());
        let source = generate_domain(&space, &anchors, DomainId::Source(0), params, &mut rng::derive(2, 100)).unwrap();
        assert!(source.training_labels().is_ok());
    }

    /// Train/test oracle: a softmax-regression classifier fit on half of a
    /// default-config domain must reach 95% accuracy on the other half.
    #[test]
    fn default_domain_is_linearly_separable() {
        let space = small_space(5);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 16, 4.0, &mut rng::derive(5, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 40,
            shift_strength: 0.5,
            noise_std: 0.3,
        };
        let ds = generate_domain(&space, &anchors, DomainId::Source(0), params, &mut rng::derive(5, 100)).unwrap();
        let classes = ds.classes();
        let class_idx = |c: usize| classes.iter().position(|&x| x == c).unwrap();

        let mut r = rng::derive(5, 77);
        let mut net = Mlp::new(&[16, classes.len()], &[Activation::Linear], &mut r).unwrap();
        let mut opt = OptimizerState::new(0.9, &net).unwrap();
        let labels = ds.training_labels().unwrap();
        let train: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 0).collect();
        let test: Vec<usize> = (0..ds.len()).filter(|i| i % 2 == 1).collect();
        for _ in 0..300 {
            let mut grads = MlpGradients::zeros_like(&net);
            let mut batch = Vec::new();
            for _ in 0..16 {
                batch.push(train[rand::Rng::random_range(&mut r, 0..train.len())]);
            }
            for &i in &batch {
                let (logits, trace) = net.forward(&ds.features()[i]).unwrap();
                let p = softmax(&logits);
                let mut d: Vec<f64> = p.to_vec();
                d[class_idx(labels[i])] -= 1.0;
                for x in &mut d {
                    *x /= batch.len() as f64;
                }
                let (g, _) = net.backward(&trace, &d).unwrap();
                grads.add_assign(&g);
            }
            opt.step(&mut net, &grads, 0.05).unwrap();
        }
        let correct = test
            .iter()
            .filter(|&&i| {
                let (logits, _) = net.forward(&ds.features()[i]).unwrap();
                classes[argmax(&logits)] == labels[i]
            })
            .count();
        let acc = correct as f64 / test.len() as f64;
        assert!(acc >= 0.95, "linear probe accuracy {acc} below 0.95");
    }

    #[test]
    fn dump_load_round_trip_is_byte_exact() {
        let space = small_space(13);
        let anchors =
            AnchorSet::generate(&space.all_classes(), 6, 4.0, &mut rng::derive(13, 2)).unwrap();
        let params = DomainParams {
            samples_per_class: 4,
            shift_strength: 0.8,
            noise_std: 0.25,
        };
        let ds = generate_domain(&space, &anchors, DomainId::Target, params, &mut rng::derive(13, 163)).unwrap();
        let text = ds.dump();
        let loaded = DomainDataset::load(&text).unwrap();
        assert_eq!(ds, loaded);
        assert_eq!(text, loaded.dump());
    }
}

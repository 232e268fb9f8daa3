//! Dense feed-forward networks with an explicit forward trace and analytic
//! backward pass. The graph is fixed (a stack of affine layers with
//! optional ReLU), which is all the training objectives here need.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative evaluated at the pre-activation. ReLU uses the
    /// subgradient 0 at exactly zero.
    #[inline]
    fn grad(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// One affine layer: `out = act(W x + b)` with `W` stored row-major
/// `[out][in]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.weights.len()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activation trace of one forward pass, sufficient for `backward`.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Vec<f64>,
    /// Pre-activations per layer.
    pre: Vec<Vec<f64>>,
    /// Post-activations per layer; the last entry is the network output.
    post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("trace of a non-empty network")
    }
}

/// Per-layer gradients, shape-matching the network parameters. Also reused
/// as velocity storage by the optimizer.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<LayerGradients>,
}

#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_bias: Vec<f64>,
}

impl MlpGradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    d_weights: vec![vec![0.0; l.in_dim()]; l.out_dim()],
                    d_bias: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (ra, rb) in a.d_weights.iter_mut().zip(&b.d_weights) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            for (x, y) in a.d_bias.iter_mut().zip(&b.d_bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for row in &mut l.d_weights {
                for x in row {
                    *x *= factor;
                }
            }
            for x in &mut l.d_bias {
                *x *= factor;
            }
        }
    }
}

impl Mlp {
    /// Builds a network with the given layer dimensions and activations.
    /// `dims` has one more entry than `activations`. Weights use scaled
    /// uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at
    /// zero.
    pub fn new(dims: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "mlp needs n+1 dims for n activations, got {} dims / {} activations",
                dims.len(),
                activations.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("mlp layer dimension of zero".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let scale = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.random_range(-scale..scale)).collect())
                    .collect();
                Layer {
                    weights,
                    bias: vec![0.0; fan_out],
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    /// All-zero parameters; handy for fixtures.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config("mlp dims/activations mismatch".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                weights: vec![vec![0.0; w[0]]; w[1]],
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Builds directly from layers, validating that dimensions chain and
    /// all parameters are finite.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer dims do not chain: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Config("bias length does not match layer".into()));
            }
            let finite = l.weights.iter().flatten().all(|w| w.is_finite())
                && l.bias.iter().all(|b| b.is_finite());
            if !finite {
                return Err(Error::Invariant("non-finite mlp parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardTrace)> {
        if x.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "input length {} does not match network input dim {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let mut z = layer.bias.clone();
            for (zi, row) in z.iter_mut().zip(&layer.weights) {
                *zi += dot(row, &a);
            }
            a = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
            post.push(a.clone());
        }
        Ok((
            a,
            ForwardTrace {
                input: x.to_vec(),
                pre,
                post,
            },
        ))
    }

    /// Backpropagates `grad_out` through a trace produced by `forward` on
    /// this same network, returning parameter gradients and the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        grad_out: &[f64],
    ) -> Result<(MlpGradients, Vec<f64>)> {
        self.check_trace(trace)?;
        if grad_out.len() != self.output_dim() {
            return Err(Error::Invariant(format!(
                "grad_out length {} does not match output dim {}",
                grad_out.len(),
                self.output_dim()
            )));
        }
        let mut grads = MlpGradients::zeros_like(self);
        let mut da = grad_out.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let dz: Vec<f64> = da
                .iter()
                .zip(&trace.pre[l])
                .map(|(&g, &z)| g * layer.activation.grad(z))
                .collect();
            let below: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.post[l - 1]
            };
            let lg = &mut grads.layers[l];
            for (i, &dzi) in dz.iter().enumerate() {
                lg.d_bias[i] = dzi;
                for (j, &aj) in below.iter().enumerate() {
                    lg.d_weights[i][j] = dzi * aj;
                }
            }
            let mut next = vec![0.0; below.len()];
            for (i, &dzi) in dz.iter().enumerate() {
                for (j, &w) in layer.weights[i].iter().enumerate() {
                    next[j] += w * dzi;
                }
            }
            da = next;
        }
        Ok((grads, da))
    }

    fn check_trace(&self, trace: &ForwardTrace) -> Result<()> {
        let ok = trace.input.len() == self.input_dim()
            && trace.pre.len() == self.layers.len()
            && trace.post.len() == self.layers.len()
            && trace
                .pre
                .iter()
                .zip(&self.layers)
                .all(|(z, l)| z.len() == l.out_dim())
            && trace
                .post
                .iter()
                .zip(&self.layers)
                .all(|(a, l)| a.len() == l.out_dim());
        if ok {
            Ok(())
        } else {
            Err(Error::Invariant(
                "forward trace does not match this network".into(),
            ))
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.out_dim() * l.in_dim() + l.out_dim())
            .sum()
    }

    /// Visits every parameter mutably, weights row-major then bias, layer
    /// by layer. The visiting order is part of the determinism contract.
    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        for l in &mut self.layers {
            for row in &mut l.weights {
                for w in row {
                    f(w);
                }
            }
            for b in &mut l.bias {
                f(b);
            }
        }
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            for row in &l.weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Applies `f(own, other)` pairwise over the parameters of two
    /// structurally identical networks (EMA updates of a momentum copy).
    pub fn zip_params_mut(&mut self, other: &Mlp, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Invariant("networks differ in depth".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.out_dim() != b.out_dim() || a.in_dim() != b.in_dim() {
                return Err(Error::Invariant("networks differ in layer shape".into()));
            }
            for (ra, rb) in a.weights.iter_mut().zip(&b.weights) {
                for (x, &y) in ra.iter_mut().zip(rb) {
                    f(x, y);
                }
            }
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                f(x, y);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    fn small_rng() -> ChaCha8Rng {
        rng::derive(11, 900)
    }

    #[test]
    fn zero_network_maps_everything_to_zero() {
        let net = Mlp::zeros(&[3, 4, 2], &[Activation::Relu, Activation::Linear]).unwrap();
        let (out, _) = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let net = Mlp::from_layers(vec![Layer {
            weights: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            bias: vec![0.0, 0.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        let (out, _) = net.forward(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![1.0, 2.0]);
    }

    /// Independent dense-algebra oracle: computes a 2-layer forward pass
    /// with explicitly indexed loops, no shared code with `Mlp::forward`.
    fn oracle_forward_2layer(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = Vec::new();
        let l0 = &net.layers()[0];
        for i in 0..l0.out_dim() {
            let mut s = l0.bias[i];
            for j in 0..l0.in_dim() {
                s += l0.weights[i][j] * x[j];
            }
            h.push(if s > 0.0 { s } else { 0.0 });
        }
        let l1 = &net.layers()[1];
        let mut y = Vec::new();
        for i in 0..l1.out_dim() {
            let mut s = l1.bias[i];
            for j in 0..l1.in_dim() {
                s += l1.weights[i][j] * h[j];
            }
            y.push(s);
        }
        y
    }

    #[test]
    fn forward_matches_dense_algebra_oracle() {
        let mut r = small_rng();
        for _ in 0..20 {
            let net = Mlp::new(&[5, 7, 3], &[Activation::Relu, Activation::Linear], &mut r).unwrap();
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            let (out, _) = net.forward(&x).unwrap();
            let expect = oracle_forward_2layer(&net, &x);
            for (a, b) in out.iter().zip(&expect) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn backward_zero_grad_out_gives_zero_gradients() {
        let mut r = small_rng();
        let net = Mlp::new(&[4, 6, 2], &[Activation::Relu, Activation::Linear], &mut r).unwrap();
        let (_, trace) = net.forward(&[0.3, -0.8, 1.0, 0.2]).unwrap();
        let (grads, d_in) = net.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(d_in.iter().all(|&g| g == 0.0));
        for l in &grads.layers {
            assert!(l.d_bias.iter().all(|&g| g == 0.0));
            assert!(l.d_weights.iter().flatten().all(|&g| g == 0.0));
        }
    }

    #[test]
    fn single_linear_layer_weight_grad_is_outer_product() {
        // loss = out . v  =>  dW = v x^T, db = v, dx = W^T v
        let net = Mlp::from_layers(vec![Layer {
            weights: vec![vec![0.5, -1.0], vec![2.0, 0.25]],
            bias: vec![0.1, -0.2],
            activation: Activation::Linear,
        }])
        .unwrap();
        let x = [3.0, -2.0];
        let v = [1.5, -0.5];
        let (_, trace) = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&trace, &v).unwrap();
        for i in 0..2 {
            assert_eq!(grads.layers[0].d_bias[i], v[i]);
            for j in 0..2 {
                assert_eq!(grads.layers[0].d_weights[i][j], v[i] * x[j]);
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_trace() {
        let mut r = small_rng();
        let a = Mlp::new(&[4, 6, 2], &[Activation::Relu, Activation::Linear], &mut r).unwrap();
        let b = Mlp::new(&[4, 5, 2], &[Activation::Relu, Activation::Linear], &mut r).unwrap();
        let (_, trace) = a.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let err = b.backward(&trace, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, crate::error::Error::Invariant(_)));
    }

    /// Central finite differences of an arbitrary scalar loss with respect
    /// to every parameter of the network.
    pub(crate) fn finite_diff_param_grads(
        net: &Mlp,
        loss: &mut dyn FnMut(&Mlp) -> f64,
        h: f64,
    ) -> Vec<f64> {
        let mut out = Vec::with_capacity(net.param_count());
        for idx in 0..net.param_count() {
            let mut plus = net.clone();
            let mut k = 0;
            plus.for_each_param_mut(|p| {
                if k == idx {
                    *p += h;
                }
                k += 1;
            });
            let mut minus = net.clone();
            k = 0;
            minus.for_each_param_mut(|p| {
                if k == idx {
                    *p -= h;
                }
                k += 1;
            });
            out.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
        out
    }

    fn flatten_grads(g: &MlpGradients) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &g.layers {
            for row in &l.d_weights {
                out.extend_from_slice(row);
            }
            out.extend_from_slice(&l.d_bias);
        }
        out
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = small_rng();
        for trial in 0..10 {
            let dims: Vec<usize> = match trial % 3 {
                0 => vec![3, 5, 2],
                1 => vec![4, 8, 8, 3],
                _ => vec![2, 6, 1],
            };
            let acts: Vec<Activation> = (0..dims.len() - 1)
                .map(|i| {
                    if i + 2 == dims.len() {
                        Activation::Linear
                    } else {
                        Activation::Relu
                    }
                })
                .collect();
            let net = Mlp::new(&dims, &acts, &mut r).unwrap();
            let x: Vec<f64> = (0..dims[0]).map(|_| r.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..*dims.last().unwrap())
                .map(|_| r.random_range(-1.0..1.0))
                .collect();

            // loss = out . v
            let (_, trace) = net.forward(&x).unwrap();
            let (grads, _) = net.backward(&trace, &v).unwrap();
            let analytic = flatten_grads(&grads);

            let xs = x.clone();
            let vs = v.clone();
            let mut loss = move |m: &Mlp| {
                let (out, _) = m.forward(&xs).unwrap();
                dot(&out, &vs)
            };
            let numeric = finite_diff_param_grads(&net, &mut loss, 1e-5);
            for (a, n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-8);
                assert!(
                    ((a - n).abs() / denom) < 1e-4,
                    "gradient mismatch: analytic {a} vs numeric {n}"
                );
            }
        }
    }
}

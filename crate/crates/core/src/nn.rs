//! Dense layers with hand-written backpropagation and an Adam optimizer.

use ndarray::{Array1, Array2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
}

/// Fully connected layer `act(x W + b)`, with `W` stored as `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Self {
            weights: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    /// Glorot-scaled normal initialization, zero bias.
    pub fn random(inputs: usize, outputs: usize, activation: Activation, rng: &mut Rng) -> Self {
        let std = (2.0 / (inputs + outputs) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || normal.sample(rng));
        Self {
            weights,
            bias: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        z += &self.bias;
        if self.activation == Activation::Tanh {
            z.mapv_inplace(f64::tanh);
        }
        z
    }

    /// Gradients given the layer input `x`, its output `out`, and `d loss / d out`.
    /// Returns the parameter gradients and `d loss / d x`.
    pub fn backward(&self, x: &Array2<f64>, out: &Array2<f64>, grad_out: &Array2<f64>) -> (DenseGrad, Array2<f64>) {
        let grad_pre = match self.activation {
            Activation::Identity => grad_out.clone(),
            Activation::Tanh => grad_out * &out.mapv(|a| 1.0 - a * a),
        };
        let grad = DenseGrad {
            weights: x.t().dot(&grad_pre),
            bias: grad_pre.sum_axis(Axis(0)),
        };
        let grad_in = grad_pre.dot(&self.weights.t());
        (grad, grad_in)
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.weights.as_slice_mut().expect("standard layout"),
            self.bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

impl DenseGrad {
    pub fn slices(&self) -> [&[f64]; 2] {
        [
            self.weights.as_slice().expect("standard layout"),
            self.bias.as_slice().expect("standard layout"),
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights *= factor;
        self.bias *= factor;
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Layer inputs and outputs kept from a forward pass for backpropagation.
pub struct MlpTrace {
    /// `activations[0]` is the network input, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("non-empty trace")
    }
}

impl Mlp {
    /// Hidden layers use `hidden_activation`; the output layer is linear.
    pub fn random(widths: &[usize], hidden_activation: Activation, rng: &mut Rng) -> Self {
        let n = widths.len() - 1;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == n {
                    Activation::Identity
                } else {
                    hidden_activation
                };
                Dense::random(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty network").outputs()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_trace(&self, x: Array2<f64>) -> MlpTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("input present"));
            activations.push(next);
        }
        MlpTrace { activations }
    }

    /// Backpropagates `d loss / d output`; returns per-layer gradients and
    /// `d loss / d input`.
    pub fn backward(&self, trace: &MlpTrace, grad_out: Array2<f64>) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (grad, grad_in) = layer.backward(&trace.activations[i], &trace.activations[i + 1], &g);
            grads.push(grad);
            g = grad_in;
        }
        grads.reverse();
        (grads, g)
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.param_slices_mut()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Dense::is_finite)
    }
}

pub fn grad_slices(grads: &[DenseGrad]) -> Vec<&[f64]> {
    grads.iter().flat_map(|g| g.slices()).collect()
}

/// Cross-entropy of row-wise softmax against integer targets.
///
/// Returns per-row losses, the probabilities, and `d (sum_i w_i * loss_i) / d logits`.
pub fn softmax_cross_entropy(
    logits: &Array2<f64>,
    targets: &[usize],
    row_weights: &[f64],
) -> (Vec<f64>, Array2<f64>, Array2<f64>) {
    let mut probs = logits.clone();
    let width = probs.ncols();
    crate::math::softmax_rows(probs.as_slice_mut().expect("standard layout"), width);
    let mut losses = Vec::with_capacity(targets.len());
    let mut grad = probs.clone();
    for (i, (&y, &w)) in targets.iter().zip(row_weights).enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        losses.push(lse - row[y]);
        grad[[i, y]] -= 1.0;
        grad.row_mut(i).mapv_inplace(|g| g * w);
    }
    (losses, probs, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction and a constant step size.
#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient tensor count");
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.first).zip(&mut self.second) {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::array;

    #[test]
    fn cross_entropy_of_uniform_logits_is_log_c() {
        let logits = Array2::zeros((2, 4));
        let (losses, probs, _) = softmax_cross_entropy(&logits, &[0, 3], &[1.0, 1.0]);
        for l in losses {
            assert!((l - 4f64.ln()).abs() < 1e-15);
        }
        assert!(probs.iter().all(|&p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = substream(5, &[]);
        let mlp = Mlp::random(&[3, 4, 2], Activation::Tanh, &mut rng);
        let x = array![[0.3, -0.2, 0.9], [1.1, 0.4, -0.7]];
        let targets = [1, 0];
        let loss = |m: &Mlp| {
            let (l, _, _) = softmax_cross_entropy(&m.forward(&x), &targets, &[1.0, 1.0]);
            l.iter().sum::<f64>()
        };
        let trace = mlp.forward_trace(x.clone());
        let (_, _, g) = softmax_cross_entropy(trace.output(), &targets, &[1.0, 1.0]);
        let (grads, _) = mlp.backward(&trace, g);
        let analytic: Vec<f64> = grad_slices(&grads).concat();

        let mut probe = mlp.clone();
        let mut idx = 0;
        let h = 1e-5;
        let n_tensors = probe.param_slices_mut().len();
        for t in 0..n_tensors {
            let len = probe.param_slices_mut()[t].len();
            for j in 0..len {
                probe.param_slices_mut()[t][j] += h;
                let up = loss(&probe);
                probe.param_slices_mut()[t][j] -= 2.0 * h;
                let down = loss(&probe);
                probe.param_slices_mut()[t][j] += h;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[idx];
                assert!((a - numeric).abs() <= 1e-6 * (1.0 + a.abs()), "{a} vs {numeric}");
                idx += 1;
            }
        }
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(AdamConfig::new(0.1));
        for _ in 0..500 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            adam.step(vec![&mut x[..]], vec![&g[..]]);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }
}

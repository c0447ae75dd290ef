//! Conditional denoiser: predicts clean-label logits from a noised k-logit point,
//! its timestep, the k-logit point of the observed label, and a conditioning
//! vector (the sample's training dynamics, optionally with raw features).

use ndarray::{concatenate, s, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::schedule::DiffusionSchedule;
use super::simplex::{forward_sample, to_k_logit};
use crate::error::{Error, Result};
use crate::math::softmax;
use crate::nn::{self, Activation, Dense, DenseGrad, Mlp, MlpTrace};
use crate::rng::Rng;

/// Anything that maps denoiser inputs to class logits, one row per sample.
pub trait Denoiser {
    fn classes(&self) -> usize;

    /// `s_t` and `s_noisy` are `B x C`, `cond` is `B x cond_dim`, `t` has length `B`.
    fn logits_batch(&self, s_t: &Array2<f64>, t: &[usize], s_noisy: &Array2<f64>, cond: &Array2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserShape {
    pub classes: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub time_dim: usize,
    pub encoding: usize,
}

impl DenoiserShape {
    pub fn new(classes: usize, cond_dim: usize) -> Self {
        Self {
            classes,
            cond_dim,
            hidden: 128,
            time_dim: 64,
            encoding: 64,
        }
    }
}

/// Sinusoidal embedding of an integer timestep.
pub fn time_embedding(t: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        out[i] = angle.sin();
        out[half + i] = angle.cos();
    }
    out
}

/// Dense conditional denoiser.
///
/// The conditioning vector passes through one tanh layer; its output is
/// concatenated with `s_t / k`, the time embedding and `s_noisy / k`, then fed to
/// a two-hidden-layer tanh trunk with a linear output of width `C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserNet {
    pub shape: DenoiserShape,
    /// Inputs on the simplex are divided by this (the simplex magnitude `k`).
    pub input_scale: f64,
    pub encoder: Dense,
    pub trunk: Mlp,
}

pub struct DenoiserTrace {
    cond: Array2<f64>,
    encoded: Array2<f64>,
    trunk: MlpTrace,
}

impl DenoiserTrace {
    pub fn logits(&self) -> &Array2<f64> {
        self.trunk.output()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserGrad {
    pub encoder: DenseGrad,
    pub trunk: Vec<DenseGrad>,
}

impl DenoiserGrad {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.encoder.slices().to_vec();
        out.extend(nn::grad_slices(&self.trunk));
        out
    }
}

impl DenoiserNet {
    pub fn random(shape: DenoiserShape, input_scale: f64, rng: &mut Rng) -> Self {
        let encoder = Dense::random(shape.cond_dim, shape.encoding, Activation::Tanh, rng);
        let trunk_in = 2 * shape.classes + shape.time_dim + shape.encoding;
        let trunk = Mlp::random(
            &[trunk_in, shape.hidden, shape.hidden, shape.classes],
            Activation::Tanh,
            rng,
        );
        Self {
            shape,
            input_scale,
            encoder,
            trunk,
        }
    }

    pub fn zero_output_layer(&mut self) {
        let last = self.trunk.layers.last_mut().expect("trunk has layers");
        last.weights.fill(0.0);
        last.bias.fill(0.0);
    }

    fn check_shapes(&self, s_t: &Array2<f64>, t: &[usize], s_noisy: &Array2<f64>, cond: &Array2<f64>) -> Result<()> {
        let b = s_t.nrows();
        let c = self.shape.classes;
        if s_t.ncols() != c || s_noisy.dim() != (b, c) || cond.dim() != (b, self.shape.cond_dim) || t.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "denoiser expects {c} classes and {} conditioning inputs; got s_t {:?}, s_noisy {:?}, cond {:?}, {} timesteps",
                self.shape.cond_dim,
                s_t.dim(),
                s_noisy.dim(),
                cond.dim(),
                t.len()
            )));
        }
        Ok(())
    }

    pub fn forward_trace(
        &self,
        s_t: &Array2<f64>,
        t: &[usize],
        s_noisy: &Array2<f64>,
        cond: &Array2<f64>,
    ) -> Result<DenoiserTrace> {
        self.check_shapes(s_t, t, s_noisy, cond)?;
        let encoded = self.encoder.forward(cond);
        let b = s_t.nrows();
        let mut times = Array2::zeros((b, self.shape.time_dim));
        for (mut row, &step) in times.rows_mut().into_iter().zip(t) {
            for (dst, v) in row.iter_mut().zip(time_embedding(step, self.shape.time_dim)) {
                *dst = v;
            }
        }
        let inv = 1.0 / self.input_scale;
        let input = concatenate(
            Axis(1),
            &[(s_t * inv).view(), times.view(), (s_noisy * inv).view(), encoded.view()],
        )
        .expect("row counts agree");
        Ok(DenoiserTrace {
            cond: cond.clone(),
            encoded,
            trunk: self.trunk.forward_trace(input),
        })
    }

    pub fn backward(&self, trace: &DenoiserTrace, grad_logits: Array2<f64>) -> DenoiserGrad {
        let (trunk, grad_input) = self.trunk.backward(&trace.trunk, grad_logits);
        let start = 2 * self.shape.classes + self.shape.time_dim;
        let grad_encoded = grad_input.slice(s![.., start..]).to_owned();
        let (encoder, _) = self.encoder.backward(&trace.cond, &trace.encoded, &grad_encoded);
        DenoiserGrad { encoder, trunk }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.encoder.param_slices_mut().into_iter().collect();
        out.extend(self.trunk.param_slices_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.trunk.is_finite()
    }
}

impl Denoiser for DenoiserNet {
    fn classes(&self) -> usize {
        self.shape.classes
    }

    fn logits_batch(&self, s_t: &Array2<f64>, t: &[usize], s_noisy: &Array2<f64>, cond: &Array2<f64>) -> Array2<f64> {
        self.forward_trace(s_t, t, s_noisy, cond)
            .expect("denoiser inputs shaped by caller")
            .trunk
            .activations
            .pop()
            .expect("trunk output")
    }
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("single row")
}

/// Single-sample forward pass returning logits and their softmax.
pub fn denoiser_forward(
    net: &DenoiserNet,
    s_t: &[f64],
    t: usize,
    s_noisy: &[f64],
    cond: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let trace = net.forward_trace(&row(s_t), &[t], &row(s_noisy), &row(cond))?;
    let logits = trace.logits().row(0).to_vec();
    let probs = softmax(&logits);
    Ok((logits, probs))
}

/// A batch of noised training inputs shared by every branch.
#[derive(Debug, Clone)]
pub struct NoisedBatch {
    pub targets: Vec<usize>,
    pub timesteps: Vec<usize>,
    pub s_t: Array2<f64>,
    pub s_noisy: Array2<f64>,
    pub cond: Array2<f64>,
}

/// Draws `t ~ U{1..T}` per item and noises the k-logit point of each target.
pub fn noise_batch(
    classes: usize,
    targets: &[usize],
    noisy_labels: &[usize],
    cond: Array2<f64>,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<NoisedBatch> {
    use rand::Rng as _;
    let b = targets.len();
    if noisy_labels.len() != b || cond.nrows() != b {
        return Err(Error::ShapeMismatch(format!(
            "{b} targets, {} noisy labels, {} conditioning rows",
            noisy_labels.len(),
            cond.nrows()
        )));
    }
    let k = schedule.k();
    let mut s_t = Array2::zeros((b, classes));
    let mut s_noisy = Array2::zeros((b, classes));
    let mut timesteps = Vec::with_capacity(b);
    for i in 0..b {
        let t = rng.random_range(1..=schedule.timesteps());
        let s0 = to_k_logit(targets[i], classes, k)?;
        let noised = forward_sample(&s0, t, schedule, rng)?;
        s_t.row_mut(i).assign(&ndarray::Array1::from(noised));
        s_noisy
            .row_mut(i)
            .assign(&ndarray::Array1::from(to_k_logit(noisy_labels[i], classes, k)?));
        timesteps.push(t);
    }
    Ok(NoisedBatch {
        targets: targets.to_vec(),
        timesteps,
        s_t,
        s_noisy,
        cond,
    })
}

/// Per-item cross-entropy losses, their `row_weights`-weighted mean over the
/// batch, and the gradient of that mean with respect to the parameters.
pub struct LossAndGrad {
    pub per_item: Vec<f64>,
    pub loss: f64,
    pub probs: Array2<f64>,
    pub trace: DenoiserTrace,
    pub grad_logits: Array2<f64>,
}

pub fn batch_loss(net: &DenoiserNet, batch: &NoisedBatch, row_weights: &[f64]) -> Result<LossAndGrad> {
    let trace = net.forward_trace(&batch.s_t, &batch.timesteps, &batch.s_noisy, &batch.cond)?;
    let b = batch.targets.len().max(1) as f64;
    let scaled: Vec<f64> = row_weights.iter().map(|w| w / b).collect();
    let (per_item, probs, grad_logits) = nn::softmax_cross_entropy(trace.logits(), &batch.targets, &scaled);
    let loss = per_item.iter().zip(&scaled).map(|(l, w)| l * w).sum();
    Ok(LossAndGrad {
        per_item,
        loss,
        probs,
        trace,
        grad_logits,
    })
}

/// Mean negative log-likelihood of the targets under one denoiser, with a fresh
/// timestep and forward sample per item. Returns the per-item losses, the mean,
/// and the parameter gradient of the mean.
pub fn training_loss(
    net: &DenoiserNet,
    targets: &[usize],
    noisy_labels: &[usize],
    cond: Array2<f64>,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<(Vec<f64>, f64, DenoiserGrad)> {
    let batch = noise_batch(net.shape.classes, targets, noisy_labels, cond, schedule, rng)?;
    let out = batch_loss(net, &batch, &vec![1.0; targets.len()])?;
    let grad = net.backward(&out.trace, out.grad_logits);
    Ok((out.per_item, out.loss, grad))
}

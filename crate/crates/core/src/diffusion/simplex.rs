//! k-logit simplex representation of labels and the closed-form forward process.

use rand_distr::{Distribution, StandardNormal};

use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::rng::Rng;

/// `+k` at `label`, `-k` everywhere else.
pub fn to_k_logit(label: usize, classes: usize, k: f64) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok((0..classes).map(|i| if i == label { k } else { -k }).collect())
}

/// Snaps arbitrary logits to the k-logit point of their argmax (lowest index on ties).
pub fn project_argmax(logits: &[f64], k: f64) -> Vec<f64> {
    let best = argmax(logits);
    (0..logits.len()).map(|i| if i == best { k } else { -k }).collect()
}

/// `sqrt(alpha_bar) * s0 + sqrt(1 - alpha_bar) * eps` with `eps ~ N(0, k^2 I)`.
pub fn forward_sample_with(s0: &[f64], alpha_bar: f64, k: f64, rng: &mut Rng) -> Vec<f64> {
    let signal = alpha_bar.sqrt();
    let noise = (1.0 - alpha_bar).max(0.0).sqrt() * k;
    s0.iter()
        .map(|&v| {
            let z: f64 = StandardNormal.sample(rng);
            signal * v + noise * z
        })
        .collect()
}

/// Samples `s_t` given `s_0` for `1 <= t <= T`.
pub fn forward_sample(s0: &[f64], t: usize, schedule: &DiffusionSchedule, rng: &mut Rng) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::TimestepOutOfRange {
            t,
            min: 1,
            max: schedule.timesteps(),
        });
    }
    let ab = schedule.alpha_bar(t)?;
    Ok(forward_sample_with(s0, ab, schedule.k(), rng))
}

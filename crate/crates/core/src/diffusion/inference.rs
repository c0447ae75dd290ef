//! Iterative reverse process.
//!
//! Starting from `s ~ N(0, k^2 I)`, every step asks the branches for logits,
//! snaps their consensus argmax to the k-logit simplex and re-noises that
//! estimate to the next (lower) timestep of the grid.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use super::denoiser::Denoiser;
use super::schedule::DiffusionSchedule;
use crate::coreg;
use crate::error::{Error, Result};
use crate::math::{argmax, softmax_rows};
use crate::rng::Rng;

/// `steps` evenly spaced timesteps of `{1..T}` in decreasing order, starting at `T`.
pub fn timestep_grid(timesteps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > timesteps {
        return Err(Error::InvalidConfig(format!(
            "inference timesteps must lie in [1, {timesteps}], got {steps}"
        )));
    }
    Ok((1..=steps).rev().map(|j| j * timesteps / steps).collect())
}

fn consensus_probs<D: Denoiser>(
    branches: &[D],
    s: &Array2<f64>,
    t: &[usize],
    s_noisy: &Array2<f64>,
    cond: &Array2<f64>,
) -> Array2<f64> {
    let probs: Vec<Array2<f64>> = branches
        .iter()
        .map(|b| {
            let mut p = b.logits_batch(s, t, s_noisy, cond);
            let c = p.ncols();
            softmax_rows(p.as_slice_mut().expect("standard layout"), c);
            p
        })
        .collect();
    coreg::consensus(&probs)
}

/// Reverse process for a batch of samples; row `i` draws all of its noise from
/// `rngs[i]`, so results do not depend on how samples are batched.
pub fn infer_reverse_batch<D: Denoiser>(
    branches: &[D],
    s_noisy: &Array2<f64>,
    cond: &Array2<f64>,
    schedule: &DiffusionSchedule,
    inference_timesteps: usize,
    rngs: &mut [Rng],
) -> Result<Array2<f64>> {
    if branches.is_empty() {
        return Err(Error::InvalidConfig("no denoiser branches".into()));
    }
    let grid = timestep_grid(schedule.timesteps(), inference_timesteps)?;
    let (b, c) = s_noisy.dim();
    if rngs.len() != b || cond.nrows() != b || branches[0].classes() != c {
        return Err(Error::ShapeMismatch(format!(
            "{b} noisy rows, {} conditioning rows, {} generators, {} classes per branch vs {c}",
            cond.nrows(),
            rngs.len(),
            branches[0].classes()
        )));
    }
    let k = schedule.k();
    let mut s = Array2::zeros((b, c));
    for (mut row, rng) in s.rows_mut().into_iter().zip(rngs.iter_mut()) {
        for v in row.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = k * z;
        }
    }

    for (step, &t) in grid.iter().enumerate() {
        let probs = consensus_probs(branches, &s, &vec![t; b], s_noisy, cond);
        let Some(&next) = grid.get(step + 1) else {
            return Ok(probs);
        };
        let ab = schedule.alpha_bar(next)?;
        let signal = ab.sqrt();
        let noise = (1.0 - ab).sqrt() * k;
        for ((mut row, p), rng) in s.rows_mut().into_iter().zip(probs.rows()).zip(rngs.iter_mut()) {
            let best = argmax(p.as_slice().expect("standard layout"));
            for (i, v) in row.iter_mut().enumerate() {
                let estimate = if i == best { k } else { -k };
                let z: f64 = StandardNormal.sample(rng);
                *v = signal * estimate + noise * z;
            }
        }
    }
    unreachable!("timestep grid is never empty")
}

/// Single-sample reverse process returning the branch-averaged class
/// distribution of the final step.
pub fn infer_reverse<D: Denoiser>(
    branches: &[D],
    s_noisy: &[f64],
    cond: &[f64],
    schedule: &DiffusionSchedule,
    inference_timesteps: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let s_noisy = Array2::from_shape_vec((1, s_noisy.len()), s_noisy.to_vec()).expect("single row");
    let cond = Array2::from_shape_vec((1, cond.len()), cond.to_vec()).expect("single row");
    let mut rngs = [rng.clone()];
    let out = infer_reverse_batch(branches, &s_noisy, &cond, schedule, inference_timesteps, &mut rngs)?;
    *rng = rngs[0].clone();
    Ok(out.row(0).to_vec())
}

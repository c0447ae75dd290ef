//! Browser bindings for three interactive views: the noise schedule, empirical
//! noise transition matrices and k-NN candidate retrieval on a 2-D point cloud.
//!
//! Every binding wraps a plain function of the same name with an `_impl`
//! suffix, so the logic is testable off the browser.

use noisycal::candidates::{candidates_from_distribution, knn_label_distribution, DistanceWeighting, KnnReference};
use noisycal::diffusion::DiffusionSchedule;
use noisycal::noise::{empirical_transition_matrix, inject, NoiseKind, NoiseSpec};
use noisycal::rng::substream;
use rand::Rng;
use wasm_bindgen::prelude::*;

/// Retained-signal curve `alpha_bar_0..=alpha_bar_T`.
pub fn schedule_curve_impl(timesteps: usize, offset: f64) -> Result<Vec<f64>, String> {
    let s = DiffusionSchedule::new(timesteps, 5.0, offset).map_err(|e| e.to_string())?;
    Ok(s.alpha_bar_table().to_vec())
}

/// Row-major `classes x classes` empirical transition matrix after corrupting
/// `samples` balanced labels with the named noise (`sn`, `asn` or `idn`).
pub fn transition_matrix_impl(
    kind: &str,
    ratio: f64,
    classes: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if classes < 2 {
        return Err("at least two classes are needed".into());
    }
    let kind: NoiseKind = kind.parse().map_err(|e: noisycal::Error| e.to_string())?;
    let truth: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let mut r = substream(seed, &[0]);
    let features: Vec<Vec<f64>> = (0..samples)
        .map(|_| (0..8).map(|_| r.random::<f64>() * 2.0 - 1.0).collect())
        .collect();
    let spec = NoiseSpec { kind, ratio, seed };
    let noisy = inject(&features, &truth, classes, &spec).map_err(|e| e.to_string())?;
    let m = empirical_transition_matrix(&truth, &noisy, classes).map_err(|e| e.to_string())?;
    Ok(m.normalized.concat())
}

/// Candidate list for `(qx, qy)` against labelled points `xy` (interleaved
/// coordinates) as `[label, weight, label, weight, ...]`; a single pair with
/// weight 1 means the prior is certain.
#[allow(clippy::too_many_arguments)]
pub fn knn_candidates_impl(
    xy: &[f64],
    labels: &[u32],
    classes: usize,
    qx: f64,
    qy: f64,
    k: usize,
    lambda: f64,
    gamma: f64,
) -> Result<Vec<f64>, String> {
    if xy.len() != 2 * labels.len() {
        return Err(format!("{} coordinates for {} labels", xy.len(), labels.len()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l as usize >= classes) {
        return Err(format!("label {l} outside {classes} classes"));
    }
    let reference = KnnReference {
        points: xy.chunks(2).collect(),
        labels: labels.iter().map(|&l| l as usize).collect(),
        classes,
    };
    let p = knn_label_distribution(&[qx, qy], &reference, k, DistanceWeighting::Uniform, None)
        .map_err(|e| e.to_string())?;
    let set = candidates_from_distribution("query", 0, &p, lambda, gamma);
    Ok(set.candidates.iter().flat_map(|c| [c.label as f64, c.weight]).collect())
}

#[wasm_bindgen]
pub fn schedule_curve(timesteps: usize, offset: f64) -> Result<Vec<f64>, JsError> {
    schedule_curve_impl(timesteps, offset).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn transition_matrix(
    kind: &str,
    ratio: f64,
    classes: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>, JsError> {
    transition_matrix_impl(kind, ratio, classes, samples, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn knn_candidates(
    xy: &[f64],
    labels: &[u32],
    classes: usize,
    qx: f64,
    qy: f64,
    k: usize,
    lambda: f64,
    gamma: f64,
) -> Result<Vec<f64>, JsError> {
    knn_candidates_impl(xy, labels, classes, qx, qy, k, lambda, gamma).map_err(|e| JsError::new(&e))
}

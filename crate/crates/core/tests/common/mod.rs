//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use ndarray::Array2;
use noisycal::candidates::{CandidateKind, CandidateSet, FeatureSpace, RetrievalConfig};
use noisycal::classifier::{ensemble_loss_and_grads, ClassifierParams};
use noisycal::coreg::coregularization_with_logit_grad;
use noisycal::dataset::{Dataset, DatasetManifest, DynamicsRecord, SampleRecord, Split};
use noisycal::diffusion::denoiser::{batch_loss, noise_batch, DenoiserNet, DenoiserShape, NoisedBatch};
use noisycal::diffusion::DiffusionSchedule;
use noisycal::nn::{grad_slices, Activation, Mlp};
use noisycal::rng::substream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Random probability vector with strictly positive entries.
pub fn random_simplex(classes: usize, r: &mut ChaCha20Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..classes).map(|_| r.random::<f64>() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

/// Random train-only dataset with dynamics. With `grid_features`, features are
/// small integers so exact distance ties are common.
pub fn random_dataset(
    n: usize,
    classes: usize,
    dim: usize,
    epochs: usize,
    grid_features: bool,
    r: &mut ChaCha20Rng,
) -> Dataset {
    let mut manifest = DatasetManifest::new(classes, dim);
    manifest.splits.insert(Split::Train, n);
    manifest.dynamics_epochs = epochs;
    let mut records = Vec::with_capacity(n);
    let mut dynamics = Vec::with_capacity(n);
    for i in 0..n {
        let features = (0..dim)
            .map(|_| {
                if grid_features {
                    r.random_range(0..3) as f64
                } else {
                    r.random::<f64>() * 2.0 - 1.0
                }
            })
            .collect();
        let id = format!("s{i:04}");
        let label = r.random_range(0..classes);
        records.push(SampleRecord {
            id: id.clone(),
            features,
            noisy_label: Some(label),
            true_label: Some(r.random_range(0..classes)),
            split: Split::Train,
        });
        dynamics.push(DynamicsRecord {
            id,
            trajectory: (0..epochs).map(|_| random_simplex(classes, r)).collect(),
        });
    }
    Dataset {
        manifest,
        records,
        dynamics: Some(dynamics),
    }
}

/// Straightforward noisy marking: score every sample, sort, take the top ceil(sigma N).
pub fn oracle_noisy_mask(dataset: &Dataset, sigma: f64) -> Vec<bool> {
    let dynamics = dataset.dynamics.as_ref().unwrap();
    let n = dataset.records.len();
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let y = dataset.records[i].noisy_label.unwrap();
            let traj = &dynamics[i].trajectory;
            let total: f64 = traj
                .iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .map(|(c, &p)| {
                            let target = if c == y { 1.0 } else { 0.0 };
                            (p - target).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            total / traj.len() as f64
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap()
            .then(dataset.records[a].id.cmp(&dataset.records[b].id))
    });
    let take = (sigma * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let mut mask = vec![false; n];
    for &i in order.iter().take(take) {
        mask[i] = true;
    }
    mask
}

/// All-pairs k-NN candidate retrieval over a train-only dataset.
pub fn oracle_candidates(dataset: &Dataset, mask: &[bool], config: &RetrievalConfig) -> Vec<CandidateSet> {
    let dynamics = dataset.dynamics.as_ref().unwrap();
    let classes = dataset.num_classes();
    let point = |i: usize| -> Vec<f64> {
        match config.feature_space {
            FeatureSpace::Dynamics => dynamics[i].trajectory.concat(),
            FeatureSpace::RawFeatures => dataset.records[i].features.clone(),
        }
    };
    let n = dataset.records.len();
    (0..n)
        .map(|q| {
            let query = point(q);
            let mut neighbours: Vec<(f64, usize)> = (0..n)
                .filter(|&j| !mask[j] && j != q)
                .map(|j| {
                    let d: f64 = query.iter().zip(point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            neighbours.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let mut counts = vec![0usize; classes];
            for &(_, j) in neighbours.iter().take(config.k) {
                counts[dataset.records[j].noisy_label.unwrap()] += 1;
            }
            let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / config.k as f64).collect();
            let noisy = dataset.records[q].noisy_label.unwrap();
            let id = dataset.records[q].id.clone();

            let mut ranked: Vec<(usize, f64)> =
                (0..classes).filter(|&c| counts[c] > 0).map(|c| (c, probs[c])).collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            if ranked[0].1 >= config.lambda - 1e-12 {
                return CandidateSet::certain(id, ranked[0].0, noisy);
            }
            let pair = ranked[0].1 + ranked[1].1;
            let kept: Vec<(usize, f64)> = if pair >= config.gamma - 1e-12 {
                vec![(ranked[0].0, ranked[0].1 / pair), (ranked[1].0, ranked[1].1 / pair)]
            } else {
                ranked.clone()
            };
            CandidateSet {
                sample_id: id,
                kind: CandidateKind::Uncertain,
                candidates: kept
                    .into_iter()
                    .map(|(label, weight)| noisycal::candidates::Candidate { label, weight })
                    .collect(),
                noisy_label: noisy,
            }
        })
        .collect()
}

/// Compares two candidate lists: same ids, kinds and labels, weights within `tol`.
pub fn same_candidates(a: &[CandidateSet], b: &[CandidateSet], tol: f64) -> Result<(), String> {
    if a.len() != b.len() {
        return Err(format!("{} vs {} sets", a.len(), b.len()));
    }
    for (x, y) in a.iter().zip(b) {
        if x.sample_id != y.sample_id || x.kind != y.kind || x.noisy_label != y.noisy_label {
            return Err(format!("set mismatch: {x:?} vs {y:?}"));
        }
        if x.candidates.len() != y.candidates.len() {
            return Err(format!("candidate count mismatch: {x:?} vs {y:?}"));
        }
        for (p, q) in x.candidates.iter().zip(&y.candidates) {
            if p.label != q.label || (p.weight - q.weight).abs() > tol {
                return Err(format!("candidate mismatch: {x:?} vs {y:?}"));
            }
        }
    }
    Ok(())
}

/// Largest relative error between analytic and central-difference gradients.
/// The denominator is floored at `floor` so vanishing gradients compare absolutely.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

// Gradient checks shared by the gradient suite and the acceptance target.

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;

/// Central differences of `loss` with respect to every parameter exposed by `params`.
pub fn numeric_gradient<T: Clone>(
    model: &T,
    params: impl Fn(&mut T) -> Vec<&mut [f64]>,
    loss: impl Fn(&T) -> f64,
) -> Vec<f64> {
    let mut probe = model.clone();
    let shape: Vec<usize> = params(&mut probe).iter().map(|s| s.len()).collect();
    let mut out = Vec::new();
    for (t, &len) in shape.iter().enumerate() {
        for j in 0..len {
            let orig = params(&mut probe)[t][j];
            params(&mut probe)[t][j] = orig + FD_STEP;
            let up = loss(&probe);
            params(&mut probe)[t][j] = orig - FD_STEP;
            let down = loss(&probe);
            params(&mut probe)[t][j] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

fn small_shape() -> DenoiserShape {
    DenoiserShape {
        classes: 3,
        cond_dim: 5,
        hidden: 7,
        time_dim: 4,
        encoding: 3,
    }
}

fn denoiser_batch(seed: u64, net: &DenoiserNet) -> NoisedBatch {
    let schedule = DiffusionSchedule::new(50, 2.0, 0.008).unwrap();
    let mut r = substream(seed, &[99]);
    let b = 6;
    let targets: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();
    let noisy: Vec<usize> = (0..b).map(|_| r.random_range(0..3)).collect();
    let cond = Array2::from_shape_simple_fn((b, net.shape.cond_dim), || r.random::<f64>());
    noise_batch(3, &targets, &noisy, cond, &schedule, &mut r).unwrap()
}

/// Weighted cross-entropy of one random denoiser.
pub fn denoiser_gradient_error(seed: u64) -> f64 {
    let mut r = substream(seed, &[1]);
    let net = DenoiserNet::random(small_shape(), 2.0, &mut r);
    let b = denoiser_batch(seed, &net);
    let weights = vec![0.7, 1.0, 0.3, 1.0, 0.5, 0.9];
    let out = batch_loss(&net, &b, &weights).unwrap();
    let analytic: Vec<f64> = net.backward(&out.trace, out.grad_logits).slices().concat();
    let numeric = numeric_gradient(&net, DenoiserNet::param_slices_mut, |n| {
        batch_loss(n, &b, &weights).unwrap().loss
    });
    max_relative_error(&analytic, &numeric, FD_FLOOR)
}

/// Three denoiser branches with a co-regularization term; worst branch.
pub fn coregularized_denoiser_gradient_error(seed: u64) -> f64 {
    let mut r = substream(seed, &[1]);
    let nets: Vec<DenoiserNet> = (0..3)
        .map(|_| DenoiserNet::random(small_shape(), 2.0, &mut r))
        .collect();
    let b = denoiser_batch(seed, &nets[0]);
    let weights = vec![1.0; 6];
    let objective = |nets: &[DenoiserNet]| -> f64 {
        let outs: Vec<_> = nets.iter().map(|n| batch_loss(n, &b, &weights).unwrap()).collect();
        let probs: Vec<Array2<f64>> = outs.iter().map(|o| o.probs.clone()).collect();
        outs.iter().map(|o| o.loss).sum::<f64>() + 0.5 * coregularization_with_logit_grad(&probs, 1e-8).0
    };
    let outs: Vec<_> = nets.iter().map(|n| batch_loss(n, &b, &weights).unwrap()).collect();
    let probs: Vec<Array2<f64>> = outs.iter().map(|o| o.probs.clone()).collect();
    let (_, cr) = coregularization_with_logit_grad(&probs, 1e-8);
    let mut worst: f64 = 0.0;
    for (m, (out, g)) in outs.into_iter().zip(cr).enumerate() {
        let mut grad_logits = out.grad_logits.clone();
        grad_logits.scaled_add(0.5, &g);
        let analytic: Vec<f64> = nets[m].backward(&out.trace, grad_logits).slices().concat();
        let numeric = numeric_gradient(&nets, |ns| ns[m].param_slices_mut(), |ns| objective(ns));
        worst = worst.max(max_relative_error(&analytic, &numeric, FD_FLOOR));
    }
    worst
}

fn classifier_branches(seed: u64, hidden: usize, m: usize) -> Vec<ClassifierParams> {
    let mut r = substream(seed, &[2]);
    (0..m)
        .map(|_| {
            let widths = if hidden == 0 { vec![4, 3] } else { vec![4, hidden, 3] };
            ClassifierParams {
                network: Mlp::random(&widths, Activation::Tanh, &mut r),
            }
        })
        .collect()
}

/// Three co-regularized classifier branches, linear on even seeds and with a
/// hidden layer on odd ones; worst branch.
pub fn classifier_gradient_error(seed: u64) -> f64 {
    let hidden = if seed.is_multiple_of(2) { 0 } else { 5 };
    let branches = classifier_branches(seed, hidden, 3);
    let mut r = substream(seed, &[3]);
    let x = Array2::from_shape_simple_fn((7, 4), || r.random::<f64>() * 2.0 - 1.0);
    let targets: Vec<usize> = (0..7).map(|_| r.random_range(0..3)).collect();
    let (_, grads) = ensemble_loss_and_grads(&branches, &x, &targets, 1.0, 1e-8);
    (0..branches.len())
        .map(|m| {
            let analytic: Vec<f64> = grad_slices(&grads[m]).concat();
            let numeric = numeric_gradient(
                &branches,
                |bs| bs[m].network.param_slices_mut(),
                |bs| ensemble_loss_and_grads(bs, &x, &targets, 1.0, 1e-8).0,
            );
            max_relative_error(&analytic, &numeric, FD_FLOOR)
        })
        .fold(0.0, f64::max)
}

// Analytic noise transition targets.

/// `1 - r` on the diagonal, `r / (C - 1)` elsewhere.
pub fn symmetric_target(classes: usize, r: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|a| {
            (0..classes)
                .map(|b| if a == b { 1.0 - r } else { r / (classes - 1) as f64 })
                .collect()
        })
        .collect()
}

/// `1 - r` on the diagonal, `r` on the next class cyclically.
pub fn asymmetric_target(classes: usize, r: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|a| {
            (0..classes)
                .map(|b| {
                    if a == b {
                        1.0 - r
                    } else if b == (a + 1) % classes {
                        r
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

pub fn worst_entry(found: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    found
        .iter()
        .flatten()
        .zip(target.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

//! Denoiser training with candidate distillation.
//!
//! Warm-up epochs fit the branches on certain samples only. Each later epoch
//! first runs `eval_rounds` inference passes over the uncertain samples,
//! pulling the weight of a predicted candidate towards 1 by `(1 - w) / rounds`
//! and renormalizing, then samples one candidate per uncertain sample and
//! trains on certain plus sampled pairs, scaling each uncertain loss by the
//! sampled candidate's weight.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::denoiser::{batch_loss, noise_batch, DenoiserNet, DenoiserShape};
use super::inference::{infer_reverse_batch, timestep_grid};
use super::schedule::DiffusionSchedule;
use super::simplex::to_k_logit;
use crate::candidates::{CandidateKind, CandidateSet};
use crate::coreg::{self, coregularization_with_logit_grad};
use crate::dataset::{DynamicsRecord, SampleRecord};
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::nn::{Adam, AdamConfig};
use crate::rng::{self, tag};

/// Rows per inference batch; bounds memory for large uncertain sets.
const INFERENCE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Flattened per-epoch probability trajectory.
    #[default]
    Dynamics,
    /// Trajectory followed by the raw feature vector.
    DynamicsAndFeatures,
}

impl Conditioning {
    pub fn width(self, classes: usize, epochs: usize, feature_dim: usize) -> usize {
        match self {
            Conditioning::Dynamics => classes * epochs,
            Conditioning::DynamicsAndFeatures => classes * epochs + feature_dim,
        }
    }

    pub fn vector(self, record: &SampleRecord, dynamics: &DynamicsRecord) -> Vec<f64> {
        let mut v = dynamics.flattened();
        if self == Conditioning::DynamicsAndFeatures {
            v.extend_from_slice(&record.features);
        }
        v
    }

    pub fn matrix(self, records: &[&SampleRecord], dynamics: &[&DynamicsRecord]) -> Array2<f64> {
        let rows: Vec<Vec<f64>> = records.iter().zip(dynamics).map(|(r, d)| self.vector(r, d)).collect();
        let width = rows.first().map_or(0, Vec::len);
        Array2::from_shape_vec((rows.len(), width), rows.concat()).expect("rectangular conditioning")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Epochs trained on certain samples only.
    pub warmup_epochs: usize,
    /// Inference rounds per epoch used to refine uncertain weights.
    pub eval_rounds: usize,
    pub total_epochs: usize,
    pub train_timesteps: usize,
    pub inference_timesteps: usize,
    pub simplex_k: f64,
    pub schedule_offset: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub branches: usize,
    pub coreg_weight: f64,
    pub coreg_epsilon: f64,
    pub hidden_units: usize,
    pub time_embedding: usize,
    pub encoding_width: usize,
    pub conditioning: Conditioning,
    /// Keep the epoch with the best noisy-validation accuracy.
    pub select_by_validation: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            warmup_epochs: 2,
            eval_rounds: 2,
            total_epochs: 10,
            train_timesteps: 800,
            inference_timesteps: 10,
            simplex_k: 5.0,
            schedule_offset: 0.008,
            batch_size: 128,
            learning_rate: 5e-4,
            branches: 3,
            coreg_weight: 1.0,
            coreg_epsilon: coreg::DEFAULT_EPSILON,
            hidden_units: 128,
            time_embedding: 64,
            encoding_width: 64,
            conditioning: Conditioning::Dynamics,
            select_by_validation: true,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.warmup_epochs >= self.total_epochs {
            return fail(format!(
                "warm-up epochs ({}) must be fewer than total epochs ({})",
                self.warmup_epochs, self.total_epochs
            ));
        }
        if self.eval_rounds < 1 || self.branches < 1 || self.batch_size < 1 {
            return fail("eval_rounds, branches and batch_size must be at least 1".into());
        }
        if self.inference_timesteps < 1 || self.inference_timesteps > self.train_timesteps {
            return fail(format!(
                "inference timesteps ({}) must lie in [1, {}]",
                self.inference_timesteps, self.train_timesteps
            ));
        }
        if !(self.learning_rate > 0.0) || self.coreg_weight < 0.0 || !(self.coreg_epsilon > 0.0) {
            return fail("learning_rate and coreg_epsilon must be positive, coreg_weight non-negative".into());
        }
        if self.time_embedding < 2 || !self.time_embedding.is_multiple_of(2) {
            return fail("time embedding width must be a positive even number".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::new(self.train_timesteps, self.simplex_k, self.schedule_offset)
    }

    fn shape(&self, classes: usize, cond_dim: usize) -> DenoiserShape {
        DenoiserShape {
            classes,
            cond_dim,
            hidden: self.hidden_units,
            time_dim: self.time_embedding,
            encoding: self.encoding_width,
        }
    }
}

/// Trained label posterior: every branch plus what is needed to run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub schedule: DiffusionSchedule,
    pub conditioning: Conditioning,
    pub inference_timesteps: usize,
    pub branches: Vec<DenoiserNet>,
    pub epoch_valid_accuracy: Vec<f64>,
    pub selected_epoch: usize,
}

impl DiffusionModel {
    pub fn classes(&self) -> usize {
        self.branches[0].shape.classes
    }
}

/// Weight bookkeeping for one evaluation round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub epoch: usize,
    pub round: usize,
    /// Uncertain samples whose prediction hit a candidate.
    pub matched: usize,
    /// Largest `|sum(weights) - 1|` over all uncertain sets after the round.
    pub max_mass_error: f64,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub model: DiffusionModel,
    pub refined: Vec<CandidateSet>,
    pub rounds: Vec<RoundStats>,
}

/// Noisy-validation inputs used for epoch selection.
#[derive(Debug, Clone)]
pub struct ValidationData {
    pub cond: Array2<f64>,
    /// Labels the posterior is conditioned on (the classifier's predictions).
    pub condition_labels: Vec<usize>,
    pub noisy_labels: Vec<usize>,
}

/// Moves weight towards `predicted` when it is a candidate: `w* += (1 - w*) / rounds`,
/// then renormalizes the whole list. Returns whether a candidate matched.
pub fn reinforce_candidate(set: &mut CandidateSet, predicted: usize, rounds: usize) -> bool {
    let Some(hit) = set.candidates.iter_mut().find(|c| c.label == predicted) else {
        return false;
    };
    hit.weight += (1.0 - hit.weight) / rounds as f64;
    let total: f64 = set.candidates.iter().map(|c| c.weight).sum();
    for c in &mut set.candidates {
        c.weight /= total;
    }
    true
}

/// Draws one candidate label proportionally to the weights; returns it with its weight.
pub fn sample_candidate(set: &CandidateSet, rng: &mut rng::Rng) -> (usize, f64) {
    let total: f64 = set.candidates.iter().map(|c| c.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for c in &set.candidates {
        if u < c.weight {
            return (c.label, c.weight);
        }
        u -= c.weight;
    }
    let last = set.candidates.last().expect("non-empty candidate set");
    (last.label, last.weight)
}

fn k_logit_rows(labels: &[usize], classes: usize, k: f64) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((labels.len(), classes));
    for (mut row, &l) in out.rows_mut().into_iter().zip(labels) {
        row.assign(&ndarray::Array1::from(to_k_logit(l, classes, k)?));
    }
    Ok(out)
}

/// Runs the reverse process for every row, chunked, with per-row substreams
/// derived from `tags` and the row index.
pub fn infer_rows(
    branches: &[DenoiserNet],
    condition_labels: &[usize],
    cond: &Array2<f64>,
    schedule: &DiffusionSchedule,
    inference_timesteps: usize,
    seed: u64,
    tags: &[u64],
) -> Result<Array2<f64>> {
    let classes = branches[0].shape.classes;
    let n = condition_labels.len();
    let mut out = Array2::zeros((n, classes));
    let mut start = 0;
    while start < n {
        let end = (start + INFERENCE_CHUNK).min(n);
        let s_noisy = k_logit_rows(&condition_labels[start..end], classes, schedule.k())?;
        let c = cond.slice(ndarray::s![start..end, ..]).to_owned();
        let mut rngs: Vec<rng::Rng> = (start..end)
            .map(|i| {
                let mut t = tags.to_vec();
                t.push(i as u64);
                rng::substream(seed, &t)
            })
            .collect();
        let probs = infer_reverse_batch(branches, &s_noisy, &c, schedule, inference_timesteps, &mut rngs)?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&probs);
        start = end;
    }
    Ok(out)
}

fn validation_accuracy(
    branches: &[DenoiserNet],
    validation: &ValidationData,
    schedule: &DiffusionSchedule,
    config: &DistillConfig,
) -> Result<f64> {
    if validation.noisy_labels.is_empty() {
        return Ok(0.0);
    }
    let probs = infer_rows(
        branches,
        &validation.condition_labels,
        &validation.cond,
        schedule,
        config.inference_timesteps,
        config.seed,
        &[tag::MODEL_SELECTION],
    )?;
    let hits = probs
        .rows()
        .into_iter()
        .zip(&validation.noisy_labels)
        .filter(|(p, &y)| argmax(p.as_slice().expect("standard layout")) == y)
        .count();
    Ok(hits as f64 / validation.noisy_labels.len() as f64)
}

/// Trains `config.branches` denoisers on `sets` (aligned with the rows of
/// `cond`) and refines the uncertain candidate weights.
pub fn distill_train(
    sets: &[CandidateSet],
    cond: &Array2<f64>,
    classes: usize,
    config: &DistillConfig,
    validation: Option<&ValidationData>,
) -> Result<DistillOutcome> {
    config.validate()?;
    if sets.len() != cond.nrows() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: cond.nrows(),
        });
    }
    let schedule = config.schedule()?;
    timestep_grid(schedule.timesteps(), config.inference_timesteps)?;
    let mut sets: Vec<CandidateSet> = sets.to_vec();
    for s in &sets {
        s.validate()?;
    }
    let certain: Vec<usize> = (0..sets.len())
        .filter(|&i| sets[i].kind == CandidateKind::Certain)
        .collect();
    let uncertain: Vec<usize> = (0..sets.len())
        .filter(|&i| sets[i].kind == CandidateKind::Uncertain)
        .collect();
    if certain.is_empty() {
        return Err(Error::NoWarmupData);
    }
    let noisy: Vec<usize> = sets.iter().map(|s| s.noisy_label).collect();
    let uncertain_cond = cond.select(Axis(0), &uncertain);
    let uncertain_noisy: Vec<usize> = uncertain.iter().map(|&i| noisy[i]).collect();

    let shape = config.shape(classes, cond.ncols());
    let mut branches: Vec<DenoiserNet> = (0..config.branches)
        .map(|m| {
            let mut r = rng::substream(config.seed, &[tag::DENOISER_INIT, m as u64]);
            DenoiserNet::random(shape, schedule.k(), &mut r)
        })
        .collect();
    let mut optimizers: Vec<Adam> = (0..config.branches)
        .map(|_| Adam::new(AdamConfig::new(config.learning_rate)))
        .collect();

    let mut rounds = Vec::new();
    let mut epoch_valid_accuracy = Vec::new();
    let mut best: Option<(f64, usize, Vec<DenoiserNet>)> = None;
    let m = config.branches as f64;

    for epoch in 0..config.total_epochs {
        let e = epoch as u64;
        // (target, loss weight, row in `cond`)
        let mut items: Vec<(usize, f64, usize)> =
            certain.iter().map(|&i| (sets[i].candidates[0].label, 1.0, i)).collect();

        if epoch >= config.warmup_epochs && !uncertain.is_empty() {
            for round in 0..config.eval_rounds {
                let probs = infer_rows(
                    &branches,
                    &uncertain_noisy,
                    &uncertain_cond,
                    &schedule,
                    config.inference_timesteps,
                    config.seed,
                    &[tag::DISTILL_EVAL, e, round as u64],
                )?;
                let mut matched = 0;
                let mut max_mass_error: f64 = 0.0;
                for (row, &i) in probs.rows().into_iter().zip(&uncertain) {
                    let predicted = argmax(row.as_slice().expect("standard layout"));
                    if reinforce_candidate(&mut sets[i], predicted, config.eval_rounds) {
                        matched += 1;
                    }
                    let mass: f64 = sets[i].candidates.iter().map(|c| c.weight).sum();
                    max_mass_error = max_mass_error.max((mass - 1.0).abs());
                }
                rounds.push(RoundStats {
                    epoch,
                    round,
                    matched,
                    max_mass_error,
                });
            }
            for &i in &uncertain {
                let mut r = rng::substream(config.seed, &[tag::DISTILL_EPOCH, e, 0, i as u64]);
                let (label, weight) = sample_candidate(&sets[i], &mut r);
                items.push((label, weight, i));
            }
        }

        let mut epoch_rng = rng::substream(config.seed, &[tag::DISTILL_EPOCH, e, 1]);
        items.shuffle(&mut epoch_rng);
        for batch in items.chunks(config.batch_size) {
            let rows: Vec<usize> = batch.iter().map(|b| b.2).collect();
            let targets: Vec<usize> = batch.iter().map(|b| b.0).collect();
            let weights: Vec<f64> = batch.iter().map(|b| b.1 / m).collect();
            let batch_noisy: Vec<usize> = rows.iter().map(|&i| noisy[i]).collect();
            let noised = noise_batch(
                classes,
                &targets,
                &batch_noisy,
                cond.select(Axis(0), &rows),
                &schedule,
                &mut epoch_rng,
            )?;
            let mut outs = branches
                .iter()
                .map(|net| batch_loss(net, &noised, &weights))
                .collect::<Result<Vec<_>>>()?;
            let mut loss: f64 = outs.iter().map(|o| o.loss).sum();
            if config.branches > 1 && config.coreg_weight > 0.0 {
                let probs: Vec<Array2<f64>> = outs.iter().map(|o| o.probs.clone()).collect();
                let (cr, grads) = coregularization_with_logit_grad(&probs, config.coreg_epsilon);
                loss += config.coreg_weight * cr;
                for (o, g) in outs.iter_mut().zip(grads) {
                    o.grad_logits.scaled_add(config.coreg_weight, &g);
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            for ((net, opt), out) in branches.iter_mut().zip(&mut optimizers).zip(outs) {
                let grad = net.backward(&out.trace, out.grad_logits);
                opt.step(net.param_slices_mut(), grad.slices());
            }
        }
        if branches.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }

        if let (true, Some(v)) = (config.select_by_validation, validation) {
            let acc = validation_accuracy(&branches, v, &schedule, config)?;
            epoch_valid_accuracy.push(acc);
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch, branches.clone()));
            }
        }
    }

    let (selected_epoch, branches) = match best {
        Some((_, epoch, snapshot)) => (epoch, snapshot),
        None => (config.total_epochs - 1, branches),
    };
    Ok(DistillOutcome {
        model: DiffusionModel {
            schedule,
            conditioning: config.conditioning,
            inference_timesteps: config.inference_timesteps,
            branches,
            epoch_valid_accuracy,
            selected_epoch,
        },
        refined: sets,
        rounds,
    })
}

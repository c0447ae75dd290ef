//! Noisy-label classifier ensemble that records training dynamics.
//!
//! `M` independently initialized softmax classifiers are trained together on
//! the noisy labels with a co-regularization penalty. After every epoch the
//! branch consensus is recorded for every sample of every split; those
//! per-epoch probability vectors are the training dynamics consumed by the
//! later stages.

use std::cmp::Ordering;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::coreg::{self, coregularization_with_logit_grad};
use crate::dataset::{Dataset, DynamicsRecord, Split};
use crate::error::{Error, Result};
use crate::math::{argmax, euclidean, fraction_count, one_hot, softmax_rows};
use crate::nn::{self, Activation, Adam, AdamConfig, Mlp};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub network: Mlp,
}

impl ClassifierParams {
    /// All-zero linear classifier; predicts the uniform distribution.
    pub fn zeros(features: usize, classes: usize) -> Self {
        Self {
            network: Mlp {
                layers: vec![nn::Dense::zeros(features, classes, Activation::Identity)],
            },
        }
    }

    fn random(features: usize, classes: usize, hidden: usize, rng: &mut rng::Rng) -> Self {
        let widths: Vec<usize> = if hidden == 0 {
            vec![features, classes]
        } else {
            vec![features, hidden, classes]
        };
        Self {
            network: Mlp::random(&widths, Activation::Tanh, rng),
        }
    }

    pub fn logits(&self, x: &Array2<f64>) -> Array2<f64> {
        self.network.forward(x)
    }

    pub fn probabilities(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut p = self.logits(x);
        let c = p.ncols();
        softmax_rows(p.as_slice_mut().expect("standard layout"), c);
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub branches: usize,
    pub coreg_weight: f64,
    pub coreg_epsilon: f64,
    /// Width of the optional hidden layer; 0 trains a linear softmax.
    pub hidden_units: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            learning_rate: 5e-5,
            branches: 3,
            coreg_weight: 1.0,
            coreg_epsilon: coreg::DEFAULT_EPSILON,
            hidden_units: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.branches < 1 || self.batch_size < 1 {
            return Err(Error::InvalidConfig(
                "epochs, branches and batch_size must all be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.coreg_weight < 0.0 || !(self.coreg_epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "learning_rate and coreg_epsilon must be positive, coreg_weight non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Persisted part of a trained ensemble: parameters of every branch after every
/// epoch plus the noisy-validation curve used for model selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub config: TrainConfig,
    pub num_classes: usize,
    /// `epoch_params[e][m]`: branch `m` after epoch `e`.
    pub epoch_params: Vec<Vec<ClassifierParams>>,
    pub epoch_valid_accuracy: Vec<f64>,
    pub selected_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEnsemble {
    pub model: ClassifierModel,
    /// Consensus trajectories aligned with the dataset records.
    pub dynamics: Vec<DynamicsRecord>,
}

impl ClassifierModel {
    pub fn branch_params(&self) -> &[ClassifierParams] {
        &self.epoch_params[self.selected_epoch]
    }

    fn consensus(&self, x: &Array2<f64>, epoch: usize) -> Array2<f64> {
        let probs: Vec<Array2<f64>> = self.epoch_params[epoch].iter().map(|p| p.probabilities(x)).collect();
        coreg::consensus(&probs)
    }

    /// Consensus class distribution at the selected epoch, or at `epoch`.
    pub fn predict_proba(&self, features: &[f64], epoch: Option<usize>) -> Result<Vec<f64>> {
        let epoch = epoch.unwrap_or(self.selected_epoch);
        if epoch >= self.epoch_params.len() {
            return Err(Error::EpochOutOfRange {
                epoch,
                epochs: self.epoch_params.len(),
            });
        }
        let expected = self.epoch_params[epoch][0].network.inputs();
        if features.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} features, classifier expects {expected}",
                features.len()
            )));
        }
        let x = Array2::from_shape_vec((1, features.len()), features.to_vec()).expect("single row");
        Ok(self.consensus(&x, epoch).row(0).to_vec())
    }

    /// Consensus class distributions at the selected epoch, one row per feature row.
    pub fn predict_proba_matrix(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        let expected = self.epoch_params[self.selected_epoch][0].network.inputs();
        if x.ncols() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} features, classifier expects {expected}",
                x.ncols()
            )));
        }
        Ok(self.consensus(x, self.selected_epoch))
    }

    /// Argmax predictions for a batch of feature rows at the selected epoch.
    pub fn predict_labels(&self, features: &[Vec<f64>]) -> Vec<usize> {
        if features.is_empty() {
            return Vec::new();
        }
        let q = self.consensus(&feature_matrix(features), self.selected_epoch);
        q.rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect()
    }
}

impl TrainedEnsemble {
    pub fn predict_proba(&self, features: &[f64], epoch: Option<usize>) -> Result<Vec<f64>> {
        self.model.predict_proba(features, epoch)
    }
}

pub(crate) fn feature_matrix(rows: &[Vec<f64>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), d), rows.concat()).expect("rectangular features")
}

/// Mean per-branch cross-entropy plus `coreg_weight * l_CR` on one batch, and its
/// gradient with respect to every branch's parameters.
pub fn ensemble_loss_and_grads(
    branches: &[ClassifierParams],
    x: &Array2<f64>,
    targets: &[usize],
    coreg_weight: f64,
    coreg_epsilon: f64,
) -> (f64, Vec<Vec<nn::DenseGrad>>) {
    let m = branches.len() as f64;
    let b = targets.len() as f64;
    let row_weights = vec![1.0 / (m * b); targets.len()];
    let traces: Vec<_> = branches.iter().map(|p| p.network.forward_trace(x.clone())).collect();
    let mut ce = 0.0;
    let mut probs = Vec::with_capacity(branches.len());
    let mut logit_grads = Vec::with_capacity(branches.len());
    for trace in &traces {
        let (losses, p, g) = nn::softmax_cross_entropy(trace.output(), targets, &row_weights);
        ce += losses.iter().sum::<f64>() / (m * b);
        probs.push(p);
        logit_grads.push(g);
    }
    let mut loss = ce;
    if branches.len() > 1 && coreg_weight > 0.0 {
        let (cr, cr_grads) = coregularization_with_logit_grad(&probs, coreg_epsilon);
        loss += coreg_weight * cr;
        for (g, cg) in logit_grads.iter_mut().zip(cr_grads) {
            g.scaled_add(coreg_weight, &cg);
        }
    }
    let grads = branches
        .iter()
        .zip(&traces)
        .zip(logit_grads)
        .map(|((p, trace), g)| p.network.backward(trace, g).0)
        .collect();
    (loss, grads)
}

/// Trains the branch ensemble on noisy labels and records consensus dynamics for
/// every record after every epoch.
pub fn train_with_dynamics(dataset: &Dataset, config: &TrainConfig) -> Result<TrainedEnsemble> {
    config.validate()?;
    let classes = dataset.num_classes();
    let dim = dataset.manifest.feature_dim;

    let labelled = |split: Split| -> Result<(Array2<f64>, Vec<usize>)> {
        let rows: Vec<_> = dataset.split(split).collect();
        if rows.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        let labels = rows
            .iter()
            .map(|r| {
                r.noisy_label
                    .ok_or_else(|| Error::InvariantViolation(format!("record `{}` has an unresolved label", r.id)))
            })
            .collect::<Result<Vec<_>>>()?;
        let feats: Vec<Vec<f64>> = rows.iter().map(|r| r.features.clone()).collect();
        Ok((feature_matrix(&feats), labels))
    };
    let (train_x, train_y) = labelled(Split::Train)?;
    let (valid_x, valid_y) = labelled(Split::Valid)?;
    let all_x = feature_matrix(&dataset.records.iter().map(|r| r.features.clone()).collect::<Vec<_>>());

    let mut branches: Vec<ClassifierParams> = (0..config.branches)
        .map(|m| {
            let mut r = rng::substream(config.seed, &[tag::CLASSIFIER_INIT, m as u64]);
            ClassifierParams::random(dim, classes, config.hidden_units, &mut r)
        })
        .collect();
    let mut optimizers: Vec<Adam> = (0..config.branches)
        .map(|_| Adam::new(AdamConfig::new(config.learning_rate)))
        .collect();

    let n = train_y.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trajectories = vec![Vec::with_capacity(config.epochs); dataset.records.len()];
    let mut epoch_params = Vec::with_capacity(config.epochs);
    let mut epoch_valid_accuracy = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut shuffle = rng::substream(config.seed, &[tag::CLASSIFIER_SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle);
        for batch in order.chunks(config.batch_size) {
            let x = train_x.select(ndarray::Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (loss, grads) = ensemble_loss_and_grads(&branches, &x, &y, config.coreg_weight, config.coreg_epsilon);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            for ((params, grad), opt) in branches.iter_mut().zip(&grads).zip(&mut optimizers) {
                opt.step(params.network.param_slices_mut(), nn::grad_slices(grad));
            }
        }
        if branches.iter().any(|b| !b.network.is_finite()) {
            return Err(Error::NonFiniteLoss { epoch });
        }

        let probs: Vec<Array2<f64>> = branches.iter().map(|b| b.probabilities(&all_x)).collect();
        let q = coreg::consensus(&probs);
        for (traj, row) in trajectories.iter_mut().zip(q.rows()) {
            traj.push(row.to_vec());
        }

        let valid_probs: Vec<Array2<f64>> = branches.iter().map(|b| b.probabilities(&valid_x)).collect();
        let vq = coreg::consensus(&valid_probs);
        let correct = vq
            .rows()
            .into_iter()
            .zip(&valid_y)
            .filter(|(row, &y)| argmax(row.as_slice().expect("standard layout")) == y)
            .count();
        epoch_valid_accuracy.push(correct as f64 / valid_y.len() as f64);
        epoch_params.push(branches.clone());
    }

    // First maximum wins, so ties select the earliest epoch.
    let selected_epoch = argmax(&epoch_valid_accuracy);
    let dynamics = dataset
        .records
        .iter()
        .zip(trajectories)
        .map(|(r, trajectory)| DynamicsRecord {
            id: r.id.clone(),
            trajectory,
        })
        .collect();
    Ok(TrainedEnsemble {
        model: ClassifierModel {
            config: config.clone(),
            num_classes: classes,
            epoch_params,
            epoch_valid_accuracy,
            selected_epoch,
        },
        dynamics,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryStatistic {
    /// Mean distance to the one-hot noisy label across epochs.
    #[default]
    Mean,
    /// Mean plus standard deviation of that distance.
    MeanPlusStd,
}

/// Per-sample distance statistic between a trajectory and its noisy label.
pub fn trajectory_score(trajectory: &[Vec<f64>], noisy_label: usize, statistic: TrajectoryStatistic) -> f64 {
    if trajectory.is_empty() {
        return 0.0;
    }
    let target = one_hot(noisy_label, trajectory[0].len());
    let dists: Vec<f64> = trajectory.iter().map(|p| euclidean(p, &target)).collect();
    let (mean, std) = crate::math::mean_std(&dists);
    match statistic {
        TrajectoryStatistic::Mean => mean,
        TrajectoryStatistic::MeanPlusStd => mean + std,
    }
}

/// Marks the `ceil(sigma * N)` samples whose trajectories stray furthest from
/// their noisy labels. Equal scores are ranked by sample id.
pub fn noisy_marker(
    dynamics: &[&DynamicsRecord],
    noisy_labels: &[usize],
    sigma: f64,
    statistic: TrajectoryStatistic,
) -> Result<Vec<bool>> {
    if dynamics.len() != noisy_labels.len() {
        return Err(Error::LengthMismatch {
            left: dynamics.len(),
            right: noisy_labels.len(),
        });
    }
    if !(0.0..=1.0).contains(&sigma) {
        return Err(Error::InvalidConfig(format!("sigma {sigma} outside [0, 1]")));
    }
    let scores: Vec<f64> = dynamics
        .iter()
        .zip(noisy_labels)
        .map(|(d, &y)| trajectory_score(&d.trajectory, y, statistic))
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| dynamics[a].id.cmp(&dynamics[b].id))
    });
    let mut mask = vec![false; scores.len()];
    for &i in order.iter().take(fraction_count(sigma, scores.len())) {
        mask[i] = true;
    }
    Ok(mask)
}

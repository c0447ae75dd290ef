//! Calibration of classifier predictions with the label posterior, and the
//! evaluation report.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateKind, CandidateSet};
use crate::classifier::ClassifierModel;
use crate::dataset::{Dataset, SampleRecord, Split};
use crate::diffusion::distill::infer_rows;
use crate::diffusion::DiffusionModel;
use crate::error::{Error, Result};
use crate::math::{argmax, mean_std};
use crate::noise::{empirical_transition_matrix, TransitionMatrix};
use crate::rng::tag;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Condition the posterior on the classifier's most likely label.
    #[default]
    ArgmaxCondition,
    /// Average the posterior over every conditioning label, weighted by the
    /// classifier's probabilities.
    MarginalCondition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub seeds: Vec<u64>,
    pub report_path: Option<String>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            mode: CalibrationMode::ArgmaxCondition,
            seeds: vec![0, 1, 2, 3, 4],
            report_path: None,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("calibration needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Distribution over clean labels given a conditioning label and conditioning
/// vector per row. Row `i` must draw its randomness from `(seed, tags, i)` only.
pub trait LabelPosterior {
    fn classes(&self) -> usize;
    fn posterior(&self, condition_labels: &[usize], cond: &Array2<f64>, seed: u64, tags: &[u64])
        -> Result<Array2<f64>>;
}

impl LabelPosterior for DiffusionModel {
    fn classes(&self) -> usize {
        DiffusionModel::classes(self)
    }

    fn posterior(
        &self,
        condition_labels: &[usize],
        cond: &Array2<f64>,
        seed: u64,
        tags: &[u64],
    ) -> Result<Array2<f64>> {
        infer_rows(
            &self.branches,
            condition_labels,
            cond,
            &self.schedule,
            self.inference_timesteps,
            seed,
            tags,
        )
    }
}

/// Combines per-row classifier distributions `prior` with `posterior`.
///
/// Marginal mode runs one pass per class and reuses the same random stream for
/// every term, so a one-hot prior reproduces argmax mode exactly.
pub fn calibrate_with<P: LabelPosterior + ?Sized>(
    prior: &Array2<f64>,
    posterior: &P,
    cond: &Array2<f64>,
    mode: CalibrationMode,
    seed: u64,
) -> Result<Array2<f64>> {
    let (n, c) = prior.dim();
    if c != posterior.classes() || cond.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "prior {n}x{c}, {} conditioning rows, posterior over {} classes",
            cond.nrows(),
            posterior.classes()
        )));
    }
    let tags = [tag::CALIBRATE];
    match mode {
        CalibrationMode::ArgmaxCondition => {
            let labels: Vec<usize> = prior
                .rows()
                .into_iter()
                .map(|r| argmax(r.as_slice().expect("standard layout")))
                .collect();
            posterior.posterior(&labels, cond, seed, &tags)
        }
        CalibrationMode::MarginalCondition => {
            let mut out = Array2::zeros((n, c));
            for class in 0..c {
                let term = posterior.posterior(&vec![class; n], cond, seed, &tags)?;
                for ((mut o, t), p) in out.rows_mut().into_iter().zip(term.rows()).zip(prior.rows()) {
                    o.scaled_add(p[class], &t);
                }
            }
            Ok(out)
        }
    }
}

/// Calibrated predictions for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub ids: Vec<String>,
    pub classifier_labels: Vec<usize>,
    pub probabilities: Array2<f64>,
    pub labels: Vec<usize>,
}

pub fn calibrate(
    dataset: &Dataset,
    classifier: &ClassifierModel,
    model: &DiffusionModel,
    split: Split,
    mode: CalibrationMode,
    seed: u64,
) -> Result<Calibration> {
    let all_dynamics = dataset.aligned_dynamics()?;
    let idx = dataset.split_indices(split);
    let records: Vec<&SampleRecord> = idx.iter().map(|&i| &dataset.records[i]).collect();
    let dynamics: Vec<_> = idx.iter().map(|&i| all_dynamics[i]).collect();
    let d = dataset.manifest.feature_dim;
    let x = Array2::from_shape_vec(
        (records.len(), d),
        records.iter().flat_map(|r| r.features.iter().copied()).collect(),
    )
    .expect("validated feature width");
    let prior = classifier.predict_proba_matrix(&x)?;
    let cond = model.conditioning.matrix(&records, &dynamics);
    let probabilities = if records.is_empty() {
        Array2::zeros((0, dataset.num_classes()))
    } else {
        calibrate_with(&prior, model, &cond, mode, seed)?
    };
    let row_argmax = |m: &Array2<f64>| -> Vec<usize> {
        m.rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("standard layout")))
            .collect()
    };
    Ok(Calibration {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        classifier_labels: row_argmax(&prior),
        labels: row_argmax(&probabilities),
        probabilities,
    })
}

/// Share of uncertain samples that distillation corrected: wrong top candidate
/// before, true top candidate after, over uncertain samples whose list holds
/// the true label. Sets without a true label are skipped.
pub fn corrected_uncertain_ratio(
    initial: &[CandidateSet],
    refined: &[CandidateSet],
    true_labels: &[Option<usize>],
) -> Result<f64> {
    if initial.len() != refined.len() || initial.len() != true_labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} initial sets, {} refined sets, {} labels",
            initial.len(),
            refined.len(),
            true_labels.len()
        )));
    }
    let mut corrected = 0usize;
    let mut eligible = 0usize;
    for ((before, after), truth) in initial.iter().zip(refined).zip(true_labels) {
        let Some(y) = *truth else { continue };
        if before.kind != CandidateKind::Uncertain || !before.contains(y) {
            continue;
        }
        eligible += 1;
        if before.top_label() != y && after.top_label() == y {
            corrected += 1;
        }
    }
    Ok(if eligible == 0 {
        0.0
    } else {
        corrected as f64 / eligible as f64
    })
}

/// Predictions from one seed's run on the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub classifier_labels: Vec<usize>,
    pub calibrated_labels: Vec<usize>,
    pub corrected_uncertain_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub accuracy: f64,
    pub classifier_accuracy: f64,
    /// Test samples the classifier got wrong and calibration got right, as a fraction.
    pub corrected_vs_classifier: f64,
    /// Test samples the classifier got right and calibration got wrong, as a fraction.
    pub broken_vs_classifier: f64,
    /// Test samples whose noisy label is wrong and calibration is right; absent
    /// when the test split carries no noisy labels.
    pub corrected_vs_noisy: Option<f64>,
    pub corrected_uncertain_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_samples: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub classifier_accuracy_mean: f64,
    pub classifier_accuracy_std: f64,
    pub corrected_vs_classifier: f64,
    pub corrected_vs_noisy: Option<f64>,
    pub corrected_uncertain_ratio: Option<f64>,
    /// True versus classifier labels on the test split, first seed.
    pub transition_before: TransitionMatrix,
    /// True versus calibrated labels on the test split, first seed.
    pub transition_after: TransitionMatrix,
    /// True versus noisy labels on the test split, when present.
    pub transition_noisy: Option<TransitionMatrix>,
    pub class_names: Vec<String>,
    pub per_seed: Vec<SeedResult>,
}

fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

fn fraction(n: usize, mut hit: impl FnMut(usize) -> bool) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (0..n).filter(|&i| hit(i)).count() as f64 / n as f64
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    v.filter(|v| !v.is_empty()).map(|v| mean_std(&v).0)
}

/// Scores each seed's test predictions against the clean test labels.
pub fn evaluate(dataset: &Dataset, runs: &[SeedRun]) -> Result<EvalReport> {
    let test: Vec<&SampleRecord> = dataset.split(Split::Test).collect();
    if test.is_empty() {
        return Err(Error::NoTrueLabels);
    }
    let truth: Vec<usize> = test
        .iter()
        .map(|r| r.true_label.ok_or(Error::NoTrueLabels))
        .collect::<Result<_>>()?;
    let noisy: Option<Vec<usize>> = test.iter().map(|r| r.noisy_label).collect();
    if runs.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one seed run".into()));
    }
    let n = truth.len();
    let classes = dataset.num_classes();
    let mut per_seed = Vec::with_capacity(runs.len());
    for run in runs {
        for labels in [&run.classifier_labels, &run.calibrated_labels] {
            if labels.len() != n {
                return Err(Error::LengthMismatch {
                    left: labels.len(),
                    right: n,
                });
            }
        }
        let (cls, cal) = (&run.classifier_labels, &run.calibrated_labels);
        per_seed.push(SeedResult {
            seed: run.seed,
            accuracy: accuracy(cal, &truth),
            classifier_accuracy: accuracy(cls, &truth),
            corrected_vs_classifier: fraction(n, |i| cls[i] != truth[i] && cal[i] == truth[i]),
            broken_vs_classifier: fraction(n, |i| cls[i] == truth[i] && cal[i] != truth[i]),
            corrected_vs_noisy: noisy
                .as_ref()
                .map(|y| fraction(n, |i| y[i] != truth[i] && cal[i] == truth[i])),
            corrected_uncertain_ratio: run.corrected_uncertain_ratio,
        });
    }
    let acc: Vec<f64> = per_seed.iter().map(|s| s.accuracy).collect();
    let cls_acc: Vec<f64> = per_seed.iter().map(|s| s.classifier_accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&acc);
    let (classifier_accuracy_mean, classifier_accuracy_std) = mean_std(&cls_acc);
    Ok(EvalReport {
        test_samples: n,
        accuracy_mean,
        accuracy_std,
        classifier_accuracy_mean,
        classifier_accuracy_std,
        corrected_vs_classifier: mean_std(&per_seed.iter().map(|s| s.corrected_vs_classifier).collect::<Vec<_>>()).0,
        corrected_vs_noisy: mean_of(per_seed.iter().map(|s| s.corrected_vs_noisy)),
        corrected_uncertain_ratio: mean_of(per_seed.iter().map(|s| s.corrected_uncertain_ratio)),
        transition_before: empirical_transition_matrix(&truth, &runs[0].classifier_labels, classes)?,
        transition_after: empirical_transition_matrix(&truth, &runs[0].calibrated_labels, classes)?,
        transition_noisy: noisy
            .as_ref()
            .map(|y| empirical_transition_matrix(&truth, y, classes))
            .transpose()?,
        class_names: dataset.manifest.class_names.clone(),
        per_seed,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let pct = |v: f64| format!("{:.2}", 100.0 * v);
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), pct);
        let mut out = String::new();
        let _ = writeln!(out, "test samples          {}", self.test_samples);
        let _ = writeln!(
            out,
            "calibrated accuracy   {} +- {}",
            pct(self.accuracy_mean),
            pct(self.accuracy_std)
        );
        let _ = writeln!(
            out,
            "classifier accuracy   {} +- {}",
            pct(self.classifier_accuracy_mean),
            pct(self.classifier_accuracy_std)
        );
        let _ = writeln!(out, "corrected vs model    {}", pct(self.corrected_vs_classifier));
        let _ = writeln!(out, "corrected vs noisy    {}", opt(self.corrected_vs_noisy));
        let _ = writeln!(out, "uncertain corrected   {}", opt(self.corrected_uncertain_ratio));
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "seed", "accuracy", "classifier", "corrected", "broken", "uncertain"
        );
        for s in &self.per_seed {
            let _ = writeln!(
                out,
                "{:>6} {:>10} {:>10} {:>10} {:>10} {:>10}",
                s.seed,
                pct(s.accuracy),
                pct(s.classifier_accuracy),
                pct(s.corrected_vs_classifier),
                pct(s.broken_vs_classifier),
                opt(s.corrected_uncertain_ratio)
            );
        }
        out
    }

    /// Writes `report.json`, `report.txt` and one CSV grid per transition matrix.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut files = vec![
            ("report.json".to_string(), self.to_json()? + "\n"),
            ("report.txt".to_string(), self.to_text()),
            (
                "transition_before.csv".to_string(),
                self.transition_before.to_csv(&self.class_names),
            ),
            (
                "transition_after.csv".to_string(),
                self.transition_after.to_csv(&self.class_names),
            ),
        ];
        if let Some(m) = &self.transition_noisy {
            files.push(("transition_noisy.csv".to_string(), m.to_csv(&self.class_names)));
        }
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

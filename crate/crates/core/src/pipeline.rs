//! End-to-end pipeline: ingest, optional noise, classifier with dynamics,
//! candidate retrieval, diffusion distillation, calibration and evaluation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{
    calibrate, corrected_uncertain_ratio, evaluate, Calibration, CalibrationConfig, EvalReport, SeedRun,
};
use crate::candidates::{retrieve, CandidateSet, Retrieval, RetrievalConfig};
use crate::classifier::{train_with_dynamics, ClassifierModel, TrainConfig};
use crate::dataset::{load_dataset, resolve_missing_labels, save_dataset, write_jsonl, Dataset, SampleRecord, Split};
use crate::diffusion::distill::{
    distill_train, DiffusionModel, DistillConfig, DistillOutcome, RoundStats, ValidationData,
};
use crate::error::{Error, Result};
use crate::math::argmax;
use crate::noise::{inject, NoiseKind, NoiseSpec};
use crate::synth::{generate_mixture, MixtureConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Dataset directory; ignored when `synthetic` is set.
    pub dataset: Option<String>,
    pub synthetic: Option<MixtureConfig>,
    /// Noise injected into the train and valid labels after ingestion.
    pub noise: Option<NoiseSpec>,
    /// Seed for assigning labels to records whose noisy label is missing.
    pub missing_label_seed: u64,
    pub classifier: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub distill: DistillConfig,
    pub calibration: CalibrationConfig,
    pub output: Option<String>,
}

impl PipelineConfig {
    /// Desk-scale benchmark: a four-class Gaussian mixture with 40% symmetric
    /// training noise, a small hidden-layer classifier and 200 diffusion steps.
    pub fn synthetic_benchmark() -> Self {
        Self {
            synthetic: Some(MixtureConfig::default()),
            noise: Some(NoiseSpec {
                kind: NoiseKind::Symmetric,
                ratio: 0.4,
                seed: 7,
            }),
            classifier: TrainConfig {
                hidden_units: 256,
                batch_size: 16,
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            distill: DistillConfig {
                train_timesteps: 200,
                ..DistillConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() && self.synthetic.is_none() {
            return Err(Error::InvalidConfig(
                "either `dataset` or `synthetic` must be set".into(),
            ));
        }
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.classifier.validate()?;
        self.retrieval.validate()?;
        self.distill.validate()?;
        self.calibration.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// First 16 hex digits of the SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("configs serialize");
    let digest = Sha256::digest(text.as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// JSON Lines stage events on standard error.
#[derive(Debug, Clone, Copy)]
pub struct StageLog {
    pub enabled: bool,
}

impl StageLog {
    pub fn event(&self, stage: &str, seed: Option<u64>, event: &str, elapsed: Option<f64>) {
        if !self.enabled {
            return;
        }
        let line = serde_json::json!({
            "stage": stage,
            "seed": seed,
            "event": event,
            "elapsed_s": elapsed,
        });
        eprintln!("{line}");
    }

    /// Runs `f` between start and done/failed events; errors are tagged with `stage`.
    pub fn run<T>(&self, stage: &str, seed: Option<u64>, f: impl FnOnce() -> Result<T>) -> Result<T> {
        self.event(stage, seed, "start", None);
        let start = Instant::now();
        let out = f().map_err(|e| Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        });
        let event = if out.is_ok() { "done" } else { "failed" };
        self.event(stage, seed, event, Some(start.elapsed().as_secs_f64()));
        out
    }
}

/// Loads or generates the dataset, injects noise and resolves missing labels.
pub fn prepare_dataset(config: &PipelineConfig) -> Result<Dataset> {
    let mut dataset = match (&config.synthetic, &config.dataset) {
        (Some(s), _) => generate_mixture(s)?,
        (None, Some(dir)) => load_dataset(dir)?,
        (None, None) => return Err(Error::InvalidConfig("no dataset source".into())),
    };
    if let Some(spec) = &config.noise {
        apply_noise(&mut dataset, spec)?;
    }
    let records = std::mem::take(&mut dataset.records);
    dataset.records = resolve_missing_labels(records, dataset.manifest.num_classes, config.missing_label_seed);
    dataset.validate()?;
    Ok(dataset)
}

/// Replaces the train and valid noisy labels with corrupted copies of the
/// clean labels. Records without a true label treat their current label as clean
/// and keep it as the true label.
pub fn apply_noise(dataset: &mut Dataset, spec: &NoiseSpec) -> Result<()> {
    let idx: Vec<usize> = (0..dataset.records.len())
        .filter(|&i| dataset.records[i].split != Split::Test)
        .collect();
    let clean: Vec<usize> = idx
        .iter()
        .map(|&i| {
            let r = &dataset.records[i];
            r.true_label.or(r.noisy_label).ok_or_else(|| {
                Error::InvariantViolation(format!("record `{}` has neither a true nor a noisy label", r.id))
            })
        })
        .collect::<Result<_>>()?;
    let features: Vec<Vec<f64>> = idx.iter().map(|&i| dataset.records[i].features.clone()).collect();
    let noisy = inject(&features, &clean, dataset.manifest.num_classes, spec)?;
    for ((&i, &y), &n) in idx.iter().zip(&clean).zip(&noisy) {
        dataset.records[i].true_label = Some(y);
        dataset.records[i].noisy_label = Some(n);
    }
    Ok(())
}

/// Copy of `dataset` carrying the recorded trajectories.
pub fn with_dynamics(dataset: &Dataset, dynamics: Vec<crate::dataset::DynamicsRecord>) -> Dataset {
    let mut out = dataset.clone();
    out.manifest.dynamics_epochs = dynamics.first().map_or(0, |d| d.trajectory.len());
    out.dynamics = Some(dynamics);
    out
}

/// Labels the posterior is conditioned on for validation: the classifier's
/// predictions when available, else the last recorded epoch's argmax.
fn condition_labels(
    records: &[&SampleRecord],
    dynamics: &[&crate::dataset::DynamicsRecord],
    classifier: Option<&ClassifierModel>,
) -> Vec<usize> {
    match classifier {
        Some(model) => model.predict_labels(&records.iter().map(|r| r.features.clone()).collect::<Vec<_>>()),
        None => dynamics
            .iter()
            .map(|d| argmax(d.trajectory.last().map_or(&[][..], Vec::as_slice)))
            .collect(),
    }
}

/// Trains the diffusion stage on candidate sets matched to the training records
/// of `dataset` by id.
pub fn train_diffusion_stage(
    dataset: &Dataset,
    sets: &[CandidateSet],
    classifier: Option<&ClassifierModel>,
    config: &DistillConfig,
) -> Result<DistillOutcome> {
    let dynamics = dataset.aligned_dynamics()?;
    let by_id: std::collections::HashMap<&str, usize> = dataset
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let rows: Vec<usize> = sets
        .iter()
        .map(|s| {
            by_id
                .get(s.sample_id.as_str())
                .copied()
                .ok_or_else(|| Error::OrphanDynamics(s.sample_id.clone()))
        })
        .collect::<Result<_>>()?;
    let records: Vec<&SampleRecord> = rows.iter().map(|&i| &dataset.records[i]).collect();
    let dyn_rows: Vec<_> = rows.iter().map(|&i| dynamics[i]).collect();
    let cond = config.conditioning.matrix(&records, &dyn_rows);

    let valid_idx = dataset.split_indices(Split::Valid);
    let validation = if config.select_by_validation && !valid_idx.is_empty() {
        let v_records: Vec<&SampleRecord> = valid_idx.iter().map(|&i| &dataset.records[i]).collect();
        let v_dyn: Vec<_> = valid_idx.iter().map(|&i| dynamics[i]).collect();
        let noisy_labels = v_records
            .iter()
            .map(|r| {
                r.noisy_label
                    .ok_or_else(|| Error::InvariantViolation(format!("record `{}` has an unresolved label", r.id)))
            })
            .collect::<Result<_>>()?;
        Some(ValidationData {
            cond: config.conditioning.matrix(&v_records, &v_dyn),
            condition_labels: condition_labels(&v_records, &v_dyn, classifier),
            noisy_labels,
        })
    } else {
        None
    };
    distill_train(sets, &cond, dataset.num_classes(), config, validation.as_ref())
}

/// Persisted output of the diffusion stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionArtifact {
    pub model: DiffusionModel,
    pub initial_candidates: Vec<CandidateSet>,
    pub refined_candidates: Vec<CandidateSet>,
    pub rounds: Vec<RoundStats>,
}

/// Everything one seed's run produced.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub classifier: ClassifierModel,
    pub dataset: Dataset,
    pub retrieval: Retrieval,
    pub diffusion: DiffusionArtifact,
    pub calibration: Calibration,
    pub corrected_uncertain_ratio: Option<f64>,
}

impl SeedArtifacts {
    pub fn seed_run(&self) -> SeedRun {
        SeedRun {
            seed: self.seed,
            classifier_labels: self.calibration.classifier_labels.clone(),
            calibrated_labels: self.calibration.labels.clone(),
            corrected_uncertain_ratio: self.corrected_uncertain_ratio,
        }
    }

    /// Noisy-validation accuracy of the selected diffusion epoch, if recorded.
    pub fn validation_accuracy(&self) -> Option<f64> {
        let m = &self.diffusion.model;
        m.epoch_valid_accuracy.get(m.selected_epoch).copied()
    }
}

/// Runs every stage after ingestion for one seed.
pub fn run_seed(dataset: &Dataset, config: &PipelineConfig, seed: u64, log: StageLog) -> Result<SeedArtifacts> {
    let s = Some(seed);
    let classifier_cfg = TrainConfig {
        seed,
        ..config.classifier.clone()
    };
    let trained = log.run("train-classifier", s, || train_with_dynamics(dataset, &classifier_cfg))?;
    let dataset = with_dynamics(dataset, trained.dynamics);
    let classifier = trained.model;

    let retrieval = log.run("retrieve-candidates", s, || retrieve(&dataset, &config.retrieval))?;

    let distill_cfg = DistillConfig {
        seed,
        ..config.distill.clone()
    };
    let outcome = log.run("train-diffusion", s, || {
        train_diffusion_stage(&dataset, &retrieval.sets, Some(&classifier), &distill_cfg)
    })?;

    let calibration = log.run("calibrate", s, || {
        calibrate(
            &dataset,
            &classifier,
            &outcome.model,
            Split::Test,
            config.calibration.mode,
            seed,
        )
    })?;

    let truth: Vec<Option<usize>> = retrieval
        .indices
        .iter()
        .map(|&i| dataset.records[i].true_label)
        .collect();
    let ratio = if truth.iter().any(Option::is_some) {
        Some(corrected_uncertain_ratio(&retrieval.sets, &outcome.refined, &truth)?)
    } else {
        None
    };
    Ok(SeedArtifacts {
        seed,
        classifier,
        diffusion: DiffusionArtifact {
            model: outcome.model,
            initial_candidates: retrieval.sets.clone(),
            refined_candidates: outcome.refined,
            rounds: outcome.rounds,
        },
        dataset,
        retrieval,
        calibration,
        corrected_uncertain_ratio: ratio,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Persist every stage under this directory.
    pub out_dir: Option<PathBuf>,
    pub log: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub config_hash: String,
    pub report: EvalReport,
    pub seeds: Vec<SeedArtifacts>,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    config_hash: &'a str,
    seeds: &'a [u64],
    config: &'a PipelineConfig,
}

#[derive(Serialize)]
struct StageManifest<'a> {
    stage: &'a str,
    config_hash: &'a str,
    seed: Option<u64>,
}

/// Writes `artifact.json` identifying the stage, config hash and seed behind a directory.
pub fn write_stage_manifest(dir: &Path, stage: &str, config_hash: &str, seed: Option<u64>) -> Result<()> {
    write_json(
        &dir.join("artifact.json"),
        &StageManifest {
            stage,
            config_hash,
            seed,
        },
    )
}

/// One calibrated test prediction as persisted by the calibrate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub classifier_label: usize,
    pub label: usize,
    pub probabilities: Vec<f64>,
}

pub fn prediction_records(c: &Calibration) -> Vec<PredictionRecord> {
    c.ids
        .iter()
        .enumerate()
        .map(|(i, id)| PredictionRecord {
            id: id.clone(),
            classifier_label: c.classifier_labels[i],
            label: c.labels[i],
            probabilities: c.probabilities.row(i).to_vec(),
        })
        .collect()
}

pub fn calibration_from_records(records: &[PredictionRecord]) -> Calibration {
    let classes = records.first().map_or(0, |r| r.probabilities.len());
    Calibration {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        classifier_labels: records.iter().map(|r| r.classifier_label).collect(),
        labels: records.iter().map(|r| r.label).collect(),
        probabilities: Array2::from_shape_vec(
            (records.len(), classes),
            records.iter().flat_map(|r| r.probabilities.iter().copied()).collect(),
        )
        .expect("rectangular probabilities"),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn stage_dir(root: &Path, stage: &str, hash: &str, seed: Option<u64>) -> PathBuf {
    let dir = root.join(format!("{stage}-{hash}"));
    match seed {
        Some(s) => dir.join(format!("seed-{s}")),
        None => dir,
    }
}

fn persist_seed(root: &Path, hash: &str, a: &SeedArtifacts) -> Result<()> {
    let s = Some(a.seed);
    let stamp = |dir: &Path, stage: &str| write_stage_manifest(dir, stage, hash, s);
    let dir = stage_dir(root, "train-classifier", hash, s);
    save_dataset(&a.dataset, dir.join("dataset"))?;
    write_json(&dir.join("classifier.json"), &a.classifier)?;
    stamp(&dir, "train-classifier")?;

    let dir = stage_dir(root, "retrieve-candidates", hash, s);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_jsonl(&dir.join("candidates.jsonl"), &a.retrieval.sets)?;
    stamp(&dir, "retrieve-candidates")?;

    let dir = stage_dir(root, "train-diffusion", hash, s);
    write_json(&dir.join("diffusion.json"), &a.diffusion)?;
    stamp(&dir, "train-diffusion")?;

    let dir = stage_dir(root, "calibrate", hash, s);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_jsonl(&dir.join("predictions.jsonl"), &prediction_records(&a.calibration))?;
    stamp(&dir, "calibrate")
}

/// Runs the whole pipeline for every configured seed and evaluates on the test split.
pub fn run_pipeline(config: &PipelineConfig, options: &RunOptions) -> Result<PipelineRun> {
    config.validate()?;
    let log = StageLog { enabled: options.log };
    let hash = config.hash();
    let root = options
        .out_dir
        .clone()
        .or_else(|| config.output.clone().map(PathBuf::from));
    if let Some(root) = &root {
        write_json(
            &root.join("run.json"),
            &RunManifest {
                config_hash: &hash,
                seeds: &config.calibration.seeds,
                config,
            },
        )?;
    }
    let dataset = log.run("ingest", None, || prepare_dataset(config))?;
    if let Some(root) = &root {
        let dir = stage_dir(root, "ingest", &hash, None);
        save_dataset(&dataset, &dir)?;
    }
    let mut seeds = Vec::with_capacity(config.calibration.seeds.len());
    for &seed in &config.calibration.seeds {
        let artifacts = run_seed(&dataset, config, seed, log)?;
        if let Some(root) = &root {
            persist_seed(root, &hash, &artifacts)?;
        }
        seeds.push(artifacts);
    }
    let runs: Vec<SeedRun> = seeds.iter().map(SeedArtifacts::seed_run).collect();
    let report = log.run("evaluate", None, || evaluate(&dataset, &runs))?;
    if let Some(root) = &root {
        let dir = stage_dir(root, "evaluate", &hash, None);
        report.write(&dir)?;
        if let Some(path) = &config.calibration.report_path {
            write_json(Path::new(path), &report)?;
        }
    }
    Ok(PipelineRun {
        config_hash: hash,
        report,
        seeds,
    })
}

/// Hyperparameter ranges searched by the grid driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub warmup_epochs: Vec<usize>,
    pub eval_rounds: Vec<usize>,
    #[serde(rename = "K")]
    pub k: Vec<usize>,
    pub train_timesteps: Vec<usize>,
    pub inference_timesteps: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lambda: vec![0.7, 0.8, 0.9, 1.0],
            gamma: vec![0.4, 0.6, 0.8],
            warmup_epochs: (1..=6).collect(),
            eval_rounds: vec![2, 4, 6, 8],
            k: vec![10, 20, 30],
            train_timesteps: vec![400, 500, 600, 700, 800],
            inference_timesteps: vec![10, 20, 50, 100],
            learning_rate: vec![1e-3, 6e-4, 3e-4, 1e-4],
        }
    }
}

/// One grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub gamma: f64,
    pub warmup_epochs: usize,
    pub eval_rounds: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub train_timesteps: usize,
    pub inference_timesteps: usize,
    pub learning_rate: f64,
}

impl GridPoint {
    pub fn apply(&self, base: &PipelineConfig) -> PipelineConfig {
        let mut c = base.clone();
        c.retrieval.lambda = self.lambda;
        c.retrieval.gamma = self.gamma;
        c.retrieval.k = self.k;
        c.distill.warmup_epochs = self.warmup_epochs;
        c.distill.eval_rounds = self.eval_rounds;
        c.distill.train_timesteps = self.train_timesteps;
        c.distill.inference_timesteps = self.inference_timesteps;
        c.distill.learning_rate = self.learning_rate;
        c
    }
}

impl GridSpec {
    /// Cartesian product in a fixed order (last field varies fastest).
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &lambda in &self.lambda {
            for &gamma in &self.gamma {
                for &warmup_epochs in &self.warmup_epochs {
                    for &eval_rounds in &self.eval_rounds {
                        for &k in &self.k {
                            for &train_timesteps in &self.train_timesteps {
                                for &inference_timesteps in &self.inference_timesteps {
                                    for &learning_rate in &self.learning_rate {
                                        out.push(GridPoint {
                                            lambda,
                                            gamma,
                                            warmup_epochs,
                                            eval_rounds,
                                            k,
                                            train_timesteps,
                                            inference_timesteps,
                                            learning_rate,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub point: GridPoint,
    pub config_hash: String,
    /// Mean noisy-validation accuracy of the selected diffusion epochs; the
    /// selection criterion.
    pub validation_accuracy: Option<f64>,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Runs every grid point (optionally only the first `limit`) across `workers`
/// threads. Results come back in grid order regardless of scheduling.
pub fn run_grid(
    base: &PipelineConfig,
    spec: &GridSpec,
    limit: Option<usize>,
    workers: usize,
    out_dir: Option<&Path>,
) -> Vec<GridResult> {
    let mut points = spec.points();
    if let Some(n) = limit {
        points.truncate(n);
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<GridResult>>> = Mutex::new(vec![None; points.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(point) = points.get(i) else { break };
                let config = point.apply(base);
                let hash = config.hash();
                let options = RunOptions {
                    out_dir: out_dir.map(|d| d.join(format!("point-{hash}"))),
                    log: false,
                };
                let result = match config.validate().and_then(|_| run_pipeline(&config, &options)) {
                    Ok(run) => {
                        let v: Option<Vec<f64>> = run.seeds.iter().map(SeedArtifacts::validation_accuracy).collect();
                        GridResult {
                            point: *point,
                            config_hash: hash,
                            validation_accuracy: v.map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64),
                            report: Some(run.report),
                            error: None,
                        }
                    }
                    Err(e) => GridResult {
                        point: *point,
                        config_hash: hash,
                        validation_accuracy: None,
                        report: None,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().expect("no poisoned workers")[i] = Some(result);
            });
        }
    });
    results
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every point processed"))
        .collect()
}

/// Index of the result with the best validation accuracy (first on ties).
pub fn best_grid_result(results: &[GridResult]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(v) = r.validation_accuracy {
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setting() {
        let c = PipelineConfig::default();
        assert_eq!(c.retrieval.sigma, 0.5);
        assert_eq!(c.retrieval.lambda, 0.9);
        assert_eq!(c.retrieval.gamma, 0.8);
        assert_eq!(c.retrieval.k, 10);
        assert_eq!(c.distill.warmup_epochs, 2);
        assert_eq!(c.distill.eval_rounds, 2);
        assert_eq!(c.distill.branches, 3);
        assert_eq!(c.distill.total_epochs, 10);
        assert_eq!(c.distill.train_timesteps, 800);
        assert_eq!(c.distill.inference_timesteps, 10);
        assert_eq!(c.distill.batch_size, 128);
        assert_eq!(c.distill.learning_rate, 5e-4);
        assert_eq!(c.classifier.epochs, 10);
        assert_eq!(c.classifier.learning_rate, 5e-5);
    }

    #[test]
    fn grid_covers_the_search_ranges() {
        let spec = GridSpec::default();
        assert_eq!(spec.lambda, vec![0.7, 0.8, 0.9, 1.0]);
        assert_eq!(spec.gamma, vec![0.4, 0.6, 0.8]);
        assert_eq!(spec.warmup_epochs, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(spec.eval_rounds, vec![2, 4, 6, 8]);
        assert_eq!(spec.k, vec![10, 20, 30]);
        assert_eq!(spec.points().len(), 4 * 3 * 6 * 4 * 3 * 5 * 4 * 4);
    }

    #[test]
    fn hash_tracks_content() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.retrieval.k = 20;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn config_needs_a_source() {
        assert!(PipelineConfig::default().validate().is_err());
        let c = PipelineConfig {
            synthetic: Some(MixtureConfig::default()),
            ..PipelineConfig::default()
        };
        c.validate().unwrap();
    }
}

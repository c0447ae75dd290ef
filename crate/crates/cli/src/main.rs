use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noisycal::calibrate::{calibrate, corrected_uncertain_ratio, evaluate, CalibrationMode, EvalReport, SeedRun};
use noisycal::candidates::{retrieve, CandidateKind, CandidateSet};
use noisycal::classifier::{train_with_dynamics, ClassifierModel};
use noisycal::dataset::{load_dataset, read_jsonl, save_dataset, write_jsonl, Split};
use noisycal::noise::{noise_ratio, NoiseKind, NoiseSpec};
use noisycal::pipeline::{
    apply_noise, best_grid_result, prediction_records, prepare_dataset, read_json, run_grid, run_pipeline,
    train_diffusion_stage, with_dynamics, write_json, write_stage_manifest, DiffusionArtifact, GridSpec,
    PipelineConfig, PredictionRecord, RunOptions, StageLog,
};
use noisycal::synth::{generate_mixture, MixtureConfig};
use noisycal::{Error, Result};

#[derive(Parser)]
#[command(name = "noisycal", version, about = "Calibrate classifiers trained on noisy labels")]
struct Cli {
    /// Suppress JSON Lines stage events on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline config (JSON); stage commands read their own section.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled Gaussian-mixture dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        valid: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
        #[arg(long)]
        components: Option<usize>,
        #[arg(long)]
        separation: Option<f64>,
        #[arg(long)]
        spread: Option<f64>,
    },
    /// Validate a dataset, apply configured noise and resolve missing labels.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; overrides the config's source.
        #[arg(long = "in")]
        input: Option<PathBuf>,
    },
    /// Corrupt train and valid labels; true labels keep the originals.
    Noise {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: Kind,
        #[arg(long)]
        ratio: f64,
    },
    /// Train the classifier ensemble and record training dynamics.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Mark noisy samples and retrieve candidate labels from neighbours.
    RetrieveCandidates {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with dynamics.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long = "K")]
        k: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Train the label diffusion model and refine candidate weights.
    TrainDiffusion {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with dynamics.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// Classifier used for validation conditioning labels.
        #[arg(long)]
        classifier: Option<PathBuf>,
    },
    /// Replace classifier predictions with the diffusion posterior.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        diffusion: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long, default_value = "test")]
        split: SplitArg,
    },
    /// Score calibrated predictions against clean test labels.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long = "in")]
        input: PathBuf,
        /// One predictions file per seed.
        #[arg(long, required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Diffusion artifacts aligned with `--predictions`, for the corrected-uncertain ratio.
        #[arg(long, num_args = 1..)]
        diffusion: Vec<PathBuf>,
    },
    /// Regenerate tables and CSV grids from a stored report.
    Report {
        /// Run directory, evaluate directory or report.json.
        #[arg(long)]
        run: PathBuf,
    },
    /// Search the hyperparameter grid, selecting by noisy validation accuracy.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Grid ranges (JSON); defaults to the standard search ranges.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run every stage for every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
        /// Use the built-in synthetic benchmark instead of a config file.
        #[arg(long)]
        benchmark: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sn,
    Asn,
    Idn,
}

impl From<Kind> for NoiseKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Sn => NoiseKind::Symmetric,
            Kind::Asn => NoiseKind::Asymmetric,
            Kind::Idn => NoiseKind::InstanceDependent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Argmax,
    Marginal,
}

impl From<Mode> for CalibrationMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Argmax => CalibrationMode::ArgmaxCondition,
            Mode::Marginal => CalibrationMode::MarginalCondition,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Reads a config without requiring a dataset source; stage commands take
/// their data from `--in`.
fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => read_json(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = StageLog { enabled: !cli.quiet };
    match dispatch(cli.command, log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command, log: StageLog) -> Result<()> {
    match command {
        Command::Synth {
            common,
            classes,
            dim,
            train,
            valid,
            test,
            components,
            separation,
            spread,
        } => {
            let mut m = load_config(common.config.as_deref())?.synthetic.unwrap_or_default();
            m = MixtureConfig {
                classes: classes.unwrap_or(m.classes),
                feature_dim: dim.unwrap_or(m.feature_dim),
                train: train.unwrap_or(m.train),
                valid: valid.unwrap_or(m.valid),
                test: test.unwrap_or(m.test),
                components: components.unwrap_or(m.components),
                separation: separation.unwrap_or(m.separation),
                spread: spread.unwrap_or(m.spread),
                seed: common.seed.unwrap_or(m.seed),
            };
            let ds = log.run("synth", Some(m.seed), || generate_mixture(&m))?;
            save_dataset(&ds, &common.out)?;
            write_stage_manifest(&common.out, "synth", &noisycal::pipeline::config_hash(&m), Some(m.seed))
        }
        Command::Ingest { common, input } => {
            let mut config = load_config(common.config.as_deref())?;
            if let Some(dir) = input {
                config.dataset = Some(dir.display().to_string());
                config.synthetic = None;
            }
            if let Some(seed) = common.seed {
                config.missing_label_seed = seed;
            }
            config.validate()?;
            let ds = log.run("ingest", None, || prepare_dataset(&config))?;
            save_dataset(&ds, &common.out)?;
            write_stage_manifest(&common.out, "ingest", &config.hash(), Some(config.missing_label_seed))
        }
        Command::Noise {
            common,
            input,
            kind,
            ratio,
        } => {
            let spec = NoiseSpec {
                kind: kind.into(),
                ratio,
                seed: common.seed.unwrap_or(0),
            };
            let mut ds = load_dataset(&input)?;
            log.run("noise", Some(spec.seed), || apply_noise(&mut ds, &spec))?;
            let (truth, noisy): (Vec<usize>, Vec<usize>) = ds
                .records
                .iter()
                .filter(|r| r.split != Split::Test)
                .filter_map(|r| Some((r.true_label?, r.noisy_label?)))
                .unzip();
            save_dataset(&ds, &common.out)?;
            write_stage_manifest(
                &common.out,
                "noise",
                &noisycal::pipeline::config_hash(&spec),
                Some(spec.seed),
            )?;
            println!("realized noise ratio {:.4}", noise_ratio(&truth, &noisy)?);
            Ok(())
        }
        Command::TrainClassifier { common, input } => {
            let config = load_config(common.config.as_deref())?;
            let mut tc = config.classifier.clone();
            if let Some(seed) = common.seed {
                tc.seed = seed;
            }
            let ds = load_dataset(&input)?;
            let trained = log.run("train-classifier", Some(tc.seed), || train_with_dynamics(&ds, &tc))?;
            let ds = with_dynamics(&ds, trained.dynamics);
            save_dataset(&ds, common.out.join("dataset"))?;
            write_json(&common.out.join("classifier.json"), &trained.model)?;
            write_stage_manifest(
                &common.out,
                "train-classifier",
                &noisycal::pipeline::config_hash(&tc),
                Some(tc.seed),
            )
        }
        Command::RetrieveCandidates {
            common,
            input,
            lambda,
            gamma,
            k,
            sigma,
        } => {
            let mut rc = load_config(common.config.as_deref())?.retrieval;
            rc.lambda = lambda.unwrap_or(rc.lambda);
            rc.gamma = gamma.unwrap_or(rc.gamma);
            rc.k = k.unwrap_or(rc.k);
            rc.sigma = sigma.unwrap_or(rc.sigma);
            let ds = load_dataset(&input)?;
            let retrieval = log.run("retrieve-candidates", None, || retrieve(&ds, &rc))?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            write_jsonl(&common.out.join("candidates.jsonl"), &retrieval.sets)?;
            write_stage_manifest(
                &common.out,
                "retrieve-candidates",
                &noisycal::pipeline::config_hash(&rc),
                None,
            )?;
            let uncertain = retrieval
                .sets
                .iter()
                .filter(|s| s.kind == CandidateKind::Uncertain)
                .count();
            println!(
                "{} candidate sets, {} uncertain, {} marked noisy",
                retrieval.sets.len(),
                uncertain,
                retrieval.noisy_mask.iter().filter(|&&m| m).count()
            );
            Ok(())
        }
        Command::TrainDiffusion {
            common,
            input,
            candidates,
            classifier,
        } => {
            let mut dc = load_config(common.config.as_deref())?.distill;
            if let Some(seed) = common.seed {
                dc.seed = seed;
            }
            let ds = load_dataset(&input)?;
            let sets: Vec<CandidateSet> = read_jsonl(&candidates)?;
            let model: Option<ClassifierModel> = classifier.as_deref().map(read_json).transpose()?;
            let outcome = log.run("train-diffusion", Some(dc.seed), || {
                train_diffusion_stage(&ds, &sets, model.as_ref(), &dc)
            })?;
            let artifact = DiffusionArtifact {
                model: outcome.model,
                initial_candidates: sets,
                refined_candidates: outcome.refined,
                rounds: outcome.rounds,
            };
            write_json(&common.out.join("diffusion.json"), &artifact)?;
            write_stage_manifest(
                &common.out,
                "train-diffusion",
                &noisycal::pipeline::config_hash(&dc),
                Some(dc.seed),
            )
        }
        Command::Calibrate {
            common,
            input,
            classifier,
            diffusion,
            mode,
            split,
        } => {
            let config = load_config(common.config.as_deref())?;
            let mode = mode.map_or(config.calibration.mode, Into::into);
            let seed = common.seed.unwrap_or(0);
            let ds = load_dataset(&input)?;
            let model: ClassifierModel = read_json(&classifier)?;
            let artifact: DiffusionArtifact = read_json(&diffusion)?;
            let c = log.run("calibrate", Some(seed), || {
                calibrate(&ds, &model, &artifact.model, split.into(), mode, seed)
            })?;
            std::fs::create_dir_all(&common.out).map_err(|e| Error::io(&common.out, e))?;
            write_jsonl(&common.out.join("predictions.jsonl"), &prediction_records(&c))?;
            write_stage_manifest(
                &common.out,
                "calibrate",
                &noisycal::pipeline::config_hash(&mode),
                Some(seed),
            )
        }
        Command::Evaluate {
            common,
            input,
            predictions,
            diffusion,
        } => {
            let ds = load_dataset(&input)?;
            if !diffusion.is_empty() && diffusion.len() != predictions.len() {
                return Err(Error::LengthMismatch {
                    left: diffusion.len(),
                    right: predictions.len(),
                });
            }
            let test_ids: Vec<&str> = ds.split(Split::Test).map(|r| r.id.as_str()).collect();
            let by_id: std::collections::HashMap<&str, Option<usize>> =
                ds.records.iter().map(|r| (r.id.as_str(), r.true_label)).collect();
            let first_seed = common.seed.unwrap_or(0);
            let mut runs = Vec::with_capacity(predictions.len());
            for (i, path) in predictions.iter().enumerate() {
                let records: Vec<PredictionRecord> = read_jsonl(path)?;
                if records.iter().map(|r| r.id.as_str()).ne(test_ids.iter().copied()) {
                    return Err(Error::InvalidConfig(format!(
                        "{} does not list the test split in dataset order",
                        path.display()
                    )));
                }
                let ratio = match diffusion.get(i) {
                    Some(p) => {
                        let a: DiffusionArtifact = read_json(p)?;
                        let truth: Vec<Option<usize>> = a
                            .initial_candidates
                            .iter()
                            .map(|s| by_id.get(s.sample_id.as_str()).copied().flatten())
                            .collect();
                        Some(corrected_uncertain_ratio(
                            &a.initial_candidates,
                            &a.refined_candidates,
                            &truth,
                        )?)
                    }
                    None => None,
                };
                runs.push(SeedRun {
                    seed: first_seed + i as u64,
                    classifier_labels: records.iter().map(|r| r.classifier_label).collect(),
                    calibrated_labels: records.iter().map(|r| r.label).collect(),
                    corrected_uncertain_ratio: ratio,
                });
            }
            let report = log.run("evaluate", None, || evaluate(&ds, &runs))?;
            report.write(&common.out)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Report { run } => {
            let path = find_report(&run)?;
            let report: EvalReport = read_json(&path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            report.write(dir)?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Grid {
            common,
            grid,
            limit,
            workers,
        } => {
            let mut base = match common.config.as_deref() {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::synthetic_benchmark(),
            };
            if let Some(seed) = common.seed {
                base.calibration.seeds = vec![seed];
            }
            let spec: GridSpec = grid.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            log.event("grid", None, "start", None);
            let results = run_grid(&base, &spec, limit, workers, Some(&common.out));
            log.event("grid", None, "done", None);
            write_json(&common.out.join("grid.json"), &results)?;
            let failed = results.iter().filter(|r| r.error.is_some()).count();
            match best_grid_result(&results) {
                Some(i) => {
                    let best = &results[i];
                    write_json(&common.out.join("best.json"), &best.point.apply(&base))?;
                    println!(
                        "{} points, {failed} failed; best {} (validation {:.4})",
                        results.len(),
                        best.config_hash,
                        best.validation_accuracy.unwrap_or(0.0)
                    );
                    Ok(())
                }
                None => Err(Error::InvalidConfig(format!(
                    "all {} grid points failed",
                    results.len()
                ))),
            }
        }
        Command::Run { common, benchmark } => {
            let mut config = match (benchmark, common.config.as_deref()) {
                (true, _) => PipelineConfig::synthetic_benchmark(),
                (false, Some(p)) => PipelineConfig::load(p)?,
                (false, None) => {
                    return Err(Error::InvalidConfig("`run` needs --config or --benchmark".into()));
                }
            };
            if let Some(seed) = common.seed {
                config.calibration.seeds = vec![seed];
            }
            let run = run_pipeline(
                &config,
                &RunOptions {
                    out_dir: Some(common.out),
                    log: log.enabled,
                },
            )?;
            print!("{}", run.report.to_text());
            Ok(())
        }
    }
}

/// `report.json` itself, inside `dir`, or inside the single `evaluate-*` child of `dir`.
fn find_report(path: &Path) -> Result<PathBuf> {
    if path.is_file() {
        return Ok(path.to_path_buf());
    }
    let direct = path.join("report.json");
    if direct.is_file() {
        return Ok(direct);
    }
    let entries = std::fs::read_dir(path).map_err(|e| Error::io(path, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("evaluate-"))
        })
        .map(|p| p.join("report.json"))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(Error::InvalidConfig(format!("no report under {}", path.display()))),
        n => Err(Error::InvalidConfig(format!(
            "{n} evaluate directories under {}; pass one of them",
            path.display()
        ))),
    }
}

//! On-disk dataset format shared by every pipeline stage.
//!
//! A dataset directory holds `manifest.json`, one JSON Lines file per split
//! (`train.jsonl`, `valid.jsonl`, `test.jsonl`) and, when training dynamics have
//! been recorded, `dynamics.<split>.jsonl`. A missing noisy label is written as
//! JSON `null`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const FORMAT_VERSION: &str = "1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn records_file(self) -> String {
        format!("{}.jsonl", self.as_str())
    }

    pub fn dynamics_file(self) -> String {
        format!("dynamics.{}.jsonl", self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub class_names: Vec<String>,
    pub splits: BTreeMap<Split, usize>,
    pub dynamics_epochs: usize,
    pub format_version: String,
}

impl DatasetManifest {
    /// Manifest with generated class names and empty splits.
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            class_names: (0..num_classes).map(|c| format!("class_{c}")).collect(),
            splits: BTreeMap::new(),
            dynamics_epochs: 0,
            format_version: FORMAT_VERSION.to_string(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::MalformedManifest(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.feature_dim < 1 {
            return Err(Error::MalformedManifest("feature_dim must be positive".into()));
        }
        if self.class_names.len() != self.num_classes {
            return Err(Error::MalformedManifest(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        let distinct: HashSet<&String> = self.class_names.iter().collect();
        if distinct.len() != self.class_names.len() {
            return Err(Error::MalformedManifest("class names are not distinct".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub features: Vec<f64>,
    /// `None` encodes a missing label (e.g. an unparseable annotation).
    pub noisy_label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRecord {
    pub id: String,
    /// One probability vector per recorded epoch.
    pub trajectory: Vec<Vec<f64>>,
}

impl DynamicsRecord {
    /// Trajectory flattened epoch-major into a single vector.
    pub fn flattened(&self) -> Vec<f64> {
        self.trajectory.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
    pub dynamics: Option<Vec<DynamicsRecord>>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.split == split)
            .map(|(i, _)| i)
            .collect()
    }

    /// Recomputes the per-split counts from the records.
    pub fn sync_counts(&mut self) {
        let mut splits = BTreeMap::new();
        for r in &self.records {
            *splits.entry(r.split).or_insert(0) += 1;
        }
        self.manifest.splits = splits;
    }

    /// Dynamics aligned to `records`, failing when any record lacks a trajectory.
    pub fn aligned_dynamics(&self) -> Result<Vec<&DynamicsRecord>> {
        let dynamics = self
            .dynamics
            .as_ref()
            .ok_or_else(|| Error::MissingDynamics(String::from("<dataset>")))?;
        let by_id: HashMap<&str, &DynamicsRecord> = dynamics.iter().map(|d| (d.id.as_str(), d)).collect();
        self.records
            .iter()
            .map(|r| {
                by_id
                    .get(r.id.as_str())
                    .copied()
                    .ok_or_else(|| Error::MissingDynamics(r.id.clone()))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        validate(&self.manifest, &self.records, self.dynamics.as_deref())
    }
}

fn validate(manifest: &DatasetManifest, records: &[SampleRecord], dynamics: Option<&[DynamicsRecord]>) -> Result<()> {
    manifest.validate()?;
    let classes = manifest.num_classes;

    let mut counts: BTreeMap<Split, usize> = BTreeMap::new();
    let mut ids = HashSet::with_capacity(records.len());
    for r in records {
        if !ids.insert(r.id.as_str()) {
            return Err(Error::InvariantViolation(format!("duplicate record id `{}`", r.id)));
        }
        if r.features.len() != manifest.feature_dim {
            return Err(Error::FeatureDimMismatch {
                id: r.id.clone(),
                expected: manifest.feature_dim,
                found: r.features.len(),
            });
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation(format!(
                "record `{}` has non-finite features",
                r.id
            )));
        }
        for label in r.noisy_label.iter().chain(r.true_label.iter()) {
            if *label >= classes {
                return Err(Error::LabelOutOfRange { label: *label, classes });
            }
        }
        *counts.entry(r.split).or_insert(0) += 1;
    }
    for split in Split::ALL {
        let declared = manifest.splits.get(&split).copied().unwrap_or(0);
        let actual = counts.get(&split).copied().unwrap_or(0);
        if declared != actual {
            return Err(Error::CountMismatch {
                split: split.to_string(),
                declared,
                actual,
            });
        }
    }

    if let Some(dynamics) = dynamics {
        let mut seen = HashSet::with_capacity(dynamics.len());
        for d in dynamics {
            if !ids.contains(d.id.as_str()) {
                return Err(Error::OrphanDynamics(d.id.clone()));
            }
            if !seen.insert(d.id.as_str()) {
                return Err(Error::InvariantViolation(format!("duplicate dynamics for `{}`", d.id)));
            }
            if d.trajectory.len() != manifest.dynamics_epochs {
                return Err(Error::InvariantViolation(format!(
                    "dynamics for `{}` has {} epochs, manifest declares {}",
                    d.id,
                    d.trajectory.len(),
                    manifest.dynamics_epochs
                )));
            }
            for row in &d.trajectory {
                if row.len() != classes {
                    return Err(Error::InvariantViolation(format!(
                        "dynamics row for `{}` has {} entries, expected {classes}",
                        d.id,
                        row.len()
                    )));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::InvariantViolation(format!(
                        "dynamics row for `{}` is not a probability vector",
                        d.id
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(e.to_string()))?;
    manifest.validate()?;

    let mut records = Vec::new();
    for split in Split::ALL {
        let path = dir.join(split.records_file());
        let declared = manifest.splits.get(&split).copied().unwrap_or(0);
        if !path.exists() {
            if declared > 0 {
                return Err(Error::CountMismatch {
                    split: split.to_string(),
                    declared,
                    actual: 0,
                });
            }
            continue;
        }
        let part: Vec<SampleRecord> = read_jsonl(&path)?;
        if let Some(r) = part.iter().find(|r| r.split != split) {
            return Err(Error::InvariantViolation(format!(
                "record `{}` tagged {} found in {}",
                r.id,
                r.split,
                split.records_file()
            )));
        }
        records.extend(part);
    }

    let mut dynamics = None;
    for split in Split::ALL {
        let path = dir.join(split.dynamics_file());
        if path.exists() {
            let part: Vec<DynamicsRecord> = read_jsonl(&path)?;
            dynamics.get_or_insert_with(Vec::new).extend(part);
        }
    }

    let dataset = Dataset {
        manifest,
        records,
        dynamics,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Validates and writes a dataset directory, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    dataset.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let manifest_path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&dataset.manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;

    let split_of: HashMap<&str, Split> = dataset.records.iter().map(|r| (r.id.as_str(), r.split)).collect();
    for split in Split::ALL {
        let path = dir.join(split.records_file());
        write_jsonl(&path, dataset.records.iter().filter(|r| r.split == split))?;

        let dyn_path = dir.join(split.dynamics_file());
        match &dataset.dynamics {
            Some(dynamics) => write_jsonl(&dyn_path, dynamics.iter().filter(|d| split_of[d.id.as_str()] == split))?,
            None => {
                if dyn_path.exists() {
                    fs::remove_file(&dyn_path).map_err(|e| Error::io(&dyn_path, e))?;
                }
            }
        }
    }
    Ok(())
}

/// Assigns a uniformly drawn label to every train/valid record whose noisy label
/// is missing. Test records are never touched.
pub fn resolve_missing_labels(mut records: Vec<SampleRecord>, num_classes: usize, seed: u64) -> Vec<SampleRecord> {
    for (i, r) in records.iter_mut().enumerate() {
        if r.noisy_label.is_none() && r.split != Split::Test {
            let mut rng = rng::substream(seed, &[rng::tag::MISSING_LABELS, i as u64]);
            r.noisy_label = Some(rng.random_range(0..num_classes));
        }
    }
    records
}

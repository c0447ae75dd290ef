//! Synthetic label noise and empirical noise structure.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
    InstanceDependent,
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sn" | "symmetric" => Ok(NoiseKind::Symmetric),
            "asn" | "asymmetric" => Ok(NoiseKind::Asymmetric),
            "idn" | "instance_dependent" => Ok(NoiseKind::InstanceDependent),
            other => Err(Error::InvalidConfig(format!("unknown noise kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub ratio: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::InvalidConfig(format!(
                "noise ratio {} outside [0, 1]",
                self.ratio
            )));
        }
        Ok(())
    }
}

/// Spread of the per-instance flip-rate distribution before truncation.
const IDN_RATE_STD: f64 = 0.1;

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(Error::LabelOutOfRange { label, classes }),
        None => Ok(()),
    }
}

/// Flips each label with probability `ratio` to one of the other classes, chosen
/// uniformly.
pub fn inject_symmetric(true_labels: &[usize], classes: usize, spec: &NoiseSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    check_labels(true_labels, classes)?;
    let mut rng = rng::substream(spec.seed, &[tag::NOISE, 0]);
    Ok(true_labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < spec.ratio {
                let other = rng.random_range(0..classes - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect())
}

/// Flips each label with probability `ratio` to the next class, cyclically.
pub fn inject_asymmetric(true_labels: &[usize], classes: usize, spec: &NoiseSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    check_labels(true_labels, classes)?;
    let mut rng = rng::substream(spec.seed, &[tag::NOISE, 1]);
    Ok(true_labels
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < spec.ratio {
                (y + 1) % classes
            } else {
                y
            }
        })
        .collect())
}

fn truncated_normal(rng: &mut rng::Rng, mean: f64, std: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let v = mean + std * z;
        if (0.0..=1.0).contains(&v) {
            return v;
        }
    }
}

/// Feature-driven noise.
///
/// Each instance gets a flip rate from a normal centred on `ratio` truncated to
/// `[0, 1]`, rescaled so the rates average to `ratio`. A flipped instance moves to
/// the non-true class with the largest projection `x . w_c`, where the per-class
/// directions `w_c` are standard normal draws.
pub fn inject_instance_dependent(
    features: &[Vec<f64>],
    true_labels: &[usize],
    classes: usize,
    spec: &NoiseSpec,
) -> Result<Vec<usize>> {
    spec.validate()?;
    if features.len() != true_labels.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} feature rows for {} labels",
            features.len(),
            true_labels.len()
        )));
    }
    check_labels(true_labels, classes)?;
    if spec.ratio == 0.0 || true_labels.is_empty() {
        return Ok(true_labels.to_vec());
    }
    let dim = features[0].len();
    if let Some(row) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "feature rows of length {dim} and {}",
            row.len()
        )));
    }

    let mut proj_rng = rng::substream(spec.seed, &[tag::IDN_PROJECTION]);
    let directions: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut proj_rng)).collect())
        .collect();

    let mut rate_rng = rng::substream(spec.seed, &[tag::IDN_RATES]);
    let raw: Vec<f64> = true_labels
        .iter()
        .map(|_| truncated_normal(&mut rate_rng, spec.ratio, IDN_RATE_STD))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let scale = if mean > 0.0 { spec.ratio / mean } else { 0.0 };

    let mut flip_rng = rng::substream(spec.seed, &[tag::NOISE, 2]);
    Ok(features
        .iter()
        .zip(true_labels)
        .zip(&raw)
        .map(|((x, &y), &q)| {
            let rate = (q * scale).min(1.0);
            if flip_rng.random::<f64>() >= rate {
                return y;
            }
            let mut best = None;
            for (c, w) in directions.iter().enumerate() {
                if c == y {
                    continue;
                }
                let score: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((c, score));
                }
            }
            best.map_or(y, |(c, _)| c)
        })
        .collect())
}

/// Dispatches on `spec.kind`.
pub fn inject(features: &[Vec<f64>], true_labels: &[usize], classes: usize, spec: &NoiseSpec) -> Result<Vec<usize>> {
    match spec.kind {
        NoiseKind::Symmetric => inject_symmetric(true_labels, classes, spec),
        NoiseKind::Asymmetric => inject_asymmetric(true_labels, classes, spec),
        NoiseKind::InstanceDependent => inject_instance_dependent(features, true_labels, classes, spec),
    }
}

/// Confusion counts between true (rows) and observed (columns) labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub counts: Vec<Vec<u64>>,
    /// Row-normalized counts; rows without any sample stay all-zero.
    pub normalized: Vec<Vec<f64>>,
    pub empty_rows: Vec<usize>,
}

impl TransitionMatrix {
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// Fraction of all samples that sit off the diagonal.
    pub fn off_diagonal_mass(&self) -> f64 {
        let total: u64 = self.counts.iter().flatten().sum();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        (total - diag) as f64 / total as f64
    }

    /// Frobenius distance between the normalized matrices.
    pub fn frobenius_distance(&self, other: &TransitionMatrix) -> f64 {
        self.normalized
            .iter()
            .flatten()
            .zip(other.normalized.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Normalized matrix as a CSV grid with a header row of observed classes.
    pub fn to_csv(&self, class_names: &[String]) -> String {
        let mut out = String::from("true\\observed");
        for name in class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.normalized) {
            out.push_str(name);
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn empirical_transition_matrix(
    true_labels: &[usize],
    observed_labels: &[usize],
    classes: usize,
) -> Result<TransitionMatrix> {
    if true_labels.len() != observed_labels.len() {
        return Err(Error::LengthMismatch {
            left: true_labels.len(),
            right: observed_labels.len(),
        });
    }
    check_labels(true_labels, classes)?;
    check_labels(observed_labels, classes)?;

    let mut counts = vec![vec![0u64; classes]; classes];
    for (&t, &o) in true_labels.iter().zip(observed_labels) {
        counts[t][o] += 1;
    }
    let mut empty_rows = Vec::new();
    let normalized = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                empty_rows.push(i);
                vec![0.0; classes]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok(TransitionMatrix {
        counts,
        normalized,
        empty_rows,
    })
}

/// Fraction of positions where the two label sequences differ.
pub fn noise_ratio(true_labels: &[usize], observed_labels: &[usize]) -> Result<f64> {
    if true_labels.len() != observed_labels.len() {
        return Err(Error::LengthMismatch {
            left: true_labels.len(),
            right: observed_labels.len(),
        });
    }
    if true_labels.is_empty() {
        return Ok(0.0);
    }
    let differ = true_labels.iter().zip(observed_labels).filter(|(a, b)| a != b).count();
    Ok(differ as f64 / true_labels.len() as f64)
}

//! True-label candidate retrieval from neighbourhood label distributions.
//!
//! Samples whose trajectories look clean form a k-NN reference set labelled by
//! their noisy labels. Every training sample then receives the label
//! distribution of its `K` nearest clean neighbours, which is split into a
//! certain single-label prior (when the top probability reaches `lambda`) or an
//! uncertain weighted candidate list (top two when they jointly reach `gamma`,
//! otherwise every label with non-zero mass).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::classifier::{noisy_marker, TrajectoryStatistic};
use crate::dataset::{Dataset, DynamicsRecord, Split};
use crate::error::{Error, Result};
use crate::math::argmax;

/// Slack for threshold comparisons on sums of k-NN fractions.
pub const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSpace {
    /// Flattened per-epoch probability trajectory.
    #[default]
    Dynamics,
    RawFeatures,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceWeighting {
    #[default]
    Uniform,
    InverseDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    #[serde(rename = "K")]
    pub k: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Fraction of training trajectories marked noisy before retrieval.
    pub sigma: f64,
    pub feature_space: FeatureSpace,
    pub distance_weighting: DistanceWeighting,
    pub trajectory_statistic: TrajectoryStatistic,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            lambda: 0.9,
            gamma: 0.8,
            sigma: 0.5,
            feature_space: FeatureSpace::Dynamics,
            distance_weighting: DistanceWeighting::Uniform,
            trajectory_statistic: TrajectoryStatistic::Mean,
        }
    }
}

impl RetrievalConfig {
    /// `lambda = gamma = 0` is accepted: it reduces every prior to the single
    /// k-NN argmax label.
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        for (name, v) in [("lambda", self.lambda), ("gamma", self.gamma), ("sigma", self.sigma)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    Certain,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: usize,
    pub weight: f64,
}

/// Retrieval emits candidates in descending weight order, ties by ascending label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub sample_id: String,
    pub kind: CandidateKind,
    pub candidates: Vec<Candidate>,
    pub noisy_label: usize,
}

impl CandidateSet {
    pub fn certain(sample_id: impl Into<String>, label: usize, noisy_label: usize) -> Self {
        Self {
            sample_id: sample_id.into(),
            kind: CandidateKind::Certain,
            candidates: vec![Candidate { label, weight: 1.0 }],
            noisy_label,
        }
    }

    /// Label carrying the largest weight (lowest label on ties).
    pub fn top_label(&self) -> usize {
        let mut best = &self.candidates[0];
        for c in &self.candidates[1..] {
            if c.weight > best.weight || (c.weight == best.weight && c.label < best.label) {
                best = c;
            }
        }
        best.label
    }

    pub fn contains(&self, label: usize) -> bool {
        self.candidates.iter().any(|c| c.label == label)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |why: &str| {
            Err(Error::InvariantViolation(format!(
                "candidate set `{}`: {why}",
                self.sample_id
            )))
        };
        match self.kind {
            CandidateKind::Certain => {
                if self.candidates.len() != 1 || self.candidates[0].weight != 1.0 {
                    return bad("certain sets hold exactly one candidate of weight 1");
                }
            }
            CandidateKind::Uncertain => {
                if self.candidates.len() < 2 {
                    return bad("uncertain sets hold at least two candidates");
                }
                let mut labels: Vec<usize> = self.candidates.iter().map(|c| c.label).collect();
                labels.sort_unstable();
                labels.dedup();
                if labels.len() != self.candidates.len() {
                    return bad("duplicate labels");
                }
                if self.candidates.iter().any(|c| !(c.weight > 0.0)) {
                    return bad("non-positive weight");
                }
                let sum: f64 = self.candidates.iter().map(|c| c.weight).sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return bad("weights do not sum to 1");
                }
            }
        }
        Ok(())
    }
}

/// Reference points for neighbour search, labelled by their noisy labels.
#[derive(Debug, Clone)]
pub struct KnnReference<'a> {
    pub points: Vec<&'a [f64]>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

#[derive(PartialEq)]
struct Neighbour {
    dist: f64,
    index: usize,
}

impl Eq for Neighbour {}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.total_cmp(&other.dist).then(self.index.cmp(&other.index))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Label distribution of the `k` nearest reference points to `query`.
///
/// Distance ties go to the smaller reference index. `exclude` removes one
/// reference point (the query itself when it belongs to the reference set).
pub fn knn_label_distribution(
    query: &[f64],
    reference: &KnnReference<'_>,
    k: usize,
    weighting: DistanceWeighting,
    exclude: Option<usize>,
) -> Result<Vec<f64>> {
    let excluded = exclude.is_some_and(|i| i < reference.points.len());
    let available = reference.points.len() - usize::from(excluded);
    if available == 0 {
        return Err(Error::EmptyCleanSet);
    }
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }

    // Max-heap of the k best candidates seen so far.
    let mut heap: BinaryHeap<Neighbour> = BinaryHeap::with_capacity(k + 1);
    for (index, point) in reference.points.iter().enumerate() {
        if Some(index) == exclude {
            continue;
        }
        let candidate = Neighbour {
            dist: squared_distance(query, point),
            index,
        };
        if heap.len() < k {
            heap.push(candidate);
        } else if heap.peek().is_some_and(|worst| candidate < *worst) {
            heap.pop();
            heap.push(candidate);
        }
    }

    let mut p = vec![0.0; reference.classes];
    match weighting {
        DistanceWeighting::Uniform => {
            for n in &heap {
                p[reference.labels[n.index]] += 1.0;
            }
            for v in &mut p {
                *v /= k as f64;
            }
        }
        DistanceWeighting::InverseDistance => {
            let neighbours = heap.into_sorted_vec();
            let mut total = 0.0;
            for n in &neighbours {
                let w = 1.0 / (n.dist.sqrt() + 1e-12);
                p[reference.labels[n.index]] += w;
                total += w;
            }
            for v in &mut p {
                *v /= total;
            }
        }
    }
    Ok(p)
}

/// Turns one k-NN label distribution into a candidate set.
pub fn candidates_from_distribution(
    sample_id: &str,
    noisy_label: usize,
    p: &[f64],
    lambda: f64,
    gamma: f64,
) -> CandidateSet {
    let best = argmax(p);
    if p[best] >= lambda - THRESHOLD_SLACK {
        return CandidateSet::certain(sample_id, best, noisy_label);
    }
    let mut ranked: Vec<(usize, f64)> = p.iter().copied().enumerate().filter(|(_, v)| *v > 0.0).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let top2 = ranked[0].1 + ranked[1].1;
    let kept: Vec<(usize, f64)> = if top2 >= gamma - THRESHOLD_SLACK {
        ranked[..2].iter().map(|&(l, w)| (l, w / top2)).collect()
    } else {
        let total: f64 = ranked.iter().map(|r| r.1).sum();
        ranked.iter().map(|&(l, w)| (l, w / total)).collect()
    };
    CandidateSet {
        sample_id: sample_id.to_string(),
        kind: CandidateKind::Uncertain,
        candidates: kept
            .into_iter()
            .map(|(label, weight)| Candidate { label, weight })
            .collect(),
        noisy_label,
    }
}

/// Result of retrieval over the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Dataset indices of the training records, aligned with `sets` and `noisy_mask`.
    pub indices: Vec<usize>,
    pub noisy_mask: Vec<bool>,
    pub sets: Vec<CandidateSet>,
}

/// Marks noisy trajectories with `sigma` and retrieves candidates for every
/// training record.
pub fn retrieve(dataset: &Dataset, config: &RetrievalConfig) -> Result<Retrieval> {
    config.validate()?;
    let dynamics = dataset.aligned_dynamics()?;
    let indices = dataset.split_indices(Split::Train);
    let train_dyn: Vec<&DynamicsRecord> = indices.iter().map(|&i| dynamics[i]).collect();
    let noisy = noisy_labels(dataset, &indices)?;
    let mask = noisy_marker(&train_dyn, &noisy, config.sigma, config.trajectory_statistic)?;
    let sets = retrieve_candidates(dataset, &dynamics, &indices, &mask, config)?;
    Ok(Retrieval {
        indices,
        noisy_mask: mask,
        sets,
    })
}

fn noisy_labels(dataset: &Dataset, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .iter()
        .map(|&i| {
            let r = &dataset.records[i];
            r.noisy_label
                .ok_or_else(|| Error::InvariantViolation(format!("record `{}` has an unresolved label", r.id)))
        })
        .collect()
}

/// Candidate sets for the records at `indices`, using the records whose
/// `noisy_mask` entry is false as the k-NN reference. A reference sample never
/// counts itself as a neighbour.
pub fn retrieve_candidates(
    dataset: &Dataset,
    dynamics: &[&DynamicsRecord],
    indices: &[usize],
    noisy_mask: &[bool],
    config: &RetrievalConfig,
) -> Result<Vec<CandidateSet>> {
    config.validate()?;
    if noisy_mask.len() != indices.len() {
        return Err(Error::LengthMismatch {
            left: noisy_mask.len(),
            right: indices.len(),
        });
    }
    let noisy = noisy_labels(dataset, indices)?;
    let flats: Vec<Vec<f64>> = indices.iter().map(|&i| dynamics[i].flattened()).collect();
    let points: Vec<&[f64]> = indices
        .iter()
        .zip(&flats)
        .map(|(&i, flat)| match config.feature_space {
            FeatureSpace::Dynamics => flat.as_slice(),
            FeatureSpace::RawFeatures => dataset.records[i].features.as_slice(),
        })
        .collect();

    let mut ref_slot = vec![None; indices.len()];
    let mut reference = KnnReference {
        points: Vec::new(),
        labels: Vec::new(),
        classes: dataset.num_classes(),
    };
    for (j, &is_noisy) in noisy_mask.iter().enumerate() {
        if !is_noisy {
            ref_slot[j] = Some(reference.points.len());
            reference.points.push(points[j]);
            reference.labels.push(noisy[j]);
        }
    }

    points
        .iter()
        .enumerate()
        .map(|(j, query)| {
            let p = knn_label_distribution(query, &reference, config.k, config.distance_weighting, ref_slot[j])?;
            Ok(candidates_from_distribution(
                &dataset.records[indices[j]].id,
                noisy[j],
                &p,
                config.lambda,
                config.gamma,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// The heaviest candidate must equal the true label.
    Argmax,
    /// The true label must appear anywhere in the candidate list.
    Contains,
}

/// Fraction of candidate sets that recover the true label under `mode`.
pub fn candidate_accuracy(sets: &[CandidateSet], true_labels: &[usize], mode: AccuracyMode) -> Result<f64> {
    if sets.len() != true_labels.len() {
        return Err(Error::LengthMismatch {
            left: sets.len(),
            right: true_labels.len(),
        });
    }
    if sets.is_empty() {
        return Ok(0.0);
    }
    let hits = sets
        .iter()
        .zip(true_labels)
        .filter(|(s, &y)| match mode {
            AccuracyMode::Argmax => s.top_label() == y,
            AccuracyMode::Contains => s.contains(y),
        })
        .count();
    Ok(hits as f64 / sets.len() as f64)
}

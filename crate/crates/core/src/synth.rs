//! Synthetic Gaussian-mixture datasets with clean labels.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetManifest, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    pub classes: usize,
    pub feature_dim: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Gaussian components per class.
    pub components: usize,
    /// Distance of every component center from the origin.
    pub separation: f64,
    /// Per-coordinate standard deviation around a center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            feature_dim: 16,
            train: 2000,
            valid: 400,
            test: 400,
            components: 1,
            separation: 3.0,
            spread: 1.0,
            seed: 0,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.feature_dim < 1 || self.components < 1 {
            return Err(Error::InvalidConfig(
                "mixture needs at least 2 classes, 1 feature and 1 component per class".into(),
            ));
        }
        if !(self.separation >= 0.0) || !(self.spread > 0.0) {
            return Err(Error::InvalidConfig(
                "separation must be non-negative, spread positive".into(),
            ));
        }
        Ok(())
    }
}

fn normal_vector(dim: usize, rng: &mut rng::Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Component centers, `centers[class][component]`, at a fixed radius in random directions.
pub fn mixture_centers(config: &MixtureConfig) -> Vec<Vec<Vec<f64>>> {
    let mut r = rng::substream(config.seed, &[tag::SYNTH, 0]);
    (0..config.classes)
        .map(|_| {
            (0..config.components)
                .map(|_| {
                    let v = normal_vector(config.feature_dim, &mut r);
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    v.iter().map(|x| x * config.separation / norm).collect()
                })
                .collect()
        })
        .collect()
}

/// Draws a labelled dataset. Classes cycle through the records, so every split
/// is balanced to within one sample; noisy labels equal the true labels.
pub fn generate_mixture(config: &MixtureConfig) -> Result<Dataset> {
    config.validate()?;
    let centers = mixture_centers(config);
    let mut manifest = DatasetManifest::new(config.classes, config.feature_dim);
    let mut records = Vec::with_capacity(config.train + config.valid + config.test);
    for (split, count) in [
        (Split::Train, config.train),
        (Split::Valid, config.valid),
        (Split::Test, config.test),
    ] {
        let mut r = rng::substream(config.seed, &[tag::SYNTH, 1, split as u64]);
        for i in 0..count {
            let label = i % config.classes;
            let component = r.random_range(0..config.components);
            let center = &centers[label][component];
            let features = center
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut r);
                    c + config.spread * z
                })
                .collect();
            records.push(SampleRecord {
                id: format!("{}-{i:05}", split.as_str()),
                features,
                noisy_label: Some(label),
                true_label: Some(label),
                split,
            });
        }
        manifest.splits.insert(split, count);
    }
    let dataset = Dataset {
        manifest,
        records,
        dynamics: None,
    };
    dataset.validate()?;
    Ok(dataset)
}

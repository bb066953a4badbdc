//! Synthetic populations with planted unknown unknowns.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{euclidean, Dataset, DatasetSchema, FeatureKind, FeatureSpec, Instance, SearchSpace, Value, DEFAULT_TAU};
use crate::error::{Error, Result};

/// A latent subgroup: its class and the probability that each binary
/// feature is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSubgroup {
    pub name: String,
    pub class: String,
    pub signature: Vec<f64>,
    pub train_count: usize,
    pub test_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasConfig {
    pub features: Vec<String>,
    pub classes: Vec<String>,
    pub critical_class: String,
    pub subgroups: Vec<LatentSubgroup>,
    /// Subgroups left out of the training set.
    pub removed: Vec<String>,
}

impl BiasConfig {
    /// Cats and dogs, black or not. Dropping non-black dogs from training
    /// leaves a model that calls them cats.
    pub fn cats_and_dogs(per_subgroup_test: usize) -> Self {
        const SHAPE: usize = 6;
        const COLOR: usize = 24;
        const NOISE: usize = 4;
        let mut features = Vec::new();
        features.extend((0..SHAPE).map(|i| format!("shape{i}")));
        features.extend((0..COLOR).map(|i| format!("dark{i}")));
        features.extend((0..NOISE).map(|i| format!("texture{i}")));
        let signature = |cat: bool, black: bool| -> Vec<f64> {
            let mut s = Vec::new();
            s.extend(std::iter::repeat_n(if cat { 0.85 } else { 0.15 }, SHAPE));
            s.extend(std::iter::repeat_n(if black { 0.9 } else { 0.1 }, COLOR));
            s.extend(std::iter::repeat_n(0.5, NOISE));
            s
        };
        let group = |name: &str, class: &str, cat, black| LatentSubgroup {
            name: name.into(),
            class: class.into(),
            signature: signature(cat, black),
            train_count: 150,
            test_count: per_subgroup_test,
        };
        BiasConfig {
            features,
            classes: vec!["cat".into(), "dog".into()],
            critical_class: "cat".into(),
            subgroups: vec![
                group("black_cat", "cat", true, true),
                group("other_cat", "cat", true, false),
                group("black_dog", "dog", false, true),
                group("other_dog", "dog", false, false),
            ],
            removed: vec!["other_dog".into()],
        }
    }

    pub fn schema(&self) -> Result<DatasetSchema> {
        DatasetSchema::new(
            self.features
                .iter()
                .map(|name| FeatureSpec { name: name.clone(), kind: FeatureKind::Binary })
                .collect(),
            self.classes.clone(),
        )
    }

    fn validate(&self) -> Result<()> {
        if !self.classes.contains(&self.critical_class) {
            return Err(Error::config(format!("critical class {:?} not among classes", self.critical_class)));
        }
        for g in &self.subgroups {
            if g.signature.len() != self.features.len() {
                return Err(Error::config(format!("subgroup {} signature has wrong length", g.name)));
            }
            if !self.classes.contains(&g.class) {
                return Err(Error::config(format!("subgroup {} has unknown class {}", g.name, g.class)));
            }
            if g.signature.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::config(format!("subgroup {} signature outside [0,1]", g.name)));
            }
        }
        for r in &self.removed {
            if !self.subgroups.iter().any(|g| &g.name == r) {
                return Err(Error::config(format!("removed subgroup {r} does not exist")));
            }
        }
        Ok(())
    }
}

fn draw_binary(signature: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    signature.iter().map(|&p| if rng.gen_bool(p) { 1.0 } else { 0.0 }).collect()
}

fn to_values(x: &[f64]) -> Vec<Value> {
    x.iter().map(|&v| Value::Num(v)).collect()
}

/// Nearest-centroid classifier; confidence is the softmax of negated
/// distances to the class centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct NearestCentroid {
    classes: Vec<String>,
    centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    pub fn fit(classes: &[String], rows: &[Vec<f64>], labels: &[String]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut centroids = Vec::with_capacity(classes.len());
        for c in classes {
            let members: Vec<&Vec<f64>> = rows.iter().zip(labels).filter(|(_, l)| *l == c).map(|(r, _)| r).collect();
            if members.is_empty() {
                return Err(Error::config(format!("class {c} has no training instances")));
            }
            let mut centroid = vec![0.0; dim];
            for r in &members {
                for (s, v) in centroid.iter_mut().zip(r.iter()) {
                    *s += v;
                }
            }
            centroid.iter_mut().for_each(|s| *s /= members.len() as f64);
            centroids.push(centroid);
        }
        Ok(Self { classes: classes.to_vec(), centroids })
    }

    /// Predicted class (ties to the first class) and its confidence.
    pub fn score(&self, x: &[f64]) -> (String, f64) {
        let neg: Vec<f64> = self.centroids.iter().map(|c| -euclidean(x, c)).collect();
        let top = neg.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = neg.iter().map(|d| (d - top).exp()).collect();
        let z: f64 = weights.iter().sum();
        let best = neg.iter().position(|&d| d == top).expect("at least one class");
        (self.classes[best].clone(), weights[best] / z)
    }
}

/// Output of the bias injector: training features and a scored test set with
/// hidden truth, plus the latent subgroup of every test instance.
#[derive(Debug, Clone)]
pub struct BiasedData {
    pub schema: DatasetSchema,
    pub training: Vec<Vec<Value>>,
    pub training_labels: Vec<String>,
    pub test: Dataset,
    pub test_subgroups: Vec<String>,
}

impl BiasedData {
    pub fn subgroup_of(&self) -> HashMap<&str, &str> {
        self.test
            .instances()
            .iter()
            .zip(&self.test_subgroups)
            .map(|(i, g)| (i.id.as_str(), g.as_str()))
            .collect()
    }
}

/// Draws a population from latent subgroups, removes some subgroups from the
/// training half, and scores the test half with a nearest-centroid model fit
/// on the biased training set.
pub fn inject_bias(config: &BiasConfig, seed: u64) -> Result<BiasedData> {
    config.validate()?;
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_rows = Vec::new();
    let mut train_labels = Vec::new();
    for g in config.subgroups.iter().filter(|g| !config.removed.contains(&g.name)) {
        for _ in 0..g.train_count {
            train_rows.push(draw_binary(&g.signature, &mut rng));
            train_labels.push(g.class.clone());
        }
    }
    let scorer = NearestCentroid::fit(&config.classes, &train_rows, &train_labels)?;
    let mut test = Vec::new();
    let mut test_subgroups = Vec::new();
    for g in &config.subgroups {
        for k in 0..g.test_count {
            let x = draw_binary(&g.signature, &mut rng);
            let (predicted, confidence) = scorer.score(&x);
            test.push(
                Instance::new(format!("{}-{k}", g.name), to_values(&x), predicted, confidence)
                    .with_true_label(g.class.clone()),
            );
            test_subgroups.push(g.name.clone());
        }
    }
    Ok(BiasedData {
        test: Dataset::new(schema.clone(), test)?,
        schema,
        training: train_rows.iter().map(|r| to_values(r)).collect(),
        training_labels: train_labels,
        test_subgroups,
    })
}

/// Planted groups with fixed unknown-unknown concentrations. Every instance is
/// predicted critical with confidence above `tau`, independent of its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewedConfig {
    pub concentrations: Vec<f64>,
    pub group_size: usize,
    /// Dedicated binary features per group.
    pub signature_bits: usize,
    pub noise_features: usize,
    pub signature_on: f64,
    pub signature_off: f64,
    /// Training rows per group, all of the critical class: the model has
    /// seen every region, it just learned the wrong label for part of it.
    pub train_per_group: usize,
    pub tau: f64,
}

impl Default for SkewedConfig {
    fn default() -> Self {
        Self {
            concentrations: vec![0.8, 0.5, 0.2, 0.1, 0.05, 0.0],
            group_size: 70,
            signature_bits: 2,
            noise_features: 4,
            signature_on: 0.9,
            signature_off: 0.1,
            train_per_group: 100,
            tau: DEFAULT_TAU,
        }
    }
}

pub const CRITICAL_CLASS: &str = "positive";
pub const OTHER_CLASS: &str = "negative";

#[derive(Debug, Clone)]
pub struct SkewedBenchmark {
    pub schema: DatasetSchema,
    pub test: Dataset,
    pub training: Vec<Vec<Value>>,
    /// Planted group of every test instance, in file order.
    pub planted: Vec<usize>,
}

impl SkewedBenchmark {
    /// Planted groups as member lists over a search space built from `test`.
    pub fn planted_groups(&self, space: &SearchSpace) -> Vec<Vec<usize>> {
        let k = self.planted.iter().copied().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); k];
        for (inst, &g) in self.test.instances().iter().zip(&self.planted) {
            if let Some(i) = space.index_of(&inst.id) {
                groups[g].push(i);
            }
        }
        groups.retain(|g| !g.is_empty());
        groups
    }
}

pub fn skewed_benchmark(config: &SkewedConfig, seed: u64) -> Result<SkewedBenchmark> {
    if config.concentrations.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::config("concentrations must lie in [0,1]"));
    }
    if config.group_size == 0 || config.signature_bits == 0 {
        return Err(Error::config("group_size and signature_bits must be positive"));
    }
    if !(0.0..1.0).contains(&config.tau) {
        return Err(Error::config("tau must lie in [0,1)"));
    }
    let k = config.concentrations.len();
    let mut features = Vec::new();
    for g in 0..k {
        features.extend((0..config.signature_bits).map(|b| format!("g{g}_s{b}")));
    }
    features.extend((0..config.noise_features).map(|b| format!("noise{b}")));
    let schema = DatasetSchema::new(
        features
            .iter()
            .map(|name| FeatureSpec { name: name.clone(), kind: FeatureKind::Binary })
            .collect(),
        vec![CRITICAL_CLASS.into(), OTHER_CLASS.into()],
    )?;
    let signature = |g: usize| -> Vec<f64> {
        let mut s = Vec::with_capacity(features.len());
        for h in 0..k {
            let p = if h == g { config.signature_on } else { config.signature_off };
            s.extend(std::iter::repeat_n(p, config.signature_bits));
        }
        s.extend(std::iter::repeat_n(0.5, config.noise_features));
        s
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let low = config.tau + (1.0 - config.tau) * 0.02;
    let mut instances = Vec::new();
    let mut planted = Vec::new();
    for (g, &c) in config.concentrations.iter().enumerate() {
        let sig = signature(g);
        let uu = (c * config.group_size as f64).round() as usize;
        let mut truth: Vec<bool> = (0..config.group_size).map(|i| i < uu).collect();
        truth.shuffle(&mut rng);
        for (k, is_uu) in truth.into_iter().enumerate() {
            let x = draw_binary(&sig, &mut rng);
            let confidence = rng.gen_range(low..1.0);
            let label = if is_uu { OTHER_CLASS } else { CRITICAL_CLASS };
            instances.push(
                Instance::new(format!("g{g}-{k}"), to_values(&x), CRITICAL_CLASS, confidence).with_true_label(label),
            );
            planted.push(g);
        }
    }
    let mut training = Vec::new();
    for g in 0..k {
        let sig = signature(g);
        for _ in 0..config.train_per_group {
            training.push(to_values(&draw_binary(&sig, &mut rng)));
        }
    }
    Ok(SkewedBenchmark { test: Dataset::new(schema.clone(), instances)?, schema, training, planted })
}

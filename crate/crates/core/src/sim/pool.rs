//! Synthetic items and worker pools.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{input, Result};
use crate::model::{AnnotationMatrix, ConfusionMatrix, FeatureMatrix};
use crate::seed::{derive_rng, stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkerPoolSpec {
    pub m: usize,
    pub k: usize,
    pub accuracy_low: f64,
    pub accuracy_high: f64,
    pub seed: u64,
}

impl WorkerPoolSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return input("worker pool needs at least one worker");
        }
        if self.k < 2 {
            return input("worker pool needs at least two classes");
        }
        let chance = 1.0 / self.k as f64;
        if !(chance < self.accuracy_low && self.accuracy_low <= self.accuracy_high && self.accuracy_high <= 1.0) {
            return input(format!(
                "accuracy range [{}, {}] must satisfy 1/k = {chance:.4} < low <= high <= 1",
                self.accuracy_low, self.accuracy_high
            ));
        }
        Ok(())
    }
}

/// Symmetric-noise confusion matrices with accuracies drawn uniformly from
/// the pool's range.
pub fn gen_workers(spec: &WorkerPoolSpec) -> Result<Vec<ConfusionMatrix<f64>>> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, &[stage::WORKERS]);
    (0..spec.m)
        .map(|_| {
            let a = if spec.accuracy_low == spec.accuracy_high {
                spec.accuracy_low
            } else {
                rng.gen_range(spec.accuracy_low..=spec.accuracy_high)
            };
            ConfusionMatrix::symmetric(spec.k, a)
        })
        .collect()
}

/// Index drawn from a probability vector.
pub fn draw_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Each (worker, item) pair is observed with probability `observe_prob`; an
/// observed label is drawn from the worker's confusion column for the true
/// label. Pairs are visited item-major.
pub fn gen_annotations<R: Rng + ?Sized>(
    truth: &[usize],
    confusions: &[ConfusionMatrix<f64>],
    observe_prob: f64,
    rng: &mut R,
) -> Result<AnnotationMatrix> {
    if !(observe_prob > 0.0 && observe_prob <= 1.0) {
        return input(format!("observe probability {observe_prob} outside (0, 1]"));
    }
    let k = confusions.first().map_or(0, ConfusionMatrix::k);
    if k == 0 {
        return input("need at least one worker");
    }
    if let Some(&y) = truth.iter().find(|&&y| y >= k) {
        return input(format!("true label {y} outside 0..{k}"));
    }
    let columns: Vec<Vec<Vec<f64>>> = confusions.iter().map(|mu| (0..k).map(|y| mu.column(y)).collect()).collect();
    let mut ann = AnnotationMatrix::new(confusions.len(), truth.len(), k);
    for (j, &y) in truth.iter().enumerate() {
        for (i, cols) in columns.iter().enumerate() {
            if rng.gen::<f64>() < observe_prob {
                ann.insert(i, j, draw_categorical(&cols[y], rng))?;
            }
        }
    }
    Ok(ann)
}

/// Gaussian class clusters: each class gets a center with i.i.d.
/// `N(0, separation^2)` coordinates and items are the center plus unit noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDataSpec {
    pub n: usize,
    pub k: usize,
    pub d: usize,
    pub separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LabelledData {
    pub features: FeatureMatrix<f64>,
    /// 0-based true labels.
    pub labels: Vec<usize>,
    pub k: usize,
}

pub fn gen_dataset(spec: &SyntheticDataSpec) -> Result<LabelledData> {
    if spec.n == 0 || spec.d == 0 || spec.k < 2 {
        return input("synthetic data needs n >= 1, d >= 1 and k >= 2");
    }
    if !(spec.separation > 0.0) || !spec.separation.is_finite() {
        return input(format!("separation must be positive, got {}", spec.separation));
    }
    let mut rng = derive_rng(spec.seed, &[stage::FEATURES]);
    let center = Normal::new(0.0, spec.separation).expect("positive sd");
    let noise = Normal::new(0.0, 1.0).expect("unit sd");
    let centers: Vec<Vec<f64>> = (0..spec.k).map(|_| (0..spec.d).map(|_| center.sample(&mut rng)).collect()).collect();
    let mut labels = Vec::with_capacity(spec.n);
    let mut data = Vec::with_capacity(spec.n * spec.d);
    for _ in 0..spec.n {
        let y = rng.gen_range(0..spec.k);
        labels.push(y);
        data.extend(centers[y].iter().map(|&c| c + noise.sample(&mut rng)));
    }
    Ok(LabelledData { features: FeatureMatrix::from_flat(spec.n, spec.d, data)?, labels, k: spec.k })
}

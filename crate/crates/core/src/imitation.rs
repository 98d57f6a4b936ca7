//! Per-worker imitators: multinomial logistic regressions that predict the
//! label a given worker would report for an item from its features.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{input, Error, Result};
use crate::model::{AnnotationMatrix, FeatureMatrix, SoftAnnotation};
use crate::scalar::{log_sum_exp, Scalar};
use crate::seed::derive_seed;

/// First byte of a serialized imitator.
pub const FORMAT_TAG: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImitatorTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ImitatorTrainConfig {
    fn default() -> Self {
        Self { epochs: 300, learning_rate: 0.1, l2: 1e-4, seed: 0 }
    }
}

impl ImitatorTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return input("imitator epochs must be positive");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return input(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2 >= 0.0) || !self.l2.is_finite() {
            return input(format!("l2 must be nonnegative, got {}", self.l2));
        }
        Ok(())
    }
}

/// Softmax classifier over standardized features. `weights` is `k x (d+1)`
/// row-major with the bias in the last column. A model with `d == 0` ignores
/// its input entirely.
#[derive(Debug, Clone, PartialEq)]
pub struct ImitatorModel<T> {
    worker: usize,
    k: usize,
    d: usize,
    mean: Vec<T>,
    scale: Vec<T>,
    weights: Vec<T>,
    fallback: bool,
}

impl<T: Scalar> ImitatorModel<T> {
    pub fn new(worker: usize, k: usize, mean: Vec<T>, scale: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let d = mean.len();
        if k < 2 {
            return input("imitator needs at least two classes");
        }
        if scale.len() != d || weights.len() != k * (d + 1) {
            return input("imitator shapes are inconsistent");
        }
        if mean.iter().chain(&weights).any(|x| !x.is_finite())
            || scale.iter().any(|&s| !(s > T::zero()) || !s.is_finite())
        {
            return input("imitator parameters must be finite with positive scales");
        }
        Ok(Self { worker, k, d, mean, scale, weights, fallback: false })
    }

    pub fn worker(&self) -> usize {
        self.worker
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    /// True when the worker had no training annotations and this model is
    /// the uniform stand-in.
    pub fn is_fallback(&self) -> bool {
        self.fallback
    }

    fn standardize(&self, x: &[T]) -> Vec<T> {
        x.iter().zip(self.mean.iter().zip(&self.scale)).map(|(&v, (&mu, &s))| (v - mu) / s).collect()
    }

    pub fn imitate(&self, x: &[T]) -> Result<SoftAnnotation<T>> {
        let z = if self.d == 0 {
            Vec::new()
        } else {
            if x.len() != self.d {
                return input(format!("feature vector has {} entries, imitator expects {}", x.len(), self.d));
            }
            self.standardize(x)
        };
        let mut logits = logits(&self.weights, self.k, &z);
        softmax_in_place(&mut logits);
        Ok(SoftAnnotation::new(logits).expect("softmax output is a simplex"))
    }

    /// Serialize as: format tag, worker, k, d (u64 LE), fallback flag (u8),
    /// then `mean`, `scale` and `weights` as f64 LE.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        out.write_all(&[FORMAT_TAG])?;
        for v in [self.worker, self.k, self.d] {
            out.write_all(&(v as u64).to_le_bytes())?;
        }
        out.write_all(&[u8::from(self.fallback)])?;
        for v in self.mean.iter().chain(&self.scale).chain(&self.weights) {
            out.write_all(&v.as_f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(src: &mut R) -> Result<Self> {
        let io = |e: std::io::Error| Error::Input(format!("truncated imitator record: {e}"));
        let mut tag = [0u8; 1];
        src.read_exact(&mut tag).map_err(io)?;
        if tag[0] != FORMAT_TAG {
            return input(format!("unknown imitator format tag {}", tag[0]));
        }
        let mut word = [0u8; 8];
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            src.read_exact(&mut word).map_err(io)?;
            *h = usize::try_from(u64::from_le_bytes(word))
                .map_err(|_| Error::Input("imitator header overflow".into()))?;
        }
        let [worker, k, d] = header;
        if !(2..=1 << 16).contains(&k) || d > 1 << 24 {
            return input(format!("implausible imitator shape k={k} d={d}"));
        }
        src.read_exact(&mut tag).map_err(io)?;
        let fallback = tag[0] != 0;
        let mut read_vec = |len: usize| -> Result<Vec<T>> {
            (0..len)
                .map(|_| {
                    src.read_exact(&mut word).map_err(io)?;
                    Ok(T::lit(f64::from_le_bytes(word)))
                })
                .collect()
        };
        let mean = read_vec(d)?;
        let scale = read_vec(d)?;
        let weights = read_vec(k * (d + 1))?;
        let mut model = Self::new(worker, k, mean, scale, weights)?;
        model.fallback = fallback;
        Ok(model)
    }
}

fn logits<T: Scalar>(weights: &[T], k: usize, z: &[T]) -> Vec<T> {
    let cols = z.len() + 1;
    (0..k)
        .map(|c| {
            let row = &weights[c * cols..(c + 1) * cols];
            row[..cols - 1].iter().zip(z).map(|(&w, &x)| w * x).sum::<T>() + row[cols - 1]
        })
        .collect()
}

fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let lse = log_sum_exp(v);
    for x in v.iter_mut() {
        *x = (*x - lse).exp();
    }
    // exp rounding can leave the sum a few ulps away from one
    let sum: T = v.iter().copied().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Imitator whose output is uniform over `k` labels for every input.
pub fn random_imitator<T: Scalar>(k: usize) -> ImitatorModel<T> {
    ImitatorModel {
        worker: 0,
        k,
        d: 0,
        mean: Vec::new(),
        scale: Vec::new(),
        weights: vec![T::zero(); k],
        fallback: false,
    }
}

/// Mean cross-entropy of a softmax model plus `l2/2 * |W|^2`, and its
/// gradient with respect to the `k x cols` weights.
///
/// `x` holds `labels.len()` rows of `cols` entries each; the last entry of
/// every row is expected to be the constant 1 for the bias.
pub fn cross_entropy_loss_and_gradient<T: Scalar>(
    weights: &[T],
    k: usize,
    cols: usize,
    x: &[T],
    labels: &[usize],
    l2: T,
) -> (T, Vec<T>) {
    debug_assert_eq!(weights.len(), k * cols);
    debug_assert_eq!(x.len(), labels.len() * cols);
    let n = T::from_count(labels.len().max(1));
    let mut grad = vec![T::zero(); k * cols];
    let mut loss = T::zero();
    for (row, &label) in x.chunks(cols).zip(labels) {
        let mut z = vec![T::zero(); k];
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = weights[c * cols..(c + 1) * cols].iter().zip(row).map(|(&w, &v)| w * v).sum();
        }
        let lse = log_sum_exp(&z);
        loss += lse - z[label];
        for (c, &zc) in z.iter().enumerate() {
            let resid = (zc - lse).exp() - if c == label { T::one() } else { T::zero() };
            for (g, &v) in grad[c * cols..(c + 1) * cols].iter_mut().zip(row) {
                *g += resid * v;
            }
        }
    }
    let penalty: T = weights.iter().map(|&w| w * w).sum::<T>() * l2 / T::lit(2.0);
    for (g, &w) in grad.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    (loss / n + penalty, grad)
}

fn standardization<T: Scalar>(features: &FeatureMatrix<T>) -> (Vec<T>, Vec<T>) {
    let n = T::from_count(features.n());
    let d = features.d();
    let mut mean = vec![T::zero(); d];
    for row in features.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); d];
    for row in features.rows() {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let tiny = T::lit(1e-12);
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > tiny {
                sd
            } else {
                T::one()
            }
        })
        .collect();
    (mean, scale)
}

/// Fit worker `worker`'s imitator. Returns the model and the training
/// objective before the first step and after every epoch.
pub fn fit_imitator_traced<T: Scalar>(
    features: &FeatureMatrix<T>,
    ann: &AnnotationMatrix,
    worker: usize,
    cfg: &ImitatorTrainConfig,
) -> Result<(ImitatorModel<T>, Vec<T>)> {
    cfg.validate()?;
    if features.n() != ann.n() {
        return input(format!("{} feature rows but {} annotated items", features.n(), ann.n()));
    }
    if worker >= ann.m() {
        return input(format!("worker {worker} outside 0..{}", ann.m()));
    }
    let k = ann.k();
    let d = features.d();
    let cols = d + 1;
    let (mean, scale) = standardization(features);
    let obs = ann.worker(worker);
    if obs.is_empty() {
        let mut model = ImitatorModel::new(worker, k, mean, scale, vec![T::zero(); k * cols])?;
        model.fallback = true;
        return Ok((model, Vec::new()));
    }

    let mut x = Vec::with_capacity(obs.len() * cols);
    let mut labels = Vec::with_capacity(obs.len());
    for &(j, l) in obs {
        x.extend(features.row(j).iter().zip(mean.iter().zip(&scale)).map(|(&v, (&mu, &s))| (v - mu) / s));
        x.push(T::one());
        labels.push(l);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[worker as u64]));
    let mut weights: Vec<T> = (0..k * cols).map(|_| T::lit(rng.gen_range(-0.01..0.01))).collect();
    let l2 = T::lit(cfg.l2);
    let mut lr = T::lit(cfg.learning_rate);
    let (mut loss, mut grad) = cross_entropy_loss_and_gradient(&weights, k, cols, &x, &labels, l2);
    let mut trace = vec![loss];
    let zero = T::zero();
    for _ in 0..cfg.epochs {
        // Proximal step on the L2 term; halve the rate until the objective
        // does not increase.
        let mut accepted = false;
        for _ in 0..40 {
            let shrink = T::one() + lr * l2;
            let ce_grad = grad.iter().zip(&weights).map(|(&g, &w)| g - l2 * w);
            let candidate: Vec<T> = weights.iter().zip(ce_grad).map(|(&w, g)| (w - lr * g) / shrink).collect();
            let (cand_loss, cand_grad) = cross_entropy_loss_and_gradient(&candidate, k, cols, &x, &labels, l2);
            if cand_loss <= loss {
                weights = candidate;
                loss = cand_loss;
                grad = cand_grad;
                accepted = true;
                break;
            }
            lr /= T::lit(2.0);
        }
        trace.push(loss);
        if !accepted || lr == zero {
            break;
        }
    }
    let model = ImitatorModel::new(worker, k, mean, scale, weights)?;
    Ok((model, trace))
}

pub fn fit_imitator<T: Scalar>(
    features: &FeatureMatrix<T>,
    ann: &AnnotationMatrix,
    worker: usize,
    cfg: &ImitatorTrainConfig,
) -> Result<ImitatorModel<T>> {
    fit_imitator_traced(features, ann, worker, cfg).map(|(model, _)| model)
}

/// Fraction of the worker's annotated items where the imitator's top label
/// matches the worker's.
pub fn agreement_rate<T: Scalar>(
    model: &ImitatorModel<T>,
    features: &FeatureMatrix<T>,
    ann: &AnnotationMatrix,
    worker: usize,
) -> Result<f64> {
    if worker >= ann.m() {
        return input(format!("worker {worker} outside 0..{}", ann.m()));
    }
    let obs = ann.worker(worker);
    if obs.is_empty() {
        return input(format!("worker {} has no annotations", worker + 1));
    }
    let mut hits = 0usize;
    for &(j, l) in obs {
        if model.imitate(features.row(j))?.argmax() == l {
            hits += 1;
        }
    }
    Ok(hits as f64 / obs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (FeatureMatrix<f64>, AnnotationMatrix) {
        let rows =
            vec![vec![0.0, 1.0], vec![1.0, 0.5], vec![2.0, -1.0], vec![3.0, -0.5], vec![0.5, 2.0], vec![2.5, 0.0]];
        let features = FeatureMatrix::from_rows(rows).unwrap();
        let ann =
            AnnotationMatrix::from_triples(2, 6, 2, [(0, 0, 0), (0, 1, 0), (0, 2, 1), (0, 3, 1), (0, 4, 0), (0, 5, 1)])
                .unwrap();
        (features, ann)
    }

    #[test]
    fn single_point_is_learned() {
        let features = FeatureMatrix::from_rows(vec![vec![1.0, -2.0]; 3]).unwrap();
        let ann = AnnotationMatrix::from_triples(1, 3, 2, (0..3).map(|j| (0, j, 1))).unwrap();
        let cfg = ImitatorTrainConfig { epochs: 500, learning_rate: 0.1, l2: 0.0, seed: 1 };
        let model = fit_imitator(&features, &ann, 0, &cfg).unwrap();
        assert!(model.imitate(&[1.0, -2.0]).unwrap().probs()[1] > 0.9);
    }

    #[test]
    fn heavy_l2_gives_uniform() {
        let (features, ann) = toy();
        let cfg = ImitatorTrainConfig { l2: 1e6, ..ImitatorTrainConfig::default() };
        let model = fit_imitator(&features, &ann, 0, &cfg).unwrap();
        for row in features.rows() {
            for &p in model.imitate(row).unwrap().probs() {
                assert!((p - 0.5).abs() < 0.01);
            }
        }
    }

    #[test]
    fn training_is_deterministic_and_descends() {
        let (features, ann) = toy();
        let cfg = ImitatorTrainConfig { seed: 9, ..ImitatorTrainConfig::default() };
        let (a, trace) = fit_imitator_traced(&features, &ann, 0, &cfg).unwrap();
        let b = fit_imitator(&features, &ann, 0, &cfg).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!(trace.last().unwrap() <= &trace[0]);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert_eq!(agreement_rate(&a, &features, &ann, 0).unwrap(), 1.0);
    }

    #[test]
    fn worker_without_annotations_falls_back() {
        let (features, ann) = toy();
        let model = fit_imitator(&features, &ann, 1, &ImitatorTrainConfig::default()).unwrap();
        assert!(model.is_fallback());
        assert_eq!(model.imitate(features.row(2)).unwrap().probs(), &[0.5, 0.5]);
        assert!(agreement_rate(&model, &features, &ann, 1).is_err());
    }

    #[test]
    fn imitate_edge_cases() {
        let zero = ImitatorModel::<f64>::new(0, 3, vec![0.0], vec![1.0], vec![0.0; 6]).unwrap();
        for &p in zero.imitate(&[4.0]).unwrap().probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(zero.imitate(&[1.0, 2.0]).is_err());

        let sharp = ImitatorModel::<f64>::new(0, 3, vec![0.0], vec![1.0], vec![0.0, 0.0, 0.0, 50.0, 0.0, 0.0]).unwrap();
        let out = sharp.imitate(&[0.3]).unwrap();
        assert!(out.probs()[1] > 1.0 - 1e-6);

        let (features, _) = toy();
        for row in features.rows() {
            let s: f64 = sharp.imitate(&row[..1]).unwrap().probs().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn random_imitator_is_constant() {
        let two = random_imitator::<f64>(2);
        assert_eq!(two.imitate(&[3.0]).unwrap().probs(), &[0.5, 0.5]);
        let five = random_imitator::<f64>(5);
        let a = five.imitate(&[1.0, 2.0]).unwrap();
        let b = five.imitate(&[-7.0]).unwrap();
        assert_eq!(a, b);
        for &p in a.probs() {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn agreement_extremes() {
        let (features, ann) = toy();
        // weight on the first standardized feature sends small x to label 0
        let model = fit_imitator(&features, &ann, 0, &ImitatorTrainConfig::default()).unwrap();
        assert_eq!(agreement_rate(&model, &features, &ann, 0).unwrap(), 1.0);
        let flipped: Vec<f64> = {
            let w = model.weights();
            let cols = w.len() / 2;
            w[cols..].iter().chain(&w[..cols]).copied().collect()
        };
        let (mean, scale) = standardization(&features);
        let opposite = ImitatorModel::new(0, 2, mean, scale, flipped).unwrap();
        assert_eq!(agreement_rate(&opposite, &features, &ann, 0).unwrap(), 0.0);

        let all_first = AnnotationMatrix::from_triples(1, 6, 2, (0..6).map(|j| (0, j, 0))).unwrap();
        let uniform = ImitatorModel::new(0, 2, vec![0.0; 2], vec![1.0; 2], vec![0.0; 6]).unwrap();
        assert_eq!(agreement_rate(&uniform, &features, &all_first, 0).unwrap(), 1.0);
    }

    #[test]
    fn binary_round_trip() {
        let (features, ann) = toy();
        let model = fit_imitator(&features, &ann, 0, &ImitatorTrainConfig::default()).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(buf[0], FORMAT_TAG);
        let back = ImitatorModel::<f64>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, model);
        buf[0] = 7;
        assert!(ImitatorModel::<f64>::read_from(&mut buf.as_slice()).is_err());
        assert!(ImitatorModel::<f64>::read_from(&mut &buf[..10]).is_err());
    }
}

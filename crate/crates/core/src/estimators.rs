//! Estimators of the ideal-world mean score `v(y)` for one item, weight
//! clipping with automatic threshold choice, and closed-form bias/variance
//! calculators for simulation studies.
//!
//! All estimators take a [`ScoreModel`] so the same code serves Dawid-Skene
//! (log-confusion) and majority-vote (indicator) scores.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{input, Result};
use crate::model::{expected_score, EstimateVector, ScoreModel, SoftAnnotation};
use crate::scalar::Scalar;

/// Per-worker inclusion probabilities for Poisson sampling of one item.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan<T> {
    probs: Vec<T>,
}

impl<T: Scalar> SamplingPlan<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return input("sampling plan needs at least one worker");
        }
        if let Some(p) = probs.iter().find(|&&p| !(p > T::zero() && p <= T::one())) {
            return input(format!("inclusion probability {p} outside (0, 1]"));
        }
        Ok(Self { probs })
    }

    pub fn uniform(m: usize, pi: T) -> Result<Self> {
        Self::new(vec![pi; m])
    }

    pub fn m(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, worker: usize) -> T {
        self.probs[worker]
    }

    /// Expected number of annotations, `sum_i pi_i`.
    pub fn expected_cost(&self) -> T {
        self.probs.iter().copied().sum()
    }
}

/// The workers actually polled for an item and what they answered.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleRealization {
    labels: BTreeMap<usize, usize>,
}

impl SampleRealization {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut labels = BTreeMap::new();
        for (worker, label) in pairs {
            if labels.insert(worker, label).is_some() {
                return input(format!("worker {worker} appears twice in a realization"));
            }
        }
        Ok(Self { labels })
    }

    pub fn is_included(&self, worker: usize) -> bool {
        self.labels.contains_key(&worker)
    }

    pub fn label(&self, worker: usize) -> Option<usize> {
        self.labels.get(&worker).copied()
    }

    pub fn included(&self) -> impl Iterator<Item = usize> + '_ {
        self.labels.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&w, &l)| (w, l))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self, m: usize, k: usize) -> Result<()> {
        for (w, l) in self.iter() {
            if w >= m || l >= k {
                return input(format!("realization entry (worker {w}, label {l}) out of range"));
            }
        }
        Ok(())
    }
}

/// Importance-weight cap `eta >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipThreshold<T> {
    eta: T,
}

impl<T: Scalar> ClipThreshold<T> {
    pub fn new(eta: T) -> Result<Self> {
        if !(eta >= T::one()) {
            return input(format!("clip threshold must be at least 1, got {eta}"));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    /// `min(eta, 1/pi)`.
    pub fn weight(&self, pi: T) -> T {
        self.eta.min(pi.recip())
    }
}

fn check_dims<T: Scalar>(model: &ScoreModel<T>, m: usize, what: &str) -> Result<()> {
    if m != model.m() {
        return input(format!("{what} covers {m} workers, model has {}", model.m()));
    }
    Ok(())
}

/// Everyone labels the item.
pub fn estimate_iw<T: Scalar>(model: &ScoreModel<T>, labels: &[usize]) -> Result<EstimateVector<T>> {
    check_dims(model, labels.len(), "label list")?;
    let k = model.k();
    if let Some(&l) = labels.iter().find(|&&l| l >= k) {
        return input(format!("label {l} outside 0..{k}"));
    }
    let m = T::from_count(labels.len());
    let values =
        (0..k).map(|y| labels.iter().enumerate().map(|(i, &l)| model.table(i).score(y, l)).sum::<T>() / m).collect();
    Ok(EstimateVector::new(values, model.offset(), labels.len()))
}

/// Poisson sampling: each worker is included independently with its own
/// probability. Returns the included workers in increasing order.
pub fn sample_workers<T: Scalar, R: Rng + ?Sized>(plan: &SamplingPlan<T>, rng: &mut R) -> Vec<usize> {
    plan.probs()
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let u: f64 = rng.gen();
            (u < p.as_f64()).then_some(i)
        })
        .collect()
}

/// Inverse-propensity weighted mean over the polled workers.
pub fn estimate_is<T: Scalar>(
    model: &ScoreModel<T>,
    real: &SampleRealization,
    plan: &SamplingPlan<T>,
) -> Result<EstimateVector<T>> {
    check_dims(model, plan.m(), "sampling plan")?;
    real.check(model.m(), model.k())?;
    let m = T::from_count(model.m());
    let values = (0..model.k())
        .map(|y| real.iter().map(|(i, l)| model.table(i).score(y, l) / plan.prob(i)).sum::<T>() / m)
        .collect();
    Ok(EstimateVector::new(values, model.offset(), real.len()))
}

/// Plug the imitators' soft annotations into the ideal-world estimator.
pub fn estimate_dm<T: Scalar>(model: &ScoreModel<T>, softs: &[SoftAnnotation<T>]) -> Result<EstimateVector<T>> {
    check_dims(model, softs.len(), "soft annotations")?;
    let m = T::from_count(model.m());
    let values = (0..model.k())
        .map(|y| softs.iter().enumerate().map(|(i, s)| expected_score(model.table(i), s, y)).sum::<T>() / m)
        .collect();
    Ok(EstimateVector::new(values, model.offset(), 0))
}

/// Shared body of the doubly robust estimators; `weight(pi)` maps an
/// inclusion probability to the importance weight actually applied.
fn doubly_robust<T: Scalar>(
    model: &ScoreModel<T>,
    softs: &[SoftAnnotation<T>],
    real: &SampleRealization,
    plan: &SamplingPlan<T>,
    weight: impl Fn(T) -> T,
) -> Result<EstimateVector<T>> {
    check_dims(model, softs.len(), "soft annotations")?;
    check_dims(model, plan.m(), "sampling plan")?;
    real.check(model.m(), model.k())?;
    let m = T::from_count(model.m());
    let weights: Vec<T> = plan.probs().iter().map(|&p| weight(p)).collect();
    let values = (0..model.k())
        .map(|y| {
            let mut total = T::zero();
            for (i, soft) in softs.iter().enumerate() {
                let table = model.table(i);
                let baseline = expected_score(table, soft, y);
                total += match real.label(i) {
                    None => baseline,
                    // unit weight: the correction reproduces the score exactly
                    Some(l) if weights[i] == T::one() => table.score(y, l),
                    Some(l) => baseline + weights[i] * (table.score(y, l) - baseline),
                };
            }
            total / m
        })
        .collect();
    Ok(EstimateVector::new(values, model.offset(), real.len()))
}

/// Direct-method baseline corrected by inverse-propensity weighted residuals.
pub fn estimate_dr<T: Scalar>(
    model: &ScoreModel<T>,
    softs: &[SoftAnnotation<T>],
    real: &SampleRealization,
    plan: &SamplingPlan<T>,
) -> Result<EstimateVector<T>> {
    doubly_robust(model, softs, real, plan, |p| p.recip())
}

/// [`estimate_dr`] with each importance weight capped at `clip.eta()`.
pub fn estimate_dr_clipped<T: Scalar>(
    model: &ScoreModel<T>,
    softs: &[SoftAnnotation<T>],
    real: &SampleRealization,
    plan: &SamplingPlan<T>,
    clip: ClipThreshold<T>,
) -> Result<EstimateVector<T>> {
    doubly_robust(model, softs, real, plan, |p| clip.weight(p))
}

/// `|eta - #{i : 1/pi_i > eta} / sqrt(m)|`, the clipping objective.
pub fn threshold_objective<T: Scalar>(plan: &SamplingPlan<T>, eta: T) -> T {
    let over = plan.probs().iter().filter(|&&p| p.recip() > eta).count();
    (eta - T::from_count(over) / T::from_count(plan.m()).sqrt()).abs()
}

/// Pick `eta >= 1` minimizing [`threshold_objective`].
///
/// The count term is a step function of `eta` that only changes at the
/// inverse propensities, so on each interval between consecutive breakpoints
/// the objective is `|eta - c|` for a constant `c`. The candidates are the
/// breakpoints, the clamp of `c` into each interval, and the last float
/// below each interval's open right end. Ties go to the smallest `eta`.
pub fn auto_threshold<T: Scalar>(plan: &SamplingPlan<T>) -> ClipThreshold<T> {
    let m = plan.m();
    let root_m = T::from_count(m).sqrt();
    let mut inv: Vec<T> = plan.probs().iter().map(|p| p.recip()).collect();
    inv.sort_by(|a, b| a.partial_cmp(b).expect("finite propensities"));

    let mut bounds: Vec<T> = vec![T::one()];
    bounds.extend(inv.iter().copied().filter(|&b| b > T::one()));
    bounds.dedup();

    let mut best = (T::infinity(), T::one());
    let mut consider = |eta: T| {
        // number of inverse propensities strictly above eta
        let over = m - inv.partition_point(|&b| b <= eta);
        let f = (eta - T::from_count(over) / root_m).abs();
        if f < best.0 || (f == best.0 && eta < best.1) {
            best = (f, eta);
        }
    };
    for (idx, &lo) in bounds.iter().enumerate() {
        consider(lo);
        let over = m - inv.partition_point(|&b| b <= lo);
        let target = T::from_count(over) / root_m;
        match bounds.get(idx + 1) {
            Some(&hi) => {
                let below_hi = hi - hi * T::epsilon();
                if below_hi > lo {
                    consider(target.max(lo).min(below_hi));
                    consider(below_hi);
                }
            }
            None => consider(target.max(lo)),
        }
    }
    ClipThreshold::new(best.1).expect("candidates are at least one")
}

/// Mean and variance of `S_i(y, l)` with `l ~ dist`, and the mean of
/// `S_i(y, l) - E[S_i(y, l_hat)]`.
fn score_moments<T: Scalar>(
    model: &ScoreModel<T>,
    worker: usize,
    dist: &SoftAnnotation<T>,
    soft: Option<&SoftAnnotation<T>>,
    y: usize,
) -> (T, T, T) {
    let table = model.table(worker);
    let mean = expected_score(table, dist, y);
    let var = dist
        .probs()
        .iter()
        .enumerate()
        .map(|(l, &p)| {
            let dev = table.score(y, l) - mean;
            p * dev * dev
        })
        .sum();
    let resid = match soft {
        Some(s) => mean - expected_score(table, s, y),
        None => mean,
    };
    (mean, var, resid)
}

fn check_theory_inputs<T: Scalar>(
    model: &ScoreModel<T>,
    dists: &[SoftAnnotation<T>],
    softs: Option<&[SoftAnnotation<T>]>,
    plan: &SamplingPlan<T>,
) -> Result<()> {
    check_dims(model, dists.len(), "worker label distributions")?;
    check_dims(model, plan.m(), "sampling plan")?;
    if let Some(s) = softs {
        check_dims(model, s.len(), "soft annotations")?;
    }
    Ok(())
}

/// Exact variance of [`estimate_is`] for each class, given each worker's
/// true label distribution.
pub fn var_is<T: Scalar>(model: &ScoreModel<T>, dists: &[SoftAnnotation<T>], plan: &SamplingPlan<T>) -> Result<Vec<T>> {
    check_theory_inputs(model, dists, None, plan)?;
    let m2 = T::from_count(model.m() * model.m());
    Ok((0..model.k())
        .map(|y| {
            (0..model.m())
                .map(|i| {
                    let (mean, var, _) = score_moments(model, i, &dists[i], None, y);
                    let inv = plan.prob(i).recip();
                    inv * var + (inv - T::one()) * mean * mean
                })
                .sum::<T>()
                / m2
        })
        .collect())
}

/// Exact variance of [`estimate_dr`] for each class.
pub fn var_dr<T: Scalar>(
    model: &ScoreModel<T>,
    dists: &[SoftAnnotation<T>],
    softs: &[SoftAnnotation<T>],
    plan: &SamplingPlan<T>,
) -> Result<Vec<T>> {
    check_theory_inputs(model, dists, Some(softs), plan)?;
    let m2 = T::from_count(model.m() * model.m());
    Ok((0..model.k())
        .map(|y| {
            (0..model.m())
                .map(|i| {
                    let (_, var, resid) = score_moments(model, i, &dists[i], Some(&softs[i]), y);
                    let inv = plan.prob(i).recip();
                    inv * var + (inv - T::one()) * resid * resid
                })
                .sum::<T>()
                / m2
        })
        .collect())
}

/// Exact absolute bias and variance of [`estimate_dr_clipped`] per class.
pub fn bias_var_dr_clipped<T: Scalar>(
    model: &ScoreModel<T>,
    dists: &[SoftAnnotation<T>],
    softs: &[SoftAnnotation<T>],
    plan: &SamplingPlan<T>,
    clip: ClipThreshold<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    check_theory_inputs(model, dists, Some(softs), plan)?;
    let m = T::from_count(model.m());
    let eta = clip.eta();
    let mut bias = Vec::with_capacity(model.k());
    let mut variance = Vec::with_capacity(model.k());
    for y in 0..model.k() {
        let mut b = T::zero();
        let mut v = T::zero();
        for i in 0..model.m() {
            let (_, var, resid) = score_moments(model, i, &dists[i], Some(&softs[i]), y);
            let pi = plan.prob(i);
            let inv = pi.recip();
            b += (pi * eta - T::one()).min(T::zero()) * resid;
            v += (eta * eta * pi * pi).min(T::one()) * (inv * var + (inv - T::one()) * resid * resid);
        }
        bias.push((b / m).abs());
        variance.push(v / (m * m));
    }
    Ok((bias, variance))
}

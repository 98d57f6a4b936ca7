//! Exact moments of the estimators by brute-force enumeration of every
//! joint label outcome and every inclusion pattern.

use std::fmt;
use std::str::FromStr;

use crate::error::{input, Error, Result};
use crate::estimators::{
    estimate_dm, estimate_dr, estimate_dr_clipped, estimate_is, estimate_iw, ClipThreshold, SampleRealization,
    SamplingPlan,
};
use crate::model::{ScoreModel, SoftAnnotation};
use crate::scalar::Scalar;

pub const MAX_ENUM_WORKERS: usize = 6;
pub const MAX_ENUM_OUTCOMES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorId {
    Iw,
    Is,
    Dm,
    Dr,
    DrClipped,
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iw => "iw",
            Self::Is => "is",
            Self::Dm => "dm",
            Self::Dr => "dr",
            Self::DrClipped => "dr-clipped",
        })
    }
}

impl FromStr for EstimatorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iw" => Ok(Self::Iw),
            "is" => Ok(Self::Is),
            "dm" => Ok(Self::Dm),
            "dr" => Ok(Self::Dr),
            "dr-clipped" => Ok(Self::DrClipped),
            _ => input(format!("unknown estimator '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
}

/// Checks the tractability guard and returns the number of weighted
/// outcomes that would be visited.
pub fn enumeration_size(m: usize, k: usize) -> Result<usize> {
    if m > MAX_ENUM_WORKERS {
        return input(format!("enumeration limited to {MAX_ENUM_WORKERS} workers, got {m}"));
    }
    let size = k.checked_pow(m as u32).and_then(|v| v.checked_mul(1 << m)).filter(|&v| v <= MAX_ENUM_OUTCOMES);
    size.ok_or_else(|| Error::Input(format!("k^m * 2^m exceeds {MAX_ENUM_OUTCOMES} for k={k}, m={m}")))
}

/// Every (probability, estimate) pair over joint label outcomes and inclusion
/// patterns of positive probability. `dists[i]` is worker `i`'s true label
/// distribution; `estimate` sees the full label vector and the realization
/// holding the included workers' labels.
pub fn enumerate_outcomes<T, F>(
    dists: &[SoftAnnotation<T>],
    plan: &SamplingPlan<T>,
    mut estimate: F,
) -> Result<Vec<(T, Vec<T>)>>
where
    T: Scalar,
    F: FnMut(&[usize], &SampleRealization) -> Result<Vec<T>>,
{
    let m = dists.len();
    let k = dists.first().map_or(0, SoftAnnotation::k);
    enumeration_size(m, k)?;
    if plan.m() != m {
        return input(format!("plan covers {} workers, {m} label distributions given", plan.m()));
    }
    if dists.iter().any(|s| s.k() != k) {
        return input("label distributions disagree on class count");
    }
    let mut out = Vec::new();
    let mut labels = vec![0usize; m];
    for code in 0..k.pow(m as u32) {
        let mut rest = code;
        let mut p_labels = T::one();
        for (i, l) in labels.iter_mut().enumerate() {
            *l = rest % k;
            rest /= k;
            p_labels *= dists[i].probs()[*l];
        }
        if p_labels == T::zero() {
            continue;
        }
        for mask in 0..(1usize << m) {
            let mut p = p_labels;
            for i in 0..m {
                let pi = plan.prob(i);
                p *= if mask >> i & 1 == 1 { pi } else { T::one() - pi };
            }
            if p == T::zero() {
                continue;
            }
            let real = SampleRealization::new((0..m).filter(|i| mask >> i & 1 == 1).map(|i| (i, labels[i])))?;
            out.push((p, estimate(&labels, &real)?));
        }
    }
    Ok(out)
}

/// Neumaier summation.
fn compensated_sum<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and variance per class of a weighted outcome list.
///
/// Moments are taken about the first outcome's value, so an estimator that is
/// constant across outcomes reports a variance of exactly zero.
pub fn moments_of<T: Scalar>(outcomes: &[(T, Vec<T>)]) -> Result<Moments<T>> {
    let (_, base) = outcomes.first().ok_or_else(|| Error::Input("no outcome has positive probability".into()))?;
    let mass = compensated_sum(outcomes.iter().map(|(p, _)| *p));
    let mut mean = Vec::with_capacity(base.len());
    let mut variance = Vec::with_capacity(base.len());
    for y in 0..base.len() {
        let shift = compensated_sum(outcomes.iter().map(|(p, v)| *p * (v[y] - base[y]))) / mass;
        let mu = base[y] + shift;
        let var = compensated_sum(outcomes.iter().map(|(p, v)| {
            let dev = v[y] - mu;
            *p * dev * dev
        })) / mass;
        mean.push(mu);
        variance.push(var);
    }
    Ok(Moments { mean, variance })
}

/// Exact mean and variance per class of the chosen estimator.
pub fn enumerate_oracle<T: Scalar>(
    model: &ScoreModel<T>,
    dists: &[SoftAnnotation<T>],
    softs: &[SoftAnnotation<T>],
    plan: &SamplingPlan<T>,
    id: EstimatorId,
    clip: Option<ClipThreshold<T>>,
) -> Result<Moments<T>> {
    if dists.len() != model.m() {
        return input(format!("{} label distributions for {} workers", dists.len(), model.m()));
    }
    if id == EstimatorId::DrClipped && clip.is_none() {
        return input("clipped estimator needs a threshold");
    }
    let outcomes = enumerate_outcomes(dists, plan, |labels, real| {
        let est = match id {
            EstimatorId::Iw => estimate_iw(model, labels)?,
            EstimatorId::Is => estimate_is(model, real, plan)?,
            EstimatorId::Dm => estimate_dm(model, softs)?,
            EstimatorId::Dr => estimate_dr(model, softs, real, plan)?,
            EstimatorId::DrClipped => estimate_dr_clipped(model, softs, real, plan, clip.expect("checked above"))?,
        };
        Ok(est.values)
    })?;
    moments_of(&outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(k: usize, l: usize) -> SoftAnnotation<f64> {
        SoftAnnotation::point_mass(k, l)
    }

    #[test]
    fn guard() {
        assert!(enumeration_size(7, 2).is_err());
        assert!(enumeration_size(6, 10).is_err());
        assert_eq!(enumeration_size(4, 3).unwrap(), 81 * 16);
        let model = ScoreModel::<f64>::majority_vote(2, 7);
        let dists = vec![point(2, 0); 7];
        let plan = SamplingPlan::uniform(7, 0.5).unwrap();
        assert!(enumerate_oracle(&model, &dists, &dists, &plan, EstimatorId::Is, None).is_err());
    }

    #[test]
    fn single_worker_importance_sampling() {
        let model = ScoreModel::<f64>::majority_vote(2, 1);
        let dists = vec![point(2, 0)];
        let plan = SamplingPlan::new(vec![0.5]).unwrap();
        let mom = enumerate_oracle(&model, &dists, &dists, &plan, EstimatorId::Is, None).unwrap();
        assert_eq!(mom.mean, vec![1.0, 0.0]);
        assert_eq!(mom.variance, vec![1.0, 0.0]);
    }

    #[test]
    fn perfect_imitation_has_no_variance() {
        let model = ScoreModel::<f64>::majority_vote(3, 3);
        let dists = vec![point(3, 0), point(3, 2), point(3, 0)];
        let plan = SamplingPlan::new(vec![0.3, 0.6, 0.9]).unwrap();
        let mom = enumerate_oracle(&model, &dists, &dists, &plan, EstimatorId::Dr, None).unwrap();
        assert_eq!(mom.variance, vec![0.0; 3]);
        let iw = enumerate_oracle(&model, &dists, &dists, &plan, EstimatorId::Iw, None).unwrap();
        assert_eq!(mom.mean, iw.mean);
    }

    #[test]
    fn clipped_example() {
        let model = ScoreModel::<f64>::majority_vote(2, 1);
        let dists = vec![point(2, 0)];
        let softs = vec![SoftAnnotation::uniform(2)];
        let plan = SamplingPlan::new(vec![0.5]).unwrap();
        let clip = Some(ClipThreshold::new(1.0).unwrap());
        assert!(enumerate_oracle(&model, &dists, &softs, &plan, EstimatorId::DrClipped, None).is_err());
        let mom = enumerate_oracle(&model, &dists, &softs, &plan, EstimatorId::DrClipped, clip).unwrap();
        assert_eq!(mom.mean, vec![0.75, 0.25]);
        assert_eq!(mom.variance[0], 0.0625);
    }

    #[test]
    fn estimator_names_parse() {
        for id in [EstimatorId::Iw, EstimatorId::Is, EstimatorId::Dm, EstimatorId::Dr, EstimatorId::DrClipped] {
            assert_eq!(id.to_string().parse::<EstimatorId>().unwrap(), id);
        }
        assert!("ips".parse::<EstimatorId>().is_err());
    }
}

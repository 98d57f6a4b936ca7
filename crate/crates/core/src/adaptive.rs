//! Confidence-margin driven item and worker selection.
//!
//! Item selection (AIS) accepts the imitators' consensus when its posterior
//! margin is large enough and polls nobody. Worker selection (AWS) spends
//! the sampling budget on the workers whose imitated report discriminates
//! best between classes for this particular item.

use rand::Rng;

use crate::error::{input, Error, Result};
use crate::estimators::{
    auto_threshold, estimate_dr, estimate_dr_clipped, sample_workers, ClipThreshold, SampleRealization, SamplingPlan,
};
use crate::model::{ds_soft_posterior, DsParams, EstimateVector, ScoreModel, SoftAnnotation};
use crate::scalar::Scalar;

/// Smallest inclusion probability AWS assigns, so a worker whose imitated
/// report carries no information can still be sampled.
pub const MIN_INCLUSION_PROB: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaMode<T> {
    Unclipped,
    Fixed(ClipThreshold<T>),
    Automatic,
}

/// Distribution whose margin scores a worker under AWS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarginBasis {
    /// Likelihood of the imitated report, normalized over the true label.
    #[default]
    Likelihood,
    /// The same likelihood weighted by the class prior.
    Posterior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig<T> {
    pub ais: bool,
    pub aws: bool,
    /// Accept the direct-method label when the posterior margin exceeds this.
    pub rho: T,
    /// Scale applied to the normalized worker scores.
    pub lambda: T,
    /// Uniform inclusion probability when AWS is off.
    pub base_pi: T,
    pub eta_mode: EtaMode<T>,
    pub margin_basis: MarginBasis,
}

impl<T: Scalar> AdaptiveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= T::zero() && self.rho <= T::one()) {
            return input(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return input(format!("lambda must be positive, got {}", self.lambda));
        }
        if !(self.base_pi > T::zero() && self.base_pi <= T::one()) {
            return input(format!("base_pi must lie in (0, 1], got {}", self.base_pi));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    AcceptDm,
    Escalate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveDecision<T> {
    pub route: Route,
    pub estimate: EstimateVector<T>,
    pub margin: T,
}

/// Largest entry minus the second largest.
pub fn confidence_margin<T: Scalar>(p: &[T]) -> Result<T> {
    if p.len() < 2 {
        return input("confidence margin needs at least two entries");
    }
    let (mut top, mut second) = (T::neg_infinity(), T::neg_infinity());
    for &x in p {
        if x > top {
            second = top;
            top = x;
        } else if x > second {
            second = x;
        }
    }
    Ok(top - second)
}

/// Direct-method posterior from the imitated reports, its margin, and the
/// resulting route.
pub fn ais_route<T: Scalar>(
    params: &DsParams<T>,
    softs: &[SoftAnnotation<T>],
    cfg: &AdaptiveConfig<T>,
) -> Result<(Route, SoftAnnotation<T>, T)> {
    let post = ds_soft_posterior(params, softs)?;
    let margin = confidence_margin(post.probs())?;
    let route = if margin > cfg.rho { Route::AcceptDm } else { Route::Escalate };
    Ok((route, post, margin))
}

/// Per-worker margins of the imitated-report likelihood, normalized to sum
/// to one. All zeros when no worker's report discriminates at all.
pub fn worker_scores<T: Scalar>(
    params: &DsParams<T>,
    softs: &[SoftAnnotation<T>],
    basis: MarginBasis,
) -> Result<Vec<T>> {
    if softs.len() != params.m() {
        return input(format!("expected {} soft annotations, got {}", params.m(), softs.len()));
    }
    let mut gammas = Vec::with_capacity(softs.len());
    for (mu, soft) in params.confusions().iter().zip(softs) {
        let mut lik = mu.soft_likelihood(soft);
        if basis == MarginBasis::Posterior {
            for (v, &p) in lik.iter_mut().zip(params.prior()) {
                *v *= p;
            }
        }
        let total: T = lik.iter().copied().sum();
        lik.iter_mut().for_each(|v| *v /= total);
        gammas.push(confidence_margin(&lik)?);
    }
    let total: T = gammas.iter().copied().sum();
    if total > T::zero() {
        gammas.iter_mut().for_each(|g| *g /= total);
    }
    Ok(gammas)
}

/// Inclusion probabilities `min(lambda * gamma_i, 1)`, floored at
/// [`MIN_INCLUSION_PROB`]. Falls back to `min(lambda / m, 1)` for everyone
/// when every score is zero.
pub fn aws_plan<T: Scalar>(
    params: &DsParams<T>,
    softs: &[SoftAnnotation<T>],
    cfg: &AdaptiveConfig<T>,
) -> Result<SamplingPlan<T>> {
    let m = params.m();
    if m < 2 {
        return input("adaptive worker selection needs at least two workers");
    }
    let gammas = worker_scores(params, softs, cfg.margin_basis)?;
    let floor = T::lit(MIN_INCLUSION_PROB);
    let probs = if gammas.iter().all(|&g| g == T::zero()) {
        vec![(cfg.lambda / T::from_count(m)).min(T::one()).max(floor); m]
    } else {
        gammas.iter().map(|&g| (cfg.lambda * g).min(T::one()).max(floor)).collect()
    };
    SamplingPlan::new(probs)
}

/// One item through the adaptive pipeline. `oracle(i)` returns worker `i`'s
/// label and is called only for sampled workers, at most once each.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive<T, R, F>(
    params: &DsParams<T>,
    model: &ScoreModel<T>,
    softs: &[SoftAnnotation<T>],
    mut oracle: F,
    cfg: &AdaptiveConfig<T>,
    rng: &mut R,
) -> Result<AdaptiveDecision<T>>
where
    T: Scalar,
    R: Rng + ?Sized,
    F: FnMut(usize) -> Result<usize>,
{
    cfg.validate()?;
    let (route, post, margin) = ais_route(params, softs, cfg)?;
    if cfg.ais && route == Route::AcceptDm {
        let zeros = vec![T::zero(); post.k()];
        let estimate = EstimateVector::new(post.probs().to_vec(), &zeros, 0);
        return Ok(AdaptiveDecision { route, estimate, margin });
    }

    let plan = if cfg.aws { aws_plan(params, softs, cfg)? } else { SamplingPlan::uniform(model.m(), cfg.base_pi)? };
    let mut answers = Vec::new();
    for worker in sample_workers(&plan, rng) {
        let label = oracle(worker).map_err(|e| match e {
            Error::AnnotationUnavailable { .. } => e,
            other => Error::AnnotationUnavailable { worker, msg: other.to_string() },
        })?;
        if label >= model.k() {
            return Err(Error::AnnotationUnavailable {
                worker,
                msg: format!("oracle returned label {label} outside 0..{}", model.k()),
            });
        }
        answers.push((worker, label));
    }
    let real = SampleRealization::new(answers)?;
    let estimate = match cfg.eta_mode {
        EtaMode::Unclipped => estimate_dr(model, softs, &real, &plan)?,
        EtaMode::Fixed(clip) => estimate_dr_clipped(model, softs, &real, &plan, clip)?,
        EtaMode::Automatic => estimate_dr_clipped(model, softs, &real, &plan, auto_threshold(&plan))?,
    };
    Ok(AdaptiveDecision { route: Route::Escalate, estimate, margin })
}

//! Dawid-Skene fitting by expectation-maximization, initialized from soft
//! majority vote.

use rayon::prelude::*;

use crate::error::{input, Result};
use crate::model::{
    floor_simplex, AnnotationMatrix, ConfusionMatrix, DsParams, ProblemDims, SoftAnnotation, SMOOTHING_FLOOR,
};
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the objective improves by less than this.
    pub tol: f64,
    /// Dirichlet pseudo-count added to every prior and confusion count.
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6, smoothing: 1.0 }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return input("em max_iters must be at least 1");
        }
        if !(self.tol >= 0.0) {
            return input(format!("em tol must be nonnegative, got {}", self.tol));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return input(format!("em smoothing must be nonnegative, got {}", self.smoothing));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EmFit<T> {
    pub params: DsParams<T>,
    /// Observed-data log-likelihood of the parameters at each E-step.
    pub log_likelihood: Vec<T>,
    /// Log-likelihood plus the log Dirichlet penalty implied by `smoothing`.
    /// This is the quantity EM ascends; it equals `log_likelihood` when
    /// smoothing is zero.
    pub objective: Vec<T>,
    pub converged: bool,
}

/// Normalized vote counts per item; unannotated items get the uniform vector.
pub fn mv_labels<T: Scalar>(ann: &AnnotationMatrix) -> Vec<SoftAnnotation<T>> {
    let k = ann.k();
    (0..ann.n())
        .map(|j| {
            let obs = ann.item(j);
            if obs.is_empty() {
                return SoftAnnotation::uniform(k);
            }
            let mut counts = vec![T::zero(); k];
            for &(_, l) in obs {
                counts[l] += T::one();
            }
            SoftAnnotation::from_weights(counts).expect("at least one vote")
        })
        .collect()
}

pub fn em_fit<T: Scalar>(ann: &AnnotationMatrix, dims: ProblemDims, cfg: &EmConfig) -> Result<EmFit<T>> {
    cfg.validate()?;
    if ann.is_empty() {
        return input("cannot fit a Dawid-Skene model without annotations");
    }
    if dims.m != ann.m() || dims.n != ann.n() || dims.k != ann.k() {
        return input("problem dimensions disagree with the annotation matrix");
    }
    let alpha = T::lit(cfg.smoothing);
    let tol = T::lit(cfg.tol);
    let annotated: Vec<usize> = (0..ann.n()).filter(|&j| !ann.item(j).is_empty()).collect();

    let init: Vec<Vec<T>> = {
        let mv = mv_labels::<T>(ann);
        annotated.iter().map(|&j| mv[j].probs().to_vec()).collect()
    };
    let mut params = m_step(ann, &annotated, &init, alpha)?;

    let mut fit = EmFit { params: params.clone(), log_likelihood: Vec::new(), objective: Vec::new(), converged: false };
    for _ in 0..cfg.max_iters {
        let (posteriors, ll) = e_step(ann, &annotated, &params);
        let obj = ll + log_penalty(&params, alpha);
        let improved = fit.objective.last().map(|&prev| obj - prev);
        fit.log_likelihood.push(ll);
        fit.objective.push(obj);
        fit.params = params.clone();
        if let Some(delta) = improved {
            if delta < tol {
                fit.converged = true;
                break;
            }
        }
        params = m_step(ann, &annotated, &posteriors, alpha)?;
    }
    Ok(fit)
}

/// Posteriors for the annotated items and the observed-data log-likelihood.
fn e_step<T: Scalar>(ann: &AnnotationMatrix, items: &[usize], params: &DsParams<T>) -> (Vec<Vec<T>>, T) {
    let log_prior: Vec<T> = params.prior().iter().map(|p| p.ln()).collect();
    let per_item: Vec<(Vec<T>, T)> = items
        .par_iter()
        .map(|&j| {
            let mut logs = log_prior.clone();
            for &(i, l) in ann.item(j) {
                let mu = params.confusion(i);
                for (y, lp) in logs.iter_mut().enumerate() {
                    *lp += mu.prob(l, y).ln();
                }
            }
            let lse = log_sum_exp(&logs);
            for lp in logs.iter_mut() {
                *lp = (*lp - lse).exp();
            }
            (logs, lse)
        })
        .collect();
    let mut ll = T::zero();
    let mut posteriors = Vec::with_capacity(per_item.len());
    for (post, lse) in per_item {
        ll += lse;
        posteriors.push(post);
    }
    (posteriors, ll)
}

fn m_step<T: Scalar>(ann: &AnnotationMatrix, items: &[usize], posteriors: &[Vec<T>], alpha: T) -> Result<DsParams<T>> {
    let k = ann.k();
    let mut prior = vec![alpha; k];
    let mut counts = vec![vec![alpha; k * k]; ann.m()];
    for (&j, q) in items.iter().zip(posteriors) {
        for (p, &qy) in prior.iter_mut().zip(q) {
            *p += qy;
        }
        for &(i, l) in ann.item(j) {
            for (y, &qy) in q.iter().enumerate() {
                counts[i][l * k + y] += qy;
            }
        }
    }
    floor_simplex(&mut prior, T::lit(SMOOTHING_FLOOR));
    let confusions = counts
        .into_iter()
        .map(|c| {
            // A worker with no annotations and no smoothing has empty columns.
            if c.iter().all(|&x| x == T::zero()) {
                Ok(ConfusionMatrix::uniform(k))
            } else {
                confusion_from_counts(k, c)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    DsParams::new(prior, confusions)
}

fn confusion_from_counts<T: Scalar>(k: usize, mut counts: Vec<T>) -> Result<ConfusionMatrix<T>> {
    for y in 0..k {
        if (0..k).all(|l| counts[l * k + y] == T::zero()) {
            for l in 0..k {
                counts[l * k + y] = T::one();
            }
        }
    }
    ConfusionMatrix::from_column_weights(k, counts)
}

fn log_penalty<T: Scalar>(params: &DsParams<T>, alpha: T) -> T {
    if alpha == T::zero() {
        return T::zero();
    }
    let prior: T = params.prior().iter().map(|p| p.ln()).sum();
    let conf: T = params.confusions().iter().flat_map(|c| c.as_slice().iter().map(|p| p.ln())).sum();
    alpha * (prior + conf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(ann: &AnnotationMatrix) -> ProblemDims {
        ProblemDims::new(ann.n(), ann.m(), ann.k(), 1).unwrap()
    }

    #[test]
    fn mv_label_counts() {
        let ann =
            AnnotationMatrix::from_triples(3, 3, 3, [(0, 0, 0), (1, 0, 0), (2, 0, 1), (0, 2, 2), (1, 2, 2)]).unwrap();
        let mv = mv_labels::<f64>(&ann);
        assert_eq!(mv[0].probs(), &[2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(mv[1].probs(), &[1.0 / 3.0; 3]);
        assert_eq!(mv[2].probs(), &[0.0, 0.0, 1.0]);

        let empty = AnnotationMatrix::new(1, 1, 4);
        assert_eq!(mv_labels::<f64>(&empty)[0].probs(), &[0.25; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let empty = AnnotationMatrix::new(2, 2, 2);
        assert!(em_fit::<f64>(&empty, dims(&empty), &EmConfig::default()).is_err());
        let ann = AnnotationMatrix::from_triples(2, 2, 2, [(0, 0, 0)]).unwrap();
        let cfg = EmConfig { max_iters: 0, ..EmConfig::default() };
        assert!(em_fit::<f64>(&ann, dims(&ann), &cfg).is_err());
        let wrong = ProblemDims::new(3, 2, 2, 1).unwrap();
        assert!(em_fit::<f64>(&ann, wrong, &EmConfig::default()).is_err());
    }

    #[test]
    fn unanimous_label_concentrates_prior() {
        let triples = (0..50).flat_map(|j| (0..4).map(move |i| (i, j, 0)));
        let ann = AnnotationMatrix::from_triples(4, 50, 2, triples).unwrap();
        let fit = em_fit::<f64>(&ann, dims(&ann), &EmConfig::default()).unwrap();
        assert!(fit.params.prior()[0] > 0.9, "prior {:?}", fit.params.prior());
    }

    /// Three classes, five workers with known confusions, 200 items.
    fn synthetic(seed: u64) -> (AnnotationMatrix, Vec<usize>, Vec<ConfusionMatrix<f64>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let accs = [0.9, 0.85, 0.8, 0.75, 0.7];
        let truth_conf: Vec<_> = accs.iter().map(|&a| ConfusionMatrix::symmetric(3, a).unwrap()).collect();
        let labels: Vec<usize> = (0..200).map(|_| rng.gen_range(0..3)).collect();
        let mut ann = AnnotationMatrix::new(5, 200, 3);
        for (j, &y) in labels.iter().enumerate() {
            for (i, mu) in truth_conf.iter().enumerate() {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut l = 2;
                for cand in 0..3 {
                    acc += mu.prob(cand, y);
                    if u < acc {
                        l = cand;
                        break;
                    }
                }
                ann.insert(i, j, l).unwrap();
            }
        }
        (ann, labels, truth_conf)
    }

    #[test]
    fn recovers_confusions_on_separable_instance() {
        let (ann, labels, _) = synthetic(11);
        let cfg = EmConfig { smoothing: 0.1, ..EmConfig::default() };
        let fit = em_fit::<f64>(&ann, dims(&ann), &cfg).unwrap();
        for i in 0..5 {
            // Empirical confusion of worker i against the hidden truth.
            let mut counts = vec![0.0; 9];
            for &(j, l) in ann.worker(i) {
                counts[l * 3 + labels[j]] += 1.0;
            }
            let empirical = ConfusionMatrix::from_column_weights(3, counts).unwrap();
            let mu = fit.params.confusion(i);
            for y in 0..3 {
                for l in 0..3 {
                    assert!(
                        (mu.prob(l, y) - empirical.prob(l, y)).abs() < 0.05,
                        "worker {i} entry [{l},{y}]: {} vs {}",
                        mu.prob(l, y),
                        empirical.prob(l, y)
                    );
                    if l != y {
                        assert!(mu.prob(y, y) >= mu.prob(l, y));
                    }
                }
            }
        }
    }

    #[test]
    fn objective_never_decreases() {
        for seed in 0..5 {
            let (ann, _, _) = synthetic(seed);
            for smoothing in [0.0, 0.5, 1.0] {
                let cfg = EmConfig { max_iters: 60, tol: 0.0, smoothing };
                let fit = em_fit::<f64>(&ann, dims(&ann), &cfg).unwrap();
                for w in fit.objective.windows(2) {
                    assert!(w[1] - w[0] >= -1e-9, "seed {seed} smoothing {smoothing}: {w:?}");
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let (ann, _, _) = synthetic(3);
        let a = em_fit::<f64>(&ann, dims(&ann), &EmConfig::default()).unwrap();
        let b = em_fit::<f64>(&ann, dims(&ann), &EmConfig::default()).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.objective, b.objective);
    }
}

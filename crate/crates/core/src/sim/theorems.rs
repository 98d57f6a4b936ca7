//! Enumeration-versus-formula battery for the estimators' bias and variance
//! results, run over a seeded catalog of small random instances.

use std::collections::BTreeMap;

use rand::Rng;
use serde::Serialize;

use crate::error::{input, Result};
use crate::estimators::{
    bias_var_dr_clipped, estimate_dr, estimate_iw, var_dr, var_is, ClipThreshold, SampleRealization, SamplingPlan,
};
use crate::model::{ConfusionMatrix, DsParams, EstimateVector, ScoreModel, SoftAnnotation};
use crate::seed::{derive_rng, stage};
use crate::sim::enumerate::{enumerate_oracle, enumerate_outcomes, moments_of, EstimatorId};

pub const MIN_INSTANCES: usize = 50;

/// Signature of the doubly robust estimator under test.
pub type DrFn =
    fn(&ScoreModel<f64>, &[SoftAnnotation<f64>], &SampleRealization, &SamplingPlan<f64>) -> Result<EstimateVector<f64>>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoremSuiteConfig {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for TheoremSuiteConfig {
    fn default() -> Self {
        Self { instances: 60, seed: 0x5eed, tolerance: 1e-12 }
    }
}

/// One small randomized problem.
#[derive(Debug, Clone)]
pub struct Instance {
    pub id: usize,
    pub model: ScoreModel<f64>,
    pub scoring: &'static str,
    /// True label distribution of each worker.
    pub dists: Vec<SoftAnnotation<f64>>,
    pub softs: Vec<SoftAnnotation<f64>>,
    pub plan: SamplingPlan<f64>,
    pub clip: ClipThreshold<f64>,
    /// Deterministic workers whose imitators are exact.
    pub perfect: bool,
}

fn random_simplex<R: Rng>(k: usize, rng: &mut R) -> SoftAnnotation<f64> {
    SoftAnnotation::from_weights((0..k).map(|_| 0.05 + rng.gen::<f64>()).collect()).expect("positive weights")
}

/// Instance `id` of the catalog rooted at `seed`; instances do not depend on
/// catalog size.
pub fn catalog_instance(seed: u64, id: usize) -> Instance {
    let mut rng = derive_rng(seed, &[stage::CATALOG, id as u64]);
    let m = rng.gen_range(1..=4);
    let k = rng.gen_range(2..=3);
    let perfect = rng.gen_bool(0.25);

    let (model, scoring, columns) = if rng.gen_bool(0.6) {
        let confusions: Vec<ConfusionMatrix<f64>> = (0..m)
            .map(|_| {
                let weights = (0..k * k).map(|_| 0.05 + rng.gen::<f64>()).collect();
                ConfusionMatrix::from_column_weights(k, weights).expect("positive weights")
            })
            .collect();
        let prior = random_simplex(k, &mut rng).probs().to_vec();
        let params = DsParams::new(prior, confusions).expect("valid parameters");
        (ScoreModel::dawid_skene(&params), "ds", Some(params))
    } else {
        (ScoreModel::majority_vote(k, m), "mv", None)
    };

    let (dists, softs) = if perfect {
        let dists: Vec<_> = (0..m).map(|_| SoftAnnotation::point_mass(k, rng.gen_range(0..k))).collect();
        (dists.clone(), dists)
    } else {
        let truth = rng.gen_range(0..k);
        let dists = (0..m)
            .map(|i| match &columns {
                Some(params) if rng.gen_bool(0.7) => {
                    SoftAnnotation::new(params.confusion(i).column(truth)).expect("confusion column")
                }
                _ if rng.gen_bool(0.3) => SoftAnnotation::point_mass(k, rng.gen_range(0..k)),
                _ => random_simplex(k, &mut rng),
            })
            .collect();
        let softs = (0..m).map(|_| random_simplex(k, &mut rng)).collect();
        (dists, softs)
    };

    let probs = (0..m).map(|_| if rng.gen_bool(0.15) { 1.0 } else { rng.gen_range(0.2..1.0) }).collect();
    let plan = SamplingPlan::new(probs).expect("probabilities in (0, 1]");
    let clip = ClipThreshold::new(rng.gen_range(1.0..5.0)).expect("eta >= 1");
    Instance { id, model, scoring, dists, softs, plan, clip, perfect }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: &'static str,
    pub max_deviation: f64,
    /// Instance id holding `max_deviation`; `None` if no instance applied.
    pub worst_instance: Option<usize>,
    pub instances_checked: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionReport {
    pub name: &'static str,
    pub max_deviation: f64,
    pub passed: bool,
    pub checks: Vec<CheckReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub id: usize,
    pub m: usize,
    pub k: usize,
    pub scoring: &'static str,
    pub perfect_imitation: bool,
    pub deviations: BTreeMap<&'static str, f64>,
    pub worst_check: &'static str,
    pub worst_deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub instances: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub passed: bool,
    pub sections: Vec<SectionReport>,
    pub per_instance: Vec<InstanceReport>,
}

const SECTIONS: [(&str, &[&str]); 3] = [
    ("importance sampling: unbiasedness and variance", &["is_mean_vs_iw", "is_variance_vs_formula"]),
    (
        "doubly robust: unbiasedness and variance",
        &[
            "dr_mean_vs_iw",
            "dr_variance_vs_formula",
            "dr_perfect_imitation_variance",
            "dr_perfect_imitation_realizations",
        ],
    ),
    ("clipped doubly robust: bias and variance", &["clipped_bias_vs_formula", "clipped_variance_vs_formula"]),
];

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check_instance(inst: &Instance, dr: DrFn) -> Result<BTreeMap<&'static str, f64>> {
    let (model, dists, softs, plan) = (&inst.model, &inst.dists, &inst.softs, &inst.plan);
    let mut dev = BTreeMap::new();
    let truth = enumerate_oracle(model, dists, softs, plan, EstimatorId::Iw, None)?;

    let is = enumerate_oracle(model, dists, softs, plan, EstimatorId::Is, None)?;
    dev.insert("is_mean_vs_iw", max_abs_diff(&is.mean, &truth.mean));
    dev.insert("is_variance_vs_formula", max_abs_diff(&is.variance, &var_is(model, dists, plan)?));

    let mut realization_gap = 0.0f64;
    let outcomes = enumerate_outcomes(dists, plan, |labels, real| {
        let values = dr(model, softs, real, plan)?.values;
        if inst.perfect {
            realization_gap = realization_gap.max(max_abs_diff(&values, &estimate_iw(model, labels)?.values));
        }
        Ok(values)
    })?;
    let drm = moments_of(&outcomes)?;
    dev.insert("dr_mean_vs_iw", max_abs_diff(&drm.mean, &truth.mean));
    dev.insert("dr_variance_vs_formula", max_abs_diff(&drm.variance, &var_dr(model, dists, softs, plan)?));
    if inst.perfect {
        dev.insert("dr_perfect_imitation_variance", drm.variance.iter().map(|v| v.abs()).fold(0.0, f64::max));
        dev.insert("dr_perfect_imitation_realizations", realization_gap);
    }

    let clipped = enumerate_oracle(model, dists, softs, plan, EstimatorId::DrClipped, Some(inst.clip))?;
    let (bias, var) = bias_var_dr_clipped(model, dists, softs, plan, inst.clip)?;
    let oracle_bias: Vec<f64> = clipped.mean.iter().zip(&truth.mean).map(|(a, b)| (a - b).abs()).collect();
    dev.insert("clipped_bias_vs_formula", max_abs_diff(&oracle_bias, &bias));
    dev.insert("clipped_variance_vs_formula", max_abs_diff(&clipped.variance, &var));
    Ok(dev)
}

pub fn theorem_suite(cfg: &TheoremSuiteConfig) -> Result<TheoremReport> {
    theorem_suite_with(cfg, estimate_dr)
}

/// [`theorem_suite`] with the doubly robust estimator swapped for `dr`, so
/// the harness itself can be shown to catch a faulty estimator.
pub fn theorem_suite_with(cfg: &TheoremSuiteConfig, dr: DrFn) -> Result<TheoremReport> {
    if cfg.instances < MIN_INSTANCES {
        return input(format!("catalog needs at least {MIN_INSTANCES} instances, got {}", cfg.instances));
    }
    if !(cfg.tolerance >= 0.0) {
        return input(format!("tolerance must be non-negative, got {}", cfg.tolerance));
    }
    let mut per_instance = Vec::with_capacity(cfg.instances);
    for id in 0..cfg.instances {
        let inst = catalog_instance(cfg.seed, id);
        let deviations = check_instance(&inst, dr)?;
        let (worst_check, worst_deviation) =
            deviations.iter().fold(("", -1.0), |best, (&name, &d)| if d > best.1 { (name, d) } else { best });
        per_instance.push(InstanceReport {
            id,
            m: inst.model.m(),
            k: inst.model.k(),
            scoring: inst.scoring,
            perfect_imitation: inst.perfect,
            deviations,
            worst_check,
            worst_deviation,
        });
    }

    let sections: Vec<SectionReport> = SECTIONS
        .iter()
        .map(|&(name, checks)| {
            let checks: Vec<CheckReport> = checks
                .iter()
                .map(|&check| {
                    let mut max_deviation = 0.0;
                    let mut worst_instance = None;
                    let mut instances_checked = 0;
                    for rep in &per_instance {
                        if let Some(&d) = rep.deviations.get(check) {
                            instances_checked += 1;
                            // NaN must register as a failure
                            if worst_instance.is_none() || d > max_deviation || d.is_nan() {
                                max_deviation = d;
                                worst_instance = Some(rep.id);
                            }
                        }
                    }
                    CheckReport {
                        name: check,
                        max_deviation,
                        worst_instance,
                        instances_checked,
                        passed: max_deviation <= cfg.tolerance,
                    }
                })
                .collect();
            SectionReport {
                name,
                max_deviation: checks.iter().map(|c| c.max_deviation).fold(0.0, f64::max),
                passed: checks.iter().all(|c| c.passed),
                checks,
            }
        })
        .collect();
    Ok(TheoremReport {
        instances: cfg.instances,
        seed: cfg.seed,
        tolerance: cfg.tolerance,
        passed: sections.iter().all(|s| s.passed),
        sections,
        per_instance,
    })
}

impl TheoremReport {
    /// Human-readable summary, one block per section.
    pub fn render(&self) -> String {
        let mut out = format!(
            "estimator identities: {} instances, seed {}, tolerance {:e}\n",
            self.instances, self.seed, self.tolerance
        );
        for s in &self.sections {
            out.push_str(&format!(
                "\n[{}] {}  (max deviation {:.3e})\n",
                if s.passed { "PASS" } else { "FAIL" },
                s.name,
                s.max_deviation
            ));
            for c in &s.checks {
                let worst = c.worst_instance.map_or("-".to_string(), |i| format!("#{i}"));
                out.push_str(&format!(
                    "  {:<4} {:<36} max {:.3e}  worst instance {:<5} ({} instances)\n",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.max_deviation,
                    worst,
                    c.instances_checked
                ));
            }
        }
        out.push_str(&format!("\noverall: {}\n", if self.passed { "PASS" } else { "FAIL" }));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expected_score;

    /// Doubly robust with the importance weight replaced by 1.
    fn unweighted_dr(
        model: &ScoreModel<f64>,
        softs: &[SoftAnnotation<f64>],
        real: &SampleRealization,
        _plan: &SamplingPlan<f64>,
    ) -> Result<EstimateVector<f64>> {
        let m = model.m() as f64;
        let values = (0..model.k())
            .map(|y| {
                softs
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let base = expected_score(model.table(i), s, y);
                        real.label(i).map_or(base, |l| base + (model.table(i).score(y, l) - base))
                    })
                    .sum::<f64>()
                    / m
            })
            .collect();
        Ok(EstimateVector::new(values, model.offset(), real.len()))
    }

    #[test]
    fn catalog_is_stable_and_varied() {
        let a = catalog_instance(3, 17);
        let b = catalog_instance(3, 17);
        assert_eq!(a.dists, b.dists);
        assert_eq!(a.plan, b.plan);
        let cat: Vec<_> = (0..60).map(|i| catalog_instance(3, i)).collect();
        assert!(cat.iter().any(|i| i.perfect));
        assert!(cat.iter().any(|i| i.scoring == "mv"));
        assert!(cat.iter().any(|i| i.scoring == "ds"));
        assert!(cat.iter().all(|i| i.model.m() <= 4 && i.model.k() <= 3));
    }

    #[test]
    fn small_catalog_rejected() {
        let cfg = TheoremSuiteConfig { instances: 10, ..Default::default() };
        assert!(theorem_suite(&cfg).is_err());
    }

    #[test]
    fn default_suite_passes() {
        let report = theorem_suite(&TheoremSuiteConfig::default()).unwrap();
        assert!(report.passed, "{}", report.render());
        assert_eq!(report.sections.len(), 3);
        assert_eq!(report.per_instance.len(), 60);
    }

    #[test]
    fn faulty_weight_is_caught() {
        let report = theorem_suite_with(&TheoremSuiteConfig::default(), unweighted_dr).unwrap();
        assert!(!report.passed);
        let dr = &report.sections[1];
        let mean = dr.checks.iter().find(|c| c.name == "dr_mean_vs_iw").unwrap();
        assert!(!mean.passed);
        assert!(report.sections[0].passed);
    }
}

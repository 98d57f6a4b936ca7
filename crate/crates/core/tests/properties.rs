use proptest::prelude::*;

use drc_core::adaptive::{aws_plan, confidence_margin, run_adaptive, AdaptiveConfig, EtaMode, MarginBasis, Route};
use drc_core::estimators::{
    auto_threshold, bias_var_dr_clipped, estimate_dr, estimate_dr_clipped, estimate_iw, var_dr, var_is, ClipThreshold,
    SampleRealization, SamplingPlan,
};
use drc_core::model::AnnotationMatrix;
use drc_core::model::{ConfusionMatrix, DsParams, ScoreModel, SoftAnnotation};
use drc_core::seed::derive_rng;
use drc_core::sim::enumerate::{enumerate_oracle, enumerate_outcomes, EstimatorId};
use drc_core::sim::io::{read_annotations, read_confusions, write_annotations, write_confusions};

fn simplex(k: usize) -> impl Strategy<Value = SoftAnnotation<f64>> {
    prop::collection::vec(0.02f64..1.0, k).prop_map(|w| SoftAnnotation::from_weights(w).unwrap())
}

fn confusion(k: usize) -> impl Strategy<Value = ConfusionMatrix<f64>> {
    prop::collection::vec(0.05f64..1.0, k * k).prop_map(move |w| ConfusionMatrix::from_column_weights(k, w).unwrap())
}

#[derive(Debug, Clone)]
struct Case {
    params: DsParams<f64>,
    model: ScoreModel<f64>,
    dists: Vec<SoftAnnotation<f64>>,
    softs: Vec<SoftAnnotation<f64>>,
    plan: SamplingPlan<f64>,
}

fn case() -> impl Strategy<Value = Case> {
    (1usize..=3, 2usize..=3, any::<bool>())
        .prop_flat_map(|(m, k, mv)| {
            (
                prop::collection::vec(confusion(k), m),
                prop::collection::vec(simplex(k), m),
                prop::collection::vec(simplex(k), m),
                prop::collection::vec(0.1f64..=1.0, m),
                Just((k, mv)),
            )
        })
        .prop_map(|(confs, dists, softs, probs, (k, mv))| {
            let m = confs.len();
            let params = DsParams::with_uniform_prior(confs).unwrap();
            let model = if mv { ScoreModel::majority_vote(k, m) } else { ScoreModel::dawid_skene(&params) };
            Case { params, model, dists, softs, plan: SamplingPlan::new(probs).unwrap() }
        })
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn importance_sampling_is_unbiased_with_closed_form_variance(c in case()) {
        let iw = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::Iw, None).unwrap();
        let is = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::Is, None).unwrap();
        prop_assert!(close(&is.mean, &iw.mean, 1e-12));
        prop_assert!(close(&is.variance, &var_is(&c.model, &c.dists, &c.plan).unwrap(), 1e-12));
    }

    #[test]
    fn doubly_robust_is_unbiased_with_closed_form_variance(c in case()) {
        let iw = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::Iw, None).unwrap();
        let dr = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::Dr, None).unwrap();
        prop_assert!(close(&dr.mean, &iw.mean, 1e-12));
        prop_assert!(close(&dr.variance, &var_dr(&c.model, &c.dists, &c.softs, &c.plan).unwrap(), 1e-12));
    }

    #[test]
    fn clipped_bias_and_variance_match_calculator(c in case(), eta in 1.0f64..8.0) {
        let clip = ClipThreshold::new(eta).unwrap();
        let iw = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::Iw, None).unwrap();
        let drc = enumerate_oracle(&c.model, &c.dists, &c.softs, &c.plan, EstimatorId::DrClipped, Some(clip)).unwrap();
        let (bias, var) = bias_var_dr_clipped(&c.model, &c.dists, &c.softs, &c.plan, clip).unwrap();
        let oracle_bias: Vec<f64> = drc.mean.iter().zip(&iw.mean).map(|(a, b)| (a - b).abs()).collect();
        prop_assert!(close(&oracle_bias, &bias, 1e-12));
        prop_assert!(close(&drc.variance, &var, 1e-12));
    }

    #[test]
    fn clipping_above_every_weight_changes_nothing(c in case()) {
        let top = c.plan.probs().iter().map(|p| p.recip()).fold(1.0, f64::max);
        let clip = ClipThreshold::new(top).unwrap();
        enumerate_outcomes(&c.dists, &c.plan, |_, real| {
            let a = estimate_dr(&c.model, &c.softs, real, &c.plan)?.values;
            let b = estimate_dr_clipped(&c.model, &c.softs, real, &c.plan, clip)?.values;
            assert_eq!(a, b);
            Ok(vec![0.0])
        }).unwrap();
    }

    #[test]
    fn full_polling_dr_reproduces_iw(c in case(), labels in prop::collection::vec(0usize..2, 3)) {
        let m = c.model.m();
        let plan = SamplingPlan::uniform(m, 1.0).unwrap();
        let labels = &labels[..m];
        let real = SampleRealization::new(labels.iter().copied().enumerate()).unwrap();
        let dr = estimate_dr(&c.model, &c.softs, &real, &plan).unwrap();
        let iw = estimate_iw(&c.model, labels).unwrap();
        prop_assert_eq!(dr.values, iw.values);
        prop_assert_eq!(dr.realized_cost, m);
    }

    #[test]
    fn auto_threshold_is_at_least_one(probs in prop::collection::vec(0.001f64..=1.0, 1..20)) {
        let plan = SamplingPlan::new(probs).unwrap();
        let clip = auto_threshold(&plan);
        prop_assert!(clip.eta() >= 1.0);
        for &p in plan.probs() {
            prop_assert!(clip.weight(p) <= p.recip());
            prop_assert!(clip.weight(p) <= clip.eta());
        }
    }

    #[test]
    fn aws_plan_is_a_valid_plan_monotone_in_lambda(
        confs in prop::collection::vec(confusion(3), 2..6),
        softs in prop::collection::vec(simplex(3), 6),
        lambda in 0.1f64..20.0,
    ) {
        let m = confs.len();
        let params = DsParams::with_uniform_prior(confs).unwrap();
        let softs = &softs[..m];
        let cfg = |lambda| AdaptiveConfig {
            ais: false,
            aws: true,
            rho: 0.0,
            lambda,
            base_pi: 0.2,
            eta_mode: EtaMode::Automatic,
            margin_basis: MarginBasis::Likelihood,
        };
        let lo = aws_plan(&params, softs, &cfg(lambda)).unwrap();
        let hi = aws_plan(&params, softs, &cfg(2.0 * lambda)).unwrap();
        for (a, b) in lo.probs().iter().zip(hi.probs()) {
            prop_assert!(*a >= 1e-6 && *a <= 1.0);
            prop_assert!(b >= a);
        }
        prop_assert!(lo.expected_cost() <= lambda.max(m as f64 * 1e-6) + 1e-9 || lo.probs().contains(&1.0));
    }

    #[test]
    fn accepted_items_cost_nothing_and_clear_the_margin(c in case(), rho in 0.0f64..1.0, seed in any::<u64>()) {
        prop_assume!(c.params.m() >= 2);
        let cfg = AdaptiveConfig {
            ais: true,
            aws: true,
            rho,
            lambda: 2.0,
            base_pi: 0.2,
            eta_mode: EtaMode::Automatic,
            margin_basis: MarginBasis::Likelihood,
        };
        let model = ScoreModel::dawid_skene(&c.params);
        let mut rng = derive_rng(seed, &[]);
        let d = run_adaptive(&c.params, &model, &c.softs, |i| Ok(i % model.k()), &cfg, &mut rng).unwrap();
        match d.route {
            Route::AcceptDm => {
                prop_assert!(d.margin > rho);
                prop_assert_eq!(d.estimate.realized_cost, 0);
                prop_assert_eq!(d.margin, confidence_margin(&d.estimate.values).unwrap());
            }
            Route::Escalate => prop_assert!(d.margin <= rho),
        }
    }

    #[test]
    fn annotation_and_confusion_files_round_trip(
        triples in prop::collection::btree_map((0usize..6, 0usize..30), 0usize..4, 1..60),
        confs in prop::collection::vec(confusion(4), 1..4),
    ) {
        let ann = AnnotationMatrix::from_triples(6, 30, 4, triples.iter().map(|(&(i, j), &l)| (i, j, l))).unwrap();
        let mut buf = Vec::new();
        write_annotations(&mut buf, &ann).unwrap();
        let back = read_annotations(buf.as_slice(), (Some(6), Some(30), Some(4))).unwrap();
        prop_assert_eq!(back.iter().collect::<Vec<_>>(), ann.iter().collect::<Vec<_>>());

        let mut buf = Vec::new();
        write_confusions(&mut buf, None, &confs).unwrap();
        let file = read_confusions(buf.as_slice()).unwrap();
        prop_assert!(file.prior.is_none());
        for (a, b) in file.confusions.iter().zip(&confs) {
            prop_assert_eq!(a.as_slice(), b.as_slice());
        }
    }
}

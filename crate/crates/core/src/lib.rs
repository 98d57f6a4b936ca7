//! Test-time label aggregation for crowdsourcing with doubly robust
//! estimators.
//!
//! The estimation target for an item is the mean per-worker score
//! `v(y) = E[(1/m) sum_i S_i(y, l_i)]` that would be observed if every worker
//! labelled the item. The crate provides the ideal-world, importance
//! sampling, direct, doubly robust and clipped doubly robust estimators of
//! that target, worker imitators that supply the direct-method surrogate,
//! confidence-margin item and worker selection, and a simulation harness
//! that checks the estimators' bias and variance by exact enumeration.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the harness
//! and the CLI use.

// NaN must fail validation, so `!(x > 0)` is intended.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod em;
pub mod error;
pub mod estimators;
pub mod imitation;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type FeatureMatrix64 = model::FeatureMatrix<f64>;
pub type ConfusionMatrix64 = model::ConfusionMatrix<f64>;
pub type DsParams64 = model::DsParams<f64>;
pub type SoftAnnotation64 = model::SoftAnnotation<f64>;
pub type ScoreTable64 = model::ScoreTable<f64>;
pub type ScoreModel64 = model::ScoreModel<f64>;
pub type EstimateVector64 = model::EstimateVector<f64>;
pub type SamplingPlan64 = estimators::SamplingPlan<f64>;
pub type ClipThreshold64 = estimators::ClipThreshold<f64>;
pub type ImitatorModel64 = imitation::ImitatorModel<f64>;

pub type DsParams32 = model::DsParams<f32>;
pub type ScoreModel32 = model::ScoreModel<f32>;
pub type SamplingPlan32 = estimators::SamplingPlan<f32>;

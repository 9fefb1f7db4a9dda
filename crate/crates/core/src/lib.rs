//! Hybrid physics/machine-learning pipeline for pan-Arctic permafrost
//! projection and infrastructure risk scoring.
//!
//! The crate is organised bottom-up:
//!
//! * [`domain`]: observations, datasets, scenarios and their validity rules.
//! * [`io`]: canonical CSV loading/writing and the synthetic data generator.
//! * [`features`]: imputation and the fixed 38-column feature manifest.
//! * [`learners`]: elastic net, ridge, CART trees, random forest and
//!   histogram gradient boosting.
//! * [`stacking`]: spatially grouped out-of-fold stacking with a ridge
//!   meta-learner and ensemble-spread uncertainty.
//! * [`validation`]: spatial, temporal and naive random-split evaluation.
//! * [`scenario`]: RCP perturbations and the hybrid physical adjustment.
//! * [`risk`]: composite scores, quantile classes, latitudinal profiles.

pub mod domain;
pub mod error;
pub mod features;
pub mod io;
pub mod learners;
pub mod matrix;
pub mod rng;
pub mod risk;
pub mod scenario;
pub mod stacking;
pub mod stats;
pub mod validation;

pub use error::{Error, Result};
pub use matrix::Matrix;

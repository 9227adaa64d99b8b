//! Ridgeless regression and factor-kernel forecasting for macroeconomic panels.
//!
//! The crate covers the full pipeline:
//!
//! * [`ingest`]: FRED-MD / FRED-QD style CSV panels, transformation codes,
//!   the missing-data policy and per-window standardization.
//! * [`factors`]: principal-components factor extraction, Bai–Ng factor
//!   selection and panel simulators.
//! * [`lab`]: minimum-norm and ridge estimation, Monte Carlo risk
//!   decomposition and the double-descent sweep.
//! * [`spectral`]: effective ranks, split index, tail concentration and
//!   tail-index estimators.
//! * [`kernel`]: synthetic augmentation, the expected Gram matrix and the
//!   factor-structured kernel ridge predictor.
//! * [`forecast`]: the rolling out-of-sample comparison of the factor-kernel
//!   GLS model against the diffusion-index benchmark.
//! * [`report`]: run configuration, manifests, CSV/JSON writers and SVG plots
//!   used by the `ridgeless` command-line tool.
//!
//! Monte Carlo replications, augmentation blocks and rolling forecast origins
//! run on rayon when the `parallel` feature is enabled (the default). Every
//! work item draws from its own derived seed and results are reduced in index
//! order, so outputs are bit-identical with or without the feature.

// NaN-rejecting guards are written as `!(x > bound)` on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod factors;
pub mod forecast;
pub mod ingest;
pub mod kernel;
pub mod lab;
pub mod linalg;
pub mod par;
pub mod report;
pub mod rng;
pub mod spectral;
pub mod svg;

pub use error::{Error, Result};

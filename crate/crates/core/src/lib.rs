//! Covariance estimation for a subset of variables under an approximate factor model.
//!
//! The estimators combine weighted principal components with adaptive hard
//! thresholding of the idiosyncratic covariance. Auxiliary variables outside the
//! target subset can be used to sharpen the factor estimates ([`estimate_method2`]),
//! and the full panel can be split across groups and processed in parallel
//! (divide-and-conquer).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_model;
pub mod divide_conquer;
pub mod error;
pub mod io;
pub mod lda;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod selection;
pub mod sim;
pub mod threshold;
pub mod wpc;

pub use data_model::{
    EstimateDiagnostics, FactorModelEstimate, IdioCovariance, Method, ObservationMatrix, StageTimings, SubsetSelector, TrueModel,
};
pub use error::{Error, Result};
pub use pipeline::{estimate_method1, estimate_method2, estimate_oracle, PipelineConfig, RateMode};
pub use threshold::{ThresholdRule, ThresholdSettings};

//! Attribution of ensemble predictive uncertainty to input features and
//! feature pairs.
//!
//! The predictive uncertainty of a sample-based model (a deep ensemble or MC
//! dropout) is the variance of its member predictions at a query point. That
//! variance is a second-order quantity: it is built from products of member
//! outputs, so its natural attribution target is the feature-product matrix
//! `x xᵀ` rather than the feature vector `x`. This crate computes that
//! second-order attribution as the covariance, across ensemble members, of
//! ordinary first-order explanations of each member's prediction (CovLRP,
//! CovGI, ...), together with everything needed to run and evaluate it:
//!
//! * [`nn`] — a minimal dense ReLU network engine (forward, input gradients,
//!   Adam training, test-time dropout plans).
//! * [`ensemble`] — deep-ensemble / MC-dropout wrappers, the predictive
//!   variance and its coefficient-form decomposition.
//! * [`firstorder`] — first-order explanation backends: Gradient×Input,
//!   Sensitivity Analysis, Integrated Gradients, LRP-γ (simple and
//!   generalized), exact Shapley values and their sampling approximation,
//!   plus the variance-head baseline that explains the variance directly.
//! * [`secondorder`] — the covariance combinator, its coefficient double-sum
//!   cross-check, and diag/marg summarization.
//! * [`eval`] — faithfulness evaluation: a conditional KDE inpainter,
//!   feature-flipping curves, and AUFC aggregation.
//! * [`data`] — dataset splitting/standardization and synthetic fixtures.
//!
//! The crate is `no_std`-compatible (with `alloc`); disable the default
//! `std` feature for embedded or wasm use. File formats, CSV ingestion and
//! the command-line front end live in the companion `covxplain` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub mod data;
pub mod ensemble;
pub mod eval;
pub mod firstorder;
pub mod linalg;
pub mod nn;
pub mod rng;
pub mod secondorder;

mod fmath;

pub use linalg::Matrix;

/// Errors surfaced by the numeric core.
///
/// Dimension and precondition violations are reported eagerly, before any
/// work is done; numeric failures name the place they were detected.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input vector or matrix has the wrong shape.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// A non-finite value appeared during a forward pass, in `layer`.
    NonFiniteForward { layer: usize },
    /// A non-finite value appeared outside the forward pass.
    NonFinite { context: &'static str },
    /// A parameter was outside its documented range.
    InvalidParameter {
        context: &'static str,
        detail: String,
    },
    /// Training loss became NaN; carries the epoch where it happened.
    TrainingDiverged { epoch: usize },
    /// The simple LRP-γ rule was asked to propagate through a layer whose
    /// input carries negative values; the generalized rule handles those.
    SimpleLrpSignedInput { layer: usize },
    /// Exact Shapley enumeration was requested for too many features.
    ShapleyTooManyFeatures { dim: usize, max: usize },
    /// The instance's uncertainty is below the flipping threshold and the
    /// normalized curve would be meaningless.
    NegligibleUncertainty { s2: f64 },
    /// Every resampling draw at a flipping step produced a non-finite
    /// uncertainty value.
    AllDrawsDiscarded { step: usize },
    /// A CSV cell could not be parsed (1-based row, 0-based column).
    UnparseableCell { row: usize, column: usize },
    /// A named column is missing from the input.
    MissingColumn { name: String },
    /// The input table has no usable rows.
    EmptyDataset,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            Error::NonFiniteForward { layer } => {
                write!(f, "non-finite value in forward pass at layer {layer}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::InvalidParameter { context, detail } => write!(f, "{context}: {detail}"),
            Error::TrainingDiverged { epoch } => {
                write!(f, "training loss became NaN at epoch {epoch}")
            }
            Error::SimpleLrpSignedInput { layer } => write!(
                f,
                "simple LRP-γ rule requires non-negative inputs at layer {layer}; \
                 use the generalized variant for signed inputs"
            ),
            Error::ShapleyTooManyFeatures { dim, max } => write!(
                f,
                "exact Shapley enumeration supports at most {max} features, got {dim}"
            ),
            Error::NegligibleUncertainty { s2 } => {
                write!(
                    f,
                    "instance uncertainty {s2:e} is below the flipping threshold"
                )
            }
            Error::AllDrawsDiscarded { step } => {
                write!(f, "all resampling draws discarded at flipping step {step}")
            }
            Error::UnparseableCell { row, column } => {
                write!(f, "unparseable numeric cell at row {row}, column {column}")
            }
            Error::MissingColumn { name } => write!(f, "missing column '{name}'"),
            Error::EmptyDataset => write!(f, "dataset has no usable rows"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

/// A scalar-valued function of a feature vector.
///
/// Explanation backends are written against this trait (and
/// [`Differentiable`]) so they apply equally to a single network output, an
/// ensemble's variance, or an arbitrary closure in tests.
pub trait ScalarFunction {
    fn value(&self, x: &[f64]) -> Result<f64>;
}

/// A scalar function that also exposes its input gradient.
pub trait Differentiable: ScalarFunction {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl<F: Fn(&[f64]) -> f64> ScalarFunction for F {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Pairs a value closure with a gradient closure.
///
/// Mostly a test utility; model-backed functions implement
/// [`Differentiable`] directly.
pub struct WithGradient<F, G> {
    pub f: F,
    pub grad: G,
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> ScalarFunction for WithGradient<F, G> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Vec<f64>> Differentiable for WithGradient<F, G> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.grad)(x))
    }
}

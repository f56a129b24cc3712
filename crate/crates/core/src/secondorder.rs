//! Second-order uncertainty attribution.
//!
//! The ensemble variance is a quadratic form in the member outputs, so an
//! explanation of it lives naturally on feature PAIRS. Given per-member
//! first-order explanations e_m = E(y_m; x), the d×d uncertainty
//! explanation is their covariance,
//!
//! ```text
//! R = (1/M) Σ_m (e_m - ē)(e_m - ē)ᵀ = Σ_{m,m'} b_{mm'} e_m ⊗ e_{m'}
//! ```
//!
//! where b is the coefficient matrix from [`crate::ensemble`]. Both forms
//! are implemented; the covariance form is the production path (O(M·d²)),
//! the double sum exists as a cross-check oracle (O(M²·d²)). R is
//! symmetric positive semi-definite by construction and, when the
//! first-order backend is conservative, its grand total equals s².
//!
//! `summarize` reduces R to per-feature scores: `Diag` keeps the
//! (non-negative) diagonal, `Marg` adds half of each off-diagonal pair to
//! both participants, preserving the total.

use alloc::vec;
use alloc::vec::Vec;

use crate::ensemble::{EnsembleModel, EnsembleOutputs, MemberFunction};
use crate::firstorder::{
    gradient_x_input, integrated_gradients, lrp, shapley_value_sampling, Explanation, LrpConfig,
    MethodTag,
};
use crate::linalg::Matrix;
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Per-member first-order backend used inside the covariance combinator.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstOrderMethod {
    GradientInput,
    Lrp(LrpConfig),
    IntegratedGradients { steps: usize },
    ShapleySampling { permutations: usize, seed: u64 },
}

impl FirstOrderMethod {
    fn tag(&self) -> MethodTag {
        match self {
            FirstOrderMethod::GradientInput => MethodTag::GradientInput,
            FirstOrderMethod::Lrp(_) => MethodTag::Lrp,
            FirstOrderMethod::IntegratedGradients { .. } => MethodTag::IntegratedGradients,
            FirstOrderMethod::ShapleySampling { .. } => MethodTag::ShapleySampling,
        }
    }
}

/// A d×d explanation of the predictive uncertainty at one query point.
#[derive(Debug, Clone)]
pub struct SecondOrderExplanation {
    pub r: Matrix,
    pub s2: f64,
    pub base_method: MethodTag,
}

impl SecondOrderExplanation {
    pub fn dim(&self) -> usize {
        self.r.rows()
    }

    /// Grand total `Σ_ij R_ij`; equals `s2` under conservative backends.
    pub fn total(&self) -> f64 {
        self.r.total()
    }
}

/// How to compress the d×d matrix into d per-feature scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummaryMode {
    Diag,
    Marg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummarizedExplanation {
    pub scores: Vec<f64>,
    pub mode: SummaryMode,
}

/// Outer product `e_m ⊗ e_m'` of two first-order explanations: the
/// contribution of each feature pair to the output product `y_m·y_m'`.
pub fn product_attribution(e_a: &Explanation, e_b: &Explanation) -> Result<Matrix> {
    if e_a.dim() != e_b.dim() {
        return Err(Error::DimensionMismatch {
            context: "product_attribution",
            expected: e_a.dim(),
            got: e_b.dim(),
        });
    }
    Ok(crate::linalg::outer(&e_a.scores, &e_b.scores))
}

fn check_explanations(explanations: &[Explanation]) -> Result<usize> {
    if explanations.len() < 2 {
        return Err(Error::InvalidParameter {
            context: "cov_explanation",
            detail: alloc::format!(
                "need at least 2 member explanations, got {}",
                explanations.len()
            ),
        });
    }
    let d = explanations[0].dim();
    for e in &explanations[1..] {
        if e.dim() != d {
            return Err(Error::DimensionMismatch {
                context: "cov_explanation member dimension",
                expected: d,
                got: e.dim(),
            });
        }
    }
    Ok(d)
}

/// Covariance of per-member explanations: the production path.
///
/// `s2` is the (biased) variance of the member target values, i.e. the
/// uncertainty being explained.
pub fn cov_explanation(explanations: &[Explanation]) -> Result<SecondOrderExplanation> {
    let d = check_explanations(explanations)?;
    let m_count = explanations.len();
    let mf = m_count as f64;

    let mut mean = vec![0.0; d];
    for e in explanations {
        for (mi, s) in mean.iter_mut().zip(&e.scores) {
            *mi += s / mf;
        }
    }
    let centered: Vec<Vec<f64>> = explanations
        .iter()
        .map(|e| e.scores.iter().zip(&mean).map(|(s, m)| s - m).collect())
        .collect();

    let mut r = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for c in &centered {
                acc += c[i] * c[j];
            }
            let v = acc / mf;
            r.set(i, j, v);
            r.set(j, i, v);
        }
    }

    let targets: Vec<f64> = explanations.iter().map(|e| e.target_value).collect();
    Ok(SecondOrderExplanation {
        r,
        s2: EnsembleOutputs::from_outputs(targets).s2,
        base_method: explanations[0].method,
    })
}

/// The same matrix via the coefficient double sum
/// `Σ_{m,m'} b_{mm'} e_m ⊗ e_{m'}`: the cross-check oracle path.
pub fn cov_explanation_double_sum(explanations: &[Explanation]) -> Result<SecondOrderExplanation> {
    let d = check_explanations(explanations)?;
    let m_count = explanations.len();
    let b = crate::ensemble::coefficients(m_count)?;

    let mut r = Matrix::zeros(d, d);
    for (m, e_m) in explanations.iter().enumerate() {
        for (m2, e_m2) in explanations.iter().enumerate() {
            let coeff = b.matrix().get(m, m2);
            for i in 0..d {
                let row = r.row_mut(i);
                let emi = e_m.scores[i];
                for (j, rij) in row.iter_mut().enumerate() {
                    *rij += coeff * emi * e_m2.scores[j];
                }
            }
        }
    }

    let targets: Vec<f64> = explanations.iter().map(|e| e.target_value).collect();
    Ok(SecondOrderExplanation {
        r,
        s2: EnsembleOutputs::from_outputs(targets).s2,
        base_method: explanations[0].method,
    })
}

/// Reduces a d×d explanation to d per-feature scores.
pub fn summarize(explanation: &SecondOrderExplanation, mode: SummaryMode) -> SummarizedExplanation {
    let r = &explanation.r;
    let d = r.rows();
    let scores = match mode {
        SummaryMode::Diag => (0..d).map(|i| r.get(i, i)).collect(),
        SummaryMode::Marg => (0..d)
            .map(|i| {
                let row_sum: f64 = r.row(i).iter().sum();
                let col_sum: f64 = (0..d).map(|j| r.get(j, i)).sum();
                0.5 * (row_sum + col_sum)
            })
            .collect(),
    };
    SummarizedExplanation { scores, mode }
}

/// One member's first-order explanation under the chosen backend.
///
/// Sampling backends derive the member's RNG stream from the base seed and
/// the member index, so members get independent but reproducible draws.
pub fn explain_member(
    model: &EnsembleModel,
    member: usize,
    x: &[f64],
    output_index: usize,
    backend: &FirstOrderMethod,
) -> Result<Explanation> {
    match backend {
        FirstOrderMethod::GradientInput => {
            gradient_x_input(&MemberFunction::new(model, member, output_index), x)
        }
        FirstOrderMethod::Lrp(config) => {
            let (net, plan) = model.member(member);
            lrp(net, x, output_index, plan, config)
        }
        FirstOrderMethod::IntegratedGradients { steps } => integrated_gradients(
            &MemberFunction::new(model, member, output_index),
            x,
            None,
            *steps,
        ),
        FirstOrderMethod::ShapleySampling { permutations, seed } => {
            let zeros = vec![0.0; x.len()];
            shapley_value_sampling(
                &MemberFunction::new(model, member, output_index),
                x,
                &zeros,
                *permutations,
                derive_seed(*seed, &[member as u64]),
            )
        }
    }
}

/// The covariance combinator end to end: explain every member, take the
/// covariance. This is the "Cov" prefix applied to the chosen backend.
pub fn explain_uncertainty(
    model: &EnsembleModel,
    x: &[f64],
    output_index: usize,
    backend: &FirstOrderMethod,
) -> Result<SecondOrderExplanation> {
    let mut explanations = Vec::with_capacity(model.member_count());
    for m in 0..model.member_count() {
        explanations.push(explain_member(model, m, x, output_index, backend)?);
    }
    let mut result = cov_explanation(&explanations)?;
    result.base_method = backend.tag();
    Ok(result)
}

/// [`explain_uncertainty`] followed by [`summarize`].
pub fn explain_uncertainty_summarized(
    model: &EnsembleModel,
    x: &[f64],
    output_index: usize,
    backend: &FirstOrderMethod,
    mode: SummaryMode,
) -> Result<SummarizedExplanation> {
    Ok(summarize(
        &explain_uncertainty(model, x, output_index, backend)?,
        mode,
    ))
}

/// Uncertainty explanation for multi-output regressors: the per-dimension
/// matrices summed, explaining the total `Σ_k s²_k`.
pub fn explain_uncertainty_multidim(
    model: &EnsembleModel,
    x: &[f64],
    backend: &FirstOrderMethod,
) -> Result<SecondOrderExplanation> {
    let d = model.input_dim();
    let mut r = Matrix::zeros(d, d);
    let mut s2 = 0.0;
    for k in 0..model.output_dim() {
        let part = explain_uncertainty(model, x, k, backend)?;
        for i in 0..d {
            let dst = r.row_mut(i);
            for (j, v) in part.r.row(i).iter().enumerate() {
                dst[j] += v;
            }
        }
        s2 += part.s2;
    }
    Ok(SecondOrderExplanation {
        r,
        s2,
        base_method: backend.tag(),
    })
}

//! Sample-based uncertainty models.
//!
//! An ensemble is M prediction instances: distinct trained networks (deep
//! ensemble) or one network paired with M frozen dropout plans (MC dropout).
//! Predictive uncertainty is the biased variance of the member outputs,
//!
//! ```text
//! s²(x) = (1/M) Σ_m (y_m - ȳ)²
//! ```
//!
//! which also factors as the quadratic form `Σ_{m,m'} b_{mm'} y_m y_{m'}`
//! with `b_{mm'} = 1/M·[m = m'] - 1/M²`. Both forms ship and are
//! cross-checked in tests; downstream the coefficient form is what turns
//! per-member explanations into an uncertainty explanation.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::nn::{DropoutPlan, Mlp};
use crate::{Differentiable, Error, Result, ScalarFunction};

/// M prediction instances over a shared input space.
#[derive(Debug, Clone)]
pub enum EnsembleModel {
    DeepEnsemble { members: Vec<Mlp> },
    McDropout { base: Mlp, plans: Vec<DropoutPlan> },
}

impl EnsembleModel {
    pub fn deep(members: Vec<Mlp>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidParameter {
                context: "EnsembleModel::deep",
                detail: alloc::format!("need at least 2 members, got {}", members.len()),
            });
        }
        let (d, t) = (members[0].input_dim(), members[0].output_dim());
        for m in &members[1..] {
            if m.input_dim() != d {
                return Err(Error::DimensionMismatch {
                    context: "ensemble member input_dim",
                    expected: d,
                    got: m.input_dim(),
                });
            }
            if m.output_dim() != t {
                return Err(Error::DimensionMismatch {
                    context: "ensemble member output_dim",
                    expected: t,
                    got: m.output_dim(),
                });
            }
        }
        Ok(EnsembleModel::DeepEnsemble { members })
    }

    /// The dropout plans are sampled once and frozen here, so every
    /// consumer (prediction, per-member explanation, the Cov combinator)
    /// sees the same M deterministic functions.
    pub fn mc_dropout(base: Mlp, plans: Vec<DropoutPlan>) -> Result<Self> {
        if plans.len() < 2 {
            return Err(Error::InvalidParameter {
                context: "EnsembleModel::mc_dropout",
                detail: alloc::format!("need at least 2 plans, got {}", plans.len()),
            });
        }
        // Surface shape problems at construction, not first prediction.
        let probe = vec![0.0; base.input_dim()];
        for plan in &plans {
            base.forward(&probe, Some(plan))?;
        }
        Ok(EnsembleModel::McDropout { base, plans })
    }

    pub fn member_count(&self) -> usize {
        match self {
            EnsembleModel::DeepEnsemble { members } => members.len(),
            EnsembleModel::McDropout { plans, .. } => plans.len(),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            EnsembleModel::DeepEnsemble { members } => members[0].input_dim(),
            EnsembleModel::McDropout { base, .. } => base.input_dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            EnsembleModel::DeepEnsemble { members } => members[0].output_dim(),
            EnsembleModel::McDropout { base, .. } => base.output_dim(),
        }
    }

    /// The network and optional dropout plan realizing member `m`.
    pub fn member(&self, m: usize) -> (&Mlp, Option<&DropoutPlan>) {
        match self {
            EnsembleModel::DeepEnsemble { members } => (&members[m], None),
            EnsembleModel::McDropout { base, plans } => (base, Some(&plans[m])),
        }
    }

    pub fn member_output(&self, m: usize, x: &[f64]) -> Result<Vec<f64>> {
        let (net, plan) = self.member(m);
        net.output(x, plan)
    }

    pub fn member_gradient(&self, m: usize, x: &[f64], output_index: usize) -> Result<Vec<f64>> {
        let (net, plan) = self.member(m);
        net.input_gradient(x, output_index, plan)
    }

    /// Per-member outputs at one output dimension, with their mean and
    /// biased variance.
    pub fn predict_all(&self, x: &[f64], output_index: usize) -> Result<EnsembleOutputs> {
        if output_index >= self.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "predict_all output_index",
                expected: self.output_dim(),
                got: output_index,
            });
        }
        let m_count = self.member_count();
        let mut y = Vec::with_capacity(m_count);
        for m in 0..m_count {
            y.push(self.member_output(m, x)?[output_index]);
        }
        Ok(EnsembleOutputs::from_outputs(y))
    }

    /// Total uncertainty of a multi-output regressor: the sum of the
    /// per-output-dimension variances.
    pub fn multidim_variance(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for k in 0..self.output_dim() {
            total += self.predict_all(x, k)?.s2;
        }
        Ok(total)
    }
}

/// Member outputs at one query point plus their first two moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutputs {
    pub y: Vec<f64>,
    pub mean: f64,
    pub s2: f64,
}

impl EnsembleOutputs {
    pub fn from_outputs(y: Vec<f64>) -> Self {
        let m = y.len() as f64;
        let mean = y.iter().sum::<f64>() / m;
        let s2 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        EnsembleOutputs { y, mean, s2 }
    }
}

/// The quadratic-form coefficients `b_{mm'} = 1/M·[m = m'] - 1/M²` that
/// express the variance as a linear combination of output products.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    b: Matrix,
}

/// Builds the M×M coefficient matrix for an M-member ensemble.
pub fn coefficients(m: usize) -> Result<CoefficientMatrix> {
    if m < 2 {
        return Err(Error::InvalidParameter {
            context: "coefficients",
            detail: alloc::format!("need M >= 2, got {m}"),
        });
    }
    let mf = m as f64;
    let off = -1.0 / (mf * mf);
    let diag = 1.0 / mf + off;
    let mut b = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            b.set(i, j, if i == j { diag } else { off });
        }
    }
    Ok(CoefficientMatrix { b })
}

impl CoefficientMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.b
    }

    pub fn members(&self) -> usize {
        self.b.rows()
    }

    /// Evaluates the quadratic form `Σ_{m,m'} b_{mm'} y_m y_{m'}`.
    pub fn apply(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.b.rows() {
            return Err(Error::DimensionMismatch {
                context: "CoefficientMatrix::apply",
                expected: self.b.rows(),
                got: y.len(),
            });
        }
        let mut total = 0.0;
        for (i, &yi) in y.iter().enumerate() {
            let row = self.b.row(i);
            for (j, &yj) in y.iter().enumerate() {
                total += row[j] * yi * yj;
            }
        }
        Ok(total)
    }
}

/// One ensemble member's scalar output as a differentiable function.
#[derive(Debug, Clone, Copy)]
pub struct MemberFunction<'a> {
    model: &'a EnsembleModel,
    member: usize,
    output_index: usize,
}

impl<'a> MemberFunction<'a> {
    pub fn new(model: &'a EnsembleModel, member: usize, output_index: usize) -> Self {
        MemberFunction {
            model,
            member,
            output_index,
        }
    }
}

impl ScalarFunction for MemberFunction<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.model.member_output(self.member, x)?[self.output_index])
    }
}

impl Differentiable for MemberFunction<'_> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.model
            .member_gradient(self.member, x, self.output_index)
    }
}

/// The ensemble variance as a differentiable scalar function of the input.
///
/// With a fixed output index this is `s²_k(x)`; with `output_index: None`
/// it is the multi-output total `Σ_k s²_k(x)`. The gradient uses
///
/// ```text
/// ∇s² = (2/M) Σ_m (y_m - ȳ) ∇y_m
/// ```
///
/// which is exact: the ȳ(x) dependence drops out because the centered
/// outputs sum to zero.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleVariance<'a> {
    model: &'a EnsembleModel,
    output_index: Option<usize>,
}

impl<'a> EnsembleVariance<'a> {
    pub fn new(model: &'a EnsembleModel, output_index: usize) -> Self {
        EnsembleVariance {
            model,
            output_index: Some(output_index),
        }
    }

    pub fn total(model: &'a EnsembleModel) -> Self {
        EnsembleVariance {
            model,
            output_index: None,
        }
    }

    fn dims(&self) -> Vec<usize> {
        match self.output_index {
            Some(k) => vec![k],
            None => (0..self.model.output_dim()).collect(),
        }
    }
}

impl ScalarFunction for EnsembleVariance<'_> {
    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for k in self.dims() {
            total += self.model.predict_all(x, k)?.s2;
        }
        Ok(total)
    }
}

impl Differentiable for EnsembleVariance<'_> {
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m_count = self.model.member_count();
        let mut grad = vec![0.0; self.model.input_dim()];
        for k in self.dims() {
            let outputs = self.model.predict_all(x, k)?;
            for m in 0..m_count {
                let weight = 2.0 / m_count as f64 * (outputs.y[m] - outputs.mean);
                if weight == 0.0 {
                    continue;
                }
                let g = self.model.member_gradient(m, x, k)?;
                for (gi, gm) in grad.iter_mut().zip(&g) {
                    *gi += weight * gm;
                }
            }
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{sample_dropout_plans, Activation, DenseLayer};
    use crate::rng::{rng_from_seed, standard_normal};
    use rand::Rng;

    /// A network computing the constant vector `b` (zero weights, bias b).
    fn constant_member(input_dim: usize, b: Vec<f64>) -> Mlp {
        let out = b.len();
        Mlp::new(vec![DenseLayer::new(
            Matrix::zeros(out, input_dim),
            b,
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    fn linear_member(w: Vec<Vec<f64>>) -> Mlp {
        let out = w.len();
        Mlp::new(vec![DenseLayer::new(
            Matrix::from_rows(&w).unwrap(),
            vec![0.0; out],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn predict_all_hand_variance() {
        let model = EnsembleModel::deep(vec![
            constant_member(2, vec![1.0]),
            constant_member(2, vec![3.0]),
        ])
        .unwrap();
        let out = model.predict_all(&[0.0, 0.0], 0).unwrap();
        assert_eq!(out.y, vec![1.0, 3.0]);
        assert_eq!(out.mean, 2.0);
        assert_eq!(out.s2, 1.0);
    }

    #[test]
    fn identical_members_have_zero_variance() {
        let member = Mlp::random(3, &[5], 1, 11).unwrap();
        let model = EnsembleModel::deep(vec![member.clone(), member.clone(), member]).unwrap();
        let out = model.predict_all(&[0.2, -0.4, 1.0], 0).unwrap();
        assert_eq!(out.s2, 0.0);
    }

    #[test]
    fn predict_all_three_members() {
        let model = EnsembleModel::deep(vec![
            constant_member(1, vec![0.0]),
            constant_member(1, vec![1.0]),
            constant_member(1, vec![2.0]),
        ])
        .unwrap();
        let out = model.predict_all(&[0.0], 0).unwrap();
        assert_eq!(out.mean, 1.0);
        assert!((out.s2 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ensemble_requires_two_members() {
        let err = EnsembleModel::deep(vec![constant_member(1, vec![0.0])]).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
    }

    #[test]
    fn ensemble_rejects_mismatched_members() {
        let err = EnsembleModel::deep(vec![
            constant_member(2, vec![0.0]),
            constant_member(3, vec![0.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn coefficients_m2_and_m3() {
        let b2 = coefficients(2).unwrap();
        assert_eq!(b2.matrix().as_slice(), &[0.25, -0.25, -0.25, 0.25]);
        let b3 = coefficients(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 2.0 / 9.0 } else { -1.0 / 9.0 };
                assert!((b3.matrix().get(i, j) - expected).abs() < 1e-16);
            }
        }
        assert!(coefficients(1).is_err());
    }

    #[test]
    fn coefficient_rows_sum_to_zero_and_trace_matches() {
        for m in 2..=20 {
            let c = coefficients(m).unwrap();
            for i in 0..m {
                let row_sum: f64 = c.matrix().row(i).iter().sum();
                assert!(row_sum.abs() <= 1e-15, "M={m} row {i}: {row_sum}");
            }
            let trace: f64 = (0..m).map(|i| c.matrix().get(i, i)).sum();
            let expected = (m as f64 - 1.0) / m as f64;
            assert!((trace - expected).abs() <= 1e-14);
            assert!(c.matrix().max_asymmetry() == 0.0);
        }
    }

    #[test]
    fn quadratic_form_equals_direct_variance() {
        let mut rng = rng_from_seed(2024);
        for _ in 0..1000 {
            let m = rng.gen_range(2..=20);
            let y: Vec<f64> = (0..m).map(|_| 3.0 * standard_normal(&mut rng)).collect();
            let direct = EnsembleOutputs::from_outputs(y.clone()).s2;
            let form = coefficients(m).unwrap().apply(&y).unwrap();
            let denom = direct.abs().max(1e-300);
            assert!(
                (form - direct).abs() / denom <= 1e-12,
                "M={m}: {form} vs {direct}"
            );
        }
    }

    #[test]
    fn multidim_variance_sums_dimensions() {
        let a = 0.5f64.sqrt();
        let model = EnsembleModel::deep(vec![
            constant_member(1, vec![1.0, a]),
            constant_member(1, vec![-1.0, -a]),
        ])
        .unwrap();
        // dim 0 variance 1, dim 1 variance 0.5
        let total = model.multidim_variance(&[0.0]).unwrap();
        assert!((total - 1.5).abs() < 1e-14);

        let single = EnsembleModel::deep(vec![
            constant_member(1, vec![1.0]),
            constant_member(1, vec![3.0]),
        ])
        .unwrap();
        assert_eq!(
            single.multidim_variance(&[0.0]).unwrap(),
            single.predict_all(&[0.0], 0).unwrap().s2
        );
    }

    #[test]
    fn multidim_variance_matches_per_dim_brute_force() {
        let members: Vec<Mlp> = (0..4)
            .map(|i| Mlp::random(3, &[6], 2, 70 + i).unwrap())
            .collect();
        let model = EnsembleModel::deep(members).unwrap();
        let x = [0.3, -0.8, 0.5];
        let brute: f64 = (0..2)
            .map(|k| {
                let y: Vec<f64> = (0..4)
                    .map(|m| model.member_output(m, &x).unwrap()[k])
                    .collect();
                EnsembleOutputs::from_outputs(y).s2
            })
            .sum();
        let got = model.multidim_variance(&x).unwrap();
        assert!((got - brute).abs() <= 1e-12 * brute.abs().max(1.0));
    }

    #[test]
    fn mc_dropout_with_rate_zero_is_degenerate() {
        let base = Mlp::random(3, &[8, 4], 1, 5).unwrap();
        let plans = sample_dropout_plans(&base, 0.0, 5, 1).unwrap();
        let model = EnsembleModel::mc_dropout(base, plans).unwrap();
        let out = model.predict_all(&[0.1, 0.2, 0.3], 0).unwrap();
        assert_eq!(out.s2, 0.0);
    }

    #[test]
    fn mc_dropout_members_are_frozen_functions() {
        let base = Mlp::random(4, &[10, 6], 1, 9).unwrap();
        let plans = sample_dropout_plans(&base, 0.3, 6, 42).unwrap();
        let model = EnsembleModel::mc_dropout(base, plans).unwrap();
        let x = [0.5, -0.1, 0.9, 0.0];
        let a = model.predict_all(&x, 0).unwrap();
        let b = model.predict_all(&x, 0).unwrap();
        assert_eq!(a, b);
        assert!(a.s2 > 0.0);
    }

    #[test]
    fn variance_gradient_linear_hand_case() {
        // w1 = [2,0], w2 = [0,1], x = [1,1]: y = (2,1), ȳ = 1.5,
        // ∇s² = (2/2)·(0.5·[2,0] + (-0.5)·[0,1]) = [1, -0.5].
        let model = EnsembleModel::deep(vec![
            linear_member(vec![vec![2.0, 0.0]]),
            linear_member(vec![vec![0.0, 1.0]]),
        ])
        .unwrap();
        let f = EnsembleVariance::new(&model, 0);
        assert_eq!(f.value(&[1.0, 1.0]).unwrap(), 0.25);
        let g = f.gradient(&[1.0, 1.0]).unwrap();
        assert!(
            (g[0] - 1.0).abs() < 1e-15 && (g[1] + 0.5).abs() < 1e-15,
            "{g:?}"
        );
    }

    #[test]
    fn variance_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(31);
        let mut tested = 0;
        'outer: for case in 0..30 {
            let members: Vec<Mlp> = (0..3)
                .map(|i| Mlp::random(4, &[7, 5], 1, 900 + 10 * case + i).unwrap())
                .collect();
            let model = EnsembleModel::deep(members).unwrap();
            let x: Vec<f64> = (0..4).map(|_| standard_normal(&mut rng)).collect();
            let h = 1e-5;
            // Keep every member's activation pattern stable across probes.
            let patterns: Vec<_> = (0..3)
                .map(|m| model.member(m).0.activation_pattern(&x, None).unwrap())
                .collect();
            for i in 0..4 {
                for sign in [-1.0, 1.0] {
                    let mut xp = x.clone();
                    xp[i] += sign * h;
                    for m in 0..3 {
                        if model.member(m).0.activation_pattern(&xp, None).unwrap() != patterns[m] {
                            continue 'outer;
                        }
                    }
                }
            }
            let f = EnsembleVariance::new(&model, 0);
            let grad = f.gradient(&x).unwrap();
            for i in 0..4 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (f.value(&xp).unwrap() - f.value(&xm).unwrap()) / (2.0 * h);
                let denom = fd.abs().max(1e-8);
                assert!(
                    (grad[i] - fd).abs() / denom < 1e-4,
                    "case {case} coord {i}: {} vs {fd}",
                    grad[i]
                );
            }
            tested += 1;
        }
        assert!(tested >= 15, "too few stable cases: {tested}");
    }
}

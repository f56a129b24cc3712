//! Randomized invariant checks over the numeric core.
//!
//! Each property states an identity that must hold for every input in the
//! strategy's range, not just hand-picked fixtures; failures shrink to a
//! minimal counterexample.

use covxplain_core::data::{affine_quadruple_map, quadruple_inverse_vec, quadruple_map_vec};
use covxplain_core::data::{split_standardize, Dataset};
use covxplain_core::ensemble::{coefficients, EnsembleOutputs};
use covxplain_core::eval::{aufc, FlippingCurve};
use covxplain_core::firstorder::{gradient_x_input, lrp, Explanation, LrpConfig, MethodTag};
use covxplain_core::linalg::{pairwise_sum, Matrix};
use covxplain_core::nn::Mlp;
use covxplain_core::secondorder::{
    cov_explanation, cov_explanation_double_sum, product_attribution, summarize, SummaryMode,
};
use covxplain_core::{Differentiable, ScalarFunction};
use proptest::collection::vec;
use proptest::prelude::*;

fn value() -> impl Strategy<Value = f64> {
    -50.0..50.0f64
}

fn member_outputs() -> impl Strategy<Value = Vec<f64>> {
    vec(value(), 2..16)
}

proptest! {
    /// The coefficient form sum_{m,m'} b_{mm'} y_m y_{m'} is the member
    /// variance, for every member count and output combination.
    #[test]
    fn coefficient_form_equals_direct_variance(y in member_outputs()) {
        let outputs = EnsembleOutputs::from_outputs(y.clone());
        let b = coefficients(y.len()).unwrap();
        let quad = b.apply(&y).unwrap();
        let scale = outputs.s2.abs().max(1e-9);
        prop_assert!((quad - outputs.s2).abs() <= 1e-10 * scale,
            "quadratic {quad} vs direct {}", outputs.s2);
    }

    /// Coefficient matrices are symmetric, have zero row sums, and carry
    /// trace (M-1)/M.
    #[test]
    fn coefficient_matrix_invariants(m in 2usize..24) {
        let b = coefficients(m).unwrap();
        let mat = b.matrix();
        prop_assert!(mat.max_asymmetry() == 0.0);
        for r in 0..m {
            prop_assert!(pairwise_sum(mat.row(r)).abs() <= 1e-15);
        }
        let trace: f64 = (0..m).map(|i| mat.get(i, i)).sum();
        let expected = (m as f64 - 1.0) / m as f64;
        prop_assert!((trace - expected).abs() <= 1e-12);
    }

    /// The covariance of member explanations equals the coefficient-form
    /// double sum over outer products, entry by entry.
    #[test]
    fn covariance_equals_double_sum(
        rows in vec(vec(value(), 4), 2..10),
    ) {
        let explanations: Vec<Explanation> = rows
            .iter()
            .map(|r| {
                Explanation::new(r.clone(), pairwise_sum(r), MethodTag::GradientInput).unwrap()
            })
            .collect();
        let a = cov_explanation(&explanations).unwrap();
        let b = cov_explanation_double_sum(&explanations).unwrap();
        for (x, y) in a.r.as_slice().iter().zip(b.r.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{x} vs {y}");
        }
        prop_assert!(a.r.max_asymmetry() <= 1e-12);
    }

    /// When member explanations are conservative (scores sum to the member
    /// target), the second-order matrix total is the variance of the
    /// targets.
    #[test]
    fn conservative_members_give_conservative_matrix(
        rows in vec(vec(value(), 3), 2..10),
    ) {
        let explanations: Vec<Explanation> = rows
            .iter()
            .map(|r| {
                Explanation::new(r.clone(), pairwise_sum(r), MethodTag::GradientInput).unwrap()
            })
            .collect();
        let second = cov_explanation(&explanations).unwrap();
        let targets: Vec<f64> = explanations.iter().map(|e| e.target_value).collect();
        let s2 = EnsembleOutputs::from_outputs(targets).s2;
        prop_assert!((second.total() - s2).abs() <= 1e-9 * s2.abs().max(1.0),
            "total {} vs s2 {s2}", second.total());
    }

    /// Marginal summarization preserves the matrix total exactly up to
    /// rounding; diagonal summarization of a diagonal matrix agrees with it.
    #[test]
    fn summarization_identities(entries in vec(value(), 16)) {
        let wrap = |r: Matrix| covxplain_core::secondorder::SecondOrderExplanation {
            s2: r.as_slice().iter().sum(),
            base_method: MethodTag::GradientInput,
            r,
        };
        let full = wrap(Matrix::from_vec(4, 4, entries).unwrap());
        let marg = summarize(&full, SummaryMode::Marg);
        let total: f64 = full.r.as_slice().iter().sum();
        let marg_total: f64 = marg.scores.iter().sum();
        prop_assert!((marg_total - total).abs() <= 1e-10 * total.abs().max(1.0));

        let mut diag_only = Matrix::zeros(4, 4);
        for i in 0..4 {
            diag_only.set(i, i, full.r.get(i, i));
        }
        let diag_only = wrap(diag_only);
        let d = summarize(&diag_only, SummaryMode::Diag);
        let m = summarize(&diag_only, SummaryMode::Marg);
        for (a, b) in d.scores.iter().zip(&m.scores) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    /// The outer product of two conservative explanations totals the
    /// product of their targets.
    #[test]
    fn product_attribution_totals_product(
        a in vec(value(), 5),
        b in vec(value(), 5),
    ) {
        let ea = Explanation::new(a.clone(), pairwise_sum(&a), MethodTag::GradientInput).unwrap();
        let eb = Explanation::new(b.clone(), pairwise_sum(&b), MethodTag::GradientInput).unwrap();
        let p = product_attribution(&ea, &eb).unwrap();
        let total: f64 = p.as_slice().iter().sum();
        let expected = ea.target_value * eb.target_value;
        prop_assert!((total - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }

    /// Gradient×Input on a linear function recovers w_i x_i exactly and
    /// sums to the zero-intercept function value.
    #[test]
    fn gradient_x_input_linear_closed_form(
        w in vec(value(), 4),
        x in vec(value(), 4),
    ) {
        let f = covxplain_core::WithGradient {
            f: |p: &[f64]| p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>(),
            grad: |_: &[f64]| w.clone(),
        };
        let e = gradient_x_input(&f, &x).unwrap();
        for ((s, wi), xi) in e.scores.iter().zip(&w).zip(&x) {
            prop_assert!((s - wi * xi).abs() <= 1e-12 * (wi * xi).abs().max(1e-9));
        }
        let fx = f.value(&x).unwrap();
        prop_assert!((e.total() - fx).abs() <= 1e-10 * fx.abs().max(1e-9));
    }

    /// LRP with gamma = 0 reproduces Gradient×Input on ReLU networks.
    #[test]
    fn lrp_zero_equals_gradient_x_input(seed in 0u64..1000, raw in vec(-2.0..2.0f64, 3)) {
        let net = Mlp::random(3, &[6, 4], 1, seed).unwrap();
        let member = NetFunction { net: &net };
        let gi = gradient_x_input(&member, &raw).unwrap();
        let l0 = lrp(&net, &raw, 0, None, &LrpConfig::generalized(0.0)).unwrap();
        for (a, b) in gi.scores.iter().zip(&l0.scores) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-9), "{a} vs {b}");
        }
    }

    /// Bias-free ReLU networks are positively homogeneous.
    #[test]
    fn bias_free_relu_networks_are_homogeneous(
        seed in 0u64..500,
        x in vec(-3.0..3.0f64, 4),
        alpha in 0.01..10.0f64,
    ) {
        let net = bias_free(4, &[8, 5], seed);
        let scaled: Vec<f64> = x.iter().map(|v| alpha * v).collect();
        let y = net.output(&x, None).unwrap()[0];
        let ys = net.output(&scaled, None).unwrap()[0];
        prop_assert!((ys - alpha * y).abs() <= 1e-9 * (alpha * y).abs().max(1e-9));
    }

    /// AUFC respects point-wise dominance and stays within the curve's
    /// value range.
    #[test]
    fn aufc_dominance_and_bounds(pairs in vec((0.0..2.0f64, 0.0..2.0f64), 5)) {
        let d = pairs.len();
        let fractions: Vec<f64> = (0..=d).map(|k| k as f64 / d as f64).collect();
        let mut lo = vec![1.0];
        let mut hi = vec![1.0];
        for (a, b) in &pairs {
            lo.push(a.min(*b));
            hi.push(a.max(*b));
        }
        let mk = |values: Vec<f64>| FlippingCurve {
            values,
            fractions: fractions.clone(),
            draws: 1,
            discarded_draws: 0,
            uniform_fallbacks: 0,
        };
        let area_lo = aufc(&mk(lo.clone()));
        let area_hi = aufc(&mk(hi.clone()));
        prop_assert!(area_lo <= area_hi + 1e-12);
        let max_hi = hi.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(area_hi >= 0.0 && area_hi <= max_hi + 1e-12);
    }

    /// Standardized training columns are centered with unit spread (or were
    /// reported as clamped), and the affine quadruple map roundtrips.
    #[test]
    fn split_standardize_centers_training_columns(
        rows in vec(vec(-10.0..10.0f64, 3), 12..40),
        seed in 0u64..100,
    ) {
        let n = rows.len();
        let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0]]).collect();
        let ds = Dataset::new(
            Matrix::from_rows(&rows).unwrap(),
            Matrix::from_rows(&y).unwrap(),
            (0..3).map(|i| format!("f{i}")).collect(),
            vec![String::from("t")],
        )
        .unwrap();
        let out = split_standardize(&ds, 0.75, seed).unwrap();
        let train = &out.train;
        prop_assert_eq!(train.len() + out.test.len(), n);
        for c in 0..3 {
            let col: Vec<f64> = (0..train.len()).map(|r| train.x.get(r, c)).collect();
            let mean = pairwise_sum(&col) / col.len() as f64;
            prop_assert!(mean.abs() <= 1e-8, "column {c} mean {mean}");
            if !out.clamped_features.contains(&c) {
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / col.len() as f64;
                prop_assert!((var.sqrt() - 1.0).abs() <= 1e-8, "column {c} sd {}", var.sqrt());
            }
        }
    }

    /// Every feature grouped by the quadruple map stays recoverable and no
    /// group is entirely zero.
    #[test]
    fn quadruple_map_roundtrip_and_nonzero(x in vec(-100.0..100.0f64, 1..6)) {
        let mapped = quadruple_map_vec(&x);
        prop_assert_eq!(mapped.len(), 4 * x.len());
        for group in mapped.chunks_exact(4) {
            prop_assert!(group.iter().any(|&v| v != 0.0));
        }
        let back = quadruple_inverse_vec(&mapped).unwrap();
        for (b, v) in back.iter().zip(&x) {
            prop_assert!((b - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }
}

/// Quadruple-mapped datasets keep their row count and quadruple their
/// feature count; checked once outside proptest because dataset
/// construction dominates the runtime.
#[test]
fn quadruple_dataset_shape() {
    let rows: Vec<Vec<f64>> = (0..20)
        .map(|i| vec![i as f64 / 7.0, -(i as f64) / 11.0])
        .collect();
    let y: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0] + r[1]]).collect();
    let ds = Dataset::new(
        Matrix::from_rows(&rows).unwrap(),
        Matrix::from_rows(&y).unwrap(),
        vec![String::from("u"), String::from("v")],
        vec![String::from("t")],
    )
    .unwrap();
    let mapped = affine_quadruple_map(&ds).unwrap();
    assert_eq!(mapped.len(), 20);
    assert_eq!(mapped.dim(), 8);
}

struct NetFunction<'a> {
    net: &'a Mlp,
}

impl ScalarFunction for NetFunction<'_> {
    fn value(&self, x: &[f64]) -> covxplain_core::Result<f64> {
        Ok(self.net.output(x, None)?[0])
    }
}

impl Differentiable for NetFunction<'_> {
    fn gradient(&self, x: &[f64]) -> covxplain_core::Result<Vec<f64>> {
        self.net.input_gradient(x, 0, None)
    }
}

fn bias_free(input: usize, hidden: &[usize], seed: u64) -> Mlp {
    let raw = Mlp::random(input, hidden, 1, seed).unwrap();
    let layers: Vec<covxplain_core::nn::DenseLayer> = raw
        .layers()
        .iter()
        .map(|l| {
            covxplain_core::nn::DenseLayer::new(
                l.weights().clone(),
                vec![0.0; l.weights().rows()],
                l.activation(),
            )
            .unwrap()
        })
        .collect();
    Mlp::new(layers).unwrap()
}

//! First-order attribution backends.
//!
//! Everything here answers the same question for a scalar function f and a
//! query point x: how much does each input feature contribute to f(x)? The
//! gradient-based backends (Gradient×Input, sensitivity, integrated
//! gradients) work on any [`Differentiable`] function, so they apply both
//! to single network outputs and to the ensemble variance itself. LRP
//! propagates relevance through a recorded forward trace. The Shapley pair
//! gives a sampling estimator plus an exact enumeration oracle to test it
//! against. `variance_head_explanation` is the first-order baseline for
//! uncertainty: it seeds each member's share of the variance at that
//! member's output and sums the per-member heatmaps.

use alloc::vec;
use alloc::vec::Vec;

use crate::ensemble::EnsembleModel;
use crate::nn::{shuffle, DropoutPlan, ForwardTrace, Mlp};
use crate::rng::rng_from_seed;
use crate::{Differentiable, Error, Result, ScalarFunction};

/// Which backend produced an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodTag {
    GradientInput,
    Sensitivity,
    IntegratedGradients,
    Lrp,
    ShapleyExact,
    ShapleySampling,
    VarianceHeadLrp,
    VarianceHeadGradientInput,
}

/// Per-feature relevance scores for one explained output value.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    pub scores: Vec<f64>,
    pub target_value: f64,
    pub method: MethodTag,
}

impl Explanation {
    pub fn new(scores: Vec<f64>, target_value: f64, method: MethodTag) -> Result<Self> {
        if !scores.iter().all(|v| v.is_finite()) || !target_value.is_finite() {
            return Err(Error::NonFinite {
                context: "explanation scores",
            });
        }
        Ok(Explanation {
            scores,
            target_value,
            method,
        })
    }

    pub fn dim(&self) -> usize {
        self.scores.len()
    }

    /// Sum of all scores; equals `target_value` for conservative backends.
    pub fn total(&self) -> f64 {
        crate::linalg::pairwise_sum(&self.scores)
    }
}

/// Gradient×Input: `scores = ∇f(x) ⊙ x`.
pub fn gradient_x_input<F: Differentiable + ?Sized>(f: &F, x: &[f64]) -> Result<Explanation> {
    let g = checked_gradient(f, x)?;
    let scores = g.iter().zip(x).map(|(gi, xi)| gi * xi).collect();
    Explanation::new(scores, f.value(x)?, MethodTag::GradientInput)
}

/// Sensitivity analysis: `scores_i = |∂f/∂x_i|`. Not conservative.
pub fn sensitivity<F: Differentiable + ?Sized>(f: &F, x: &[f64]) -> Result<Explanation> {
    let g = checked_gradient(f, x)?;
    let scores = g.iter().map(|gi| gi.abs()).collect();
    Explanation::new(scores, f.value(x)?, MethodTag::Sensitivity)
}

/// Integrated gradients along the straight path from `reference` (origin
/// when omitted) to `x`, with a midpoint Riemann sum over `steps` segments.
///
/// Completeness: `Σ scores ≈ f(x) - f(reference)`, tightening as `steps`
/// grows.
pub fn integrated_gradients<F: Differentiable + ?Sized>(
    f: &F,
    x: &[f64],
    reference: Option<&[f64]>,
    steps: usize,
) -> Result<Explanation> {
    if steps < 1 {
        return Err(Error::InvalidParameter {
            context: "integrated_gradients",
            detail: "steps must be >= 1".into(),
        });
    }
    let zero;
    let r = match reference {
        Some(r) => r,
        None => {
            zero = vec![0.0; x.len()];
            &zero
        }
    };
    if r.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "integrated_gradients reference",
            expected: x.len(),
            got: r.len(),
        });
    }
    let mut acc = vec![0.0; x.len()];
    let mut point = vec![0.0; x.len()];
    for t in 0..steps {
        let alpha = (t as f64 + 0.5) / steps as f64;
        for (p, (xi, ri)) in point.iter_mut().zip(x.iter().zip(r)) {
            *p = ri + alpha * (xi - ri);
        }
        let g = f.gradient(&point)?;
        if !g.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "integrated_gradients path gradient",
            });
        }
        for (a, gi) in acc.iter_mut().zip(&g) {
            *a += gi;
        }
    }
    let scores = acc
        .iter()
        .zip(x.iter().zip(r))
        .map(|(a, (xi, ri))| (xi - ri) * a / steps as f64)
        .collect();
    Explanation::new(scores, f.value(x)?, MethodTag::IntegratedGradients)
}

fn checked_gradient<F: Differentiable + ?Sized>(f: &F, x: &[f64]) -> Result<Vec<f64>> {
    let g = f.gradient(x)?;
    if g.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient length",
            expected: x.len(),
            got: g.len(),
        });
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Layer-wise relevance propagation
// ---------------------------------------------------------------------------

/// Which propagation rule the γ parameter modifies.
///
/// `Simple` boosts positive WEIGHTS and assumes every layer input is
/// non-negative; on signed (e.g. standardized) inputs it is refused.
/// `Generalized` boosts positive or negative CONTRIBUTIONS depending on the
/// sign of the receiving pre-activation, which handles signed inputs and is
/// the default for tabular data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrpVariant {
    Simple,
    Generalized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrpConfig {
    pub gamma: f64,
    pub variant: LrpVariant,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            gamma: 0.2,
            variant: LrpVariant::Generalized,
        }
    }
}

impl LrpConfig {
    pub fn simple(gamma: f64) -> Self {
        LrpConfig {
            gamma,
            variant: LrpVariant::Simple,
        }
    }

    pub fn generalized(gamma: f64) -> Self {
        LrpConfig {
            gamma,
            variant: LrpVariant::Generalized,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidParameter {
                context: "LrpConfig",
                detail: alloc::format!("gamma must be finite and >= 0, got {}", self.gamma),
            });
        }
        Ok(())
    }
}

/// An LRP result plus how often the zero-denominator stabilizer fired.
#[derive(Debug, Clone)]
pub struct LrpOutcome {
    pub explanation: Explanation,
    pub stabilizer_hits: usize,
}

const LRP_STABILIZER: f64 = 1e-9;

/// LRP-γ attribution of one network output, seeded with the raw output
/// value.
///
/// Relevance flows layer by layer. At each neuron the incoming relevance is
/// split proportionally to the (γ-modified) input contributions; the bias
/// acts as an extra input whose share is deliberately dropped, so relevance
/// leaks at biased layers and is conserved exactly at bias-free ones. A
/// denominator of exactly zero is replaced by `ζ + 1e-9·sign(ζ)` (with
/// `sign(0) = +1`) and counted in the returned outcome.
pub fn lrp_detailed(
    mlp: &Mlp,
    x: &[f64],
    output_index: usize,
    plan: Option<&DropoutPlan>,
    config: &LrpConfig,
) -> Result<LrpOutcome> {
    config.validate()?;
    if output_index >= mlp.output_dim() {
        return Err(Error::DimensionMismatch {
            context: "lrp output_index",
            expected: mlp.output_dim(),
            got: output_index,
        });
    }
    let (y, trace) = mlp.forward(x, plan)?;
    if config.variant == LrpVariant::Simple {
        check_simple_applicable(&trace)?;
    }
    let mut seed = vec![0.0; mlp.output_dim()];
    seed[output_index] = y[output_index];
    let (scores, hits) = propagate_relevance(mlp, &trace, seed, config);
    Ok(LrpOutcome {
        explanation: Explanation::new(scores, y[output_index], MethodTag::Lrp)?,
        stabilizer_hits: hits,
    })
}

/// [`lrp_detailed`] without the stabilizer diagnostics.
pub fn lrp(
    mlp: &Mlp,
    x: &[f64],
    output_index: usize,
    plan: Option<&DropoutPlan>,
    config: &LrpConfig,
) -> Result<Explanation> {
    lrp_detailed(mlp, x, output_index, plan, config).map(|o| o.explanation)
}

fn check_simple_applicable(trace: &ForwardTrace) -> Result<()> {
    if trace.input.iter().any(|&v| v < 0.0) {
        return Err(Error::SimpleLrpSignedInput { layer: 0 });
    }
    // The inputs of layer l+1 are the post-activations of layer l.
    for (l, post) in trace.post[..trace.post.len() - 1].iter().enumerate() {
        if post.iter().any(|&v| v < 0.0) {
            return Err(Error::SimpleLrpSignedInput { layer: l + 1 });
        }
    }
    Ok(())
}

/// Runs the configured rule from an arbitrary output-relevance seed down to
/// the input features.
fn propagate_relevance(
    mlp: &Mlp,
    trace: &ForwardTrace,
    seed: Vec<f64>,
    config: &LrpConfig,
) -> (Vec<f64>, usize) {
    let gamma = config.gamma;
    let mut hits = 0usize;
    let mut relevance = seed;
    for l in (0..mlp.layers().len()).rev() {
        let layer = &mlp.layers()[l];
        let inputs: &[f64] = if l == 0 {
            &trace.input
        } else {
            &trace.post[l - 1]
        };
        let mut down = vec![0.0; inputs.len()];
        for k in 0..layer.fan_out() {
            let rk = relevance[k];
            if rk == 0.0 {
                continue;
            }
            let zk = trace.pre[l][k];
            let wrow = layer.weights().row(k);
            let bk = layer.bias()[k];
            // Modified contribution of input j (and of the bias as the
            // extra input "0"), per variant.
            let modify = |c: f64, w: f64, a: f64| -> f64 {
                match config.variant {
                    LrpVariant::Simple => c + gamma * a * w.max(0.0),
                    LrpVariant::Generalized => {
                        if zk >= 0.0 {
                            c + gamma * c.max(0.0)
                        } else {
                            c + gamma * c.min(0.0)
                        }
                    }
                }
            };
            let mut denom = modify(bk, bk, 1.0);
            for (&w, &a) in wrow.iter().zip(inputs) {
                denom += modify(a * w, w, a);
            }
            if denom == 0.0 {
                denom = LRP_STABILIZER;
                hits += 1;
            }
            let scale = rk / denom;
            for (dj, (&w, &a)) in down.iter_mut().zip(wrow.iter().zip(inputs)) {
                *dj += modify(a * w, w, a) * scale;
            }
        }
        relevance = down;
    }
    (relevance, hits)
}

// ---------------------------------------------------------------------------
// Shapley values
// ---------------------------------------------------------------------------

/// Largest dimension accepted by the exact enumeration.
pub const SHAPLEY_EXACT_MAX_DIM: usize = 12;

/// Exact Shapley values of the game `S ↦ f(x_S)` where features outside `S`
/// are replaced by the baseline. Costs `2^d` evaluations of `f`.
pub fn shapley_exact<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
) -> Result<Explanation> {
    let d = x.len();
    if baseline.len() != d {
        return Err(Error::DimensionMismatch {
            context: "shapley_exact baseline",
            expected: d,
            got: baseline.len(),
        });
    }
    if d == 0 {
        return Err(Error::InvalidParameter {
            context: "shapley_exact",
            detail: "empty input".into(),
        });
    }
    if d > SHAPLEY_EXACT_MAX_DIM {
        return Err(Error::ShapleyTooManyFeatures {
            dim: d,
            max: SHAPLEY_EXACT_MAX_DIM,
        });
    }
    let full = 1usize << d;
    let mut values = Vec::with_capacity(full);
    let mut z = vec![0.0; d];
    for mask in 0..full {
        for i in 0..d {
            z[i] = if mask & (1 << i) != 0 {
                x[i]
            } else {
                baseline[i]
            };
        }
        values.push(f.value(&z)?);
    }
    // fact[k] = k!; exact in f64 for d <= 12.
    let mut fact = vec![1.0; d + 1];
    for k in 1..=d {
        fact[k] = fact[k - 1] * k as f64;
    }
    let mut scores = vec![0.0; d];
    for i in 0..d {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..full {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let weight = fact[s] * fact[d - s - 1] / fact[d];
            acc += weight * (values[mask | bit] - values[mask]);
        }
        scores[i] = acc;
    }
    Explanation::new(scores, values[full - 1], MethodTag::ShapleyExact)
}

/// Permutation-sampling Shapley estimate: unbiased for [`shapley_exact`]
/// and deterministic for a given seed. Costs `permutations·(d+1)`
/// evaluations.
pub fn shapley_value_sampling<F: ScalarFunction + ?Sized>(
    f: &F,
    x: &[f64],
    baseline: &[f64],
    permutations: usize,
    seed: u64,
) -> Result<Explanation> {
    let d = x.len();
    if baseline.len() != d {
        return Err(Error::DimensionMismatch {
            context: "shapley_value_sampling baseline",
            expected: d,
            got: baseline.len(),
        });
    }
    if permutations < 1 {
        return Err(Error::InvalidParameter {
            context: "shapley_value_sampling",
            detail: "permutations must be >= 1".into(),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let mut scores = vec![0.0; d];
    let mut z = vec![0.0; d];
    for _ in 0..permutations {
        shuffle(&mut order, &mut rng);
        z.copy_from_slice(baseline);
        let mut prev = f.value(&z)?;
        for &i in &order {
            z[i] = x[i];
            let cur = f.value(&z)?;
            scores[i] += cur - prev;
            prev = cur;
        }
    }
    for s in scores.iter_mut() {
        *s /= permutations as f64;
    }
    Explanation::new(scores, f.value(x)?, MethodTag::ShapleySampling)
}

/// Default permutation budget for sampling-based Shapley values.
pub fn default_svs_permutations(d: usize) -> usize {
    (16 * d).max(128)
}

// ---------------------------------------------------------------------------
// Variance-head baseline
// ---------------------------------------------------------------------------

/// Backend used below each member's output by the variance-head baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarianceHeadBackend {
    GradientInput,
    Lrp(LrpConfig),
}

/// First-order baseline explanation of the ensemble variance itself.
///
/// The variance is viewed as a fixed head on top of the members: each
/// member output feeds `a(y_m) = (y_m - ȳ)²` (with ȳ treated as constant)
/// followed by the 1/M aggregation. The head hands relevance
/// `(1/M)(y_m - ȳ)²` to member m's output neuron; that relevance is
/// propagated down with the chosen backend and the M input heatmaps are
/// summed. With the Gradient×Input backend this equals Gradient×Input
/// applied to the fixed-ȳ surrogate of s².
pub fn variance_head_detailed(
    model: &EnsembleModel,
    x: &[f64],
    output_index: usize,
    backend: &VarianceHeadBackend,
) -> Result<LrpOutcome> {
    let outputs = model.predict_all(x, output_index)?;
    let m_count = model.member_count();
    let mut scores = vec![0.0; model.input_dim()];
    let mut hits = 0usize;
    let mut method = MethodTag::VarianceHeadGradientInput;
    for m in 0..m_count {
        let dev = outputs.y[m] - outputs.mean;
        let head = dev * dev / m_count as f64;
        match backend {
            VarianceHeadBackend::GradientInput => {
                // d s²/d y_m with ȳ fixed, times the member gradient.
                let weight = 2.0 / m_count as f64 * (outputs.y[m] - outputs.mean);
                if weight == 0.0 {
                    continue;
                }
                let g = model.member_gradient(m, x, output_index)?;
                for ((si, gi), xi) in scores.iter_mut().zip(&g).zip(x) {
                    *si += weight * gi * xi;
                }
            }
            VarianceHeadBackend::Lrp(config) => {
                method = MethodTag::VarianceHeadLrp;
                config.validate()?;
                if head == 0.0 {
                    continue;
                }
                let (net, plan) = model.member(m);
                let (_, trace) = net.forward(x, plan)?;
                if config.variant == LrpVariant::Simple {
                    check_simple_applicable(&trace)?;
                }
                let mut seed = vec![0.0; model.output_dim()];
                seed[output_index] = head;
                let (member_scores, member_hits) = propagate_relevance(net, &trace, seed, config);
                hits += member_hits;
                for (si, mi) in scores.iter_mut().zip(&member_scores) {
                    *si += mi;
                }
            }
        }
    }
    Ok(LrpOutcome {
        explanation: Explanation::new(scores, outputs.s2, method)?,
        stabilizer_hits: hits,
    })
}

/// [`variance_head_detailed`] without the stabilizer diagnostics.
pub fn variance_head_explanation(
    model: &EnsembleModel,
    x: &[f64],
    output_index: usize,
    backend: &VarianceHeadBackend,
) -> Result<Explanation> {
    variance_head_detailed(model, x, output_index, backend).map(|o| o.explanation)
}

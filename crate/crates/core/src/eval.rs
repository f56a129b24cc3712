//! Faithfulness evaluation by feature flipping.
//!
//! The question: if an explanation says these features carry the
//! uncertainty, does removing exactly those features actually collapse the
//! uncertainty? "Removing" a feature means resampling it from a Gaussian
//! KDE over the training data, conditioned on the features that remain.
//! Flipping features from most to least relevant traces a curve of
//! normalized s² values; a faithful explanation drives the curve down
//! fast, so a SMALLER area under the flipping curve (AUFC) is better.
//!
//! Draw streams are derived from (seed, instance, step, draw) and never
//! from the method, so two methods that produce the same ranking see
//! exactly the same resampled points and land on exactly the same curve.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ensemble::{EnsembleModel, EnsembleVariance};
use crate::firstorder::{
    integrated_gradients, sensitivity, shapley_value_sampling, variance_head_explanation,
    LrpConfig, VarianceHeadBackend,
};
use crate::fmath;
use crate::linalg::Matrix;
use crate::rng::{derive_seed, rng_from_seed, standard_normal, StreamRng};
use crate::secondorder::{explain_uncertainty_summarized, FirstOrderMethod, SummaryMode};
use crate::{Error, Result, ScalarFunction};

/// Gaussian-kernel density model over training rows, used to resample
/// removed features conditioned on kept ones.
#[derive(Debug, Clone)]
pub struct KdeInpainter {
    train: Matrix,
    bandwidth: f64,
    /// Columns whose zero variance forced a jitter of scale 1e-6 at fit
    /// time; callers should surface these as warnings.
    pub jittered_columns: Vec<usize>,
}

/// Scale of the noise added to zero-variance columns, and the fixed stream
/// that generates it (fitting must stay deterministic).
const JITTER_SCALE: f64 = 1e-6;
const JITTER_SEED: u64 = 0x4a49_5454;

/// Default bandwidth grid: 15 log-spaced values in [0.05, 2.0], sized for
/// standardized data.
pub fn default_bandwidth_grid() -> Vec<f64> {
    let (lo, hi, n) = (0.05f64, 2.0f64, 15);
    let ratio = hi / lo;
    (0..n)
        .map(|i| lo * fmath::exp(fmath::ln(ratio) * i as f64 / (n - 1) as f64))
        .collect()
}

impl KdeInpainter {
    /// Direct construction with a known bandwidth.
    pub fn new(train: Matrix, bandwidth: f64) -> Result<Self> {
        if train.rows() < 2 {
            return Err(Error::InvalidParameter {
                context: "KdeInpainter::new",
                detail: alloc::format!("need at least 2 training rows, got {}", train.rows()),
            });
        }
        if !(bandwidth.is_finite() && bandwidth > 0.0) {
            return Err(Error::InvalidParameter {
                context: "KdeInpainter::new",
                detail: alloc::format!("bandwidth must be positive, got {bandwidth}"),
            });
        }
        if !train.is_finite() {
            return Err(Error::NonFinite {
                context: "KdeInpainter training matrix",
            });
        }
        Ok(KdeInpainter {
            train,
            bandwidth,
            jittered_columns: Vec::new(),
        })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.train.cols()
    }
}

/// Selects the kernel bandwidth by validated likelihood: every fifth row
/// is held out, the KDE is formed over the remaining rows, and the grid
/// value maximizing the held-out log-likelihood wins. Zero-variance
/// columns are jittered (scale 1e-6, fixed stream) before fitting and
/// reported on the returned inpainter.
pub fn fit_inpainter(train: &Matrix, bandwidth_grid: &[f64]) -> Result<KdeInpainter> {
    if train.rows() < 10 {
        return Err(Error::InvalidParameter {
            context: "fit_inpainter",
            detail: alloc::format!("need at least 10 training rows, got {}", train.rows()),
        });
    }
    if bandwidth_grid.is_empty() {
        return Err(Error::InvalidParameter {
            context: "fit_inpainter",
            detail: "bandwidth grid is empty".into(),
        });
    }
    for &h in bandwidth_grid {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidParameter {
                context: "fit_inpainter",
                detail: alloc::format!("bandwidths must be positive, got {h}"),
            });
        }
    }
    if !train.is_finite() {
        return Err(Error::NonFinite {
            context: "fit_inpainter training matrix",
        });
    }

    let (data, jittered_columns) = jitter_constant_columns(train);

    if bandwidth_grid.len() == 1 {
        let mut inp = KdeInpainter::new(data, bandwidth_grid[0])?;
        inp.jittered_columns = jittered_columns;
        return Ok(inp);
    }

    let held: Vec<usize> = (0..data.rows()).filter(|i| i % 5 == 0).collect();
    let comps: Vec<usize> = (0..data.rows()).filter(|i| i % 5 != 0).collect();

    let mut best_h = bandwidth_grid[0];
    let mut best_ll = f64::NEG_INFINITY;
    for &h in bandwidth_grid {
        let mut ll = 0.0;
        for &i in &held {
            ll += kde_log_density(&data, &comps, data.row(i), h);
        }
        if ll > best_ll {
            best_ll = ll;
            best_h = h;
        }
    }

    let mut inp = KdeInpainter::new(data, best_h)?;
    inp.jittered_columns = jittered_columns;
    Ok(inp)
}

fn jitter_constant_columns(train: &Matrix) -> (Matrix, Vec<usize>) {
    let n = train.rows() as f64;
    let mut constant = Vec::new();
    for c in 0..train.cols() {
        let mean: f64 = (0..train.rows()).map(|r| train.get(r, c)).sum::<f64>() / n;
        let var: f64 = (0..train.rows())
            .map(|r| {
                let d = train.get(r, c) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        if fmath::sqrt(var) <= 1e-12 * mean.abs().max(1.0) {
            constant.push(c);
        }
    }
    if constant.is_empty() {
        return (train.clone(), constant);
    }
    let mut data = train.clone();
    let mut rng = rng_from_seed(JITTER_SEED);
    for &c in &constant {
        for r in 0..data.rows() {
            let v = data.get(r, c) + JITTER_SCALE * standard_normal(&mut rng);
            data.set(r, c, v);
        }
    }
    (data, constant)
}

/// Log density of `point` under the Gaussian KDE on the given component
/// rows, computed with log-sum-exp.
fn kde_log_density(data: &Matrix, comps: &[usize], point: &[f64], h: f64) -> f64 {
    let d = data.cols() as f64;
    let mut exponents = Vec::with_capacity(comps.len());
    let mut max = f64::NEG_INFINITY;
    for &r in comps {
        let mut sq = 0.0;
        for (a, b) in point.iter().zip(data.row(r)) {
            let diff = a - b;
            sq += diff * diff;
        }
        let e = -sq / (2.0 * h * h);
        if e > max {
            max = e;
        }
        exponents.push(e);
    }
    let sum: f64 = exponents.iter().map(|e| fmath::exp(e - max)).sum();
    max + fmath::ln(sum)
        - fmath::ln(comps.len() as f64)
        - d * (fmath::ln(h) + 0.5 * fmath::ln(2.0 * core::f64::consts::PI))
}

/// Replaces the `removed` coordinates of `x` with a draw from the KDE
/// conditioned on the kept coordinates. Kept coordinates are returned
/// bit-identical.
///
/// Mechanics: each training row is weighted by the Gaussian kernel on the
/// KEPT coordinates of its offset from `x`; one row is sampled from those
/// weights and its removed coordinates are copied out with additive
/// Gaussian noise of the kernel scale. If every weight underflows the
/// sampler falls back to uniform row weights (reported by the detailed
/// variant).
pub fn conditional_resample(
    inp: &KdeInpainter,
    x: &[f64],
    removed: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = rng_from_seed(seed);
    conditional_resample_with_rng(inp, x, removed, &mut rng).map(|(p, _)| p)
}

/// [`conditional_resample`] reporting whether the uniform-weight fallback
/// fired, for callers that track warnings.
pub fn conditional_resample_detailed(
    inp: &KdeInpainter,
    x: &[f64],
    removed: &[usize],
    seed: u64,
) -> Result<(Vec<f64>, bool)> {
    let mut rng = rng_from_seed(seed);
    conditional_resample_with_rng(inp, x, removed, &mut rng)
}

fn conditional_resample_with_rng(
    inp: &KdeInpainter,
    x: &[f64],
    removed: &[usize],
    rng: &mut StreamRng,
) -> Result<(Vec<f64>, bool)> {
    let d = inp.train.cols();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            context: "conditional_resample input",
            expected: d,
            got: x.len(),
        });
    }
    if removed.is_empty() {
        return Err(Error::InvalidParameter {
            context: "conditional_resample",
            detail: "removed set is empty".into(),
        });
    }
    let mut is_removed = vec![false; d];
    for &i in removed {
        if i >= d {
            return Err(Error::DimensionMismatch {
                context: "conditional_resample removed index",
                expected: d,
                got: i,
            });
        }
        if is_removed[i] {
            return Err(Error::InvalidParameter {
                context: "conditional_resample",
                detail: alloc::format!("duplicate removed index {i}"),
            });
        }
        is_removed[i] = true;
    }

    let h = inp.bandwidth;
    let n = inp.train.rows();
    // Kernel weights on kept coordinates, max-shifted before exponentiation.
    let mut log_w = Vec::with_capacity(n);
    let mut max = f64::NEG_INFINITY;
    for r in 0..n {
        let row = inp.train.row(r);
        let mut sq = 0.0;
        for i in 0..d {
            if !is_removed[i] {
                let diff = x[i] - row[i];
                sq += diff * diff;
            }
        }
        let e = -sq / (2.0 * h * h);
        if e > max {
            max = e;
        }
        log_w.push(e);
    }
    let mut fallback = false;
    let mut weights: Vec<f64>;
    if max.is_finite() {
        weights = log_w.iter().map(|e| fmath::exp(e - max)).collect();
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            fallback = true;
        } else {
            // Normalize so the categorical draw below is scale-free.
            for w in weights.iter_mut() {
                *w /= total;
            }
        }
    } else {
        weights = Vec::new();
        fallback = true;
    }
    if fallback {
        weights = vec![1.0 / n as f64; n];
    }

    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut component = n - 1;
    for (r, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            component = r;
            break;
        }
    }

    let mut out = x.to_vec();
    let comp_row = inp.train.row(component);
    for i in 0..d {
        if is_removed[i] {
            out[i] = comp_row[i] + h * standard_normal(rng);
        }
    }
    Ok((out, fallback))
}

/// Trajectory of normalized s² values as the top-k ranked features are
/// removed, k = 0..=d.
#[derive(Debug, Clone, PartialEq)]
pub struct FlippingCurve {
    /// `values[k]` is mean s² after jointly resampling the top k features,
    /// divided by s²(x); `values[0]` is exactly 1.
    pub values: Vec<f64>,
    /// Fraction-flipped axis `k/d`.
    pub fractions: Vec<f64>,
    pub draws: usize,
    /// Diagnostics: draws discarded for non-finite s², and resampling
    /// calls that fell back to uniform component weights.
    pub discarded_draws: usize,
    pub uniform_fallbacks: usize,
}

/// Threshold below which an instance's uncertainty is too small to
/// normalize a flipping curve against.
pub const NEGLIGIBLE_S2: f64 = 1e-12;

/// Flips features from most to least relevant (ties broken by ascending
/// index) and records the uncertainty trajectory.
///
/// At step k the top-k features are resampled JOINTLY and afresh,
/// conditioned on the d-k kept ones, so the curve does not depend on the
/// order in which earlier imputations happened to land. Each step averages
/// `draws` independent resamplings.
pub fn feature_flip<F: ScalarFunction + ?Sized>(
    s2_fn: &F,
    ranking: &[f64],
    x: &[f64],
    inp: &KdeInpainter,
    draws: usize,
    seed: u64,
) -> Result<FlippingCurve> {
    let d = x.len();
    if ranking.len() != d {
        return Err(Error::DimensionMismatch {
            context: "feature_flip ranking",
            expected: d,
            got: ranking.len(),
        });
    }
    if inp.dim() != d {
        return Err(Error::DimensionMismatch {
            context: "feature_flip inpainter",
            expected: d,
            got: inp.dim(),
        });
    }
    if draws < 1 {
        return Err(Error::InvalidParameter {
            context: "feature_flip",
            detail: "draws must be >= 1".into(),
        });
    }
    let s2_initial = s2_fn.value(x)?;
    if !(s2_initial >= NEGLIGIBLE_S2) {
        return Err(Error::NegligibleUncertainty { s2: s2_initial });
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        ranking[b]
            .partial_cmp(&ranking[a])
            .expect("finite ranking scores")
            .then(a.cmp(&b))
    });

    let mut values = Vec::with_capacity(d + 1);
    values.push(1.0);
    let mut discarded = 0usize;
    let mut fallbacks = 0usize;
    let mut removed: Vec<usize> = Vec::with_capacity(d);
    for k in 1..=d {
        removed.push(order[k - 1]);
        let mut acc = 0.0;
        let mut kept = 0usize;
        for draw in 0..draws {
            let draw_seed = derive_seed(seed, &[k as u64, draw as u64]);
            let (point, fell_back) = conditional_resample_detailed(inp, x, &removed, draw_seed)?;
            if fell_back {
                fallbacks += 1;
            }
            match s2_fn.value(&point) {
                Ok(v) if v.is_finite() => {
                    acc += v;
                    kept += 1;
                }
                Ok(_) | Err(Error::NonFiniteForward { .. }) | Err(Error::NonFinite { .. }) => {
                    discarded += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if kept == 0 {
            return Err(Error::AllDrawsDiscarded { step: k });
        }
        values.push(acc / kept as f64 / s2_initial);
    }

    let fractions = (0..=d).map(|k| k as f64 / d as f64).collect();
    Ok(FlippingCurve {
        values,
        fractions,
        draws,
        discarded_draws: discarded,
        uniform_fallbacks: fallbacks,
    })
}

/// Area under the flipping curve by the trapezoid rule on the
/// fraction-flipped axis.
pub fn aufc(curve: &FlippingCurve) -> f64 {
    let mut area = 0.0;
    for k in 1..curve.values.len() {
        let width = curve.fractions[k] - curve.fractions[k - 1];
        area += width * 0.5 * (curve.values[k] + curve.values[k - 1]);
    }
    area
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// One column of the benchmark table: an uncertainty explainer whose
/// ranking feeds the flipping procedure.
#[derive(Debug, Clone, PartialEq)]
pub enum BenchmarkMethod {
    CovLrp {
        config: LrpConfig,
        mode: SummaryMode,
    },
    CovGi {
        mode: SummaryMode,
    },
    VarianceHeadLrp {
        config: LrpConfig,
    },
    VarianceHeadGi,
    IntegratedGradients {
        steps: usize,
    },
    Sensitivity,
    ShapleySampling {
        permutations: usize,
    },
}

impl BenchmarkMethod {
    pub fn name(&self) -> String {
        let s = match self {
            BenchmarkMethod::CovLrp {
                mode: SummaryMode::Diag,
                ..
            } => "covlrp-diag",
            BenchmarkMethod::CovLrp {
                mode: SummaryMode::Marg,
                ..
            } => "covlrp-marg",
            BenchmarkMethod::CovGi {
                mode: SummaryMode::Diag,
            } => "covgi-diag",
            BenchmarkMethod::CovGi {
                mode: SummaryMode::Marg,
            } => "covgi-marg",
            BenchmarkMethod::VarianceHeadLrp { .. } => "lrp",
            BenchmarkMethod::VarianceHeadGi => "gi",
            BenchmarkMethod::IntegratedGradients { .. } => "ig",
            BenchmarkMethod::Sensitivity => "sa",
            BenchmarkMethod::ShapleySampling { .. } => "svs",
        };
        String::from(s)
    }

    /// The full method set of the benchmark table, with shared defaults.
    pub fn standard_set(gamma: f64, d: usize) -> Vec<BenchmarkMethod> {
        let config = LrpConfig::generalized(gamma);
        vec![
            BenchmarkMethod::CovLrp {
                config,
                mode: SummaryMode::Diag,
            },
            BenchmarkMethod::CovLrp {
                config,
                mode: SummaryMode::Marg,
            },
            BenchmarkMethod::CovGi {
                mode: SummaryMode::Diag,
            },
            BenchmarkMethod::CovGi {
                mode: SummaryMode::Marg,
            },
            BenchmarkMethod::VarianceHeadLrp { config },
            BenchmarkMethod::VarianceHeadGi,
            BenchmarkMethod::IntegratedGradients { steps: 64 },
            BenchmarkMethod::Sensitivity,
            BenchmarkMethod::ShapleySampling {
                permutations: crate::firstorder::default_svs_permutations(d),
            },
        ]
    }
}

/// Per-feature ranking scores of `method` at `x`. `svs_seed` feeds only
/// the sampling-based method; everything else is deterministic.
pub fn method_ranking(
    model: &EnsembleModel,
    method: &BenchmarkMethod,
    x: &[f64],
    svs_seed: u64,
) -> Result<Vec<f64>> {
    let f = EnsembleVariance::new(model, 0);
    Ok(match method {
        BenchmarkMethod::CovLrp { config, mode } => {
            explain_uncertainty_summarized(model, x, 0, &FirstOrderMethod::Lrp(*config), *mode)?
                .scores
        }
        BenchmarkMethod::CovGi { mode } => {
            explain_uncertainty_summarized(model, x, 0, &FirstOrderMethod::GradientInput, *mode)?
                .scores
        }
        BenchmarkMethod::VarianceHeadLrp { config } => {
            variance_head_explanation(model, x, 0, &VarianceHeadBackend::Lrp(*config))?.scores
        }
        BenchmarkMethod::VarianceHeadGi => {
            variance_head_explanation(model, x, 0, &VarianceHeadBackend::GradientInput)?.scores
        }
        BenchmarkMethod::IntegratedGradients { steps } => {
            integrated_gradients(&f, x, None, *steps)?.scores
        }
        BenchmarkMethod::Sensitivity => sensitivity(&f, x)?.scores,
        BenchmarkMethod::ShapleySampling { permutations } => {
            let zeros = vec![0.0; x.len()];
            shapley_value_sampling(&f, x, &zeros, *permutations, svs_seed)?.scores
        }
    })
}

/// One (instance, method) cell of the benchmark: ranking, flipping curve,
/// area. Pure function of its arguments, so tasks can run in any order or
/// in parallel without changing results.
#[derive(Debug, Clone)]
pub struct FlipTaskResult {
    pub instance_id: usize,
    pub s2_initial: f64,
    pub aufc: f64,
    pub curve: FlippingCurve,
}

const SEED_TAG_SVS: u64 = 0x5356_5321;
const SEED_TAG_FLIP: u64 = 0x464c_4950;

pub fn benchmark_task(
    model: &EnsembleModel,
    inp: &KdeInpainter,
    x: &[f64],
    instance_id: usize,
    method: &BenchmarkMethod,
    draws: usize,
    seed: u64,
) -> Result<FlipTaskResult> {
    let svs_seed = derive_seed(seed, &[SEED_TAG_SVS, instance_id as u64]);
    let ranking = method_ranking(model, method, x, svs_seed)?;
    let f = EnsembleVariance::new(model, 0);
    let flip_seed = derive_seed(seed, &[SEED_TAG_FLIP, instance_id as u64]);
    let curve = feature_flip(&f, &ranking, x, inp, draws, flip_seed)?;
    Ok(FlipTaskResult {
        instance_id,
        s2_initial: f.value(x)?,
        aufc: aufc(&curve),
        curve,
    })
}

/// Test instances ranked by uncertainty: the row indices and s² values of
/// the `top_k` highest-variance rows (ties by ascending row), excluding
/// rows whose uncertainty is below [`NEGLIGIBLE_S2`].
pub fn select_high_uncertainty(
    model: &EnsembleModel,
    test_x: &Matrix,
    top_k: usize,
) -> Result<Vec<(usize, f64)>> {
    let mut scored = Vec::with_capacity(test_x.rows());
    for r in 0..test_x.rows() {
        let s2 = model.predict_all(test_x.row(r), 0)?.s2;
        if s2 >= NEGLIGIBLE_S2 {
            scored.push((r, s2));
        }
    }
    scored.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("finite s2")
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(top_k);
    Ok(scored)
}

/// Aggregated flipping results for one method over the selected instances.
#[derive(Debug, Clone)]
pub struct AufcReport {
    pub method: String,
    pub dataset: String,
    pub instances: Vec<FlipTaskResult>,
    pub mean: f64,
    pub std: f64,
    /// Point-wise mean of the per-instance curves, for plotting.
    pub mean_curve: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub methods: Vec<BenchmarkMethod>,
    pub top_k: usize,
    pub draws: usize,
    pub seed: u64,
    pub dataset_name: String,
}

/// Runs the full flipping benchmark sequentially: selects the `top_k`
/// highest-uncertainty test rows, then evaluates every method on every
/// selected row. Identical configs give identical tables.
pub fn benchmark(
    model: &EnsembleModel,
    inp: &KdeInpainter,
    test_x: &Matrix,
    config: &BenchmarkConfig,
) -> Result<Vec<AufcReport>> {
    if config.top_k > test_x.rows() {
        return Err(Error::InvalidParameter {
            context: "benchmark",
            detail: alloc::format!("top_k {} exceeds test size {}", config.top_k, test_x.rows()),
        });
    }
    let selected = select_high_uncertainty(model, test_x, config.top_k)?;
    let mut reports = Vec::with_capacity(config.methods.len());
    for method in &config.methods {
        let mut instances = Vec::with_capacity(selected.len());
        for &(row, _) in &selected {
            instances.push(benchmark_task(
                model,
                inp,
                test_x.row(row),
                row,
                method,
                config.draws,
                config.seed,
            )?);
        }
        reports.push(summarize_method(
            method.name(),
            config.dataset_name.clone(),
            instances,
        ));
    }
    Ok(reports)
}

/// Folds per-instance results into the per-method report row.
pub fn summarize_method(
    method: String,
    dataset: String,
    instances: Vec<FlipTaskResult>,
) -> AufcReport {
    let n = instances.len().max(1) as f64;
    let mean = instances.iter().map(|i| i.aufc).sum::<f64>() / n;
    let var = instances
        .iter()
        .map(|i| (i.aufc - mean) * (i.aufc - mean))
        .sum::<f64>()
        / n;
    let curve_len = instances.first().map(|i| i.curve.values.len()).unwrap_or(0);
    let mut mean_curve = vec![0.0; curve_len];
    for inst in &instances {
        for (m, v) in mean_curve.iter_mut().zip(&inst.curve.values) {
            *m += v / instances.len() as f64;
        }
    }
    AufcReport {
        method,
        dataset,
        instances,
        mean,
        std: fmath::sqrt(var),
        mean_curve,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::linear_ensemble_from_weights;
    use crate::rng::rng_from_seed;

    fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        let mut m = Matrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, standard_normal(&mut rng));
            }
        }
        m
    }

    #[test]
    fn fitted_bandwidth_on_standard_normal_matches_reference_scale() {
        // Silverman's rule at N = 500 gives roughly 1.06·N^(-1/5) ≈ 0.30.
        let train = normal_matrix(500, 1, 10);
        let inp = fit_inpainter(&train, &default_bandwidth_grid()).unwrap();
        assert!(
            (0.1..=0.6).contains(&inp.bandwidth()),
            "bandwidth {}",
            inp.bandwidth()
        );
        assert!(inp.jittered_columns.is_empty());
    }

    #[test]
    fn singleton_grid_short_circuits() {
        let train = normal_matrix(50, 2, 11);
        let inp = fit_inpainter(&train, &[0.37]).unwrap();
        assert_eq!(inp.bandwidth(), 0.37);
    }

    #[test]
    fn duplicated_rows_select_the_same_bandwidth() {
        let train = normal_matrix(200, 2, 12);
        let mut doubled = Matrix::zeros(400, 2);
        for r in 0..400 {
            doubled.row_mut(r).copy_from_slice(train.row(r % 200));
        }
        let a = fit_inpainter(&train, &default_bandwidth_grid()).unwrap();
        let b = fit_inpainter(&doubled, &default_bandwidth_grid()).unwrap();
        assert_eq!(a.bandwidth(), b.bandwidth());
    }

    #[test]
    fn constant_column_is_jittered_and_reported() {
        let mut train = normal_matrix(60, 3, 13);
        for r in 0..60 {
            train.set(r, 1, 4.0);
        }
        let inp = fit_inpainter(&train, &[0.3]).unwrap();
        assert_eq!(inp.jittered_columns, vec![1]);
        let spread: Vec<f64> = (0..60).map(|r| inp.train.get(r, 1)).collect();
        assert!(spread.iter().any(|&v| v != 4.0));
        assert!(spread.iter().all(|&v| (v - 4.0).abs() < 1e-4));
    }

    #[test]
    fn unconditional_resample_tracks_training_mean() {
        let train = normal_matrix(500, 1, 14);
        let train_mean: f64 = (0..500).map(|r| train.get(r, 0)).sum::<f64>() / 500.0;
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let x = [9.9];
        let n = 10_000;
        let mut acc = 0.0;
        for i in 0..n {
            acc += conditional_resample(&inp, &x, &[0], i as u64).unwrap()[0];
        }
        let mean = acc / n as f64;
        // Draw std is about sqrt(1 + h²); 3σ/√n plus a little slack.
        assert!(
            (mean - train_mean).abs() <= 0.05,
            "draw mean {mean} vs train mean {train_mean}"
        );
    }

    #[test]
    fn conditioning_on_correlated_feature_concentrates_draws() {
        // Training data with x1 = x0: conditioning on x0 = 0.7 pins the
        // resampled x1 near 0.7.
        let mut rng = rng_from_seed(15);
        let mut train = Matrix::zeros(500, 2);
        for r in 0..500 {
            let v = standard_normal(&mut rng);
            train.set(r, 0, v);
            train.set(r, 1, v);
        }
        let h = 0.3;
        let inp = KdeInpainter::new(train, h).unwrap();
        let x = [0.7, -5.0];
        let mut within = 0usize;
        let n = 2000;
        for i in 0..n {
            let out = conditional_resample(&inp, &x, &[1], 50_000 + i as u64).unwrap();
            assert_eq!(out[0], 0.7);
            if (out[1] - 0.7).abs() <= 4.0 * h {
                within += 1;
            }
        }
        let frac = within as f64 / n as f64;
        assert!(frac >= 0.99, "only {frac} of draws within 4 bandwidths");
    }

    #[test]
    fn resample_is_seed_deterministic_and_leaves_kept_coords() {
        let train = normal_matrix(100, 4, 16);
        let inp = KdeInpainter::new(train, 0.4).unwrap();
        let x = [0.1, -0.7, 1.3, 0.5];
        let a = conditional_resample(&inp, &x, &[1, 3], 77).unwrap();
        let b = conditional_resample(&inp, &x, &[1, 3], 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0], x[0]);
        assert_eq!(a[2], x[2]);
        assert_ne!(a[1], x[1]);
        let c = conditional_resample(&inp, &x, &[1, 3], 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn resample_validates_removed_set() {
        let train = normal_matrix(20, 2, 17);
        let inp = KdeInpainter::new(train, 0.5).unwrap();
        assert!(conditional_resample(&inp, &[0.0, 0.0], &[], 0).is_err());
        assert!(conditional_resample(&inp, &[0.0, 0.0], &[2], 0).is_err());
        assert!(conditional_resample(&inp, &[0.0, 0.0], &[0, 0], 0).is_err());
    }

    #[test]
    fn far_query_falls_back_to_uniform_weights() {
        let train = normal_matrix(50, 2, 18);
        let inp = KdeInpainter::new(train, 0.2).unwrap();
        // exp(-(1e160)²/…) underflows every weight to zero.
        let x = [1e160, 0.0];
        let (out, fell_back) = conditional_resample_detailed(&inp, &x, &[1], 3).unwrap();
        assert!(fell_back);
        assert!(out[1].is_finite());
    }

    /// Ensemble whose variance depends on feature 0 only: members ±x0.
    fn single_feature_uncertainty(d: usize) -> EnsembleModel {
        let mut w1 = vec![0.0; d];
        let mut w2 = vec![0.0; d];
        w1[0] = 1.0;
        w2[0] = -1.0;
        linear_ensemble_from_weights(&[w1, w2]).unwrap().0
    }

    #[test]
    fn oracle_ranking_floors_curve_after_one_flip() {
        let d = 4;
        let model = single_feature_uncertainty(d);
        let f = EnsembleVariance::new(&model, 0);
        let train = normal_matrix(300, d, 19);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        // x0 = 3 standard deviations out: initial s² = 9, floor ≈ 1.
        let x = [3.0, 0.2, -0.1, 0.4];
        let mut oracle = vec![0.0; d];
        oracle[0] = 1.0;
        let curve = feature_flip(&f, &oracle, &x, &inp, 200, 5).unwrap();
        assert_eq!(curve.values[0], 1.0);
        assert!(curve.values[1] < 0.3, "first flip left {}", curve.values[1]);
        for k in 2..=d {
            assert!(
                (curve.values[k] - curve.values[1]).abs() < 0.1,
                "step {k}: {} vs floor {}",
                curve.values[k],
                curve.values[1]
            );
        }
    }

    #[test]
    fn constant_variance_gives_flat_curve() {
        // Two constant members (biases 1 and 3): s² = 1 everywhere.
        let members = vec![
            crate::nn::Mlp::new(vec![crate::nn::DenseLayer::new(
                Matrix::zeros(1, 3),
                vec![1.0],
                crate::nn::Activation::Identity,
            )
            .unwrap()])
            .unwrap(),
            crate::nn::Mlp::new(vec![crate::nn::DenseLayer::new(
                Matrix::zeros(1, 3),
                vec![3.0],
                crate::nn::Activation::Identity,
            )
            .unwrap()])
            .unwrap(),
        ];
        let model = EnsembleModel::deep(members).unwrap();
        let f = EnsembleVariance::new(&model, 0);
        let train = normal_matrix(100, 3, 20);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let curve = feature_flip(&f, &[0.3, 0.2, 0.1], &[0.5, 0.5, 0.5], &inp, 3, 1).unwrap();
        assert_eq!(curve.values, vec![1.0; 4]);
        assert_eq!(aufc(&curve), 1.0);
    }

    #[test]
    fn reversed_ranking_scores_worse_on_constructed_example() {
        let d = 4;
        let model = single_feature_uncertainty(d);
        let f = EnsembleVariance::new(&model, 0);
        let train = normal_matrix(300, d, 21);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let x = [3.0, 0.2, -0.1, 0.4];
        let oracle = [1.0, 0.5, 0.3, 0.1];
        let reversed = [0.1, 0.3, 0.5, 1.0];
        let good = feature_flip(&f, &oracle, &x, &inp, 100, 9).unwrap();
        let bad = feature_flip(&f, &reversed, &x, &inp, 100, 9).unwrap();
        assert!(
            aufc(&good) < aufc(&bad),
            "oracle {} vs reversed {}",
            aufc(&good),
            aufc(&bad)
        );
    }

    #[test]
    fn negligible_uncertainty_is_rejected() {
        let member = crate::nn::Mlp::random(3, &[4], 1, 22).unwrap();
        let model = EnsembleModel::deep(vec![member.clone(), member]).unwrap();
        let f = EnsembleVariance::new(&model, 0);
        let train = normal_matrix(50, 3, 23);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let err = feature_flip(&f, &[1.0, 0.5, 0.2], &[0.1, 0.2, 0.3], &inp, 2, 0).unwrap_err();
        assert!(matches!(err, Error::NegligibleUncertainty { .. }));
    }

    #[test]
    fn aufc_hand_values() {
        let tri = FlippingCurve {
            values: vec![1.0, 0.5, 0.0],
            fractions: vec![0.0, 0.5, 1.0],
            draws: 1,
            discarded_draws: 0,
            uniform_fallbacks: 0,
        };
        assert!((aufc(&tri) - 0.5).abs() <= 1e-15);

        let flat = FlippingCurve {
            values: vec![1.0; 5],
            fractions: (0..5).map(|k| k as f64 / 4.0).collect(),
            draws: 1,
            discarded_draws: 0,
            uniform_fallbacks: 0,
        };
        assert!((aufc(&flat) - 1.0).abs() <= 1e-15);

        let spike = FlippingCurve {
            values: vec![1.0, 0.0, 0.0, 0.0],
            fractions: (0..4).map(|k| k as f64 / 3.0).collect(),
            draws: 1,
            discarded_draws: 0,
            uniform_fallbacks: 0,
        };
        assert!((aufc(&spike) - 1.0 / 6.0).abs() <= 1e-15);
    }

    #[test]
    fn aufc_is_monotone_under_pointwise_dominance() {
        let mut rng = rng_from_seed(24);
        for _ in 0..50 {
            let d = 6;
            let fractions: Vec<f64> = (0..=d).map(|k| k as f64 / d as f64).collect();
            let mut lo = vec![1.0];
            let mut hi = vec![1.0];
            for _ in 0..d {
                let a = rng.gen::<f64>();
                let b = rng.gen::<f64>();
                lo.push(a.min(b));
                hi.push(a.max(b));
            }
            let mk = |values: Vec<f64>| FlippingCurve {
                values,
                fractions: fractions.clone(),
                draws: 1,
                discarded_draws: 0,
                uniform_fallbacks: 0,
            };
            assert!(aufc(&mk(lo.clone())) <= aufc(&mk(hi.clone())) + 1e-15);
        }
    }

    #[test]
    fn identical_rankings_produce_identical_reports() {
        // Two entries of the same method must agree exactly: the flip
        // streams depend on the instance and step, never the method slot.
        let model = single_feature_uncertainty(3);
        let train = normal_matrix(200, 3, 25);
        let inp = KdeInpainter::new(train, 0.35).unwrap();
        let test_x = normal_matrix(12, 3, 26);
        let config = BenchmarkConfig {
            methods: vec![
                BenchmarkMethod::VarianceHeadGi,
                BenchmarkMethod::VarianceHeadGi,
            ],
            top_k: 5,
            draws: 3,
            seed: 42,
            dataset_name: String::from("synthetic"),
        };
        let reports = benchmark(&model, &inp, &test_x, &config).unwrap();
        assert_eq!(reports[0].mean, reports[1].mean);
        assert_eq!(reports[0].std, reports[1].std);
        for (a, b) in reports[0].instances.iter().zip(&reports[1].instances) {
            assert_eq!(a.curve.values, b.curve.values);
        }
    }

    #[test]
    fn benchmark_is_deterministic_across_runs() {
        let model = single_feature_uncertainty(3);
        let train = normal_matrix(150, 3, 27);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let test_x = normal_matrix(10, 3, 28);
        let config = BenchmarkConfig {
            methods: BenchmarkMethod::standard_set(0.2, 3),
            top_k: 3,
            draws: 2,
            seed: 7,
            dataset_name: String::from("synthetic"),
        };
        let a = benchmark(&model, &inp, &test_x, &config).unwrap();
        let b = benchmark(&model, &inp, &test_x, &config).unwrap();
        assert_eq!(a.len(), 9);
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.method, rb.method);
            assert_eq!(ra.mean.to_bits(), rb.mean.to_bits());
            assert_eq!(ra.std.to_bits(), rb.std.to_bits());
        }
    }

    #[test]
    fn oracle_method_beats_inverted_scores_in_benchmark() {
        // CovGI recovers the x0-only structure; compare it against a
        // deliberately inverted copy of its own ranking.
        let d = 4;
        let model = single_feature_uncertainty(d);
        let f = EnsembleVariance::new(&model, 0);
        let train = normal_matrix(250, d, 29);
        let inp = KdeInpainter::new(train, 0.3).unwrap();
        let x = [2.5, 0.3, 0.1, -0.2];
        let good = method_ranking(
            &model,
            &BenchmarkMethod::CovGi {
                mode: SummaryMode::Diag,
            },
            &x,
            0,
        )
        .unwrap();
        let inverted: Vec<f64> = good.iter().map(|v| -v).collect();
        let curve_good = feature_flip(&f, &good, &x, &inp, 50, 11).unwrap();
        let curve_bad = feature_flip(&f, &inverted, &x, &inp, 50, 11).unwrap();
        assert!(aufc(&curve_good) < aufc(&curve_bad));
    }

    #[test]
    fn select_high_uncertainty_orders_by_variance() {
        let model = single_feature_uncertainty(2);
        let mut test_x = Matrix::zeros(4, 2);
        test_x.set(0, 0, 1.0);
        test_x.set(1, 0, 3.0);
        test_x.set(2, 0, 2.0);
        test_x.set(3, 0, 0.0); // zero variance, excluded
        let picked = select_high_uncertainty(&model, &test_x, 4).unwrap();
        let rows: Vec<usize> = picked.iter().map(|p| p.0).collect();
        assert_eq!(rows, vec![1, 2, 0]);
        assert!(picked[0].1 > picked[1].1);
    }
}

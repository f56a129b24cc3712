//! Dataset handling: splits, standardization, and synthetic generators.
//!
//! File parsing lives in the companion CLI crate; this module works on
//! in-memory matrices. The split/standardize pipeline is strict about
//! leakage: statistics are computed on the training rows only and applied
//! unchanged to the test rows.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ensemble::EnsembleModel;
use crate::fmath;
use crate::linalg::Matrix;
use crate::nn::{shuffle, Activation, DenseLayer, Mlp};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::{Error, Result};

/// Per-column affine normalization fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

/// A regression dataset: features `x` (N×d), targets `y` (N×T).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    /// Present once the dataset has been standardized; carries the train
    /// statistics that produced it.
    pub standardization: Option<Standardization>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        y: Matrix,
        feature_names: Vec<String>,
        target_names: Vec<String>,
    ) -> Result<Self> {
        if y.rows() != x.rows() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new target rows",
                expected: x.rows(),
                got: y.rows(),
            });
        }
        if feature_names.len() != x.cols() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new feature names",
                expected: x.cols(),
                got: feature_names.len(),
            });
        }
        if target_names.len() != y.cols() {
            return Err(Error::DimensionMismatch {
                context: "Dataset::new target names",
                expected: y.cols(),
                got: target_names.len(),
            });
        }
        if x.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                context: "dataset values",
            });
        }
        Ok(Dataset {
            x,
            y,
            feature_names,
            target_names,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    fn select(&self, rows: &[usize]) -> (Matrix, Matrix) {
        let mut x = Matrix::zeros(rows.len(), self.x.cols());
        let mut y = Matrix::zeros(rows.len(), self.y.cols());
        for (out, &r) in rows.iter().enumerate() {
            x.row_mut(out).copy_from_slice(self.x.row(r));
            y.row_mut(out).copy_from_slice(self.y.row(r));
        }
        (x, y)
    }
}

/// Result of [`split_standardize`]: standardized train/test datasets plus
/// everything needed to reproduce or audit the split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: Dataset,
    pub test: Dataset,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
    /// Feature / target columns whose train-split standard deviation was
    /// zero and got clamped to 1. Constant columns carry no signal; callers
    /// should surface these as warnings.
    pub clamped_features: Vec<usize>,
    pub clamped_targets: Vec<usize>,
}

/// Seeded shuffle-split followed by train-fitted standardization of both
/// features and targets.
pub fn split_standardize(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<SplitOutcome> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter {
            context: "split_standardize",
            detail: format!("train_fraction must be in (0, 1), got {train_fraction}"),
        });
    }
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, &[0x7370_6c69]));
    shuffle(&mut order, &mut rng);
    let n_train = fmath::round((n as f64) * train_fraction) as usize;
    let n_train = n_train.clamp(1, n.saturating_sub(1).max(1));
    let (train_idx, test_idx) = order.split_at(n_train);
    split_standardize_with_indices(ds, train_idx, test_idx, seed)
}

/// Standardizing split with caller-provided row indices, for datasets that
/// ship a predefined train/test partition.
pub fn split_standardize_with_indices(
    ds: &Dataset,
    train_indices: &[usize],
    test_indices: &[usize],
    seed: u64,
) -> Result<SplitOutcome> {
    if train_indices.len() < 2 || test_indices.len() < 2 {
        return Err(Error::InvalidParameter {
            context: "split_standardize",
            detail: format!(
                "both splits need at least 2 rows, got {} train / {} test",
                train_indices.len(),
                test_indices.len()
            ),
        });
    }
    for &i in train_indices.iter().chain(test_indices) {
        if i >= ds.len() {
            return Err(Error::DimensionMismatch {
                context: "split_standardize row index",
                expected: ds.len(),
                got: i,
            });
        }
    }

    let (mut train_x, mut train_y) = ds.select(train_indices);
    let (mut test_x, mut test_y) = ds.select(test_indices);

    let (x_mean, x_std, clamped_features) = column_stats(&train_x);
    let (y_mean, y_std, clamped_targets) = column_stats(&train_y);
    apply_standardization(&mut train_x, &x_mean, &x_std);
    apply_standardization(&mut test_x, &x_mean, &x_std);
    apply_standardization(&mut train_y, &y_mean, &y_std);
    apply_standardization(&mut test_y, &y_mean, &y_std);

    let stats = Standardization {
        x_mean,
        x_std,
        y_mean,
        y_std,
    };
    let mut train = Dataset::new(
        train_x,
        train_y,
        ds.feature_names.clone(),
        ds.target_names.clone(),
    )?;
    let mut test = Dataset::new(
        test_x,
        test_y,
        ds.feature_names.clone(),
        ds.target_names.clone(),
    )?;
    train.standardization = Some(stats.clone());
    test.standardization = Some(stats);

    Ok(SplitOutcome {
        train,
        test,
        train_indices: train_indices.to_vec(),
        test_indices: test_indices.to_vec(),
        seed,
        clamped_features,
        clamped_targets,
    })
}

/// Population mean/std per column; zero-variance columns get std clamped
/// to 1 and reported.
fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>, Vec<usize>) {
    let n = m.rows() as f64;
    let mut mean = vec![0.0; m.cols()];
    let mut std = vec![0.0; m.cols()];
    let mut clamped = Vec::new();
    for c in 0..m.cols() {
        let mut acc = 0.0;
        for r in 0..m.rows() {
            acc += m.get(r, c);
        }
        mean[c] = acc / n;
        let mut var = 0.0;
        for r in 0..m.rows() {
            let d = m.get(r, c) - mean[c];
            var += d * d;
        }
        let sd = fmath::sqrt(var / n);
        if sd <= 1e-12 * mean[c].abs().max(1.0) {
            clamped.push(c);
            std[c] = 1.0;
        } else {
            std[c] = sd;
        }
    }
    (mean, std, clamped)
}

fn apply_standardization(m: &mut Matrix, mean: &[f64], std: &[f64]) {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        for (v, (mu, sd)) in row.iter_mut().zip(mean.iter().zip(std)) {
            *v = (*v - mu) / sd;
        }
    }
}

/// Expands each standardized feature value into the affine quadruple
/// `(1-x, 1+x, 2-x, 2+x)` so that every input carries at least one nonzero
/// mapped value; d features become 4d.
pub fn affine_quadruple_map(ds: &Dataset) -> Result<Dataset> {
    let d = ds.dim();
    let mut x = Matrix::zeros(ds.len(), 4 * d);
    for r in 0..ds.len() {
        let mapped = quadruple_map_vec(ds.x.row(r));
        x.row_mut(r).copy_from_slice(&mapped);
    }
    let mut names = Vec::with_capacity(4 * d);
    for name in &ds.feature_names {
        for suffix in ["1-x", "1+x", "2-x", "2+x"] {
            names.push(format!("{name}:{suffix}"));
        }
    }
    let mut out = Dataset::new(x, ds.y.clone(), names, ds.target_names.clone())?;
    out.standardization = ds.standardization.clone();
    Ok(out)
}

/// The quadruple map on a single feature vector.
pub fn quadruple_map_vec(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(4 * x.len());
    for &v in x {
        out.push(1.0 - v);
        out.push(1.0 + v);
        out.push(2.0 - v);
        out.push(2.0 + v);
    }
    out
}

/// Exact inverse of [`quadruple_map_vec`], recovered from the first pair:
/// `x = ((1+x) - (1-x)) / 2`.
pub fn quadruple_inverse_vec(mapped: &[f64]) -> Result<Vec<f64>> {
    if mapped.len() % 4 != 0 {
        return Err(Error::DimensionMismatch {
            context: "quadruple_inverse_vec",
            expected: mapped.len() / 4 * 4,
            got: mapped.len(),
        });
    }
    Ok(mapped
        .chunks_exact(4)
        .map(|q| (q[1] - q[0]) / 2.0)
        .collect())
}

/// Builds a linear ensemble from explicit weight rows (one member per row
/// vector) together with the exact member-weight covariance, the
/// closed-form target for covariance-of-gradient explanations.
pub fn linear_ensemble_from_weights(weights: &[Vec<f64>]) -> Result<(EnsembleModel, Matrix)> {
    if weights.len() < 2 {
        return Err(Error::InvalidParameter {
            context: "linear_ensemble_from_weights",
            detail: format!("need at least 2 members, got {}", weights.len()),
        });
    }
    let d = weights[0].len();
    let members = weights
        .iter()
        .map(|w| {
            Mlp::new(vec![DenseLayer::new(
                Matrix::from_rows(&[w.clone()])?,
                vec![0.0],
                Activation::Identity,
            )?])
        })
        .collect::<Result<Vec<Mlp>>>()?;
    let m = weights.len() as f64;
    let mut mean = vec![0.0; d];
    for w in weights {
        for (mi, wi) in mean.iter_mut().zip(w) {
            *mi += wi / m;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut acc = 0.0;
            for w in weights {
                acc += (w[i] - mean[i]) * (w[j] - mean[j]);
            }
            cov.set(i, j, acc / m);
            cov.set(j, i, acc / m);
        }
    }
    Ok((EnsembleModel::deep(members)?, cov))
}

/// Seeded random linear ensemble fixture: M single-layer identity models
/// with standard-normal weights, plus their exact weight covariance.
pub fn synth_linear_ensemble(
    d: usize,
    m: usize,
    weight_seed: u64,
) -> Result<(EnsembleModel, Matrix)> {
    if d < 1 || m < 2 {
        return Err(Error::InvalidParameter {
            context: "synth_linear_ensemble",
            detail: format!("need d >= 1 and M >= 2, got d={d}, M={m}"),
        });
    }
    let mut rng = rng_from_seed(weight_seed);
    let weights: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| standard_normal(&mut rng)).collect())
        .collect();
    linear_ensemble_from_weights(&weights)
}

/// Synthetic nonlinear regression data on the unit cube:
///
/// ```text
/// y = 10·sin(π x₀ x₁) + 20·(x₂ - ½)² + 10·x₃ + 5·x₄ + noise·ε
/// ```
///
/// Features beyond the first five are pure distractors. The interaction
/// and the square term give trained ensembles genuinely second-order
/// uncertainty structure, which is what the flipping benchmark needs.
pub fn synth_regression(n: usize, d: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if d < 5 {
        return Err(Error::InvalidParameter {
            context: "synth_regression",
            detail: format!("need at least 5 features, got {d}"),
        });
    }
    if n < 1 {
        return Err(Error::EmptyDataset);
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParameter {
            context: "synth_regression",
            detail: format!("noise must be >= 0, got {noise}"),
        });
    }
    let mut rng = rng_from_seed(seed);
    let mut x = Matrix::zeros(n, d);
    let mut y = Matrix::zeros(n, 1);
    for r in 0..n {
        let row = x.row_mut(r);
        for v in row.iter_mut() {
            *v = rng.gen::<f64>();
        }
        let row = x.row(r);
        let signal = 10.0 * fmath::sin(core::f64::consts::PI * row[0] * row[1])
            + 20.0 * (row[2] - 0.5) * (row[2] - 0.5)
            + 10.0 * row[3]
            + 5.0 * row[4];
        y.set(r, 0, signal + noise * standard_normal(&mut rng));
    }
    let feature_names = (0..d).map(|i| format!("x{i}")).collect();
    Dataset::new(x, y, feature_names, vec![String::from("y")])
}

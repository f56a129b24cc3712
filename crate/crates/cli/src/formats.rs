//! JSON schemas for models, ensembles, explanations, and dataset caches.
//!
//! Floats pass through `serde_json`, which prints the shortest decimal
//! that parses back to the identical bit pattern, so every document
//! round-trips bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use covxplain_core::ensemble::EnsembleModel;
use covxplain_core::firstorder::Explanation;
use covxplain_core::linalg::Matrix;
use covxplain_core::nn::{Activation, DenseLayer, DropoutPlan, Mlp, TrainConfig};
use covxplain_core::secondorder::{summarize, SecondOrderExplanation, SummaryMode};

use crate::{CliError, Result};

/// One dense layer: weights row-major (fan_out × fan_in), one bias per
/// output unit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub best_epoch: usize,
    pub best_validation_mse: f64,
}

/// A single network: layer sizes from input to output, one activation tag
/// per layer, and the layer parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub architecture: Vec<usize>,
    pub activations: Vec<String>,
    pub layers: Vec<LayerRecord>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_meta: Option<TrainMeta>,
}

fn activation_tag(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

fn parse_activation(tag: &str) -> Result<Activation> {
    match tag {
        "relu" => Ok(Activation::Relu),
        "identity" => Ok(Activation::Identity),
        other => Err(CliError::config(format!(
            "unknown activation tag '{other}'"
        ))),
    }
}

impl ModelCheckpoint {
    pub fn from_model(net: &Mlp, seed: u64, train_meta: Option<TrainMeta>) -> Self {
        ModelCheckpoint {
            architecture: net.architecture(),
            activations: net
                .layers()
                .iter()
                .map(|l| activation_tag(l.activation()).to_string())
                .collect(),
            layers: net
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    weights: l.weights().as_slice().to_vec(),
                    bias: l.bias().to_vec(),
                })
                .collect(),
            seed,
            train_meta,
        }
    }

    pub fn to_model(&self) -> Result<Mlp> {
        if self.architecture.len() != self.layers.len() + 1 {
            return Err(CliError::config(format!(
                "checkpoint architecture lists {} sizes for {} layers",
                self.architecture.len(),
                self.layers.len()
            )));
        }
        if self.activations.len() != self.layers.len() {
            return Err(CliError::config(format!(
                "checkpoint lists {} activations for {} layers",
                self.activations.len(),
                self.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, rec) in self.layers.iter().enumerate() {
            let (fan_in, fan_out) = (self.architecture[l], self.architecture[l + 1]);
            let weights =
                Matrix::from_vec(fan_out, fan_in, rec.weights.clone()).map_err(CliError::Core)?;
            let activation = parse_activation(&self.activations[l])?;
            layers.push(
                DenseLayer::new(weights, rec.bias.clone(), activation).map_err(CliError::Core)?,
            );
        }
        Mlp::new(layers).map_err(CliError::Core)
    }
}

/// One frozen dropout plan: keep bits per hidden layer plus the rate and
/// seed they were sampled with.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanRecord {
    pub seed: u64,
    pub rate: f64,
    pub masks: Vec<Vec<bool>>,
}

impl PlanRecord {
    pub fn from_plan(plan: &DropoutPlan) -> Self {
        PlanRecord {
            seed: plan.seed(),
            rate: plan.rate(),
            masks: plan.keep_bits(),
        }
    }

    pub fn to_plan(&self) -> Result<DropoutPlan> {
        DropoutPlan::from_bits(self.rate, &self.masks, self.seed).map_err(CliError::Core)
    }
}

/// Ensemble manifest: member checkpoint files (relative to the manifest)
/// and, for MC dropout, the frozen plans.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub kind: String,
    pub members: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub plans: Vec<PlanRecord>,
}

pub const MANIFEST_FILE: &str = "ensemble.json";
pub const SIDECAR_FILE: &str = "dataset.json";
pub const CONFIG_FILE: &str = "config.json";

/// Reads the manifest in `dir` and reassembles the ensemble.
pub fn load_ensemble(dir: &Path) -> Result<EnsembleModel> {
    let manifest: EnsembleManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let mut members = Vec::with_capacity(manifest.members.len());
    for name in &manifest.members {
        let checkpoint: ModelCheckpoint = read_json(&dir.join(name))?;
        members.push(checkpoint.to_model()?);
    }
    match manifest.kind.as_str() {
        "deep" => EnsembleModel::deep(members).map_err(CliError::Core),
        "mc-dropout" => {
            let base = members
                .into_iter()
                .next()
                .ok_or_else(|| CliError::config("mc-dropout manifest lists no base model"))?;
            let plans = manifest
                .plans
                .iter()
                .map(|p| p.to_plan())
                .collect::<Result<Vec<_>>>()?;
            EnsembleModel::mc_dropout(base, plans).map_err(CliError::Core)
        }
        other => Err(CliError::config(format!("unknown ensemble kind '{other}'"))),
    }
}

/// How the explained input was specified: a test-split row or a raw
/// feature vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputRef {
    Instance { index: usize },
    Vector { values: Vec<f64> },
}

/// A first-order explanation as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub feature_names: Vec<String>,
    pub scores: Vec<f64>,
    pub target_value: f64,
    pub input_ref: InputRef,
}

impl ExplanationRecord {
    pub fn new(
        method: &str,
        gamma: Option<f64>,
        feature_names: &[String],
        explanation: &Explanation,
        input_ref: InputRef,
    ) -> Self {
        ExplanationRecord {
            method: method.to_string(),
            gamma,
            feature_names: feature_names.to_vec(),
            scores: explanation.scores.clone(),
            target_value: explanation.target_value,
            input_ref,
        }
    }
}

/// A second-order explanation with both summaries attached.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecondOrderRecord {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub feature_names: Vec<String>,
    pub d: usize,
    pub matrix: Vec<f64>,
    pub s2: f64,
    pub diag: Vec<f64>,
    pub marg: Vec<f64>,
    pub input_ref: InputRef,
}

impl SecondOrderRecord {
    pub fn new(
        method: &str,
        gamma: Option<f64>,
        feature_names: &[String],
        explanation: &SecondOrderExplanation,
        input_ref: InputRef,
    ) -> Self {
        SecondOrderRecord {
            method: method.to_string(),
            gamma,
            feature_names: feature_names.to_vec(),
            d: explanation.dim(),
            matrix: explanation.r.as_slice().to_vec(),
            s2: explanation.s2,
            diag: summarize(explanation, SummaryMode::Diag).scores,
            marg: summarize(explanation, SummaryMode::Marg).scores,
            input_ref,
        }
    }
}

/// Cached preprocessing state: the split and the train-only statistics,
/// enough to rebuild standardized splits from the raw CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub seed: u64,
    pub train_fraction: f64,
    /// Whether features were expanded with the affine quadruple map after
    /// standardization; downstream commands must re-apply it.
    #[serde(default)]
    pub quadruple: bool,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    pub clamped_features: Vec<usize>,
    pub clamped_targets: Vec<usize>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
}

/// The fully-resolved configuration echoed into every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub parameters: serde_json::Value,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut rendered = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    rendered.push('\n');
    fs::write(path, rendered).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Meta block for [`TrainMeta`] out of the training configuration and
/// report values.
pub fn train_meta(config: &TrainConfig, best_epoch: usize, best_validation_mse: f64) -> TrainMeta {
    TrainMeta {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        validation_fraction: config.validation_fraction,
        best_epoch,
        best_validation_mse,
    }
}

/// Member checkpoint filename, zero-padded so listings sort numerically.
pub fn member_file(index: usize) -> String {
    format!("member-{index:02}.json")
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use covxplain_core::nn::sample_dropout_plans;

    #[test]
    fn checkpoint_roundtrips_bit_exactly() {
        let net = Mlp::random(3, &[5, 4], 2, 99).unwrap();
        let checkpoint = ModelCheckpoint::from_model(&net, 99, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        write_json(&path, &checkpoint).unwrap();
        let back: ModelCheckpoint = read_json(&path).unwrap();
        let rebuilt = back.to_model().unwrap();
        for (a, b) in net.layers().iter().zip(rebuilt.layers()) {
            let wa: Vec<u64> = a.weights().as_slice().iter().map(|v| v.to_bits()).collect();
            let wb: Vec<u64> = b.weights().as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(wa, wb);
        }
        let x = [0.3, -1.2, 0.8];
        assert_eq!(
            net.output(&x, None).unwrap(),
            rebuilt.output(&x, None).unwrap()
        );
    }

    #[test]
    fn plan_record_roundtrips() {
        let net = Mlp::random(4, &[9, 6], 1, 3).unwrap();
        let plans = sample_dropout_plans(&net, 0.25, 5, 11).unwrap();
        for plan in &plans {
            let record = PlanRecord::from_plan(plan);
            let back = record.to_plan().unwrap();
            assert_eq!(plan, &back);
        }
    }

    #[test]
    fn manifest_roundtrip_rebuilds_working_ensemble() {
        let dir = tempfile::tempdir().unwrap();
        let members: Vec<Mlp> = (0..3)
            .map(|i| Mlp::random(2, &[4], 1, i).unwrap())
            .collect();
        let mut names = Vec::new();
        for (i, m) in members.iter().enumerate() {
            let name = member_file(i);
            write_json(
                &dir.path().join(&name),
                &ModelCheckpoint::from_model(m, i as u64, None),
            )
            .unwrap();
            names.push(name);
        }
        let manifest = EnsembleManifest {
            kind: "deep".into(),
            members: names,
            plans: Vec::new(),
        };
        write_json(&manifest_path(dir.path()), &manifest).unwrap();
        let model = load_ensemble(dir.path()).unwrap();
        let expected = EnsembleModel::deep(members).unwrap();
        let x = [0.7, -0.1];
        assert_eq!(
            model.predict_all(&x, 0).unwrap().y,
            expected.predict_all(&x, 0).unwrap().y
        );
    }

    #[test]
    fn unknown_tags_are_rejected() {
        let checkpoint = ModelCheckpoint {
            architecture: vec![2, 1],
            activations: vec!["sigmoid".into()],
            layers: vec![LayerRecord {
                weights: vec![1.0, 2.0],
                bias: vec![0.0],
            }],
            seed: 0,
            train_meta: None,
        };
        assert!(checkpoint.to_model().is_err());
    }
}

//! The four subcommands: `train`, `explain`, `benchmark`, `synth`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use covxplain_core::data::{
    affine_quadruple_map, quadruple_map_vec, split_standardize, split_standardize_with_indices,
    synth_regression, Dataset, SplitOutcome,
};
use covxplain_core::ensemble::{EnsembleModel, EnsembleVariance};
use covxplain_core::eval::{
    benchmark_task, default_bandwidth_grid, fit_inpainter, select_high_uncertainty,
    summarize_method, AufcReport, BenchmarkMethod, KdeInpainter,
};
use covxplain_core::firstorder::{
    default_svs_permutations, integrated_gradients, sensitivity, shapley_value_sampling,
    variance_head_explanation, Explanation, LrpConfig, VarianceHeadBackend,
};
use covxplain_core::linalg::Matrix;
use covxplain_core::nn::{sample_dropout_plans, train, TrainConfig};
use covxplain_core::rng::derive_seed;
use covxplain_core::secondorder::{explain_uncertainty, FirstOrderMethod, SummaryMode};

use crate::csvio::{
    load_csv, write_curves_csv, write_dataset_csv, write_results_csv, write_summary_csv,
};
use crate::formats::{
    load_ensemble, manifest_path, member_file, read_json, train_meta, write_json, DatasetSidecar,
    EnsembleManifest, ExplanationRecord, InputRef, ModelCheckpoint, PlanRecord, RunConfig,
    SecondOrderRecord, CONFIG_FILE, SIDECAR_FILE,
};
use crate::svg::{bar_chart, curves_chart, heatmap, write_svg};
use crate::{resolve_threads, CliError, Result};

const SEED_TAG_MEMBER: u64 = 0x4d45_4d42;
const SEED_TAG_PLANS: u64 = 0x504c_414e;

/// Status output that tolerates a closed stdout (e.g. `covxplain ... | head`):
/// the write error is dropped so the command still finishes its file outputs
/// and exits cleanly instead of panicking on a broken pipe.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a deep ensemble (or MC-dropout model) on a numeric CSV.
    Train(TrainArgs),
    /// Explain the predictive uncertainty at one input.
    Explain(ExplainArgs),
    /// Compare explanation methods with the feature-flipping benchmark.
    Benchmark(BenchmarkArgs),
    /// Generate a synthetic regression CSV.
    Synth(SynthArgs),
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(&args),
        Command::Explain(args) => cmd_explain(&args),
        Command::Benchmark(args) => cmd_benchmark(&args),
        Command::Synth(args) => cmd_synth(&args),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Input CSV with a header row; every cell numeric.
    #[arg(long)]
    pub data: PathBuf,
    /// Target column name (repeatable); defaults to the last column.
    #[arg(long = "target")]
    pub targets: Vec<String>,
    /// Output directory for checkpoints and metadata.
    #[arg(long)]
    pub out: PathBuf,
    /// Ensemble size.
    #[arg(long, default_value_t = 10)]
    pub members: usize,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "64,32,16")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 150)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// Fraction of the train split held out for epoch selection.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// Fraction of rows that go into the train split.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train one network and build the ensemble from frozen dropout masks.
    #[arg(long)]
    pub mc_dropout: bool,
    /// Dropout rate for --mc-dropout.
    #[arg(long, default_value_t = 0.1)]
    pub dropout_rate: f64,
    /// Number of sampled dropout masks for --mc-dropout.
    #[arg(long, default_value_t = 10)]
    pub dropout_samples: usize,
    /// Expand each standardized feature into (1-x, 1+x, 2-x, 2+x).
    #[arg(long)]
    pub quadruple: bool,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let ds = load_csv(&args.data, &args.targets)?;
    let split = split_standardize(&ds, args.train_fraction, args.seed)?;
    if !split.clamped_features.is_empty() {
        eprintln!(
            "warning: feature columns {:?} are constant in the train split",
            split.clamped_features
        );
    }
    if !split.clamped_targets.is_empty() {
        eprintln!(
            "warning: target columns {:?} are constant in the train split",
            split.clamped_targets
        );
    }

    let stats = split
        .train
        .standardization
        .clone()
        .expect("split_standardize attaches statistics");
    let sidecar = DatasetSidecar {
        seed: args.seed,
        train_fraction: args.train_fraction,
        quadruple: args.quadruple,
        train_indices: split.train_indices.clone(),
        test_indices: split.test_indices.clone(),
        x_mean: stats.x_mean,
        x_std: stats.x_std,
        y_mean: stats.y_mean,
        y_std: stats.y_std,
        clamped_features: split.clamped_features.clone(),
        clamped_targets: split.clamped_targets.clone(),
        feature_names: ds.feature_names.clone(),
        target_names: ds.target_names.clone(),
    };
    write_json(&args.out.join(SIDECAR_FILE), &sidecar)?;

    let (train_ds, test_ds) = if args.quadruple {
        (
            affine_quadruple_map(&split.train).map_err(CliError::Core)?,
            affine_quadruple_map(&split.test).map_err(CliError::Core)?,
        )
    } else {
        (split.train, split.test)
    };

    let base_config = TrainConfig {
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        validation_fraction: args.validation_fraction,
        seed: 0,
    };

    let model = if args.mc_dropout {
        let config = TrainConfig {
            seed: derive_seed(args.seed, &[SEED_TAG_MEMBER, 0]),
            ..base_config
        };
        let report =
            train(&train_ds.x, &train_ds.y, &args.hidden, &config).map_err(CliError::Core)?;
        outln!(
            "base network: best epoch {}, validation mse {:.6}",
            report.best_epoch,
            report.best_validation_mse
        );
        let plans = sample_dropout_plans(
            &report.model,
            args.dropout_rate,
            args.dropout_samples,
            derive_seed(args.seed, &[SEED_TAG_PLANS]),
        )
        .map_err(CliError::Core)?;
        let name = member_file(0);
        write_json(
            &args.out.join(&name),
            &ModelCheckpoint::from_model(
                &report.model,
                config.seed,
                Some(train_meta(
                    &config,
                    report.best_epoch,
                    report.best_validation_mse,
                )),
            ),
        )?;
        let manifest = EnsembleManifest {
            kind: "mc-dropout".into(),
            members: vec![name],
            plans: plans.iter().map(PlanRecord::from_plan).collect(),
        };
        write_json(&manifest_path(&args.out), &manifest)?;
        EnsembleModel::mc_dropout(report.model, plans).map_err(CliError::Core)?
    } else {
        if args.members < 2 {
            return Err(CliError::config(format!(
                "a deep ensemble needs at least 2 members, got {}",
                args.members
            )));
        }
        let mut members = Vec::with_capacity(args.members);
        let mut names = Vec::with_capacity(args.members);
        for m in 0..args.members {
            let config = TrainConfig {
                seed: derive_seed(args.seed, &[SEED_TAG_MEMBER, m as u64]),
                ..base_config
            };
            let report =
                train(&train_ds.x, &train_ds.y, &args.hidden, &config).map_err(CliError::Core)?;
            outln!(
                "member {m:02}: best epoch {}, validation mse {:.6}",
                report.best_epoch,
                report.best_validation_mse
            );
            let name = member_file(m);
            write_json(
                &args.out.join(&name),
                &ModelCheckpoint::from_model(
                    &report.model,
                    config.seed,
                    Some(train_meta(
                        &config,
                        report.best_epoch,
                        report.best_validation_mse,
                    )),
                ),
            )?;
            names.push(name);
            members.push(report.model);
        }
        let manifest = EnsembleManifest {
            kind: "deep".into(),
            members: names,
            plans: Vec::new(),
        };
        write_json(&manifest_path(&args.out), &manifest)?;
        EnsembleModel::deep(members).map_err(CliError::Core)?
    };

    let test_mse = ensemble_test_mse(&model, &test_ds).map_err(CliError::Core)?;
    outln!("ensemble test mse (standardized targets): {test_mse:.6}");

    write_json(
        &args.out.join(CONFIG_FILE),
        &RunConfig {
            command: "train".into(),
            parameters: json!({
                "data": args.data.display().to_string(),
                "targets": args.targets,
                "members": args.members,
                "hidden": args.hidden,
                "epochs": args.epochs,
                "learning_rate": args.learning_rate,
                "batch_size": args.batch_size,
                "validation_fraction": args.validation_fraction,
                "train_fraction": args.train_fraction,
                "seed": args.seed,
                "mc_dropout": args.mc_dropout,
                "dropout_rate": args.dropout_rate,
                "dropout_samples": args.dropout_samples,
                "quadruple": args.quadruple,
            }),
        },
    )?;
    outln!(
        "wrote ensemble ({} members) to {}",
        model.member_count(),
        args.out.display()
    );
    Ok(())
}

fn ensemble_test_mse(model: &EnsembleModel, test: &Dataset) -> covxplain_core::Result<f64> {
    let mut acc = 0.0;
    for r in 0..test.len() {
        for k in 0..test.y.cols() {
            let mean = model.predict_all(test.x.row(r), k)?.mean;
            let d = mean - test.y.get(r, k);
            acc += d * d;
        }
    }
    Ok(acc / (test.len() * test.y.cols()) as f64)
}

// ---------------------------------------------------------------------------
// shared model/dataset loading
// ---------------------------------------------------------------------------

fn load_model_dir(dir: &Path) -> Result<(EnsembleModel, DatasetSidecar)> {
    let model = load_ensemble(dir)?;
    let sidecar: DatasetSidecar = read_json(&dir.join(SIDECAR_FILE))?;
    Ok((model, sidecar))
}

/// Reloads the CSV and reproduces the exact train/test split and scaling
/// the model was fitted with, refusing data that no longer matches.
fn rebuild_split(data: &Path, sidecar: &DatasetSidecar) -> Result<(Dataset, Dataset)> {
    let ds = load_csv(data, &sidecar.target_names)?;
    if ds.feature_names != sidecar.feature_names {
        return Err(CliError::config(format!(
            "feature columns of {} do not match the trained model",
            data.display()
        )));
    }
    let split: SplitOutcome = split_standardize_with_indices(
        &ds,
        &sidecar.train_indices,
        &sidecar.test_indices,
        sidecar.seed,
    )
    .map_err(CliError::Core)?;
    let stats = split
        .train
        .standardization
        .as_ref()
        .expect("split_standardize attaches statistics");
    if stats.x_mean != sidecar.x_mean
        || stats.x_std != sidecar.x_std
        || stats.y_mean != sidecar.y_mean
        || stats.y_std != sidecar.y_std
    {
        return Err(CliError::config(format!(
            "{} does not reproduce the stored preprocessing statistics; was it modified since training?",
            data.display()
        )));
    }
    if sidecar.quadruple {
        Ok((
            affine_quadruple_map(&split.train).map_err(CliError::Core)?,
            affine_quadruple_map(&split.test).map_err(CliError::Core)?,
        ))
    } else {
        Ok((split.train, split.test))
    }
}

/// Feature names in model-input space (expanded when the quadruple map is
/// active).
fn model_feature_names(sidecar: &DatasetSidecar) -> Vec<String> {
    if sidecar.quadruple {
        let mut names = Vec::with_capacity(4 * sidecar.feature_names.len());
        for name in &sidecar.feature_names {
            for suffix in ["1-x", "1+x", "2-x", "2+x"] {
                names.push(format!("{name}:{suffix}"));
            }
        }
        names
    } else {
        sidecar.feature_names.clone()
    }
}

// ---------------------------------------------------------------------------
// explain
// ---------------------------------------------------------------------------

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    /// Covariance of per-member LRP explanations.
    Covlrp,
    /// Covariance of per-member Gradient×Input explanations.
    Covgi,
    /// LRP through the variance head.
    Lrp,
    /// Gradient×Input through the variance head.
    Gi,
    /// Integrated Gradients on the variance.
    Ig,
    /// Squared-gradient sensitivity of the variance.
    Sa,
    /// Shapley value sampling on the variance.
    Svs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModeArg {
    /// Render the full feature-pair matrix.
    Matrix,
    /// Per-feature variance shares (matrix diagonal).
    Diag,
    /// Per-feature totals (matrix row sums).
    Marg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum VariantArg {
    Simple,
    Generalized,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// The training CSV; required with --instance.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Row of the held-out test split to explain.
    #[arg(long, conflicts_with = "input")]
    pub instance: Option<usize>,
    /// Raw feature values, comma separated; standardized with the stored
    /// statistics before explaining.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub input: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = MethodArg::Covlrp)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Diag)]
    pub mode: ModeArg,
    /// LRP gamma.
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    /// Override gamma for dense layers.
    #[arg(long)]
    pub gamma_dense: Option<f64>,
    /// Accepted for interface parity; these networks have no convolutions.
    #[arg(long)]
    pub gamma_conv: Option<f64>,
    #[arg(long, value_enum, default_value_t = VariantArg::Generalized)]
    pub lrp_variant: VariantArg,
    #[arg(long, default_value_t = 64)]
    pub ig_steps: usize,
    /// Permutations for Shapley sampling; default scales with dimension.
    #[arg(long)]
    pub svs_permutations: Option<usize>,
    /// Seed for sampling-based methods.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output head to explain, for multi-target models.
    #[arg(long, default_value_t = 0)]
    pub output_index: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let (model, sidecar) = load_model_dir(&args.model)?;
    if args.output_index >= model.output_dim() {
        return Err(CliError::config(format!(
            "--output-index {} out of range for a model with {} outputs",
            args.output_index,
            model.output_dim()
        )));
    }

    let (x, input_ref) = match (&args.instance, &args.input) {
        (Some(idx), None) => {
            let data = args.data.as_ref().ok_or_else(|| {
                CliError::config("--instance needs --data to rebuild the test split")
            })?;
            let (_, test) = rebuild_split(data, &sidecar)?;
            if *idx >= test.len() {
                return Err(CliError::config(format!(
                    "--instance {idx} out of range; the test split has {} rows",
                    test.len()
                )));
            }
            (
                test.x.row(*idx).to_vec(),
                InputRef::Instance { index: *idx },
            )
        }
        (None, Some(values)) => {
            if values.len() != sidecar.x_mean.len() {
                return Err(CliError::config(format!(
                    "--input has {} values; the model expects {} raw features",
                    values.len(),
                    sidecar.x_mean.len()
                )));
            }
            let standardized: Vec<f64> = values
                .iter()
                .zip(sidecar.x_mean.iter().zip(&sidecar.x_std))
                .map(|(v, (mu, sd))| (v - mu) / sd)
                .collect();
            let x = if sidecar.quadruple {
                quadruple_map_vec(&standardized)
            } else {
                standardized
            };
            (
                x,
                InputRef::Vector {
                    values: values.clone(),
                },
            )
        }
        _ => {
            return Err(CliError::config(
                "provide exactly one of --instance or --input",
            ))
        }
    };
    if x.len() != model.input_dim() {
        return Err(CliError::config(format!(
            "prepared input has {} features but the model expects {}",
            x.len(),
            model.input_dim()
        )));
    }

    let gamma = args.gamma_dense.unwrap_or(args.gamma);
    if args.gamma_conv.is_some() {
        eprintln!("note: --gamma-conv has no effect; the model has no convolutional layers");
    }
    let lrp_config = match args.lrp_variant {
        VariantArg::Simple => LrpConfig::simple(gamma),
        VariantArg::Generalized => LrpConfig::generalized(gamma),
    };
    let names = model_feature_names(&sidecar);

    let is_second_order = matches!(args.method, MethodArg::Covlrp | MethodArg::Covgi);
    if args.mode == ModeArg::Matrix && !is_second_order {
        return Err(CliError::config(
            "--mode matrix needs a feature-pair method (covlrp or covgi)",
        ));
    }

    let json_path = args.out.join("explanation.json");
    let svg_path = args.out.join("explanation.svg");
    if is_second_order {
        let backend = match args.method {
            MethodArg::Covlrp => FirstOrderMethod::Lrp(lrp_config),
            _ => FirstOrderMethod::GradientInput,
        };
        let explanation =
            explain_uncertainty(&model, &x, args.output_index, &backend).map_err(CliError::Core)?;
        let method_name = method_arg_name(args.method);
        let gamma_opt = matches!(args.method, MethodArg::Covlrp).then_some(gamma);
        let record =
            SecondOrderRecord::new(method_name, gamma_opt, &names, &explanation, input_ref);
        write_json(&json_path, &record)?;
        outln!("uncertainty s² = {:.6}", record.s2);
        match args.mode {
            ModeArg::Matrix => {
                write_svg(
                    &svg_path,
                    &heatmap(
                        &explanation.r,
                        &names,
                        &format!("{method_name}: feature-pair uncertainty"),
                    ),
                )?;
                outln!("top feature pairs by |score| (i != j):");
                print_top_pairs(&names, &explanation.r, 5);
            }
            ModeArg::Diag => {
                write_svg(
                    &svg_path,
                    &bar_chart(&record.diag, &names, &format!("{method_name} diag")),
                )?;
                outln!("top features by |score| (diag):");
                print_top_scores(&names, &record.diag, 5);
            }
            ModeArg::Marg => {
                write_svg(
                    &svg_path,
                    &bar_chart(&record.marg, &names, &format!("{method_name} marg")),
                )?;
                outln!("top features by |score| (marg):");
                print_top_scores(&names, &record.marg, 5);
            }
        }
    } else {
        let explanation = first_order_explanation(&model, &x, args, &lrp_config)?;
        let method_name = method_arg_name(args.method);
        let gamma_opt = matches!(args.method, MethodArg::Lrp).then_some(gamma);
        let record =
            ExplanationRecord::new(method_name, gamma_opt, &names, &explanation, input_ref);
        write_json(&json_path, &record)?;
        outln!("uncertainty s² = {:.6}", record.target_value);
        write_svg(
            &svg_path,
            &bar_chart(&record.scores, &names, &format!("{method_name} scores")),
        )?;
        outln!("top features by |score|:");
        print_top_scores(&names, &record.scores, 5);
    }

    write_json(
        &args.out.join(CONFIG_FILE),
        &RunConfig {
            command: "explain".into(),
            parameters: json!({
                "model": args.model.display().to_string(),
                "data": args.data.as_ref().map(|p| p.display().to_string()),
                "instance": args.instance,
                "input": args.input,
                "method": method_arg_name(args.method),
                "mode": mode_arg_name(args.mode),
                "gamma": gamma,
                "lrp_variant": match args.lrp_variant {
                    VariantArg::Simple => "simple",
                    VariantArg::Generalized => "generalized",
                },
                "ig_steps": args.ig_steps,
                "svs_permutations": args.svs_permutations,
                "seed": args.seed,
                "output_index": args.output_index,
            }),
        },
    )?;
    outln!("wrote {} and {}", json_path.display(), svg_path.display());
    Ok(())
}

fn first_order_explanation(
    model: &EnsembleModel,
    x: &[f64],
    args: &ExplainArgs,
    lrp_config: &LrpConfig,
) -> Result<Explanation> {
    let f = EnsembleVariance::new(model, args.output_index);
    let explanation = match args.method {
        MethodArg::Lrp => variance_head_explanation(
            model,
            x,
            args.output_index,
            &VarianceHeadBackend::Lrp(*lrp_config),
        ),
        MethodArg::Gi => variance_head_explanation(
            model,
            x,
            args.output_index,
            &VarianceHeadBackend::GradientInput,
        ),
        MethodArg::Ig => integrated_gradients(&f, x, None, args.ig_steps),
        MethodArg::Sa => sensitivity(&f, x),
        MethodArg::Svs => {
            let zeros = vec![0.0; x.len()];
            let permutations = args
                .svs_permutations
                .unwrap_or_else(|| default_svs_permutations(x.len()));
            shapley_value_sampling(&f, x, &zeros, permutations, args.seed)
        }
        MethodArg::Covlrp | MethodArg::Covgi => unreachable!("handled as second-order"),
    };
    explanation.map_err(CliError::Core)
}

fn method_arg_name(method: MethodArg) -> &'static str {
    match method {
        MethodArg::Covlrp => "covlrp",
        MethodArg::Covgi => "covgi",
        MethodArg::Lrp => "lrp",
        MethodArg::Gi => "gi",
        MethodArg::Ig => "ig",
        MethodArg::Sa => "sa",
        MethodArg::Svs => "svs",
    }
}

fn mode_arg_name(mode: ModeArg) -> &'static str {
    match mode {
        ModeArg::Matrix => "matrix",
        ModeArg::Diag => "diag",
        ModeArg::Marg => "marg",
    }
}

fn print_top_scores(names: &[String], scores: &[f64], k: usize) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .abs()
            .partial_cmp(&scores[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &i in order.iter().take(k) {
        outln!("  {:>13.6}  {}", scores[i], names[i]);
    }
}

fn print_top_pairs(names: &[String], r: &Matrix, k: usize) {
    let mut pairs = Vec::new();
    for i in 0..r.rows() {
        for j in (i + 1)..r.cols() {
            pairs.push((i, j, r.get(i, j)));
        }
    }
    pairs.sort_by(|a, b| {
        b.2.abs()
            .partial_cmp(&a.2.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a.0, a.1).cmp(&(b.0, b.1)))
    });
    for &(i, j, v) in pairs.iter().take(k) {
        outln!("  {:>13.6}  {} x {}", v, names[i], names[j]);
    }
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    /// Directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// The training CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of highest-uncertainty test rows to evaluate.
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    /// Resampling draws per flip step.
    #[arg(long, default_value_t = 5)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Methods to benchmark, comma separated; defaults to all of them.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// LRP gamma for the LRP-based methods.
    #[arg(long, default_value_t = 0.2)]
    pub gamma: f64,
    #[arg(long, default_value_t = 64)]
    pub ig_steps: usize,
    /// Permutations for Shapley sampling; default scales with dimension.
    #[arg(long)]
    pub svs_permutations: Option<usize>,
    /// Density bandwidth; fitted on a held-out grid when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Worker threads; defaults to COVXPLAIN_THREADS or all cores.
    #[arg(long)]
    pub threads: Option<usize>,
}

pub const METHOD_NAMES: [&str; 9] = [
    "covlrp-diag",
    "covlrp-marg",
    "covgi-diag",
    "covgi-marg",
    "lrp",
    "gi",
    "ig",
    "sa",
    "svs",
];

fn method_by_name(name: &str, args: &BenchmarkArgs, d: usize) -> Result<BenchmarkMethod> {
    let config = LrpConfig::generalized(args.gamma);
    Ok(match name {
        "covlrp-diag" => BenchmarkMethod::CovLrp {
            config,
            mode: SummaryMode::Diag,
        },
        "covlrp-marg" => BenchmarkMethod::CovLrp {
            config,
            mode: SummaryMode::Marg,
        },
        "covgi-diag" => BenchmarkMethod::CovGi {
            mode: SummaryMode::Diag,
        },
        "covgi-marg" => BenchmarkMethod::CovGi {
            mode: SummaryMode::Marg,
        },
        "lrp" => BenchmarkMethod::VarianceHeadLrp { config },
        "gi" => BenchmarkMethod::VarianceHeadGi,
        "ig" => BenchmarkMethod::IntegratedGradients {
            steps: args.ig_steps,
        },
        "sa" => BenchmarkMethod::Sensitivity,
        "svs" => BenchmarkMethod::ShapleySampling {
            permutations: args
                .svs_permutations
                .unwrap_or_else(|| default_svs_permutations(d)),
        },
        other => {
            return Err(CliError::config(format!(
                "unknown method '{other}'; expected one of {}",
                METHOD_NAMES.join(", ")
            )))
        }
    })
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    ensure_dir(&args.out)?;
    let (model, sidecar) = load_model_dir(&args.model)?;
    let (train_ds, test_ds) = rebuild_split(&args.data, &sidecar)?;
    if model.input_dim() != train_ds.dim() {
        return Err(CliError::config(format!(
            "model expects {} features but the rebuilt dataset has {}",
            model.input_dim(),
            train_ds.dim()
        )));
    }

    let inpainter = match args.bandwidth {
        Some(bw) => KdeInpainter::new(train_ds.x.clone(), bw).map_err(CliError::Core)?,
        None => fit_inpainter(&train_ds.x, &default_bandwidth_grid()).map_err(CliError::Core)?,
    };
    outln!("density bandwidth: {}", inpainter.bandwidth());
    if !inpainter.jittered_columns.is_empty() {
        eprintln!(
            "note: zero-variance columns {:?} jittered for density estimation",
            inpainter.jittered_columns
        );
    }

    let names: Vec<String> = if args.methods.is_empty() {
        METHOD_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        args.methods.clone()
    };
    let methods = names
        .iter()
        .map(|n| method_by_name(n, args, model.input_dim()))
        .collect::<Result<Vec<_>>>()?;

    if args.top_k > test_ds.len() {
        return Err(CliError::config(format!(
            "--top-k {} exceeds the test split size {}",
            args.top_k,
            test_ds.len()
        )));
    }
    let selected =
        select_high_uncertainty(&model, &test_ds.x, args.top_k).map_err(CliError::Core)?;
    if selected.len() < args.top_k {
        eprintln!(
            "warning: only {} of {} requested test rows have non-negligible uncertainty",
            selected.len(),
            args.top_k
        );
    }
    outln!(
        "benchmarking {} methods on {} instances ({} draws per flip step)",
        methods.len(),
        selected.len(),
        args.draws
    );

    let tasks: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|mi| selected.iter().map(move |&(row, _)| (mi, row)))
        .collect();
    let run_all = || -> Result<Vec<_>> {
        tasks
            .par_iter()
            .map(|&(mi, row)| {
                benchmark_task(
                    &model,
                    &inpainter,
                    test_ds.x.row(row),
                    row,
                    &methods[mi],
                    args.draws,
                    args.seed,
                )
                .map_err(CliError::Core)
            })
            .collect()
    };
    let results = match resolve_threads(args.threads)? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::config(format!("failed to build thread pool: {e}")))?;
            pool.install(run_all)?
        }
        None => run_all()?,
    };

    let dataset_name = args
        .data
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let reports: Vec<AufcReport> = results
        .chunks(selected.len().max(1))
        .zip(&methods)
        .map(|(chunk, method)| {
            summarize_method(method.name(), dataset_name.clone(), chunk.to_vec())
        })
        .collect();

    write_results_csv(&args.out.join("results.csv"), &reports)?;
    write_summary_csv(&args.out.join("summary.csv"), &reports)?;
    write_curves_csv(&args.out.join("curves.csv"), &reports)?;
    let series: Vec<(String, Vec<f64>, Vec<f64>)> = reports
        .iter()
        .filter_map(|r| {
            let first = r.instances.first()?;
            Some((
                r.method.clone(),
                first.curve.fractions.clone(),
                r.mean_curve.clone(),
            ))
        })
        .collect();
    write_svg(
        &args.out.join("curves.svg"),
        &curves_chart(&series, &format!("{dataset_name}: mean flipping curves")),
    )?;
    write_json(
        &args.out.join(CONFIG_FILE),
        &RunConfig {
            command: "benchmark".into(),
            parameters: json!({
                "model": args.model.display().to_string(),
                "data": args.data.display().to_string(),
                "top_k": args.top_k,
                "draws": args.draws,
                "seed": args.seed,
                "methods": names,
                "gamma": args.gamma,
                "ig_steps": args.ig_steps,
                "svs_permutations": args.svs_permutations,
                "bandwidth": inpainter.bandwidth(),
            }),
        },
    )?;

    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| {
        reports[a]
            .mean
            .partial_cmp(&reports[b].mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    outln!("mean area under the flipping curve (lower is better):");
    for &i in &order {
        outln!(
            "  {:<12} {:.4} +- {:.4}",
            reports[i].method,
            reports[i].mean,
            reports[i].std
        );
    }
    outln!("wrote results to {}", args.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of rows.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    /// Number of features (the first five carry signal).
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    /// Standard deviation of the additive target noise.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let ds = synth_regression(args.n, args.d, args.noise, args.seed).map_err(CliError::Core)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_dataset_csv(&args.out, &ds)?;
    outln!(
        "wrote {} rows x {} features to {}",
        ds.len(),
        ds.dim(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn benchmark_args() -> BenchmarkArgs {
        BenchmarkArgs {
            model: PathBuf::new(),
            data: PathBuf::new(),
            out: PathBuf::new(),
            top_k: 20,
            draws: 5,
            seed: 0,
            methods: Vec::new(),
            gamma: 0.2,
            ig_steps: 64,
            svs_permutations: None,
            bandwidth: None,
            threads: None,
        }
    }

    #[test]
    fn every_listed_method_name_resolves() {
        let args = benchmark_args();
        for name in METHOD_NAMES {
            assert_eq!(method_by_name(name, &args, 8).unwrap().name(), name);
        }
        assert!(method_by_name("nope", &args, 8).is_err());
    }

    #[test]
    fn quadruple_names_follow_the_expansion_order() {
        let sidecar = DatasetSidecar {
            seed: 0,
            train_fraction: 0.8,
            quadruple: true,
            train_indices: vec![0, 1],
            test_indices: vec![2, 3],
            x_mean: vec![0.0],
            x_std: vec![1.0],
            y_mean: vec![0.0],
            y_std: vec![1.0],
            clamped_features: vec![],
            clamped_targets: vec![],
            feature_names: vec!["alcohol".into()],
            target_names: vec!["y".into()],
        };
        assert_eq!(
            model_feature_names(&sidecar),
            vec!["alcohol:1-x", "alcohol:1+x", "alcohol:2-x", "alcohol:2+x"]
        );
    }
}

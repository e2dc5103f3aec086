use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use hclass::hierarchy::{parse_taxonomy, Hierarchy, LabelSet};
use hclass::inference::{best_prefix_prediction, expected_hf1, hf1_pr_curve, AucMode};
use hclass::io::{
    decode_model, encode_model, parse_dataset, parse_leaf_distribution, parse_scores, render_fixed,
    report_value, rows_to_samples, summary_report_value, write_scores, DatasetOptions, DatasetRow,
    IoError,
};
use hclass::losses::{LossKind, Smoothing};
use hclass::metrics::MacroAveraging;
use hclass::trainer::{
    evaluate_marginals, predict_marginals, train, Inference, TrainConfig, TrainError,
};

#[derive(Parser)]
#[command(
    name = "hclass",
    version,
    about = "Hierarchical multi-label classification toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Threshold,
    Topdown,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportStyle {
    All,
    /// Hamming loss in per mille, micro and macro F1, hF1 AUC.
    #[value(name = "paper", alias = "summary")]
    Summary,
}

#[derive(Subcommand)]
enum Command {
    /// Check a taxonomy and optionally a dataset against it.
    Validate {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        require_single_path: bool,
        /// Close incoherent label sets under ancestors instead of failing.
        #[arg(long)]
        augment: bool,
    },
    /// Score marginal predictions against ground truth.
    Evaluate {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = Rule::Threshold)]
        rule: Rule,
        #[arg(long, value_enum, default_value_t = ReportStyle::All)]
        report: ReportStyle,
        /// Average macro scores only over classes present in truth or
        /// prediction.
        #[arg(long)]
        macro_skip_absent: bool,
        #[arg(long)]
        augment: bool,
    },
    /// Write the hF1 precision-recall curve as CSV and print its AUC.
    Curve {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Integrate interpolated precision as steps instead of trapezoids.
        #[arg(long)]
        step: bool,
        #[arg(long)]
        augment: bool,
    },
    /// Expected hF1 of a candidate under a leaf distribution.
    Expected {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        leafdist: PathBuf,
        /// Comma-separated node names.
        #[arg(long, required_unless_present = "search")]
        candidate: Option<String>,
        /// Report the best ancestor-chain candidate instead.
        #[arg(long)]
        search: bool,
    },
    /// Fit a linear scoring head.
    Train {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "cond_softmax")]
        loss: String,
        #[arg(long, default_value_t = 1.0)]
        tau_adjust: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_champ: f64,
        #[arg(long, default_value = "laplace1")]
        smoothing: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long)]
        augment: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write marginal scores of a trained model.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        augment: bool,
    },
}

struct CliError {
    code: String,
    message: String,
    location: Option<String>,
}

impl CliError {
    fn new(code: &str, message: impl ToString, location: Option<String>) -> Self {
        CliError {
            code: code.to_owned(),
            message: message.to_string(),
            location,
        }
    }

    fn io(path: &Path, e: IoError) -> Self {
        let location = match e.line() {
            Some(line) => format!("{}:{line}", path.display()),
            None => path.display().to_string(),
        };
        CliError::new(e.code(), e, Some(location))
    }
}

type CliResult = Result<(), CliError>;

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::new("io", e, Some(path.display().to_string())))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| CliError::new("io", e, Some(path.display().to_string())))
}

fn load_taxonomy(path: &Path) -> Result<Hierarchy, CliError> {
    parse_taxonomy(&read(path)?)
        .map_err(|e| CliError::new("taxonomy", e, Some(path.display().to_string())))
}

fn load_rows(
    path: &Path,
    h: &Hierarchy,
    opts: DatasetOptions,
) -> Result<Vec<DatasetRow>, CliError> {
    parse_dataset(&read(path)?, h, opts).map_err(|e| CliError::io(path, e))
}

fn train_error(e: TrainError, data: &Path, rows: &[DatasetRow]) -> CliError {
    let at = |i: usize| {
        rows.get(i)
            .map(|r| format!("{}:{}", data.display(), r.line))
            .or_else(|| Some(data.display().to_string()))
    };
    match e {
        TrainError::IncompatibleLossForDataset { index, .. } => {
            CliError::new("incompatible_loss", &e, at(index))
        }
        TrainError::DimensionMismatch { index, .. } => {
            CliError::new("dimension_mismatch", &e, at(index))
        }
        TrainError::IncoherentLabels(index) => CliError::new("incoherent_labels", &e, at(index)),
        e => CliError::new("train", e, Some(data.display().to_string())),
    }
}

fn load_scored(
    taxonomy: &Path,
    truth: &Path,
    scores: &Path,
    augment: bool,
) -> Result<(Hierarchy, Vec<LabelSet>, Vec<hclass::losses::MarginalTable>), CliError> {
    let h = load_taxonomy(taxonomy)?;
    let opts = DatasetOptions {
        augment,
        ..DatasetOptions::default()
    };
    let rows = load_rows(truth, &h, opts)?;
    let tables = parse_scores(&read(scores)?, &h).map_err(|e| CliError::io(scores, e))?;
    if rows.len() != tables.len() {
        let e = IoError::LineCount {
            truth: rows.len(),
            scores: tables.len(),
        };
        return Err(CliError::new(
            e.code(),
            e,
            Some(scores.display().to_string()),
        ));
    }
    if rows.is_empty() {
        return Err(CliError::new(
            "empty",
            "no samples",
            Some(truth.display().to_string()),
        ));
    }
    Ok((h, rows.into_iter().map(|r| r.labels).collect(), tables))
}

fn validate(
    taxonomy: &Path,
    data: Option<&Path>,
    require_single_path: bool,
    augment: bool,
) -> CliResult {
    let h = load_taxonomy(taxonomy)?;
    let rows = match data {
        Some(path) => {
            let opts = DatasetOptions {
                augment,
                require_single_path,
                require_features: false,
            };
            Some(load_rows(path, &h, opts)?)
        }
        None => None,
    };
    println!("nodes: {}", h.node_count());
    println!("leaves: {}", h.leaves().len());
    println!("depth: {}", h.max_depth());
    println!("nodes per level: {:?}", h.nodes_per_level());
    if let Some(rows) = rows {
        let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
        for r in &rows {
            *histogram.entry(r.labels.len()).or_default() += 1;
        }
        println!("samples: {}", rows.len());
        println!("labels per sample:");
        for (k, count) in histogram {
            println!("  {k}: {count}");
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_cmd(
    taxonomy: &Path,
    truth: &Path,
    scores: &Path,
    tau: f64,
    rule: Rule,
    style: ReportStyle,
    skip_absent: bool,
    augment: bool,
) -> CliResult {
    let (h, truths, tables) = load_scored(taxonomy, truth, scores, augment)?;
    let inference = match rule {
        Rule::Threshold => Inference::Threshold(tau),
        Rule::Topdown => Inference::TopDown,
    };
    let averaging = if skip_absent {
        MacroAveraging::SkipAbsent
    } else {
        MacroAveraging::AllClasses
    };
    let fail = |e: TrainError| CliError::new("evaluate", e, None);
    let (mut report, _) =
        evaluate_marginals(&tables, &truths, &h, inference, averaging).map_err(fail)?;
    let curve = hf1_pr_curve(&h, &tables, &truths, AucMode::Trapezoid)
        .map_err(|e| CliError::new("evaluate", e, None))?;
    report.h_f1_auc = Some(curve.auc);
    let value = match style {
        ReportStyle::All => report_value(&report, &h),
        ReportStyle::Summary => summary_report_value(&report),
    };
    print!("{}", render_fixed(&value));
    Ok(())
}

fn curve_cmd(
    taxonomy: &Path,
    truth: &Path,
    scores: &Path,
    out: &Path,
    step: bool,
    augment: bool,
) -> CliResult {
    let (h, truths, tables) = load_scored(taxonomy, truth, scores, augment)?;
    let mode = if step {
        AucMode::Step
    } else {
        AucMode::Trapezoid
    };
    let curve =
        hf1_pr_curve(&h, &tables, &truths, mode).map_err(|e| CliError::new("curve", e, None))?;
    write(out, curve.to_csv())?;
    print!(
        "{}",
        render_fixed(&json!({ "auc": curve.auc, "points": curve.points.len() }))
    );
    Ok(())
}

fn expected_cmd(
    taxonomy: &Path,
    leafdist: &Path,
    candidate: Option<&str>,
    search: bool,
) -> CliResult {
    let h = load_taxonomy(taxonomy)?;
    let d = parse_leaf_distribution(&read(leafdist)?, &h).map_err(|e| CliError::io(leafdist, e))?;
    let names = |s: &LabelSet| s.iter().map(|y| h.name(y).to_owned()).collect::<Vec<_>>();
    let value = if search {
        let (best, v) = best_prefix_prediction(&h, &d);
        json!({ "candidate": names(&best), "expected_hf1": v })
    } else {
        let text = candidate.unwrap_or_default();
        let parts: Vec<&str> = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let set = h
            .label_set_from_names(&parts)
            .map_err(|e| CliError::new("candidate", e, None))?;
        let v = expected_hf1(&h, &d, &set).map_err(|e| CliError::new("candidate", e, None))?;
        json!({ "candidate": names(&set), "expected_hf1": v })
    };
    print!("{}", render_fixed(&value));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Validate {
            taxonomy,
            data,
            require_single_path,
            augment,
        } => validate(&taxonomy, data.as_deref(), require_single_path, augment),
        Command::Evaluate {
            taxonomy,
            truth,
            scores,
            tau,
            rule,
            report,
            macro_skip_absent,
            augment,
        } => evaluate_cmd(
            &taxonomy,
            &truth,
            &scores,
            tau,
            rule,
            report,
            macro_skip_absent,
            augment,
        ),
        Command::Curve {
            taxonomy,
            truth,
            scores,
            out,
            step,
            augment,
        } => curve_cmd(&taxonomy, &truth, &scores, &out, step, augment),
        Command::Expected {
            taxonomy,
            leafdist,
            candidate,
            search,
        } => expected_cmd(&taxonomy, &leafdist, candidate.as_deref(), search),
        Command::Train {
            taxonomy,
            data,
            loss,
            tau_adjust,
            lambda_champ,
            smoothing,
            seed,
            lr,
            epochs,
            batch_size,
            augment,
            out,
        } => {
            let h = load_taxonomy(&taxonomy)?;
            let loss_kind: LossKind = loss.parse().map_err(|e| CliError::new("usage", e, None))?;
            let smoothing: Smoothing = smoothing
                .parse()
                .map_err(|e| CliError::new("usage", e, None))?;
            let opts = DatasetOptions {
                augment,
                require_single_path: false,
                require_features: true,
            };
            let rows = load_rows(&data, &h, opts)?;
            let samples = rows_to_samples(&rows).map_err(|e| CliError::io(&data, e))?;
            let config = TrainConfig {
                loss_kind,
                learning_rate: lr,
                epochs,
                batch_size,
                seed,
                tau_adjust,
                lambda_champ,
                smoothing,
            };
            let (model, curve) =
                train(&samples, &h, &config).map_err(|e| train_error(e, &data, &rows))?;
            write(&out, encode_model(&h, loss_kind, &model))?;
            let summary = json!({
                "loss": loss_kind.as_str(),
                "epochs": epochs,
                "samples": samples.len(),
                "final_loss": curve.last().copied().unwrap_or(f64::NAN),
            });
            print!("{}", render_fixed(&summary));
            Ok(())
        }
        Command::Infer {
            model,
            data,
            out,
            augment,
        } => {
            let bytes = fs::read(&model)
                .map_err(|e| CliError::new("io", e, Some(model.display().to_string())))?;
            let (h, kind, linear) = decode_model(&bytes).map_err(|e| CliError::io(&model, e))?;
            let opts = DatasetOptions {
                augment,
                require_single_path: false,
                require_features: true,
            };
            let rows = load_rows(&data, &h, opts)?;
            let samples = rows_to_samples(&rows).map_err(|e| CliError::io(&data, e))?;
            let tables = predict_marginals(&linear, &samples, &h, kind)
                .map_err(|e| train_error(e, &data, &rows))?;
            write(&out, write_scores(&tables))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let first = detail
                .lines()
                .next()
                .unwrap_or(&message)
                .trim_start_matches("error: ");
            let err = json!({ "code": "usage", "message": first, "location": null });
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = json!({ "code": e.code, "message": e.message, "location": e.location });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}

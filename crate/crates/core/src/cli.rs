//! Command-line front end: `train`, `diagnose`, `score`, `simulate` and
//! `evaluate`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::artifact::{self, FileDigest, Manifest, ModelArtifact, ScoreMeta};
use crate::dataset::{self, FeaturePreset, LabeledDataset, LoadOptions};
use crate::detectors::{self, Method, ScoreReport, ThresholdSource, WbpcaThreshold};
use crate::error::{Error, ErrorKind, Result};
use crate::evaluation;
use crate::matrix::DataMatrix;
use crate::pca::{self, PcaModel};
use crate::simulation::{self, ExperimentConfig, ShiftPolicy, METHODS, REPORT_FPRS};
use crate::stats;
use crate::training::{self, ComponentThresholds, DiagnoseOptions, TrainingConfig, TrainingReference};

const KDD99_PRESET: &str = include_str!("../../../presets/kdd99.preset");
const UNSW_NB15_PRESET: &str = include_str!("../../../presets/unsw_nb15.preset");

#[derive(Debug, Parser, Serialize)]
#[command(name = "pcaids", version, about = "PCA-based unsupervised network intrusion detection")]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
enum Command {
    /// Fit the model on clean traffic and bootstrap the component thresholds.
    Train(TrainArgs),
    /// Look for unusual training rows behind off-centre bootstrap distributions.
    Diagnose(DiagnoseArgs),
    /// Score a batch with AAD, WAAD and/or WBPCA.
    Score(ScoreArgs),
    /// Run replicated synthetic experiments and average their ROC curves.
    Simulate(SimulateArgs),
    /// ROC curve and rates from an existing score CSV with labels.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args, Serialize)]
struct DataArgs {
    /// Input CSV file(s), read as one stream in the given order.
    #[arg(long = "input", required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,

    /// Built-in preset (`kdd99`, `unsw_nb15`) or path to a preset file.
    /// Without one, the file must have a header and every non-label column
    /// is a feature.
    #[arg(long)]
    preset: Option<String>,

    /// Label column for files without a preset.
    #[arg(long, conflicts_with = "preset")]
    label_column: Option<String>,

    /// Label values meaning "attack" for files without a preset.
    #[arg(long = "positive-label", default_value = "1", conflicts_with = "preset")]
    positive_labels: Vec<String>,

    /// Skip malformed rows (counted in the report) instead of failing.
    #[arg(long)]
    skip_malformed: bool,

    /// Use only one side of the UNSW-NB15 clean-region split.
    #[arg(long, value_enum)]
    unsw_split: Option<SplitSide>,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SplitSide {
    Train,
    Test,
}

#[derive(Debug, Args, Serialize)]
struct BootArgs {
    /// Significance level alpha of the thresholds.
    #[arg(long, default_value_t = 0.0001)]
    alpha: f64,
    /// Number of bootstrap samples B.
    #[arg(long, default_value_t = 5000)]
    boot_count: usize,
    /// Rows per bootstrap sample.
    #[arg(long, default_value_t = 10_000)]
    boot_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl BootArgs {
    fn config(&self) -> TrainingConfig {
        TrainingConfig {
            alpha: self.alpha,
            boot_count: self.boot_count,
            boot_size: self.boot_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    boot: BootArgs,
    /// Drop zero-variance columns instead of failing.
    #[arg(long)]
    drop_constant_columns: bool,
    /// Train on labelled attack rows too (default: normal rows only).
    #[arg(long)]
    include_attacks: bool,
    #[arg(long, env = "PCAIDS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ArtifactArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    thresholds: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct DiagnoseArgs {
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// The training data the model was fitted on.
    #[command(flatten)]
    data: DataArgs,
    /// Must match the flag given to `train`.
    #[arg(long)]
    include_attacks: bool,
    /// Bootstrap medians outside 1 +- this band are suspicious.
    #[arg(long, default_value_t = 0.1)]
    center_band: f64,
    /// Minimum |loading| of a feature on a suspicious component.
    #[arg(long, default_value_t = 0.1)]
    loading_cutoff: f64,
    /// Report rows above this quantile of |standardized value|.
    #[arg(long, default_value_t = 0.9999)]
    row_quantile: f64,
    /// Remove the flagged rows and retrain with the same settings.
    #[arg(long)]
    remove_and_retrain: bool,
    /// Do not ask for confirmation before retraining.
    #[arg(long)]
    yes: bool,
    #[arg(long, env = "PCAIDS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum MethodChoice {
    Aad,
    Waad,
    Wbpca,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SourceChoice {
    Bootstrap,
    ChiSquare,
    Empirical,
}

impl From<SourceChoice> for ThresholdSource {
    fn from(s: SourceChoice) -> Self {
        match s {
            SourceChoice::Bootstrap => ThresholdSource::Bootstrap,
            SourceChoice::ChiSquare => ThresholdSource::ChiSquare,
            SourceChoice::Empirical => ThresholdSource::Empirical,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    #[command(flatten)]
    artifacts: ArtifactArgs,
    /// Batch to score.
    #[command(flatten)]
    data: DataArgs,
    /// Training data (same preset); needed for bootstrap and empirical
    /// thresholds and for the WBPCA threshold.
    #[arg(long = "train-input", num_args = 1..)]
    train_inputs: Vec<PathBuf>,
    /// UNSW-NB15 split side applied to --train-input.
    #[arg(long, value_enum)]
    train_unsw_split: Option<SplitSide>,
    #[arg(long, value_enum, default_value = "all")]
    method: MethodChoice,
    /// Source of the row threshold theta for AAD and WAAD.
    #[arg(long, value_enum, default_value = "bootstrap")]
    threshold_source: SourceChoice,
    /// Override the alpha stored with the thresholds.
    #[arg(long)]
    alpha: Option<f64>,
    /// AAD on these 1-based components instead of the affected set.
    #[arg(long, value_delimiter = ',')]
    components: Option<Vec<usize>>,
    /// WBPCA rank (default: Kaiser rule).
    #[arg(long)]
    wbpca_rank: Option<usize>,
    /// Fixed WBPCA threshold instead of the training quantile.
    #[arg(long)]
    wbpca_threshold: Option<f64>,
    #[arg(long)]
    include_attacks: bool,
    #[arg(long, env = "PCAIDS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SimulateArgs {
    /// Experiment config file; the flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Shift multiplier(s) c.
    #[arg(long, value_delimiter = ',')]
    c: Option<Vec<f64>>,
    #[arg(long)]
    anomaly_count: Option<usize>,
    /// random-K, first-K or last-K.
    #[arg(long)]
    shift_policy: Option<String>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    boot_count: Option<usize>,
    #[arg(long)]
    boot_size: Option<usize>,
    /// Also write every replicate's scores.
    #[arg(long)]
    replicate_scores: bool,
    #[arg(long, env = "PCAIDS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    /// Score CSV with a label column.
    #[arg(long)]
    scores: PathBuf,
    /// Only this method (default: every method in the file).
    #[arg(long)]
    method: Option<String>,
    #[arg(long, env = "PCAIDS_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
}

/// Parses `args` (including the program name), runs the command, prints
/// errors to stderr and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(e.kind())
        }
    }
}

pub fn exit_code(kind: ErrorKind) -> i32 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn execute(cli: &Cli, argv: &[String]) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidParameter("--threads must be positive".into()));
        }
        // fails only if a pool already exists (e.g. repeated in-process runs)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let mut run = Run::new(argv, &cli.command)?;
    match &cli.command {
        Command::Train(a) => cmd_train(a, &mut run),
        Command::Diagnose(a) => cmd_diagnose(a, &mut run),
        Command::Score(a) => cmd_score(a, &mut run),
        Command::Simulate(a) => cmd_simulate(a, &mut run),
        Command::Evaluate(a) => cmd_evaluate(a, &mut run),
    }
}

/// Collects inputs and outputs of a run for its manifest.
struct Run {
    manifest: Manifest,
}

impl Run {
    fn new(argv: &[String], command: &Command) -> Result<Self> {
        let (name, params) = match command {
            Command::Train(a) => ("train", serde_json::to_value(a)),
            Command::Diagnose(a) => ("diagnose", serde_json::to_value(a)),
            Command::Score(a) => ("score", serde_json::to_value(a)),
            Command::Simulate(a) => ("simulate", serde_json::to_value(a)),
            Command::Evaluate(a) => ("evaluate", serde_json::to_value(a)),
        };
        Ok(Run {
            manifest: Manifest {
                tool: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                subcommand: name.into(),
                argv: argv.to_vec(),
                parameters: params.map_err(|e| Error::Format(e.to_string()))?,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    fn output_text(&mut self, path: &Path, text: &str) -> Result<()> {
        let sha256 = artifact::write_text(path, text)?;
        self.manifest.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    fn output_bytes(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))?;
        self.manifest.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: artifact::sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(self, out_dir: &Path) -> Result<()> {
        let path = out_dir.join("manifest.json");
        artifact::write_text(&path, &self.manifest.to_json()?)?;
        Ok(())
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).in_file(dir))
}

fn resolve_preset(name: &str) -> Result<FeaturePreset> {
    match name {
        "kdd99" => FeaturePreset::parse(KDD99_PRESET),
        "unsw_nb15" | "unsw-nb15" => FeaturePreset::parse(UNSW_NB15_PRESET),
        path => FeaturePreset::from_path(Path::new(path)),
    }
}

fn data_preset(a: &DataArgs) -> Result<FeaturePreset> {
    match &a.preset {
        Some(p) => resolve_preset(p),
        None => {
            let positive: Vec<&str> = a.positive_labels.iter().map(String::as_str).collect();
            Ok(FeaturePreset::generic(a.label_column.as_deref(), &positive))
        }
    }
}

/// Loads `inputs`, applies the UNSW split, and logs warnings to `notes`.
fn load_data(
    inputs: &[PathBuf],
    a: &DataArgs,
    split: Option<SplitSide>,
    run: &mut Run,
    notes: &mut String,
) -> Result<LabeledDataset> {
    let preset = data_preset(a)?;
    for p in inputs {
        run.input(p)?;
    }
    let report = dataset::load_csv_files(
        inputs,
        &preset,
        LoadOptions {
            skip_malformed: a.skip_malformed,
        },
    )?;
    if report.skipped_rows > 0 {
        let _ = writeln!(notes, "skipped {} malformed row(s)", report.skipped_rows);
    }
    let mut data = report.dataset;
    if let Some(expected) = preset.expected_rows {
        if data.rows() + report.skipped_rows != expected {
            let _ = writeln!(
                notes,
                "warning: preset `{}` describes {expected} rows, input has {}",
                preset.name,
                data.rows() + report.skipped_rows
            );
        }
    }
    if let Some(side) = split {
        let (train, test) = dataset::split_unsw_clean(&data)?;
        data = match side {
            SplitSide::Train => train,
            SplitSide::Test => test,
        };
    }
    Ok(data)
}

fn normal_rows(data: LabeledDataset, include_attacks: bool, notes: &mut String) -> LabeledDataset {
    match &data.labels {
        Some(labels) if !include_attacks => {
            let keep: Vec<usize> = (0..data.rows()).filter(|&i| !labels[i]).collect();
            if keep.len() < data.rows() {
                let _ = writeln!(
                    notes,
                    "training on {} normal row(s); {} attack row(s) left out",
                    keep.len(),
                    data.rows() - keep.len()
                );
            }
            data.select_rows(&keep)
        }
        _ => data,
    }
}

fn load_training(
    a: &DataArgs,
    include_attacks: bool,
    drop_constant: bool,
    run: &mut Run,
    notes: &mut String,
) -> Result<LabeledDataset> {
    let data = load_data(&a.inputs, a, a.unsw_split, run, notes)?;
    let mut data = normal_rows(data, include_attacks, notes);
    if drop_constant {
        let dropped = data.drop_constant_columns();
        if !dropped.is_empty() {
            let _ = writeln!(notes, "dropped constant column(s): {}", dropped.join(", "));
        }
    }
    Ok(data)
}

/// Names zero-variance columns by feature name.
fn name_columns(e: Error, names: &[String]) -> Error {
    match e {
        Error::ZeroVarianceColumn { columns, .. } => Error::ZeroVarianceColumn {
            names: columns.iter().map(|&j| names[j].clone()).collect(),
            columns,
        },
        other => other,
    }
}

/// Feature matrix in model column order.
fn align(data: &LabeledDataset, names: &[String]) -> Result<DataMatrix> {
    if data.feature_names == names {
        return Ok(data.y.clone());
    }
    let idx = names
        .iter()
        .map(|n| {
            data.feature_names
                .iter()
                .position(|f| f == n)
                .ok_or_else(|| Error::MissingColumn(n.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(data.y.select_columns(&idx))
}

struct LoadedArtifacts {
    artifact: ModelArtifact,
    thresholds: ComponentThresholds,
}

fn load_artifacts(a: &ArtifactArgs, run: &mut Run) -> Result<LoadedArtifacts> {
    run.input(&a.model)?;
    run.input(&a.thresholds)?;
    let artifact = ModelArtifact::load(&a.model)?;
    let (thresholds, model_sum) = artifact::load_thresholds(&a.thresholds)?;
    if let Some(sum) = model_sum {
        if sum != artifact::sha256_file(&a.model)? {
            return Err(Error::Format(format!(
                "{} was not computed for {}",
                a.thresholds.display(),
                a.model.display()
            )));
        }
    }
    if thresholds.p() != artifact.model.p() {
        return Err(Error::DimensionMismatch {
            expected: artifact.model.p(),
            got: thresholds.p(),
        });
    }
    Ok(LoadedArtifacts {
        artifact,
        thresholds,
    })
}

/// Standardized training rows, checked against the model they are meant to
/// reproduce.
fn training_matrix(model: &PcaModel, y: &DataMatrix) -> Result<DataMatrix> {
    if y.rows() != model.train_n() {
        return Err(Error::InvalidParameter(format!(
            "training data has {} rows but the model was fitted on {}",
            y.rows(),
            model.train_n()
        )));
    }
    let refit = pca::fit_standardizer(y)?;
    if refit != *model.standardizer() {
        return Err(Error::InvalidParameter(
            "training data does not match the model's standardization".into(),
        ));
    }
    pca::standardize(model.standardizer(), y)
}

// ---------------------------------------------------------------------------
// train

fn training_report(
    artifact: &ModelArtifact,
    thresholds: &ComponentThresholds,
    notes: &str,
) -> String {
    let m = &artifact.model;
    let mut s = String::new();
    let _ = writeln!(s, "training rows: {}", m.train_n());
    let _ = writeln!(s, "features: {}", m.p());
    let _ = writeln!(s, "rank: {}", m.rank());
    let _ = writeln!(s, "kaiser q: {}", detectors::kaiser_rank(m.lambda()));
    let _ = writeln!(
        s,
        "bootstrap: B = {}, size = {}, seed = {}, alpha = {}",
        thresholds.boot_count(),
        thresholds.boot_size(),
        thresholds.seed(),
        thresholds.alpha()
    );
    s.push_str(notes);
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:>4} {:>14} {:>8} {:>10} {:>10} {:>10} {:>10}",
        "pc", "lambda", "cum%", "r_min", "r_median", "delta", "r_max"
    );
    let total: f64 = m.lambda().iter().sum();
    let mut cum = 0.0;
    for (j, dist) in thresholds.boot_samples().iter().enumerate() {
        cum += m.lambda()[j];
        let r = dist.samples();
        let _ = writeln!(
            s,
            "{:>4} {:>14.6} {:>8.3} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            j + 1,
            m.lambda()[j],
            100.0 * cum / total,
            r[0],
            dist.median(),
            thresholds.delta()[j],
            r[r.len() - 1]
        );
    }
    s
}

fn write_model_and_thresholds(
    out_dir: &Path,
    artifact: &ModelArtifact,
    thresholds: &ComponentThresholds,
    run: &mut Run,
) -> Result<()> {
    let model_text = artifact.to_toml()?;
    let model_sum = artifact::sha256_hex(model_text.as_bytes());
    run.output_text(&out_dir.join("model.toml"), &model_text)?;
    run.output_text(
        &out_dir.join("thresholds.toml"),
        &artifact::thresholds_to_toml(thresholds, Some(&model_sum))?,
    )
}

fn cmd_train(a: &TrainArgs, run: &mut Run) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    let mut notes = String::new();
    let data = load_training(&a.data, a.include_attacks, a.drop_constant_columns, run, &mut notes)?;
    let detector =
        training::train(&data.y, &a.boot.config()).map_err(|e| name_columns(e, &data.feature_names))?;
    let preset = data_preset(&a.data)?;
    if let Some(expected) = preset.expected_components {
        if expected != detector.model.p() {
            let msg = format!(
                "warning: preset `{}` expects {expected} components, model has {}",
                preset.name,
                detector.model.p()
            );
            eprintln!("{msg}");
            let _ = writeln!(notes, "{msg}");
        }
    }
    let mut artifact = ModelArtifact::new(detector.model, data.feature_names)?;
    artifact.metadata.insert("preset".into(), preset.name.clone());
    artifact.metadata.insert(
        "created_by".into(),
        concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
    );
    write_model_and_thresholds(&a.out_dir, &artifact, &detector.thresholds, run)?;
    let report = training_report(&artifact, &detector.thresholds, &notes);
    run.output_text(&a.out_dir.join("training_report.txt"), &report)?;
    print!("{report}");
    std::mem::replace(run, Run::placeholder()).finish(&a.out_dir)
}

impl Run {
    fn placeholder() -> Self {
        Run {
            manifest: Manifest {
                tool: String::new(),
                version: String::new(),
                subcommand: String::new(),
                argv: Vec::new(),
                parameters: serde_json::Value::Null,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }
}

// ---------------------------------------------------------------------------
// diagnose

fn confirm(prompt: &str) -> bool {
    eprint!("{prompt} [y/N] ");
    let _ = std::io::stderr().flush();
    let mut line = String::new();
    match std::io::stdin().lock().read_line(&mut line) {
        Ok(n) if n > 0 => matches!(line.trim(), "y" | "Y" | "yes" | "YES"),
        _ => false,
    }
}

fn cmd_diagnose(a: &DiagnoseArgs, run: &mut Run) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    let loaded = load_artifacts(&a.artifacts, run)?;
    let model = &loaded.artifact.model;
    let names = &loaded.artifact.feature_names;
    let mut notes = String::new();
    let data = load_training(&a.data, a.include_attacks, false, run, &mut notes)?;
    let y = align(&data, names)?;
    let x = training_matrix(model, &y)?;
    let options = DiagnoseOptions {
        center_band: a.center_band,
        loading_cutoff: a.loading_cutoff,
        row_quantile: a.row_quantile,
    };
    let diag = training::diagnose_training_outliers(model, &x, &loaded.thresholds, &options)?;

    let mut text = String::new();
    if diag.is_empty() {
        let _ = writeln!(text, "no suspicious components");
    } else {
        for s in &diag.suspicious {
            let loads: Vec<String> = s
                .heavy_loadings
                .iter()
                .map(|(f, l)| format!("{} {l:.3}", names[*f]))
                .collect();
            let _ = writeln!(
                text,
                "component {}: bootstrap median {:.4}; loadings: {}",
                s.component + 1,
                s.median,
                loads.join(", ")
            );
        }
        let rows = diag.flagged_rows();
        let _ = writeln!(text, "flagged rows: {}", rows.len());
        let mut per_feature: std::collections::BTreeMap<&str, usize> = Default::default();
        for f in &diag.flagged {
            *per_feature.entry(names[f.feature].as_str()).or_default() += 1;
        }
        for (f, c) in per_feature {
            let _ = writeln!(text, "  {f}: {c} unusually large value(s)");
        }
    }

    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["row", "feature", "standardized_value"])?;
    for f in &diag.flagged {
        csv.write_record([
            (data.row_ids[f.row] + 1).to_string(),
            names[f.feature].clone(),
            f.value.to_string(),
        ])?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    run.output_bytes(&a.out_dir.join("flagged_rows.csv"), &bytes)?;

    if a.remove_and_retrain && !diag.flagged.is_empty() {
        let rows = diag.flagged_rows();
        let go = a.yes || confirm(&format!("remove {} row(s) and retrain?", rows.len()));
        if go {
            let t = &loaded.thresholds;
            let cfg = TrainingConfig {
                alpha: t.alpha(),
                boot_count: t.boot_count(),
                boot_size: t.boot_size(),
                seed: t.seed(),
            };
            let (detector, _) = training::retrain_after_removal(&y, &rows, &cfg)
                .map_err(|e| name_columns(e, names))?;
            let mut artifact = ModelArtifact::new(detector.model, names.clone())?;
            artifact.metadata = loaded.artifact.metadata.clone();
            artifact
                .metadata
                .insert("removed_rows".into(), rows.len().to_string());
            let retrained = a.out_dir.join("retrained");
            ensure_dir(&retrained)?;
            write_model_and_thresholds(&retrained, &artifact, &detector.thresholds, run)?;
            let removed: String = std::iter::once("row\n".to_string())
                .chain(rows.iter().map(|&r| format!("{}\n", data.row_ids[r] + 1)))
                .collect();
            run.output_text(&retrained.join("removed_rows.csv"), &removed)?;
            let _ = writeln!(text, "removed {} row(s) and retrained:", rows.len());
            for s in &diag.suspicious {
                let j = s.component;
                let _ = writeln!(
                    text,
                    "  component {}: bootstrap median {:.4} -> {:.4}",
                    j + 1,
                    s.median,
                    detector.thresholds.boot_samples()[j].median()
                );
            }
        } else {
            let _ = writeln!(text, "retraining declined");
        }
    }
    text.push_str(&notes);
    run.output_text(&a.out_dir.join("diagnosis.txt"), &text)?;
    print!("{text}");
    std::mem::replace(run, Run::placeholder()).finish(&a.out_dir)
}

// ---------------------------------------------------------------------------
// score

fn cmd_score(a: &ScoreArgs, run: &mut Run) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    let loaded = load_artifacts(&a.artifacts, run)?;
    let model = &loaded.artifact.model;
    let names = &loaded.artifact.feature_names;
    let thresholds = match a.alpha {
        Some(alpha) => loaded.thresholds.with_alpha(alpha)?,
        None => loaded.thresholds.clone(),
    };
    let alpha = thresholds.alpha();
    let mut notes = String::new();

    let batch = load_data(&a.data.inputs, &a.data, a.data.unsw_split, run, &mut notes)?;
    let x_f = pca::standardize(model.standardizer(), &align(&batch, names)?)?;

    let reference = if a.train_inputs.is_empty() {
        None
    } else {
        let train = load_data(&a.train_inputs, &a.data, a.train_unsw_split, run, &mut notes)?;
        let train = normal_rows(train, a.include_attacks, &mut String::new());
        let x_train = training_matrix(model, &align(&train, names)?)?;
        Some(TrainingReference::build(model, &x_train, &thresholds)?)
    };
    let source: ThresholdSource = a.threshold_source.into();
    let needs_reference = |what: &'static str| -> Result<&TrainingReference> {
        reference.as_ref().ok_or_else(|| {
            Error::InvalidParameter(format!("{what} needs the training data (--train-input)"))
        })
    };

    let methods: Vec<Method> = match a.method {
        MethodChoice::Aad => vec![Method::Aad],
        MethodChoice::Waad => vec![Method::Waad],
        MethodChoice::Wbpca => vec![Method::Wbpca],
        MethodChoice::All => vec![Method::Aad, Method::Waad, Method::Wbpca],
    };
    let mut summary = String::new();
    let _ = writeln!(summary, "rows: {}", batch.rows());
    for method in methods {
        let (report, note) = match method {
            Method::Aad => {
                let r = if source == ThresholdSource::ChiSquare { None } else { Some(needs_reference("AAD with a bootstrap or empirical threshold")?) };
                match &a.components {
                    Some(comps) => {
                        let set = comps
                            .iter()
                            .map(|&c| {
                                if c == 0 || c > model.p() {
                                    Err(Error::ComponentOutOfRange { index: c, p: model.p() })
                                } else {
                                    Ok(c - 1)
                                }
                            })
                            .collect::<Result<Vec<_>>>()?;
                        (detectors::aad_score_with_components(model, &set, &x_f, source, alpha, r)?, None)
                    }
                    None => {
                        let affected = detectors::detect_affected(model, &thresholds, &x_f)?;
                        if affected.affected.is_empty() {
                            let mut rep = ScoreReport::no_evidence(Method::Aad, x_f.rows(), source, alpha);
                            rep.affected = Some(affected);
                            (rep, Some("no batch-level anomaly evidence".to_string()))
                        } else {
                            (detectors::aad_score(model, &affected, &x_f, source, alpha, r)?, None)
                        }
                    }
                }
            }
            Method::Waad => {
                let r = needs_reference("WAAD")?;
                (detectors::waad_score(model, &thresholds, &x_f, source, alpha, r)?, None)
            }
            Method::Wbpca => {
                let q = a.wbpca_rank.unwrap_or_else(|| detectors::kaiser_rank(model.lambda()));
                let threshold = match a.wbpca_threshold {
                    Some(t) => WbpcaThreshold::Fixed(t),
                    None => WbpcaThreshold::TrainingQuantile {
                        alpha,
                        reference: needs_reference("the WBPCA threshold (or give --wbpca-threshold)")?,
                    },
                };
                (detectors::wbpca_score(model, q, &x_f, threshold)?, None)
            }
            Method::Mahalanobis => unreachable!("not offered on the command line"),
        };

        let mut meta = ScoreMeta::from_report(&report);
        meta.note = note.clone();
        let _ = write!(
            summary,
            "{}: threshold {} ({}), flagged {}",
            method,
            report.threshold,
            report.threshold_source,
            report.flagged_count()
        );
        if let Some(labels) = &batch.labels {
            if let Ok((dr, fa)) = evaluation::rates_at_threshold(&report.scores, labels, report.threshold) {
                meta.detection_rate = Some(dr);
                meta.false_alarm_rate = Some(fa);
                let _ = write!(
                    summary,
                    ", detection {:.3}%, false alarm {:.3}%",
                    100.0 * dr,
                    100.0 * fa
                );
            }
        }
        if let Some(n) = &note {
            let _ = write!(summary, " [{n}]");
        }
        let _ = writeln!(summary);

        let stem = format!("scores_{}", method.as_str().to_ascii_lowercase());
        let mut buf = Vec::new();
        artifact::write_score_csv(&mut buf, &report, &batch.row_ids, batch.labels.as_deref())?;
        let csv_path = a.out_dir.join(format!("{stem}.csv"));
        run.output_bytes(&csv_path, &buf)?;
        run.output_text(&artifact::sidecar_path(&csv_path), &meta.to_toml()?)?;
    }
    summary.push_str(&notes);
    run.output_text(&a.out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    std::mem::replace(run, Run::placeholder()).finish(&a.out_dir)
}

// ---------------------------------------------------------------------------
// simulate

fn experiment_plan(a: &SimulateArgs, run: &mut Run) -> Result<Vec<ExperimentConfig>> {
    let mut base: Vec<ExperimentConfig> = match &a.config {
        Some(path) => {
            run.input(path)?;
            let text = artifact::read_text(path)?;
            simulation::parse_experiment_config(&text)
                .map_err(|e| e.in_file(path))?
                .experiments
        }
        None => vec![ExperimentConfig::default()],
    };
    if let Some(cs) = &a.c {
        let template = base[0].clone();
        base = cs.iter().map(|&c| ExperimentConfig { c, ..template.clone() }).collect();
    }
    let policy: Option<ShiftPolicy> = a.shift_policy.as_deref().map(str::parse).transpose()?;
    for cfg in &mut base {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = a.$f { cfg.$f = v; } )* };
        }
        set!(n, m, p, rho, anomaly_count, replicates, alpha, seed, boot_count);
        if a.boot_size.is_some() {
            cfg.boot_size = a.boot_size;
        }
        if let Some(pol) = policy {
            cfg.shift_policy = pol;
        }
        cfg.validate()?;
    }
    Ok(base)
}

fn cmd_simulate(a: &SimulateArgs, run: &mut Run) -> Result<()> {
    let plan = experiment_plan(a, run)?;
    ensure_dir(&a.out_dir)?;
    let mut table = String::from(
        "c,method,replicates,mean_auc,sd_auc,se_auc,mean_tpr_at_fpr_0.05,mean_false_alarm,mean_affected\n",
    );
    let mut text = String::new();
    for cfg in &plan {
        let rep_dir = a.out_dir.join(format!("replicates_c{}", cfg.c));
        if a.replicate_scores {
            ensure_dir(&rep_dir)?;
        }
        let summary = simulation::replicate_experiments_with(cfg, |r, run_| {
            if !a.replicate_scores {
                return Ok(());
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["row", "label", "score_aad", "score_waad", "score_wbpca", "score_true"])?;
            for i in 0..run_.batch.labels.len() {
                let mut rec = vec![(i + 1).to_string(), (run_.batch.labels[i] as u8).to_string()];
                rec.extend(run_.reports.iter().map(|rep| rep.scores[i].to_string()));
                w.write_record(&rec)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            let path = rep_dir.join(format!("replicate_{r}.csv"));
            std::fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))
        })?;
        let mean_affected = stats::mean(
            &summary.affected_counts.iter().map(|&c| c as f64).collect::<Vec<_>>(),
        );
        let k05 = REPORT_FPRS.iter().position(|&f| f == 0.05).expect("0.05 reported");
        let _ = writeln!(
            text,
            "c = {} ({}, {} replicates, mean affected components {:.2})",
            cfg.c, cfg.shift_policy, cfg.replicates, mean_affected
        );
        for m in &summary.methods {
            let _ = writeln!(
                table,
                "{},{},{},{},{},{},{},{},{}",
                cfg.c,
                m.method,
                m.aucs.len(),
                m.mean_auc(),
                m.sd_auc(),
                m.se_auc(),
                stats::mean(&m.tpr_series(k05)),
                stats::mean(&m.false_alarm),
                mean_affected
            );
            let _ = writeln!(
                text,
                "  {:<12} AUC {:.4} +- {:.4} (sd)",
                m.method.to_string(),
                m.mean_auc(),
                m.sd_auc()
            );
        }
        let curves: Vec<(Method, &evaluation::RocCurve)> =
            summary.methods.iter().map(|m| (m.method, &m.curve)).collect();
        debug_assert_eq!(curves.len(), METHODS.len());
        let mut buf = Vec::new();
        artifact::write_multi_roc_csv(&mut buf, &curves)?;
        run.output_bytes(&a.out_dir.join(format!("roc_c{}.csv", cfg.c)), &buf)?;
    }
    run.output_text(&a.out_dir.join("summary.csv"), &table)?;
    run.output_text(&a.out_dir.join("summary.txt"), &text)?;
    print!("{text}");
    std::mem::replace(run, Run::placeholder()).finish(&a.out_dir)
}

// ---------------------------------------------------------------------------
// evaluate

fn cmd_evaluate(a: &EvaluateArgs, run: &mut Run) -> Result<()> {
    ensure_dir(&a.out_dir)?;
    run.input(&a.scores)?;
    let file = std::fs::File::open(&a.scores).map_err(|e| Error::from(e).in_file(&a.scores))?;
    let table = artifact::read_score_csv(std::io::BufReader::new(file)).map_err(|e| e.in_file(&a.scores))?;
    let methods = match &a.method {
        Some(m) => vec![m.clone()],
        None => table.methods(),
    };
    let mut rates = String::from("method,auc,threshold,detection_rate,false_alarm_rate\n");
    for method in methods {
        let (scores, labels, theta) = table.method_columns(&method).map_err(|e| e.in_file(&a.scores))?;
        let roc = evaluation::roc_curve(&scores, &labels)?;
        let (dr, fa) = evaluation::rates_at_threshold(&scores, &labels, theta)?;
        let _ = writeln!(rates, "{method},{},{theta},{dr},{fa}", roc.auc());
        let mut buf = Vec::new();
        artifact::write_roc_csv(&mut buf, &roc)?;
        run.output_bytes(&a.out_dir.join(format!("roc_{}.csv", method.to_ascii_lowercase())), &buf)?;
    }
    run.output_text(&a.out_dir.join("rates.csv"), &rates)?;
    print!("{rates}");
    std::mem::replace(run, Run::placeholder()).finish(&a.out_dir)
}

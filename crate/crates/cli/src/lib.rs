//! Command-line front end.
//!
//! Every command writes its outputs plus a `<out>.manifest.json` describing
//! the run. Exit status is 0 on success, 1 for input or configuration
//! problems, and 2 for numerical failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use contsurv::data::{
    apply_preprocess, load_csv, simulate_competing, simulate_nonlinear, Column, Dataset, FeatureKind, FeatureStats,
    PreprocessStats, Schema,
};
use contsurv::discretization::Scheme;
use contsurv::metrics::primary_weighting;
use contsurv::model::{predict_cif, validate_mesh, Checkpoint, Encoder, HazardModel, HazardNetwork};
use contsurv::training::{cross_validate_observed, evaluate_dataset, fit, log_table, CvReport, TrainConfig};
use contsurv::{Error, Result};
use serde::Serialize;

// Training allocates and frees many large activation buffers per step; the
// system allocator returns them to the kernel every time.
#[global_allocator]
static ALLOC: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Parser)]
#[command(name = "contsurv", version, about = "Continuous-time neural survival models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with its schema.
    Simulate(SimulateArgs),
    /// Train on all non-holdout rows and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Survival and cumulative incidence curves for one covariate row.
    Predict(PredictArgs),
    /// Cross-validate one configuration.
    Cv(CvArgs),
    /// Cross-validate every (scheme, m) pair and tabulate Ctd.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimKind {
    Nonlinear,
    Competing,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: SimKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// CSV output; the schema goes to `<out>.schema.toml`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EncoderArg {
    Raw,
    Pe,
    T2v,
}

impl From<EncoderArg> for Encoder {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Raw => Encoder::Raw,
            EncoderArg::Pe => Encoder::Positional,
            EncoderArg::T2v => Encoder::Time2Vec,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SchemeArg {
    A,
    B,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::A => Scheme::PerSample,
            SchemeArg::B => Scheme::Global,
        }
    }
}

/// Data and configuration shared by the training commands.
#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// TOML training config; defaults apply to absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    #[arg(long, value_enum)]
    pub encoder: Option<EncoderArg>,
    #[arg(long)]
    pub risks: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint output; the log goes to `<out>.log.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    /// JSON metric report.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw covariates in schema order, comma separated; empty cells are missing.
    #[arg(long, allow_hyphen_values = true)]
    pub covariates: String,
    /// `COUNT:MAX` for a uniform mesh on [0, MAX], or explicit comma-separated times.
    #[arg(long)]
    pub mesh: String,
    /// CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Run only the first folds (for quick checks).
    #[arg(long)]
    pub max_folds: Option<usize>,
    /// JSON report; the summary table goes to `<out>.summary.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![3usize, 5, 10, 30, 50, 100])]
    pub m_list: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![SchemeArg::A, SchemeArg::B])]
    pub schemes: Vec<SchemeArg>,
    #[arg(long)]
    pub max_folds: Option<usize>,
    /// CSV results table.
    #[arg(long)]
    pub out: PathBuf,
}

impl std::fmt::Display for SchemeArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        Scheme::from(*self).fmt(f)
    }
}

/// Description of one run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: &'static str,
    pub duration_seconds: f64,
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_manifest(out: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&with_suffix(out, ".manifest.json"), &(text + "\n"))
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

/// Config file (if any) with command-line overrides applied, validated.
pub fn resolve_config(args: &DataArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.m {
        cfg.m = m;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s.into();
    }
    if let Some(e) = args.encoder {
        cfg.encoder = e.into();
    }
    if args.risks.is_some() {
        cfg.risks = args.risks;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema = Schema::load(&args.schema)?;
    load_csv(&args.data, &schema)
}

fn simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let data = match args.kind {
        SimKind::Nonlinear => simulate_nonlinear(args.n, args.seed),
        SimKind::Competing => simulate_competing(args.n, args.seed),
    };
    let schema_path = with_suffix(&args.out, ".schema.toml");
    data.write_csv(&args.out)?;
    data.schema.save(&schema_path)?;
    Ok(RunManifest {
        command: "simulate".into(),
        config: serde_json::json!({
            "kind": format!("{:?}", args.kind).to_lowercase(),
            "n": args.n,
        }),
        seed: Some(args.seed),
        inputs: Vec::new(),
        outputs: vec![args.out.clone(), schema_path],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

fn train(args: &TrainArgs) -> Result<RunManifest> {
    let cfg = resolve_config(&args.data)?;
    let data = load_data(&args.data)?;
    let fitted = fit(&data, &cfg)?;
    let ck = fitted.outcome.network.to_checkpoint(Some(fitted.stats));
    ck.save(&args.out)?;
    let log_path = with_suffix(&args.out, ".log.csv");
    write_text(&log_path, &log_table(&fitted.outcome.log))?;
    Ok(RunManifest {
        command: "train".into(),
        config: to_json(&fitted.config),
        seed: Some(fitted.config.seed),
        inputs: data_inputs(&args.data),
        outputs: vec![args.out.clone(), log_path],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

fn data_inputs(args: &DataArgs) -> Vec<PathBuf> {
    let mut v = vec![args.data.clone(), args.schema.clone()];
    v.extend(args.config.clone());
    v
}

fn load_model(path: &Path) -> Result<(HazardNetwork, PreprocessStats)> {
    let ck = Checkpoint::load(path)?;
    let stats = ck.preprocess.clone().ok_or_else(|| {
        Error::Input(format!(
            "{}: checkpoint has no preprocessing statistics",
            path.display()
        ))
    })?;
    Ok((HazardNetwork::from_checkpoint(&ck)?, stats))
}

fn evaluate(args: &EvaluateArgs) -> Result<RunManifest> {
    let (net, stats) = load_model(&args.model)?;
    let schema = Schema::load(&args.schema)?;
    let data = load_csv(&args.data, &schema)?;
    let report = evaluate_dataset(&net, &stats, &data)?;
    write_text(&args.out, &(report.to_json() + "\n"))?;
    Ok(RunManifest {
        command: "evaluate".into(),
        config: serde_json::Value::Null,
        seed: None,
        inputs: vec![args.model.clone(), args.data.clone(), args.schema.clone()],
        outputs: vec![args.out.clone()],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

/// Parses `COUNT:MAX` or an explicit comma-separated list of times.
pub fn parse_mesh(spec: &str) -> Result<Vec<f64>> {
    let bad = |detail: String| Error::Input(format!("malformed mesh `{spec}`: {detail}"));
    let mesh = if let Some((count, max)) = spec.split_once(':') {
        let count: usize = count
            .trim()
            .parse()
            .map_err(|_| bad("count is not an integer".into()))?;
        let max: f64 = max.trim().parse().map_err(|_| bad("max is not a number".into()))?;
        if count == 0 || !(max.is_finite() && max > 0.0) && count > 1 {
            return Err(bad("need a positive count and maximum".into()));
        }
        if count == 1 {
            vec![0.0]
        } else {
            (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect()
        }
    } else {
        spec.split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("`{p}` is not a number")))
            })
            .collect::<Result<Vec<_>>>()?
    };
    validate_mesh(&mesh).map_err(|e| bad(e.to_string()))?;
    Ok(mesh)
}

/// One raw covariate row as a single-sample dataset.
fn covariate_row(stats: &PreprocessStats, text: &str) -> Result<Dataset> {
    let cells: Vec<&str> = if text.trim().is_empty() && stats.features.is_empty() {
        Vec::new()
    } else {
        text.split(',').map(str::trim).collect()
    };
    if cells.len() != stats.features.len() {
        return Err(Error::Input(format!(
            "{} covariates given, the model was fitted on {}",
            cells.len(),
            stats.features.len()
        )));
    }
    let mut features = Vec::new();
    let mut columns = Vec::new();
    for (cell, f) in cells.iter().zip(&stats.features) {
        match f {
            FeatureStats::Numeric { name, .. } => {
                let v = if cell.is_empty() {
                    None
                } else {
                    Some(cell.parse::<f64>().map_err(|_| Error::Parse {
                        row: 1,
                        column: name.clone(),
                        detail: format!("`{cell}` is not a number"),
                    })?)
                };
                features.push((name.clone(), FeatureKind::Numeric));
                columns.push(Column::Numeric(vec![v]));
            }
            FeatureStats::Categorical { name, .. } => {
                features.push((name.clone(), FeatureKind::Categorical));
                columns.push(Column::Categorical(vec![(!cell.is_empty()).then(|| cell.to_string())]));
            }
        }
    }
    Ok(Dataset {
        schema: Schema {
            time: "time".into(),
            label: "label".into(),
            risks: None,
            features: features
                .into_iter()
                .map(|(name, kind)| contsurv::data::FeatureSpec { name, kind })
                .collect(),
        },
        columns,
        times: vec![0.0],
        labels: vec![0],
        provenance: "command line".into(),
    })
}

fn predict(args: &PredictArgs) -> Result<RunManifest> {
    let (net, stats) = load_model(&args.model)?;
    let mesh = parse_mesh(&args.mesh)?;
    let row = apply_preprocess(&covariate_row(&stats, &args.covariates)?, &stats)?;
    let scaled: Vec<f64> = mesh.iter().map(|t| t / stats.time_scale).collect();
    let curve = predict_cif(&net, row.x.row(0), &scaled)?;
    let k = net.risks();
    let mut out = String::from("time,survival");
    if k > 1 {
        for r in 1..=k {
            let _ = write!(out, ",cif_{r}");
        }
    }
    out.push('\n');
    for (j, t) in mesh.iter().enumerate() {
        let _ = write!(out, "{t},{}", curve.survival[j]);
        if k > 1 {
            for f in &curve.incidence {
                let _ = write!(out, ",{}", f[j]);
            }
        }
        out.push('\n');
    }
    write_text(&args.out, &out)?;
    Ok(RunManifest {
        command: "predict".into(),
        config: serde_json::json!({ "covariates": args.covariates, "mesh": args.mesh }),
        seed: None,
        inputs: vec![args.model.clone()],
        outputs: vec![args.out.clone()],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV of every summary row of a cross-validation report.
pub fn summary_table(report: &CvReport) -> String {
    let mut s = String::from("weighting,risk,horizon_fraction,ctd_mean,ctd_se,brier_mean,brier_se,folds\n");
    for r in &report.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            to_json(&r.weighting).as_str().unwrap_or_default(),
            r.risk,
            r.horizon_fraction,
            opt(r.ctd_mean),
            opt(r.ctd_se),
            opt(r.brier_mean),
            opt(r.brier_se),
            r.folds
        );
    }
    s
}

fn cv(args: &CvArgs) -> Result<RunManifest> {
    let cfg = resolve_config(&args.data)?;
    let data = load_data(&args.data)?;
    let report = cross_validate_observed(&data, &cfg, args.max_folds, &mut |_, _| {})?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))?;
    write_text(&args.out, &(text + "\n"))?;
    let summary_path = with_suffix(&args.out, ".summary.csv");
    write_text(&summary_path, &summary_table(&report))?;
    Ok(RunManifest {
        command: "cv".into(),
        config: to_json(&report.config),
        seed: Some(report.config.seed),
        inputs: data_inputs(&args.data),
        outputs: vec![args.out.clone(), summary_path],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

fn experiment(args: &ExperimentArgs) -> Result<RunManifest> {
    let base = resolve_config(&args.data)?;
    let data = load_data(&args.data)?;
    let weighting = primary_weighting(base.risks.unwrap_or_else(|| data.risks()));
    let mut table = String::from("scheme,m,risk,horizon_fraction,ctd_mean,ctd_se\n");
    for &scheme in &args.schemes {
        for &m in &args.m_list {
            let cfg = TrainConfig {
                scheme: scheme.into(),
                m,
                ..base.clone()
            };
            cfg.validate()?;
            log::info!("experiment: scheme {scheme}, m = {m}");
            let report = cross_validate_observed(&data, &cfg, args.max_folds, &mut |_, _| {})?;
            for r in report.summary.iter().filter(|r| r.weighting == weighting) {
                let _ = writeln!(
                    table,
                    "{scheme},{m},{},{},{},{}",
                    r.risk,
                    r.horizon_fraction,
                    opt(r.ctd_mean),
                    opt(r.ctd_se)
                );
            }
        }
    }
    write_text(&args.out, &table)?;
    Ok(RunManifest {
        command: "experiment".into(),
        config: serde_json::json!({
            "base": to_json(&base),
            "m_list": args.m_list,
            "schemes": args.schemes.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            "max_folds": args.max_folds,
        }),
        seed: Some(base.seed),
        inputs: data_inputs(&args.data),
        outputs: vec![args.out.clone()],
        version: env!("CARGO_PKG_VERSION"),
        duration_seconds: 0.0,
    })
}

/// Runs one parsed command and writes its manifest.
pub fn run(cli: &Cli) -> Result<()> {
    let start = Instant::now();
    let (mut manifest, out) = match &cli.command {
        Command::Simulate(a) => (simulate(a)?, &a.out),
        Command::Train(a) => (train(a)?, &a.out),
        Command::Evaluate(a) => (evaluate(a)?, &a.out),
        Command::Predict(a) => (predict(a)?, &a.out),
        Command::Cv(a) => (cv(a)?, &a.out),
        Command::Experiment(a) => (experiment(a)?, &a.out),
    };
    manifest.duration_seconds = start.elapsed().as_secs_f64();
    write_manifest(out, &manifest)
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

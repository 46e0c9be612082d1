//! Dataset ingestion, preprocessing, and the synthetic generators.
//!
//! A [`Dataset`] holds raw records: numeric or categorical columns with
//! possibly missing cells, observed times, and integer labels where 0 means
//! censored and `k ≥ 1` names the risk that occurred. Preprocessing turns it
//! into a [`Prepared`] design matrix using statistics fitted on training
//! rows only.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
}

/// Column layout of a CSV file, stored as TOML:
///
/// ```toml
/// time = "time"
/// label = "label"
/// risks = 2
///
/// [[features]]
/// name = "age"
/// kind = "numeric"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub time: String,
    pub label: String,
    /// Number of risks; inferred from the largest label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub risks: Option<usize>,
    pub features: Vec<FeatureSpec>,
}

impl Schema {
    pub fn numeric(names: impl IntoIterator<Item = String>, risks: usize) -> Self {
        Schema {
            time: "time".into(),
            label: "label".into(),
            risks: Some(risks),
            features: names
                .into_iter()
                .map(|name| FeatureSpec {
                    name,
                    kind: FeatureKind::Numeric,
                })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    fn select(&self, rows: &[usize]) -> Column {
        match self {
            Column::Numeric(v) => Column::Numeric(rows.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(rows.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: Schema,
    /// One column per schema feature, in schema order.
    pub columns: Vec<Column>,
    pub times: Vec<f64>,
    pub labels: Vec<usize>,
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn risks(&self) -> usize {
        self.schema
            .risks
            .unwrap_or_else(|| self.labels.iter().copied().max().unwrap_or(0).max(1))
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            times: rows.iter().map(|&i| self.times[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Event indicators `1(label ≠ 0)`.
    pub fn events(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        let mut header: Vec<&str> = self.schema.features.iter().map(|f| f.name.as_str()).collect();
        header.push(&self.schema.time);
        header.push(&self.schema.label);
        w.write_record(&header).map_err(|e| csv_error(path, e))?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self
                .columns
                .iter()
                .map(|c| match c {
                    Column::Numeric(v) => v[i].map(|x| x.to_string()).unwrap_or_default(),
                    Column::Categorical(v) => v[i].clone().unwrap_or_default(),
                })
                .collect();
            rec.push(self.times[i].to_string());
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty()
}

/// Parses a CSV file laid out by `schema`. Empty cells are kept as missing.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let position = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| {
            Error::Input(format!(
                "column `{name}` from the schema is missing in {}",
                path.display()
            ))
        })
    };
    let feature_pos = schema
        .features
        .iter()
        .map(|f| position(&f.name))
        .collect::<Result<Vec<_>>>()?;
    let time_pos = position(&schema.time)?;
    let label_pos = position(&schema.label)?;
    if let Some(extra) = header
        .iter()
        .find(|h| **h != schema.time && **h != schema.label && !schema.features.iter().any(|f| &f.name == *h))
    {
        return Err(Error::Input(format!("column `{extra}` is not in the schema")));
    }

    let mut columns: Vec<Column> = schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Numeric => Column::Numeric(Vec::new()),
            FeatureKind::Categorical => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut times = Vec::new();
    let mut labels = Vec::new();

    for (r, record) in reader.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        let cell = |pos: usize| record.get(pos).unwrap_or("");
        for ((col, spec), &pos) in columns.iter_mut().zip(&schema.features).zip(&feature_pos) {
            let text = cell(pos);
            match col {
                Column::Numeric(v) => v.push(if is_missing(text) {
                    None
                } else {
                    let x: f64 = text.parse().map_err(|_| Error::Parse {
                        row,
                        column: spec.name.clone(),
                        detail: format!("`{text}` is not a number"),
                    })?;
                    if !x.is_finite() {
                        return Err(Error::Parse {
                            row,
                            column: spec.name.clone(),
                            detail: format!("`{text}` is not finite"),
                        });
                    }
                    Some(x)
                }),
                Column::Categorical(v) => v.push((!is_missing(text)).then(|| text.to_string())),
            }
        }
        let t_text = cell(time_pos);
        let t: f64 = t_text.parse().map_err(|_| Error::Parse {
            row,
            column: schema.time.clone(),
            detail: format!("`{t_text}` is not a time"),
        })?;
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Parse {
                row,
                column: schema.time.clone(),
                detail: format!("time {t} must be finite and nonnegative"),
            });
        }
        let l_text = cell(label_pos);
        let label: usize = l_text
            .parse()
            .map_err(|_| Error::Input(format!("row {row}: unknown label value `{l_text}`")))?;
        if let Some(k) = schema.risks {
            if label > k {
                return Err(Error::Input(format!(
                    "row {row}: label {label} exceeds the {k} risks in the schema"
                )));
            }
        }
        times.push(t);
        labels.push(label);
    }

    Ok(Dataset {
        schema: schema.clone(),
        columns,
        times,
        labels,
        provenance: path.display().to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeatureStats {
    Numeric {
        name: String,
        mean: f64,
        /// Population variance over the non-missing training values.
        variance: f64,
        /// False when the feature was constant in training and is dropped.
        kept: bool,
    },
    Categorical {
        name: String,
        /// Sorted one-hot vocabulary.
        vocabulary: Vec<String>,
        mode: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessStats {
    pub features: Vec<FeatureStats>,
    /// Observed times are divided by this factor.
    pub time_scale: f64,
}

impl PreprocessStats {
    /// Width of the encoded covariate vector.
    pub fn width(&self) -> usize {
        self.features
            .iter()
            .map(|f| match f {
                FeatureStats::Numeric { kept, .. } => usize::from(*kept),
                FeatureStats::Categorical { vocabulary, .. } => vocabulary.len(),
            })
            .sum()
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for f in &self.features {
            match f {
                FeatureStats::Numeric { name, kept: true, .. } => names.push(name.clone()),
                FeatureStats::Numeric { .. } => {}
                FeatureStats::Categorical { name, vocabulary, .. } => {
                    names.extend(vocabulary.iter().map(|v| format!("{name}={v}")));
                }
            }
        }
        names
    }
}

/// Preprocessed data ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    /// `n × a` covariates.
    pub x: Matrix,
    /// Scaled observed times.
    pub times: Vec<f64>,
    pub labels: Vec<usize>,
    pub risks: usize,
}

impl Prepared {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Prepared {
        Prepared {
            x: self.x.select_rows(rows),
            times: rows.iter().map(|&i| self.times[i]).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            risks: self.risks,
        }
    }

    pub fn events(&self) -> Vec<bool> {
        self.labels.iter().map(|&l| l != 0).collect()
    }
}

/// Fits imputation, standardization and one-hot vocabularies on `train`.
/// Zero-variance numeric features are marked dropped with a warning.
pub fn fit_preprocess(train: &Dataset, time_scale: f64) -> Result<PreprocessStats> {
    if !(time_scale.is_finite() && time_scale > 0.0) {
        return Err(Error::Input(format!("time scale must be positive, got {time_scale}")));
    }
    let mut features = Vec::with_capacity(train.columns.len());
    for (col, spec) in train.columns.iter().zip(&train.schema.features) {
        features.push(match col {
            Column::Numeric(v) => {
                let present: Vec<f64> = v.iter().flatten().copied().collect();
                let n = present.len() as f64;
                let mean = present.iter().sum::<f64>() / n;
                let variance = present.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let kept = !present.is_empty() && variance > 1e-12 * mean.abs().max(1.0).powi(2);
                if !kept {
                    warn!(
                        "feature `{}` has zero variance in training data and is dropped",
                        spec.name
                    );
                }
                FeatureStats::Numeric {
                    name: spec.name.clone(),
                    mean: if mean.is_finite() { mean } else { 0.0 },
                    variance: if variance.is_finite() { variance } else { 0.0 },
                    kept,
                }
            }
            Column::Categorical(v) => {
                let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                for s in v.iter().flatten() {
                    *counts.entry(s).or_default() += 1;
                }
                // BTreeMap order makes ties resolve to the smallest value.
                let mode = counts
                    .iter()
                    .fold(None::<(&str, usize)>, |best, (&s, &c)| match best {
                        Some((_, bc)) if bc >= c => best,
                        _ => Some((s, c)),
                    })
                    .map(|(s, _)| s.to_string());
                FeatureStats::Categorical {
                    name: spec.name.clone(),
                    vocabulary: counts.keys().map(|s| s.to_string()).collect(),
                    mode,
                }
            }
        });
    }
    Ok(PreprocessStats { features, time_scale })
}

pub fn apply_preprocess(data: &Dataset, stats: &PreprocessStats) -> Result<Prepared> {
    if data.columns.len() != stats.features.len() {
        return Err(Error::Input(format!(
            "dataset has {} features, preprocessing expects {}",
            data.columns.len(),
            stats.features.len()
        )));
    }
    let n = data.len();
    let width = stats.width();
    let mut x = Matrix::zeros(n, width);
    let mut offset = 0;
    for (col, fs) in data.columns.iter().zip(&stats.features) {
        match (col, fs) {
            (
                Column::Numeric(v),
                FeatureStats::Numeric {
                    mean, variance, kept, ..
                },
            ) => {
                if !kept {
                    continue;
                }
                let sd = variance.sqrt();
                for (i, cell) in v.iter().enumerate() {
                    x.set(i, offset, (cell.unwrap_or(*mean) - mean) / sd);
                }
                offset += 1;
            }
            (Column::Categorical(v), FeatureStats::Categorical { name, vocabulary, mode }) => {
                for (i, cell) in v.iter().enumerate() {
                    let value = cell.as_ref().or(mode.as_ref());
                    let Some(value) = value else { continue };
                    match vocabulary.binary_search(value) {
                        Ok(j) => x.set(i, offset + j, 1.0),
                        Err(_) => warn!("feature `{name}`: unseen category `{value}` encoded as all zeros"),
                    }
                }
                offset += vocabulary.len();
            }
            _ => {
                return Err(Error::Input(format!(
                    "feature kind mismatch for `{}`",
                    match fs {
                        FeatureStats::Numeric { name, .. } | FeatureStats::Categorical { name, .. } => name,
                    }
                )))
            }
        }
    }
    Ok(Prepared {
        x,
        times: data.times.iter().map(|t| t / stats.time_scale).collect(),
        labels: data.labels.clone(),
        risks: data.risks(),
    })
}

/// Constants of the Gaussian-bump log-risk `r(x) = r_max · exp(−(x₁² + x₂²) / (2w²))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearParams {
    pub r_max: f64,
    pub width: f64,
    pub lambda0: f64,
}

impl Default for NonlinearParams {
    fn default() -> Self {
        NonlinearParams {
            r_max: 5f64.ln(),
            width: 0.5,
            lambda0: 1.0,
        }
    }
}

impl NonlinearParams {
    pub fn log_risk(&self, x: &[f64]) -> f64 {
        self.r_max * (-(x[0] * x[0] + x[1] * x[1]) / (2.0 * self.width * self.width)).exp()
    }

    pub fn rate(&self, x: &[f64]) -> f64 {
        self.lambda0 * self.log_risk(x).exp()
    }
}

pub const NONLINEAR_COVARIATES: usize = 10;
pub const COMPETING_COVARIATES: usize = 20;

/// Censors `⌊n/2⌋` samples chosen without replacement, each at a time
/// uniform on `(0, T*)`.
fn censor_half(times: &mut [f64], labels: &mut [usize], rng: &mut impl Rng) {
    let n = times.len();
    for i in index::sample(rng, n, n / 2).into_vec() {
        let u: f64 = rng.random();
        times[i] *= u;
        labels[i] = 0;
    }
}

fn numeric_dataset(
    rows: Vec<Vec<f64>>,
    times: Vec<f64>,
    labels: Vec<usize>,
    risks: usize,
    provenance: String,
) -> Dataset {
    let a = rows.first().map_or(0, Vec::len);
    let columns = (0..a)
        .map(|j| Column::Numeric(rows.iter().map(|r| Some(r[j])).collect()))
        .collect();
    Dataset {
        schema: Schema::numeric((1..=a).map(|j| format!("x{j}")), risks),
        columns,
        times,
        labels,
        provenance,
    }
}

/// Single-risk exponential data with a Gaussian-bump log-risk and exactly
/// `⌊n/2⌋` censored samples.
pub fn simulate_nonlinear(n: usize, seed: u64) -> Dataset {
    simulate_nonlinear_with(n, seed, NonlinearParams::default())
}

pub fn simulate_nonlinear_with(n: usize, seed: u64, params: NonlinearParams) -> Dataset {
    let mut rng = stream(seed, Stream::Simulate, 0);
    let mut rows = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..NONLINEAR_COVARIATES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let e: f64 = Exp1.sample(&mut rng);
        times.push(e / params.rate(&x));
        rows.push(x);
    }
    let mut labels = vec![1; n];
    censor_half(&mut times, &mut labels, &mut rng);
    numeric_dataset(
        rows,
        times,
        labels,
        1,
        format!("simulated nonlinear, n={n}, seed={seed}"),
    )
}

/// Two competing exponential risks driven by `s = x₁ + x₂ + x₃ + x₄`:
/// `T¹` has mean `cosh(s)` and `T²` mean `|ε + sinh(s)|` with `ε ~ N(0, 1)`.
pub fn simulate_competing(n: usize, seed: u64) -> Dataset {
    simulate_competing_with(n, seed, true)
}

pub fn simulate_competing_with(n: usize, seed: u64, censor: bool) -> Dataset {
    let mut rng = stream(seed, Stream::Simulate, 1);
    let draws = competing_draws(n, &mut rng);
    let mut rows = Vec::with_capacity(n);
    let mut times = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (x, t1, t2) in draws {
        let (t, k) = if t1 <= t2 { (t1, 1) } else { (t2, 2) };
        times.push(t);
        labels.push(k);
        rows.push(x);
    }
    if censor {
        censor_half(&mut times, &mut labels, &mut rng);
    }
    numeric_dataset(
        rows,
        times,
        labels,
        2,
        format!("simulated competing, n={n}, seed={seed}"),
    )
}

/// Covariates and both latent event times for each sample.
fn competing_draws(n: usize, rng: &mut impl Rng) -> Vec<(Vec<f64>, f64, f64)> {
    (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..COMPETING_COVARIATES).map(|_| StandardNormal.sample(rng)).collect();
            let s: f64 = x[..4].iter().sum();
            let noise: f64 = StandardNormal.sample(rng);
            let e1: f64 = Exp1.sample(rng);
            let e2: f64 = Exp1.sample(rng);
            (x, s.cosh() * e1, (noise + s.sinh()).abs() * e2)
        })
        .collect()
}

//! Optimization, model selection, and the cross-validation protocol.
//!
//! The protocol sets aside a stratified holdout (`⌊0.15·n⌋` samples) for
//! model selection and splits the rest into near-equal folds. Each fold
//! trains on the other folds, keeps the epoch with the lowest holdout loss,
//! and is scored on its own samples.

use std::fmt::Write as _;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Inputs, ParamSet};
use crate::data::{apply_preprocess, fit_preprocess, Dataset, Prepared, PreprocessStats};
use crate::discretization::Scheme;
use crate::error::{Error, Result};
use crate::loss::{build_loss, flatten_batch, FlatBatch, GridSpec};
use crate::matrix::Matrix;
use crate::metrics::{self, event_time_percentiles, MetricReport, Weighting, DEFAULT_HORIZON_FRACTIONS};
use crate::model::{Architecture, Encoder, ForwardNodes, HazardNetwork};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Training settings. Every key is optional in a config file; unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Grid points per sample.
    pub m: usize,
    pub scheme: Scheme,
    pub max_epochs: usize,
    pub patience: usize,
    pub hidden: [usize; 2],
    pub embed_dim: usize,
    pub encoder: Encoder,
    /// Number of risks; taken from the data when absent.
    pub risks: Option<usize>,
    pub seed: u64,
    pub adam: AdamConfig,
    pub holdout_fraction: f64,
    pub folds: usize,
    /// Select hidden sizes and embedding width on the holdout first.
    pub grid_search: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 256,
            m: 50,
            scheme: Scheme::PerSample,
            max_epochs: 500,
            patience: 10,
            hidden: [64, 64],
            embed_dim: 16,
            encoder: Encoder::Time2Vec,
            risks: None,
            seed: 0,
            adam: AdamConfig::default(),
            holdout_fraction: 0.15,
            folds: 5,
            grid_search: false,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, in a fixed order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            p.push(format!("learning_rate must be positive (got {})", self.learning_rate));
        }
        if self.batch_size < 1 {
            p.push("batch_size must be at least 1".to_string());
        }
        if self.m < 2 {
            p.push(format!("m must be at least 2 (got {})", self.m));
        }
        if self.max_epochs < 1 {
            p.push("max_epochs must be at least 1".to_string());
        }
        if self.patience < 1 {
            p.push("patience must be at least 1".to_string());
        }
        if self.hidden.contains(&0) {
            p.push("hidden sizes must be positive".to_string());
        }
        if self.encoder != Encoder::Raw && self.embed_dim == 0 {
            p.push("embed_dim must be positive for pe/t2v encoders".to_string());
        }
        if self.risks == Some(0) {
            p.push("risks must be at least 1".to_string());
        }
        let AdamConfig { beta1, beta2, epsilon } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            p.push(format!("adam betas must lie in [0, 1) (got {beta1}, {beta2})"));
        }
        if !(epsilon > 0.0) {
            p.push(format!("adam epsilon must be positive (got {epsilon})"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            p.push(format!(
                "holdout_fraction must lie in (0, 1) (got {})",
                self.holdout_fraction
            ));
        }
        if self.folds < 2 {
            p.push(format!("folds must be at least 2 (got {})", self.folds));
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }

    /// Parses and validates a TOML config.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn architecture(&self, covariates: usize, risks: usize) -> Architecture {
        Architecture {
            covariates,
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            risks,
            encoder: self.encoder,
        }
    }
}

/// Adam moment buffers, one pair per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|p| Matrix::zeros(p.value().rows(), p.value().cols()))
                .collect()
        };
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::State("optimizer state does not match the parameters".into()));
    }
    for id in params.ids() {
        if let Some(bad) = params.grad(id).data().iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient {} in parameter `{}` at element {bad}",
                params.grad(id).data()[bad],
                params.name(id)
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let (value, grad) = params.value_and_grad_mut(id);
        let (m, v) = (state.m[k].data_mut(), state.v[k].data_mut());
        for (((p, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
            *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
}

/// Comma-separated `epoch, train_loss, holdout_loss` table.
pub fn log_table(log: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,holdout_loss\n");
    for r in log {
        let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.holdout_loss);
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest holdout loss.
    pub network: HazardNetwork,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_holdout_loss: f64,
}

/// Samples per chunk when evaluating a loss in inference mode.
const EVAL_CHUNK: usize = 512;

/// Inference-mode loss over `rows`, evaluated in chunks.
pub fn dataset_loss(net: &HazardNetwork, data: &Prepared, rows: &[usize], spec: GridSpec) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Input("loss over an empty set".into()));
    }
    let risks = net.architecture().risks;
    let mut total = 0.0;
    for chunk in rows.chunks(EVAL_CHUNK) {
        let batch = flatten_batch(&data.x, &data.times, &data.labels, chunk, risks, spec)?;
        total += batch_loss(net, &batch, false)?.0 * chunk.len() as f64;
    }
    Ok(total / rows.len() as f64)
}

fn batch_loss(net: &HazardNetwork, batch: &FlatBatch, training: bool) -> Result<(f64, Graph, ForwardNodes)> {
    let mut g = Graph::new();
    let x = g.input("x");
    let t = g.input("t");
    let fwd = net.build(&mut g, x, Some(batch.expand.clone()), t, training);
    let loss = build_loss(&mut g, fwd.hazards, batch);
    g.set_root(loss);
    let mut inputs = Inputs::new();
    inputs
        .bind("x", batch.x.clone())
        .bind("t", Matrix::column_vector(batch.t.clone()));
    let v = g.forward(net.params(), &inputs)?.as_scalar().expect("scalar loss");
    Ok((v, g, fwd))
}

fn numerical_context(e: Error, epoch: usize, batch: usize) -> Error {
    if e.is_numerical() {
        Error::Numerical(format!("epoch {epoch}, batch {batch}: {e}"))
    } else {
        e
    }
}

fn check_rows(data: &Prepared, rows: &[usize], what: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Input(format!("{what} set is empty")));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= data.len()) {
        return Err(Error::Input(format!("{what} row {r} out of range")));
    }
    Ok(())
}

/// Trains on `train_rows` of `data`, selecting the epoch with minimum loss
/// on `holdout_rows`. `stream_index` selects the initialization and shuffle
/// sub-streams (the fold index under cross-validation).
pub fn train(
    data: &Prepared,
    train_rows: &[usize],
    holdout_rows: &[usize],
    config: &TrainConfig,
    stream_index: u64,
) -> Result<TrainOutcome> {
    train_observed(data, train_rows, holdout_rows, config, stream_index, &mut |_| {})
}

/// [`train`] that reports the sample rows of every gradient step.
pub fn train_observed(
    data: &Prepared,
    train_rows: &[usize],
    holdout_rows: &[usize],
    config: &TrainConfig,
    stream_index: u64,
    on_batch: &mut dyn FnMut(&[usize]),
) -> Result<TrainOutcome> {
    config.validate()?;
    check_rows(data, train_rows, "training")?;
    check_rows(data, holdout_rows, "holdout")?;
    let risks = config.risks.unwrap_or(data.risks);
    if let Some(&l) = data.labels.iter().find(|&&l| l > risks) {
        return Err(Error::Input(format!("label {l} exceeds K = {risks}")));
    }
    let t_max = train_rows.iter().map(|&i| data.times[i]).fold(0.0, f64::max);
    let spec = GridSpec {
        scheme: config.scheme,
        m: config.m,
        t_max: t_max.max(crate::discretization::MIN_EVENT_TIME),
    };

    let mut init = stream(config.seed, Stream::Init, stream_index);
    let mut net = HazardNetwork::new(config.architecture(data.x.cols(), risks), &mut init)?;
    let mut adam = AdamState::new(net.params());
    let mut shuffle = stream(config.seed, Stream::Shuffle, stream_index);

    let mut log = Vec::new();
    let mut best: Option<(HazardNetwork, usize, f64)> = None;
    let mut stale = 0;
    let mut order = train_rows.to_vec();
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle);
        let mut acc = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            on_batch(chunk);
            let batch = flatten_batch(&data.x, &data.times, &data.labels, chunk, risks, spec)?;
            let (v, mut g, fwd) = batch_loss(&net, &batch, true).map_err(|e| numerical_context(e, epoch, b))?;
            if !v.is_finite() {
                return Err(Error::Numerical(format!("epoch {epoch}, batch {b}: loss is {v}")));
            }
            net.params_mut().zero_grad();
            g.backward(net.params_mut())?;
            adam_step(net.params_mut(), &mut adam, config.learning_rate, &config.adam)
                .map_err(|e| numerical_context(e, epoch, b))?;
            net.update_running_stats(&g, &fwd);
            acc += v * chunk.len() as f64;
        }
        let train_loss = acc / order.len() as f64;
        let holdout_loss = dataset_loss(&net, data, holdout_rows, spec).map_err(|e| numerical_context(e, epoch, 0))?;
        if !holdout_loss.is_finite() {
            return Err(Error::Numerical(format!(
                "epoch {epoch}: holdout loss is {holdout_loss}"
            )));
        }
        debug!("epoch {epoch}: train {train_loss:.6}, holdout {holdout_loss:.6}");
        log.push(EpochRecord {
            epoch,
            train_loss,
            holdout_loss,
        });
        if best.as_ref().is_none_or(|b| holdout_loss < b.2) {
            best = Some((net.clone(), epoch, holdout_loss));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (network, best_epoch, best_holdout_loss) = best.expect("at least one epoch");
    info!(
        "best epoch {best_epoch} of {}: holdout loss {best_holdout_loss:.6}",
        log.len()
    );
    Ok(TrainOutcome {
        network,
        log,
        best_epoch,
        best_holdout_loss,
    })
}

/// Holdout and fold membership as row indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub holdout: Vec<usize>,
    pub folds: Vec<Vec<usize>>,
}

impl Split {
    /// All fold rows except fold `f`.
    pub fn training_rows(&self, f: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != f)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect()
    }

    /// Every non-holdout row.
    pub fn pool(&self) -> Vec<usize> {
        self.folds.iter().flatten().copied().collect()
    }
}

/// Holdout of `⌊fraction·n⌋` rows stratified by event indicator, then the
/// remaining rows in `folds` groups whose sizes differ by at most one.
pub fn split_protocol(labels: &[usize], folds: usize, fraction: f64, seed: u64) -> Result<Split> {
    let n = labels.len();
    let n_holdout = (fraction * n as f64).floor() as usize;
    if n - n_holdout < folds {
        return Err(Error::Input(format!(
            "{} samples after the holdout cannot fill {folds} folds",
            n - n_holdout
        )));
    }
    if (n - n_holdout) / folds < 10 {
        warn!("fewer than 10 samples per fold");
    }
    let mut rng = stream(seed, Stream::Split, 0);
    let (mut events, mut censored): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] != 0);
    events.shuffle(&mut rng);
    censored.shuffle(&mut rng);
    let from_events = ((n_holdout * events.len()) as f64 / n as f64).round() as usize;
    let from_events = from_events
        .min(events.len())
        .max(n_holdout.saturating_sub(censored.len()));
    let from_censored = n_holdout - from_events;
    let mut holdout: Vec<usize> = events[..from_events]
        .iter()
        .chain(&censored[..from_censored])
        .copied()
        .collect();
    holdout.sort_unstable();
    let mut rest: Vec<usize> = events[from_events..]
        .iter()
        .chain(&censored[from_censored..])
        .copied()
        .collect();
    rest.shuffle(&mut rng);
    let base = rest.len() / folds;
    let extra = rest.len() % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let size = base + usize::from(f < extra);
        let mut fold = rest[start..start + size].to_vec();
        fold.sort_unstable();
        out.push(fold);
        start += size;
    }
    Ok(Split { holdout, folds: out })
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_and_se(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_holdout_loss: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub weighting: Weighting,
    pub risk: usize,
    pub horizon_fraction: f64,
    pub ctd_mean: Option<f64>,
    pub ctd_se: Option<f64>,
    pub brier_mean: Option<f64>,
    pub brier_se: Option<f64>,
    /// Folds where the metric was defined.
    pub folds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub config: TrainConfig,
    pub time_scale: f64,
    /// `(fraction, time)` evaluation horizons in original time units.
    pub horizons: Vec<(f64, f64)>,
    pub folds: Vec<FoldResult>,
    pub summary: Vec<SummaryRow>,
}

impl CvReport {
    pub fn summary_for(&self, risk: usize, horizon_fraction: f64, weighting: Weighting) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.risk == risk && r.horizon_fraction == horizon_fraction && r.weighting == weighting)
    }
}

/// Aggregates per-fold reports entry by entry.
pub fn summarize(reports: &[&MetricReport]) -> Vec<SummaryRow> {
    let Some(first) = reports.first() else {
        return Vec::new();
    };
    first
        .entries
        .iter()
        .map(|e| {
            let matching: Vec<_> = reports
                .iter()
                .filter_map(|r| r.get(e.risk, e.horizon_fraction, e.weighting))
                .collect();
            let ctd: Vec<f64> = matching.iter().filter_map(|m| m.ctd).collect();
            let brier: Vec<f64> = matching.iter().filter_map(|m| m.brier).collect();
            let c = mean_and_se(&ctd);
            let b = mean_and_se(&brier);
            SummaryRow {
                weighting: e.weighting,
                risk: e.risk,
                horizon_fraction: e.horizon_fraction,
                ctd_mean: c.map(|v| v.0),
                ctd_se: c.map(|v| v.1),
                brier_mean: b.map(|v| v.0),
                brier_se: b.map(|v| v.1),
                folds: ctd.len(),
            }
        })
        .collect()
}

/// Mean observed time of the holdout rows, used to rescale all times.
pub fn holdout_time_scale(data: &Dataset, holdout: &[usize]) -> Result<f64> {
    let scale = holdout.iter().map(|&i| data.times[i]).sum::<f64>() / holdout.len() as f64;
    if scale.is_finite() && scale > 0.0 {
        Ok(scale)
    } else {
        Err(Error::Input(format!("holdout mean time {scale} cannot scale times")))
    }
}

/// Horizons at the event-time percentiles of the whole dataset, in scaled
/// time.
pub fn dataset_horizons(data: &Dataset, time_scale: f64) -> Result<Vec<(f64, f64)>> {
    let hs = event_time_percentiles(&data.times, &data.labels, &DEFAULT_HORIZON_FRACTIONS)?;
    Ok(DEFAULT_HORIZON_FRACTIONS
        .iter()
        .zip(hs)
        .map(|(&f, h)| (f, h / time_scale))
        .collect())
}

/// Runs the full protocol on raw data. Preprocessing is refitted on each
/// fold's training rows.
pub fn cross_validate(data: &Dataset, config: &TrainConfig) -> Result<CvReport> {
    cross_validate_observed(data, config, None, &mut |_, _| {})
}

/// [`cross_validate`] over at most `max_folds` folds, reporting every
/// gradient step's rows together with the fold index.
pub fn cross_validate_observed(
    data: &Dataset,
    config: &TrainConfig,
    max_folds: Option<usize>,
    on_batch: &mut dyn FnMut(usize, &[usize]),
) -> Result<CvReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let split = split_protocol(&data.labels, config.folds, config.holdout_fraction, config.seed)?;
    let time_scale = holdout_time_scale(data, &split.holdout)?;
    let horizons = dataset_horizons(data, time_scale)?;

    let config = if config.grid_search {
        select_hyperparameters(data, &split, time_scale, config)?.0
    } else {
        config.clone()
    };

    let mut folds = Vec::new();
    for f in 0..config.folds.min(max_folds.unwrap_or(usize::MAX)) {
        let train_rows = split.training_rows(f);
        let stats = fit_preprocess(&data.subset(&train_rows), time_scale)?;
        let prepared = apply_preprocess(data, &stats)?;
        let outcome = train_observed(&prepared, &train_rows, &split.holdout, &config, f as u64, &mut |rows| {
            on_batch(f, rows)
        })?;
        let test = prepared.subset(&split.folds[f]);
        let mut report = metrics::evaluate(&outcome.network, &test.x, &test.times, &test.labels, &horizons)?;
        report.entries.iter_mut().for_each(|e| e.horizon_time *= time_scale);
        info!("fold {f}: best epoch {}", outcome.best_epoch);
        folds.push(FoldResult {
            fold: f,
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.log.len(),
            best_holdout_loss: outcome.best_holdout_loss,
            report,
        });
    }
    let summary = summarize(&folds.iter().map(|f| &f.report).collect::<Vec<_>>());
    Ok(CvReport {
        config,
        time_scale,
        horizons: horizons.iter().map(|&(f, h)| (f, h * time_scale)).collect(),
        folds,
        summary,
    })
}

/// Candidate `(hidden, embed_dim)` combinations for the optional search.
pub const SEARCH_HIDDEN: [usize; 2] = [64, 128];
pub const SEARCH_EMBED: [usize; 2] = [16, 32];

/// Trains each combination on all non-holdout rows and keeps the one with
/// the lowest holdout loss. Returns the chosen config and every trial.
pub fn select_hyperparameters(
    data: &Dataset,
    split: &Split,
    time_scale: f64,
    config: &TrainConfig,
) -> Result<(TrainConfig, Vec<(TrainConfig, f64)>)> {
    let pool = split.pool();
    let stats = fit_preprocess(&data.subset(&pool), time_scale)?;
    let prepared = apply_preprocess(data, &stats)?;
    let mut trials = Vec::new();
    for h1 in SEARCH_HIDDEN {
        for h2 in SEARCH_HIDDEN {
            for b in SEARCH_EMBED {
                let cfg = TrainConfig {
                    hidden: [h1, h2],
                    embed_dim: b,
                    grid_search: false,
                    ..config.clone()
                };
                let out = train(&prepared, &pool, &split.holdout, &cfg, u64::from(u32::MAX))?;
                info!("search hidden {h1}/{h2}, b {b}: holdout {:.6}", out.best_holdout_loss);
                trials.push((cfg, out.best_holdout_loss));
            }
        }
    }
    let best = trials
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|t| t.0.clone())
        .expect("non-empty search");
    Ok((best, trials))
}

/// A model trained on all non-holdout rows, with its preprocessing.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub outcome: TrainOutcome,
    pub stats: PreprocessStats,
    pub config: TrainConfig,
}

/// Trains once on every non-holdout row, selecting on the holdout.
pub fn fit(data: &Dataset, config: &TrainConfig) -> Result<FittedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Input("empty dataset".into()));
    }
    let split = split_protocol(&data.labels, config.folds, config.holdout_fraction, config.seed)?;
    let time_scale = holdout_time_scale(data, &split.holdout)?;
    let config = if config.grid_search {
        select_hyperparameters(data, &split, time_scale, config)?.0
    } else {
        config.clone()
    };
    let pool = split.pool();
    let stats = fit_preprocess(&data.subset(&pool), time_scale)?;
    let prepared = apply_preprocess(data, &stats)?;
    let outcome = train(&prepared, &pool, &split.holdout, &config, 0)?;
    Ok(FittedModel { outcome, stats, config })
}

/// Scores a trained network on raw data at the dataset's own event-time
/// percentiles. Horizons in the report are in original time units.
pub fn evaluate_dataset(net: &HazardNetwork, stats: &PreprocessStats, data: &Dataset) -> Result<MetricReport> {
    let prepared = apply_preprocess(data, stats)?;
    if prepared.x.cols() != net.architecture().covariates {
        return Err(Error::Input(format!(
            "data encodes to {} covariates, model expects {}",
            prepared.x.cols(),
            net.architecture().covariates
        )));
    }
    if let Some(&l) = prepared.labels.iter().find(|&&l| l > net.architecture().risks) {
        return Err(Error::Input(format!(
            "label {l} exceeds the model's {} risks",
            net.architecture().risks
        )));
    }
    let horizons = dataset_horizons(data, stats.time_scale)?;
    let mut report = metrics::evaluate(net, &prepared.x, &prepared.times, &prepared.labels, &horizons)?;
    report
        .entries
        .iter_mut()
        .for_each(|e| e.horizon_time *= stats.time_scale);
    Ok(report)
}

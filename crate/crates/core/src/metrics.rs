//! Evaluation metrics with inverse-probability-of-censoring weights.
//!
//! Labels follow the data convention: 0 is censored, `k ≥ 1` is an event of
//! risk `k`. Per-risk metrics score sample `i` by its predicted cumulative
//! incidence `F_k(h | x_i)` at the horizon `h`; with one risk that is
//! `1 − S(h | x_i)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{predict_cif_batch, HazardModel};

pub const DEFAULT_HORIZON_FRACTIONS: [f64; 3] = [0.25, 0.5, 0.75];

/// Kaplan–Meier step function, right-continuous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringEstimate {
    /// Times where the estimate drops, ascending.
    pub times: Vec<f64>,
    /// Value from each time onwards.
    pub values: Vec<f64>,
}

impl CensoringEstimate {
    /// No censoring: `G ≡ 1`.
    pub fn none() -> Self {
        CensoringEstimate {
            times: Vec::new(),
            values: Vec::new(),
        }
    }

    /// `G(t)`.
    pub fn at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s <= t) {
            0 => 1.0,
            j => self.values[j - 1],
        }
    }

    /// Left limit `G(t⁻)`.
    pub fn before(&self, t: f64) -> f64 {
        match self.times.partition_point(|&s| s < t) {
            0 => 1.0,
            j => self.values[j - 1],
        }
    }
}

fn check_lengths(what: &str, lens: &[usize]) -> Result<()> {
    if lens.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Input(format!("{what}: input lengths differ {lens:?}")));
    }
    Ok(())
}

/// Product-limit estimate of `P(T > t)` for event flags `events`. At tied
/// times, observations flagged in `first` leave the risk set before the
/// events are counted.
fn product_limit(times: &[f64], events: &[bool], first: &[bool]) -> Result<CensoringEstimate> {
    check_lengths("kaplan-meier", &[times.len(), events.len()])?;
    if times.is_empty() {
        return Err(Error::Input("kaplan-meier of an empty sample".into()));
    }
    if let Some(t) = times.iter().find(|t| !t.is_finite() || **t < 0.0) {
        return Err(Error::Input(format!("times must be finite and nonnegative, got {t}")));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut at_risk = times.len();
    let mut value = 1.0;
    let mut est = CensoringEstimate::none();
    let mut i = 0;
    while i < order.len() {
        let t = times[order[i]];
        let mut j = i;
        let (mut d, mut early) = (0, 0);
        while j < order.len() && times[order[j]] == t {
            d += usize::from(events[order[j]]);
            early += usize::from(first[order[j]]);
            j += 1;
        }
        if d > 0 {
            value *= 1.0 - d as f64 / (at_risk - early) as f64;
            est.times.push(t);
            est.values.push(value);
        }
        at_risk -= j - i;
        i = j;
    }
    Ok(est)
}

/// Standard survival Kaplan–Meier estimate (events at a tied time are
/// counted before censorings leave).
pub fn kaplan_meier(times: &[f64], events: &[bool]) -> Result<CensoringEstimate> {
    product_limit(times, events, &vec![false; times.len()])
}

/// Kaplan–Meier estimate `G` of the censoring survival function. `events`
/// flags observed events (any risk); censorings are the complement. Events
/// at a tied time are taken to occur first.
pub fn km_censoring(times: &[f64], events: &[bool]) -> Result<CensoringEstimate> {
    let censored: Vec<bool> = events.iter().map(|e| !e).collect();
    product_limit(times, &censored, events)
}

/// Fenwick tree of counts over score ranks.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick(vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< rank`.
    fn below(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Weighted concordance over pairs `(i, j)` with `label_i = risk`,
/// `T_i ≤ horizon` and `T_i < T_j`; pair weight `weight(T_i)`. Runs in
/// `O(n log n)`.
fn concordance(
    scores: &[f64],
    times: &[f64],
    labels: &[usize],
    risk: usize,
    horizon: f64,
    weight: impl Fn(f64) -> f64,
) -> Result<f64> {
    check_lengths("concordance", &[scores.len(), times.len(), labels.len()])?;
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Input(format!("risk scores must be finite, got {s}")));
    }
    let n = scores.len();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let rank: Vec<usize> = scores.iter().map(|s| sorted.partition_point(|v| v < s)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick::new(sorted.len());
    let mut later = 0u64;
    let (mut num, mut den) = (0.0, 0.0);
    let mut g = 0;
    while g < n {
        let t = times[order[g]];
        let mut end = g;
        while end < n && times[order[end]] == t {
            end += 1;
        }
        if t <= horizon && later > 0 {
            for &i in &order[g..end] {
                if labels[i] != risk {
                    continue;
                }
                let w = weight(t);
                if w == 0.0 {
                    continue;
                }
                let below = tree.below(rank[i]);
                let tied = tree.below(rank[i] + 1) - below;
                num += w * (below as f64 + 0.5 * tied as f64);
                den += w * later as f64;
            }
        }
        for &i in &order[g..end] {
            tree.add(rank[i]);
        }
        later += (end - g) as u64;
        g = end;
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "no comparable pairs with positive weight for risk {risk} at horizon {horizon}"
        )));
    }
    Ok(num / den)
}

/// Time-dependent concordance with weights `1 / G(T_i⁻)²`.
pub fn ctd_ipcw(
    scores: &[f64],
    times: &[f64],
    labels: &[usize],
    risk: usize,
    g: &CensoringEstimate,
    horizon: f64,
) -> Result<f64> {
    concordance(scores, times, labels, risk, horizon, |t| {
        let gt = g.before(t);
        if gt > 0.0 {
            1.0 / (gt * gt)
        } else {
            0.0
        }
    })
}

/// Concordance with unit pair weights.
pub fn plain_cindex(scores: &[f64], times: &[f64], labels: &[usize], risk: usize, horizon: f64) -> Result<f64> {
    concordance(scores, times, labels, risk, horizon, |_| 1.0)
}

fn brier(
    surv: &[f64],
    times: &[f64],
    labels: &[usize],
    risk: usize,
    horizon: f64,
    g: Option<&CensoringEstimate>,
) -> Result<f64> {
    check_lengths("brier", &[surv.len(), times.len(), labels.len()])?;
    if surv.is_empty() {
        return Err(Error::UndefinedMetric("brier score of an empty sample".into()));
    }
    let weight = |t: f64, left: bool| -> Result<f64> {
        let Some(g) = g else { return Ok(1.0) };
        let v = if left { g.before(t) } else { g.at(t) };
        if v > 0.0 {
            Ok(1.0 / v)
        } else {
            Err(Error::UndefinedMetric(format!(
                "censoring survival is zero before horizon {horizon}"
            )))
        }
    };
    let mut acc = 0.0;
    for ((&s, &t), &l) in surv.iter().zip(times).zip(labels) {
        acc += if t <= horizon {
            match l {
                0 => 0.0,
                k if k == risk => s * s * weight(t, true)?,
                _ => (1.0 - s) * (1.0 - s) * weight(t, true)?,
            }
        } else {
            (1.0 - s) * (1.0 - s) * weight(horizon, false)?
        };
    }
    Ok(acc / surv.len() as f64)
}

/// Time-dependent Brier score for risk `risk`, where `surv[i]` is the
/// predicted probability of no risk-`risk` event by the horizon. Events of
/// other risks before the horizon are known non-events for this risk.
pub fn brier_ipcw(
    surv: &[f64],
    times: &[f64],
    labels: &[usize],
    risk: usize,
    g: &CensoringEstimate,
    horizon: f64,
) -> Result<f64> {
    brier(surv, times, labels, risk, horizon, Some(g))
}

pub fn plain_brier(surv: &[f64], times: &[f64], labels: &[usize], risk: usize, horizon: f64) -> Result<f64> {
    brier(surv, times, labels, risk, horizon, None)
}

/// Linearly interpolated quantiles of the event (label ≠ 0) times.
pub fn event_time_percentiles(times: &[f64], labels: &[usize], fractions: &[f64]) -> Result<Vec<f64>> {
    let mut ev: Vec<f64> = times
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l != 0)
        .map(|(&t, _)| t)
        .collect();
    if ev.is_empty() {
        return Err(Error::Input("percentiles need at least one event".into()));
    }
    ev.sort_by(f64::total_cmp);
    fractions
        .iter()
        .map(|&q| {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Input(format!("fraction {q} outside [0, 1]")));
            }
            let pos = q * (ev.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(ev.len() - 1);
            Ok(ev[lo] + (pos - lo as f64) * (ev[hi] - ev[lo]))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Ipcw,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub risk: usize,
    pub horizon_fraction: f64,
    pub horizon_time: f64,
    pub weighting: Weighting,
    /// `None` when undefined for this data (no comparable pairs, `G = 0`).
    pub ctd: Option<f64>,
    pub brier: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub entries: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn get(&self, risk: usize, horizon_fraction: f64, weighting: Weighting) -> Option<&MetricEntry> {
        self.entries
            .iter()
            .find(|e| e.risk == risk && e.horizon_fraction == horizon_fraction && e.weighting == weighting)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metric report serializes")
    }
}

/// The weighting reported as the headline metric: IPCW for single-risk
/// data, plain for competing risks.
pub fn primary_weighting(risks: usize) -> Weighting {
    if risks == 1 {
        Weighting::Ipcw
    } else {
        Weighting::Plain
    }
}

fn undefined_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(msg)) => {
            log::warn!("{msg}");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Metrics from precomputed scores: `cif[k]` is `n × H`, holding
/// `F_{k+1}(h_j | x_i)` for horizon `j`. IPCW entries are always
/// produced; plain entries too when there are competing risks. `G` is
/// estimated from the evaluated sample itself.
pub fn evaluate_scores(
    cif: &[Matrix],
    times: &[f64],
    labels: &[usize],
    horizons: &[(f64, f64)],
) -> Result<MetricReport> {
    let events: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let g = km_censoring(times, &events)?;
    let risks = cif.len();
    let mut weightings = vec![Weighting::Ipcw];
    if risks > 1 {
        weightings.push(Weighting::Plain);
    }
    let mut entries = Vec::new();
    for &weighting in &weightings {
        for (k, scores) in cif.iter().enumerate() {
            if scores.shape() != (times.len(), horizons.len()) {
                return Err(Error::dim("metric scores", format!("{:?}", scores.shape())));
            }
            for (j, &(fraction, h)) in horizons.iter().enumerate() {
                let f = scores.column(j);
                let s: Vec<f64> = f.iter().map(|v| 1.0 - v).collect();
                let (ctd, brier) = match weighting {
                    Weighting::Ipcw => (
                        ctd_ipcw(&f, times, labels, k + 1, &g, h),
                        brier_ipcw(&s, times, labels, k + 1, &g, h),
                    ),
                    Weighting::Plain => (
                        plain_cindex(&f, times, labels, k + 1, h),
                        plain_brier(&s, times, labels, k + 1, h),
                    ),
                };
                entries.push(MetricEntry {
                    risk: k + 1,
                    horizon_fraction: fraction,
                    horizon_time: h,
                    weighting,
                    ctd: undefined_as_none(ctd)?,
                    brier: undefined_as_none(brier)?,
                });
            }
        }
    }
    Ok(MetricReport { entries })
}

/// Uniform mesh points used to integrate hazards up to the last horizon.
pub const EVAL_MESH_POINTS: usize = 100;

/// Uniform mesh on `[0, max horizon]` with the horizons inserted exactly.
pub fn horizon_mesh(horizons: &[f64], points: usize) -> Vec<f64> {
    let end = horizons.iter().copied().fold(0.0, f64::max);
    let mut mesh: Vec<f64> = (0..points.max(2))
        .map(|i| end * i as f64 / (points.max(2) - 1) as f64)
        .chain(horizons.iter().copied())
        .collect();
    mesh.sort_by(f64::total_cmp);
    mesh.dedup();
    mesh
}

/// Scores a model on `(x, times, labels)` at `horizons` given as
/// `(fraction, time)` pairs.
pub fn evaluate(
    model: &impl HazardModel,
    x: &Matrix,
    times: &[f64],
    labels: &[usize],
    horizons: &[(f64, f64)],
) -> Result<MetricReport> {
    let hs: Vec<f64> = horizons.iter().map(|h| h.1).collect();
    let mesh = horizon_mesh(&hs, EVAL_MESH_POINTS);
    let at: Vec<usize> = hs
        .iter()
        .map(|h| mesh.iter().position(|m| m == h).expect("horizon in mesh"))
        .collect();
    let curves = predict_cif_batch(model, x, &mesh)?;
    let k = model.risks();
    let mut cif = vec![Matrix::zeros(times.len(), hs.len()); k];
    for (i, c) in curves.iter().enumerate() {
        for (r, m) in cif.iter_mut().enumerate() {
            for (j, &p) in at.iter().enumerate() {
                m.set(i, j, c.incidence[r][p]);
            }
        }
    }
    evaluate_scores(&cif, times, labels, horizons)
}

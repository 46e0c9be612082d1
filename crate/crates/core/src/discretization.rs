//! Integration grids for the cumulative hazard and trapezoidal quadrature.
//!
//! Two grid schemes are supported:
//!
//! * [`Scheme::PerSample`]: `m` equally spaced points from 0 to the sample's
//!   own event time, which is always the last point.
//! * [`Scheme::Global`]: `m` equally spaced points on `[0, t_max]` shared by
//!   every sample, with the sample's event time inserted as an extra point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Event times below this are clamped up to it before building a grid.
pub const MIN_EVENT_TIME: f64 = 1e-6;

/// Relative distance (in units of `t_max`) under which an inserted event
/// time is merged with an existing global grid point.
pub const MERGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Per-sample equal spacing ending at the event time.
    #[serde(rename = "A")]
    PerSample,
    /// Shared grid on `[0, t_max]` plus the inserted event time.
    #[serde(rename = "B")]
    Global,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::PerSample => "A",
            Scheme::Global => "B",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" | "per-sample" => Ok(Scheme::PerSample),
            "B" | "b" | "global" => Ok(Scheme::Global),
            other => Err(Error::Input(format!(
                "unknown discretization scheme `{other}` (expected A or B)"
            ))),
        }
    }
}

/// Ordered integration points starting at 0, with the index of the point
/// holding the sample's event time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    anchor: usize,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, anchor: usize) -> Result<Self> {
        if points.first() != Some(&0.0) {
            return Err(Error::Input("time grid must start at 0".into()));
        }
        if let Some(w) = points.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::Input(format!(
                "time grid must be strictly ascending ({} then {})",
                w[0], w[1]
            )));
        }
        if anchor >= points.len() {
            return Err(Error::Input(format!(
                "anchor {anchor} outside a grid of {} points",
                points.len()
            )));
        }
        Ok(TimeGrid { points, anchor })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Zero-based index of the event time.
    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn anchor_time(&self) -> f64 {
        self.points[self.anchor]
    }

    /// `Δ_j = τ_j − τ_{j−1}` for `j = 2..m`.
    pub fn spacings(&self) -> Vec<f64> {
        self.points.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Points from 0 up to and including the anchor.
    pub fn through_anchor(&self) -> &[f64] {
        &self.points[..=self.anchor]
    }
}

fn checked_event_time(event_time: f64) -> Result<f64> {
    if !event_time.is_finite() || event_time < 0.0 {
        return Err(Error::Input(format!(
            "event time must be finite and nonnegative, got {event_time}"
        )));
    }
    Ok(event_time.max(MIN_EVENT_TIME))
}

fn check_count(m: usize) -> Result<()> {
    if m < 2 {
        return Err(Error::Input(format!("need at least 2 grid points, got {m}")));
    }
    Ok(())
}

/// `m` equally spaced points on `[0, end]`; the last is exactly `end`.
fn uniform(end: f64, m: usize) -> Vec<f64> {
    let last = (m - 1) as f64;
    let mut points: Vec<f64> = (0..m).map(|j| end * (j as f64 / last)).collect();
    points[m - 1] = end;
    points
}

/// Scheme A grid: `m` equally spaced points from 0 to the event time.
pub fn per_sample_grid(event_time: f64, m: usize) -> Result<TimeGrid> {
    check_count(m)?;
    let t = checked_event_time(event_time)?;
    Ok(TimeGrid {
        points: uniform(t, m),
        anchor: m - 1,
    })
}

/// Scheme B grid: `m` equally spaced points on `[0, t_max]` with the event
/// time inserted (or appended, when it lies beyond `t_max`).
pub fn global_grid(event_time: f64, t_max: f64, m: usize) -> Result<TimeGrid> {
    check_count(m)?;
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::Input(format!("t_max must be positive, got {t_max}")));
    }
    let t = checked_event_time(event_time)?;
    let mut points = uniform(t_max, m);
    let tol = MERGE_TOLERANCE * t_max;

    // Index 0 stays pinned at 0.
    if let Some(j) = (1..m).find(|&j| (points[j] - t).abs() <= tol) {
        points[j] = t;
        return Ok(TimeGrid { points, anchor: j });
    }
    let pos = points.partition_point(|&p| p < t);
    points.insert(pos, t);
    Ok(TimeGrid { points, anchor: pos })
}

pub fn grid_for(scheme: Scheme, event_time: f64, t_max: f64, m: usize) -> Result<TimeGrid> {
    match scheme {
        Scheme::PerSample => per_sample_grid(event_time, m),
        Scheme::Global => global_grid(event_time, t_max, m),
    }
}

/// Integration range for [`trapezoid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upto {
    Anchor,
    End,
}

/// `Σ_{j=2..upto} (v_j + v_{j−1}) / 2 · Δ_j`.
pub fn trapezoid(values: &[f64], grid: &TimeGrid, upto: Upto) -> Result<f64> {
    if values.len() != grid.len() {
        return Err(Error::dim(
            "trapezoid",
            format!("{} values for a grid of {} points", values.len(), grid.len()),
        ));
    }
    let end = match upto {
        Upto::Anchor => grid.anchor + 1,
        Upto::End => grid.len(),
    };
    Ok(trapezoid_points(&values[..end], &grid.points[..end]))
}

fn trapezoid_points(values: &[f64], points: &[f64]) -> f64 {
    values
        .windows(2)
        .zip(points.windows(2))
        .map(|(v, t)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum()
}

/// Running trapezoid integral; element `j` integrates over `points[..=j]`.
pub fn cumulative_trapezoid(values: &[f64], points: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), points.len());
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(values.len());
    if !values.is_empty() {
        out.push(0.0);
    }
    for j in 1..values.len() {
        acc += 0.5 * (values[j] + values[j - 1]) * (points[j] - points[j - 1]);
        out.push(acc);
    }
    out
}

/// Per-point weights `w` with `trapezoid = Σ w_j v_j` over `points`.
pub fn trapezoid_weights(points: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; points.len()];
    for j in 1..points.len() {
        let half = 0.5 * (points[j] - points[j - 1]);
        w[j - 1] += half;
        w[j] += half;
    }
    w
}

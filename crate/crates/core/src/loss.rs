//! Continuous-time negative log-likelihood.
//!
//! For samples `(x_i, T_i, k_i)` with `k_i = 0` meaning censored, the loss is
//!
//! ```text
//! L = (1/K) Σ_k (1/n) Σ_i [ ∫₀^{T_i} ĥ_k(s, x_i) ds − 1(k_i = k) · ln ĥ_k(T_i, x_i) ]
//! ```
//!
//! with the integral taken by the trapezoidal rule on each sample's grid.
//! With `K = 1` this is the single-risk likelihood.
//!
//! Training evaluates every (sample, grid point) pair as one row of a
//! flattened forward pass. In that form the loss is linear in the hazard
//! matrix apart from the log of the anchor rows:
//!
//! ```text
//! L = Σ_{r,k} H[r,k] · W[r,k]  −  Σ_{i,k} ln H[anchor_i, k] · M[i,k]
//! ```

use crate::autodiff::{Graph, NodeId};
use crate::discretization::{grid_for, trapezoid, trapezoid_weights, Scheme, TimeGrid, Upto};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One sample's grid and the hazards evaluated on it.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodSample {
    pub grid: TimeGrid,
    /// 0 for censored, otherwise the risk that occurred.
    pub label: usize,
    /// `grid.len() × K` hazards.
    pub hazards: Matrix,
}

fn nll(samples: &[LikelihoodSample], risks: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Input("likelihood of an empty batch".into()));
    }
    let n = samples.len() as f64;
    let mut total = 0.0;
    for k in 0..risks {
        let mut acc = 0.0;
        for (i, s) in samples.iter().enumerate() {
            if s.label > risks {
                return Err(Error::Input(format!(
                    "sample {i} has label {} but K = {risks}",
                    s.label
                )));
            }
            if s.hazards.shape() != (s.grid.len(), risks) {
                return Err(Error::dim(
                    "likelihood hazards",
                    format!(
                        "sample {i}: {:?} for {} grid points and {risks} risks",
                        s.hazards.shape(),
                        s.grid.len()
                    ),
                ));
            }
            let h = s.hazards.column(k);
            acc += trapezoid(&h, &s.grid, Upto::Anchor)?;
            if s.label == k + 1 {
                let at = h[s.grid.anchor()];
                if !(at > 0.0) {
                    return Err(Error::Domain(format!("sample {i}: hazard {at} at the event time")));
                }
                acc -= at.ln();
            }
        }
        total += acc / n;
    }
    Ok(total / risks as f64)
}

/// Mean single-risk negative log-likelihood.
pub fn single_risk_nll(samples: &[LikelihoodSample]) -> Result<f64> {
    nll(samples, 1)
}

/// Competing-risk negative log-likelihood averaged over `risks`.
pub fn multi_risk_nll(samples: &[LikelihoodSample], risks: usize) -> Result<f64> {
    if risks == 0 {
        return Err(Error::Input("K must be at least 1".into()));
    }
    nll(samples, risks)
}

/// A batch flattened into `(x, t)` rows together with the loss constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatBatch {
    /// `n × a` covariates, one row per sample in batch order.
    pub x: Matrix,
    /// Sample (row of `x`) behind each flattened row.
    pub expand: Vec<usize>,
    pub t: Vec<f64>,
    /// `rows × K` trapezoid weights divided by `n·K`.
    pub weights: Matrix,
    /// Row holding each sample's anchor.
    pub anchor_rows: Vec<usize>,
    /// `n × K` event indicators divided by `n·K`.
    pub mask: Matrix,
}

impl FlatBatch {
    pub fn samples(&self) -> usize {
        self.anchor_rows.len()
    }
}

/// Grid settings shared by every sample of a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub scheme: Scheme,
    pub m: usize,
    /// End of the shared grid; used by [`Scheme::Global`] only.
    pub t_max: f64,
}

/// Builds the flattened rows for samples `rows` of `(x, times, labels)`.
/// Only grid points up to each anchor are emitted; later points carry no
/// weight.
pub fn flatten_batch(
    x: &Matrix,
    times: &[f64],
    labels: &[usize],
    rows: &[usize],
    risks: usize,
    spec: GridSpec,
) -> Result<FlatBatch> {
    if rows.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let n = rows.len();
    let scale = 1.0 / (n * risks) as f64;
    let mut idx = Vec::with_capacity(n * spec.m);
    let mut t = Vec::with_capacity(n * spec.m);
    let mut weights = Vec::with_capacity(n * spec.m * risks);
    let mut anchor_rows = Vec::with_capacity(n);
    let mut mask = Matrix::zeros(n, risks);
    for (b, &i) in rows.iter().enumerate() {
        let label = labels[i];
        if label > risks {
            return Err(Error::Input(format!("sample {i} has label {label} but K = {risks}")));
        }
        let grid = grid_for(spec.scheme, times[i], spec.t_max, spec.m)?;
        let points = grid.through_anchor();
        for (&p, w) in points.iter().zip(trapezoid_weights(points)) {
            idx.push(b);
            t.push(p);
            weights.extend(std::iter::repeat_n(w * scale, risks));
        }
        anchor_rows.push(t.len() - 1);
        if label > 0 {
            mask.set(b, label - 1, scale);
        }
    }
    let count = t.len();
    Ok(FlatBatch {
        x: x.select_rows(rows),
        expand: idx,
        t,
        weights: Matrix::from_vec(count, risks, weights)?,
        anchor_rows,
        mask,
    })
}

/// Appends the loss to a graph whose node `hazards` is the `rows × K`
/// output for `batch`. Returns the scalar loss node.
pub fn build_loss(g: &mut Graph, hazards: NodeId, batch: &FlatBatch) -> NodeId {
    let w = g.constant(batch.weights.clone());
    let weighted = g.mul(hazards, w);
    let integral = g.sum(weighted);
    let at_anchor = g.gather_rows(hazards, batch.anchor_rows.clone());
    let logs = g.ln(at_anchor);
    let mask = g.constant(batch.mask.clone());
    let picked = g.mul(logs, mask);
    let log_term = g.sum(picked);
    let neg = g.neg(log_term);
    g.add(integral, neg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Inputs, ParamSet};

    fn sample(points: Vec<f64>, label: usize, h: Vec<Vec<f64>>) -> LikelihoodSample {
        let anchor = points.len() - 1;
        LikelihoodSample {
            grid: TimeGrid::new(points, anchor).unwrap(),
            label,
            hazards: Matrix::from_rows(&h).unwrap(),
        }
    }

    #[test]
    fn single_risk_examples() {
        let s = sample(vec![0.0, 0.5, 1.0], 1, vec![vec![0.2], vec![0.4], vec![0.8]]);
        let v = single_risk_nll(std::slice::from_ref(&s)).unwrap();
        assert!((v - (0.45 - 0.8f64.ln())).abs() < 1e-15);
        assert!((v - 0.6731).abs() < 1e-4);

        let c = LikelihoodSample { label: 0, ..s };
        assert!((single_risk_nll(&[c]).unwrap() - 0.45).abs() < 1e-15);

        let u = sample(vec![0.0, 1.0], 1, vec![vec![1.0], vec![1.0]]);
        assert_eq!(single_risk_nll(&[u]).unwrap(), 1.0);
    }

    #[test]
    fn multi_risk_structure() {
        // risk 1 gets log h1(anchor); risk 2 integral only
        let s = sample(vec![0.0, 1.0], 1, vec![vec![0.5, 0.3], vec![0.7, 0.2]]);
        let v = multi_risk_nll(&[s], 2).unwrap();
        let want = ((0.6 - 0.7f64.ln()) + 0.25) / 2.0;
        assert!((v - want).abs() < 1e-15);

        let a = sample(vec![0.0, 2.0], 0, vec![vec![0.5, 0.3], vec![0.7, 0.2]]);
        let b = sample(vec![0.0, 1.0], 0, vec![vec![0.1, 0.1], vec![0.3, 0.5]]);
        let v = multi_risk_nll(&[a, b], 2).unwrap();
        let want = ((1.2 + 0.2) / 2.0 + (0.5 + 0.3) / 2.0) / 2.0;
        assert!((v - want).abs() < 1e-15);
    }

    #[test]
    fn symmetric_batch_has_equal_risk_terms() {
        let h = vec![vec![0.4, 0.4], vec![0.9, 0.9]];
        let a = sample(vec![0.0, 1.5], 1, h.clone());
        let b = sample(vec![0.0, 1.5], 2, h);
        // Per-risk term k: mean over samples of integral minus indicator log.
        let term = |k: usize| {
            [&a, &b]
                .iter()
                .map(|s| {
                    let col = s.hazards.column(k);
                    let integral = trapezoid(&col, &s.grid, Upto::Anchor).unwrap();
                    integral - if s.label == k + 1 { col[1].ln() } else { 0.0 }
                })
                .sum::<f64>()
                / 2.0
        };
        let (t0, t1) = (term(0), term(1));
        assert_eq!(t0, t1);
        let v = multi_risk_nll(&[a, b], 2).unwrap();
        assert!((v - t0).abs() < 1e-15);
    }

    #[test]
    fn k1_multi_equals_single() {
        let s = sample(vec![0.0, 0.3, 0.9], 1, vec![vec![0.2], vec![0.5], vec![0.1]]);
        let c = sample(vec![0.0, 2.0], 0, vec![vec![0.7], vec![0.9]]);
        let batch = [s, c];
        assert_eq!(single_risk_nll(&batch).unwrap(), multi_risk_nll(&batch, 1).unwrap());
    }

    #[test]
    fn label_out_of_range() {
        let s = sample(vec![0.0, 1.0], 3, vec![vec![0.5, 0.3], vec![0.7, 0.2]]);
        assert!(matches!(multi_risk_nll(&[s], 2), Err(Error::Input(_))));
    }

    #[test]
    fn time_rescaling_moves_only_the_log_term() {
        let c = 2.5;
        let pts = vec![0.0, 0.2, 0.7, 1.1];
        let h = vec![vec![0.3], vec![0.6], vec![0.2], vec![0.9]];
        let s = sample(pts.clone(), 1, h.clone());
        let scaled = sample(
            pts.iter().map(|p| p * c).collect(),
            1,
            h.iter().map(|r| vec![r[0] / c]).collect(),
        );
        let a = single_risk_nll(&[s]).unwrap();
        let b = single_risk_nll(&[scaled]).unwrap();
        assert!((b - (a + c.ln())).abs() < 1e-12);
    }

    #[test]
    fn graph_loss_matches_plain_value() {
        let x = Matrix::from_rows(&[[0.0], [0.0], [0.0]]).unwrap();
        let times = [1.0, 0.4, 2.0];
        let labels = [2, 0, 1];
        let spec = GridSpec {
            scheme: Scheme::Global,
            m: 5,
            t_max: 2.0,
        };
        let batch = flatten_batch(&x, &times, &labels, &[0, 1, 2], 2, spec).unwrap();
        // Stub hazards h_k(t) = (k + 1) · (0.5 + t).
        let hz = |t: f64, k: usize| (k as f64 + 1.0) * (0.5 + t);
        let mut h = Matrix::zeros(batch.t.len(), 2);
        for (r, &t) in batch.t.iter().enumerate() {
            for k in 0..2 {
                h.set(r, k, hz(t, k));
            }
        }
        let mut g = Graph::new();
        let hn = g.input("h");
        let loss = build_loss(&mut g, hn, &batch);
        g.set_root(loss);
        let mut inputs = Inputs::new();
        inputs.bind("h", h);
        let got = g.forward(&ParamSet::new(), &inputs).unwrap().as_scalar().unwrap();

        let samples: Vec<_> = (0..3)
            .map(|i| {
                let grid = grid_for(Scheme::Global, times[i], 2.0, 5).unwrap();
                let mut hm = Matrix::zeros(grid.len(), 2);
                for (j, &p) in grid.points().iter().enumerate() {
                    for k in 0..2 {
                        hm.set(j, k, hz(p, k));
                    }
                }
                LikelihoodSample {
                    grid,
                    label: labels[i],
                    hazards: hm,
                }
            })
            .collect();
        let want = multi_risk_nll(&samples, 2).unwrap();
        assert!((got - want).abs() < 1e-14, "{got} {want}");
    }

    #[test]
    fn per_sample_flat_rows() {
        let x = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        let spec = GridSpec {
            scheme: Scheme::PerSample,
            m: 4,
            t_max: 0.0,
        };
        let b = flatten_batch(&x, &[3.0, 1.5], &[1, 0], &[1, 0], 1, spec).unwrap();
        assert_eq!(b.t.len(), 8);
        assert_eq!(b.anchor_rows, vec![3, 7]);
        assert_eq!(b.t[3], 1.5);
        assert_eq!(b.x.get(0, 0), 2.0);
        assert_eq!(b.expand, vec![0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(b.mask.data(), &[0.0, 0.5]);
    }
}

//! The hazard network and continuous-time curve prediction.
//!
//! The network maps a covariate vector `x` and a time `t` to `K` strictly
//! positive hazards:
//!
//! ```text
//! e   = encode(t)                       raw | positional | time2vec
//! u   = [x, e]
//! h1  = relu(bn1(W1 u + b1))
//! h2  = relu(bn2(W2 [h1, u] + b2))      residual concatenation of the input
//! out = softplus(W3 h2 + b3)            one hazard per risk
//! ```
//!
//! Survival and cumulative incidence curves integrate these hazards with
//! the trapezoidal rule over a caller-supplied time mesh.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Inputs, NodeId, NormMode, ParamId, ParamSet};
use crate::data::PreprocessStats;
use crate::discretization::cumulative_trapezoid;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Batch-norm running statistics keep this fraction of their old value.
pub const NORM_MOMENTUM: f64 = 0.9;

/// Rows per forward pass when evaluating large inputs in inference mode.
const INFERENCE_CHUNK: usize = 32_768;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoder {
    /// Time used as-is (width 1).
    Raw,
    /// Fixed sinusoidal features at geometric frequencies.
    #[serde(alias = "pe")]
    Positional,
    /// Learned: one linear element followed by sines.
    #[serde(alias = "t2v")]
    Time2Vec,
}

impl fmt::Display for Encoder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoder::Raw => "raw",
            Encoder::Positional => "pe",
            Encoder::Time2Vec => "t2v",
        })
    }
}

impl FromStr for Encoder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" | "woe" => Ok(Encoder::Raw),
            "pe" | "positional" => Ok(Encoder::Positional),
            "t2v" | "time2vec" => Ok(Encoder::Time2Vec),
            other => Err(Error::Input(format!(
                "unknown time encoder `{other}` (expected raw, pe or t2v)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    /// Covariate dimension `a`.
    pub covariates: usize,
    /// Time embedding width `b` (ignored by the raw encoder).
    pub embed_dim: usize,
    pub hidden: [usize; 2],
    /// Number of competing risks `K`.
    pub risks: usize,
    pub encoder: Encoder,
}

impl Architecture {
    pub fn time_width(&self) -> usize {
        match self.encoder {
            Encoder::Raw => 1,
            _ => self.embed_dim,
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.risks == 0 {
            problems.push("risks must be at least 1".to_string());
        }
        if self.encoder != Encoder::Raw && self.embed_dim == 0 {
            problems.push("embed_dim must be positive for pe/t2v encoders".to_string());
        }
        if self.hidden.contains(&0) {
            problems.push("hidden sizes must be positive".to_string());
        }
        problems
    }
}

/// Frequency and phase of every positional-encoding element:
/// element `2i` is `sin(t / 10000^(2i/b))`, element `2i+1` the cosine.
fn positional_terms(b: usize) -> (Vec<f64>, Vec<f64>) {
    (0..b)
        .map(|j| {
            let i = (j / 2) as f64;
            let freq = 1.0 / 10000f64.powf(2.0 * i / b as f64);
            let phase = if j % 2 == 0 { 0.0 } else { FRAC_PI_2 };
            (freq, phase)
        })
        .unzip()
}

/// Parameters of the learned time embedding.
#[derive(Debug, Clone, Copy)]
pub struct Time2VecParams<'a> {
    pub omega: &'a [f64],
    pub phi: &'a [f64],
}

/// Time features for a single `t`.
pub fn encode_time(t: f64, encoder: Encoder, embed_dim: usize, t2v: Option<Time2VecParams<'_>>) -> Result<Vec<f64>> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("time must be finite and nonnegative, got {t}")));
    }
    match encoder {
        Encoder::Raw => Ok(vec![t]),
        Encoder::Positional => {
            let (freq, phase) = positional_terms(embed_dim);
            Ok(freq.iter().zip(&phase).map(|(f, p)| (t * f + p).sin()).collect())
        }
        Encoder::Time2Vec => {
            let p = t2v.ok_or_else(|| Error::Input("time2vec encoding needs omega and phi".into()))?;
            if p.omega.len() != embed_dim || p.phi.len() != embed_dim {
                return Err(Error::dim(
                    "time2vec",
                    format!(
                        "omega/phi lengths {}/{} for width {embed_dim}",
                        p.omega.len(),
                        p.phi.len()
                    ),
                ));
            }
            Ok(p.omega
                .iter()
                .zip(p.phi)
                .enumerate()
                .map(|(i, (w, f))| {
                    let z = w * t + f;
                    if i == 0 {
                        z
                    } else {
                        z.sin()
                    }
                })
                .collect())
        }
    }
}

/// Anything that produces per-risk hazards for `(x, t)` rows.
pub trait HazardModel {
    fn risks(&self) -> usize;

    fn covariate_dim(&self) -> usize;

    /// Hazards for row `i` of `x` at time `t[i]`, as a `rows × risks` matrix.
    fn hazards(&self, x: &Matrix, t: &[f64]) -> Result<Matrix>;

    /// Hazards for row `rows[r]` of `x` at time `t[r]`.
    fn hazards_expanded(&self, x: &Matrix, rows: &[usize], t: &[f64]) -> Result<Matrix> {
        self.hazards(&x.select_rows(rows), t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    fn new(width: usize) -> Self {
        RunningStats {
            mean: vec![0.0; width],
            var: vec![1.0; width],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ParamIds {
    omega: Option<ParamId>,
    phi: Option<ParamId>,
    w1: ParamId,
    b1: ParamId,
    gamma1: ParamId,
    beta1: ParamId,
    w2: ParamId,
    b2: ParamId,
    gamma2: ParamId,
    beta2: ParamId,
    w3: ParamId,
    b3: ParamId,
}

/// Graph handles produced by [`HazardNetwork::build`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    /// `rows × K` hazards.
    pub hazards: NodeId,
    /// `rows × time_width` time encoding.
    pub encoded: NodeId,
    norms: [NodeId; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HazardNetwork {
    arch: Architecture,
    params: ParamSet,
    ids: ParamIds,
    norm_stats: [RunningStats; 2],
}

fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

impl HazardNetwork {
    /// Freshly initialized network: linear layers uniform in `±1/√fan_in`,
    /// time2vec frequencies uniform in `[0, 1)` with zero phases, batch-norm
    /// scale 1 and shift 0.
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Result<Self> {
        let problems = arch.validate();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let mut params = ParamSet::new();
        let (a, e, [h1, h2], k) = (arch.covariates, arch.time_width(), arch.hidden, arch.risks);

        let (omega, phi) = if arch.encoder == Encoder::Time2Vec {
            let w = (0..e).map(|_| rng.random_range(0.0..1.0)).collect();
            (
                Some(params.insert("time2vec.omega", Matrix::column_vector(w))?),
                Some(params.insert("time2vec.phi", Matrix::zeros(1, e))?),
            )
        } else {
            (None, None)
        };

        let mut linear = |params: &mut ParamSet, name: &str, out: usize, fan_in: usize| -> Result<(ParamId, ParamId)> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = params.insert(format!("{name}.weight"), uniform_matrix(out, fan_in, bound, rng))?;
            let b = params.insert(format!("{name}.bias"), uniform_matrix(1, out, bound, rng))?;
            Ok((w, b))
        };
        let norm = |params: &mut ParamSet, name: &str, width: usize| -> Result<(ParamId, ParamId)> {
            Ok((
                params.insert(format!("{name}.gamma"), Matrix::filled(1, width, 1.0))?,
                params.insert(format!("{name}.beta"), Matrix::zeros(1, width))?,
            ))
        };

        let (w1, b1) = linear(&mut params, "layer1", h1, a + e)?;
        let (gamma1, beta1) = norm(&mut params, "norm1", h1)?;
        let (w2, b2) = linear(&mut params, "layer2", h2, h1 + a + e)?;
        let (gamma2, beta2) = norm(&mut params, "norm2", h2)?;
        let (w3, b3) = linear(&mut params, "head", k, h2)?;

        Ok(HazardNetwork {
            arch,
            params,
            ids: ParamIds {
                omega,
                phi,
                w1,
                b1,
                gamma1,
                beta1,
                w2,
                b2,
                gamma2,
                beta2,
                w3,
                b3,
            },
            norm_stats: [RunningStats::new(h1), RunningStats::new(h2)],
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats; 2] {
        &self.norm_stats
    }

    fn time2vec(&self) -> Option<Time2VecParams<'_>> {
        Some(Time2VecParams {
            omega: self.params.value(self.ids.omega?).data(),
            phi: self.params.value(self.ids.phi?).data(),
        })
    }

    /// Time features of this network's encoder.
    pub fn encode_time(&self, t: f64) -> Result<Vec<f64>> {
        encode_time(t, self.arch.encoder, self.arch.embed_dim, self.time2vec())
    }

    /// Records the forward computation for times `t` (`rows × 1`).
    ///
    /// `x` holds covariates. With `expand = None` it has one row per time;
    /// otherwise it has one row per sample and `expand[r]` is the sample of
    /// row `r`. The covariate products are then formed once per sample and
    /// repeated, which is much cheaper when each sample has many time points.
    /// Training mode normalizes with batch statistics.
    pub fn build(
        &self,
        g: &mut Graph,
        x: NodeId,
        expand: Option<Vec<usize>>,
        t: NodeId,
        training: bool,
    ) -> ForwardNodes {
        let ids = &self.ids;
        let b = self.arch.embed_dim;
        let a = self.arch.covariates;
        let tw = self.arch.time_width();
        let encoded = match self.arch.encoder {
            Encoder::Raw => t,
            Encoder::Positional => {
                let (freq, phase) = positional_terms(b);
                let f = g.constant(Matrix::column_vector(freq));
                let p = g.constant(Matrix::row_vector(phase));
                let z = g.linear(t, f);
                let z = g.add(z, p);
                g.sin(z)
            }
            Encoder::Time2Vec => {
                let omega = g.param(ids.omega.expect("time2vec params"));
                let phi = g.param(ids.phi.expect("time2vec params"));
                let z = g.linear(t, omega);
                let z = g.add(z, phi);
                if b == 1 {
                    z
                } else {
                    let lin = g.slice_cols(z, 0, 1);
                    let per = g.slice_cols(z, 1, b);
                    let per = g.sin(per);
                    g.concat(&[lin, per])
                }
            }
        };

        let mode = |i: usize| {
            if training {
                NormMode::Train
            } else {
                NormMode::Inference {
                    mean: self.norm_stats[i].mean.clone(),
                    var: self.norm_stats[i].var.clone(),
                }
            }
        };
        // `parts` pairs each input block with the weight columns it meets;
        // the covariate block is multiplied before expansion.
        let dense = |g: &mut Graph, parts: &[(NodeId, usize, usize, bool)], w: ParamId, bias: ParamId| {
            let wn = g.param(w);
            let mut acc = g.param(bias);
            for &(inp, start, end, per_sample) in parts {
                let ws = g.slice_cols(wn, start, end);
                let mut z = g.linear(inp, ws);
                if per_sample {
                    if let Some(rows) = &expand {
                        z = g.gather_rows(z, rows.clone());
                    }
                }
                acc = g.add(z, acc);
            }
            acc
        };

        let mut first = Vec::new();
        if a > 0 {
            first.push((x, 0, a, true));
        }
        first.push((encoded, a, a + tw, false));
        let z1 = dense(g, &first, ids.w1, ids.b1);
        let (g1, be1) = (g.param(ids.gamma1), g.param(ids.beta1));
        let n1 = g.batch_norm(z1, g1, be1, mode(0));
        let h1 = g.relu(n1);

        // the second layer sees [h1, x, encoded]
        let h = self.arch.hidden[0];
        let second: Vec<_> = std::iter::once((h1, 0, h, false))
            .chain(first.iter().map(|&(n, s, e, p)| (n, s + h, e + h, p)))
            .collect();
        let z2 = dense(g, &second, ids.w2, ids.b2);
        let (g2, be2) = (g.param(ids.gamma2), g.param(ids.beta2));
        let n2 = g.batch_norm(z2, g2, be2, mode(1));
        let h2 = g.relu(n2);

        let out = dense(g, &[(h2, 0, self.arch.hidden[1], false)], ids.w3, ids.b3);
        let hazards = g.softplus(out);
        ForwardNodes {
            hazards,
            encoded,
            norms: [n1, n2],
        }
    }

    /// Folds the batch statistics of a training-mode forward pass into the
    /// running statistics.
    pub fn update_running_stats(&mut self, g: &Graph, fwd: &ForwardNodes) {
        for (stats, node) in self.norm_stats.iter_mut().zip(fwd.norms) {
            let Some((mean, var)) = g.batch_statistics(node) else {
                continue;
            };
            let rows = g.value(node).map_or(1, |v| v.rows());
            let unbias = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
            for (s, m) in stats.mean.iter_mut().zip(mean) {
                *s = NORM_MOMENTUM * *s + (1.0 - NORM_MOMENTUM) * m;
            }
            for (s, v) in stats.var.iter_mut().zip(var) {
                *s = NORM_MOMENTUM * *s + (1.0 - NORM_MOMENTUM) * v * unbias;
            }
        }
    }

    fn check_rows(&self, x: &Matrix, t: &[f64]) -> Result<()> {
        if x.cols() != self.arch.covariates {
            return Err(Error::dim(
                "hazard network input",
                format!("{} covariates, network expects {}", x.cols(), self.arch.covariates),
            ));
        }
        if x.rows() != t.len() {
            return Err(Error::dim(
                "hazard network input",
                format!("{} covariate rows for {} times", x.rows(), t.len()),
            ));
        }
        if let Some(bad) = t.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("time must be finite and nonnegative, got {bad}")));
        }
        Ok(())
    }

    fn evaluate(&self, x: Matrix, expand: Option<Vec<usize>>, t: Vec<f64>, training: bool) -> Result<Matrix> {
        let mut g = Graph::new();
        let xn = g.input("x");
        let tn = g.input("t");
        let fwd = self.build(&mut g, xn, expand, tn, training);
        g.set_root(fwd.hazards);
        let mut inputs = Inputs::new();
        inputs.bind("x", x).bind("t", Matrix::column_vector(t));
        Ok(g.forward(&self.params, &inputs)?.clone())
    }

    /// Hazards for a single `(x, t)`. In training mode a lone row is
    /// normalized by its own statistics.
    pub fn forward_hazard(&self, x: &[f64], t: f64, training: bool) -> Result<Vec<f64>> {
        let xm = Matrix::row_vector(x.to_vec());
        self.check_rows(&xm, &[t])?;
        Ok(self.evaluate(xm, None, vec![t], training)?.into_data())
    }

    /// Training-mode hazards for a batch (statistics taken over the batch).
    pub fn hazards_training(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        self.check_rows(x, t)?;
        self.evaluate(x.clone(), None, t.to_vec(), true)
    }

    pub fn to_checkpoint(&self, preprocess: Option<PreprocessStats>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            architecture: self.arch.clone(),
            parameters: self
                .params
                .iter()
                .map(|p| TensorRecord {
                    name: p.name().to_string(),
                    shape: [p.value().rows(), p.value().cols()],
                    data: p.value().data().to_vec(),
                })
                .collect(),
            running_stats: self.norm_stats.to_vec(),
            preprocess,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {} v{}",
                ck.format, ck.version
            )));
        }
        // Rebuild the layout, then overwrite every tensor.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = HazardNetwork::new(ck.architecture.clone(), &mut rng)?;
        if ck.parameters.len() != net.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                ck.parameters.len(),
                net.params.len()
            )));
        }
        for rec in &ck.parameters {
            let id = net
                .params
                .id(&rec.name)
                .ok_or_else(|| Error::Format(format!("unexpected tensor `{}`", rec.name)))?;
            let m = Matrix::from_vec(rec.shape[0], rec.shape[1], rec.data.clone())?;
            net.params.set_value(id, m)?;
        }
        if ck.running_stats.len() != 2 {
            return Err(Error::Format("checkpoint needs two running-stat records".into()));
        }
        for (slot, rec) in net.norm_stats.iter_mut().zip(&ck.running_stats) {
            if rec.mean.len() != slot.mean.len() || rec.var.len() != slot.var.len() {
                return Err(Error::Format("running statistics have the wrong width".into()));
            }
            *slot = rec.clone();
        }
        Ok(net)
    }
}

impl HazardModel for HazardNetwork {
    fn risks(&self) -> usize {
        self.arch.risks
    }

    fn covariate_dim(&self) -> usize {
        self.arch.covariates
    }

    /// Inference-mode hazards, evaluated in chunks.
    fn hazards(&self, x: &Matrix, t: &[f64]) -> Result<Matrix> {
        self.check_rows(x, t)?;
        if x.rows() <= INFERENCE_CHUNK {
            return self.evaluate(x.clone(), None, t.to_vec(), false);
        }
        let mut data = Vec::with_capacity(x.rows() * self.arch.risks);
        let idx: Vec<usize> = (0..x.rows()).collect();
        for chunk in idx.chunks(INFERENCE_CHUNK) {
            let xs = x.select_rows(chunk);
            let ts = chunk.iter().map(|&i| t[i]).collect();
            data.extend(self.evaluate(xs, None, ts, false)?.into_data());
        }
        Matrix::from_vec(x.rows(), self.arch.risks, data)
    }

    fn hazards_expanded(&self, x: &Matrix, rows: &[usize], t: &[f64]) -> Result<Matrix> {
        if x.cols() != self.arch.covariates {
            return Err(Error::dim(
                "hazard network input",
                format!("{} covariates, network expects {}", x.cols(), self.arch.covariates),
            ));
        }
        if rows.len() != t.len() {
            return Err(Error::dim(
                "hazard network input",
                format!("{} row indices for {} times", rows.len(), t.len()),
            ));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
            return Err(Error::dim("hazard network input", format!("row {bad} of {}", x.rows())));
        }
        if let Some(bad) = t.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!("time must be finite and nonnegative, got {bad}")));
        }
        self.evaluate(x.clone(), Some(rows.to_vec()), t.to_vec(), false)
    }
}

pub const CHECKPOINT_FORMAT: &str = "contsurv-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major tensor with an explicit `[rows, cols]` shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// JSON model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub architecture: Architecture,
    pub parameters: Vec<TensorRecord>,
    pub running_stats: Vec<RunningStats>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessStats>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub cumulative_hazard: Vec<f64>,
    pub survival: Vec<f64>,
}

/// Per-risk cumulative incidence with the overall survival it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct CifCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    /// `incidence[k][j]` is `F_{k+1}(times[j])`.
    pub incidence: Vec<Vec<f64>>,
}

pub fn validate_mesh(mesh: &[f64]) -> Result<()> {
    if mesh.first() != Some(&0.0) {
        return Err(Error::Input("prediction mesh must start at 0".into()));
    }
    if let Some(w) = mesh.windows(2).find(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
        return Err(Error::Input(format!(
            "prediction mesh must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Hazards on `mesh` for every row of `xs`: `out[i]` is `mesh.len() × K`.
fn mesh_hazards(model: &impl HazardModel, xs: &Matrix, mesh: &[f64]) -> Result<Vec<Matrix>> {
    validate_mesh(mesh)?;
    if xs.cols() != model.covariate_dim() {
        return Err(Error::Input(format!(
            "{} covariates given, model expects {}",
            xs.cols(),
            model.covariate_dim()
        )));
    }
    let m = mesh.len();
    let k = model.risks();
    let per_chunk = (INFERENCE_CHUNK / m).max(1);
    let mut out = Vec::with_capacity(xs.rows());
    let rows: Vec<usize> = (0..xs.rows()).collect();
    for chunk in rows.chunks(per_chunk) {
        let x = xs.select_rows(chunk);
        let idx: Vec<usize> = (0..chunk.len()).flat_map(|c| std::iter::repeat_n(c, m)).collect();
        let t: Vec<f64> = chunk.iter().flat_map(|_| mesh.iter().copied()).collect();
        let h = model.hazards_expanded(&x, &idx, &t)?;
        if h.shape() != (idx.len(), k) {
            return Err(Error::dim("hazard model output", format!("got {:?}", h.shape())));
        }
        for (c, _) in chunk.iter().enumerate() {
            let rows: Vec<usize> = (c * m..(c + 1) * m).collect();
            out.push(h.select_rows(&rows));
        }
    }
    Ok(out)
}

fn survival_from(h: &Matrix, mesh: &[f64]) -> SurvivalCurve {
    let total: Vec<f64> = (0..h.rows()).map(|j| h.row(j).iter().sum()).collect();
    let cumulative_hazard = cumulative_trapezoid(&total, mesh);
    let survival = cumulative_hazard.iter().map(|c| (-c).exp()).collect();
    SurvivalCurve {
        times: mesh.to_vec(),
        cumulative_hazard,
        survival,
    }
}

/// Splits each interval's survival drop `S(τ_{j−1}) − S(τ_j)` across risks
/// in proportion to their trapezoid hazard increments, so that
/// `Σ_k F_k + S = 1` holds at every mesh point.
fn cif_from(h: &Matrix, mesh: &[f64]) -> CifCurve {
    let surv = survival_from(h, mesh);
    let k = h.cols();
    let mut incidence = vec![vec![0.0; mesh.len()]; k];
    let mut inc = vec![0.0; k];
    for j in 1..mesh.len() {
        let dt = mesh[j] - mesh[j - 1];
        let mut total = 0.0;
        for (r, d) in inc.iter_mut().enumerate() {
            *d = 0.5 * (h.get(j, r) + h.get(j - 1, r)) * dt;
            total += *d;
        }
        let drop = surv.survival[j - 1] * -(-total).exp_m1();
        for (r, d) in inc.iter().enumerate() {
            let share = if total > 0.0 { drop * d / total } else { 0.0 };
            incidence[r][j] = incidence[r][j - 1] + share;
        }
    }
    CifCurve {
        times: surv.times,
        survival: surv.survival,
        incidence,
    }
}

/// Survival `S(t) = exp(−∫₀ᵗ Σ_k h_k)` on `mesh` (which must start at 0).
pub fn predict_survival_curve(model: &impl HazardModel, x: &[f64], mesh: &[f64]) -> Result<SurvivalCurve> {
    let xs = Matrix::row_vector(x.to_vec());
    let h = mesh_hazards(model, &xs, mesh)?;
    Ok(survival_from(&h[0], mesh))
}

pub fn predict_cif(model: &impl HazardModel, x: &[f64], mesh: &[f64]) -> Result<CifCurve> {
    let xs = Matrix::row_vector(x.to_vec());
    let h = mesh_hazards(model, &xs, mesh)?;
    Ok(cif_from(&h[0], mesh))
}

/// Cumulative incidence curves for every row of `xs`.
pub fn predict_cif_batch(model: &impl HazardModel, xs: &Matrix, mesh: &[f64]) -> Result<Vec<CifCurve>> {
    Ok(mesh_hazards(model, xs, mesh)?
        .iter()
        .map(|h| cif_from(h, mesh))
        .collect())
}

//! Acceptance criteria, one pass/fail line each.
//!
//! Criteria that need full-size training runs (tens of minutes to hours on
//! one core) only run when `CONTSURV_FULL_ACCEPTANCE=1`; otherwise they print
//! SKIP. Everything else always runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use contsurv::autodiff::{Graph, Inputs};
use contsurv::discretization::{grid_for, trapezoid, Scheme, TimeGrid, Upto};
use contsurv::loss::{build_loss, flatten_batch, multi_risk_nll, GridSpec, LikelihoodSample};
use contsurv::matrix::Matrix;
use contsurv::metrics::{brier_ipcw, ctd_ipcw, km_censoring, plain_brier, plain_cindex, CensoringEstimate};
use contsurv::model::{Architecture, Encoder, HazardNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FULL_ENV: &str = "CONTSURV_FULL_ACCEPTANCE";

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn full_runs() -> bool {
    std::env::var(FULL_ENV).is_ok_and(|v| v == "1")
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

// ---------------------------------------------------------------- criterion 1

/// Loss computed from the network's hazards with the scalar likelihood code,
/// independent of the graph's loss nodes.
fn reference_loss(net: &HazardNetwork, x: &Matrix, times: &[f64], labels: &[usize], spec: GridSpec) -> f64 {
    let risks = net.architecture().risks;
    let mut rows = Vec::new();
    let mut t = Vec::new();
    let mut grids = Vec::new();
    for (i, &ti) in times.iter().enumerate() {
        let grid = grid_for(spec.scheme, ti, spec.t_max, spec.m).unwrap();
        let pts = grid.through_anchor().to_vec();
        for &p in &pts {
            rows.push(i);
            t.push(p);
        }
        let anchor = pts.len() - 1;
        grids.push(TimeGrid::new(pts, anchor).unwrap());
    }
    let h = net.hazards_training(&x.select_rows(&rows), &t).unwrap();
    let mut start = 0;
    let samples: Vec<LikelihoodSample> = grids
        .into_iter()
        .zip(labels)
        .map(|(grid, &label)| {
            let idx: Vec<usize> = (start..start + grid.len()).collect();
            start += grid.len();
            LikelihoodSample {
                hazards: h.select_rows(&idx),
                grid,
                label,
            }
        })
        .collect();
    multi_risk_nll(&samples, risks).unwrap()
}

fn graph_gradients(
    net: &mut HazardNetwork,
    x: &Matrix,
    times: &[f64],
    labels: &[usize],
    spec: GridSpec,
) -> Vec<Matrix> {
    let risks = net.architecture().risks;
    let rows: Vec<usize> = (0..times.len()).collect();
    let batch = flatten_batch(x, times, labels, &rows, risks, spec).unwrap();
    let mut g = Graph::new();
    let xn = g.input("x");
    let tn = g.input("t");
    let fwd = net.build(&mut g, xn, Some(batch.expand.clone()), tn, true);
    let loss = build_loss(&mut g, fwd.hazards, &batch);
    g.set_root(loss);
    let mut inputs = Inputs::new();
    inputs
        .bind("x", batch.x.clone())
        .bind("t", Matrix::column_vector(batch.t.clone()));
    g.forward(net.params(), &inputs).unwrap();
    net.params_mut().zero_grad();
    g.backward(net.params_mut()).unwrap();
    net.params().iter().map(|p| p.grad().clone()).collect()
}

/// Gradient elements at least this large are compared by relative error.
/// Smaller ones sit near the finite-difference noise floor (about 1e-9 for a
/// loss of order one and a 1e-6 step) and are compared absolutely.
const RELATIVE_FLOOR: f64 = 1e-4;
const ABSOLUTE_TOL: f64 = 1e-8;

/// Largest relative error (elements above [`RELATIVE_FLOOR`]) and largest
/// absolute error (the rest) between graph gradients and central
/// differences of the reference loss, over every parameter element.
fn gradient_error(arch: Architecture, scheme: Scheme, m: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = HazardNetwork::new(arch.clone(), &mut rng).unwrap();
    let n = 8;
    let x = Matrix::from_vec(
        n,
        arch.covariates,
        (0..n * arch.covariates).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..=arch.risks)).collect();
    labels[0] = 1;
    let spec = GridSpec { scheme, m, t_max: 2.0 };

    let grads = graph_gradients(&mut net, &x, &times, &labels, spec);
    let ids: Vec<_> = net.params().ids().collect();
    // small enough that the step rarely straddles a ReLU kink
    let h = 1e-6;
    let (mut rel, mut abs): (f64, f64) = (0.0, 0.0);
    for (id, grad) in ids.into_iter().zip(grads) {
        for e in 0..grad.len() {
            let orig = net.params().value(id).data()[e];
            let mut at = |delta: f64| {
                net.params_mut().value_mut(id).data_mut()[e] = orig + delta;
                reference_loss(&net, &x, &times, &labels, spec)
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            net.params_mut().value_mut(id).data_mut()[e] = orig;
            let an = grad.data()[e];
            let scale = an.abs().max(fd.abs());
            if scale >= RELATIVE_FLOOR {
                rel = rel.max((an - fd).abs() / scale);
            } else {
                abs = abs.max((an - fd).abs());
            }
        }
    }
    (rel, abs)
}

fn criterion_gradients() -> Verdict {
    let start = Instant::now();
    let (mut rel, mut abs): (f64, f64) = (0.0, 0.0);
    let mut cases = 0;
    for (risks, covariates) in [(1, 10), (2, 20)] {
        for encoder in [Encoder::Raw, Encoder::Positional, Encoder::Time2Vec] {
            for scheme in [Scheme::PerSample, Scheme::Global] {
                let arch = Architecture {
                    covariates,
                    embed_dim: 4,
                    hidden: [8, 8],
                    risks,
                    encoder,
                };
                let (r, a) = gradient_error(arch, scheme, 5, 100 + cases);
                (rel, abs) = (rel.max(r), abs.max(a));
                cases += 1;
            }
        }
    }
    let default_arch = Architecture {
        covariates: 20,
        embed_dim: 16,
        hidden: [64, 64],
        risks: 2,
        encoder: Encoder::Time2Vec,
    };
    let (r, a) = gradient_error(default_arch, Scheme::PerSample, 4, 7);
    (rel, abs) = (rel.max(r), abs.max(a));
    cases += 1;
    let elapsed = start.elapsed();
    check(
        rel < 1e-4 && abs < ABSOLUTE_TOL && elapsed < Duration::from_secs(10),
        format!(
            "{cases} graphs, max relative error {rel:.2e}, max absolute error below {RELATIVE_FLOOR:e} {abs:.1e}, {:.1} s",
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn uniform_grid(a: f64, b: f64, points: usize) -> TimeGrid {
    let pts: Vec<f64> = (0..points)
        .map(|j| a + (b - a) * j as f64 / (points - 1) as f64)
        .collect();
    TimeGrid::new(pts, points - 1).unwrap()
}

fn criterion_quadrature() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut affine_err: f64 = 0.0;
    for _ in 0..200 {
        let (c0, c1) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let b = rng.random_range(0.1..10.0);
        let points = rng.random_range(2..60);
        let mut pts: Vec<f64> = (0..points).map(|_| rng.random_range(0.0..b)).collect();
        pts[0] = 0.0;
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let end = *pts.last().unwrap();
        let grid = TimeGrid::new(pts.clone(), pts.len() - 1).unwrap();
        let v: Vec<f64> = pts.iter().map(|t| c0 + c1 * t).collect();
        let exact = c0 * end + 0.5 * c1 * end * end;
        let got = trapezoid(&v, &grid, Upto::Anchor).unwrap();
        affine_err = affine_err.max((got - exact).abs() / exact.abs().max(1.0));
    }
    let err = |n: usize| {
        let grid = uniform_grid(0.0, 1.0, n);
        let v: Vec<f64> = grid.points().iter().map(|t| t * t).collect();
        (trapezoid(&v, &grid, Upto::End).unwrap() - 1.0 / 3.0).abs()
    };
    let ratio = err(10) / err(20);
    check(
        affine_err <= 1e-12 && ratio >= 3.9,
        format!("affine error {affine_err:.1e}, t^2 error ratio 10->20 points {ratio:.3}"),
    )
}

// ---------------------------------------------------------------- criterion 3

/// Product-limit censoring survival evaluated directly: `G(t)` multiplies
/// over censoring times `c ≤ t` (or `c < t` for the left limit). Events at a
/// censoring time leave the risk set first.
fn brute_g(times: &[f64], labels: &[usize], t: f64, left: bool) -> f64 {
    let mut cs: Vec<f64> = times
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&c, _)| c)
        .collect();
    cs.sort_by(f64::total_cmp);
    cs.dedup();
    let mut g = 1.0;
    for c in cs {
        if c > t || (left && c == t) {
            break;
        }
        let censored = times.iter().zip(labels).filter(|(&s, &l)| s == c && l == 0).count();
        let at_risk = times
            .iter()
            .zip(labels)
            .filter(|(&s, &l)| s > c || (s == c && l == 0))
            .count();
        g *= 1.0 - censored as f64 / at_risk as f64;
    }
    g
}

fn brute_ctd(scores: &[f64], times: &[f64], labels: &[usize], risk: usize, horizon: f64, ipcw: bool) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..times.len() {
        if labels[i] != risk || times[i] > horizon {
            continue;
        }
        let w = if ipcw {
            let g = brute_g(times, labels, times[i], true);
            if g > 0.0 {
                1.0 / (g * g)
            } else {
                0.0
            }
        } else {
            1.0
        };
        for j in 0..times.len() {
            if times[j] > times[i] {
                den += w;
                if scores[i] > scores[j] {
                    num += w;
                } else if scores[i] == scores[j] {
                    num += 0.5 * w;
                }
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

fn brute_brier(surv: &[f64], times: &[f64], labels: &[usize], risk: usize, horizon: f64, ipcw: bool) -> Option<f64> {
    let mut acc = 0.0;
    for i in 0..times.len() {
        let s = surv[i];
        let term = if times[i] <= horizon {
            match labels[i] {
                0 => continue,
                l => {
                    let r = if l == risk { s * s } else { (1.0 - s) * (1.0 - s) };
                    let g = if ipcw {
                        brute_g(times, labels, times[i], true)
                    } else {
                        1.0
                    };
                    if g <= 0.0 {
                        return None;
                    }
                    r / g
                }
            }
        } else {
            let g = if ipcw {
                brute_g(times, labels, horizon, false)
            } else {
                1.0
            };
            if g <= 0.0 {
                return None;
            }
            (1.0 - s) * (1.0 - s) / g
        };
        acc += term;
    }
    Some(acc / times.len() as f64)
}

fn agrees(lib: contsurv::Result<f64>, brute: Option<f64>) -> Result<f64, String> {
    match (lib, brute) {
        (Ok(a), Some(b)) => Ok((a - b).abs()),
        (Err(_), None) => Ok(0.0),
        (a, b) => Err(format!("library {a:?} vs brute force {b:?}")),
    }
}

fn km_examples() -> Result<(), String> {
    let expect = |g: &CensoringEstimate, pts: &[(f64, f64)]| -> Result<(), String> {
        for &(t, v) in pts {
            if g.at(t) != v {
                return Err(format!("G({t}) = {} instead of {v}", g.at(t)));
            }
        }
        Ok(())
    };
    let g = km_censoring(&[1.0, 2.0, 3.0], &[true, false, true]).map_err(|e| e.to_string())?;
    expect(
        &g,
        &[(0.0, 1.0), (1.0, 1.0), (1.999, 1.0), (2.0, 0.5), (3.0, 0.5), (9.0, 0.5)],
    )?;
    let g = km_censoring(&[1.0, 2.0, 4.0], &[true, true, true]).map_err(|e| e.to_string())?;
    expect(&g, &[(0.0, 1.0), (2.0, 1.0), (100.0, 1.0)])?;
    let g = km_censoring(&[1.0, 2.0], &[false, false]).map_err(|e| e.to_string())?;
    expect(&g, &[(0.5, 1.0), (1.0, 0.5), (1.5, 0.5), (2.0, 0.0), (3.0, 0.0)])?;
    if km_censoring(&[], &[]).is_ok() {
        return Err("empty input accepted".into());
    }
    Ok(())
}

fn criterion_metrics() -> Verdict {
    if let Err(e) = km_examples() {
        return Verdict::Fail(format!("KM example: {e}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    for d in 0..100 {
        let n = rng.random_range(1..=50);
        let risks = if d % 2 == 0 { 1 } else { 2 };
        // coarse times and scores on some datasets to force ties
        let coarse = d % 3 == 0;
        let times: Vec<f64> = (0..n)
            .map(|_| {
                let t: f64 = rng.random_range(0.01..5.0);
                if coarse {
                    t.ceil()
                } else {
                    t
                }
            })
            .collect();
        let labels: Vec<usize> = (0..n)
            .map(|_| {
                if rng.random_bool(0.35) {
                    0
                } else {
                    rng.random_range(1..=risks)
                }
            })
            .collect();
        let events: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
        let g = km_censoring(&times, &events).unwrap();
        for &t in &times {
            for (left, v) in [(false, g.at(t)), (true, g.before(t))] {
                let diff = (v - brute_g(&times, &labels, t, left)).abs();
                if diff > 1e-12 {
                    return Verdict::Fail(format!("dataset {d}: G mismatch {diff:.2e} at {t}"));
                }
            }
        }
        for risk in 1..=risks {
            for horizon in [1.0, 2.5, 4.0] {
                let scores: Vec<f64> = (0..n)
                    .map(|_| {
                        let s: f64 = rng.random_range(0.0..1.0);
                        if coarse {
                            (s * 4.0).round() / 4.0
                        } else {
                            s
                        }
                    })
                    .collect();
                let surv: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
                let pairs = [
                    agrees(
                        ctd_ipcw(&scores, &times, &labels, risk, &g, horizon),
                        brute_ctd(&scores, &times, &labels, risk, horizon, true),
                    ),
                    agrees(
                        plain_cindex(&scores, &times, &labels, risk, horizon),
                        brute_ctd(&scores, &times, &labels, risk, horizon, false),
                    ),
                    agrees(
                        brier_ipcw(&surv, &times, &labels, risk, &g, horizon),
                        brute_brier(&surv, &times, &labels, risk, horizon, true),
                    ),
                    agrees(
                        plain_brier(&surv, &times, &labels, risk, horizon),
                        brute_brier(&surv, &times, &labels, risk, horizon, false),
                    ),
                ];
                for p in pairs {
                    match p {
                        Ok(diff) => worst = worst.max(diff),
                        Err(e) => return Verdict::Fail(format!("dataset {d}, risk {risk}, horizon {horizon}: {e}")),
                    }
                    compared += 1;
                }
            }
        }
    }
    check(
        worst <= 1e-12,
        format!("KM examples exact; {compared} metric values on 100 datasets, max difference {worst:.1e}"),
    )
}

// ---------------------------------------------------------------- criteria 4-6

/// `(weighting, risk, horizon fraction)` to `(ctd mean, brier mean)`, read
/// from a `cv` summary table.
type Summary = BTreeMap<(String, usize, String), (f64, f64)>;

/// Simulates `n` rows of `kind` (seed 0) and cross-validates the default
/// config through the command-line tool.
fn cli_cv(kind: &str, n: usize, max_folds: Option<usize>) -> Result<Summary, String> {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let out = dir.path().join("cv.json");
    let n = n.to_string();
    cli(&["simulate", "--kind", kind, "--n", &n, "--seed", "0", "--out", s(&data)])?;
    let schema = with_suffix(&data, ".schema.toml");
    let mut args = vec!["cv", "--data", s(&data), "--schema", s(&schema), "--out", s(&out)];
    let folds = max_folds.map(|f| f.to_string());
    if let Some(f) = &folds {
        args.extend(["--max-folds", f.as_str()]);
    }
    cli(&args)?;
    let table = std::fs::read_to_string(with_suffix(&out, ".summary.csv")).map_err(|e| e.to_string())?;
    Ok(table
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |t: &str| t.parse().unwrap_or(f64::NAN);
            (
                (f[0].to_string(), f[1].parse().unwrap(), f[2].to_string()),
                (num(f[3]), num(f[5])),
            )
        })
        .collect())
}

fn lookup(summary: &Summary, weighting: &str, risk: usize, fraction: &str) -> (f64, f64) {
    summary
        .get(&(weighting.to_string(), risk, fraction.to_string()))
        .copied()
        .unwrap_or((f64::NAN, f64::NAN))
}

fn competing_smoke() -> Verdict {
    let start = Instant::now();
    let summary = match cli_cv("competing", 5000, Some(2)) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e),
    };
    let elapsed = start.elapsed();
    let mut ok = true;
    let mut shown = Vec::new();
    for risk in 1..=2 {
        for f in ["0.25", "0.5", "0.75"] {
            let c = lookup(&summary, "plain", risk, f).0;
            ok &= c > 0.68;
            shown.push(format!("r{risk}@{f}={c:.3}"));
        }
    }
    check(
        ok && elapsed < Duration::from_secs(300),
        format!(
            "mean of first two folds: {}, {:.0} s",
            shown.join(" "),
            elapsed.as_secs_f64()
        ),
    )
}

fn competing_full() -> Verdict {
    if !full_runs() {
        return Verdict::Skip(format!("n=30000 five-fold run; set {FULL_ENV}=1"));
    }
    let start = Instant::now();
    let summary = match cli_cv("competing", 30000, None) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e),
    };
    let mut ok = true;
    let mut shown = Vec::new();
    for (risk, target) in [(1, 0.714), (2, 0.759)] {
        for f in ["0.25", "0.5", "0.75"] {
            let c = lookup(&summary, "plain", risk, f).0;
            ok &= (c - target).abs() <= 0.03;
            shown.push(format!("ctd r{risk}@{f}={c:.3}"));
        }
    }
    let brier = lookup(&summary, "plain", 1, "0.25").1;
    ok &= (brier - 0.113).abs() <= 0.02;
    check(
        ok,
        format!(
            "{} brier r1@0.25={brier:.3}, {:.0} s",
            shown.join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn nonlinear_full() -> Verdict {
    if !full_runs() {
        return Verdict::Skip(format!("n=5000 five-fold run; set {FULL_ENV}=1"));
    }
    let start = Instant::now();
    let summary = match cli_cv("nonlinear", 5000, None) {
        Ok(s) => s,
        Err(e) => return Verdict::Fail(e),
    };
    let c = lookup(&summary, "ipcw", 1, "0.5").0;
    check(
        (c - 0.609).abs() <= 0.06,
        format!(
            "ctd@0.5={c:.3} (target 0.609 +/- 0.06), {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- CLI helpers

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_contsurv"))
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut o = p.as_os_str().to_owned();
    o.push(suffix);
    PathBuf::from(o)
}

/// Mean Ctd over horizons per `(scheme, m)` from an experiment table.
fn experiment_means(table: &str) -> BTreeMap<(String, usize), f64> {
    let mut acc: BTreeMap<(String, usize), (f64, usize)> = BTreeMap::new();
    for line in table.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[0].to_string(), f[1].parse().unwrap());
        let v: f64 = f[4].parse().unwrap_or(f64::NAN);
        let e = acc.entry(key).or_default();
        e.0 += v;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn discretization_experiment() -> Verdict {
    if !full_runs() {
        return Verdict::Skip(format!("four five-fold runs at n=5000; set {FULL_ENV}=1"));
    }
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("nonlinear.csv");
    let out = dir.path().join("experiment.csv");
    let start = Instant::now();
    let run = cli(&[
        "simulate",
        "--kind",
        "nonlinear",
        "--n",
        "5000",
        "--seed",
        "0",
        "--out",
        s(&data),
    ])
    .and_then(|_| {
        cli(&[
            "experiment",
            "--data",
            s(&data),
            "--schema",
            s(&with_suffix(&data, ".schema.toml")),
            "--m-list",
            "3,30",
            "--out",
            s(&out),
        ])
    });
    if let Err(e) = run {
        return Verdict::Fail(e);
    }
    let means = experiment_means(&std::fs::read_to_string(&out).unwrap());
    let get = |scheme: &str, m: usize| means.get(&(scheme.to_string(), m)).copied().unwrap_or(f64::NAN);
    let (a3, b3, a30, b30) = (get("A", 3), get("B", 3), get("A", 30), get("B", 30));
    check(
        a3 - b3 >= 0.02 && (b30 - a30).abs() <= 0.01,
        format!(
            "mean ctd A3={a3:.3} B3={b3:.3} (gap {:.3}), A30={a30:.3} B30={b30:.3} (gap {:.3}), {:.0} s",
            a3 - b3,
            (b30 - a30).abs(),
            start.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn manifest_without_duration(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("duration_seconds");
    v
}

/// Runs every command twice with identical arguments and compares outputs
/// byte for byte (manifests apart from their wall-clock duration).
fn determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data.csv");
    let schema = with_suffix(&data, ".schema.toml");
    let cfg = d.join("cfg.toml");
    std::fs::write(
        &cfg,
        "max_epochs = 4\nm = 6\nbatch_size = 64\nhidden = [16, 16]\nembed_dim = 8\n",
    )
    .unwrap();
    let model = d.join("model.json");
    let row = vec!["0.3"; 20].join(",");

    let commands: Vec<(Vec<String>, PathBuf, Vec<PathBuf>)> = {
        let o = |name: &str| d.join(name);
        let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        vec![
            (
                v(&[
                    "simulate",
                    "--kind",
                    "competing",
                    "--n",
                    "600",
                    "--seed",
                    "5",
                    "--out",
                    s(&data),
                ]),
                data.clone(),
                vec![data.clone(), schema.clone()],
            ),
            (
                v(&[
                    "train",
                    "--data",
                    s(&data),
                    "--schema",
                    s(&schema),
                    "--config",
                    s(&cfg),
                    "--seed",
                    "3",
                    "--out",
                    s(&model),
                ]),
                model.clone(),
                vec![model.clone(), with_suffix(&model, ".log.csv")],
            ),
            (
                v(&[
                    "evaluate",
                    "--model",
                    s(&model),
                    "--data",
                    s(&data),
                    "--schema",
                    s(&schema),
                    "--out",
                    s(&o("eval.json")),
                ]),
                o("eval.json"),
                vec![o("eval.json")],
            ),
            (
                v(&[
                    "predict",
                    "--model",
                    s(&model),
                    "--covariates",
                    &row,
                    "--mesh",
                    "25:3",
                    "--out",
                    s(&o("curve.csv")),
                ]),
                o("curve.csv"),
                vec![o("curve.csv")],
            ),
            (
                v(&[
                    "cv",
                    "--data",
                    s(&data),
                    "--schema",
                    s(&schema),
                    "--config",
                    s(&cfg),
                    "--max-folds",
                    "2",
                    "--out",
                    s(&o("cv.json")),
                ]),
                o("cv.json"),
                vec![o("cv.json"), with_suffix(&o("cv.json"), ".summary.csv")],
            ),
            (
                v(&[
                    "experiment",
                    "--data",
                    s(&data),
                    "--schema",
                    s(&schema),
                    "--config",
                    s(&cfg),
                    "--m-list",
                    "2,4",
                    "--max-folds",
                    "1",
                    "--out",
                    s(&o("exp.csv")),
                ]),
                o("exp.csv"),
                vec![o("exp.csv")],
            ),
        ]
    };

    let mut checked = 0;
    for (args, out, files) in &commands {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        if let Err(e) = cli(&args) {
            return Verdict::Fail(e);
        }
        let first: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
        let manifest = manifest_without_duration(&with_suffix(out, ".manifest.json"));
        if let Err(e) = cli(&args) {
            return Verdict::Fail(e);
        }
        for (f, bytes) in files.iter().zip(&first) {
            if &std::fs::read(f).unwrap() != bytes {
                return Verdict::Fail(format!("{} differs on rerun of `{}`", f.display(), args[0]));
            }
            checked += 1;
        }
        if manifest_without_duration(&with_suffix(out, ".manifest.json")) != manifest {
            return Verdict::Fail(format!("manifest differs on rerun of `{}`", args[0]));
        }
    }
    Verdict::Pass(format!(
        "{} commands, {checked} output files identical on rerun",
        commands.len()
    ))
}

type Criterion = (&'static str, fn() -> Verdict);

/// Runs without the libtest harness so the verdict lines are never captured.
fn main() {
    let criteria: Vec<Criterion> = vec![
        ("1 gradient correctness", criterion_gradients),
        ("2 quadrature", criterion_quadrature),
        ("3 metric oracles", criterion_metrics),
        ("4 competing smoke (n=5000)", competing_smoke),
        ("4 competing full (n=30000)", competing_full),
        ("5 nonlinear (n=5000)", nonlinear_full),
        ("6 discretization experiment", discretization_experiment),
        ("7 determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (name, f) in criteria {
        match f() {
            Verdict::Pass(d) => println!("PASS criterion {name}: {d}"),
            Verdict::Fail(d) => {
                println!("FAIL criterion {name}: {d}");
                failed.push(name);
            }
            Verdict::Skip(d) => println!("SKIP criterion {name}: {d}"),
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}

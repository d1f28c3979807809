//! Accuracy and robustness statistics over validation predictions, and the
//! report files built from them.
//!
//! All inputs are de-normalized N×4 node tensors. Histograms and box plots
//! use errors divided by the per-feature training std so that the four
//! features share one axis.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::powerflow::{NODE_FEATURES, NODE_FEATURE_NAMES};

pub const HIST_CLIP: f64 = 1.5;
pub const HIST_BIN_WIDTH: f64 = 0.05;
pub const HIST_BINS: usize = 30;
/// Timesteps whose total load is at or above this quantile of the
/// validation loads form the high-load stratum.
pub const HIGH_LOAD_QUANTILE: f64 = 0.8;
pub const HIGH_RENEWABLE_SHARE: f64 = 0.5;

const UNITS: [&str; NODE_FEATURES] = ["p.u.", "deg", "MW", "MVAr"];
const TABLE_HEADERS: [&str; NODE_FEATURES] = ["V-Mag", "V-Angle", "P", "Q"];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("empty prediction series")]
    Empty,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {needed} {what}, got {got}")]
    TooFew { what: &'static str, needed: usize, got: usize },
    #[error("model set incomplete, missing {0:?}")]
    Incomplete(Vec<&'static str>),
    #[error("cannot write report: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    Gnn,
    Mlp,
    Linear,
    RollingMean,
}

impl ModelKind {
    /// Table order.
    pub const ALL: [ModelKind; 4] = [ModelKind::Gnn, ModelKind::Mlp, ModelKind::Linear, ModelKind::RollingMean];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::Gnn => "GNN",
            ModelKind::Mlp => "NN",
            ModelKind::Linear => "LR",
            ModelKind::RollingMean => "RM",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

fn check_aligned(preds: &[Tensor], targets: &[Tensor]) -> Result<(), EvalError> {
    if preds.is_empty() || targets.is_empty() {
        return Err(EvalError::Empty);
    }
    if preds.len() != targets.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let shape = targets[0].shape();
    if shape.len() != 2 || shape[1] != NODE_FEATURES || shape[0] == 0 {
        return Err(EvalError::Shape(format!("targets must be N×{NODE_FEATURES}, got {shape:?}")));
    }
    for (p, t) in preds.iter().zip(targets) {
        if p.shape() != shape || t.shape() != shape {
            return Err(EvalError::Shape(format!("expected {shape:?}, got {:?} / {:?}", p.shape(), t.shape())));
        }
    }
    Ok(())
}

/// Prediction minus target, per timestep.
pub fn error_series(preds: &[Tensor], targets: &[Tensor]) -> Result<Vec<Tensor>, EvalError> {
    check_aligned(preds, targets)?;
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let d = p.data().iter().zip(t.data()).map(|(a, b)| a - b).collect();
            Tensor::new(p.shape().to_vec(), d).expect("same shape")
        })
        .collect())
}

/// Per-bus, per-feature RMSE over timesteps, N×4.
pub fn rmse_grid(preds: &[Tensor], targets: &[Tensor]) -> Result<Tensor, EvalError> {
    let errors = error_series(preds, targets)?;
    Ok(rmse_from_errors(&errors))
}

fn rmse_from_errors(errors: &[Tensor]) -> Tensor {
    let mut acc = vec![0.0; errors[0].len()];
    for e in errors {
        for (a, x) in acc.iter_mut().zip(e.data()) {
            *a += x * x;
        }
    }
    let t = errors.len() as f64;
    acc.iter_mut().for_each(|a| *a = (*a / t).sqrt());
    Tensor::new(errors[0].shape().to_vec(), acc).expect("same shape")
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
pub fn std_pop(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let h = (s.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(s.len() - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

/// Pearson correlation; `None` when either side has no spread.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    let tiny = |s: f64, v: &[f64]| {
        let scale = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        s <= (f64::EPSILON * scale).powi(2) * v.len() as f64
    };
    if tiny(sxx, x) || tiny(syy, y) {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn column(grid: &Tensor, f: usize) -> Vec<f64> {
    (0..grid.rows()).map(|b| grid.get(b, f)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean ± population std over buses, per feature.
pub fn aggregate(grid: &Tensor) -> [MeanStd; NODE_FEATURES] {
    std::array::from_fn(|f| {
        let c = column(grid, f);
        MeanStd {
            mean: mean(&c),
            std: std_pop(&c),
        }
    })
}

/// Std over mean of per-bus RMSE; undefined when the mean is zero.
pub fn cv(grid: &Tensor) -> [Option<f64>; NODE_FEATURES] {
    std::array::from_fn(|f| {
        let c = column(grid, f);
        let m = mean(&c);
        (m > 0.0).then(|| std_pop(&c) / m)
    })
}

/// 95th percentile of absolute error pooled over buses and timesteps.
pub fn p95_abs_err(errors: &[Tensor]) -> [f64; NODE_FEATURES] {
    std::array::from_fn(|f| {
        let v: Vec<f64> = errors.iter().flat_map(|e| column(e, f)).map(f64::abs).collect();
        quantile(&v, 0.95)
    })
}

/// Lag-1 autocorrelation of the bus-averaged error sequence.
pub fn rho1(errors: &[Tensor]) -> [Option<f64>; NODE_FEATURES] {
    std::array::from_fn(|f| {
        let s: Vec<f64> = errors.iter().map(|e| mean(&column(e, f))).collect();
        if s.len() < 3 {
            return None;
        }
        pearson(&s[..s.len() - 1], &s[1..])
    })
}

pub fn degree_corr(grid: &Tensor, degrees: &[usize]) -> [Option<f64>; NODE_FEATURES] {
    let d: Vec<f64> = degrees.iter().map(|&x| x as f64).collect();
    std::array::from_fn(|f| pearson(&d, &column(grid, f)))
}

/// Correlation between active power and voltage angle errors over all
/// bus-timestep pairs.
pub fn cross_var_corr(errors: &[Tensor]) -> Option<f64> {
    let p: Vec<f64> = errors.iter().flat_map(|e| column(e, 2)).collect();
    let th: Vec<f64> = errors.iter().flat_map(|e| column(e, 1)).collect();
    pearson(&p, &th)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub kind: ModelKind,
    /// N×4, de-normalized units.
    pub rmse: Tensor,
    pub aggregate: [MeanStd; NODE_FEATURES],
    pub cv: [Option<f64>; NODE_FEATURES],
    pub p95_abs_err: [f64; NODE_FEATURES],
    pub rho1: [Option<f64>; NODE_FEATURES],
    pub degree_corr: [Option<f64>; NODE_FEATURES],
    pub cross_var_corr: Option<f64>,
    /// Density of |error|/scale per feature, clipped into the last bin.
    pub error_density: [Vec<f64>; NODE_FEATURES],
    /// Per-bus mean over features of RMSE/scale.
    pub bus_score: Vec<f64>,
    pub strata: Vec<StratumEval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEval {
    pub name: String,
    pub steps: usize,
    /// Mean over buses of per-bus RMSE, per feature; `None` for an empty stratum.
    pub mean_rmse: [Option<f64>; NODE_FEATURES],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bus_ids: Vec<usize>,
    pub degrees: Vec<usize>,
    pub scale: [f64; NODE_FEATURES],
    pub steps: usize,
    pub models: Vec<ModelEval>,
}

/// System conditions at each evaluated timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditions {
    pub load: Vec<f64>,
    pub renewable_share: Vec<f64>,
}

/// Everything needed to score models on a common set of timesteps.
#[derive(Debug, Clone)]
pub struct EvalInputs<'a> {
    pub targets: &'a [Tensor],
    pub bus_ids: &'a [usize],
    pub degrees: &'a [usize],
    /// Per-feature divisor for the standardized views.
    pub scale: [f64; NODE_FEATURES],
    pub conditions: Option<&'a Conditions>,
}

fn histogram(errors: &[Tensor], f: usize, scale: f64) -> Vec<f64> {
    let mut counts = vec![0usize; HIST_BINS];
    let mut total = 0usize;
    for e in errors {
        for b in 0..e.rows() {
            let z = (e.get(b, f) / scale).abs().min(HIST_CLIP);
            let bin = ((z / HIST_BIN_WIDTH) as usize).min(HIST_BINS - 1);
            counts[bin] += 1;
            total += 1;
        }
    }
    counts
        .iter()
        .map(|&c| c as f64 / (total as f64 * HIST_BIN_WIDTH))
        .collect()
}

fn strata_masks(c: &Conditions) -> Vec<(&'static str, Vec<bool>)> {
    let threshold = quantile(&c.load, HIGH_LOAD_QUANTILE);
    vec![
        ("all", vec![true; c.load.len()]),
        ("high_load", c.load.iter().map(|&l| l >= threshold).collect()),
        (
            "high_renewable",
            c.renewable_share.iter().map(|&s| s > HIGH_RENEWABLE_SHARE).collect(),
        ),
    ]
}

pub fn evaluate_model(kind: ModelKind, preds: &[Tensor], inputs: &EvalInputs) -> Result<ModelEval, EvalError> {
    let errors = error_series(preds, inputs.targets)?;
    let n = inputs.targets[0].rows();
    if errors.len() < 3 {
        return Err(EvalError::TooFew {
            what: "timesteps",
            needed: 3,
            got: errors.len(),
        });
    }
    if n < 3 {
        return Err(EvalError::TooFew {
            what: "buses",
            needed: 3,
            got: n,
        });
    }
    if inputs.degrees.len() != n || inputs.bus_ids.len() != n {
        return Err(EvalError::Shape(format!(
            "{} degrees and {} bus ids for {n} buses",
            inputs.degrees.len(),
            inputs.bus_ids.len()
        )));
    }
    if inputs.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(EvalError::Shape(format!("feature scales must be positive, got {:?}", inputs.scale)));
    }
    let rmse = rmse_from_errors(&errors);
    let bus_score = (0..n)
        .map(|b| (0..NODE_FEATURES).map(|f| rmse.get(b, f) / inputs.scale[f]).sum::<f64>() / NODE_FEATURES as f64)
        .collect();
    let mut strata = Vec::new();
    if let Some(c) = inputs.conditions {
        if c.load.len() != errors.len() || c.renewable_share.len() != errors.len() {
            return Err(EvalError::Shape("conditions do not cover every timestep".into()));
        }
        for (name, mask) in strata_masks(c) {
            let subset: Vec<Tensor> = errors.iter().zip(&mask).filter(|(_, &m)| m).map(|(e, _)| e.clone()).collect();
            let mean_rmse = if subset.is_empty() {
                [None; NODE_FEATURES]
            } else {
                let g = rmse_from_errors(&subset);
                std::array::from_fn(|f| Some(mean(&column(&g, f))))
            };
            strata.push(StratumEval {
                name: name.to_string(),
                steps: subset.len(),
                mean_rmse,
            });
        }
    }
    Ok(ModelEval {
        kind,
        aggregate: aggregate(&rmse),
        cv: cv(&rmse),
        p95_abs_err: p95_abs_err(&errors),
        rho1: rho1(&errors),
        degree_corr: degree_corr(&rmse, inputs.degrees),
        cross_var_corr: cross_var_corr(&errors),
        error_density: std::array::from_fn(|f| histogram(&errors, f, inputs.scale[f])),
        bus_score,
        strata,
        rmse,
    })
}

/// Scores each model on the same targets. Models appear in table order.
pub fn evaluate(models: &[(ModelKind, Vec<Tensor>)], inputs: &EvalInputs) -> Result<EvalReport, EvalError> {
    if models.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sorted: Vec<&(ModelKind, Vec<Tensor>)> = models.iter().collect();
    sorted.sort_by_key(|(k, _)| *k);
    if sorted.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(EvalError::Shape("duplicate model".into()));
    }
    let evals = sorted
        .iter()
        .map(|(k, p)| evaluate_model(*k, p, inputs))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvalReport {
        bus_ids: inputs.bus_ids.to_vec(),
        degrees: inputs.degrees.to_vec(),
        scale: inputs.scale,
        steps: inputs.targets.len(),
        models: evals,
    })
}

impl EvalReport {
    pub fn model(&self, kind: ModelKind) -> Option<&ModelEval> {
        self.models.iter().find(|m| m.kind == kind)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Table of mean ± std per model and feature; needs all four models.
pub fn aggregate_table(report: &EvalReport) -> Result<(String, String), EvalError> {
    let missing: Vec<&'static str> = ModelKind::ALL
        .iter()
        .filter(|k| report.model(**k).is_none())
        .map(|k| k.label())
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::Incomplete(missing));
    }
    let mut csv = String::from("# mean and population std over buses of per-bus validation RMSE\n");
    let _ = writeln!(
        csv,
        "# units: {}",
        NODE_FEATURE_NAMES
            .iter()
            .zip(UNITS)
            .map(|(n, u)| format!("{n}={u}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    csv.push_str("model");
    for n in NODE_FEATURE_NAMES {
        let _ = write!(csv, ",{n}_mean,{n}_std");
    }
    csv.push('\n');

    let cells: Vec<(&str, [String; NODE_FEATURES], [String; NODE_FEATURES])> = ModelKind::ALL
        .iter()
        .map(|k| {
            let m = report.model(*k).expect("checked");
            (
                k.label(),
                std::array::from_fn(|f| format!("{:.4e}", m.aggregate[f].mean)),
                std::array::from_fn(|f| format!("± {:.4e}", m.aggregate[f].std)),
            )
        })
        .collect();
    for k in ModelKind::ALL {
        let m = report.model(k).expect("checked");
        csv.push_str(k.label());
        for a in &m.aggregate {
            let _ = write!(csv, ",{},{}", a.mean, a.std);
        }
        csv.push('\n');
    }

    let headers: Vec<String> = TABLE_HEADERS.iter().zip(UNITS).map(|(h, u)| format!("{h} ({u})")).collect();
    let width = cells
        .iter()
        .flat_map(|(_, a, b)| a.iter().chain(b.iter()))
        .map(|s| s.chars().count())
        .chain(headers.iter().map(|h| h.chars().count()))
        .max()
        .unwrap_or(0);
    let mut txt = String::new();
    let _ = write!(txt, "{:<6}", "Model");
    for h in &headers {
        let _ = write!(txt, " | {h:>width$}");
    }
    txt.push('\n');
    let rule = "-".repeat(6 + NODE_FEATURES * (width + 3));
    let _ = writeln!(txt, "{rule}");
    for (label, means, stds) in &cells {
        let _ = write!(txt, "{label:<6}");
        for m in means {
            let _ = write!(txt, " | {m:>width$}");
        }
        txt.push('\n');
        let _ = write!(txt, "{:<6}", "");
        for s in stds {
            let _ = write!(txt, " | {s:>width$}");
        }
        txt.push('\n');
        let _ = writeln!(txt, "{rule}");
    }
    Ok((csv, txt))
}

fn rmse_by_bus_csv(r: &EvalReport) -> String {
    let mut s = String::from("# per-bus validation RMSE in de-normalized units\nbus,degree,model");
    for n in NODE_FEATURE_NAMES {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for m in &r.models {
        for (b, (&id, &deg)) in r.bus_ids.iter().zip(&r.degrees).enumerate() {
            let _ = write!(s, "{id},{deg},{}", m.kind);
            for f in 0..NODE_FEATURES {
                let _ = write!(s, ",{}", m.rmse.get(b, f));
            }
            s.push('\n');
        }
    }
    s
}

fn error_hist_csv(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# density of |error| divided by the training std of each feature; values above {HIST_CLIP} fall in the last bin"
    );
    let _ = writeln!(s, "# bin width {HIST_BIN_WIDTH}");
    s.push_str("feature,model,bin_lo,bin_hi,density\n");
    for (f, name) in NODE_FEATURE_NAMES.iter().enumerate() {
        for m in &r.models {
            for (i, d) in m.error_density[f].iter().enumerate() {
                let lo = i as f64 * HIST_BIN_WIDTH;
                let _ = writeln!(s, "{name},{},{:.2},{:.2},{d}", m.kind, lo, lo + HIST_BIN_WIDTH);
            }
        }
    }
    s
}

fn box_stats(x: &[f64]) -> [f64; 6] {
    [
        quantile(x, 0.0),
        quantile(x, 0.25),
        quantile(x, 0.5),
        quantile(x, 0.75),
        quantile(x, 1.0),
        mean(x),
    ]
}

fn boxplot_csv(r: &EvalReport) -> String {
    let mut s = String::from(
        "# per-bus mean over features of RMSE divided by the training std of each feature\nmodel,min,q1,median,q3,max,mean\n",
    );
    for m in &r.models {
        let b = box_stats(&m.bus_score);
        let _ = writeln!(s, "{},{},{},{},{},{},{}", m.kind, b[0], b[1], b[2], b[3], b[4], b[5]);
    }
    s
}

fn robustness_csv(r: &EvalReport) -> String {
    let mut s = String::from(
        "# cv: std/mean of per-bus RMSE; p95: 95th percentile of |error|; rho1: lag-1 autocorrelation of the bus-mean error\n\
         # degree_corr: Pearson r of bus degree and bus RMSE; cross_var_corr: Pearson r of p_mw and v_ang_deg errors\n\
         # NA marks an undefined statistic\n\
         model,feature,cv,p95_abs_err,rho1,degree_corr,cross_var_corr\n",
    );
    for m in &r.models {
        for (f, name) in NODE_FEATURE_NAMES.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{name},{},{},{},{},{}",
                m.kind,
                opt(m.cv[f]),
                m.p95_abs_err[f],
                opt(m.rho1[f]),
                opt(m.degree_corr[f]),
                opt(m.cross_var_corr)
            );
        }
    }
    s
}

fn strata_csv(r: &EvalReport) -> Option<String> {
    if r.models.iter().all(|m| m.strata.is_empty()) {
        return None;
    }
    let mut s = format!(
        "# high_load: total load at or above its {}th percentile; high_renewable: renewable share above {}\n\
         # values are mean over buses of RMSE; change is relative to the all stratum\n\
         stratum,steps,model,feature,mean_rmse,change\n",
        (HIGH_LOAD_QUANTILE * 100.0) as u32,
        HIGH_RENEWABLE_SHARE
    );
    for m in &r.models {
        let base = m.strata.iter().find(|x| x.name == "all");
        for st in &m.strata {
            for (f, name) in NODE_FEATURE_NAMES.iter().enumerate() {
                let change = match (st.mean_rmse[f], base.and_then(|b| b.mean_rmse[f])) {
                    (Some(v), Some(b)) if b > 0.0 => Some(v / b - 1.0),
                    _ => None,
                };
                let _ = writeln!(
                    s,
                    "{},{},{},{name},{},{}",
                    st.name,
                    st.steps,
                    m.kind,
                    opt(st.mean_rmse[f]),
                    opt(change)
                );
            }
        }
    }
    Some(s)
}

const SVG_COLORS: [&str; 4] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#7f7f7f"];

/// Grouped bars of mean RMSE / feature std, one group per feature.
fn bar_svg(r: &EvalReport) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let vals: Vec<Vec<f64>> = r
        .models
        .iter()
        .map(|m| (0..NODE_FEATURES).map(|f| m.aggregate[f].mean / r.scale[f]).collect())
        .collect();
    let top = vals.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
    let group = (w - 2.0 * pad) / NODE_FEATURES as f64;
    let bar = group * 0.8 / r.models.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="20">Mean validation RMSE over buses, in units of feature std (max {top:.4})</text>"#
    );
    let base = h - pad;
    let _ = writeln!(s, r#"<line x1="{pad}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, w - pad);
    for (f, name) in NODE_FEATURE_NAMES.iter().enumerate() {
        let x0 = pad + group * f as f64 + group * 0.1;
        for (i, v) in vals.iter().enumerate() {
            let bh = v[f] / top * (base - 40.0);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                x0 + bar * i as f64,
                base - bh,
                bar,
                bh,
                SVG_COLORS[r.models[i].kind as usize]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{name}</text>"#,
            x0 + group * 0.4,
            base + 16.0
        );
    }
    for (i, m) in r.models.iter().enumerate() {
        let y = 40.0 + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            w - pad - 60.0,
            y - 9.0,
            SVG_COLORS[m.kind as usize],
            w - pad - 44.0,
            y,
            m.kind
        );
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ReportFormats {
    pub json: bool,
    pub svg: bool,
}

/// Renders every file in memory, then writes them. Nothing is written if
/// rendering fails.
pub fn render_report(report: &EvalReport, formats: ReportFormats) -> Result<Vec<(String, String)>, EvalError> {
    if report.models.is_empty() {
        return Err(EvalError::Empty);
    }
    let (csv, txt) = aggregate_table(report)?;
    let mut files = vec![
        ("table1.csv".to_string(), csv),
        ("table1.txt".to_string(), txt),
        ("rmse_by_bus.csv".to_string(), rmse_by_bus_csv(report)),
        ("error_hist.csv".to_string(), error_hist_csv(report)),
        ("boxplot.csv".to_string(), boxplot_csv(report)),
        ("robustness.csv".to_string(), robustness_csv(report)),
    ];
    if let Some(s) = strata_csv(report) {
        files.push(("strata.csv".to_string(), s));
    }
    if formats.json {
        let j = serde_json::to_string_pretty(report).map_err(|e| EvalError::Io(e.to_string()))?;
        files.push(("report.json".to_string(), j + "\n"));
    }
    if formats.svg {
        files.push(("rmse_bars.svg".to_string(), bar_svg(report)));
    }
    Ok(files)
}

pub fn emit_report(report: &EvalReport, out_dir: &Path, formats: ReportFormats) -> Result<Vec<String>, EvalError> {
    let files = render_report(report, formats)?;
    fs::create_dir_all(out_dir).map_err(|e| EvalError::Io(format!("{}: {e}", out_dir.display())))?;
    for (name, body) in &files {
        let p = out_dir.join(name);
        fs::write(&p, body).map_err(|e| EvalError::Io(format!("{}: {e}", p.display())))?;
    }
    Ok(files.into_iter().map(|(n, _)| n).collect())
}

//! Linear probes from embeddings to generative variables, scored by R².

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMethod {
    ClosedForm,
    GradientDescent,
}

/// Plain mini-batch gradient descent on the MSE of a single linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdProbeConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GdProbeConfig {
    fn default() -> Self {
        GdProbeConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// targets × latent
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    /// R² on the fitting data.
    pub r2_per_dim: Vec<f64>,
    pub r2_mean: f64,
    pub method: ProbeMethod,
}

/// `1 − Σ(y − ŷ)² / Σ(y − ȳ)²`; `0` (with a warning) when `y` is constant.
pub fn r_squared(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::shape("prediction length", y.len(), yhat.len()));
    }
    if y.len() < 2 {
        return Err(Error::Argument("R² needs at least two observations".into()));
    }
    let mean = y.sum() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        log::warn!("constant target column, R² set to 0");
        return Ok(0.0);
    }
    let ss_res: f64 = y.iter().zip(yhat.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn to_f64(m: ArrayView2<f32>) -> Array2<f64> {
    m.mapv(|v| v as f64)
}

impl ProbeResult {
    pub fn predict(&self, z: ArrayView2<f32>) -> Result<Array2<f64>> {
        if z.ncols() != self.weights.ncols() {
            return Err(Error::shape("probe input", self.weights.ncols(), z.ncols()));
        }
        Ok(to_f64(z).dot(&self.weights.t()) + &self.bias)
    }

    /// Per-dimension R² on new data.
    pub fn score(&self, z: ArrayView2<f32>, targets: ArrayView2<f32>) -> Result<Vec<f64>> {
        if z.nrows() != targets.nrows() {
            return Err(Error::shape("probe target rows", z.nrows(), targets.nrows()));
        }
        let pred = self.predict(z)?;
        let y = to_f64(targets);
        y.axis_iter(Axis(1))
            .zip(pred.axis_iter(Axis(1)))
            .map(|(a, b)| r_squared(a, b))
            .collect()
    }
}

fn mean_of(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

pub fn fit_linear_probe(z: ArrayView2<f32>, targets: ArrayView2<f32>, method: ProbeMethod) -> Result<ProbeResult> {
    fit_linear_probe_with(z, targets, method, &GdProbeConfig::default())
}

pub fn fit_linear_probe_with(
    z: ArrayView2<f32>,
    targets: ArrayView2<f32>,
    method: ProbeMethod,
    gd: &GdProbeConfig,
) -> Result<ProbeResult> {
    if z.nrows() != targets.nrows() {
        return Err(Error::shape("probe target rows", z.nrows(), targets.nrows()));
    }
    if z.nrows() < 2 || z.ncols() == 0 || targets.ncols() == 0 {
        return Err(Error::Argument("a probe needs at least two samples and nonempty matrices".into()));
    }
    let (weights, bias) = match method {
        ProbeMethod::ClosedForm => least_squares(z, targets),
        ProbeMethod::GradientDescent => gradient_descent(z, targets, gd),
    };
    let mut result = ProbeResult {
        weights,
        bias,
        r2_per_dim: Vec::new(),
        r2_mean: 0.0,
        method,
    };
    result.r2_per_dim = result.score(z, targets)?;
    result.r2_mean = mean_of(&result.r2_per_dim);
    Ok(result)
}

/// Ordinary least squares on centred data through an SVD; a rank-deficient
/// design falls back to ridge regression with penalty `1e-8`.
fn least_squares(z: ArrayView2<f32>, targets: ArrayView2<f32>) -> (Array2<f64>, Array1<f64>) {
    let (n, d) = z.dim();
    let t = targets.ncols();
    let zf = to_f64(z);
    let yf = to_f64(targets);
    let zmean = zf.mean_axis(Axis(0)).expect("nonempty");
    let ymean = yf.mean_axis(Axis(0)).expect("nonempty");
    let zc = DMatrix::from_fn(n, d, |i, j| zf[[i, j]] - zmean[j]);
    let yc = DMatrix::from_fn(n, t, |i, j| yf[[i, j]] - ymean[j]);

    let svd = zc.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * n.max(d) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let w = if rank == d {
        svd.solve(&yc, tol).expect("both factors computed")
    } else {
        log::warn!("probe design has rank {rank} < {d}, using ridge 1e-8");
        let gram = zc.transpose() * &zc + DMatrix::identity(d, d) * 1e-8;
        let rhs = zc.transpose() * &yc;
        match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.svd(true, true).solve(&rhs, 0.0).expect("both factors computed"),
        }
    };
    let weights = Array2::from_shape_fn((t, d), |(i, j)| w[(j, i)]);
    let bias = &ymean - &weights.dot(&zmean);
    (weights, bias)
}

fn gradient_descent(z: ArrayView2<f32>, targets: ArrayView2<f32>, cfg: &GdProbeConfig) -> (Array2<f64>, Array1<f64>) {
    let zf = to_f64(z);
    let yf = to_f64(targets);
    let (n, d) = zf.dim();
    let t = yf.ncols();
    let mut w = Array2::<f64>::zeros((t, d));
    let mut b = Array1::<f64>::zeros(t);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let x = zf.select(Axis(0), chunk);
            let y = yf.select(Axis(0), chunk);
            let pred = x.dot(&w.t()) + &b;
            let scale = 2.0 / (chunk.len() * t) as f64;
            let g = (pred - y) * scale;
            w.scaled_add(-cfg.learning_rate, &g.t().dot(&x));
            b.scaled_add(-cfg.learning_rate, &g.sum_axis(Axis(0)));
        }
    }
    (w, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableScore {
    pub train_r2: f64,
    pub val_r2: Option<f64>,
    pub train_r2_per_dim: Vec<f64>,
    pub val_r2_per_dim: Option<Vec<f64>>,
}

/// Per-variable probe scores keyed by variable name.
pub type ProbeReport = BTreeMap<String, VariableScore>;

/// A variable to probe: name plus train and optional validation rows.
pub struct ProbeTarget<'a> {
    pub name: &'a str,
    pub train: ArrayView2<'a, f32>,
    pub val: Option<ArrayView2<'a, f32>>,
}

pub fn probe_variables(
    z_train: ArrayView2<f32>,
    z_val: Option<ArrayView2<f32>>,
    targets: &[ProbeTarget<'_>],
    method: ProbeMethod,
    gd: &GdProbeConfig,
) -> Result<ProbeReport> {
    let mut report = ProbeReport::new();
    for target in targets {
        let fit = fit_linear_probe_with(z_train, target.train, method, gd)?;
        let val = match (z_val, target.val) {
            (Some(zv), Some(tv)) => Some(fit.score(zv, tv)?),
            _ => None,
        };
        report.insert(
            target.name.to_string(),
            VariableScore {
                train_r2: fit.r2_mean,
                val_r2: val.as_deref().map(mean_of),
                train_r2_per_dim: fit.r2_per_dim.clone(),
                val_r2_per_dim: val,
            },
        );
    }
    Ok(report)
}

//! Additive trend + weekly seasonality regression.
//!
//! y(t) = a + b·t + Σ_j δ_j (t − c_j)_+ + Σ_k [α_k sin(2πkt/7) + β_k cos(2πkt/7)]
//!
//! Changepoints c_j sit at the 25/50/75% positions of the training index and
//! only the slope changes δ_j are penalized. Time is scaled to [0, 1] over the
//! training window and y is standardized before the fit.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::{training_window, FittedModel, ForecastSpec, ModelInfo, PerSeries, Strategy, StrategyKind, UnivariateModel};
use crate::error::{Error, Result};
use crate::linalg::ridge_diag;
use crate::series::{mean, std_dev};

pub const MIN_ADDITIVE_LEN: usize = 8;
pub const SLOPE_CHANGE_PENALTY: f64 = 0.5;
pub const FOURIER_ORDER: usize = 3;
const PERIOD: f64 = 7.0;
const CHANGEPOINT_QUANTILES: [f64; 3] = [0.25, 0.5, 0.75];
/// Numerical jitter on the unpenalized columns.
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct AdditiveModel {
    n: usize,
    changepoints: Vec<usize>,
    beta: Vec<f64>,
    center: f64,
    scale: f64,
}

fn row(t: f64, n: usize, changepoints: &[usize]) -> Vec<f64> {
    let span = (n - 1) as f64;
    let ts = t / span;
    let mut r = vec![1.0, ts];
    for &c in changepoints {
        r.push((ts - c as f64 / span).max(0.0));
    }
    for k in 1..=FOURIER_ORDER {
        let angle = 2.0 * PI * k as f64 * t / PERIOD;
        r.push(angle.sin());
        r.push(angle.cos());
    }
    r
}

pub fn fit_additive(x: &[f64]) -> Result<AdditiveModel> {
    let n = x.len();
    if n < MIN_ADDITIVE_LEN {
        return Err(Error::insufficient(
            "fit_additive_forecast",
            format!("{n} points; at least {MIN_ADDITIVE_LEN} required"),
        ));
    }
    let changepoints: Vec<usize> = CHANGEPOINT_QUANTILES
        .iter()
        .map(|q| (q * (n - 1) as f64).round() as usize)
        .collect();
    let center = mean(x);
    let sd = std_dev(x, 0);
    let scale = if sd > 1e-12 * center.abs().max(1.0) { sd } else { 1.0 };
    let y = DVector::from_iterator(n, x.iter().map(|v| (v - center) / scale));
    let rows: Vec<Vec<f64>> = (0..n).map(|t| row(t as f64, n, &changepoints)).collect();
    let cols = rows[0].len();
    let design = DMatrix::from_fn(n, cols, |i, j| rows[i][j]);
    let penalty: Vec<f64> = (0..cols)
        .map(|j| if (2..2 + changepoints.len()).contains(&j) { SLOPE_CHANGE_PENALTY } else { JITTER })
        .collect();
    let beta = ridge_diag(&design, &y, &penalty)
        .ok_or_else(|| Error::insufficient("fit_additive_forecast", "singular design"))?;
    Ok(AdditiveModel {
        n,
        changepoints,
        beta: beta.iter().copied().collect(),
        center,
        scale,
    })
}

impl AdditiveModel {
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        (self.n..self.n + horizon)
            .map(|t| {
                let r = row(t as f64, self.n, &self.changepoints);
                let z: f64 = r.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
                self.center + self.scale * z
            })
            .collect()
    }

    /// Fourier coefficients (sin, cos pairs) in standardized units.
    pub fn seasonal_coefficients(&self) -> &[f64] {
        &self.beta[2 + self.changepoints.len()..]
    }
}

pub(super) struct AdditiveStrategy;

impl UnivariateModel for AdditiveModel {
    fn predict_one(&self, horizon: usize) -> Vec<f64> {
        self.forecast(horizon)
    }

    fn info(&self, name: &str) -> ModelInfo {
        ModelInfo::Additive {
            marker: name.to_owned(),
            changepoints: self.changepoints.clone(),
        }
    }
}

impl Strategy for AdditiveStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Additive
    }

    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, _seed: u64) -> Result<Box<dyn FittedModel>> {
        let models = history
            .iter()
            .map(|x| fit_additive(training_window(x, spec, "fit_additive_forecast")?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(PerSeries { models }))
    }
}

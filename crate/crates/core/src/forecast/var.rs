//! Vector autoregression with per-equation OLS and AIC lag selection.

use log::debug;
use nalgebra::{DMatrix, DVector};

use super::{training_window, FittedModel, ForecastSpec, ModelInfo, Strategy, StrategyKind};
use crate::error::{Error, Result};
use crate::linalg::{ols, ridge_diag, spectral_radius};
use crate::series::{adf_test, mean, std_dev, AdfOptions, LinearTrend, MIN_ADF_LEN};

const MAX_LAG: usize = 4;
const RIDGE_FALLBACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct VarFitOptions {
    /// Zero every cross-series coefficient (each equation uses its own lags only).
    pub diagonal_only: bool,
}

/// x_t = c + A_1 x_{t-1} + ... + A_p x_{t-p} + u_t
#[derive(Debug, Clone)]
pub struct VarModel {
    pub k: usize,
    pub p: usize,
    /// `coefs[l]` is A_{l+1}, k×k, row = equation.
    pub coefs: Vec<DMatrix<f64>>,
    pub intercept: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub ridge_fallback: bool,
    /// Largest eigenvalue modulus of the companion matrix.
    pub spectral_radius: f64,
}

impl VarModel {
    /// Recursive point forecast from the last `p` rows of `data` (k series).
    pub fn forecast(&self, data: &[Vec<f64>], horizon: usize) -> Vec<Vec<f64>> {
        let n = data[0].len();
        let mut hist: Vec<DVector<f64>> = (n - self.p..n)
            .map(|t| DVector::from_fn(self.k, |i, _| data[i][t]))
            .collect();
        let mut out = vec![Vec::with_capacity(horizon); self.k];
        for _ in 0..horizon {
            let t = hist.len();
            let mut next = self.intercept.clone();
            for (l, a) in self.coefs.iter().enumerate() {
                next += a * &hist[t - 1 - l];
            }
            for i in 0..self.k {
                out[i].push(next[i]);
            }
            hist.push(next);
        }
        out
    }

    fn companion(&self) -> DMatrix<f64> {
        let (k, p) = (self.k, self.p);
        let mut m = DMatrix::zeros(k * p, k * p);
        for (l, a) in self.coefs.iter().enumerate() {
            m.view_mut((0, l * k), (k, k)).copy_from(a);
        }
        for i in k..k * p {
            m[(i, i - k)] = 1.0;
        }
        m
    }
}

/// Observations available to a VAR(p) over `sample_lag` presample rows.
fn feasible(n: usize, k: usize, p: usize) -> bool {
    n > p && n - p > k * p + 1
}

/// Fits VAR(p) on rows `sample_lag..n` (rows before that are presample).
fn fit_on_sample(data: &[Vec<f64>], p: usize, sample_lag: usize, opts: VarFitOptions) -> Result<VarModel> {
    let k = data.len();
    let n = data[0].len();
    if !feasible(n - (sample_lag - p), k, p) {
        return Err(Error::insufficient("fit_var_forecast", format!("{n} points for k={k}, p={p}")));
    }
    let rows = n - sample_lag;
    let regressors = 1 + k * p;
    let design = DMatrix::from_fn(rows, regressors, |r, c| {
        let t = r + sample_lag;
        if c == 0 {
            1.0
        } else {
            let lag = (c - 1) / k + 1;
            let series = (c - 1) % k;
            data[series][t - lag]
        }
    });
    let mut coefs = vec![DMatrix::zeros(k, k); p];
    let mut intercept = DVector::zeros(k);
    let mut resid = DMatrix::zeros(rows, k);
    let mut ridge_fallback = false;
    for eq in 0..k {
        let y = DVector::from_fn(rows, |r, _| data[eq][r + sample_lag]);
        // columns this equation may use
        let cols: Vec<usize> = (0..regressors)
            .filter(|&c| !opts.diagonal_only || c == 0 || (c - 1) % k == eq)
            .collect();
        let x = design.select_columns(&cols);
        let beta = match ols(&x, &y, 0.0) {
            Some(f) => f.beta,
            None => {
                ridge_fallback = true;
                // the intercept stays unpenalized
                let penalty: Vec<f64> = cols.iter().map(|&c| if c == 0 { 0.0 } else { RIDGE_FALLBACK }).collect();
                ridge_diag(&x, &y, &penalty)
                    .ok_or_else(|| Error::insufficient("fit_var_forecast", "design singular even with ridge"))?
            }
        };
        resid.set_column(eq, &(&y - &x * &beta));
        for (b, &c) in beta.iter().zip(&cols) {
            if c == 0 {
                intercept[eq] = *b;
            } else {
                let lag = (c - 1) / k;
                let series = (c - 1) % k;
                coefs[lag][(eq, series)] = *b;
            }
        }
    }
    if ridge_fallback {
        debug!("VAR({p}) design singular; used ridge lambda={RIDGE_FALLBACK}");
    }
    let sigma = resid.transpose() * &resid / rows as f64;
    let mut model = VarModel {
        k,
        p,
        coefs,
        intercept,
        sigma,
        ridge_fallback,
        spectral_radius: 0.0,
    };
    model.spectral_radius = spectral_radius(&model.companion());
    if model.spectral_radius >= 1.0 {
        debug!("VAR({p}) companion spectral radius {:.4} >= 1", model.spectral_radius);
    }
    Ok(model)
}

/// OLS VAR(p) on the full sample.
pub fn fit_var(data: &[Vec<f64>], p: usize, opts: VarFitOptions) -> Result<VarModel> {
    check_data(data)?;
    if p == 0 {
        return Err(Error::invalid("VAR lag order", "p must be >= 1"));
    }
    fit_on_sample(data, p, p, opts)
}

fn check_data(data: &[Vec<f64>]) -> Result<()> {
    if data.len() < 2 {
        return Err(Error::insufficient("fit_var_forecast", "VAR needs at least 2 series; use arima"));
    }
    let n = data[0].len();
    if let Some(bad) = data.iter().find(|s| s.len() != n) {
        return Err(Error::LengthMismatch {
            op: "fit_var_forecast",
            left: n,
            right: bad.len(),
        });
    }
    Ok(())
}

/// AIC over p = 1..=min(4, feasible), all candidates on the common sample;
/// the winner is refit on its full sample.
pub fn select_and_fit_var(data: &[Vec<f64>]) -> Result<VarModel> {
    check_data(data)?;
    let k = data.len();
    let n = data[0].len();
    let max_p = (1..=MAX_LAG).filter(|&p| feasible(n, k, p)).max().ok_or_else(|| {
        Error::insufficient("fit_var_forecast", format!("{n} points too few for VAR(1) on {k} series"))
    })?;
    let mut best: Option<(f64, usize)> = None;
    for p in 1..=max_p {
        let Ok(m) = fit_on_sample(data, p, max_p, VarFitOptions::default()) else {
            continue;
        };
        let t = (n - max_p) as f64;
        let det = m.sigma.determinant();
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let aic = det.ln() + 2.0 * (k * k * p + k) as f64 / t;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, p));
        }
    }
    // A degenerate residual covariance at every order (exact fits) leaves no
    // AIC ranking; the smallest lag is the conservative choice.
    let p = best.map_or(1, |(_, p)| p);
    fit_var(data, p, VarFitOptions::default())
}

pub(super) struct VarStrategy;

struct FittedVar {
    model: VarModel,
    data: Vec<Vec<f64>>,
    centers: Vec<f64>,
    scales: Vec<f64>,
    trends: Vec<Option<LinearTrend>>,
}

impl FittedModel for FittedVar {
    fn predict(&self, horizon: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.data[0].len();
        let mut out = self.model.forecast(&self.data, horizon);
        for (i, series) in out.iter_mut().enumerate() {
            for (h, v) in series.iter_mut().enumerate() {
                let trend = self.trends[i].map_or(0.0, |tr| tr.at((n + h) as f64));
                *v = self.centers[i] + self.scales[i] * (*v + trend);
            }
        }
        Ok(out)
    }

    fn describe(&self, _names: &[String]) -> Vec<ModelInfo> {
        vec![ModelInfo::Var {
            p: self.model.p,
            detrended: self.trends.iter().map(Option::is_some).collect(),
            ridge_fallback: self.model.ridge_fallback,
            spectral_radius: self.model.spectral_radius,
        }]
    }
}

impl Strategy for VarStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Var
    }

    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, _seed: u64) -> Result<Box<dyn FittedModel>> {
        if history.len() < 2 {
            return Err(Error::insufficient("fit_var_forecast", "VAR needs at least 2 series; use arima"));
        }
        let opts = AdfOptions::default();
        let mut data = Vec::with_capacity(history.len());
        let mut centers = Vec::new();
        let mut scales = Vec::new();
        let mut trends = Vec::new();
        for x in history {
            let w = training_window(x, spec, "fit_var_forecast")?;
            let c = mean(w);
            let sd = std_dev(w, 0);
            let s = if sd > 1e-12 * c.abs().max(1.0) { sd } else { 1.0 };
            let z: Vec<f64> = w.iter().map(|v| (v - c) / s).collect();
            let stationary = z.len() >= MIN_ADF_LEN && adf_test(&z, &opts).is_ok_and(|r| r.is_stationary);
            let trend = if stationary || sd == 0.0 { None } else { Some(LinearTrend::fit(&z)?) };
            let z = match trend {
                Some(tr) => z.iter().enumerate().map(|(t, v)| v - tr.at(t as f64)).collect(),
                None => z,
            };
            data.push(z);
            centers.push(c);
            scales.push(s);
            trends.push(trend);
        }
        let model = select_and_fit_var(&data)?;
        Ok(Box::new(FittedVar {
            model,
            data,
            centers,
            scales,
            trends,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::fit_ar_ols;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn simulate(a: [[f64; 2]; 2], sigma: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut x = vec![vec![0.0; n]; 2];
        for t in 1..n {
            let prev = [x[0][t - 1], x[1][t - 1]];
            for i in 0..2 {
                x[i][t] = a[i][0] * prev[0] + a[i][1] * prev[1] + noise.sample(&mut rng);
            }
        }
        x
    }

    #[test]
    fn recovers_coupled_var1() {
        let a = [[0.5, 0.3], [0.0, 0.5]];
        let m = fit_var(&simulate(a, 0.05, 300, 1), 1, VarFitOptions::default()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.coefs[0][(i, j)] - a[i][j]).abs() < 0.15, "{}", m.coefs[0]);
            }
        }
        assert!(m.spectral_radius < 1.0);
    }

    #[test]
    fn noiseless_diagonal_decay() {
        // identical series make the design collinear, so this also covers the ridge path
        let x: Vec<f64> = (0..12).map(|t| 0.5f64.powi(t)).collect();
        let data = vec![x.clone(), x.clone()];
        let m = select_and_fit_var(&data).unwrap();
        let f = m.forecast(&data, 7);
        assert!(m.ridge_fallback);
        let last = x[11];
        for s in &f {
            for (h, v) in s.iter().enumerate() {
                let want = last * 0.5f64.powi(h as i32 + 1);
                assert!((v - want).abs() < 1e-6, "{v} vs {want}");
            }
        }
    }

    #[test]
    fn diagonal_constraint_equals_independent_ar() {
        let data = simulate([[0.5, 0.3], [0.1, 0.4]], 1.0, 150, 4);
        let m = fit_var(&data, 2, VarFitOptions { diagonal_only: true }).unwrap();
        let f = m.forecast(&data, 5);
        for i in 0..2 {
            let (c, phi) = fit_ar_ols(&data[i], 2).unwrap();
            let mut h = data[i].clone();
            for step in 0..5 {
                let t = h.len();
                let v = c + phi[0] * h[t - 1] + phi[1] * h[t - 2];
                assert!((f[i][step] - v).abs() < 1e-8);
                h.push(v);
            }
        }
    }

    #[test]
    fn too_few_points() {
        let data = vec![vec![1.0, 2.0, 3.0], vec![3.0, 1.0, 2.0]];
        assert!(matches!(select_and_fit_var(&data), Err(Error::InsufficientData { .. })));
        assert!(select_and_fit_var(&[vec![1.0; 30]]).is_err());
    }
}

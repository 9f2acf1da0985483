//! ARIMA(p, d, q) by conditional sum of squares.
//!
//! The training window is standardized, optionally detrended, differenced
//! `d` times, and an ARMA(p, q) with constant is fit to what remains. Orders
//! come from an AIC search unless forced.

use log::debug;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::optim::{nelder_mead, NelderMeadOptions};
use super::{training_window, FittedModel, ForecastSpec, ModelInfo, PerSeries, Strategy, StrategyKind, UnivariateModel};
use crate::error::{Error, Result};
use crate::linalg::{ar_companion, ols, spectral_radius};
use crate::series::{adf_test, mean, std_dev, AdfOptions, LinearTrend, MIN_ADF_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArimaOptions {
    /// Skip differencing selection and the order search.
    pub order: Option<OrderSpec>,
    pub max_p: usize,
    pub max_q: usize,
}

impl Default for ArimaOptions {
    fn default() -> Self {
        ArimaOptions {
            order: None,
            max_p: 3,
            max_q: 3,
        }
    }
}

/// Fitted orders and coefficients. `c` is the constant of the ARMA on the
/// working series (after detrending and differencing) in the input's units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub c: f64,
}

#[derive(Debug, Clone)]
pub struct ArimaModel {
    order: ArimaOrder,
    /// Constant in standardized units.
    c_std: f64,
    center: f64,
    scale: f64,
    trend: Option<LinearTrend>,
    /// Standardized (and detrended) levels before differencing.
    levels: Vec<f64>,
    /// Working series and its conditional residuals.
    work: Vec<f64>,
    resid: Vec<f64>,
    pub aic: f64,
    pub fallback: bool,
    pub ar_stable: bool,
}

impl ArimaModel {
    pub fn order(&self) -> &ArimaOrder {
        &self.order
    }

    pub fn detrended(&self) -> bool {
        self.trend.is_some()
    }

    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        let ArimaOrder { p, d, q, ref phi, ref theta, .. } = self.order;
        let mut w = self.work.clone();
        let mut e = self.resid.clone();
        let n0 = w.len();
        for _ in 0..horizon {
            let t = w.len();
            let mut v = self.c_std;
            for i in 1..=p {
                v += phi[i - 1] * w.get(t.wrapping_sub(i)).copied().unwrap_or(0.0);
            }
            for j in 1..=q {
                if t >= j {
                    v += theta[j - 1] * e[t - j];
                }
            }
            w.push(v);
            e.push(0.0);
        }
        let mut path: Vec<f64> = w[n0..].to_vec();
        // undo differencing, innermost first
        for level in (0..d).rev() {
            let mut series = self.levels.clone();
            for _ in 0..level {
                series = difference(&series);
            }
            let mut last = *series.last().unwrap();
            for v in path.iter_mut() {
                last += *v;
                *v = last;
            }
        }
        let n = self.levels.len();
        path.iter()
            .enumerate()
            .map(|(k, z)| {
                let trend = self.trend.map_or(0.0, |tr| tr.at((n + k) as f64));
                self.center + self.scale * (z + trend)
            })
            .collect()
    }
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// Conditional residuals of ARMA(p, q) with constant; pre-sample shocks are zero.
fn css_residuals(w: &[f64], p: usize, q: usize, c: f64, phi: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; w.len()];
    for t in p..w.len() {
        let mut pred = c;
        for i in 1..=p {
            pred += phi[i - 1] * w[t - i];
        }
        for j in 1..=q {
            if t >= j {
                pred += theta[j - 1] * e[t - j];
            }
        }
        e[t] = w[t] - pred;
    }
    e
}

fn feasible(n: usize, p: usize, d: usize, q: usize) -> bool {
    // at least one residual degree of freedom beyond the p+q+1 parameters
    n >= p + d + q + 2 && n >= d + p && n - d - p > p + q + 1
}

/// OLS fit of x_t = c + Σ φ_i x_{t-i}, i.e. the exact CSS solution for q = 0.
pub fn fit_ar_ols(x: &[f64], p: usize) -> Option<(f64, Vec<f64>)> {
    if x.len() <= 2 * p + 1 {
        return None;
    }
    let rows = x.len() - p;
    let design = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { x[r + p - c] });
    let y = DVector::from_fn(rows, |r, _| x[r + p]);
    let fit = ols(&design, &y, 0.0).or_else(|| ols(&design, &y, 1e-8))?;
    Some((fit.beta[0], fit.beta.iter().skip(1).copied().collect()))
}

/// Yule–Walker AR(p) with the mean-implied constant.
fn yule_walker(w: &[f64], p: usize) -> (f64, Vec<f64>) {
    let m = mean(w);
    let n = w.len();
    let acov = |k: usize| (k..n).map(|t| (w[t] - m) * (w[t - k] - m)).sum::<f64>() / n as f64;
    let gamma: Vec<f64> = (0..=p).map(acov).collect();
    if p == 0 || gamma[0] <= 0.0 {
        return (m, vec![0.0; p]);
    }
    let r = DMatrix::from_fn(p, p, |i, j| gamma[i.abs_diff(j)]);
    let rhs = DVector::from_fn(p, |i, _| gamma[i + 1]);
    let phi: Vec<f64> = r
        .lu()
        .solve(&rhs)
        .map(|v| v.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; p]);
    let c = m * (1.0 - phi.iter().sum::<f64>());
    (c, phi)
}

struct ArmaFit {
    p: usize,
    q: usize,
    c: f64,
    phi: Vec<f64>,
    theta: Vec<f64>,
    aic: f64,
    resid: Vec<f64>,
}

fn fit_arma(w: &[f64], p: usize, q: usize) -> ArmaFit {
    let (c0, phi0) = if p == 0 {
        (mean(w), Vec::new())
    } else {
        fit_ar_ols(w, p).unwrap_or_else(|| yule_walker(w, p))
    };
    let mut x0 = vec![c0];
    x0.extend(&phi0);
    x0.extend(std::iter::repeat_n(0.0, q));

    let sse = |params: &[f64]| {
        let e = css_residuals(w, p, q, params[0], &params[1..=p], &params[p + 1..]);
        e[p..].iter().map(|v| v * v).sum::<f64>()
    };
    let min = if q == 0 && p > 0 {
        // OLS already minimizes the CSS objective exactly
        super::optim::Minimum {
            value: sse(&x0),
            x: x0,
            iterations: 0,
            converged: true,
        }
    } else {
        nelder_mead(sse, &x0, &NelderMeadOptions::default())
    };
    let c = min.x[0];
    let phi = min.x[1..=p].to_vec();
    let theta = min.x[p + 1..].to_vec();
    let m = (w.len() - p) as f64;
    // floor keeps exact fits comparable; ties then go to the smaller model
    let var_floor = 1e-14 * std_dev(w, 0).powi(2).max(1e-300);
    let sigma2 = (min.value / m).max(var_floor);
    let aic = m * sigma2.ln() + 2.0 * (p + q + 1) as f64;
    let resid = css_residuals(w, p, q, c, &phi, &theta);
    ArmaFit {
        p,
        q,
        c,
        phi,
        theta,
        aic: if min.value.is_finite() { aic } else { f64::NAN },
        resid,
    }
}

/// Picks (d, detrend) from the stationarity of the standardized window.
fn choose_differencing(z: &[f64]) -> (usize, bool) {
    let opts = AdfOptions::default();
    let stationary = |x: &[f64]| {
        x.len() >= MIN_ADF_LEN && adf_test(x, &opts).map(|r| r.is_stationary).unwrap_or(false)
    };
    if z.len() < MIN_ADF_LEN {
        return (0, true);
    }
    if stationary(z) {
        return (0, false);
    }
    let trend = LinearTrend::fit(z).expect("length checked");
    let resid: Vec<f64> = z.iter().enumerate().map(|(t, v)| v - trend.at(t as f64)).collect();
    if stationary(&resid) {
        return (0, true);
    }
    let d1 = difference(z);
    if stationary(&d1) || d1.len() - 1 < MIN_ADF_LEN {
        return (1, false);
    }
    (2, false)
}

/// Fits ARIMA on `x` (the whole slice is the training window).
pub fn fit_arima(x: &[f64], opts: &ArimaOptions) -> Result<ArimaModel> {
    let n = x.len();
    if n < 2 {
        return Err(Error::insufficient("fit_arima_forecast", format!("{n} points")));
    }
    let center = mean(x);
    let sd = std_dev(x, 0);
    if !(sd > 1e-12 * center.abs().max(1.0)) {
        // constant window
        return Ok(ArimaModel {
            order: ArimaOrder { p: 0, d: 0, q: 0, phi: vec![], theta: vec![], c: center },
            c_std: 0.0,
            center,
            scale: 1.0,
            trend: None,
            levels: vec![0.0; n],
            work: vec![0.0; n],
            resid: vec![0.0; n],
            aic: f64::NEG_INFINITY,
            fallback: false,
            ar_stable: true,
        });
    }
    let z: Vec<f64> = x.iter().map(|v| (v - center) / sd).collect();

    let (d, detrend) = match opts.order {
        Some(o) => (o.d, false),
        None => choose_differencing(&z),
    };
    let trend = detrend.then(|| LinearTrend::fit(&z).expect("n >= 2"));
    let levels: Vec<f64> = match trend {
        Some(tr) => z.iter().enumerate().map(|(t, v)| v - tr.at(t as f64)).collect(),
        None => z.clone(),
    };
    let mut w = levels.clone();
    for _ in 0..d {
        w = difference(&w);
    }

    let candidates: Vec<(usize, usize)> = match opts.order {
        Some(o) => {
            if !feasible(n, o.p, o.d, o.q) {
                return Err(Error::insufficient(
                    "fit_arima_forecast",
                    format!("{n} points cannot fit order ({}, {}, {})", o.p, o.d, o.q),
                ));
            }
            vec![(o.p, o.q)]
        }
        None => (0..=opts.max_p)
            .flat_map(|p| (0..=opts.max_q).map(move |q| (p, q)))
            .filter(|&(p, q)| feasible(n, p, d, q))
            .collect(),
    };
    if candidates.is_empty() {
        return Err(Error::insufficient("fit_arima_forecast", format!("no feasible order for {n} points")));
    }

    let mut best: Option<ArmaFit> = None;
    for (p, q) in candidates {
        let fit = fit_arma(&w, p, q);
        if fit.aic.is_nan() {
            continue;
        }
        if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
            best = Some(fit);
        }
    }

    let (arma, mut fallback) = match best {
        Some(b) => (b, false),
        None => {
            let p = opts.order.map_or(1, |o| o.p.max(1)).min(w.len().saturating_sub(2)).max(1);
            let (c, phi) = yule_walker(&w, p);
            let resid = css_residuals(&w, p, 0, c, &phi, &[]);
            (ArmaFit { p, q: 0, c, phi, theta: vec![], aic: f64::NAN, resid }, true)
        }
    };

    let mut model = build_model(arma, d, center, sd, trend, levels.clone(), w.clone());
    if model.forecast(1).iter().any(|v| !v.is_finite()) && !fallback {
        debug!("ARIMA CSS fit diverged; falling back to Yule-Walker AR");
        let p = model.order.p.max(1).min(w.len().saturating_sub(2)).max(1);
        let (c, phi) = yule_walker(&w, p);
        let resid = css_residuals(&w, p, 0, c, &phi, &[]);
        let arma = ArmaFit { p, q: 0, c, phi, theta: vec![], aic: f64::NAN, resid };
        model = build_model(arma, d, center, sd, trend, levels, w);
        fallback = true;
    }
    model.fallback = fallback;
    Ok(model)
}

fn build_model(
    arma: ArmaFit,
    d: usize,
    center: f64,
    scale: f64,
    trend: Option<LinearTrend>,
    levels: Vec<f64>,
    work: Vec<f64>,
) -> ArimaModel {
    let ar_stable = arma.p == 0 || spectral_radius(&ar_companion(&arma.phi)) < 1.0;
    if !ar_stable {
        debug!("ARIMA fit is not stationary; AR coefficients {:?}", arma.phi);
    }
    let c_orig = if d == 0 && trend.is_none() {
        scale * arma.c + center * (1.0 - arma.phi.iter().sum::<f64>())
    } else {
        scale * arma.c
    };
    ArimaModel {
        order: ArimaOrder {
            p: arma.p,
            d,
            q: arma.q,
            phi: arma.phi,
            theta: arma.theta,
            c: c_orig,
        },
        c_std: arma.c,
        center,
        scale,
        trend,
        levels,
        work,
        resid: arma.resid,
        aic: arma.aic,
        fallback: false,
        ar_stable,
    }
}

pub(super) struct ArimaStrategy;

impl UnivariateModel for ArimaModel {
    fn predict_one(&self, horizon: usize) -> Vec<f64> {
        self.forecast(horizon)
    }

    fn info(&self, name: &str) -> ModelInfo {
        ModelInfo::Arima {
            marker: name.to_owned(),
            p: self.order.p,
            d: self.order.d,
            q: self.order.q,
            detrended: self.detrended(),
            fallback: self.fallback,
            ar_stable: self.ar_stable,
        }
    }
}

impl Strategy for ArimaStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Arima
    }

    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, _seed: u64) -> Result<Box<dyn FittedModel>> {
        let models = history
            .iter()
            .map(|x| fit_arima(training_window(x, spec, "fit_arima_forecast")?, &spec.arima))
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(PerSeries { models }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn forced(p: usize, d: usize, q: usize) -> ArimaOptions {
        ArimaOptions {
            order: Some(OrderSpec { p, d, q }),
            ..Default::default()
        }
    }

    fn ar1(phi: f64, sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut x = vec![0.0; n];
        for t in 1..n {
            x[t] = phi * x[t - 1] + noise.sample(&mut rng);
        }
        x
    }

    #[test]
    fn deterministic_ar1_recursion() {
        let x: Vec<f64> = (0..30).map(|t| 0.8f64.powi(t)).collect();
        let m = fit_arima(&x, &forced(1, 0, 0)).unwrap();
        let last = *x.last().unwrap();
        for (k, f) in m.forecast(7).iter().enumerate() {
            let want = last * 0.8f64.powi(k as i32 + 1);
            assert!((f - want).abs() <= 1e-9 * want.abs().max(1e-3), "step {k}: {f} vs {want}");
        }
    }

    #[test]
    fn recovers_ar1_coefficient() {
        let phis: Vec<f64> = (0..5)
            .map(|s| fit_arima(&ar1(0.8, 0.1, 200, s), &forced(1, 0, 0)).unwrap().order().phi[0])
            .collect();
        for phi in phis {
            assert!((0.6..=1.0).contains(&phi), "{phi}");
        }
    }

    #[test]
    fn infeasible_orders_are_excluded() {
        let x = [1.0, 3.0, 2.0];
        assert!(matches!(fit_arima(&x, &forced(3, 0, 0)), Err(Error::InsufficientData { .. })));
        // with the full grid only the tiny orders remain
        let m = fit_arima(&[1.0, 3.0, 2.0, 4.0, 3.5, 5.0, 4.0], &ArimaOptions::default()).unwrap();
        assert!(feasible(7, m.order().p, m.order().d, m.order().q));
    }

    #[test]
    fn ar_forecast_equals_explicit_recursion() {
        let x = ar1(0.6, 1.0, 120, 3).iter().map(|v| v + 10.0).collect::<Vec<_>>();
        let m = fit_arima(&x, &forced(2, 0, 0)).unwrap();
        let o = m.order();
        let mut hist = x.clone();
        let mut want = Vec::new();
        for _ in 0..7 {
            let t = hist.len();
            let v = o.c + o.phi[0] * hist[t - 1] + o.phi[1] * hist[t - 2];
            hist.push(v);
            want.push(v);
        }
        for (a, b) in m.forecast(7).iter().zip(&want) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn arma_fit_is_affine_equivariant() {
        let x = ar1(0.5, 1.0, 80, 11);
        let moved: Vec<f64> = x.iter().map(|v| 3.0 * v + 40.0).collect();
        let a = fit_arima(&x, &ArimaOptions::default()).unwrap().forecast(7);
        let b = fit_arima(&moved, &ArimaOptions::default()).unwrap().forecast(7);
        for (u, v) in a.iter().zip(&b) {
            assert!((3.0 * u + 40.0 - v).abs() < 1e-8, "{u} {v}");
        }
    }

    #[test]
    fn differenced_random_walk_with_drift() {
        let steps = ar1(0.0, 0.2, 60, 5);
        let x: Vec<f64> = steps.iter().scan(0.0, |a, e| { *a += 1.0 + e; Some(*a) }).collect();
        let m = fit_arima(&x, &ArimaOptions::default()).unwrap();
        let f = m.forecast(7);
        let last = *x.last().unwrap();
        // drift continues upward
        assert!(f[6] > last + 3.0, "{f:?} from {last} with {:?}", m.order());
    }

    #[test]
    fn constant_window_forecasts_constant() {
        let m = fit_arima(&[2.5; 14], &ArimaOptions::default()).unwrap();
        assert_eq!(m.forecast(3), vec![2.5; 3]);
    }

    #[test]
    fn ma1_recovery() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let e: Vec<f64> = (0..400).map(|_| noise.sample(&mut rng)).collect();
        let x: Vec<f64> = (1..400).map(|t| e[t] + 0.6 * e[t - 1]).collect();
        let m = fit_arima(&x, &forced(0, 0, 1)).unwrap();
        assert!((m.order().theta[0] - 0.6).abs() < 0.1, "{:?}", m.order());
    }
}

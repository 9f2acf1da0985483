//! Augmented Dickey–Fuller test with a constant term.
//!
//! Lag order is chosen by AIC with every candidate fit on the common sample
//! left after the largest lag, then the chosen order is refit on its full
//! sample. The p-value uses MacKinnon's (1994) response-surface approximation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::DailySeries;
use crate::error::{Error, Result};
use crate::linalg::ols;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub statistic: f64,
    pub p_value: f64,
    pub is_stationary: bool,
    pub lags_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdfOptions {
    /// Largest lag considered; `None` means ⌊(n-1)^(1/3)⌋.
    pub max_lag: Option<usize>,
    pub significance: f64,
}

impl Default for AdfOptions {
    fn default() -> Self {
        AdfOptions {
            max_lag: None,
            significance: 0.05,
        }
    }
}

pub const MIN_ADF_LEN: usize = 10;

pub fn stationarity_check(s: &DailySeries) -> Result<StationarityReport> {
    adf_test(s.values(), &AdfOptions::default())
}

pub fn adf_test(x: &[f64], opts: &AdfOptions) -> Result<StationarityReport> {
    let n = x.len();
    if n < MIN_ADF_LEN {
        return Err(Error::too_short("stationarity_check", MIN_ADF_LEN, n));
    }
    let default_lag = ((n - 1) as f64).cbrt().floor() as usize;
    // cbrt can land a hair below an exact cube
    let default_lag = if (default_lag + 1).pow(3) <= n - 1 {
        default_lag + 1
    } else {
        default_lag
    };
    let max_lag = opts.max_lag.unwrap_or(default_lag).min(n / 2 - 2);

    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();

    let mut best: Option<(f64, usize)> = None;
    for lag in 0..=max_lag {
        let Some(fit) = adf_regression(x, &dx, lag, max_lag) else {
            continue;
        };
        let aic = fit.aic;
        if best.is_none_or(|(b, _)| aic < b) {
            best = Some((aic, lag));
        }
    }
    let lags_used = best.map(|(_, l)| l).unwrap_or(0);

    let statistic = match adf_regression(x, &dx, lags_used, lags_used) {
        Some(fit) => fit.tvalue,
        // Only a perfectly collinear design lands here; no evidence either way.
        None => f64::NAN,
    };
    let p_value = if statistic.is_nan() {
        1.0
    } else {
        mackinnon_p(statistic)
    };
    Ok(StationarityReport {
        statistic,
        p_value,
        is_stationary: p_value < opts.significance,
        lags_used,
    })
}

struct AdfFit {
    aic: f64,
    tvalue: f64,
}

/// Δx_t = α + γ x_{t-1} + Σ β_i Δx_{t-i}, over rows that leave room for
/// `sample_lag` lagged differences.
fn adf_regression(x: &[f64], dx: &[f64], lag: usize, sample_lag: usize) -> Option<AdfFit> {
    let rows = dx.len().checked_sub(sample_lag)?;
    let cols = 2 + lag;
    if rows <= cols {
        return None;
    }
    let design = DMatrix::from_fn(rows, cols, |r, c| {
        let t = r + sample_lag; // index into dx
        match c {
            0 => x[t],
            1 => 1.0,
            j => dx[t - (j - 1)],
        }
    });
    let y = DVector::from_fn(rows, |r, _| dx[r + sample_lag]);
    let fit = ols(&design, &y, 0.0)?;
    let nobs = rows as f64;
    let llf = -nobs / 2.0 * ((2.0 * std::f64::consts::PI).ln() + (fit.ssr / nobs).ln() + 1.0);
    let aic = -2.0 * llf + 2.0 * cols as f64;
    let sigma2 = fit.ssr / (rows - cols) as f64;
    let se = (sigma2 * fit.xtx_inv[(0, 0)]).sqrt();
    let tvalue = if se > 0.0 {
        fit.beta[0] / se
    } else if fit.beta[0] < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    Some(AdfFit { aic, tvalue })
}

// MacKinnon (1994) response surface, constant-only regression, one series.
const TAU_MAX: f64 = 2.74;
const TAU_MIN: f64 = -18.83;
const TAU_STAR: f64 = -1.61;
const SMALL_P: [f64; 3] = [2.1659, 1.4412, 3.8269e-2];
const LARGE_P: [f64; 4] = [1.7339, 0.93202, -12.745e-2, -1.0368e-2];

/// Approximate p-value of an ADF t-statistic (constant, no trend).
pub fn mackinnon_p(stat: f64) -> f64 {
    if stat > TAU_MAX {
        return 1.0;
    }
    if stat < TAU_MIN {
        return 0.0;
    }
    let coefs: &[f64] = if stat <= TAU_STAR { &SMALL_P } else { &LARGE_P };
    let z = coefs.iter().rev().fold(0.0, |acc, c| acc * stat + c);
    Normal::standard().cdf(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn series(x: Vec<f64>) -> DailySeries {
        DailySeries::new(NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(), x)
    }

    fn white_noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn mackinnon_surface_matches_reference() {
        // statsmodels.tsa.adfvalues.mackinnonp(stat, "c", 1)
        let cases = [
            (-4.0, 0.0014105112530392603),
            (-2.86, 0.05020109988200309),
            (-1.0, 0.7532643012005655),
            (0.5, 0.9848730963065522),
        ];
        for (stat, want) in cases {
            let p = mackinnon_p(stat);
            assert!((p - want).abs() < 1e-10, "stat {stat}: {p} vs {want}");
        }
        assert_eq!(mackinnon_p(3.0), 1.0);
        assert_eq!(mackinnon_p(-20.0), 0.0);
    }

    #[test]
    fn white_noise_is_stationary() {
        let r = stationarity_check(&series(white_noise(7, 200))).unwrap();
        assert!(r.is_stationary, "{r:?}");
    }

    #[test]
    fn random_walk_is_not_stationary() {
        let steps = white_noise(7, 200);
        let walk: Vec<f64> = steps
            .iter()
            .scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            })
            .collect();
        let r = stationarity_check(&series(walk)).unwrap();
        assert!(!r.is_stationary, "{r:?}");
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(
            stationarity_check(&series(vec![1.0, 2.0, 3.0, 4.0, 5.0])),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn exact_geometric_decay_is_stationary() {
        let x: Vec<f64> = (0..20).map(|t| 0.5f64.powi(t)).collect();
        let r = stationarity_check(&series(x)).unwrap();
        assert!(r.is_stationary, "{r:?}");
    }
}

//! Granger causality by nested-regression F-test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::linalg::ols;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrangerResult {
    pub f: f64,
    pub p_value: f64,
    pub df_num: usize,
    pub df_denom: usize,
}

/// Tests whether lags 1..=max_lag of `x` improve the prediction of `y`
/// beyond y's own lags. Both regressions include a constant and use the
/// same n - max_lag observations.
pub fn granger_causality(x: &[f64], y: &[f64], max_lag: usize) -> Result<GrangerResult> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            op: "granger_causality",
            left: x.len(),
            right: y.len(),
        });
    }
    if max_lag == 0 {
        return Err(Error::invalid("max_lag", "must be >= 1"));
    }
    let n = y.len();
    if n <= 3 * max_lag {
        return Err(Error::too_short("granger_causality", 3 * max_lag + 1, n));
    }
    let l = max_lag;
    let rows = n - l;
    let df_denom = rows.checked_sub(2 * l + 1).filter(|d| *d > 0).ok_or_else(|| {
        Error::too_short("granger_causality", 3 * l + 2, n)
    })?;
    let target = DVector::from_fn(rows, |r, _| y[r + l]);
    let restricted = DMatrix::from_fn(rows, 1 + l, |r, c| if c == 0 { 1.0 } else { y[r + l - c] });
    let full = DMatrix::from_fn(rows, 1 + 2 * l, |r, c| match c {
        0 => 1.0,
        c if c <= l => y[r + l - c],
        c => x[r + l - (c - l)],
    });
    let fit = |m: &DMatrix<f64>| {
        ols(m, &target, 0.0)
            .or_else(|| ols(m, &target, 1e-10))
            .ok_or_else(|| Error::insufficient("granger_causality", "singular regression"))
    };
    let rss_r = fit(&restricted)?.ssr;
    let rss_u = fit(&full)?.ssr;
    let f = ((rss_r - rss_u) / l as f64) / (rss_u / df_denom as f64);
    let p_value = if f.is_finite() {
        let dist = FisherSnedecor::new(l as f64, df_denom as f64)
            .map_err(|e| Error::invalid("F distribution", e.to_string()))?;
        dist.sf(f.max(0.0)).clamp(0.0, 1.0)
    } else if rss_u == 0.0 && rss_r > 0.0 {
        0.0
    } else {
        1.0
    };
    Ok(GrangerResult {
        f,
        p_value,
        df_num: l,
        df_denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn noise(seed: u64, n: usize, sigma: f64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sigma).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn detects_planted_link() {
        let x = noise(1, 200, 1.0);
        let e = noise(2, 200, 0.1);
        let y: Vec<f64> = (0..200).map(|t| if t == 0 { e[0] } else { 0.8 * x[t - 1] + e[t] }).collect();
        let r = granger_causality(&x, &y, 2).unwrap();
        assert!(r.p_value < 0.01, "{r:?}");
        // reverse direction carries no information
        let back = granger_causality(&y, &x, 2).unwrap();
        assert!(back.p_value > 0.01, "{back:?}");
    }

    #[test]
    fn lag_too_large() {
        let x = noise(1, 30, 1.0);
        assert!(matches!(granger_causality(&x, &x, 10), Err(Error::TooShort { .. })));
        assert!(granger_causality(&x, &x[..29], 1).is_err());
    }
}

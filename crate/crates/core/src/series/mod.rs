//! Daily series and the primitives applied to them: trailing smoothing,
//! gradients, detrending, robust scaling and stationarity testing.

mod adf;

pub use adf::{adf_test, mackinnon_p, stationarity_check, AdfOptions, StationarityReport, MIN_ADF_LEN};

use chrono::{Days, NaiveDate};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contiguous day-indexed values: `values[k]` belongs to `start + k` days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    start: NaiveDate,
    values: Vec<f64>,
}

/// Named series sharing one calendar, in insertion order.
pub type SeriesMap = IndexMap<String, DailySeries>;

impl DailySeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Self {
        DailySeries { start, values }
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn date_at(&self, index: usize) -> NaiveDate {
        self.start + Days::new(index as u64)
    }

    /// Last covered day, or `None` when empty.
    pub fn end(&self) -> Option<NaiveDate> {
        self.len().checked_sub(1).map(|i| self.date_at(i))
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.len()).then_some(off as usize)
    }

    /// Same calendar, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        DailySeries::new(self.start, values)
    }

    /// Sub-series `[from, to)` by index.
    pub fn slice(&self, from: usize, to: usize) -> Self {
        DailySeries::new(self.date_at(from), self.values[from..to].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    Trailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingSpec {
    pub window_days: usize,
    pub alignment: Alignment,
}

impl Default for SmoothingSpec {
    fn default() -> Self {
        SmoothingSpec {
            window_days: 7,
            alignment: Alignment::Trailing,
        }
    }
}

impl SmoothingSpec {
    pub fn trailing(window_days: usize) -> Result<Self> {
        if window_days == 0 {
            return Err(Error::invalid("smoothing window", "window_days must be >= 1"));
        }
        Ok(SmoothingSpec {
            window_days,
            alignment: Alignment::Trailing,
        })
    }
}

/// Trailing mean; the first `w-1` points average the available prefix.
pub fn rolling_mean(s: &DailySeries, spec: &SmoothingSpec) -> DailySeries {
    s.with_values(rolling_mean_values(s.values(), spec.window_days.max(1)))
}

pub(crate) fn rolling_mean_values(x: &[f64], w: usize) -> Vec<f64> {
    // Windowed sums are recomputed rather than updated incrementally so the
    // result does not accumulate drift on long series.
    (0..x.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(w);
            x[lo..=t].iter().sum::<f64>() / (t + 1 - lo) as f64
        })
        .collect()
}

/// Central differences inside, one-sided differences at both ends.
pub fn gradient(s: &DailySeries) -> Result<DailySeries> {
    Ok(s.with_values(gradient_values(s.values())?))
}

pub(crate) fn gradient_values(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len();
    if n < 2 {
        return Err(Error::too_short("gradient", 2, n));
    }
    Ok((0..n)
        .map(|t| match t {
            0 => x[1] - x[0],
            t if t == n - 1 => x[n - 1] - x[n - 2],
            t => (x[t + 1] - x[t - 1]) / 2.0,
        })
        .collect())
}

/// Ordinary least-squares line over t = 0..n-1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrend {
    pub slope: f64,
    pub intercept: f64,
}

impl LinearTrend {
    pub fn at(&self, t: f64) -> f64 {
        self.intercept + self.slope * t
    }

    pub fn fit(x: &[f64]) -> Result<Self> {
        let n = x.len();
        if n < 2 {
            return Err(Error::too_short("linear_detrend", 2, n));
        }
        let nf = n as f64;
        let t_mean = (nf - 1.0) / 2.0;
        let x_mean = mean(x);
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let dt = t as f64 - t_mean;
            sxy += dt * (v - x_mean);
            sxx += dt * dt;
        }
        let slope = sxy / sxx;
        Ok(LinearTrend {
            slope,
            intercept: x_mean - slope * t_mean,
        })
    }
}

/// Removes the OLS line; returns residuals and the fitted line.
pub fn linear_detrend(s: &DailySeries) -> Result<(DailySeries, LinearTrend)> {
    let trend = LinearTrend::fit(s.values())?;
    let resid = s
        .values()
        .iter()
        .enumerate()
        .map(|(t, v)| v - trend.at(t as f64))
        .collect();
    Ok((s.with_values(resid), trend))
}

/// Quantile with linear interpolation between order statistics, h = (n-1)q.
/// `sorted` must be ascending and non-empty; `q` in [0, 1].
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of an unsorted sample.
pub fn quantile(x: &[f64], q: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Median/IQR scaling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScaleParams {
    pub median: f64,
    pub iqr: f64,
}

impl RobustScaleParams {
    pub fn from_values(x: &[f64]) -> Self {
        let mut v = x.to_vec();
        v.sort_by(f64::total_cmp);
        let median = quantile_sorted(&v, 0.5);
        let iqr = (quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)).max(0.0);
        RobustScaleParams { median, iqr }
    }

    pub fn divisor(&self) -> f64 {
        if self.iqr > 0.0 {
            self.iqr
        } else {
            1.0
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.median) / self.divisor()
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.divisor() + self.median
    }
}

pub fn robust_normalize(s: &DailySeries) -> Result<(DailySeries, RobustScaleParams)> {
    if s.is_empty() {
        return Err(Error::too_short("robust_normalize", 1, 0));
    }
    let params = RobustScaleParams::from_values(s.values());
    Ok((s.map(|v| params.normalize(v)), params))
}

pub fn denormalize(s: &DailySeries, params: &RobustScaleParams) -> DailySeries {
    s.map(|z| params.denormalize(z))
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Standard deviation with `ddof` degrees of freedom removed.
pub(crate) fn std_dev(x: &[f64], ddof: usize) -> f64 {
    let n = x.len();
    if n <= ddof {
        return f64::NAN;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - ddof) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    fn ser(v: &[f64]) -> DailySeries {
        DailySeries::new(d0(), v.to_vec())
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn calendar_helpers() {
        let s = ser(&[1.0, 2.0, 3.0]);
        assert_eq!(s.end(), Some(NaiveDate::from_ymd_opt(2020, 3, 3).unwrap()));
        assert_eq!(s.index_of(NaiveDate::from_ymd_opt(2020, 3, 2).unwrap()), Some(1));
        assert_eq!(s.index_of(NaiveDate::from_ymd_opt(2020, 2, 29).unwrap()), None);
        assert_eq!(s.slice(1, 3).start(), NaiveDate::from_ymd_opt(2020, 3, 2).unwrap());
    }

    #[test]
    fn rolling_mean_examples() {
        let spec = SmoothingSpec::default();
        assert_eq!(rolling_mean(&ser(&[5.0; 12]), &spec).values(), &[5.0; 12]);

        let ramp: Vec<f64> = (1..=10).map(f64::from).collect();
        let out = rolling_mean(&ser(&ramp), &spec);
        assert_eq!(out.values()[6], 4.0);
        assert_eq!(out.values()[9], 7.0);
        assert_eq!(out.values()[0], 1.0);
        assert_eq!(out.values()[1], 1.5);

        let impulse = [0.0, 0.0, 0.0, 7.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let out = rolling_mean(&ser(&impulse), &spec);
        // expanding prefix: 7/4, 7/5, 7/6, then the full window
        assert_close(&out.values()[3..6], &[1.75, 1.4, 7.0 / 6.0], 1e-15);
        assert_close(&out.values()[6..], &[1.0; 4], 1e-15);
        assert_eq!(&out.values()[..3], &[0.0; 3]);
    }

    #[test]
    fn zero_window_rejected() {
        assert!(SmoothingSpec::trailing(0).is_err());
    }

    #[test]
    fn gradient_examples() {
        let lin: Vec<f64> = (0..6).map(|t| 2.0 * t as f64).collect();
        assert_eq!(gradient(&ser(&lin)).unwrap().values(), &[2.0; 6]);
        assert_eq!(gradient(&ser(&[3.0; 4])).unwrap().values(), &[0.0; 4]);
        assert_eq!(gradient(&ser(&[0.0, 1.0, 4.0])).unwrap().values(), &[1.0, 2.0, 3.0]);
        assert!(matches!(gradient(&ser(&[1.0])), Err(Error::TooShort { .. })));
    }

    #[test]
    fn detrend_examples() {
        let line: Vec<f64> = (0..20).map(|t| 2.0 * t as f64 + 3.0).collect();
        let (res, tr) = linear_detrend(&ser(&line)).unwrap();
        assert!((tr.slope - 2.0).abs() < 1e-12);
        assert!((tr.intercept - 3.0).abs() < 1e-12);
        assert!(res.values().iter().all(|r| r.abs() < 1e-12));

        let (res, tr) = linear_detrend(&ser(&[4.5; 9])).unwrap();
        assert_eq!(tr.slope, 0.0);
        assert_eq!(tr.intercept, 4.5);
        assert!(res.values().iter().all(|r| *r == 0.0));
        assert!(linear_detrend(&ser(&[1.0])).is_err());
    }

    #[test]
    fn detrend_noisy_line_leaves_flat_residuals() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let x: Vec<f64> = (0..100).map(|t| 2.0 * t as f64 + noise.sample(&mut rng)).collect();
        let (res, _) = linear_detrend(&ser(&x)).unwrap();
        // refit oracle: the residual line is flat
        let refit = LinearTrend::fit(res.values()).unwrap();
        assert!(refit.slope.abs() < 0.01);
    }

    #[test]
    fn robust_normalize_examples() {
        let (out, p) = robust_normalize(&ser(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap();
        assert_eq!(p.median, 3.0);
        assert_eq!(p.iqr, 2.0);
        assert_eq!(out.values(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);

        let (out, p) = robust_normalize(&ser(&[7.0; 5])).unwrap();
        assert_eq!(p.iqr, 0.0);
        assert_eq!(out.values(), &[0.0; 5]);

        let (out, _) = robust_normalize(&ser(&[-2.0, -1.0, 0.0, 1.0, 2.0])).unwrap();
        assert_eq!(out.values(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(robust_normalize(&ser(&[])).is_err());
    }

    #[test]
    fn type7_quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.8), 2.6);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vals(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-100.0f64..100.0, n)
        }

        proptest! {
            #[test]
            fn rolling_mean_is_linear(
                (x, y) in (2usize..40).prop_flat_map(|n| (vals(n..n + 1), vals(n..n + 1))),
                a in -3.0f64..3.0, b in -3.0f64..3.0, w in 1usize..10,
            ) {
                let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let lhs = rolling_mean_values(&combo, w);
                let fx = rolling_mean_values(&x, w);
                let fy = rolling_mean_values(&y, w);
                let gx = gradient_values(&x).unwrap();
                let gy = gradient_values(&y).unwrap();
                let glhs = gradient_values(&combo).unwrap();
                for t in 0..x.len() {
                    prop_assert!((lhs[t] - (a * fx[t] + b * fy[t])).abs() < 1e-9);
                    prop_assert!((glhs[t] - (a * gx[t] + b * gy[t])).abs() < 1e-9);
                }
            }

            #[test]
            fn rolling_mean_bounded(x in vals(1..60), w in 1usize..10) {
                let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in rolling_mean_values(&x, w) {
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }

            #[test]
            fn smoothed_increasing_has_nonnegative_gradient(
                steps in proptest::collection::vec(0.001f64..10.0, 3..50), w in 1usize..10,
            ) {
                let x: Vec<f64> = steps.iter().scan(0.0, |acc, s| { *acc += s; Some(*acc) }).collect();
                let g = gradient_values(&rolling_mean_values(&x, w)).unwrap();
                prop_assert!(g[1..].iter().all(|v| *v >= 0.0));
            }

            #[test]
            fn robust_normalize_properties(x in vals(1..80)) {
                let s = ser(&x);
                let (z, p) = robust_normalize(&s).unwrap();
                prop_assert!(quantile(z.values(), 0.5).abs() < 1e-9);
                if p.iqr > 0.0 {
                    let iqr = quantile(z.values(), 0.75) - quantile(z.values(), 0.25);
                    prop_assert!((iqr - 1.0).abs() < 1e-9);
                }
                let back = denormalize(&z, &p);
                for (a, b) in back.values().iter().zip(&x) {
                    prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
                }
            }
        }
    }
}

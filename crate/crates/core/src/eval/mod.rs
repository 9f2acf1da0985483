//! Forecast-quality metrics (MAPE, peak hit rate) and the paired
//! comparison protocol.

mod backtest;
mod stats;

pub use backtest::{
    covered_dates, evaluable_peaks, predicted_peaks, window_mapes, HitRow, MapeRow, MarkerMape,
};
pub use stats::{
    cohens_dz, normality_test, paired_compare, paired_t_test, shapiro_wilk, wilcoxon_exact_p, wilcoxon_signed_rank,
    CompareResult, PairedTest, ShapiroWilk, TestKind, WilcoxonResult, NORMALITY_GATE, SIGNIFICANCE,
};

use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::peaks::PeakSet;
use crate::series::{mean, std_dev, DailySeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapeResult {
    /// Percent.
    pub mean: f64,
    pub std: f64,
    pub n_points: usize,
    pub n_excluded_zero: usize,
}

/// Mean and population std of 100·|a − f|/|a| over points with a ≠ 0.
pub fn mape(actual: &[f64], forecast: &[f64]) -> Result<MapeResult> {
    if actual.len() != forecast.len() {
        return Err(Error::LengthMismatch {
            op: "mape",
            left: actual.len(),
            right: forecast.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::too_short("mape", 1, 0));
    }
    let ape: Vec<f64> = actual
        .iter()
        .zip(forecast)
        .filter(|(a, _)| **a != 0.0)
        .map(|(a, f)| 100.0 * (a - f).abs() / a.abs())
        .collect();
    if ape.is_empty() {
        return Err(Error::AllZeroActuals);
    }
    Ok(MapeResult {
        mean: mean(&ape),
        std: std_dev(&ape, 0),
        n_points: ape.len(),
        n_excluded_zero: actual.len() - ape.len(),
    })
}

/// MAPE between two series over their common dates.
pub fn mape_series(actual: &DailySeries, forecast: &DailySeries) -> Result<MapeResult> {
    let from = actual.start().max(forecast.start());
    let (Some(ae), Some(fe)) = (actual.end(), forecast.end()) else {
        return Err(Error::too_short("mape", 1, 0));
    };
    let to = ae.min(fe);
    if to < from {
        return Err(Error::invalid("mape", "series do not overlap"));
    }
    let (ai, fi) = (actual.index_of(from).unwrap(), forecast.index_of(from).unwrap());
    let n = (to - from).num_days() as usize + 1;
    mape(&actual.values()[ai..ai + n], &forecast.values()[fi..fi + n])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitMode {
    /// Hit when a predicted peak lies within ±n days.
    DayWindow,
    /// Hit when a predicted peak falls in the same ISO-8601 week.
    IsoWeek,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HitWindow {
    pub n: u32,
    pub mode: HitMode,
}

impl HitWindow {
    pub fn day_window(n: u32) -> Self {
        HitWindow {
            n,
            mode: HitMode::DayWindow,
        }
    }

    pub fn iso_week() -> Self {
        HitWindow {
            n: 7,
            mode: HitMode::IsoWeek,
        }
    }

    /// ISO-week matching for n = 7, a ±n day window otherwise.
    pub fn for_n(n: u32) -> Self {
        if n == 7 {
            Self::iso_week()
        } else {
            Self::day_window(n)
        }
    }

    pub fn matches(&self, actual: NaiveDate, predicted: NaiveDate) -> bool {
        match self.mode {
            HitMode::DayWindow => (actual - predicted).num_days().unsigned_abs() <= u64::from(self.n),
            HitMode::IsoWeek => actual.iso_week() == predicted.iso_week(),
        }
    }

    /// Dates around `center` that a predicted peak may occupy to count.
    pub fn span(&self, center: NaiveDate) -> (NaiveDate, NaiveDate) {
        match self.mode {
            HitMode::DayWindow => {
                let d = chrono::Days::new(u64::from(self.n));
                (center - d, center + d)
            }
            HitMode::IsoWeek => {
                let monday = center - chrono::Days::new(u64::from(center.weekday().num_days_from_monday()));
                (monday, monday + chrono::Days::new(6))
            }
        }
    }
}

impl std::fmt::Display for HitWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.mode {
            HitMode::DayWindow => write!(f, "{}", self.n),
            HitMode::IsoWeek => write!(f, "{}w", self.n),
        }
    }
}

/// Recall over actual peak dates.
pub fn hit_rate_dates(actual: &[NaiveDate], predicted: &[NaiveDate], w: HitWindow) -> Result<f64> {
    let actual: BTreeSet<NaiveDate> = actual.iter().copied().collect();
    if actual.is_empty() {
        return Err(Error::NoActualPeaks);
    }
    let hits = actual
        .iter()
        .filter(|a| predicted.iter().any(|p| w.matches(**a, *p)))
        .count();
    Ok(hits as f64 / actual.len() as f64)
}

/// Fraction of actual peaks matched by at least one predicted peak.
pub fn hit_rate(actual: &PeakSet, predicted: &PeakSet, w: HitWindow) -> Result<f64> {
    hit_rate_dates(&actual.dates(), &predicted.dates(), w)
}

/// Fraction of predicted peaks matching some actual peak; `None` without predictions.
pub fn hit_precision(actual: &PeakSet, predicted: &PeakSet, w: HitWindow) -> Option<f64> {
    let preds: BTreeSet<NaiveDate> = predicted.dates().into_iter().collect();
    if preds.is_empty() {
        return None;
    }
    let actual = actual.dates();
    let hits = preds.iter().filter(|p| actual.iter().any(|a| w.matches(*a, **p))).count();
    Some(hits as f64 / preds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn day(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + chrono::Days::new(n)
    }

    #[test]
    fn mape_examples() {
        let m = mape(&[10.0, 20.0], &[11.0, 18.0]).unwrap();
        assert_eq!(m.mean, 10.0);
        assert_eq!(m.std, 0.0);
        let m = mape(&[3.0, 7.0, 1.5], &[3.0, 7.0, 1.5]).unwrap();
        assert_eq!((m.mean, m.std), (0.0, 0.0));
        assert!(matches!(mape(&[0.0, 0.0], &[1.0, 2.0]), Err(Error::AllZeroActuals)));
        let m = mape(&[0.0, 10.0], &[5.0, 12.0]).unwrap();
        assert_eq!((m.mean, m.n_points, m.n_excluded_zero), (20.0, 1, 1));
        assert!(matches!(mape(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn hit_rate_examples() {
        let actual = PeakSet::from_dates("a", [day(10), day(20)]);
        let pred = PeakSet::from_dates("p", [day(11), day(25)]);
        assert_eq!(hit_rate(&actual, &pred, HitWindow::day_window(2)).unwrap(), 0.5);
        assert_eq!(hit_rate(&actual, &actual, HitWindow::day_window(2)).unwrap(), 1.0);

        let tue = NaiveDate::from_ymd_opt(2020, 3, 10).unwrap();
        let sun = NaiveDate::from_ymd_opt(2020, 3, 15).unwrap();
        let mon_next = NaiveDate::from_ymd_opt(2020, 3, 16).unwrap();
        let w = HitWindow::for_n(7);
        assert_eq!(w.mode, HitMode::IsoWeek);
        assert_eq!(hit_rate_dates(&[tue], &[sun], w).unwrap(), 1.0);
        assert_eq!(hit_rate_dates(&[sun], &[mon_next], w).unwrap(), 0.0);
        assert!(matches!(hit_rate_dates(&[], &[sun], w), Err(Error::NoActualPeaks)));
        assert_eq!(hit_precision(&actual, &pred, HitWindow::day_window(2)), Some(0.5));
    }

    #[test]
    fn iso_week_span_is_monday_to_sunday() {
        let tue = NaiveDate::from_ymd_opt(2020, 3, 10).unwrap();
        let (a, b) = HitWindow::iso_week().span(tue);
        assert_eq!(a, NaiveDate::from_ymd_opt(2020, 3, 9).unwrap());
        assert_eq!(b, NaiveDate::from_ymd_opt(2020, 3, 15).unwrap());
    }

    fn dates() -> impl Strategy<Value = Vec<NaiveDate>> {
        prop::collection::vec(0u64..120, 0..12).prop_map(|v| v.into_iter().map(day).collect())
    }

    proptest! {
        #[test]
        fn mape_nonnegative(a in prop::collection::vec(-50.0..50.0f64, 1..20), f in prop::collection::vec(-50.0..50.0f64, 20)) {
            let f = &f[..a.len()];
            if let Ok(m) = mape(&a, f) {
                prop_assert!(m.mean >= 0.0 && m.std >= 0.0);
            }
            if a.iter().any(|v| *v != 0.0) {
                prop_assert_eq!(mape(&a, &a).unwrap().mean, 0.0);
            }
        }

        #[test]
        fn hit_rate_monotone_in_window(mut actual in dates(), pred in dates(), extra in dates(), n in 0u32..10) {
            actual.push(day(60));
            let small = hit_rate_dates(&actual, &pred, HitWindow::day_window(n)).unwrap();
            let large = hit_rate_dates(&actual, &pred, HitWindow::day_window(n + 1)).unwrap();
            prop_assert!((0.0..=1.0).contains(&small));
            prop_assert!(small <= large);
            let more: Vec<NaiveDate> = pred.iter().chain(&extra).copied().collect();
            prop_assert!(small <= hit_rate_dates(&actual, &more, HitWindow::day_window(n)).unwrap());
        }
    }
}

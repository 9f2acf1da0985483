//! Evaluation of rolling-forecast runs against the observed series.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::{mape, HitWindow, MapeResult};
use crate::error::{Error, Result};
use crate::forecast::{ForecastRun, StrategyKind};
use crate::peaks::{dimension_peaks, PeakMode, PeakSet};
use crate::series::{mean, std_dev, DailySeries, SeriesMap, SmoothingSpec};

/// Per-window MAPE of one marker across the runs of one (strategy, train_days).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerMape {
    pub marker: String,
    /// (origin, window MAPE mean) for every window with a non-zero actual.
    pub windows: Vec<(NaiveDate, f64)>,
    /// Mean and population std over the window means; `None` when every
    /// window had only zero actuals.
    pub summary: Option<MapeResult>,
}

/// Table-II-shaped row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapeRow {
    pub dimension: String,
    pub marker: String,
    pub strategy: StrategyKind,
    pub train_days: usize,
    pub mape_mean: f64,
    pub mape_std: f64,
}

/// Table-III-shaped row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitRow {
    pub dimension: String,
    pub strategy: StrategyKind,
    pub train_days: usize,
    pub window: HitWindow,
    /// `None` when no actual peak falls inside a forecast horizon.
    pub hit_rate: Option<f64>,
    pub precision: Option<f64>,
    pub n_actual: usize,
    pub n_predicted: usize,
}

fn actual_slice<'a>(actual: &'a DailySeries, from: NaiveDate, len: usize) -> Result<&'a [f64]> {
    let i = actual
        .index_of(from)
        .filter(|i| i + len <= actual.len())
        .ok_or_else(|| Error::invalid("evaluation", format!("forecast window at {from} outside observed series")))?;
    Ok(&actual.values()[i..i + len])
}

/// MAPE per run window for every marker present in the runs.
pub fn window_mapes(actual: &SeriesMap, runs: &[ForecastRun]) -> Result<Vec<MarkerMape>> {
    let mut per_marker: BTreeMap<&str, (Vec<(NaiveDate, f64)>, usize, usize)> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for run in runs {
        for (marker, pred) in &run.predictions {
            let obs = actual.get(marker).ok_or_else(|| Error::UnknownMarker {
                marker: marker.clone(),
                context: "forecast runs".into(),
            })?;
            let a = actual_slice(obs, run.origin, pred.len())?;
            let entry = per_marker.entry(marker.as_str()).or_insert_with(|| {
                order.push(marker.as_str());
                (Vec::new(), 0, 0)
            });
            match mape(a, pred.values()) {
                Ok(m) => {
                    entry.0.push((run.origin, m.mean));
                    entry.1 += m.n_points;
                    entry.2 += m.n_excluded_zero;
                }
                Err(Error::AllZeroActuals) => entry.2 += pred.len(),
                Err(e) => return Err(e),
            }
        }
    }
    Ok(order
        .into_iter()
        .map(|marker| {
            let (windows, n_points, n_excluded_zero) = per_marker.remove(marker).unwrap();
            let means: Vec<f64> = windows.iter().map(|w| w.1).collect();
            let summary = (!means.is_empty()).then(|| MapeResult {
                mean: mean(&means),
                std: std_dev(&means, 0),
                n_points,
                n_excluded_zero,
            });
            MarkerMape {
                marker: marker.to_owned(),
                windows,
                summary,
            }
        })
        .collect())
}

/// All dates inside some run's forecast horizon.
pub fn covered_dates(runs: &[ForecastRun]) -> BTreeSet<NaiveDate> {
    runs.iter()
        .flat_map(|r| (0..r.horizon_days as u64).map(move |h| r.origin + Days::new(h)))
        .collect()
}

/// Actual peaks that some forecast horizon could have predicted.
pub fn evaluable_peaks(actual: &PeakSet, covered: &BTreeSet<NaiveDate>) -> PeakSet {
    PeakSet {
        peaks: actual.peaks.iter().filter(|p| covered.contains(&p.date)).copied().collect(),
        ..actual.clone()
    }
}

/// Peaks of the dimension series computed on observed history up to each
/// origin followed by that run's forecast; only peaks inside the horizon
/// are kept. The union over runs keeps the first run's peak for a date.
pub fn predicted_peaks(
    observed: &SeriesMap,
    markers: &[String],
    runs: &[ForecastRun],
    series_id: &str,
    smoothing: &SmoothingSpec,
    percentile: f64,
    mode: PeakMode,
) -> Result<PeakSet> {
    let mut found: BTreeMap<NaiveDate, crate::peaks::Peak> = BTreeMap::new();
    for run in runs {
        let mut spliced = SeriesMap::new();
        for m in markers {
            let unknown = || Error::UnknownMarker {
                marker: m.clone(),
                context: format!("forecast run at {}", run.origin),
            };
            let obs = observed.get(m).ok_or_else(unknown)?;
            let pred = run.predictions.get(m).ok_or_else(unknown)?;
            let cut = obs
                .index_of(run.origin)
                .or_else(|| (obs.end().map(|e| e + Days::new(1)) == Some(run.origin)).then_some(obs.len()))
                .ok_or_else(|| Error::invalid("evaluation", format!("origin {} outside observed series", run.origin)))?;
            let mut values = obs.values()[..cut].to_vec();
            values.extend_from_slice(pred.values());
            spliced.insert(m.clone(), DailySeries::new(obs.start(), values));
        }
        let set = dimension_peaks(&spliced, series_id, smoothing, percentile, mode)?;
        for p in set.peaks.into_iter().filter(|p| p.date >= run.origin) {
            found.entry(p.date).or_insert(p);
        }
    }
    Ok(PeakSet {
        series_id: series_id.to_owned(),
        peaks: found.into_values().collect(),
        percentile_threshold: None,
        n_candidates: 0,
    })
}

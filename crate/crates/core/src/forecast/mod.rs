//! Forecasting strategies behind one fit/predict contract, the Granger
//! causality diagnostic, and the rolling-origin driver.
//!
//! Every strategy receives the full history before the forecast origin.
//! Univariate and VAR strategies fit on the trailing `train_days` window;
//! the GRU trains on all history using `train_days`-long input sequences.

mod additive;
mod arima;
mod granger;
mod gru;
mod optim;
mod var;

pub use additive::{fit_additive, AdditiveModel, FOURIER_ORDER, MIN_ADDITIVE_LEN, SLOPE_CHANGE_PENALTY};
pub use arima::{fit_ar_ols, fit_arima, ArimaModel, ArimaOptions, ArimaOrder, OrderSpec};
pub use granger::{granger_causality, GrangerResult};
pub use gru::{fit_gru, GruModel, GruOptions, GruParams, GruTraining, Sequence};
pub use optim::{nelder_mead, Minimum, NelderMeadOptions};
pub use var::{fit_var, select_and_fit_var, VarFitOptions, VarModel};

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{DailySeries, SeriesMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Arima,
    Additive,
    Var,
    Gru,
    /// Repeats the last observation; a reference baseline.
    Naive,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 5] = [
        StrategyKind::Arima,
        StrategyKind::Additive,
        StrategyKind::Var,
        StrategyKind::Gru,
        StrategyKind::Naive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Arima => "arima",
            StrategyKind::Additive => "additive",
            StrategyKind::Var => "var",
            StrategyKind::Gru => "gru",
            StrategyKind::Naive => "naive",
        }
    }

    pub fn is_multivariate(&self) -> bool {
        matches!(self, StrategyKind::Var | StrategyKind::Gru)
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("strategy", s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSpec {
    pub train_days: usize,
    pub horizon_days: usize,
    pub strategy: StrategyKind,
    pub seed: u64,
    #[serde(default)]
    pub arima: ArimaOptions,
    #[serde(default)]
    pub gru: GruOptions,
}

impl ForecastSpec {
    pub fn new(strategy: StrategyKind, train_days: usize) -> Self {
        ForecastSpec {
            train_days,
            horizon_days: 7,
            strategy,
            seed: 0,
            arima: ArimaOptions::default(),
            gru: GruOptions::default(),
        }
    }

    pub fn with_horizon(mut self, horizon_days: usize) -> Self {
        self.horizon_days = horizon_days;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_days < 2 {
            return Err(Error::invalid("forecast spec", "train_days must be >= 2"));
        }
        if self.horizon_days < 1 {
            return Err(Error::invalid("forecast spec", "horizon_days must be >= 1"));
        }
        Ok(())
    }
}

/// Fitted-model details recorded alongside each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelInfo {
    Arima {
        marker: String,
        p: usize,
        d: usize,
        q: usize,
        detrended: bool,
        /// CSS fit failed; coefficients come from Yule–Walker AR.
        fallback: bool,
        ar_stable: bool,
    },
    Additive {
        marker: String,
        changepoints: Vec<usize>,
    },
    Var {
        p: usize,
        detrended: Vec<bool>,
        /// Design was singular; coefficients from ridge least squares.
        ridge_fallback: bool,
        spectral_radius: f64,
    },
    Gru {
        epochs_run: usize,
        final_loss: f64,
        loss_curve: Vec<f64>,
    },
    Naive {
        marker: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRun {
    /// First forecast day.
    pub origin: NaiveDate,
    pub strategy: StrategyKind,
    pub train_days: usize,
    pub horizon_days: usize,
    /// Per marker, `horizon_days` values starting at `origin`.
    pub predictions: SeriesMap,
    pub models: Vec<ModelInfo>,
}

/// A model fitted on one history, ready to predict.
pub trait FittedModel: Send {
    /// `horizon` values per input series, in input order.
    fn predict(&self, horizon: usize) -> Result<Vec<Vec<f64>>>;
    fn describe(&self, names: &[String]) -> Vec<ModelInfo>;
}

/// Fits on all history before an origin. `history` holds aligned series.
pub trait Strategy: Send + Sync {
    fn kind(&self) -> StrategyKind;
    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, seed: u64) -> Result<Box<dyn FittedModel>>;
}

pub fn strategy_for(kind: StrategyKind) -> Box<dyn Strategy> {
    match kind {
        StrategyKind::Arima => Box::new(arima::ArimaStrategy),
        StrategyKind::Additive => Box::new(additive::AdditiveStrategy),
        StrategyKind::Var => Box::new(var::VarStrategy),
        StrategyKind::Gru => Box::new(gru::GruStrategy),
        StrategyKind::Naive => Box::new(NaiveStrategy),
    }
}

/// Trailing training window of one series.
pub(crate) fn training_window<'a>(x: &'a [f64], spec: &ForecastSpec, op: &'static str) -> Result<&'a [f64]> {
    if x.len() < spec.train_days {
        return Err(Error::insufficient(
            op,
            format!("history of {} days shorter than train_days {}", x.len(), spec.train_days),
        ));
    }
    Ok(&x[x.len() - spec.train_days..])
}

/// Fits one model per series.
pub(crate) struct PerSeries<M> {
    pub models: Vec<M>,
}

pub(crate) trait UnivariateModel: Send {
    fn predict_one(&self, horizon: usize) -> Vec<f64>;
    fn info(&self, name: &str) -> ModelInfo;
}

impl<M: UnivariateModel> FittedModel for PerSeries<M> {
    fn predict(&self, horizon: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.models.iter().map(|m| m.predict_one(horizon)).collect())
    }

    fn describe(&self, names: &[String]) -> Vec<ModelInfo> {
        self.models.iter().zip(names).map(|(m, n)| m.info(n)).collect()
    }
}

struct NaiveStrategy;

struct NaiveModel(f64);

impl UnivariateModel for NaiveModel {
    fn predict_one(&self, horizon: usize) -> Vec<f64> {
        vec![self.0; horizon]
    }

    fn info(&self, name: &str) -> ModelInfo {
        ModelInfo::Naive { marker: name.to_owned() }
    }
}

impl Strategy for NaiveStrategy {
    fn kind(&self) -> StrategyKind {
        StrategyKind::Naive
    }

    fn fit(&self, history: &[&[f64]], spec: &ForecastSpec, _seed: u64) -> Result<Box<dyn FittedModel>> {
        let models = history
            .iter()
            .map(|x| {
                let w = training_window(x, spec, "naive")?;
                Ok(NaiveModel(*w.last().unwrap()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Box::new(PerSeries { models }))
    }
}

/// SplitMix64 finalizer; stable across platforms and releases.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run seed derived from the base seed, the origin and the series slot.
pub fn run_seed(seed: u64, origin: NaiveDate, slot: u64) -> u64 {
    let day = origin.signed_duration_since(NaiveDate::MIN).num_days() as u64;
    mix64(mix64(mix64(seed) ^ day) ^ slot)
}

fn check_panel(ms: &SeriesMap, op: &'static str) -> Result<(NaiveDate, usize)> {
    let Some(first) = ms.values().next() else {
        return Err(Error::insufficient(op, "no series"));
    };
    for s in ms.values() {
        if s.len() != first.len() || s.start() != first.start() {
            return Err(Error::LengthMismatch {
                op,
                left: first.len(),
                right: s.len(),
            });
        }
    }
    Ok((first.start(), first.len()))
}

/// Fits on `[0, origin_index)` of every series and predicts the horizon.
fn run_at(ms: &SeriesMap, spec: &ForecastSpec, strategy: &dyn Strategy, origin_index: usize) -> Result<ForecastRun> {
    let (start, _) = check_panel(ms, "forecast")?;
    let origin = start + Days::new(origin_index as u64);
    let history: Vec<&[f64]> = ms.values().map(|s| &s.values()[..origin_index]).collect();
    let seed = run_seed(spec.seed, origin, 0);
    let model = strategy.fit(&history, spec, seed)?;
    let preds = model.predict(spec.horizon_days)?;
    let names: Vec<String> = ms.keys().cloned().collect();
    let mut predictions = SeriesMap::new();
    for (name, values) in names.iter().zip(preds) {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "forecast",
                reason: format!("{} produced {bad} for {name} at origin {origin}", spec.strategy),
            });
        }
        predictions.insert(name.clone(), DailySeries::new(origin, values));
    }
    Ok(ForecastRun {
        origin,
        strategy: spec.strategy,
        train_days: spec.train_days,
        horizon_days: spec.horizon_days,
        predictions,
        models: model.describe(&names),
    })
}

/// Forecasts the `horizon_days` after the end of `ms` with `spec.strategy`.
pub fn forecast(ms: &SeriesMap, spec: &ForecastSpec) -> Result<ForecastRun> {
    spec.validate()?;
    let (_, len) = check_panel(ms, "forecast")?;
    let strategy = strategy_for(spec.strategy);
    if spec.strategy.is_multivariate() && spec.strategy == StrategyKind::Var && ms.len() < 2 {
        return Err(Error::insufficient("fit_var_forecast", "VAR needs at least 2 series; use arima"));
    }
    run_at(ms, spec, strategy.as_ref(), len)
}

fn single(s: &DailySeries) -> SeriesMap {
    let mut m = SeriesMap::new();
    m.insert("value".to_owned(), s.clone());
    m
}

pub fn fit_arima_forecast(s: &DailySeries, spec: &ForecastSpec) -> Result<ForecastRun> {
    forecast(&single(s), &ForecastSpec { strategy: StrategyKind::Arima, ..spec.clone() })
}

pub fn fit_additive_forecast(s: &DailySeries, spec: &ForecastSpec) -> Result<ForecastRun> {
    forecast(&single(s), &ForecastSpec { strategy: StrategyKind::Additive, ..spec.clone() })
}

pub fn fit_var_forecast(ms: &SeriesMap, spec: &ForecastSpec) -> Result<ForecastRun> {
    forecast(ms, &ForecastSpec { strategy: StrategyKind::Var, ..spec.clone() })
}

pub fn fit_gru_forecast(ms: &SeriesMap, spec: &ForecastSpec) -> Result<ForecastRun> {
    forecast(ms, &ForecastSpec { strategy: StrategyKind::Gru, ..spec.clone() })
}

/// Origin indices `train_days, train_days + stride, ..., len - horizon_days`.
pub fn rolling_origins(len: usize, spec: &ForecastSpec, stride: usize) -> Result<Vec<usize>> {
    spec.validate()?;
    if stride == 0 {
        return Err(Error::invalid("stride", "must be >= 1"));
    }
    if len < spec.train_days + spec.horizon_days {
        return Err(Error::insufficient(
            "rolling_forecast",
            format!(
                "{len} days < train_days {} + horizon_days {}",
                spec.train_days, spec.horizon_days
            ),
        ));
    }
    Ok((spec.train_days..=len - spec.horizon_days).step_by(stride).collect())
}

/// Sliding-origin backtest: one run per origin, in origin order. Runs are
/// independent and seeded per origin, so `jobs` only affects wall time.
pub fn rolling_forecast(ms: &SeriesMap, spec: &ForecastSpec, stride: usize) -> Result<Vec<ForecastRun>> {
    rolling_forecast_jobs(ms, spec, stride, 0)
}

/// As [`rolling_forecast`], on at most `jobs` threads (0 = rayon default).
pub fn rolling_forecast_jobs(ms: &SeriesMap, spec: &ForecastSpec, stride: usize, jobs: usize) -> Result<Vec<ForecastRun>> {
    let (_, len) = check_panel(ms, "rolling_forecast")?;
    if spec.strategy == StrategyKind::Var && ms.len() < 2 {
        return Err(Error::insufficient("fit_var_forecast", "VAR needs at least 2 series; use arima"));
    }
    let origins = rolling_origins(len, spec, stride)?;
    let strategy = strategy_for(spec.strategy);
    let strategy = strategy.as_ref();
    let work = || {
        origins
            .par_iter()
            .map(|&t| run_at(ms, spec, strategy, t))
            .collect::<Result<Vec<_>>>()
    };
    if jobs == 1 {
        return origins.iter().map(|&t| run_at(ms, spec, strategy, t)).collect();
    }
    if jobs > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(work);
        }
    }
    work()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    fn panel(cols: &[Vec<f64>]) -> SeriesMap {
        cols.iter()
            .enumerate()
            .map(|(i, c)| (format!("m{i}"), DailySeries::new(d0(), c.clone())))
            .collect()
    }

    #[test]
    fn rolling_origin_arithmetic() {
        let spec = ForecastSpec::new(StrategyKind::Naive, 7);
        let o = rolling_origins(28, &spec, 1).unwrap();
        assert_eq!(o.len(), 15);
        assert_eq!((o[0], o[14]), (7, 21));
        assert_eq!(rolling_origins(28, &spec, 5).unwrap(), vec![7, 12, 17]);
        let spec21 = ForecastSpec::new(StrategyKind::Naive, 21);
        assert!(matches!(rolling_origins(20, &spec21, 1), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn naive_rolling_on_constant_series() {
        let ms = panel(&[vec![4.0; 28], vec![9.0; 28]]);
        let spec = ForecastSpec::new(StrategyKind::Naive, 7);
        let runs = rolling_forecast(&ms, &spec, 1).unwrap();
        assert_eq!(runs.len(), 15);
        assert_eq!(runs[0].origin, d0() + Days::new(7));
        for run in &runs {
            let start = ms["m0"].index_of(run.origin).unwrap();
            for (name, pred) in &run.predictions {
                let actual = &ms[name].values()[start..start + 7];
                let m: f64 = actual.iter().zip(pred.values()).map(|(a, b)| (a - b).abs()).sum();
                assert_eq!(m, 0.0);
            }
        }
    }

    #[test]
    fn parse_strategy_names() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("prophet".parse::<StrategyKind>().is_err());
    }

    #[test]
    fn run_seeds_differ_by_origin_and_slot() {
        let a = run_seed(1, d0(), 0);
        assert_eq!(a, run_seed(1, d0(), 0));
        assert_ne!(a, run_seed(1, d0() + Days::new(1), 0));
        assert_ne!(a, run_seed(1, d0(), 1));
        assert_ne!(a, run_seed(2, d0(), 0));
    }

    #[test]
    fn var_rejects_single_series() {
        let ms = panel(&[(0..30).map(f64::from).collect()]);
        let spec = ForecastSpec::new(StrategyKind::Var, 21);
        assert!(matches!(fit_var_forecast(&ms, &spec), Err(Error::InsufficientData { .. })));
    }
}

//! Python bindings. Series cross the boundary as plain lists and dicts of
//! lists; structured results come back as dicts.

use std::path::PathBuf;

use chrono::NaiveDate;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyList, PyString};
use serde::Serialize;
use serde_json::Value;

use prevcast::eval::{self, HitWindow};
use prevcast::forecast::{self, ForecastSpec, StrategyKind};
use prevcast::lexicon::{DateRange, FillPolicy, Lexicon};
use prevcast::peaks::{self, PeakMode};
use prevcast::pipeline::{self, PipelineConfig};
use prevcast::series::{self, AdfOptions, DailySeries, SeriesMap, SmoothingSpec};
use prevcast::synth::{self, SynthSpec};
use prevcast::{corpus, Error};

create_exception!(prevcast, PrevcastError, PyValueError);

fn err(e: Error) -> PyErr {
    PrevcastError::new_err(e.to_string())
}

fn parse_date(s: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| PrevcastError::new_err(format!("bad date {s:?}; expected YYYY-MM-DD")))
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for x in items {
                list.append(json_to_py(py, x)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, x) in map {
                dict.set_item(k, json_to_py(py, x)?)?;
            }
            dict.into_any()
        }
    })
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PrevcastError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Dict of equal-length lists, in insertion order.
fn series_map(d: &Bound<'_, PyDict>, start: NaiveDate) -> PyResult<SeriesMap> {
    let mut out = SeriesMap::new();
    for (k, v) in d.iter() {
        out.insert(k.extract::<String>()?, DailySeries::new(start, v.extract::<Vec<f64>>()?));
    }
    Ok(out)
}

fn series_dict<'py>(py: Python<'py>, m: &SeriesMap) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, s) in m {
        d.set_item(k, s.values().to_vec())?;
    }
    Ok(d)
}

/// Lowercased tokens with URLs and mentions removed and hashtags split.
#[pyfunction]
fn preprocess_text(text: &str) -> Vec<String> {
    corpus::preprocess_text(text).0
}

#[pyclass(name = "Lexicon", module = "prevcast", frozen)]
struct PyLexicon {
    inner: Lexicon,
}

#[pymethods]
impl PyLexicon {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Lexicon::from_json_str(text).map(|inner| PyLexicon { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        prevcast::lexicon::load_lexicon(path).map(|inner| PyLexicon { inner }).map_err(err)
    }

    fn markers(&self) -> Vec<String> {
        self.inner.marker_names().map(str::to_owned).collect()
    }

    /// Names of the markers present in a token list.
    fn match_tokens(&self, tokens: Vec<String>) -> Vec<String> {
        let names: Vec<&str> = self.inner.marker_names().collect();
        self.inner.match_indices(&tokens).into_iter().map(|i| names[i].to_owned()).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Lexicon({} markers)", self.inner.len())
    }
}

/// Daily prevalence (percent) per marker from an NDJSON corpus.
/// Returns `{"start": "YYYY-MM-DD", "series": {marker: [...]}}`.
#[pyfunction]
#[pyo3(signature = (documents, lexicon, start=None, end=None, fill="error", include_retweets=false, jobs=1))]
#[allow(clippy::too_many_arguments)]
fn prevalence<'py>(
    py: Python<'py>,
    documents: PathBuf,
    lexicon: &PyLexicon,
    start: Option<&str>,
    end: Option<&str>,
    fill: &str,
    include_retweets: bool,
    jobs: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let fill: FillPolicy = fill.parse().map_err(err)?;
    let start = start.map(parse_date).transpose()?;
    let end = end.map(parse_date).transpose()?;
    let lex = &lexicon.inner;
    let (range, series) = py
        .detach(|| -> prevcast::Result<_> {
            let ingested = pipeline::ingest(&documents, include_retweets)?;
            let docs = &ingested.documents;
            let range = match (start, end) {
                (Some(a), Some(b)) => DateRange::new(a, b)?,
                (a, b) => {
                    let r = pipeline::document_range(docs)?;
                    DateRange::new(a.unwrap_or(r.start), b.unwrap_or(r.end))?
                }
            };
            Ok((range, pipeline::prevalence(docs, lex, range, fill, jobs)?))
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("start", range.start.to_string())?;
    d.set_item("series", series_dict(py, &series)?)?;
    Ok(d)
}

/// Trailing mean; the first window-1 points average the available prefix.
#[pyfunction]
#[pyo3(signature = (values, window=7))]
fn rolling_mean(values: Vec<f64>, window: usize) -> PyResult<Vec<f64>> {
    let spec = SmoothingSpec::trailing(window).map_err(err)?;
    Ok(series::rolling_mean(&DailySeries::new(default_start(), values), &spec).into_values())
}

/// Central differences inside, one-sided at the ends.
#[pyfunction]
fn gradient(values: Vec<f64>) -> PyResult<Vec<f64>> {
    series::gradient(&DailySeries::new(default_start(), values))
        .map(DailySeries::into_values)
        .map_err(err)
}

#[pyfunction]
fn prominence(values: Vec<f64>, index: usize) -> PyResult<f64> {
    peaks::prominence(&values, index).map_err(err)
}

/// Local maxima whose prominence is strictly above the given percentile of
/// all candidate prominences.
#[pyfunction]
#[pyo3(signature = (values, percentile=80.0, start=None))]
fn select_peaks<'py>(py: Python<'py>, values: Vec<f64>, percentile: f64, start: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let start = start.map(parse_date).transpose()?.unwrap_or_else(default_start);
    let set = peaks::select_peaks(&DailySeries::new(start, values), "series", percentile).map_err(err)?;
    to_py(py, &set)
}

/// Peaks of the mean gradient of the smoothed marker series.
#[pyfunction]
#[pyo3(signature = (markers, smoothing=7, percentile=80.0, mode="gradient", start=None, name="dimension"))]
fn dimension_peaks<'py>(
    py: Python<'py>,
    markers: &Bound<'py, PyDict>,
    smoothing: usize,
    percentile: f64,
    mode: &str,
    start: Option<&str>,
    name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let start = start.map(parse_date).transpose()?.unwrap_or_else(default_start);
    let m = series_map(markers, start)?;
    let mode: PeakMode = mode.parse().map_err(err)?;
    let spec = SmoothingSpec::trailing(smoothing).map_err(err)?;
    let set = peaks::dimension_peaks(&m, name, &spec, percentile, mode).map_err(err)?;
    to_py(py, &set)
}

/// Augmented Dickey-Fuller test with a constant and AIC lag selection.
#[pyfunction]
fn adf_test<'py>(py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &series::adf_test(&values, &AdfOptions::default()).map_err(err)?)
}

/// Does x Granger-cause y with lags 1..=max_lag?
#[pyfunction]
fn granger_causality<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>, max_lag: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &forecast::granger_causality(&x, &y, max_lag).map_err(err)?)
}

fn forecast_spec(strategy: &str, train_days: usize, horizon: usize, seed: u64) -> PyResult<ForecastSpec> {
    let kind: StrategyKind = strategy.parse().map_err(err)?;
    Ok(ForecastSpec::new(kind, train_days).with_horizon(horizon).with_seed(seed))
}

/// Forecasts `horizon` days after the end of every series.
#[pyfunction(name = "forecast")]
#[pyo3(signature = (series, strategy, train_days, horizon=7, seed=0))]
fn forecast_py<'py>(
    py: Python<'py>,
    series: &Bound<'py, PyDict>,
    strategy: &str,
    train_days: usize,
    horizon: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = series_map(series, default_start())?;
    let spec = forecast_spec(strategy, train_days, horizon, seed)?;
    let run = py.detach(|| forecast::forecast(&m, &spec)).map_err(err)?;
    series_dict(py, &run.predictions)
}

/// One forecast per origin; each entry has `origin` (index into the input),
/// `predictions` and `models`.
#[pyfunction]
#[pyo3(signature = (series, strategy, train_days, horizon=7, stride=1, seed=0, jobs=0))]
#[allow(clippy::too_many_arguments)]
fn rolling_forecast<'py>(
    py: Python<'py>,
    series: &Bound<'py, PyDict>,
    strategy: &str,
    train_days: usize,
    horizon: usize,
    stride: usize,
    seed: u64,
    jobs: usize,
) -> PyResult<Bound<'py, PyList>> {
    let start = default_start();
    let m = series_map(series, start)?;
    let spec = forecast_spec(strategy, train_days, horizon, seed)?;
    let runs = py
        .detach(|| forecast::rolling_forecast_jobs(&m, &spec, stride, jobs))
        .map_err(err)?;
    let out = PyList::empty(py);
    for run in &runs {
        let d = PyDict::new(py);
        d.set_item("origin", (run.origin - start).num_days())?;
        d.set_item("predictions", series_dict(py, &run.predictions)?)?;
        d.set_item("models", to_py(py, &run.models)?)?;
        out.append(d)?;
    }
    Ok(out)
}

/// Mean absolute percentage error; zero actuals are excluded.
#[pyfunction]
fn mape<'py>(py: Python<'py>, actual: Vec<f64>, forecast: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &eval::mape(&actual, &forecast).map_err(err)?)
}

/// Share of actual peak dates with a predicted peak within n days
/// (same ISO week when n = 7).
#[pyfunction]
fn hit_rate(actual: Vec<String>, predicted: Vec<String>, n: u32) -> PyResult<f64> {
    let a = actual.iter().map(|s| parse_date(s)).collect::<PyResult<Vec<_>>>()?;
    let p = predicted.iter().map(|s| parse_date(s)).collect::<PyResult<Vec<_>>>()?;
    eval::hit_rate_dates(&a, &p, HitWindow::for_n(n)).map_err(err)
}

#[pyfunction]
fn shapiro_wilk<'py>(py: Python<'py>, sample: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &eval::shapiro_wilk(&sample).map_err(err)?)
}

#[pyfunction]
fn wilcoxon_signed_rank<'py>(py: Python<'py>, differences: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &eval::wilcoxon_signed_rank(&differences).map_err(err)?)
}

#[pyfunction]
fn paired_t_test<'py>(py: Python<'py>, differences: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &eval::paired_t_test(&differences).map_err(err)?)
}

#[pyfunction]
fn cohens_dz(differences: Vec<f64>) -> f64 {
    eval::cohens_dz(&differences)
}

/// Paired t-test or Wilcoxon depending on Shapiro-Wilk normality of a - b.
#[pyfunction]
fn paired_compare<'py>(py: Python<'py>, a: Vec<f64>, b: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &eval::paired_compare(&a, &b).map_err(err)?)
}

/// Synthetic series from a JSON generator spec.
#[pyfunction]
fn synth_generate<'py>(py: Python<'py>, spec_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let spec: SynthSpec = serde_json::from_str(spec_json).map_err(|e| PrevcastError::new_err(format!("synth spec: {e}")))?;
    series_dict(py, &synth::synth_generate(&spec).map_err(err)?)
}

/// Runs the full pipeline from a TOML config and returns its manifest.
#[pyfunction]
#[pyo3(signature = (config, out=None))]
fn run_pipeline<'py>(py: Python<'py>, config: PathBuf, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = PipelineConfig::load(&config).map_err(err)?;
    if let Some(out) = out {
        cfg.out = out;
    }
    let manifest = py.detach(|| pipeline::run_pipeline(&cfg)).map_err(err)?;
    to_py(py, &manifest)
}

#[pymodule]
#[pyo3(name = "prevcast")]
fn prevcast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PrevcastError", m.py().get_type::<PrevcastError>())?;
    m.add_class::<PyLexicon>()?;
    m.add_function(wrap_pyfunction!(preprocess_text, m)?)?;
    m.add_function(wrap_pyfunction!(prevalence, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_mean, m)?)?;
    m.add_function(wrap_pyfunction!(gradient, m)?)?;
    m.add_function(wrap_pyfunction!(prominence, m)?)?;
    m.add_function(wrap_pyfunction!(select_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_peaks, m)?)?;
    m.add_function(wrap_pyfunction!(adf_test, m)?)?;
    m.add_function(wrap_pyfunction!(granger_causality, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_py, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_forecast, m)?)?;
    m.add_function(wrap_pyfunction!(mape, m)?)?;
    m.add_function(wrap_pyfunction!(hit_rate, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_dz, m)?)?;
    m.add_function(wrap_pyfunction!(paired_compare, m)?)?;
    m.add_function(wrap_pyfunction!(synth_generate, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

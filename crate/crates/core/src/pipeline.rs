//! End-to-end run: ingest, prevalence, dimension peaks, rolling forecasts
//! per (strategy, train_days), evaluation tables and charts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{filter_kinds, Document, DocumentStream, RecordError};
use crate::error::{Error, Result};
use crate::eval::{
    covered_dates, evaluable_peaks, hit_precision, hit_rate, paired_compare, predicted_peaks, window_mapes, HitRow,
    HitWindow, MapeRow,
};
use crate::forecast::{rolling_forecast_jobs, ArimaOptions, ForecastRun, ForecastSpec, GruOptions, StrategyKind};
use crate::io::{self, ComparisonEntry};
use crate::lexicon::{count_documents, load_dimensions, load_lexicon, DateRange, DimensionSpec, FillPolicy, Lexicon};
use crate::peaks::{dimension_peaks, PeakMode, PeakSet};
use crate::plot::{render_chart, ChartOptions};
use crate::series::{SeriesMap, SmoothingSpec};

fn default_smoothing() -> usize {
    7
}
fn default_percentile() -> f64 {
    80.0
}
fn default_strategies() -> Vec<StrategyKind> {
    vec![StrategyKind::Arima, StrategyKind::Additive, StrategyKind::Var, StrategyKind::Gru]
}
fn default_train_days() -> Vec<usize> {
    vec![7, 14, 21]
}
fn default_horizon() -> usize {
    7
}
fn default_one() -> usize {
    1
}
fn default_hit_n() -> Vec<u32> {
    vec![1, 2, 3, 7]
}
fn default_true() -> bool {
    true
}

/// One TOML file. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub documents: PathBuf,
    pub lexicon: PathBuf,
    pub dimensions: PathBuf,
    pub out: PathBuf,
    /// Defaults to the first and last document day.
    #[serde(default)]
    pub from: Option<NaiveDate>,
    #[serde(default)]
    pub to: Option<NaiveDate>,
    #[serde(default = "default_smoothing")]
    pub smoothing_days: usize,
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<StrategyKind>,
    #[serde(default = "default_train_days")]
    pub train_days: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_hit_n")]
    pub hit_n: Vec<u32>,
    #[serde(default)]
    pub fill: FillPolicy,
    #[serde(default)]
    pub seed: u64,
    /// Worker cap; `None` uses all available parallelism.
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub include_retweets: bool,
    #[serde(default = "default_true")]
    pub charts: bool,
    /// Hit window drawn on charts; defaults to the largest day window below 7.
    #[serde(default)]
    pub chart_hit_n: Option<u32>,
    #[serde(default)]
    pub arima: ArimaOptions,
    #[serde(default)]
    pub gru: GruOptions,
}

impl PipelineConfig {
    pub fn new(documents: impl Into<PathBuf>, lexicon: impl Into<PathBuf>, dimensions: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            documents: documents.into(),
            lexicon: lexicon.into(),
            dimensions: dimensions.into(),
            out: out.into(),
            from: None,
            to: None,
            smoothing_days: default_smoothing(),
            percentile: default_percentile(),
            strategies: default_strategies(),
            train_days: default_train_days(),
            horizon: default_horizon(),
            stride: 1,
            hit_n: default_hit_n(),
            fill: FillPolicy::default(),
            seed: 0,
            jobs: None,
            include_retweets: false,
            charts: true,
            chart_hit_n: None,
            arima: ArimaOptions::default(),
            gru: GruOptions::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid("pipeline config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&io::read_to_string(path)?).map_err(|e| io::with_path(e, path))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.documents, &mut cfg.lexicon, &mut cfg.dimensions, &mut cfg.out] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |r: &str| Err(Error::invalid("pipeline config", r.to_owned()));
        if self.strategies.is_empty() {
            return bad("strategies must not be empty");
        }
        if self.train_days.is_empty() {
            return bad("train_days must not be empty");
        }
        if self.hit_n.is_empty() || self.hit_n.contains(&0) {
            return bad("hit_n must be a non-empty list of positive integers");
        }
        if self.train_days.iter().any(|&t| t < 2) {
            return bad("train_days must be >= 2");
        }
        if self.horizon == 0 || self.stride == 0 || self.smoothing_days == 0 {
            return bad("horizon, stride and smoothing_days must be >= 1");
        }
        if !(0.0..=100.0).contains(&self.percentile) {
            return bad("percentile must lie in [0, 100]");
        }
        if let (Some(a), Some(b)) = (self.from, self.to) {
            DateRange::new(a, b)?;
        }
        Ok(())
    }

    pub fn smoothing(&self) -> SmoothingSpec {
        SmoothingSpec::trailing(self.smoothing_days).unwrap_or_default()
    }

    pub fn chart_window(&self) -> HitWindow {
        let n = self
            .chart_hit_n
            .or_else(|| self.hit_n.iter().copied().filter(|&n| n < 7).max())
            .unwrap_or(self.hit_n[0]);
        HitWindow::for_n(n)
    }

    pub fn spec(&self, strategy: StrategyKind, train_days: usize) -> ForecastSpec {
        ForecastSpec {
            arima: self.arima.clone(),
            gru: self.gru.clone(),
            ..ForecastSpec::new(strategy, train_days).with_horizon(self.horizon).with_seed(self.seed)
        }
    }
}

/// Parsed documents and the malformed lines that were skipped.
pub struct Ingested {
    pub documents: Vec<Document>,
    pub malformed: Vec<RecordError>,
    pub n_retweets_dropped: usize,
}

/// Reads an NDJSON corpus; malformed lines are collected, not fatal.
pub fn ingest(path: &Path, include_retweets: bool) -> Result<Ingested> {
    let mut documents = Vec::new();
    let mut malformed = Vec::new();
    for rec in DocumentStream::new(io::open(path)?) {
        let rec = rec.map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })?;
        match rec {
            Ok(d) => documents.push(d),
            Err(e) => {
                warn!("{}: {e}", path.display());
                malformed.push(e);
            }
        }
    }
    let total = documents.len();
    if !include_retweets {
        documents = filter_kinds(documents);
    }
    Ok(Ingested {
        n_retweets_dropped: total - documents.len(),
        documents,
        malformed,
    })
}

/// First and last document day.
pub fn document_range(docs: &[Document]) -> Result<DateRange> {
    let lo = docs.iter().map(Document::date).min();
    let hi = docs.iter().map(Document::date).max();
    match (lo, hi) {
        (Some(a), Some(b)) => DateRange::new(a, b),
        _ => Err(Error::invalid("documents", "corpus is empty")),
    }
}

/// Daily prevalence over `range` for every lexicon marker.
pub fn prevalence(
    docs: &[Document],
    lexicon: &Lexicon,
    range: DateRange,
    fill: FillPolicy,
    jobs: usize,
) -> Result<SeriesMap> {
    count_documents(docs, lexicon, range, jobs).finish(lexicon, range, fill)
}

/// The marker columns of one dimension.
pub fn dimension_panel(all: &SeriesMap, dim: &DimensionSpec) -> Result<SeriesMap> {
    dim.markers
        .iter()
        .map(|m| {
            all.get(m).map(|s| (m.clone(), s.clone())).ok_or_else(|| Error::UnknownMarker {
                marker: m.clone(),
                context: format!("dimension {}", dim.name),
            })
        })
        .collect()
}

/// A (dimension, strategy, train_days) combination that could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub dimension: String,
    pub strategy: StrategyKind,
    pub train_days: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub from: NaiveDate,
    pub to: NaiveDate,
    pub n_documents: usize,
    pub n_malformed: usize,
    pub n_retweets_dropped: usize,
    pub dimensions: Vec<String>,
    pub skipped: Vec<Skipped>,
    /// Paths relative to the output directory.
    pub files: Vec<String>,
}

/// Everything computed for one dimension.
pub struct DimensionResult {
    pub name: String,
    pub panel: SeriesMap,
    pub actual_peaks: PeakSet,
    pub runs: Vec<ForecastRun>,
    pub mape_rows: Vec<MapeRow>,
    pub hit_rows: Vec<HitRow>,
    pub best_hit_rows: Vec<HitRow>,
    pub comparisons: Vec<ComparisonEntry>,
    pub skipped: Vec<Skipped>,
}

fn infeasible(e: &Error) -> bool {
    matches!(e, Error::InsufficientData { .. } | Error::TooShort { .. })
}

fn mean_mape(rows: &[MapeRow], strategy: StrategyKind, train_days: usize) -> Option<f64> {
    let v: Vec<f64> = rows
        .iter()
        .filter(|r| r.strategy == strategy && r.train_days == train_days && r.mape_mean.is_finite())
        .map(|r| r.mape_mean)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Rolling forecasts for every (strategy, train_days); infeasible
/// combinations are reported, not fatal.
pub fn forecast_dimension(
    cfg: &PipelineConfig,
    dim: &DimensionSpec,
    panel: &SeriesMap,
    jobs: usize,
) -> Result<(Vec<ForecastRun>, Vec<Skipped>)> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    for &strategy in &cfg.strategies {
        for &train_days in &cfg.train_days {
            let spec = cfg.spec(strategy, train_days);
            match rolling_forecast_jobs(panel, &spec, cfg.stride, jobs) {
                Ok(r) => runs.extend(r),
                Err(e) if infeasible(&e) => {
                    info!("{}: skipping {strategy}@{train_days}: {e}", dim.name);
                    skipped.push(Skipped {
                        dimension: dim.name.clone(),
                        strategy,
                        train_days,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok((runs, skipped))
}

/// Runs forecasts and evaluation for one dimension.
pub fn evaluate_dimension(cfg: &PipelineConfig, dim: &DimensionSpec, prevalence: &SeriesMap, jobs: usize) -> Result<DimensionResult> {
    let panel = dimension_panel(prevalence, dim)?;
    let (runs, skipped) = forecast_dimension(cfg, dim, &panel, jobs)?;
    score_dimension(cfg, dim, panel, runs, skipped)
}

/// MAPE, hit rates and paired comparisons for existing runs. Combinations
/// follow `cfg.strategies` x `cfg.train_days`; absent ones are ignored.
pub fn score_dimension(
    cfg: &PipelineConfig,
    dim: &DimensionSpec,
    panel: SeriesMap,
    runs: Vec<ForecastRun>,
    skipped: Vec<Skipped>,
) -> Result<DimensionResult> {
    let smoothing = cfg.smoothing();
    let actual_peaks = dimension_peaks(&panel, &dim.name, &smoothing, cfg.percentile, PeakMode::Gradient)?;
    let mut out = DimensionResult {
        name: dim.name.clone(),
        panel,
        actual_peaks,
        runs: Vec::new(),
        mape_rows: Vec::new(),
        hit_rows: Vec::new(),
        best_hit_rows: Vec::new(),
        comparisons: Vec::new(),
        skipped,
    };
    // per (strategy, train_days): marker -> origin -> window MAPE
    let mut windows: BTreeMap<(StrategyKind, usize), BTreeMap<String, BTreeMap<NaiveDate, f64>>> = BTreeMap::new();
    let mut runs = runs;

    for &strategy in &cfg.strategies {
        for &train_days in &cfg.train_days {
            let (combo, rest): (Vec<ForecastRun>, Vec<ForecastRun>) =
                runs.into_iter().partition(|r| r.strategy == strategy && r.train_days == train_days);
            runs = rest;
            if combo.is_empty() {
                continue;
            }
            for mm in window_mapes(&out.panel, &combo)? {
                let (mean, std) = mm.summary.map_or((f64::NAN, f64::NAN), |s| (s.mean, s.std));
                out.mape_rows.push(MapeRow {
                    dimension: dim.name.clone(),
                    marker: mm.marker.clone(),
                    strategy,
                    train_days,
                    mape_mean: mean,
                    mape_std: std,
                });
                windows
                    .entry((strategy, train_days))
                    .or_default()
                    .insert(mm.marker, mm.windows.into_iter().collect());
            }
            let covered = covered_dates(&combo);
            let actual = evaluable_peaks(&out.actual_peaks, &covered);
            let predicted = predicted_peaks(
                &out.panel,
                &dim.markers,
                &combo,
                &dim.name,
                &smoothing,
                cfg.percentile,
                PeakMode::Gradient,
            )?;
            for &n in &cfg.hit_n {
                let window = HitWindow::for_n(n);
                out.hit_rows.push(HitRow {
                    dimension: dim.name.clone(),
                    strategy,
                    train_days,
                    window,
                    hit_rate: hit_rate(&actual, &predicted, window).ok(),
                    precision: hit_precision(&actual, &predicted, window),
                    n_actual: actual.peaks.len(),
                    n_predicted: predicted.peaks.len(),
                });
            }
            out.runs.extend(combo);
        }
    }

    // best train_days per strategy by mean MAPE over the dimension's markers
    for &strategy in &cfg.strategies {
        let best = cfg
            .train_days
            .iter()
            .filter_map(|&t| mean_mape(&out.mape_rows, strategy, t).map(|m| (t, m)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((t, _)) = best {
            out.best_hit_rows.extend(
                out.hit_rows
                    .iter()
                    .filter(|r| r.strategy == strategy && r.train_days == t)
                    .cloned(),
            );
        }
    }

    // paired tests on per-window MAPE over common origins
    for &train_days in &cfg.train_days {
        for (i, &sa) in cfg.strategies.iter().enumerate() {
            for &sb in &cfg.strategies[i + 1..] {
                let (Some(wa), Some(wb)) = (windows.get(&(sa, train_days)), windows.get(&(sb, train_days))) else {
                    continue;
                };
                for marker in &dim.markers {
                    let (Some(ma), Some(mb)) = (wa.get(marker), wb.get(marker)) else {
                        continue;
                    };
                    let (a, b): (Vec<f64>, Vec<f64>) =
                        ma.iter().filter_map(|(d, va)| mb.get(d).map(|vb| (*va, *vb))).unzip();
                    match paired_compare(&a, &b) {
                        Ok(result) => out.comparisons.push(ComparisonEntry {
                            marker: marker.clone(),
                            strategy_a: sa,
                            strategy_b: sb,
                            train_days,
                            result,
                        }),
                        Err(e) if e.is_numerical() || matches!(e, Error::Invalid { .. }) => {
                            info!("{}: no comparison {sa} vs {sb}@{train_days} for {marker}: {e}", dim.name);
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
        }
    }
    Ok(out)
}

/// File-system-safe stem for a dimension name.
pub fn file_stem(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

/// Distinct file stems, one per dimension, in order.
pub fn dimension_stems<'a>(names: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut used = BTreeSet::new();
    names
        .into_iter()
        .map(|n| {
            let mut stem = file_stem(n);
            while !used.insert(stem.clone()) {
                stem.push('_');
            }
            stem
        })
        .collect()
}

/// Tracks written files so a failed run can remove them.
struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, rel: &str, f: impl FnOnce(&mut dyn std::io::Write) -> Result<()>) -> Result<()> {
        let path = self.root.join(rel);
        self.files.push(rel.to_owned());
        let mut w = io::create(&path)?;
        f(&mut w)?;
        std::io::Write::flush(&mut w).map_err(|source| Error::File {
            path: path.display().to_string(),
            source,
        })
    }

    fn remove_all(&self) {
        for rel in &self.files {
            let _ = std::fs::remove_file(self.root.join(rel));
        }
        for dir in ["forecasts", "charts"] {
            let _ = std::fs::remove_dir(self.root.join(dir));
        }
    }
}

fn worker_count(jobs: Option<usize>) -> usize {
    jobs.filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every stage and writes the artifacts listed in the returned
/// manifest. On failure, files written so far are removed.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let jobs = worker_count(cfg.jobs);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    let mut outputs = Outputs {
        root: cfg.out.clone(),
        files: Vec::new(),
    };
    let result = pool.install(|| run_stages(cfg, jobs, &mut outputs));
    if result.is_err() {
        outputs.remove_all();
    }
    result
}

fn run_stages(cfg: &PipelineConfig, jobs: usize, outputs: &mut Outputs) -> Result<Manifest> {
    let lexicon = load_lexicon(&cfg.lexicon)?;
    let dims = load_dimensions(&cfg.dimensions)?;
    if dims.is_empty() {
        return Err(Error::invalid("dimension config", format!("{}: no dimensions", cfg.dimensions.display())));
    }
    for d in &dims {
        d.validate(|m| lexicon.contains(m))?;
    }
    let ingested = ingest(&cfg.documents, cfg.include_retweets)?;
    let docs = &ingested.documents;
    let range = match (cfg.from, cfg.to) {
        (Some(a), Some(b)) => DateRange::new(a, b)?,
        (a, b) => {
            let r = document_range(docs)?;
            DateRange::new(a.unwrap_or(r.start), b.unwrap_or(r.end))?
        }
    };
    info!("{} documents, {} malformed, range {}..{}", docs.len(), ingested.malformed.len(), range.start, range.end);
    // later stages see exactly the written values, as a staged run would
    let prev = io::as_written_prevalence(&prevalence(docs, &lexicon, range, cfg.fill, jobs)?);
    outputs.write("prevalence.csv", |w| io::write_prevalence(w, &prev))?;

    // one worker per dimension, origins share the remaining pool
    let inner = if jobs == 1 { 1 } else { 0 };
    let results: Vec<DimensionResult> = dims
        .par_iter()
        .map(|d| evaluate_dimension(cfg, d, &prev, inner))
        .collect::<Result<_>>()?;

    let peak_sets: Vec<PeakSet> = results.iter().map(|r| r.actual_peaks.clone()).collect();
    outputs.write("peaks.csv", |w| io::write_peaks_csv(w, &peak_sets))?;

    let stems = dimension_stems(results.iter().map(|r| r.name.as_str()));
    for (r, stem) in results.iter().zip(&stems) {
        outputs.write(&format!("forecasts/{stem}.csv"), |w| io::write_forecasts_csv(w, &r.runs))?;
        outputs.write(&format!("forecasts/{stem}.json"), |w| io::write_json(w, &io::run_metadata(&r.runs)))?;
        if cfg.charts {
            let svg = chart_for(cfg, r)?;
            outputs.write(&format!("charts/{stem}.svg"), |w| {
                w.write_all(svg.as_bytes())?;
                Ok(())
            })?;
        }
    }

    let mape: Vec<MapeRow> = results.iter().flat_map(|r| r.mape_rows.iter().cloned()).collect();
    outputs.write("mape.csv", |w| io::write_mape_csv(w, &mape))?;
    let hits: Vec<HitRow> = results.iter().flat_map(|r| r.hit_rows.iter().cloned()).collect();
    outputs.write("hits.csv", |w| io::write_hits_csv(w, &hits))?;
    let best: Vec<HitRow> = results.iter().flat_map(|r| r.best_hit_rows.iter().cloned()).collect();
    outputs.write("hits_best.csv", |w| io::write_hits_csv(w, &best))?;
    let comps: Vec<ComparisonEntry> = results.iter().flat_map(|r| r.comparisons.iter().cloned()).collect();
    outputs.write("comparisons.json", |w| io::write_json(w, &comps))?;

    let mut files = outputs.files.clone();
    files.push("manifest.json".into());
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        from: range.start,
        to: range.end,
        n_documents: docs.len(),
        n_malformed: ingested.malformed.len(),
        n_retweets_dropped: ingested.n_retweets_dropped,
        dimensions: dims.iter().map(|d| d.name.clone()).collect(),
        skipped: results.iter().flat_map(|r| r.skipped.iter().cloned()).collect(),
        files,
    };
    outputs.write("manifest.json", |w| io::write_json(w, &manifest))?;
    Ok(manifest)
}

/// Chart for one dimension using the (strategy, train_days) with the lowest
/// mean MAPE.
pub fn chart_for(cfg: &PipelineConfig, r: &DimensionResult) -> Result<String> {
    let best = r
        .mape_rows
        .iter()
        .map(|row| (row.strategy, row.train_days))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter_map(|(s, t)| mean_mape(&r.mape_rows, s, t).map(|m| ((s, t), m)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|x| x.0);
    let (runs, label): (Vec<ForecastRun>, String) = match best {
        Some((s, t)) => (
            r.runs.iter().filter(|x| x.strategy == s && x.train_days == t).cloned().collect(),
            format!(" ({s}, {t} training days)"),
        ),
        None => (Vec::new(), String::new()),
    };
    let opts = ChartOptions {
        title: format!("{}{label}", r.name),
        ..ChartOptions::default()
    };
    render_chart(&r.panel, &runs, &r.actual_peaks.dates(), Some(cfg.chart_window()), &opts)
}

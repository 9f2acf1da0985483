use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use log::info;

use prevcast::forecast::{ForecastRun, StrategyKind};
use prevcast::io;
use prevcast::lexicon::{load_dimensions, load_lexicon, DateRange, DimensionSpec, FillPolicy};
use prevcast::peaks::{dimension_peaks, PeakMode};
use prevcast::pipeline::{
    chart_for, dimension_panel, dimension_stems, document_range, forecast_dimension, ingest, prevalence, run_pipeline,
    score_dimension, DimensionResult, PipelineConfig,
};
use prevcast::series::SeriesMap;
use prevcast::synth::{synth_corpus, synth_generate, SynthSpec};
use prevcast::{Error, Result};

#[derive(Parser)]
#[command(name = "prevcast", version, about = "Lexicon-marker prevalence, peaks, forecasts and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Daily marker prevalence from an NDJSON corpus
    Prevalence(PrevalenceArgs),
    /// Dimension peaks from a prevalence CSV
    Peaks(PeaksArgs),
    /// Rolling-origin forecasts per dimension
    Forecast(ForecastArgs),
    /// MAPE and hit-rate tables for existing forecasts
    Evaluate(EvalArgs),
    /// Paired tests between strategies on per-window MAPE
    Compare(EvalArgs),
    /// SVG charts of observed series, forecasts, peaks and hit windows
    Plot(EvalArgs),
    /// Synthetic series and, with a lexicon, a synthetic corpus
    Synth(SynthArgs),
    /// All stages end to end
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Worker cap (default: available parallelism)
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PrevalenceArgs {
    #[arg(long)]
    docs: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long, default_value = "error")]
    fill: FillPolicy,
    /// Count retweets too
    #[arg(long)]
    include_retweets: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct PeakInputs {
    /// Prevalence CSV
    #[arg(long)]
    prevalence: PathBuf,
    #[arg(long)]
    dimensions: PathBuf,
    #[arg(long, default_value_t = 80.0)]
    percentile: f64,
    /// Trailing smoothing window in days
    #[arg(long, default_value_t = 7)]
    smoothing: usize,
}

#[derive(Args)]
struct PeaksArgs {
    #[command(flatten)]
    inputs: PeakInputs,
    /// gradient (forecast evaluation) or smoothed (chart annotation)
    #[arg(long, default_value = "gradient")]
    mode: PeakMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    prevalence: PathBuf,
    #[arg(long)]
    dimensions: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "arima,additive,var,gru")]
    strategy: Vec<StrategyKind>,
    #[arg(long, value_delimiter = ',', default_value = "7,14,21")]
    train_days: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    horizon: usize,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    inputs: PeakInputs,
    /// Directory of per-dimension forecast CSVs (default: <out>/forecasts)
    #[arg(long)]
    forecasts: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,7")]
    hit_n: Vec<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec, TOML or JSON
    #[arg(long)]
    spec: PathBuf,
    /// Overrides the spec's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Also write documents.ndjson whose prevalence follows the series,
    /// mapping series to lexicon markers in order
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    docs_per_day: usize,
    #[arg(long, default_value_t = 0.0)]
    retweet_share: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// TOML config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    docs: Option<PathBuf>,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    dimensions: Option<PathBuf>,
    #[arg(long)]
    from: Option<NaiveDate>,
    #[arg(long)]
    to: Option<NaiveDate>,
    #[arg(long, value_delimiter = ',')]
    strategy: Option<Vec<StrategyKind>>,
    #[arg(long, value_delimiter = ',')]
    train_days: Option<Vec<usize>>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    hit_n: Option<Vec<u32>>,
    #[arg(long)]
    fill: Option<FillPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    no_charts: bool,
}

fn jobs_or_default(jobs: Option<usize>) -> usize {
    jobs.filter(|&j| j > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn write_file(path: &Path, f: impl FnOnce(&mut dyn std::io::Write) -> Result<()>) -> Result<()> {
    let mut w = io::create(path)?;
    f(&mut w)?;
    info!("wrote {}", path.display());
    Ok(())
}

fn load_checked_dimensions(path: &Path, available: &SeriesMap) -> Result<Vec<DimensionSpec>> {
    let dims = load_dimensions(path)?;
    if dims.is_empty() {
        return Err(Error::Invalid {
            what: "dimension config",
            reason: format!("{}: no dimensions", path.display()),
        });
    }
    for d in &dims {
        d.validate(|m| available.contains_key(m))?;
    }
    Ok(dims)
}

fn cmd_prevalence(a: PrevalenceArgs) -> Result<()> {
    let lexicon = load_lexicon(&a.lexicon)?;
    let ingested = ingest(&a.docs, a.include_retweets)?;
    let range = match (a.from, a.to) {
        (Some(f), Some(t)) => DateRange::new(f, t)?,
        (f, t) => {
            let r = document_range(&ingested.documents)?;
            DateRange::new(f.unwrap_or(r.start), t.unwrap_or(r.end))?
        }
    };
    let prev = prevalence(&ingested.documents, &lexicon, range, a.fill, jobs_or_default(a.common.jobs))?;
    write_file(&a.common.out.join("prevalence.csv"), |w| io::write_prevalence(w, &prev))
}

fn cmd_peaks(a: PeaksArgs) -> Result<()> {
    let prev = io::read_series_file(&a.inputs.prevalence)?;
    let dims = load_checked_dimensions(&a.inputs.dimensions, &prev)?;
    let smoothing = prevcast::series::SmoothingSpec::trailing(a.inputs.smoothing)?;
    let sets = dims
        .iter()
        .map(|d| dimension_peaks(&dimension_panel(&prev, d)?, &d.name, &smoothing, a.inputs.percentile, a.mode))
        .collect::<Result<Vec<_>>>()?;
    write_file(&a.out.join("peaks.csv"), |w| io::write_peaks_csv(w, &sets))
}

fn stage_config(out: &Path) -> PipelineConfig {
    PipelineConfig::new("", "", "", out)
}

fn cmd_forecast(a: ForecastArgs) -> Result<()> {
    let prev = io::read_series_file(&a.prevalence)?;
    let dims = load_checked_dimensions(&a.dimensions, &prev)?;
    let mut cfg = stage_config(&a.common.out);
    cfg.strategies = a.strategy;
    cfg.train_days = a.train_days;
    cfg.horizon = a.horizon;
    cfg.stride = a.stride;
    cfg.seed = a.seed;
    cfg.validate()?;
    let jobs = jobs_or_default(a.common.jobs);
    let stems = dimension_stems(dims.iter().map(|d| d.name.as_str()));
    for (d, stem) in dims.iter().zip(stems) {
        let panel = dimension_panel(&prev, d)?;
        let (runs, skipped) = forecast_dimension(&cfg, d, &panel, jobs)?;
        for s in skipped {
            log::warn!("{}: skipped {}@{}: {}", s.dimension, s.strategy, s.train_days, s.reason);
        }
        let dir = a.common.out.join("forecasts");
        write_file(&dir.join(format!("{stem}.csv")), |w| io::write_forecasts_csv(w, &runs))?;
        write_file(&dir.join(format!("{stem}.json")), |w| io::write_json(w, &io::run_metadata(&runs)))?;
    }
    Ok(())
}

/// Re-scores forecasts read from disk, one result per dimension.
fn score_from_files(a: &EvalArgs) -> Result<(PipelineConfig, Vec<(String, DimensionResult)>)> {
    let prev = io::read_series_file(&a.inputs.prevalence)?;
    let dims = load_checked_dimensions(&a.inputs.dimensions, &prev)?;
    let dir = a.forecasts.clone().unwrap_or_else(|| a.out.join("forecasts"));
    let mut cfg = stage_config(&a.out);
    cfg.percentile = a.inputs.percentile;
    cfg.smoothing_days = a.inputs.smoothing;
    cfg.hit_n = a.hit_n.clone();
    let stems = dimension_stems(dims.iter().map(|d| d.name.as_str()));
    let mut loaded: Vec<(&DimensionSpec, String, Vec<ForecastRun>)> = Vec::new();
    let mut combos = BTreeSet::new();
    for (d, stem) in dims.iter().zip(stems) {
        let path = dir.join(format!("{stem}.csv"));
        let runs = io::read_forecasts_csv(io::open(&path)?).map_err(|e| io::with_path(e, &path))?;
        combos.extend(runs.iter().map(|r| (r.strategy, r.train_days)));
        loaded.push((d, stem, runs));
    }
    cfg.strategies = combos.iter().map(|c| c.0).collect::<BTreeSet<_>>().into_iter().collect();
    cfg.train_days = combos.iter().map(|c| c.1).collect::<BTreeSet<_>>().into_iter().collect();
    if combos.is_empty() {
        return Err(Error::Invalid {
            what: "forecasts",
            reason: format!("{}: no forecast rows", dir.display()),
        });
    }
    cfg.validate()?;
    let mut out = Vec::new();
    for (d, stem, runs) in loaded {
        out.push((stem, score_dimension(&cfg, d, dimension_panel(&prev, d)?, runs, Vec::new())?));
    }
    Ok((cfg, out))
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let (_, results) = score_from_files(&a)?;
    let mape: Vec<_> = results.iter().flat_map(|r| r.1.mape_rows.iter().cloned()).collect();
    let hits: Vec<_> = results.iter().flat_map(|r| r.1.hit_rows.iter().cloned()).collect();
    let best: Vec<_> = results.iter().flat_map(|r| r.1.best_hit_rows.iter().cloned()).collect();
    write_file(&a.out.join("mape.csv"), |w| io::write_mape_csv(w, &mape))?;
    write_file(&a.out.join("hits.csv"), |w| io::write_hits_csv(w, &hits))?;
    write_file(&a.out.join("hits_best.csv"), |w| io::write_hits_csv(w, &best))
}

fn cmd_compare(a: EvalArgs) -> Result<()> {
    let (_, results) = score_from_files(&a)?;
    let comps: Vec<_> = results.iter().flat_map(|r| r.1.comparisons.iter().cloned()).collect();
    write_file(&a.out.join("comparisons.json"), |w| io::write_json(w, &comps))
}

fn cmd_plot(a: EvalArgs) -> Result<()> {
    let (cfg, results) = score_from_files(&a)?;
    for (stem, r) in &results {
        let svg = chart_for(&cfg, r)?;
        write_file(&a.out.join("charts").join(format!("{stem}.svg")), |w| {
            w.write_all(svg.as_bytes())?;
            Ok(())
        })?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let text = io::read_to_string(&a.spec)?;
    let is_json = a.spec.extension().is_some_and(|e| e == "json");
    let mut spec: SynthSpec = if is_json {
        serde_json::from_str(&text).map_err(|e| invalid_spec(&a.spec, e))?
    } else {
        toml::from_str(&text).map_err(|e| invalid_spec(&a.spec, e))?
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let series = synth_generate(&spec)?;
    write_file(&a.out.join("synth.csv"), |w| io::write_series_csv(w, &series, None))?;
    if let Some(lex_path) = &a.lexicon {
        let lexicon = load_lexicon(lex_path)?;
        if lexicon.len() != series.len() {
            return Err(Error::Invalid {
                what: "synth corpus",
                reason: format!("{} series but {} lexicon markers", series.len(), lexicon.len()),
            });
        }
        let rates: SeriesMap = lexicon
            .marker_names()
            .zip(series.values())
            .map(|(m, s)| (m.to_owned(), s.clone()))
            .collect();
        let docs = synth_corpus(&rates, &lexicon, a.docs_per_day, a.retweet_share, spec.seed)?;
        write_file(&a.out.join("documents.ndjson"), |w| io::write_documents_ndjson(w, &docs))?;
    }
    Ok(())
}

fn invalid_spec(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Invalid {
        what: "synth spec",
        reason: format!("{}: {e}", path.display()),
    }
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let missing = |f: &str| Error::Invalid {
                what: "arguments",
                reason: format!("--{f} is required without --config"),
            };
            PipelineConfig::new(
                a.docs.clone().ok_or_else(|| missing("docs"))?,
                a.lexicon.clone().ok_or_else(|| missing("lexicon"))?,
                a.dimensions.clone().ok_or_else(|| missing("dimensions"))?,
                a.out.clone().ok_or_else(|| missing("out"))?,
            )
        }
    };
    if let Some(v) = a.docs {
        cfg.documents = v;
    }
    if let Some(v) = a.lexicon {
        cfg.lexicon = v;
    }
    if let Some(v) = a.dimensions {
        cfg.dimensions = v;
    }
    if let Some(v) = a.out {
        cfg.out = v;
    }
    if a.from.is_some() {
        cfg.from = a.from;
    }
    if a.to.is_some() {
        cfg.to = a.to;
    }
    if let Some(v) = a.strategy {
        cfg.strategies = v;
    }
    if let Some(v) = a.train_days {
        cfg.train_days = v;
    }
    if let Some(v) = a.horizon {
        cfg.horizon = v;
    }
    if let Some(v) = a.stride {
        cfg.stride = v;
    }
    if let Some(v) = a.percentile {
        cfg.percentile = v;
    }
    if let Some(v) = a.hit_n {
        cfg.hit_n = v;
    }
    if let Some(v) = a.fill {
        cfg.fill = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.jobs.is_some() {
        cfg.jobs = a.jobs;
    }
    if a.no_charts {
        cfg.charts = false;
    }
    let manifest = run_pipeline(&cfg)?;
    info!("{} files written to {}", manifest.files.len(), cfg.out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PREVCAST_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Prevalence(a) => cmd_prevalence(a),
        Command::Peaks(a) => cmd_peaks(a),
        Command::Forecast(a) => cmd_forecast(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Plot(a) => cmd_plot(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

//! File formats shared by the CLI stages and the pipeline.
//!
//! Series CSV: `date,<name1>,...` with ISO dates. Prevalence files use six
//! decimals; other numeric outputs use the shortest round-trip form.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{CompareResult, HitRow, MapeRow};
use crate::forecast::{ForecastRun, ModelInfo, StrategyKind};
use crate::peaks::{Peak, PeakSet};
use crate::series::{DailySeries, SeriesMap};

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::File {
            path: dir.display().to_string(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn parse_f64(s: &str, line: u64, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::invalid("csv", format!("line {line}: {what} {s:?} is not a number")))
}

fn parse_date(s: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|_| Error::invalid("csv", format!("line {line}: bad date {s:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Writes aligned series as `date,<names...>`; `decimals` fixes the precision.
pub fn write_series_csv<W: Write>(out: W, series: &SeriesMap, decimals: Option<usize>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let Some(first) = series.values().next() else {
        w.write_record(["date"])?;
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["date".to_owned()];
    header.extend(series.keys().cloned());
    w.write_record(&header)?;
    for i in 0..first.len() {
        let mut row = vec![first.date_at(i).to_string()];
        for s in series.values() {
            let v = s.values()[i];
            row.push(match decimals {
                Some(d) => format!("{v:.d$}"),
                None => num(v),
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Prevalence CSV with six decimals.
pub fn write_prevalence<W: Write>(out: W, series: &SeriesMap) -> Result<()> {
    write_series_csv(out, series, Some(6))
}

/// The values a prevalence CSV holds after a write/read round trip.
pub fn as_written_prevalence(series: &SeriesMap) -> SeriesMap {
    series
        .iter()
        .map(|(k, s)| (k.clone(), s.map(|v| format!("{v:.6}").parse().unwrap_or(v))))
        .collect()
}

/// Reads `date,<names...>`; dates must be consecutive days.
pub fn read_series_csv<R: Read>(input: R) -> Result<SeriesMap> {
    let mut r = csv::Reader::from_reader(input);
    let names: Vec<String> = r.headers()?.iter().skip(1).map(|s| s.trim().to_owned()).collect();
    if names.is_empty() {
        return Err(Error::invalid("series csv", "no value columns"));
    }
    let mut start = None;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let date = parse_date(&rec[0], line)?;
        let expected = start.map(|s: NaiveDate| s + Days::new(cols[0].len() as u64));
        match expected {
            None => start = Some(date),
            Some(e) if e != date => {
                return Err(Error::invalid("series csv", format!("line {line}: expected {e}, found {date}")));
            }
            _ => {}
        }
        if rec.len() != names.len() + 1 {
            return Err(Error::invalid("series csv", format!("line {line}: wrong column count")));
        }
        for (c, field) in cols.iter_mut().zip(rec.iter().skip(1)) {
            c.push(parse_f64(field, line, "value")?);
        }
    }
    let start = start.ok_or_else(|| Error::invalid("series csv", "no rows"))?;
    Ok(names
        .into_iter()
        .zip(cols)
        .map(|(n, c)| (n, DailySeries::new(start, c)))
        .collect())
}

pub fn read_series_file(path: &Path) -> Result<SeriesMap> {
    read_series_csv(open(path)?).map_err(|e| with_path(e, path))
}

/// Prefixes parse errors with the file they came from.
pub fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Invalid { what, reason } => Error::Invalid {
            what,
            reason: format!("{}: {reason}", path.display()),
        },
        Error::Csv(err) => Error::Invalid {
            what: "csv",
            reason: format!("{}: {err}", path.display()),
        },
        other => other,
    }
}

/// `dimension,date,index,height,prominence`
pub fn write_peaks_csv<W: Write>(out: W, sets: &[PeakSet]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dimension", "date", "index", "height", "prominence"])?;
    for set in sets {
        for p in &set.peaks {
            w.write_record([
                set.series_id.clone(),
                p.date.to_string(),
                p.index.to_string(),
                num(p.height),
                num(p.prominence),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows by dimension, in first-seen order.
pub fn read_peaks_csv<R: Read>(input: R) -> Result<Vec<PeakSet>> {
    let mut r = csv::Reader::from_reader(input);
    let mut sets: Vec<PeakSet> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() < 2 {
            return Err(Error::invalid("peaks csv", format!("line {line}: wrong column count")));
        }
        let id = rec[0].to_owned();
        let field = |i: usize| rec.get(i).filter(|s| !s.trim().is_empty());
        let peak = Peak {
            date: parse_date(&rec[1], line)?,
            index: field(2).map_or(Ok(0), |s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::invalid("peaks csv", format!("line {line}: bad index")))
            })?,
            height: field(3).map_or(Ok(f64::NAN), |s| parse_f64(s, line, "height"))?,
            prominence: field(4).map_or(Ok(f64::NAN), |s| parse_f64(s, line, "prominence"))?,
        };
        match sets.iter_mut().find(|s| s.series_id == id) {
            Some(s) => s.peaks.push(peak),
            None => sets.push(PeakSet {
                series_id: id,
                peaks: vec![peak],
                percentile_threshold: None,
                n_candidates: 0,
            }),
        }
    }
    Ok(sets)
}

/// `origin,strategy,train_days,marker,h1..hH`; H is the longest horizon.
pub fn write_forecasts_csv<W: Write>(out: W, runs: &[ForecastRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let h = runs.iter().map(|r| r.horizon_days).max().unwrap_or(0);
    let mut header: Vec<String> = ["origin", "strategy", "train_days", "marker"].map(String::from).to_vec();
    header.extend((1..=h).map(|i| format!("h{i}")));
    w.write_record(&header)?;
    for run in runs {
        for (marker, pred) in &run.predictions {
            let mut row = vec![
                run.origin.to_string(),
                run.strategy.to_string(),
                run.train_days.to_string(),
                marker.clone(),
            ];
            row.extend(pred.values().iter().map(|v| num(*v)));
            row.resize(header.len(), String::new());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_forecasts_csv<R: Read>(input: R) -> Result<Vec<ForecastRun>> {
    let mut r = csv::Reader::from_reader(input);
    let mut runs: Vec<ForecastRun> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        if rec.len() < 5 {
            return Err(Error::invalid("forecast csv", format!("line {line}: wrong column count")));
        }
        let origin = parse_date(&rec[0], line)?;
        let strategy: StrategyKind = rec[1].trim().parse()?;
        let train_days: usize = rec[2]
            .trim()
            .parse()
            .map_err(|_| Error::invalid("forecast csv", format!("line {line}: bad train_days")))?;
        let marker = rec[3].to_owned();
        let values = rec
            .iter()
            .skip(4)
            .filter(|s| !s.trim().is_empty())
            .map(|s| parse_f64(s, line, "forecast"))
            .collect::<Result<Vec<f64>>>()?;
        let key = |r: &ForecastRun| r.origin == origin && r.strategy == strategy && r.train_days == train_days;
        let idx = match runs.iter().position(key) {
            Some(i) => i,
            None => {
                runs.push(ForecastRun {
                    origin,
                    strategy,
                    train_days,
                    horizon_days: values.len(),
                    predictions: SeriesMap::new(),
                    models: Vec::new(),
                });
                runs.len() - 1
            }
        };
        let run = &mut runs[idx];
        if values.len() != run.horizon_days {
            return Err(Error::invalid("forecast csv", format!("line {line}: horizon differs within a run")));
        }
        run.predictions.insert(marker, DailySeries::new(origin, values));
    }
    Ok(runs)
}

/// Per-run metadata written next to the forecast CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub origin: NaiveDate,
    pub strategy: StrategyKind,
    pub train_days: usize,
    pub horizon_days: usize,
    pub models: Vec<ModelInfo>,
}

pub fn run_metadata(runs: &[ForecastRun]) -> Vec<RunMetadata> {
    runs.iter()
        .map(|r| RunMetadata {
            origin: r.origin,
            strategy: r.strategy,
            train_days: r.train_days,
            horizon_days: r.horizon_days,
            models: r.models.clone(),
        })
        .collect()
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// `dimension,marker,strategy,train_days,mape_mean,mape_std`
pub fn write_mape_csv<W: Write>(out: W, rows: &[MapeRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dimension", "marker", "strategy", "train_days", "mape_mean", "mape_std"])?;
    for r in rows {
        w.write_record([
            r.dimension.clone(),
            r.marker.clone(),
            r.strategy.to_string(),
            r.train_days.to_string(),
            num(r.mape_mean),
            num(r.mape_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `dimension,strategy,n,hit_rate` followed by detail columns.
pub fn write_hits_csv<W: Write>(out: W, rows: &[HitRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "dimension",
        "strategy",
        "n",
        "hit_rate",
        "train_days",
        "mode",
        "precision",
        "n_actual",
        "n_predicted",
    ])?;
    for r in rows {
        let mode = match r.window.mode {
            crate::eval::HitMode::DayWindow => "day_window",
            crate::eval::HitMode::IsoWeek => "iso_week",
        };
        w.write_record([
            r.dimension.clone(),
            r.strategy.to_string(),
            r.window.n.to_string(),
            opt(r.hit_rate),
            r.train_days.to_string(),
            mode.to_owned(),
            opt(r.precision),
            r.n_actual.to_string(),
            r.n_predicted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub marker: String,
    pub strategy_a: StrategyKind,
    pub strategy_b: StrategyKind,
    pub train_days: usize,
    pub result: CompareResult,
}

/// One JSON object per line, in input order.
pub fn write_documents_ndjson<W: Write>(mut out: W, docs: &[crate::corpus::Document]) -> Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a whole file to a string with the path in the error.
pub fn read_to_string(path: &Path) -> Result<String> {
    let mut s = String::new();
    open(path)?.read_to_string(&mut s).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(n: u64) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap() + Days::new(n)
    }

    #[test]
    fn series_round_trip() {
        let mut m = SeriesMap::new();
        m.insert("fear".into(), DailySeries::new(d(0), vec![1.5, 2.25, 1.0 / 3.0]));
        m.insert("joy".into(), DailySeries::new(d(0), vec![0.0, 10.0, 7.125]));
        let mut buf = Vec::new();
        write_series_csv(&mut buf, &m, None).unwrap();
        assert_eq!(read_series_csv(&buf[..]).unwrap(), m);

        let mut buf = Vec::new();
        write_prevalence(&mut buf, &m).unwrap();
        assert_eq!(read_series_csv(&buf[..]).unwrap(), as_written_prevalence(&m));
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("date,fear,joy\n2020-03-01,1.500000,0.000000\n"), "{text}");
    }

    #[test]
    fn series_csv_rejects_gaps() {
        let text = "date,a\n2020-03-01,1\n2020-03-03,2\n";
        assert!(read_series_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn forecasts_round_trip() {
        let mut preds = SeriesMap::new();
        preds.insert("a".into(), DailySeries::new(d(7), vec![1.0, 2.0, 3.5]));
        preds.insert("b".into(), DailySeries::new(d(7), vec![0.1, 0.2, 0.3]));
        let run = ForecastRun {
            origin: d(7),
            strategy: StrategyKind::Arima,
            train_days: 7,
            horizon_days: 3,
            predictions: preds,
            models: vec![],
        };
        let mut buf = Vec::new();
        write_forecasts_csv(&mut buf, std::slice::from_ref(&run)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("origin,strategy,train_days,marker,h1,h2,h3\n2020-03-08,arima,7,a,1,2,3.5\n"));
        assert_eq!(read_forecasts_csv(&buf[..]).unwrap(), vec![run]);
    }

    #[test]
    fn documents_round_trip() {
        use crate::corpus::{parse_record, Document, DocumentKind};
        let doc = Document {
            id: "a1".into(),
            timestamp: d(2).and_hms_opt(13, 5, 0).unwrap().and_utc(),
            text: "hola \"mundo\"".into(),
            kind: DocumentKind::Reply,
        };
        let mut buf = Vec::new();
        write_documents_ndjson(&mut buf, std::slice::from_ref(&doc)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert_eq!(parse_record(line.trim_end(), 1).unwrap(), doc);
    }

    #[test]
    fn peaks_round_trip() {
        let set = PeakSet {
            series_id: "anxiety".into(),
            peaks: vec![Peak {
                index: 4,
                date: d(4),
                height: 0.5,
                prominence: 0.25,
            }],
            percentile_threshold: None,
            n_candidates: 0,
        };
        let mut buf = Vec::new();
        write_peaks_csv(&mut buf, std::slice::from_ref(&set)).unwrap();
        assert_eq!(read_peaks_csv(&buf[..]).unwrap(), vec![set]);
    }
}

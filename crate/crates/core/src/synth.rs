//! Seeded synthetic series and corpora for tests, benchmarks and demos.

use chrono::{Days, Duration, NaiveDate, NaiveTime};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, DocumentKind};
use crate::error::{Error, Result};
use crate::lexicon::Lexicon;
use crate::series::{DailySeries, SeriesMap};

pub const MIN_SYNTH_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum Generator {
    /// x_t = level + y_t, y_t = φ y_{t−1} + σ ε_t, y_0 from the stationary law
    /// when |φ| < 1, else 0.
    Ar1 {
        phi: f64,
        sigma: f64,
        #[serde(default)]
        level: f64,
    },
    /// x_t = A x_{t−1} + σ ε_t with x_0 = `init` (zeros by default).
    Var1 {
        a: Vec<Vec<f64>>,
        sigma: f64,
        #[serde(default)]
        init: Option<Vec<f64>>,
    },
    /// level + trend·t + amplitude·sin(2πt/period) + σ ε_t
    Seasonal {
        period: f64,
        amplitude: f64,
        trend: f64,
        #[serde(default)]
        level: f64,
        #[serde(default)]
        sigma: f64,
    },
    /// `markers` series sharing Gaussian bumps at `bump_days`:
    /// background + wave·sin(2πt/wave_period) + Σ height·exp(−(t−c)²/(2·width²)) + σ ε_t
    Peaks {
        background: f64,
        bump_days: Vec<usize>,
        bump_width: f64,
        bump_height: f64,
        #[serde(default = "one")]
        markers: usize,
        #[serde(default)]
        sigma: f64,
        #[serde(default)]
        wave_amplitude: f64,
        #[serde(default = "ten")]
        wave_period: f64,
    },
    /// A driver with recurring bumps every `period` days (jittered by up to
    /// `jitter` days) and followers that echo it `lags[i]` days later.
    Coupled {
        background: f64,
        period: usize,
        #[serde(default)]
        jitter: usize,
        bump_width: f64,
        bump_height: f64,
        lags: Vec<usize>,
        #[serde(default)]
        sigma: f64,
    },
}

fn one() -> usize {
    1
}

fn ten() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(flatten)]
    pub generator: Generator,
    pub length: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: NaiveDate,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
}

impl SynthSpec {
    pub fn new(generator: Generator, length: usize, seed: u64) -> Self {
        SynthSpec {
            generator,
            length,
            seed,
            start: default_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < MIN_SYNTH_LEN {
            return Err(Error::invalid("synth spec", format!("length {} < {MIN_SYNTH_LEN}", self.length)));
        }
        let sigma = match &self.generator {
            Generator::Ar1 { sigma, .. } | Generator::Var1 { sigma, .. } => *sigma,
            Generator::Seasonal { sigma, period, .. } => {
                if !(*period > 0.0) {
                    return Err(Error::invalid("synth spec", "period must be > 0"));
                }
                *sigma
            }
            Generator::Peaks {
                sigma,
                markers,
                bump_width,
                ..
            } => {
                if *markers == 0 || !(*bump_width > 0.0) {
                    return Err(Error::invalid("synth spec", "need markers >= 1 and bump_width > 0"));
                }
                *sigma
            }
            Generator::Coupled {
                sigma,
                period,
                jitter,
                bump_width,
                ..
            } => {
                if *period == 0 || jitter >= period || !(*bump_width > 0.0) {
                    return Err(Error::invalid("synth spec", "need period > jitter and bump_width > 0"));
                }
                *sigma
            }
        };
        if !(sigma >= 0.0) {
            return Err(Error::invalid("synth spec", format!("sigma must be >= 0, got {sigma}")));
        }
        if let Generator::Var1 { a, init, .. } = &self.generator {
            let k = a.len();
            if k == 0 || a.iter().any(|row| row.len() != k) {
                return Err(Error::invalid("synth spec", "A must be a non-empty square matrix"));
            }
            if init.as_ref().is_some_and(|v| v.len() != k) {
                return Err(Error::invalid("synth spec", "init length must match A"));
            }
        }
        Ok(())
    }
}

fn gaussian_bump(t: f64, center: f64, width: f64) -> f64 {
    (-(t - center).powi(2) / (2.0 * width * width)).exp()
}

fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        let e: f64 = StandardNormal.sample(rng);
        sigma * e
    }
}

/// Deterministic for a given spec. Univariate generators return one series
/// named "x"; multivariate ones name them "x0", "x1", ...
pub fn synth_generate(spec: &SynthSpec) -> Result<SeriesMap> {
    spec.validate()?;
    let n = spec.length;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cols: Vec<Vec<f64>> = match &spec.generator {
        Generator::Ar1 { phi, sigma, level } => {
            let mut y = if phi.abs() < 1.0 {
                noise(&mut rng, sigma / (1.0 - phi * phi).sqrt())
            } else {
                0.0
            };
            let mut x = Vec::with_capacity(n);
            x.push(level + y);
            for _ in 1..n {
                y = phi * y + noise(&mut rng, *sigma);
                x.push(level + y);
            }
            vec![x]
        }
        Generator::Var1 { a, sigma, init } => {
            let k = a.len();
            let mut cols = vec![Vec::with_capacity(n); k];
            let mut prev = init.clone().unwrap_or_else(|| vec![0.0; k]);
            for (c, v) in cols.iter_mut().zip(&prev) {
                c.push(*v);
            }
            for _ in 1..n {
                let next: Vec<f64> = (0..k)
                    .map(|i| (0..k).map(|j| a[i][j] * prev[j]).sum::<f64>())
                    .collect();
                prev = next.into_iter().map(|v| v + noise(&mut rng, *sigma)).collect();
                for (c, v) in cols.iter_mut().zip(&prev) {
                    c.push(*v);
                }
            }
            cols
        }
        Generator::Seasonal {
            period,
            amplitude,
            trend,
            level,
            sigma,
        } => {
            let x = (0..n)
                .map(|t| {
                    let t = t as f64;
                    level + trend * t + amplitude * (2.0 * std::f64::consts::PI * t / period).sin() + noise(&mut rng, *sigma)
                })
                .collect();
            vec![x]
        }
        Generator::Peaks {
            background,
            bump_days,
            bump_width,
            bump_height,
            markers,
            sigma,
            wave_amplitude,
            wave_period,
        } => {
            let base: Vec<f64> = (0..n)
                .map(|t| {
                    let tf = t as f64;
                    background
                        + wave_amplitude * (2.0 * std::f64::consts::PI * tf / wave_period).sin()
                        + bump_days
                            .iter()
                            .map(|&c| bump_height * gaussian_bump(tf, c as f64, *bump_width))
                            .sum::<f64>()
                })
                .collect();
            (0..*markers)
                .map(|_| base.iter().map(|b| b + noise(&mut rng, *sigma)).collect())
                .collect()
        }
        Generator::Coupled {
            background,
            period,
            jitter,
            bump_width,
            bump_height,
            lags,
            sigma,
        } => {
            let mut centers = Vec::new();
            let mut c = *period / 2;
            while c < n + period {
                let j = if *jitter > 0 {
                    rng.random_range(0..=2 * jitter) as i64 - *jitter as i64
                } else {
                    0
                };
                centers.push(c as f64 + j as f64);
                c += period;
            }
            let driver = |t: f64| -> f64 {
                centers
                    .iter()
                    .map(|&c| bump_height * gaussian_bump(t, c, *bump_width))
                    .sum::<f64>()
            };
            let mut cols = vec![(0..n).map(|t| background + driver(t as f64)).collect::<Vec<_>>()];
            for &lag in lags {
                cols.push((0..n).map(|t| background + driver(t as f64 - lag as f64)).collect());
            }
            for col in &mut cols {
                for v in col.iter_mut() {
                    *v += noise(&mut rng, *sigma);
                }
            }
            cols
        }
    };
    let single = cols.len() == 1;
    Ok(cols
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let name = if single { "x".to_owned() } else { format!("x{i}") };
            (name, DailySeries::new(spec.start, c))
        })
        .collect())
}

/// Bump centre dates of a `Peaks` spec.
pub fn planted_peak_dates(spec: &SynthSpec) -> Vec<NaiveDate> {
    match &spec.generator {
        Generator::Peaks { bump_days, .. } => bump_days
            .iter()
            .map(|&d| spec.start + Days::new(d as u64))
            .collect(),
        _ => Vec::new(),
    }
}

/// Synthetic documents whose daily marker prevalence follows `rates`
/// (percent, one series per lexicon marker, clamped to [0, 100]). A share of
/// `retweet_share` of documents are retweets.
pub fn synth_corpus(
    rates: &SeriesMap,
    lexicon: &Lexicon,
    docs_per_day: usize,
    retweet_share: f64,
    seed: u64,
) -> Result<Vec<Document>> {
    let markers: Vec<(&str, Vec<&String>)> = lexicon
        .marker_names()
        .map(|m| (m, lexicon.words(m).map(|w| w.iter().collect()).unwrap_or_default()))
        .collect();
    let Some(first) = rates.values().next() else {
        return Err(Error::insufficient("synth_corpus", "no rate series"));
    };
    for (m, _) in &markers {
        let s = rates.get(*m).ok_or_else(|| Error::UnknownMarker {
            marker: (*m).to_owned(),
            context: "synth_corpus rates".into(),
        })?;
        if s.len() != first.len() || s.start() != first.start() {
            return Err(Error::LengthMismatch {
                op: "synth_corpus",
                left: first.len(),
                right: s.len(),
            });
        }
    }
    const FILLER: [&str; 12] = [
        "el", "la", "de", "que", "en", "los", "hoy", "casa", "todo", "bien", "dia", "gente",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(first.len() * docs_per_day);
    let secs = Normal::new(43_200.0, 14_400.0).expect("valid normal");
    for day in 0..first.len() {
        let date = first.date_at(day);
        for i in 0..docs_per_day {
            let mut words: Vec<&str> = (0..rng.random_range(3..9)).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
            for (m, vocab) in &markers {
                let p = (rates[*m].values()[day] / 100.0).clamp(0.0, 1.0);
                if !vocab.is_empty() && rng.random::<f64>() < p {
                    let w = vocab.choose(&mut rng).unwrap();
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, w.as_str());
                }
            }
            let kind = if rng.random::<f64>() < retweet_share {
                DocumentKind::Retweet
            } else if rng.random::<f64>() < 0.3 {
                DocumentKind::Reply
            } else {
                DocumentKind::Original
            };
            let s: f64 = secs.sample(&mut rng);
            let s = s.clamp(0.0, 86_399.0) as i64;
            let timestamp = date.and_time(NaiveTime::MIN).and_utc() + Duration::seconds(s);
            docs.push(Document {
                id: format!("{}-{i}", date.format("%Y%m%d")),
                timestamp,
                text: words.join(" "),
                kind,
            });
        }
    }
    Ok(docs)
}

//! High-prevalence period detection: local maxima, topographic prominence,
//! percentile filtering, and the dimension-level gradient aggregate.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{gradient_values, quantile, rolling_mean_values, DailySeries, SeriesMap, SmoothingSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub index: usize,
    pub date: NaiveDate,
    pub height: f64,
    pub prominence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakSet {
    pub series_id: String,
    pub peaks: Vec<Peak>,
    /// Percentile of candidate prominences; `None` when there were no candidates.
    pub percentile_threshold: Option<f64>,
    pub n_candidates: usize,
}

impl PeakSet {
    pub fn dates(&self) -> Vec<NaiveDate> {
        self.peaks.iter().map(|p| p.date).collect()
    }

    pub fn from_dates(series_id: impl Into<String>, dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        let mut dates: Vec<NaiveDate> = dates.into_iter().collect();
        dates.sort();
        dates.dedup();
        PeakSet {
            series_id: series_id.into(),
            peaks: dates
                .into_iter()
                .map(|date| Peak {
                    index: 0,
                    date,
                    height: f64::NAN,
                    prominence: f64::NAN,
                })
                .collect(),
            percentile_threshold: None,
            n_candidates: 0,
        }
    }
}

/// What the dimension-level peak search runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeakMode {
    /// Mean of the marker gradients of the smoothed series.
    #[default]
    Gradient,
    /// Mean of the smoothed marker series themselves (chart annotation).
    Smoothed,
}

impl std::str::FromStr for PeakMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(PeakMode::Gradient),
            "smoothed" => Ok(PeakMode::Smoothed),
            other => Err(Error::invalid("peak mode", other.to_owned())),
        }
    }
}

/// Strict local maxima; a plateau above both neighbours reports its leftmost
/// index. Endpoints never qualify.
pub fn find_candidate_peaks(s: &[f64]) -> Result<Vec<usize>> {
    let n = s.len();
    if n < 3 {
        return Err(Error::too_short("find_candidate_peaks", 3, n));
    }
    let mut out = Vec::new();
    let mut i = 1;
    while i < n - 1 {
        if s[i] > s[i - 1] {
            let mut j = i;
            while j + 1 < n && s[j + 1] == s[i] {
                j += 1;
            }
            if j + 1 < n && s[j + 1] < s[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    Ok(out)
}

fn is_candidate(s: &[f64], i: usize) -> bool {
    let n = s.len();
    if i == 0 || i + 1 >= n || s[i] <= s[i - 1] {
        return false;
    }
    let mut j = i;
    while j + 1 < n && s[j + 1] == s[i] {
        j += 1;
    }
    j + 1 < n && s[j + 1] < s[i]
}

/// Height above the higher of the two contour bases. Each base is the minimum
/// between the peak and the nearest strictly higher point on that side, or
/// the series end when there is none.
pub fn prominence(s: &[f64], peak: usize) -> Result<f64> {
    if !is_candidate(s, peak) {
        return Err(Error::NotAPeak(peak));
    }
    Ok(prominence_unchecked(s, peak))
}

fn prominence_unchecked(s: &[f64], peak: usize) -> f64 {
    let h = s[peak];
    let mut left_base = h;
    for &v in s[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_base = left_base.min(v);
    }
    let mut right_base = h;
    for &v in &s[peak + 1..] {
        if v > h {
            break;
        }
        right_base = right_base.min(v);
    }
    h - left_base.max(right_base)
}

/// Keeps the candidates whose prominence is strictly above the given
/// percentile (0–100, type-7) of all candidate prominences in `s`.
pub fn select_peaks(s: &DailySeries, series_id: &str, percentile: f64) -> Result<PeakSet> {
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::invalid("percentile", format!("{percentile} not in [0, 100]")));
    }
    let x = s.values();
    let candidates = find_candidate_peaks(x)?;
    let prominences: Vec<f64> = candidates.iter().map(|&i| prominence_unchecked(x, i)).collect();
    if candidates.is_empty() {
        return Ok(PeakSet {
            series_id: series_id.to_owned(),
            peaks: Vec::new(),
            percentile_threshold: None,
            n_candidates: 0,
        });
    }
    let threshold = quantile(&prominences, percentile / 100.0);
    let peaks = candidates
        .iter()
        .zip(&prominences)
        .filter(|(_, &p)| p > threshold)
        .map(|(&i, &p)| Peak {
            index: i,
            date: s.date_at(i),
            height: x[i],
            prominence: p,
        })
        .collect();
    Ok(PeakSet {
        series_id: series_id.to_owned(),
        peaks,
        percentile_threshold: Some(threshold),
        n_candidates: candidates.len(),
    })
}

fn check_aligned(markers: &SeriesMap) -> Result<(NaiveDate, usize)> {
    if markers.len() < 2 {
        return Err(Error::invalid(
            "dimension",
            format!("{} marker series given; at least 2 required", markers.len()),
        ));
    }
    let first = markers.values().next().unwrap();
    for s in markers.values() {
        if s.len() != first.len() || s.start() != first.start() {
            return Err(Error::LengthMismatch {
                op: "dimension_peaks",
                left: first.len(),
                right: s.len(),
            });
        }
    }
    Ok((first.start(), first.len()))
}

/// Pointwise mean over markers of the gradient of each smoothed series.
/// The sum runs in marker-name order so the result is independent of the
/// map's insertion order.
pub fn dimension_series(markers: &SeriesMap, smoothing: &SmoothingSpec, mode: PeakMode) -> Result<DailySeries> {
    let (start, len) = check_aligned(markers)?;
    if mode == PeakMode::Gradient && len < 2 {
        return Err(Error::too_short("dimension_peaks", 2, len));
    }
    let mut names: Vec<&String> = markers.keys().collect();
    names.sort();
    let mut acc = vec![0.0; len];
    for name in names {
        let smoothed = rolling_mean_values(markers[name].values(), smoothing.window_days.max(1));
        let contrib = match mode {
            PeakMode::Gradient => gradient_values(&smoothed)?,
            PeakMode::Smoothed => smoothed,
        };
        for (a, c) in acc.iter_mut().zip(contrib) {
            *a += c;
        }
    }
    let k = markers.len() as f64;
    Ok(DailySeries::new(start, acc.into_iter().map(|v| v / k).collect()))
}

/// Dimension-level high-prevalence peaks.
pub fn dimension_peaks(
    markers: &SeriesMap,
    series_id: &str,
    smoothing: &SmoothingSpec,
    percentile: f64,
    mode: PeakMode,
) -> Result<PeakSet> {
    let series = dimension_series(markers, smoothing, mode)?;
    select_peaks(&series, series_id, percentile)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ser(v: &[f64]) -> DailySeries {
        DailySeries::new(NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(), v.to_vec())
    }

    #[test]
    fn candidate_examples() {
        assert_eq!(find_candidate_peaks(&[0.0, 2.0, 0.0]).unwrap(), vec![1]);
        assert!(find_candidate_peaks(&[1.0, 2.0, 3.0]).unwrap().is_empty());
        assert_eq!(find_candidate_peaks(&[0.0, 2.0, 2.0, 0.0]).unwrap(), vec![1]);
        assert!(find_candidate_peaks(&[0.0, 2.0, 2.0, 3.0]).unwrap().is_empty());
        assert!(find_candidate_peaks(&[1.0; 5]).unwrap().is_empty());
        assert!(matches!(find_candidate_peaks(&[1.0, 2.0]), Err(Error::TooShort { .. })));
    }

    #[test]
    fn prominence_examples() {
        assert_eq!(prominence(&[0.0, 5.0, 0.0], 1).unwrap(), 5.0);
        let s = [0.0, 3.0, 1.0, 5.0, 0.0];
        assert_eq!(prominence(&s, 1).unwrap(), 2.0);
        assert_eq!(prominence(&s, 3).unwrap(), 5.0);
        assert!(matches!(prominence(&s, 2), Err(Error::NotAPeak(2))));
        assert!(matches!(prominence(&s, 0), Err(Error::NotAPeak(0))));
    }

    #[test]
    fn percentile_selection() {
        // candidate prominences 1, 2, 3
        let s = ser(&[0.0, 1.0, 0.0, 2.0, 0.0, 3.0, 0.0]);
        let set = select_peaks(&s, "x", 80.0).unwrap();
        assert!((set.percentile_threshold.unwrap() - 2.6).abs() < 1e-12);
        assert_eq!(set.peaks.len(), 1);
        assert_eq!(set.peaks[0].index, 5);
        assert_eq!(set.peaks[0].date, NaiveDate::from_ymd_opt(2020, 3, 6).unwrap());
        assert_eq!(set.n_candidates, 3);

        let single = select_peaks(&ser(&[0.0, 1.0, 0.0]), "x", 80.0).unwrap();
        assert_eq!(single.percentile_threshold, Some(1.0));
        assert!(single.peaks.is_empty());

        let flat = select_peaks(&ser(&[1.0; 6]), "x", 80.0).unwrap();
        assert_eq!(flat.percentile_threshold, None);
        assert!(flat.peaks.is_empty());
    }

    #[test]
    fn identical_markers_equal_single_pipeline() {
        let v: Vec<f64> = (0..60).map(|t| ((t as f64) * 0.7).sin() + (t as f64 * 0.13).cos()).collect();
        let spec = SmoothingSpec::default();
        let mut m = SeriesMap::new();
        m.insert("a".into(), ser(&v));
        m.insert("b".into(), ser(&v));
        let joint = dimension_peaks(&m, "d", &spec, 80.0, PeakMode::Gradient).unwrap();
        let g = gradient_values(&rolling_mean_values(&v, 7)).unwrap();
        let single = select_peaks(&ser(&g), "d", 80.0).unwrap();
        assert_eq!(joint, single);
    }

    #[test]
    fn opposite_gradients_cancel() {
        let v: Vec<f64> = (0..40).map(|t| ((t as f64) * 0.5).sin() * 3.0 + 10.0).collect();
        let w: Vec<f64> = v.iter().map(|x| 20.0 - x).collect();
        let mut m = SeriesMap::new();
        m.insert("up".into(), ser(&v));
        m.insert("down".into(), ser(&w));
        let set = dimension_peaks(&m, "d", &SmoothingSpec::default(), 80.0, PeakMode::Gradient).unwrap();
        // only rounding residue survives
        assert!(set.peaks.iter().all(|p| p.prominence < 1e-9), "{set:?}");
    }

    #[test]
    fn dimension_requires_aligned_markers() {
        let mut m = SeriesMap::new();
        m.insert("a".into(), ser(&[1.0, 2.0, 3.0, 4.0]));
        assert!(dimension_peaks(&m, "d", &SmoothingSpec::default(), 80.0, PeakMode::Gradient).is_err());
        m.insert("b".into(), ser(&[1.0, 2.0, 3.0]));
        assert!(matches!(
            dimension_peaks(&m, "d", &SmoothingSpec::default(), 80.0, PeakMode::Gradient),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// Enumerates every window [a, b] around the peak in which the peak is the
    /// maximum; prominence is the best height drop to the higher window-side minimum.
    fn brute_force_prominence(s: &[f64], p: usize) -> f64 {
        let mut best: f64 = 0.0;
        for a in 0..=p {
            for b in p..s.len() {
                if s[a..=b].iter().any(|&v| v > s[p]) {
                    continue;
                }
                let lmin = s[a..=p].iter().cloned().fold(f64::INFINITY, f64::min);
                let rmin = s[p..=b].iter().cloned().fold(f64::INFINITY, f64::min);
                best = best.max(s[p] - lmin.max(rmin));
            }
        }
        best
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn prominence_matches_brute_force(s in proptest::collection::vec(0u8..6, 3..50)) {
                let s: Vec<f64> = s.into_iter().map(f64::from).collect();
                for p in find_candidate_peaks(&s).unwrap() {
                    let got = prominence(&s, p).unwrap();
                    prop_assert_eq!(got, brute_force_prominence(&s, p));
                    prop_assert!(got >= 0.0);
                    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
                    prop_assert!(got <= s[p] - min);
                }
            }

            #[test]
            fn selection_is_affine_invariant(
                s in proptest::collection::vec(-10i32..10, 3..60),
                c in 1i32..8, b in -50i32..50,
            ) {
                // integer-valued so the affine map is exact in floating point
                let base: Vec<f64> = s.iter().map(|&v| f64::from(v)).collect();
                let moved: Vec<f64> = base.iter().map(|v| f64::from(c) * v + f64::from(b)).collect();
                let a = select_peaks(&ser(&base), "a", 80.0).unwrap();
                let m = select_peaks(&ser(&moved), "a", 80.0).unwrap();
                let ia: Vec<usize> = a.peaks.iter().map(|p| p.index).collect();
                let im: Vec<usize> = m.peaks.iter().map(|p| p.index).collect();
                prop_assert_eq!(ia, im);
                for p in &a.peaks {
                    prop_assert!(p.prominence > a.percentile_threshold.unwrap());
                }
            }

            #[test]
            fn dimension_peaks_ignore_marker_order(
                rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -5.0f64..5.0), 10..50),
            ) {
                let cols: [Vec<f64>; 3] = [
                    rows.iter().map(|r| r.0).collect(),
                    rows.iter().map(|r| r.1).collect(),
                    rows.iter().map(|r| r.2).collect(),
                ];
                let mut fwd = SeriesMap::new();
                let mut rev = SeriesMap::new();
                for (i, c) in cols.iter().enumerate() {
                    fwd.insert(format!("m{i}"), ser(c));
                }
                for (i, c) in cols.iter().enumerate().rev() {
                    rev.insert(format!("m{i}"), ser(c));
                }
                let spec = SmoothingSpec::default();
                prop_assert_eq!(
                    dimension_peaks(&fwd, "d", &spec, 80.0, PeakMode::Gradient).unwrap(),
                    dimension_peaks(&rev, "d", &spec, 80.0, PeakMode::Gradient).unwrap()
                );
            }
        }
    }
}

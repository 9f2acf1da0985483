//! Marker lexicons, dimension configurations and daily prevalence counting.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::{Days, NaiveDate};
use rayon::prelude::*;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{preprocess_text, Document, TokenList};
use crate::error::{Error, Result};
use crate::series::{DailySeries, SeriesMap};

#[derive(Debug, Clone, PartialEq, Eq)]
struct Marker {
    name: String,
    words: BTreeSet<String>,
    /// Multi-word entries, matched as consecutive tokens.
    phrases: Vec<Vec<String>>,
}

/// Marker name → word set, in file order. Immutable once built.
#[derive(Debug, Clone)]
pub struct Lexicon {
    markers: Vec<Marker>,
    by_name: HashMap<String, usize>,
    word_index: HashMap<String, Vec<usize>>,
    /// First word of each phrase → (marker, phrase position in `markers[m].phrases`).
    phrase_index: HashMap<String, Vec<(usize, usize)>>,
}

impl Lexicon {
    /// Builds a lexicon from `(marker, words)` pairs. Words are lowercased;
    /// entries containing whitespace become phrases.
    pub fn from_entries<I, S, W>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, W)>,
        S: Into<String>,
        W: IntoIterator,
        W::Item: AsRef<str>,
    {
        let mut markers = Vec::new();
        let mut by_name = HashMap::new();
        for (line, (name, words)) in entries.into_iter().enumerate() {
            let name = name.into();
            let words: Vec<String> = words.into_iter().map(|w| w.as_ref().to_owned()).collect();
            add_marker(&mut markers, &mut by_name, name, words, line + 1)?;
        }
        Ok(Self::index(markers, by_name))
    }

    /// Parses the JSON lexicon format: `{"marker": ["word", ...], ...}`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let entries = parse_ordered_object(text)?;
        let mut markers = Vec::new();
        let mut by_name = HashMap::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (name, value) in &entries {
            let occurrence = seen.entry(name.as_str()).or_insert(0);
            let line = key_line(text, name, *occurrence);
            *occurrence += 1;
            let words = match value {
                Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => Ok(s.clone()),
                        other => Err(Error::LexiconFormat {
                            marker: name.clone(),
                            line,
                            reason: format!("expected string word, found {other}"),
                        }),
                    })
                    .collect::<Result<Vec<_>>>()?,
                other => {
                    return Err(Error::LexiconFormat {
                        marker: name.clone(),
                        line,
                        reason: format!("expected array of words, found {other}"),
                    })
                }
            };
            add_marker(&mut markers, &mut by_name, name.clone(), words, line)?;
        }
        Ok(Self::index(markers, by_name))
    }

    fn index(markers: Vec<Marker>, by_name: HashMap<String, usize>) -> Self {
        let mut word_index: HashMap<String, Vec<usize>> = HashMap::new();
        let mut phrase_index: HashMap<String, Vec<(usize, usize)>> = HashMap::new();
        for (m, marker) in markers.iter().enumerate() {
            for w in &marker.words {
                word_index.entry(w.clone()).or_default().push(m);
            }
            for (p, phrase) in marker.phrases.iter().enumerate() {
                phrase_index.entry(phrase[0].clone()).or_default().push((m, p));
            }
        }
        Lexicon {
            markers,
            by_name,
            word_index,
            phrase_index,
        }
    }

    pub fn len(&self) -> usize {
        self.markers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markers.is_empty()
    }

    pub fn marker_names(&self) -> impl Iterator<Item = &str> {
        self.markers.iter().map(|m| m.name.as_str())
    }

    pub fn contains(&self, marker: &str) -> bool {
        self.by_name.contains_key(marker)
    }

    /// Single-word entries of a marker.
    pub fn words(&self, marker: &str) -> Option<&BTreeSet<String>> {
        self.by_name.get(marker).map(|&i| &self.markers[i].words)
    }

    /// Sorted, deduplicated indices of the markers matched by `tokens`.
    pub fn match_indices(&self, tokens: &[String]) -> Vec<usize> {
        let mut hit = vec![false; self.markers.len()];
        for (i, tok) in tokens.iter().enumerate() {
            if let Some(ms) = self.word_index.get(tok) {
                for &m in ms {
                    hit[m] = true;
                }
            }
            if let Some(ps) = self.phrase_index.get(tok) {
                for &(m, p) in ps {
                    let phrase = &self.markers[m].phrases[p];
                    if tokens.len() - i >= phrase.len()
                        && phrase.iter().zip(&tokens[i..]).all(|(a, b)| a == b)
                    {
                        hit[m] = true;
                    }
                }
            }
        }
        hit.iter()
            .enumerate()
            .filter_map(|(i, &h)| h.then_some(i))
            .collect()
    }
}

fn add_marker(
    markers: &mut Vec<Marker>,
    by_name: &mut HashMap<String, usize>,
    name: String,
    words: Vec<String>,
    line: usize,
) -> Result<()> {
    if name.is_empty() {
        return Err(Error::LexiconFormat {
            marker: name,
            line,
            reason: "empty marker name".into(),
        });
    }
    if by_name.contains_key(&name) {
        return Err(Error::DuplicateMarker { marker: name, line });
    }
    let mut single = BTreeSet::new();
    let mut phrases = Vec::new();
    for w in &words {
        let parts: Vec<String> = w.split_whitespace().map(str::to_lowercase).collect();
        match parts.len() {
            0 => {
                return Err(Error::LexiconFormat {
                    marker: name,
                    line,
                    reason: "empty word".into(),
                })
            }
            1 => {
                single.insert(parts.into_iter().next().unwrap());
            }
            _ => {
                if !phrases.contains(&parts) {
                    phrases.push(parts);
                }
            }
        }
    }
    if single.is_empty() && phrases.is_empty() {
        return Err(Error::LexiconFormat {
            marker: name,
            line,
            reason: "marker has no words".into(),
        });
    }
    by_name.insert(name.clone(), markers.len());
    markers.push(Marker {
        name,
        words: single,
        phrases,
    });
    Ok(())
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Lexicon> {
    Lexicon::from_json_str(&read_file(path.as_ref())?)
}

pub(crate) fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::File {
        path: path.display().to_string(),
        source,
    })
}

/// Markers present in `tokens`, by name.
pub fn match_markers<'a>(tokens: &TokenList, lexicon: &'a Lexicon) -> BTreeSet<&'a str> {
    lexicon
        .match_indices(tokens.tokens())
        .into_iter()
        .map(|i| lexicon.markers[i].name.as_str())
        .collect()
}

/// A named group of markers analyzed jointly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionSpec {
    pub name: String,
    pub markers: Vec<String>,
}

impl DimensionSpec {
    pub fn validate(&self, available: impl Fn(&str) -> bool) -> Result<()> {
        if self.markers.len() < 2 {
            return Err(Error::invalid(
                "dimension",
                format!("{} lists {} marker(s); at least 2 required", self.name, self.markers.len()),
            ));
        }
        for m in &self.markers {
            if !available(m) {
                return Err(Error::UnknownMarker {
                    marker: m.clone(),
                    context: format!("dimension {}", self.name),
                });
            }
        }
        Ok(())
    }
}

/// Parses `{"dimension": ["marker", ...], ...}` preserving file order.
pub fn parse_dimensions(text: &str) -> Result<Vec<DimensionSpec>> {
    let mut dims: Vec<DimensionSpec> = Vec::new();
    for (name, value) in parse_ordered_object(text)? {
        if dims.iter().any(|d| d.name == name) {
            return Err(Error::invalid("dimension config", format!("duplicate dimension {name}")));
        }
        let markers: Vec<String> = serde_json::from_value(value)
            .map_err(|e| Error::invalid("dimension config", format!("{name}: {e}")))?;
        dims.push(DimensionSpec { name, markers });
    }
    Ok(dims)
}

pub fn load_dimensions(path: impl AsRef<Path>) -> Result<Vec<DimensionSpec>> {
    parse_dimensions(&read_file(path.as_ref())?)
}

/// Top-level JSON object as ordered `(key, value)` pairs, duplicates kept.
fn parse_ordered_object(text: &str) -> Result<Vec<(String, Value)>> {
    struct Entries(Vec<(String, Value)>);

    impl<'de> Deserialize<'de> for Entries {
        fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
            struct V;
            impl<'de> Visitor<'de> for V {
                type Value = Entries;
                fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                    f.write_str("a JSON object")
                }
                fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Entries, A::Error> {
                    let mut out = Vec::new();
                    while let Some((k, v)) = map.next_entry::<String, Value>()? {
                        out.push((k, v));
                    }
                    Ok(Entries(out))
                }
            }
            d.deserialize_map(V)
        }
    }

    match serde_json::from_str::<Entries>(text) {
        Ok(e) => Ok(e.0),
        Err(e) => Err(Error::LexiconFormat {
            marker: String::new(),
            line: e.line(),
            reason: e.to_string(),
        }),
    }
}

/// 1-based line of the `occurrence`-th appearance of `key` as an object key.
fn key_line(text: &str, key: &str, occurrence: usize) -> usize {
    let quoted = serde_json::to_string(key).unwrap_or_default();
    let mut seen = 0;
    let mut from = 0;
    while let Some(pos) = text[from..].find(&quoted) {
        let at = from + pos;
        let after = text[at + quoted.len()..].trim_start();
        if after.starts_with(':') {
            if seen == occurrence {
                return text[..at].matches('\n').count() + 1;
            }
            seen += 1;
        }
        from = at + quoted.len();
    }
    0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillPolicy {
    #[default]
    Error,
    Interpolate,
}

impl std::str::FromStr for FillPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(FillPolicy::Error),
            "interpolate" => Ok(FillPolicy::Interpolate),
            other => Err(Error::invalid("fill policy", other.to_owned())),
        }
    }
}

/// Inclusive calendar range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::invalid("date range", format!("{start} is after {end}")));
        }
        Ok(DateRange { start, end })
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, d: NaiveDate) -> bool {
        d >= self.start && d <= self.end
    }
}

/// Per-day document totals and per-marker match counts. Merging is
/// associative and commutative, so partitions can be counted independently.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PrevalenceCounts {
    n_markers: usize,
    days: BTreeMap<NaiveDate, (u64, Vec<u64>)>,
}

impl PrevalenceCounts {
    pub fn new(n_markers: usize) -> Self {
        PrevalenceCounts {
            n_markers,
            days: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, date: NaiveDate, matched: &[usize]) {
        let n = self.n_markers;
        let entry = self.days.entry(date).or_insert_with(|| (0, vec![0; n]));
        entry.0 += 1;
        for &m in matched {
            entry.1[m] += 1;
        }
    }

    pub fn merge(mut self, other: PrevalenceCounts) -> Self {
        for (date, (total, matches)) in other.days {
            let n = self.n_markers;
            let entry = self.days.entry(date).or_insert_with(|| (0, vec![0; n]));
            entry.0 += total;
            for (a, b) in entry.1.iter_mut().zip(matches) {
                *a += b;
            }
        }
        self
    }

    pub fn total(&self, date: NaiveDate) -> u64 {
        self.days.get(&date).map_or(0, |d| d.0)
    }

    /// Percent series per marker over `range`.
    pub fn finish(&self, lexicon: &Lexicon, range: DateRange, fill: FillPolicy) -> Result<SeriesMap> {
        let n_days = range.days();
        let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n_days); self.n_markers];
        for k in 0..n_days {
            let date = range.start + Days::new(k as u64);
            match self.days.get(&date) {
                Some((total, matches)) if *total > 0 => {
                    for (col, &m) in columns.iter_mut().zip(matches) {
                        col.push(Some(100.0 * m as f64 / *total as f64));
                    }
                }
                _ => {
                    if fill == FillPolicy::Error {
                        return Err(Error::MissingDay(date));
                    }
                    for col in columns.iter_mut() {
                        col.push(None);
                    }
                }
            }
        }
        let mut out = SeriesMap::new();
        for (name, col) in lexicon.marker_names().zip(columns) {
            let values = interpolate_gaps(&col, range.start)?;
            out.insert(name.to_owned(), DailySeries::new(range.start, values));
        }
        Ok(out)
    }
}

fn interpolate_gaps(col: &[Option<f64>], start: NaiveDate) -> Result<Vec<f64>> {
    let n = col.len();
    let day = |i: usize| start + Days::new(i as u64);
    if col.first().is_some_and(Option::is_none) {
        return Err(Error::CannotExtrapolate(day(0)));
    }
    if col.last().is_some_and(Option::is_none) {
        return Err(Error::CannotExtrapolate(day(n - 1)));
    }
    let mut out = Vec::with_capacity(n);
    let mut last_known = 0;
    for i in 0..n {
        match col[i] {
            Some(v) => {
                out.push(v);
                last_known = i;
            }
            None => {
                let next = (i + 1..n).find(|&j| col[j].is_some()).expect("last day is known");
                let (a, b) = (col[last_known].unwrap(), col[next].unwrap());
                let w = (i - last_known) as f64 / (next - last_known) as f64;
                out.push(a + w * (b - a));
            }
        }
    }
    Ok(out)
}

/// Daily percentage of documents matching each marker.
pub fn daily_prevalence<'a, I>(docs: I, lexicon: &Lexicon, range: DateRange, fill: FillPolicy) -> Result<SeriesMap>
where
    I: IntoIterator<Item = (&'a Document, &'a TokenList)>,
{
    let mut counts = PrevalenceCounts::new(lexicon.len());
    for (doc, tokens) in docs {
        let date = doc.date();
        if range.contains(date) {
            counts.add(date, &lexicon.match_indices(tokens.tokens()));
        }
    }
    counts.finish(lexicon, range, fill)
}

/// Tokenizes, matches and counts raw documents on `jobs` workers
/// (`jobs <= 1` runs on the calling thread). Output does not depend on `jobs`.
pub fn count_documents(docs: &[Document], lexicon: &Lexicon, range: DateRange, jobs: usize) -> PrevalenceCounts {
    let count_chunk = |chunk: &[Document]| {
        let mut counts = PrevalenceCounts::new(lexicon.len());
        for doc in chunk {
            let date = doc.date();
            if range.contains(date) {
                let tokens = preprocess_text(&doc.text);
                counts.add(date, &lexicon.match_indices(tokens.tokens()));
            }
        }
        counts
    };
    if jobs <= 1 || docs.len() < 2 {
        return count_chunk(docs);
    }
    let chunk = docs.len().div_ceil(jobs * 4).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build();
    let run = || {
        docs.par_chunks(chunk)
            .map(count_chunk)
            .reduce(|| PrevalenceCounts::new(lexicon.len()), PrevalenceCounts::merge)
    };
    match pool {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_timestamp, DocumentKind};

    fn lex(entries: &[(&str, &[&str])]) -> Lexicon {
        Lexicon::from_entries(entries.iter().map(|(n, w)| (*n, w.iter().copied()))).unwrap()
    }

    fn toks(v: &[&str]) -> TokenList {
        TokenList(v.iter().map(|s| s.to_string()).collect())
    }

    fn doc(day: u32, text: &str) -> Document {
        Document {
            id: format!("{day}-{text}"),
            timestamp: parse_timestamp(&format!("2020-03-{day:02}T12:00:00Z")).unwrap(),
            text: text.into(),
            kind: DocumentKind::Original,
        }
    }

    fn march(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, d).unwrap()
    }

    #[test]
    fn loads_json_lexicon() {
        let l = Lexicon::from_json_str(r#"{"fear":["miedo","Temor"],"sadness":["triste"]}"#).unwrap();
        assert_eq!(l.len(), 2);
        assert!(l.words("fear").unwrap().contains("temor"), "words lowercased on load");
        assert_eq!(l.marker_names().collect::<Vec<_>>(), ["fear", "sadness"]);
    }

    #[test]
    fn empty_word_list_is_error() {
        let err = Lexicon::from_json_str("{\n\"fear\": [\"miedo\"],\n\"sadness\": []\n}").unwrap_err();
        match err {
            Error::LexiconFormat { marker, line, .. } => {
                assert_eq!(marker, "sadness");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_marker_is_error() {
        let err = Lexicon::from_json_str("{\"fear\":[\"miedo\"],\n\"fear\":[\"temor\"]}").unwrap_err();
        assert!(matches!(err, Error::DuplicateMarker { ref marker, line: 2 } if marker == "fear"), "{err:?}");
    }

    #[test]
    fn malformed_json_reports_line() {
        let err = Lexicon::from_json_str("{\n\"fear\": [\"miedo\",]\n}").unwrap_err();
        assert!(matches!(err, Error::LexiconFormat { line: 2, .. }), "{err:?}");
        assert!(Lexicon::from_json_str(r#"{"fear": "miedo"}"#).is_err());
    }

    #[test]
    fn match_marker_examples() {
        let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"])]);
        let m = match_markers(&toks(&["tengo", "miedo"]), &l);
        assert_eq!(m.into_iter().collect::<Vec<_>>(), ["fear"]);
        assert!(match_markers(&toks(&[]), &l).is_empty());

        let l = lex(&[("fear", &["miedo"]), ("horror", &["miedo"])]);
        let m = match_markers(&toks(&["miedo"]), &l);
        assert_eq!(m.into_iter().collect::<Vec<_>>(), ["fear", "horror"]);
    }

    #[test]
    fn phrases_need_consecutive_tokens() {
        let l = lex(&[("stress", &["sin dormir"])]);
        assert_eq!(match_markers(&toks(&["estoy", "sin", "dormir"]), &l).len(), 1);
        assert!(match_markers(&toks(&["sin", "poder", "dormir"]), &l).is_empty());
        assert!(match_markers(&toks(&["dormir", "sin"]), &l).is_empty());
    }

    #[test]
    fn prevalence_counts() {
        let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"])]);
        let mut docs = Vec::new();
        for i in 0..10 {
            let text = match i {
                0 => "miedo y triste",
                1 | 2 => "miedo",
                _ => "nada",
            };
            docs.push(doc(1, text));
        }
        let tokens: Vec<TokenList> = docs.iter().map(|d| preprocess_text(&d.text)).collect();
        let range = DateRange::new(march(1), march(1)).unwrap();
        let out = daily_prevalence(docs.iter().zip(&tokens), &l, range, FillPolicy::Error).unwrap();
        assert_eq!(out["fear"].values(), &[30.0]);
        assert_eq!(out["sadness"].values(), &[10.0]);
    }

    #[test]
    fn missing_day_policies() {
        let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"])]);
        let docs = [doc(1, "miedo"), doc(3, "nada"), doc(9, "miedo")];
        let tokens: Vec<TokenList> = docs.iter().map(|d| preprocess_text(&d.text)).collect();
        let range = DateRange::new(march(1), march(3)).unwrap();
        let err = daily_prevalence(docs.iter().zip(&tokens), &l, range, FillPolicy::Error).unwrap_err();
        assert!(matches!(err, Error::MissingDay(d) if d == march(2)));

        let out = daily_prevalence(docs.iter().zip(&tokens), &l, range, FillPolicy::Interpolate).unwrap();
        assert_eq!(out["fear"].values(), &[100.0, 50.0, 0.0]);

        let range = DateRange::new(march(1), march(4)).unwrap();
        let err = daily_prevalence(docs.iter().zip(&tokens), &l, range, FillPolicy::Interpolate).unwrap_err();
        assert!(matches!(err, Error::CannotExtrapolate(d) if d == march(4)));
    }

    #[test]
    fn duplicated_corpus_same_series() {
        let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"])]);
        let docs: Vec<Document> = (0..30)
            .map(|i| doc(1 + i % 3, if i % 4 == 0 { "miedo triste" } else if i % 5 == 0 { "triste" } else { "x" }))
            .collect();
        let doubled: Vec<Document> = docs.iter().chain(&docs).cloned().collect();
        let range = DateRange::new(march(1), march(3)).unwrap();
        let a = count_documents(&docs, &l, range, 1).finish(&l, range, FillPolicy::Error).unwrap();
        let b = count_documents(&doubled, &l, range, 1).finish(&l, range, FillPolicy::Error).unwrap();
        assert_eq!(a, b);
        for s in a.values() {
            assert!(s.values().iter().all(|v| (0.0..=100.0).contains(v)));
        }
    }

    #[test]
    fn dimension_validation() {
        let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"])]);
        let dims = parse_dimensions(r#"{"anxiety":["fear","sadness"],"x":["fear"]}"#).unwrap();
        assert!(dims[0].validate(|m| l.contains(m)).is_ok());
        assert!(dims[1].validate(|m| l.contains(m)).is_err());
        let bad = DimensionSpec {
            name: "y".into(),
            markers: vec!["fear".into(), "hope".into()],
        };
        assert!(matches!(bad.validate(|m| l.contains(m)), Err(Error::UnknownMarker { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partitioned_counting_matches_sequential(
                picks in proptest::collection::vec((1u32..5, 0usize..4), 1..80),
                cut in 0usize..80,
            ) {
                let l = lex(&[("fear", &["miedo"]), ("sadness", &["triste"]), ("joy", &["feliz"])]);
                let texts = ["miedo", "triste feliz", "nada", "miedo triste"];
                let docs: Vec<Document> = picks.iter().map(|&(d, t)| doc(d, texts[t])).collect();
                let range = DateRange::new(march(1), march(4)).unwrap();
                let whole = count_documents(&docs, &l, range, 1);
                let cut = cut.min(docs.len());
                let (a, b) = docs.split_at(cut);
                let merged = count_documents(b, &l, range, 1).merge(count_documents(a, &l, range, 1));
                prop_assert_eq!(&whole, &merged);
                prop_assert_eq!(&whole, &count_documents(&docs, &l, range, 3));
            }
        }
    }
}

//! Document ingestion and text normalization.
//!
//! Documents arrive as NDJSON, one object per line. Malformed lines are
//! reported as [`RecordError`]s in stream order; they never abort the stream.

use std::io::BufRead;
use std::sync::LazyLock;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocumentKind {
    Original,
    Reply,
    Retweet,
}

impl DocumentKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "original" => Some(DocumentKind::Original),
            "reply" => Some(DocumentKind::Reply),
            "retweet" => Some(DocumentKind::Retweet),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub kind: DocumentKind,
}

impl Document {
    /// Calendar day (UTC) the document is counted on.
    pub fn date(&self) -> NaiveDate {
        self.timestamp.date_naive()
    }
}

/// A malformed input line. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordError {
    pub line: usize,
    pub reason: String,
}

impl std::fmt::Display for RecordError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

pub type Record = std::result::Result<Document, RecordError>;

/// Lazily parses an NDJSON stream. Blank lines are skipped.
pub struct DocumentStream<R> {
    reader: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> DocumentStream<R> {
    pub fn new(reader: R) -> Self {
        DocumentStream {
            reader,
            line: 0,
            buf: String::new(),
        }
    }
}

impl<R: BufRead> Iterator for DocumentStream<R> {
    type Item = std::io::Result<Record>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => return Some(Err(e)),
            }
            self.line += 1;
            let trimmed = self.buf.trim();
            if trimmed.is_empty() {
                continue;
            }
            return Some(Ok(parse_record(trimmed, self.line)));
        }
    }
}

/// Parses every line of `reader`; only I/O failures are stream-level errors.
pub fn parse_documents<R: BufRead>(reader: R) -> Result<Vec<Record>> {
    DocumentStream::new(reader)
        .map(|r| r.map_err(Into::into))
        .collect()
}

/// Parses one NDJSON record.
pub fn parse_record(line_text: &str, line: usize) -> Record {
    let fail = |reason: String| RecordError { line, reason };
    let value: Value =
        serde_json::from_str(line_text).map_err(|e| fail(format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| fail("record is not a JSON object".into()))?;

    let string_field = |name: &str| -> std::result::Result<Option<&str>, RecordError> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.as_str())),
            Some(_) => Err(fail(format!("field {name} is not a string"))),
        }
    };

    let id = string_field("id")?.ok_or_else(|| fail("missing id".into()))?;
    if id.is_empty() {
        return Err(fail("empty id".into()));
    }
    let ts = string_field("timestamp")?.ok_or_else(|| fail("missing timestamp".into()))?;
    let timestamp =
        parse_timestamp(ts).ok_or_else(|| fail(format!("invalid timestamp {ts:?}")))?;
    let text = string_field("text")?.ok_or_else(|| fail("missing text".into()))?;
    let kind = match string_field("kind")? {
        None => DocumentKind::Original,
        Some(k) => DocumentKind::parse(k).ok_or_else(|| fail(format!("invalid kind {k:?}")))?,
    };

    Ok(Document {
        id: id.to_owned(),
        timestamp,
        text: text.to_owned(),
        kind,
    })
}

/// ISO 8601 instant. Offsets are converted to UTC; a missing offset means UTC.
pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(naive.and_utc());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|n| n.and_utc())
}

/// Keeps originals and replies, drops retweets. Order is preserved.
pub fn filter_kinds<I>(docs: I) -> Vec<Document>
where
    I: IntoIterator<Item = Document>,
{
    docs.into_iter()
        .filter(|d| matches!(d.kind, DocumentKind::Original | DocumentKind::Reply))
        .collect()
}

/// Lowercase word tokens of a document.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenList(pub Vec<String>);

impl TokenList {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn join(&self) -> String {
        self.0.join(" ")
    }
}

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:https?://|www\.)\S*").unwrap());
static MENTION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@[\p{L}\p{M}\p{N}_]*").unwrap());
static HASHTAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#([\p{L}\p{M}\p{N}_]*)").unwrap());
static WORD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{M}\p{N}]+").unwrap());

/// Strips URLs and mentions, splits hashtags, drops punctuation and lowercases.
pub fn preprocess_text(text: &str) -> TokenList {
    let no_urls = URL_RE.replace_all(text, " ");
    let no_mentions = MENTION_RE.replace_all(&no_urls, " ");
    let expanded = HASHTAG_RE.replace_all(&no_mentions, |caps: &regex::Captures<'_>| {
        let mut out = String::from(" ");
        for part in split_hashtag(&caps[1]) {
            out.push_str(&part);
            out.push(' ');
        }
        out
    });
    TokenList(
        WORD_RE
            .find_iter(&expanded)
            .map(|m| m.as_str().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect(),
    )
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Lower,
    Upper,
    OtherLetter,
    Digit,
}

fn classify(c: char) -> Option<CharClass> {
    if c.is_numeric() {
        Some(CharClass::Digit)
    } else if c.is_lowercase() {
        Some(CharClass::Lower)
    } else if c.is_uppercase() {
        Some(CharClass::Upper)
    } else if c.is_alphabetic() {
        Some(CharClass::OtherLetter)
    } else {
        None
    }
}

/// Splits a hashtag body on underscores, lower→upper case transitions and
/// letter↔digit transitions. Combining marks stay attached to their base.
pub fn split_hashtag(body: &str) -> Vec<String> {
    let mut parts = Vec::new();
    for chunk in body.split('_') {
        let mut current = String::new();
        let mut prev: Option<CharClass> = None;
        for c in chunk.chars() {
            let class = classify(c);
            let boundary = match (prev, class) {
                (Some(CharClass::Lower), Some(CharClass::Upper)) => true,
                (Some(CharClass::Digit), Some(CharClass::Lower | CharClass::Upper | CharClass::OtherLetter)) => true,
                (Some(CharClass::Lower | CharClass::Upper | CharClass::OtherLetter), Some(CharClass::Digit)) => true,
                _ => false,
            };
            if boundary && !current.is_empty() {
                parts.push(std::mem::take(&mut current));
            }
            current.push(c);
            if class.is_some() {
                prev = class;
            }
        }
        if !current.is_empty() {
            parts.push(current);
        }
    }
    parts
}

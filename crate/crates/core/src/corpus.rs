//! Document ingestion, day slicing, and top-k subsampling by engagement.

use std::cmp::Ordering;
use std::io::BufRead;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One timestamped text item with its engagement (retweet) count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub date: NaiveDate,
    pub text: String,
    pub engagement: u64,
}

/// Engagement descending, then id ascending.
pub fn engagement_order(a: &Document, b: &Document) -> Ordering {
    b.engagement.cmp(&a.engagement).then_with(|| a.id.cmp(&b.id))
}

/// All documents of one calendar day, in engagement order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DaySlice {
    date: NaiveDate,
    documents: Vec<Document>,
}

impl DaySlice {
    /// Builds a slice, sorting `documents`. Fails if any document is dated
    /// on another day.
    pub fn new(date: NaiveDate, mut documents: Vec<Document>) -> Result<Self> {
        if let Some(doc) = documents.iter().find(|d| d.date != date) {
            return Err(Error::invalid(format!(
                "document {} dated {} placed in slice for {}",
                doc.id, doc.date, date
            )));
        }
        documents.sort_by(engagement_order);
        Ok(Self { date, documents })
    }

    pub fn empty(date: NaiveDate) -> Self {
        Self {
            date,
            documents: Vec::new(),
        }
    }

    pub fn date(&self) -> NaiveDate {
        self.date
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// The first `min(k, len)` documents. `k` must be positive.
    pub fn top_k(&self, k: usize) -> Result<DaySlice> {
        if k == 0 {
            return Err(Error::invalid("top_k needs k ≥ 1"));
        }
        Ok(Self {
            date: self.date,
            documents: self.documents.iter().take(k).cloned().collect(),
        })
    }
}

/// Consecutive day slices covering an inclusive date span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    slices: Vec<DaySlice>,
    span: (NaiveDate, NaiveDate),
}

impl Corpus {
    pub fn slices(&self) -> &[DaySlice] {
        &self.slices
    }

    pub fn span(&self) -> (NaiveDate, NaiveDate) {
        self.span
    }

    /// Number of days, `T`.
    pub fn num_days(&self) -> usize {
        self.slices.len()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.slices.iter().map(DaySlice::date).collect()
    }

    pub fn num_documents(&self) -> usize {
        self.slices.iter().map(DaySlice::len).sum()
    }

    pub fn documents(&self) -> impl Iterator<Item = &Document> {
        self.slices.iter().flat_map(|s| s.documents.iter())
    }

    /// Applies [`DaySlice::top_k`] to every day.
    pub fn top_k(&self, k: usize) -> Result<Corpus> {
        Ok(Corpus {
            slices: self
                .slices
                .iter()
                .map(|s| s.top_k(k))
                .collect::<Result<_>>()?,
            span: self.span,
        })
    }

    /// Splits the corpus at the given (exclusive) day boundaries, e.g. month ends.
    pub fn split_at_days(&self, boundaries: &[usize]) -> Result<Vec<Corpus>> {
        let mut cuts = Vec::with_capacity(boundaries.len() + 2);
        cuts.push(0);
        cuts.extend_from_slice(boundaries);
        cuts.push(self.slices.len());
        cuts
            .windows(2)
            .map(|w| {
                if w[0] >= w[1] || w[1] > self.slices.len() {
                    return Err(Error::invalid(format!("bad split boundaries {boundaries:?}")));
                }
                let slices = self.slices[w[0]..w[1]].to_vec();
                Ok(Corpus {
                    span: (slices[0].date, slices[slices.len() - 1].date),
                    slices,
                })
            })
            .collect()
    }
}

/// A record that could not be turned into a [`Document`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParseReport {
    pub documents: Vec<Document>,
    pub errors: Vec<LineError>,
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    date: Option<String>,
    text: Option<String>,
    retweets: Option<serde_json::Value>,
}

/// Accepts `YYYY-MM-DD`, RFC 3339 timestamps (converted to UTC), and naive
/// `YYYY-MM-DDTHH:MM:SS` / `YYYY-MM-DD HH:MM:SS` timestamps.
pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(d);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_utc().date());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.date());
        }
    }
    None
}

fn parse_record(line: &str) -> std::result::Result<Document, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let id = match raw.id {
        Some(serde_json::Value::String(s)) => s,
        Some(serde_json::Value::Number(n)) => n.to_string(),
        Some(_) => return Err("field `id` must be a string".into()),
        None => return Err("missing field `id`".into()),
    };
    let date_str = raw.date.ok_or("missing field `date`")?;
    let date = parse_date(&date_str).ok_or_else(|| format!("unparseable date {date_str:?}"))?;
    let text = raw.text.ok_or("missing field `text`")?;
    if text.trim().is_empty() {
        return Err("empty text".into());
    }
    let retweets = raw.retweets.ok_or("missing field `retweets`")?;
    let engagement = match retweets.as_i64() {
        Some(n) if n < 0 => return Err("negative engagement".into()),
        Some(n) => n as u64,
        None => retweets
            .as_u64()
            .ok_or("field `retweets` must be an integer")?,
    };
    Ok(Document {
        id,
        date,
        text,
        engagement,
    })
}

/// Reads JSON-Lines records (`id`, `date`, `text`, `retweets`). Bad lines are
/// collected as [`LineError`]s with 1-based line numbers; with `strict` the
/// first bad line aborts the parse. Blank lines are ignored.
pub fn parse_documents<R: BufRead>(reader: R, strict: bool) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(doc) => report.documents.push(doc),
            Err(message) if strict => {
                return Err(Error::Parse {
                    line: line_no,
                    message,
                })
            }
            Err(message) => report.errors.push(LineError {
                line: line_no,
                message,
            }),
        }
    }
    Ok(report)
}

/// Groups documents into one slice per day of the inclusive span. Returns
/// the corpus and the number of documents dropped for falling outside it.
pub fn slice_by_day(docs: Vec<Document>, start: NaiveDate, end: NaiveDate) -> Result<(Corpus, usize)> {
    if start > end {
        return Err(Error::InvertedSpan { start, end });
    }
    let days = (end - start).num_days() as usize + 1;
    let mut buckets: Vec<Vec<Document>> = vec![Vec::new(); days];
    let mut dropped = 0;
    for doc in docs {
        if doc.date < start || doc.date > end {
            dropped += 1;
            continue;
        }
        let offset = (doc.date - start).num_days() as usize;
        buckets[offset].push(doc);
    }
    let slices = buckets
        .into_iter()
        .zip(start.iter_days())
        .map(|(docs, date)| DaySlice::new(date, docs))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        Corpus {
            slices,
            span: (start, end),
        },
        dropped,
    ))
}

//! Keyword summaries, per-day topic prevalence, and heatmap/keyword exports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::Mat;
use crate::vectorizer::{has_alphabetic, Vocabulary};

/// Keywords shown per topic unless asked otherwise.
pub const DEFAULT_KEYWORDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic_index: usize,
    /// `(term, weight)` by descending weight, ties alphabetical.
    pub entries: Vec<(String, f64)>,
    /// Top three terms joined by commas.
    pub label: String,
}

impl TopicSummary {
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(t, _)| t.as_str())
    }
}

/// Keyword summary of one topic from its term weights.
///
/// A unigram is dropped when some bigram containing it as a token weighs at
/// least half as much; terms without a letter are dropped. Reported weights
/// are shares of the whole column.
pub fn summarize_topic<S: AsRef<str>>(topic_index: usize, weights: &[(S, f64)], k: usize) -> Result<TopicSummary> {
    if k == 0 {
        return Err(Error::invalid("keyword count must be ≥ 1"));
    }
    let mut total = 0.0;
    for (_, w) in weights {
        if !w.is_finite() {
            return Err(Error::NonFinite("topic weights"));
        }
        if *w < 0.0 {
            return Err(Error::Negative("topic weights"));
        }
        total += w;
    }

    let mut best_bigram: HashMap<&str, f64> = HashMap::new();
    for (term, w) in weights {
        let term = term.as_ref();
        if term.contains(char::is_whitespace) {
            for tok in term.split_whitespace() {
                let e = best_bigram.entry(tok).or_insert(0.0);
                *e = e.max(*w);
            }
        }
    }

    let mut kept: Vec<(String, f64)> = weights
        .iter()
        .filter(|(term, w)| {
            let term = term.as_ref();
            if !has_alphabetic(term) {
                return false;
            }
            let unigram = !term.contains(char::is_whitespace);
            !(unigram && best_bigram.get(term).is_some_and(|&b| b >= w / 2.0))
        })
        .map(|(term, w)| (term.as_ref().to_string(), *w))
        .collect();
    kept.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(k);
    if total > 0.0 {
        for e in &mut kept {
            e.1 /= total;
        }
    }
    let label = kept
        .iter()
        .take(3)
        .map(|(t, _)| t.as_str())
        .collect::<Vec<_>>()
        .join(",");
    Ok(TopicSummary {
        topic_index,
        entries: kept,
        label,
    })
}

/// Summary of topic column `column` of a vocabulary-indexed weight vector.
pub fn summarize_column(vocab: &Vocabulary, topic_index: usize, column: ArrayView1<f64>, k: usize) -> Result<TopicSummary> {
    if column.len() != vocab.len() {
        return Err(Error::shape(format!(
            "topic column has {} entries, vocabulary {}",
            column.len(),
            vocab.len()
        )));
    }
    let pairs: Vec<(&str, f64)> = vocab
        .terms()
        .iter()
        .map(String::as_str)
        .zip(column.iter().copied())
        .filter(|(_, w)| *w != 0.0)
        .collect();
    summarize_topic(topic_index, &pairs, k)
}

/// Summaries of every column of a terms × topics matrix (NMF `W`, CP `B`).
pub fn summarize_topics(vocab: &Vocabulary, topics: ArrayView2<f64>, k: usize) -> Result<Vec<TopicSummary>> {
    (0..topics.ncols())
        .map(|j| summarize_column(vocab, j, topics.column(j), k))
        .collect()
}

/// Topic × day matrix whose nonzero columns sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceMatrix {
    pub values: Mat,
}

impl PrevalenceMatrix {
    /// Normalizes each nonzero column of a nonnegative matrix to unit sum.
    pub fn from_unnormalized(mut values: Mat) -> Result<Self> {
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::Negative("prevalence"));
        }
        for mut col in values.columns_mut() {
            let s = col.sum();
            if s > 0.0 {
                col.mapv_inplace(|v| v / s);
            }
        }
        Ok(Self { values })
    }

    pub fn num_topics(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_days(&self) -> usize {
        self.values.ncols()
    }
}

/// Column `t` is the mean code of day `t`'s documents, normalized to sum one.
pub fn daily_prevalence(codes: &[Mat]) -> Result<PrevalenceMatrix> {
    let r = codes.first().map_or(0, |h| h.nrows());
    let mut values = Array2::zeros((r, codes.len()));
    for (t, h) in codes.iter().enumerate() {
        if h.nrows() != r {
            return Err(Error::shape(format!("day {t} has {} topics, expected {r}", h.nrows())));
        }
        if h.ncols() > 0 {
            let n = h.ncols() as f64;
            for (k, row) in h.rows().into_iter().enumerate() {
                values[[k, t]] = row.sum() / n;
            }
        }
    }
    PrevalenceMatrix::from_unnormalized(values)
}

const CELL: usize = 10;
const LABEL_WIDTH: usize = 240;

/// Writes `heatmap.csv` and `heatmap.svg` into `dir`.
pub fn export_heatmap(p: &PrevalenceMatrix, labels: &[TopicSummary], dates: &[NaiveDate], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if labels.len() != p.num_topics() {
        return Err(Error::shape(format!(
            "{} labels for {} topics",
            labels.len(),
            p.num_topics()
        )));
    }
    if dates.len() != p.num_days() {
        return Err(Error::shape(format!("{} dates for {} days", dates.len(), p.num_days())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join("heatmap.csv");
    let svg_path = dir.join("heatmap.svg");
    fs::write(&csv_path, heatmap_csv(p, labels, dates)?).map_err(|e| Error::io(&csv_path, e))?;
    fs::write(&svg_path, heatmap_svg(p, labels, dates)).map_err(|e| Error::io(&svg_path, e))?;
    Ok((csv_path, svg_path))
}

pub fn heatmap_csv(p: &PrevalenceMatrix, labels: &[TopicSummary], dates: &[NaiveDate]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["label".to_string()];
    header.extend(dates.iter().map(|d| d.format("%Y-%m-%d").to_string()));
    w.write_record(&header)?;
    for (k, row) in p.values.rows().into_iter().enumerate() {
        let mut rec = vec![labels[k].label.clone()];
        rec.extend(row.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Parses [`heatmap_csv`] output back into labels, dates and values.
pub fn parse_heatmap_csv(text: &str) -> Result<(Vec<String>, Vec<NaiveDate>, Mat)> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let dates = r
        .headers()?
        .iter()
        .skip(1)
        .map(|s| {
            NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| Error::Parse {
                line: 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dates.len() + 1 {
            return Err(Error::Parse {
                line: n + 2,
                message: format!("expected {} fields, got {}", dates.len() + 1, rec.len()),
            });
        }
        labels.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            flat.push(field.parse::<f64>().map_err(|e| Error::Parse {
                line: n + 2,
                message: e.to_string(),
            })?);
        }
    }
    let values = Array2::from_shape_vec((labels.len(), dates.len()), flat).map_err(|e| Error::shape(e.to_string()))?;
    Ok((labels, dates, values))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Grayscale grid: white is 0, black is the column maximum of 1.
pub fn heatmap_svg(p: &PrevalenceMatrix, labels: &[TopicSummary], dates: &[NaiveDate]) -> String {
    let (r, t) = p.values.dim();
    let header = 2 * CELL;
    let width = LABEL_WIDTH + t * CELL;
    let height = header + r * CELL;
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="rgb(255,255,255)"/>"#);
    if let (Some(first), Some(last)) = (dates.first(), dates.last()) {
        let _ = writeln!(
            s,
            r#"<text x="{LABEL_WIDTH}" y="{}" font-family="sans-serif" font-size="8">{} to {}</text>"#,
            CELL,
            first.format("%Y-%m-%d"),
            last.format("%Y-%m-%d")
        );
    }
    for k in 0..r {
        let y = header + k * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="8" text-anchor="end">{}</text>"#,
            LABEL_WIDTH - 4,
            y + CELL - 2,
            xml_escape(&labels[k].label)
        );
        for d in 0..t {
            let v = p.values[[k, d]].clamp(0.0, 1.0);
            let g = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})"/>"#,
                LABEL_WIDTH + d * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One tab-separated row per topic of `term (0.78)` entries.
pub fn keywords_tsv(summaries: &[TopicSummary]) -> String {
    let mut s = String::new();
    for summary in summaries {
        let row: Vec<String> = summary
            .entries
            .iter()
            .map(|(t, w)| format!("{t} ({w:.2})"))
            .collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    s
}

/// Writes `keywords.tsv` for the columns of a terms × topics matrix.
pub fn export_keywords(topics: ArrayView2<f64>, vocab: &Vocabulary, k: usize, dir: &Path) -> Result<PathBuf> {
    let summaries = summarize_topics(vocab, topics, k)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("keywords.tsv");
    fs::write(&path, keywords_tsv(&summaries)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn terms(s: &TopicSummary) -> Vec<&str> {
        s.terms().collect()
    }

    #[test]
    fn bigram_absorbs_both_unigrams() {
        let s = summarize_topic(0, &[("stay", 0.4), ("safe", 0.3), ("stay safe", 0.25)], 3).unwrap();
        assert_eq!(terms(&s), ["stay safe"]);
        assert_eq!(s.label, "stay safe");
    }

    #[test]
    fn light_bigram_keeps_unigram() {
        let s = summarize_topic(0, &[("stay", 0.8), ("stay safe", 0.1)], 2).unwrap();
        assert_eq!(terms(&s), ["stay", "stay safe"]);
        assert_abs_diff_eq!(s.entries[0].1, 0.8 / 0.9, epsilon = 1e-15);
    }

    #[test]
    fn numeric_terms_dropped() {
        let s = summarize_topic(0, &[("19", 0.9), ("cases", 0.5)], 2).unwrap();
        assert_eq!(terms(&s), ["cases"]);
    }

    #[test]
    fn token_equality_not_substring() {
        let s = summarize_topic(0, &[("art", 0.4), ("start here", 0.3)], 2).unwrap();
        assert_eq!(terms(&s), ["art", "start here"]);
    }

    #[test]
    fn ties_alphabetical_and_label_top_three() {
        let s = summarize_topic(3, &[("b", 0.2), ("a", 0.2), ("d", 0.2), ("c", 0.4)], 4).unwrap();
        assert_eq!(terms(&s), ["c", "a", "b", "d"]);
        assert_eq!(s.label, "c,a,b");
        assert_eq!(s.topic_index, 3);
    }

    #[test]
    fn all_excluded_is_empty() {
        let s = summarize_topic::<&str>(0, &[("2020", 1.0)], 3).unwrap();
        assert!(s.entries.is_empty());
        assert_eq!(s.label, "");
        assert!(summarize_topic::<&str>(0, &[], 0).is_err());
    }

    #[test]
    fn prevalence_means_then_normalizes() {
        let p = daily_prevalence(&[array![[0.2, 0.6], [0.8, 0.4]], Array2::zeros((2, 3))]).unwrap();
        assert_abs_diff_eq!(p.values[[0, 0]], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(p.values[[1, 0]], 0.6, epsilon = 1e-15);
        assert_eq!(p.values.column(1).sum(), 0.0);
        assert!(daily_prevalence(&[Array2::zeros((2, 1)), Array2::zeros((3, 1))]).is_err());
    }

    fn summary(label: &str) -> TopicSummary {
        TopicSummary {
            topic_index: 0,
            entries: Vec::new(),
            label: label.into(),
        }
    }

    #[test]
    fn single_cell_csv() {
        let p = PrevalenceMatrix { values: array![[1.0]] };
        let d = NaiveDate::from_ymd_opt(2020, 2, 1).unwrap();
        let csv = heatmap_csv(&p, &[summary("mask")], &[d]).unwrap();
        assert_eq!(csv, "label,2020-02-01\nmask,1.0\n");
        assert!(heatmap_svg(&p, &[summary("mask")], &[d]).contains("fill=\"rgb(0,0,0)\""));
    }

    #[test]
    fn zero_matrix_renders_background() {
        let p = PrevalenceMatrix { values: Array2::zeros((2, 2)) };
        let d = NaiveDate::from_ymd_opt(2020, 2, 1).unwrap();
        let svg = heatmap_svg(&p, &[summary("a"), summary("b")], &[d, d.succ_opt().unwrap()]);
        assert_eq!(svg.matches("rgb(255,255,255)").count(), 5);
    }

    #[test]
    fn csv_round_trip_with_quoted_labels() {
        let p = PrevalenceMatrix {
            values: array![[0.1, 0.25, 1.0 / 3.0], [0.9, 0.75, 2.0 / 3.0]],
        };
        let d0 = NaiveDate::from_ymd_opt(2020, 3, 30).unwrap();
        let dates: Vec<_> = d0.iter_days().take(3).collect();
        let labels = [summary("mask,wear,face"), summary("stay home,\"quoted\"")];
        let csv = heatmap_csv(&p, &labels, &dates).unwrap();
        let (l, d, v) = parse_heatmap_csv(&csv).unwrap();
        assert_eq!(l, ["mask,wear,face", "stay home,\"quoted\""]);
        assert_eq!(d, dates);
        assert_eq!(v, p.values);
    }

    #[test]
    fn keywords_row_format() {
        let s = summarize_topic(0, &[("people", 0.78), ("many people", 0.06), ("other", 0.16)], 5).unwrap();
        let tsv = keywords_tsv(&[s]);
        assert!(tsv.starts_with("people (0.78)\t"), "{tsv}");
        let u = summarize_topic(0, &[("a", 1.0), ("b", 1.0), ("c", 1.0)], 5).unwrap();
        assert_eq!(keywords_tsv(&[u]), "a (0.33)\tb (0.33)\tc (0.33)\n");
    }

    proptest! {
        #[test]
        fn summary_is_scale_invariant(
            ws in prop::collection::vec(0.0f64..1.0, 6),
            scale in 0.01f64..100.0,
        ) {
            let names = ["stay", "safe", "stay safe", "home", "stay home", "19"];
            let a: Vec<(&str, f64)> = names.iter().copied().zip(ws.iter().copied()).collect();
            let b: Vec<(&str, f64)> = names.iter().copied().zip(ws.iter().map(|w| w * scale)).collect();
            let sa = summarize_topic(0, &a, 6).unwrap();
            let sb = summarize_topic(0, &b, 6).unwrap();
            prop_assert_eq!(terms(&sa), terms(&sb));
            for (x, y) in sa.entries.iter().zip(&sb.entries) {
                prop_assert!((x.1 - y.1).abs() < 1e-12);
            }
            // Bigrams are never excluded.
            prop_assert!(terms(&sa).contains(&"stay safe"));
            prop_assert!(terms(&sa).contains(&"stay home"));
        }

        #[test]
        fn prevalence_columns_are_distributions(
            flat in prop::collection::vec(0.0f64..1.0, 3 * 4 * 5),
        ) {
            let days: Vec<Mat> = flat
                .chunks(12)
                .map(|c| Array2::from_shape_vec((3, 4), c.to_vec()).unwrap())
                .collect();
            let p = daily_prevalence(&days).unwrap();
            for col in p.values.columns() {
                let s = col.sum();
                prop_assert!(s == 0.0 || (s - 1.0).abs() < 1e-9);
            }
        }
    }
}

//! Tokenization, filtered unigram+bigram vocabulary, TF-IDF weighting and
//! day × term × document tensor assembly.
//!
//! The weighting contract: tokens are lowercase runs of two or more word
//! characters; stopwords are dropped before bigrams are formed; idf is the
//! smoothed `ln((1 + N) / (1 + df)) + 1` with `N` and `df` frozen when the
//! vocabulary is built; each document column is scaled to unit Euclidean norm.

use std::collections::{HashMap, HashSet};
use std::sync::OnceLock;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use regex::Regex;

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::tensor_core::{Mat, Tensor3};

pub const DEFAULT_VOCAB_CAP: usize = 5000;

static STOPWORDS_ASSET: &str = include_str!("../assets/stopwords_en.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_ASSET
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

fn token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\w\w+\b").expect("static token pattern"))
}

pub fn is_stopword(token: &str) -> bool {
    stopwords().contains(token)
}

/// Lowercase tokens of two or more word characters, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    token_pattern()
        .find_iter(&lower)
        .map(|m| m.as_str().to_owned())
        .collect()
}

/// True unless the token contains "coron" or "cov" not immediately followed by "e".
pub fn passes_covid_filter(token: &str) -> bool {
    ["coron", "cov"].iter().all(|pat| {
        token
            .match_indices(pat)
            .all(|(idx, _)| token[idx + pat.len()..].starts_with('e'))
    })
}

pub fn has_alphabetic(term: &str) -> bool {
    term.chars().any(char::is_alphabetic)
}

/// Drops stopwords, COVID-synonym tokens and tokens without a letter.
pub fn filter_terms<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    tokens
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_stopword(t) && passes_covid_filter(t) && has_alphabetic(t))
        .map(str::to_owned)
        .collect()
}

/// All unigrams followed by all adjacent bigrams (space-joined).
pub fn ngrams<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
    out.extend(
        tokens
            .windows(2)
            .map(|w| format!("{} {}", w[0].as_ref(), w[1].as_ref())),
    );
    out
}

fn term_passes(term: &str) -> bool {
    has_alphabetic(term) && term.split(' ').all(passes_covid_filter)
}

/// The filtered unigram and bigram terms of one document, with repeats.
pub fn document_terms(text: &str) -> Vec<String> {
    let tokens: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| !is_stopword(t))
        .collect();
    ngrams(&tokens)
        .into_iter()
        .filter(|t| term_passes(t))
        .collect()
}

/// Alphabetically ordered, capped term list with the document statistics
/// the idf weights are computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
    document_frequencies: Vec<usize>,
    num_documents: usize,
}

impl Vocabulary {
    /// Assembles a vocabulary from `(term, df)` pairs; terms are re-sorted.
    pub fn from_parts(mut entries: Vec<(String, usize)>, num_documents: usize) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::invalid("duplicate vocabulary term"));
        }
        if entries.iter().any(|(_, df)| *df == 0 || *df > num_documents) {
            return Err(Error::invalid("document frequency outside 1..=num_documents"));
        }
        let (terms, document_frequencies): (Vec<_>, Vec<_>) = entries.into_iter().unzip();
        let index = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            terms,
            index,
            document_frequencies,
            num_documents,
        })
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.position(term).map(|i| self.document_frequencies[i])
    }

    pub fn document_frequencies(&self) -> &[usize] {
        &self.document_frequencies
    }

    pub fn num_documents(&self) -> usize {
        self.num_documents
    }

    /// Smoothed inverse document frequency of term `i`.
    pub fn idf(&self, i: usize) -> f64 {
        let n = self.num_documents as f64;
        let df = self.document_frequencies[i] as f64;
        ((1.0 + n) / (1.0 + df)).ln() + 1.0
    }

    /// `term<TAB>df` lines, alphabetical, after a `# documents=N` header.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# documents={}\n", self.num_documents);
        for (term, df) in self.terms.iter().zip(&self.document_frequencies) {
            out.push_str(term);
            out.push('\t');
            out.push_str(&df.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut num_documents = None;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if let Some(rest) = line.strip_prefix("# documents=") {
                num_documents = Some(rest.trim().parse::<usize>().map_err(|e| Error::Parse {
                    line: n + 1,
                    message: e.to_string(),
                })?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, df) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: n + 1,
                message: "expected term<TAB>df".into(),
            })?;
            let df = df.trim().parse::<usize>().map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            entries.push((term.to_owned(), df));
        }
        // Without a header the largest df is the tightest consistent guess.
        let num_documents =
            num_documents.unwrap_or_else(|| entries.iter().map(|e| e.1).max().unwrap_or(0));
        Self::from_parts(entries, num_documents)
    }
}

/// Builds the vocabulary over raw document texts.
pub fn build_vocab_from_texts<'a, I>(texts: I, cap: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = &'a str>,
{
    if cap == 0 {
        return Err(Error::invalid("vocabulary cap must be ≥ 1"));
    }
    let mut df: HashMap<String, usize> = HashMap::new();
    let mut num_documents = 0;
    for text in texts {
        num_documents += 1;
        let unique: HashSet<String> = document_terms(text).into_iter().collect();
        for term in unique {
            *df.entry(term).or_insert(0) += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = df.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    entries.truncate(cap);
    Vocabulary::from_parts(entries, num_documents)
}

/// Builds the vocabulary over every document of the corpus, keeping the
/// `cap` terms with the highest document frequency (ties alphabetical).
pub fn build_vocab(corpus: &Corpus, cap: usize) -> Result<Vocabulary> {
    build_vocab_from_texts(corpus.documents().map(|d| d.text.as_str()), cap)
}

/// Nonnegative TF-IDF matrix, terms as rows and documents as columns; every
/// column has unit Euclidean norm or is all zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TermMatrix {
    values: Mat,
}

impl TermMatrix {
    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Mat {
        self.values
    }

    pub fn num_terms(&self) -> usize {
        self.values.nrows()
    }

    pub fn num_documents(&self) -> usize {
        self.values.ncols()
    }
}

fn fill_tfidf_column(text: &str, vocab: &Vocabulary, mut column: ndarray::ArrayViewMut1<f64>) {
    for term in document_terms(text) {
        if let Some(i) = vocab.position(&term) {
            column[i] += 1.0;
        }
    }
    for (i, v) in column.iter_mut().enumerate() {
        if *v != 0.0 {
            *v *= vocab.idf(i);
        }
    }
    let norm = column.dot(&column).sqrt();
    if norm > 0.0 {
        column /= norm;
    }
}

pub fn tfidf_texts<'a, I>(texts: I, vocab: &Vocabulary) -> TermMatrix
where
    I: IntoIterator<Item = &'a str>,
{
    let texts: Vec<&str> = texts.into_iter().collect();
    let mut values = Array2::zeros((vocab.len(), texts.len()));
    for (j, text) in texts.iter().enumerate() {
        fill_tfidf_column(text, vocab, values.column_mut(j));
    }
    TermMatrix { values }
}

/// TF-IDF matrix of the given documents (a day slice, a corpus, ...).
pub fn tfidf_matrix<'a, I>(docs: I, vocab: &Vocabulary) -> TermMatrix
where
    I: IntoIterator<Item = &'a Document>,
{
    tfidf_texts(docs.into_iter().map(|d| d.text.as_str()), vocab)
}

/// Day × term × document TF-IDF tensor. Slot `(t, :, j)` holds the j-th
/// document of day t, or zeros (flagged as padding) when the day is short.
#[derive(Debug, Clone, PartialEq)]
pub struct TermTensor {
    values: Tensor3,
    padded: Array2<bool>,
}

impl TermTensor {
    /// Wraps raw values; a slot counts as padding iff its fiber is all zero.
    pub fn from_values(values: Tensor3) -> Result<Self> {
        crate::tensor_core::ensure_nonnegative(values.iter(), "term tensor")?;
        let (t, _, l) = values.dim();
        let padded = Array2::from_shape_fn((t, l), |(d, j)| {
            values.slice(s![d, .., j]).iter().all(|&v| v == 0.0)
        });
        Ok(Self { values, padded })
    }

    pub fn with_padding(values: Tensor3, padded: Array2<bool>) -> Result<Self> {
        let (t, _, l) = values.dim();
        if padded.dim() != (t, l) {
            return Err(Error::shape("padding flags must be days × documents"));
        }
        crate::tensor_core::ensure_nonnegative(values.iter(), "term tensor")?;
        Ok(Self { values, padded })
    }

    pub fn values(&self) -> &Tensor3 {
        &self.values
    }

    pub fn into_values(self) -> Tensor3 {
        self.values
    }

    /// (days, terms, document slots)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    pub fn is_padded(&self, day: usize, slot: usize) -> bool {
        self.padded[[day, slot]]
    }

    pub fn padding(&self) -> &Array2<bool> {
        &self.padded
    }

    /// Full frontal slice of day `t` (terms × slots), padding included.
    pub fn day_slice(&self, t: usize) -> ArrayView2<'_, f64> {
        self.values.slice(s![t, .., ..])
    }

    /// Term × document matrix of day `t`'s real (non-padded) documents.
    pub fn day_matrix(&self, t: usize) -> Mat {
        let keep: Vec<usize> = (0..self.values.dim().2)
            .filter(|&j| !self.padded[[t, j]])
            .collect();
        self.day_slice(t).select(Axis(1), &keep)
    }

    /// All real documents of all days side by side, day-major.
    pub fn concatenated(&self) -> Mat {
        let parts: Vec<Mat> = (0..self.values.dim().0).map(|t| self.day_matrix(t)).collect();
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|m| m.view()).collect();
        ndarray::concatenate(Axis(1), &views)
            .unwrap_or_else(|_| Array2::zeros((self.values.dim().1, 0)))
    }

    /// Number of real documents per day.
    pub fn documents_per_day(&self) -> Vec<usize> {
        self.padded
            .rows()
            .into_iter()
            .map(|row| row.iter().filter(|&&p| !p).count())
            .collect()
    }

    /// Sub-tensor over days `start..end`.
    pub fn days(&self, start: usize, end: usize) -> TermTensor {
        TermTensor {
            values: self.values.slice(s![start..end, .., ..]).to_owned(),
            padded: self.padded.slice(s![start..end, ..]).to_owned(),
        }
    }
}

/// Assembles the `(T, |vocab|, docs_per_day)` tensor from the first
/// `docs_per_day` documents of each day.
pub fn build_tensor(corpus: &Corpus, vocab: &Vocabulary, docs_per_day: usize) -> Result<TermTensor> {
    if docs_per_day == 0 {
        return Err(Error::invalid("docs_per_day must be ≥ 1"));
    }
    let days = corpus.num_days();
    let mut values = Array3::zeros((days, vocab.len(), docs_per_day));
    let mut padded = Array2::from_elem((days, docs_per_day), true);
    for (t, slice) in corpus.slices().iter().enumerate() {
        for (j, doc) in slice.documents().iter().take(docs_per_day).enumerate() {
            fill_tfidf_column(&doc.text, vocab, values.slice_mut(s![t, .., j]));
            padded[[t, j]] = false;
        }
    }
    Ok(TermTensor { values, padded })
}

//! Per-user feature vectors built from status texts.
//!
//! The vector has four blocks, always in this order and always at these
//! widths:
//!
//! | block     | width | source                                   |
//! |-----------|-------|------------------------------------------|
//! | n-grams   | 7111  | counts of 1..=5-grams over the vocabulary |
//! | LSI       | 200   | precomputed topic file                   |
//! | LDA       | 50    | precomputed topic file                   |
//! | embedding | 300   | mean of pretrained word vectors          |
//!
//! Tokenization lowercases and splits on anything that is not alphanumeric.
//! N-grams are joined with `_`, which can never occur inside a token.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mechanisms::is_probability_simplex;

pub const NGRAM_DIM: usize = 7111;
pub const LSI_DIM: usize = 200;
pub const LDA_DIM: usize = 50;
pub const EMBED_DIM: usize = 300;
pub const FEATURE_DIM: usize = NGRAM_DIM + LSI_DIM + LDA_DIM + EMBED_DIM;
pub const MAX_NGRAM: usize = 5;

const SIMPLEX_TOL: f64 = 1e-6;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Every 1..=5-gram of a token sequence, `_`-joined.
fn ngrams(tokens: &[String]) -> impl Iterator<Item = String> + '_ {
    (1..=MAX_NGRAM).flat_map(move |n| tokens.windows(n).map(|w| w.join("_")))
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    fn from_map(map: HashMap<usize, f64>) -> Self {
        let mut entries: Vec<_> = map.into_iter().collect();
        entries.sort_unstable_by_key(|e| e.0);
        Self { entries }
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|e| e.1 == 0.0)
    }
}

/// Column index of each retained n-gram. Serialized as the ordered list of
/// n-grams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct NgramVocabulary {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for NgramVocabulary {
    fn from(terms: Vec<String>) -> Self {
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { terms, index }
    }
}

impl From<NgramVocabulary> for Vec<String> {
    fn from(v: NgramVocabulary) -> Self {
        v.terms
    }
}

impl NgramVocabulary {
    /// Keeps the `max_features` most frequent n-grams; ties go to the
    /// lexicographically smaller n-gram. Indices follow the same order.
    pub fn build<S: AsRef<str>>(corpus: &[S], max_features: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(invalid("cannot build a vocabulary from an empty corpus"));
        }
        if max_features > NGRAM_DIM {
            return Err(invalid(format!(
                "max_features {max_features} exceeds the n-gram block width {NGRAM_DIM}"
            )));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            let tokens = tokenize(doc.as_ref());
            for g in ngrams(&tokens) {
                *freq.entry(g).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_features);
        Ok(ranked.into_iter().map(|(t, _)| t).collect::<Vec<_>>().into())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn index_of(&self, ngram: &str) -> Option<usize> {
        self.index.get(ngram).copied()
    }

    /// Occurrence counts of vocabulary n-grams in `text`.
    pub fn extract(&self, text: &str) -> SparseVec {
        self.extract_all(std::iter::once(text))
    }

    /// Summed counts over several documents. N-grams never span documents.
    pub fn extract_all<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> SparseVec {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for text in texts {
            let tokens = tokenize(text);
            for g in ngrams(&tokens) {
                if let Some(&i) = self.index.get(&g) {
                    *counts.entry(i).or_default() += 1.0;
                }
            }
        }
        SparseVec::from_map(counts)
    }
}

/// Pretrained word vectors of uniform width.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((t, v)) = vectors.iter().find(|(_, v)| v.len() != dim) {
            return Err(invalid(format!(
                "vector for `{t}` has {} components, expected {dim}",
                v.len()
            )));
        }
        Ok(Self { dim, vectors })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    /// Parses `token v1 v2 ...` lines. Blank lines are skipped; the first
    /// vector fixes the width. Repeated tokens keep their first vector.
    pub fn parse(reader: impl BufRead) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| Error::Parse {
                        line: line_no,
                        message: format!("bad component `{p}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {expected} components, found {}", values.len()),
                });
            }
            vectors.entry(token.to_string()).or_insert(values);
        }
        Ok(Self {
            dim: dim.unwrap_or(EMBED_DIM),
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Mean vector of the in-table tokens; zero when none are known.
    pub fn embed_average<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        let mut known = 0usize;
        for v in tokens.iter().filter_map(|t| self.vectors.get(t.as_ref())) {
            known += 1;
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        if known > 0 {
            let n = known as f64;
            sum.iter_mut().for_each(|s| *s /= n);
        }
        sum
    }

    /// Writes the table in the text format read by [`EmbeddingTable::parse`],
    /// tokens sorted.
    pub fn write(&self, mut out: impl std::io::Write) -> Result<()> {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        for t in tokens {
            write!(out, "{t}")?;
            for x in &self.vectors[t] {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Precomputed topic features of one user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicRow {
    pub lsi: Vec<f64>,
    pub lda: Vec<f64>,
}

impl TopicRow {
    pub fn validate(&self) -> Result<()> {
        if self.lsi.len() != LSI_DIM || self.lda.len() != LDA_DIM {
            return Err(invalid(format!(
                "topic row has {}+{} components, expected {LSI_DIM}+{LDA_DIM}",
                self.lsi.len(),
                self.lda.len()
            )));
        }
        if !is_probability_simplex(&self.lda, SIMPLEX_TOL)? {
            return Err(invalid("LDA block is not a probability distribution"));
        }
        Ok(())
    }
}

/// Topic rows keyed by user id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopicTable {
    rows: HashMap<String, TopicRow>,
}

pub fn topic_header() -> Vec<String> {
    std::iter::once("user_id".to_string())
        .chain((0..LSI_DIM).map(|i| format!("lsi_{i}")))
        .chain((0..LDA_DIM).map(|i| format!("lda_{i}")))
        .collect()
}

impl TopicTable {
    pub fn new(rows: HashMap<String, TopicRow>) -> Result<Self> {
        for row in rows.values() {
            row.validate()?;
        }
        Ok(Self { rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(File::open(path)?)
    }

    pub fn parse(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let expected = topic_header();
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != expected {
            let missing = expected
                .iter()
                .find(|c| !header.contains(c))
                .cloned()
                .unwrap_or_else(|| "column order".to_string());
            return Err(Error::MissingColumn(missing));
        }
        let mut rows = HashMap::new();
        for (i, rec) in rdr.records().enumerate() {
            // Header is line 1.
            let line = i + 2;
            let rec = rec?;
            let values = rec
                .iter()
                .skip(1)
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("bad value `{f}`: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let row = TopicRow {
                lsi: values[..LSI_DIM].to_vec(),
                lda: values[LSI_DIM..].to_vec(),
            };
            row.validate().map_err(|e| Error::Parse {
                line,
                message: e.to_string(),
            })?;
            rows.insert(rec[0].to_string(), row);
        }
        Ok(Self { rows })
    }

    pub fn get(&self, user_id: &str) -> Option<&TopicRow> {
        self.rows.get(user_id)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Writes the CSV read by [`TopicTable::parse`], users in the given order.
    pub fn write<S: AsRef<str>>(&self, order: &[S], out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(topic_header())?;
        for id in order {
            let id = id.as_ref();
            let row = self
                .rows
                .get(id)
                .ok_or_else(|| invalid(format!("no topic row for `{id}`")))?;
            let mut rec = vec![id.to_string()];
            rec.extend(row.lsi.iter().chain(&row.lda).map(|x| x.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A user's full feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub ngram: SparseVec,
    pub lsi: Vec<f64>,
    pub lda: Vec<f64>,
    pub embedding: Vec<f64>,
    /// Set when no topic row was available and the LSI/LDA blocks are zero.
    pub topics_missing: bool,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        NGRAM_DIM + self.lsi.len() + self.lda.len() + self.embedding.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; NGRAM_DIM];
        for &(i, x) in &self.ngram.entries {
            out[i] = x;
        }
        out.extend_from_slice(&self.lsi);
        out.extend_from_slice(&self.lda);
        out.extend_from_slice(&self.embedding);
        out
    }
}

/// Concatenates the four blocks for one user.
pub fn assemble<S: AsRef<str>>(
    user_texts: &[S],
    vocab: &NgramVocabulary,
    topics: Option<&TopicRow>,
    table: Option<&EmbeddingTable>,
) -> Result<FeatureVector> {
    if vocab.len() > NGRAM_DIM {
        return Err(invalid("vocabulary wider than the n-gram block"));
    }
    let ngram = vocab.extract_all(user_texts.iter().map(AsRef::as_ref));

    let (lsi, lda, topics_missing) = match topics {
        Some(row) => {
            row.validate()?;
            (row.lsi.clone(), row.lda.clone(), false)
        }
        None => (vec![0.0; LSI_DIM], vec![0.0; LDA_DIM], true),
    };

    let embedding = match table {
        Some(t) if t.dim() != EMBED_DIM => {
            return Err(invalid(format!(
                "embedding width {} does not match {EMBED_DIM}",
                t.dim()
            )))
        }
        Some(t) => {
            let tokens: Vec<String> = user_texts.iter().flat_map(|s| tokenize(s.as_ref())).collect();
            t.embed_average(&tokens)
        }
        None => vec![0.0; EMBED_DIM],
    };

    let fv = FeatureVector {
        ngram,
        lsi,
        lda,
        embedding,
        topics_missing,
    };
    debug_assert_eq!(fv.dim(), FEATURE_DIM);
    Ok(fv)
}

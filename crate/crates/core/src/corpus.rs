//! Corpus ingestion: tokenization, vocabulary, sparse count vectors and
//! corpus-level statistics.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type WordId = u32;

/// Bijection between word strings and dense ids `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vocabulary from an ordered word list; repeated words are an error.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for w in words {
            let w = w.into();
            if vocab.index.contains_key(&w) {
                return Err(Error::InvalidInput(format!("duplicate vocabulary word {w:?}")));
            }
            vocab.get_or_insert(&w);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get_or_insert(&mut self, word: &str) -> WordId {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = WordId::try_from(self.words.len()).expect("vocabulary exceeds u32 ids");
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    /// One word per line; the line number (from 0) is the id.
    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut buf = String::with_capacity(self.words.len() * 8);
        for w in &self.words {
            buf.push_str(w);
            buf.push('\n');
        }
        crate::harness::write_atomic(path, buf.as_bytes())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let words = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| Error::io(path, e))?;
        Self::from_words(words)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { lowercase: true }
    }
}

/// Splits on runs of non-alphanumeric characters, dropping empty tokens.
pub fn tokenize(text: &str, config: &TokenizerConfig) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if config.lowercase {
                t.to_lowercase()
            } else {
                t.to_owned()
            }
        })
        .collect()
}

/// Sparse word counts for one document. Entries are sorted by id and never zero.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountVector {
    entries: Vec<(WordId, u64)>,
    total: u64,
}

impl CountVector {
    /// Merges repeated ids and drops zero counts.
    pub fn from_pairs<I: IntoIterator<Item = (WordId, u64)>>(pairs: I) -> Self {
        let mut entries: Vec<(WordId, u64)> = pairs.into_iter().filter(|&(_, c)| c > 0).collect();
        entries.sort_unstable_by_key(|&(id, _)| id);
        entries.dedup_by(|next, kept| {
            if next.0 == kept.0 {
                kept.1 += next.1;
                true
            } else {
                false
            }
        });
        let total = entries.iter().map(|&(_, c)| c).sum();
        Self { entries, total }
    }

    pub fn from_ids<I: IntoIterator<Item = WordId>>(ids: I) -> Self {
        Self::from_pairs(ids.into_iter().map(|id| (id, 1)))
    }

    pub fn get(&self, id: WordId) -> u64 {
        self.entries
            .binary_search_by_key(&id, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (WordId, u64)> + '_ {
        self.entries.iter().copied()
    }

    /// Total token count N.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct word types.
    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_id(&self) -> Option<WordId> {
        self.entries.last().map(|&(id, _)| id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabMode {
    /// Unknown tokens are dropped and counted.
    Frozen,
    /// Unknown tokens are added to the vocabulary.
    Growable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counted {
    pub counts: CountVector,
    pub dropped: usize,
}

pub fn count_vector<S: AsRef<str>>(tokens: &[S], vocab: &mut Vocabulary, mode: VocabMode) -> Counted {
    match mode {
        VocabMode::Frozen => count_frozen(tokens, vocab),
        VocabMode::Growable => Counted {
            counts: CountVector::from_ids(tokens.iter().map(|t| vocab.get_or_insert(t.as_ref()))),
            dropped: 0,
        },
    }
}

pub fn count_frozen<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Counted {
    let mut dropped = 0;
    let ids: Vec<WordId> = tokens
        .iter()
        .filter_map(|t| {
            let id = vocab.id(t.as_ref());
            if id.is_none() {
                dropped += 1;
            }
            id
        })
        .collect();
    Counted {
        counts: CountVector::from_ids(ids),
        dropped,
    }
}

/// Documents with optional gold labels over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    vocab: Vocabulary,
    ids: Vec<String>,
    docs: Vec<CountVector>,
    labels: Option<Vec<u8>>,
}

impl Corpus {
    pub fn new(
        vocab: Vocabulary,
        ids: Vec<String>,
        docs: Vec<CountVector>,
        labels: Option<Vec<u8>>,
    ) -> Result<Self> {
        if ids.len() != docs.len() {
            return Err(Error::InvalidInput(format!(
                "{} ids for {} documents",
                ids.len(),
                docs.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != docs.len() {
                return Err(Error::InvalidInput(format!(
                    "{} labels for {} documents",
                    labels.len(),
                    docs.len()
                )));
            }
            if let Some(bad) = labels.iter().find(|&&l| l > 1) {
                return Err(Error::InvalidInput(format!("label {bad} is not 0 or 1")));
            }
        }
        let v = vocab.len();
        if let Some(max) = docs.iter().filter_map(CountVector::max_id).max() {
            if max as usize >= v {
                return Err(Error::InvalidInput(format!(
                    "word id {max} outside vocabulary of size {v}"
                )));
            }
        }
        Ok(Self {
            vocab,
            ids,
            docs,
            labels,
        })
    }

    /// Documents get ids `"0"`, `"1"`, ... in order.
    pub fn from_docs(vocab: Vocabulary, docs: Vec<CountVector>, labels: Option<Vec<u8>>) -> Result<Self> {
        let ids = (0..docs.len()).map(|i| i.to_string()).collect();
        Self::new(vocab, ids, docs, labels)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn docs(&self) -> &[CountVector] {
        &self.docs
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Appends words to the vocabulary without touching any document.
    pub fn extend_vocab<'a, I: IntoIterator<Item = &'a str>>(&mut self, words: I) {
        for w in words {
            self.vocab.get_or_insert(w);
        }
    }

    /// Writes JSON-lines records `{id, text, label?}`, expanding counts back
    /// into space-separated tokens in id order.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for (t, doc) in self.docs.iter().enumerate() {
            let mut text = String::new();
            for (id, c) in doc.iter() {
                let w = self.vocab.word(id).unwrap_or_default();
                for _ in 0..c {
                    if !text.is_empty() {
                        text.push(' ');
                    }
                    text.push_str(w);
                }
            }
            let rec = JsonlRecord {
                id: self.ids[t].clone(),
                text,
                label: self.labels.as_ref().map(|l| l[t]),
                rating: None,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
        crate::harness::write_atomic(path, &out)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct JsonlRecord {
    id: String,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rating: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One document per line, no labels.
    Text,
    /// JSON-lines with `id`, `text` and optional `label`.
    Jsonl,
    /// Chosen from the file extension (`.jsonl`/`.json` means JSON-lines).
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestOptions {
    #[serde(default)]
    pub tokenizer: TokenizerConfig,
    /// Derive labels from a 1-5 `rating` field: 4-5 positive, 1-2 negative,
    /// 3 dropped.
    #[serde(default)]
    pub ratings: bool,
}

pub fn rating_label(rating: f64) -> Option<u8> {
    if rating >= 4.0 {
        Some(1)
    } else if rating <= 2.0 {
        Some(0)
    } else {
        None
    }
}

pub fn read_corpus(path: &Path, format: CorpusFormat, options: &IngestOptions) -> Result<Corpus> {
    let format = match format {
        CorpusFormat::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Text,
        },
        f => f,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut vocab = Vocabulary::new();
    let mut ids = Vec::new();
    let mut docs = Vec::new();
    let mut labels: Vec<Option<u8>> = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        match format {
            CorpusFormat::Text => {
                let tokens = tokenize(&line, &options.tokenizer);
                docs.push(count_vector(&tokens, &mut vocab, VocabMode::Growable).counts);
                ids.push(lineno.to_string());
                labels.push(None);
            }
            _ => {
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                    path: path.to_owned(),
                    line: lineno + 1,
                    message: e.to_string(),
                })?;
                let label = if options.ratings {
                    match rec.rating.map(rating_label) {
                        Some(Some(l)) => Some(l),
                        Some(None) => continue,
                        None => rec.label,
                    }
                } else {
                    rec.label
                };
                if let Some(l) = label {
                    if l > 1 {
                        return Err(Error::Parse {
                            path: path.to_owned(),
                            line: lineno + 1,
                            message: format!("label {l} is not 0 or 1"),
                        });
                    }
                }
                let tokens = tokenize(&rec.text, &options.tokenizer);
                docs.push(count_vector(&tokens, &mut vocab, VocabMode::Growable).counts);
                ids.push(rec.id);
                labels.push(label);
            }
        }
    }

    let labelled = labels.iter().filter(|l| l.is_some()).count();
    let labels = if labelled == 0 {
        None
    } else if labelled == labels.len() {
        Some(labels.into_iter().flatten().collect())
    } else {
        return Err(Error::InvalidInput(format!(
            "{}: {labelled} of {} documents carry labels; label all or none",
            path.display(),
            labels.len()
        )));
    };
    Corpus::new(vocab, ids, docs, labels)
}

/// Aggregate counts over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub documents: usize,
    pub total_tokens: u64,
    pub word_totals: Vec<u64>,
    /// Ordered token pairs within documents, summed: sum of N_t (N_t - 1).
    pub pair_weight: u128,
}

/// Streaming accumulator for [`CorpusStats`]; `merge` is associative and
/// commutative so partial results can be combined in any order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsAccumulator {
    documents: usize,
    total_tokens: u64,
    word_totals: Vec<u64>,
    pair_weight: u128,
}

impl StatsAccumulator {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            documents: 0,
            total_tokens: 0,
            word_totals: vec![0; vocab_size],
            pair_weight: 0,
        }
    }

    pub fn push(&mut self, doc: &CountVector) {
        self.documents += 1;
        self.total_tokens += doc.total();
        for (id, c) in doc.iter() {
            let id = id as usize;
            if id >= self.word_totals.len() {
                self.word_totals.resize(id + 1, 0);
            }
            self.word_totals[id] += c;
        }
        let n = u128::from(doc.total());
        self.pair_weight += n * n.saturating_sub(1);
    }

    pub fn merge(mut self, other: Self) -> Self {
        self.documents += other.documents;
        self.total_tokens += other.total_tokens;
        if other.word_totals.len() > self.word_totals.len() {
            self.word_totals.resize(other.word_totals.len(), 0);
        }
        for (a, b) in self.word_totals.iter_mut().zip(&other.word_totals) {
            *a += b;
        }
        self.pair_weight += other.pair_weight;
        self
    }

    pub fn finish(self) -> CorpusStats {
        CorpusStats {
            documents: self.documents,
            total_tokens: self.total_tokens,
            word_totals: self.word_totals,
            pair_weight: self.pair_weight,
        }
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let v = corpus.vocab().len();
    corpus
        .docs()
        .par_iter()
        .fold(
            || StatsAccumulator::new(v),
            |mut acc, doc| {
                acc.push(doc);
                acc
            },
        )
        .reduce(|| StatsAccumulator::new(v), StatsAccumulator::merge)
        .finish()
}

/// Relative frequency of each vocabulary word (no smoothing).
pub fn estimate_baseline(corpus: &Corpus) -> Result<Vec<f64>> {
    baseline_from_stats(&corpus_stats(corpus))
}

pub fn baseline_from_stats(stats: &CorpusStats) -> Result<Vec<f64>> {
    if stats.total_tokens == 0 {
        return Err(Error::NoTokens);
    }
    let total = stats.total_tokens as f64;
    Ok(stats.word_totals.iter().map(|&c| c as f64 / total).collect())
}

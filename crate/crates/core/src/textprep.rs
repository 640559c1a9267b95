//! Tokenization, n-gram expansion, vocabulary selection and sublinear
//! TF-IDF vectorization.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CscMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    #[default]
    English,
    Italian,
    /// No stemming.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepConfig {
    pub stopwords_path: Option<PathBuf>,
    pub language: Language,
    pub high_df_cut: f64,
    pub low_df_cut: f64,
    pub vocab_cap: usize,
    pub ngram_max: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            stopwords_path: None,
            language: Language::English,
            high_df_cut: 0.60,
            low_df_cut: 0.01,
            vocab_cap: 10_000,
            ngram_max: 3,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.low_df_cut && self.low_df_cut < self.high_df_cut && self.high_df_cut <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "document-frequency cuts must satisfy 0 <= low < high <= 1 (got {} and {})",
                self.low_df_cut, self.high_df_cut
            )));
        }
        if self.vocab_cap == 0 {
            return Err(Error::InvalidParameter("vocab_cap must be >= 1".into()));
        }
        if self.ngram_max == 0 {
            return Err(Error::InvalidParameter("ngram_max must be >= 1".into()));
        }
        Ok(())
    }
}

/// One token per line; blank lines and surrounding whitespace ignored.
pub fn load_stopwords(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path)?;
    Ok(parse_stopwords(&text))
}

pub fn parse_stopwords(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Lowercased word tokens, before stopword removal and stemming.
///
/// Words are maximal runs of alphanumeric characters and underscores; runs
/// without any alphanumeric character are discarded.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .map(str::to_lowercase)
        .collect()
}

pub struct Preprocessor {
    config: PrepConfig,
    stopwords: HashSet<String>,
    stemmer: Option<Stemmer>,
}

impl std::fmt::Debug for Preprocessor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Preprocessor")
            .field("config", &self.config)
            .field("stopwords", &self.stopwords.len())
            .finish()
    }
}

impl Preprocessor {
    pub fn new(config: PrepConfig, stopwords: HashSet<String>) -> Result<Self> {
        config.validate()?;
        let stemmer = match config.language {
            Language::English => Some(Stemmer::create(Algorithm::English)),
            Language::Italian => Some(Stemmer::create(Algorithm::Italian)),
            Language::None => None,
        };
        Ok(Preprocessor {
            config,
            stopwords,
            stemmer,
        })
    }

    /// Loads the stopword file named in the config, if any.
    pub fn from_config(config: PrepConfig) -> Result<Self> {
        let stopwords = match &config.stopwords_path {
            Some(p) => load_stopwords(p)?,
            None => HashSet::new(),
        };
        Preprocessor::new(config, stopwords)
    }

    pub fn config(&self) -> &PrepConfig {
        &self.config
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        raw_tokens(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .map(|t| match &self.stemmer {
                Some(s) => s.stem(&t).into_owned(),
                None => t,
            })
            .collect()
    }

    /// Stemmed tokens expanded with n-grams up to the configured order.
    pub fn terms(&self, text: &str) -> Vec<String> {
        expand_ngrams(&self.tokenize(text), self.config.ngram_max)
    }
}

/// Unigrams, then adjacent bigrams, then trigrams, ... up to `max_n`.
pub fn expand_ngrams(tokens: &[String], max_n: usize) -> Vec<String> {
    let mut out: Vec<String> = tokens.to_vec();
    for n in 2..=max_n {
        out.extend(tokens.windows(n).map(|w| w.join(" ")));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    terms: Vec<String>,
    doc_freq: Vec<usize>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Terms sorted lexicographically receive dense indices.
    pub fn new(mut entries: Vec<(String, usize)>) -> Self {
        entries.sort();
        entries.dedup_by(|a, b| a.0 == b.0);
        let index = entries.iter().enumerate().map(|(i, (t, _))| (t.clone(), i)).collect();
        let (terms, doc_freq) = entries.into_iter().unzip();
        Vocabulary {
            terms,
            doc_freq,
            index,
        }
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

    pub fn term(&self, i: usize) -> &str {
        &self.terms[i]
    }

    pub fn doc_freq(&self, i: usize) -> usize {
        self.doc_freq[i]
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Applies the document-frequency ratio bounds, then keeps the `vocab_cap`
/// most frequent survivors (ties broken lexicographically).
pub fn build_vocabulary(docs: &[Vec<String>], config: &PrepConfig) -> Result<Vocabulary> {
    config.validate()?;
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // term -> (doc freq, total freq, last doc seen)
    let mut counts: HashMap<&str, (usize, usize, usize)> = HashMap::new();
    for (d, doc) in docs.iter().enumerate() {
        for term in doc {
            let e = counts.entry(term.as_str()).or_insert((0, 0, usize::MAX));
            e.1 += 1;
            if e.2 != d {
                e.0 += 1;
                e.2 = d;
            }
        }
    }
    let n = docs.len() as f64;
    let mut survivors: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|&(_, (df, _, _))| {
            let ratio = df as f64 / n;
            ratio <= config.high_df_cut && ratio >= config.low_df_cut
        })
        .map(|(t, (df, tf, _))| (t, df, tf))
        .collect();
    survivors.sort_by(|a, b| b.2.cmp(&a.2).then_with(|| a.0.cmp(b.0)));
    survivors.truncate(config.vocab_cap);
    if survivors.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    Ok(Vocabulary::new(
        survivors.into_iter().map(|(t, df, _)| (t.to_owned(), df)).collect(),
    ))
}

/// Sparse term × message matrix of sublinear TF-IDF weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TermDocumentMatrix {
    pub matrix: CscMatrix,
    /// Message id of each column.
    pub columns: Vec<String>,
    /// Messages dropped for lacking any weighted in-vocabulary term.
    pub dropped: Vec<String>,
}

impl TermDocumentMatrix {
    pub fn drop_fraction(&self) -> f64 {
        let total = self.columns.len() + self.dropped.len();
        if total == 0 {
            0.0
        } else {
            self.dropped.len() as f64 / total as f64
        }
    }
}

/// `(1 + ln tf) * ln(n / df)`, zero when `tf == 0`.
pub fn tfidf_weight(tf: usize, df: usize, n: usize) -> f64 {
    if tf == 0 || df == 0 {
        return 0.0;
    }
    (1.0 + (tf as f64).ln()) * (n as f64 / df as f64).ln()
}

/// `docs` pairs each message id with its expanded terms.
pub fn vectorize(docs: &[(String, Vec<String>)], vocab: &Vocabulary) -> TermDocumentMatrix {
    let mut dropped = Vec::new();
    let mut kept: Vec<(&str, Vec<(usize, usize)>)> = Vec::new();
    for (id, terms) in docs {
        let mut idx: Vec<usize> = terms.iter().filter_map(|t| vocab.index_of(t)).collect();
        if idx.is_empty() {
            dropped.push(id.clone());
            continue;
        }
        idx.sort_unstable();
        let mut tf: Vec<(usize, usize)> = Vec::new();
        for i in idx {
            match tf.last_mut() {
                Some((last, c)) if *last == i => *c += 1,
                _ => tf.push((i, 1)),
            }
        }
        kept.push((id, tf));
    }
    let mut df = vec![0usize; vocab.len()];
    for (_, tf) in &kept {
        for &(i, _) in tf {
            df[i] += 1;
        }
    }
    let n = kept.len();
    let mut columns = Vec::with_capacity(n);
    let mut cols = Vec::with_capacity(n);
    for (id, tf) in kept {
        let col: Vec<(usize, f64)> = tf
            .into_iter()
            .map(|(i, c)| (i, tfidf_weight(c, df[i], n)))
            .filter(|&(_, w)| w > 0.0)
            .collect();
        if col.is_empty() {
            // every term present in all retained messages
            dropped.push(id.to_owned());
            continue;
        }
        columns.push(id.to_owned());
        cols.push(col);
    }
    TermDocumentMatrix {
        matrix: CscMatrix::from_columns(vocab.len(), cols),
        columns,
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn english(stop: &[&str]) -> Preprocessor {
        Preprocessor::new(PrepConfig::default(), stop.iter().map(|x| x.to_string()).collect()).unwrap()
    }

    #[test]
    fn punctuation_and_case() {
        assert_eq!(english(&[]).tokenize("Great SHOT!!!"), s(&["great", "shot"]));
    }

    #[test]
    fn all_stopwords() {
        assert!(english(&["the", "of", "and"]).tokenize("the of and").is_empty());
    }

    #[test]
    fn stemmer_golden_values() {
        // frozen outputs of the Snowball English stemmer
        assert_eq!(english(&[]).tokenize("reading readers read"), s(&["read", "reader", "read"]));
        let it = Preprocessor::new(
            PrepConfig {
                language: Language::Italian,
                ..PrepConfig::default()
            },
            HashSet::new(),
        )
        .unwrap();
        assert_eq!(it.tokenize("libreria libri leggendo"), s(&["librer", "libr", "legg"]));
    }

    #[test]
    fn synthetic_tokens_survive() {
        let p = Preprocessor::new(
            PrepConfig {
                language: Language::None,
                ..PrepConfig::default()
            },
            HashSet::new(),
        )
        .unwrap();
        assert_eq!(p.tokenize("d0_t0017, d1_t0002"), s(&["d0_t0017", "d1_t0002"]));
        assert!(raw_tokens("--- ___ !!").is_empty());
    }

    #[test]
    fn ngram_expansion() {
        assert_eq!(expand_ngrams(&s(&["a"]), 3), s(&["a"]));
        assert_eq!(expand_ngrams(&s(&["a", "b"]), 3), s(&["a", "b", "a b"]));
        assert_eq!(
            expand_ngrams(&s(&["a", "b", "c"]), 3),
            s(&["a", "b", "c", "a b", "b c", "a b c"])
        );
        assert!(expand_ngrams(&[], 3).is_empty());
    }

    #[test]
    fn ubiquitous_term_excluded() {
        let docs: Vec<Vec<String>> = (0..10).map(|i| s(&["all", if i % 2 == 0 { "even" } else { "odd" }])).collect();
        let v = build_vocabulary(&docs, &PrepConfig::default()).unwrap();
        assert_eq!(v.index_of("all"), None);
        assert!(v.index_of("even").is_some());
    }

    #[test]
    fn rare_term_excluded() {
        let mut docs: Vec<Vec<String>> = (0..1000).map(|i| s(&[["x", "y"][i % 2]])).collect();
        docs[0].push("rare".into());
        let v = build_vocabulary(&docs, &PrepConfig::default()).unwrap();
        assert_eq!(v.index_of("rare"), None);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn cap_keeps_most_frequent() {
        // 12,000 distinct terms, term i appears in 1 + (i % 7) documents
        let n_terms = 12_000;
        let mut docs: Vec<Vec<String>> = vec![Vec::new(); 8];
        for i in 0..n_terms {
            for d in 0..=(i % 7) {
                docs[d].push(format!("t{i:05}"));
            }
        }
        let config = PrepConfig {
            low_df_cut: 0.0,
            high_df_cut: 1.0,
            ..PrepConfig::default()
        };
        let v = build_vocabulary(&docs, &config).unwrap();
        assert_eq!(v.len(), 10_000);
        let min_kept = (0..v.len()).map(|i| v.doc_freq(i)).min().unwrap();
        // dropped terms are all among the least frequent
        let dropped_max = (0..n_terms)
            .filter(|i| v.index_of(&format!("t{i:05}")).is_none())
            .map(|i| 1 + i % 7)
            .max()
            .unwrap();
        assert!(dropped_max <= min_kept);
    }

    #[test]
    fn empty_vocabulary_is_an_error() {
        let docs = vec![s(&["a"]), s(&["a"])];
        assert!(matches!(build_vocabulary(&docs, &PrepConfig::default()), Err(Error::EmptyVocabulary)));
    }

    #[test]
    fn tfidf_spot_values() {
        assert_eq!(tfidf_weight(1, 10, 10), 0.0);
        let w = tfidf_weight(2, 1, 10);
        assert!((w - (1.0 + 2f64.ln()) * 10f64.ln()).abs() < 1e-12);
        assert!((w - 3.8990).abs() < 1e-3);
    }

    #[test]
    fn tf_scaling_is_concave() {
        let d = |k: usize| tfidf_weight(2 * k, 3, 10) - tfidf_weight(k, 3, 10);
        // 1 + ln(tf) makes each doubling add the same amount: ln 2 * idf
        let ln2_idf = 2f64.ln() * (10f64 / 3.0).ln();
        for k in [1, 2, 4] {
            assert!((d(k) - ln2_idf).abs() < 1e-12);
        }
        // increments per unit of tf shrink
        let step = |tf: usize| tfidf_weight(tf + 1, 3, 10) - tfidf_weight(tf, 3, 10);
        assert!(step(1) > step(2) && step(2) > step(4));
    }

    #[test]
    fn vectorize_drops_out_of_vocabulary_messages() {
        let vocab = Vocabulary::new(vec![("a".into(), 1), ("b".into(), 1)]);
        let docs = vec![
            ("m1".to_string(), s(&["a", "a"])),
            ("m2".to_string(), s(&["zzz"])),
            ("m3".to_string(), s(&["b"])),
        ];
        let tdm = vectorize(&docs, &vocab);
        assert_eq!(tdm.columns, s(&["m1", "m3"]));
        assert_eq!(tdm.dropped, s(&["m2"]));
        assert!((tdm.drop_fraction() - 1.0 / 3.0).abs() < 1e-12);
        let expected = (1.0 + 2f64.ln()) * 2f64.ln();
        assert!((tdm.matrix.get(0, 0) - expected).abs() < 1e-12);
        assert!(tdm.matrix.values().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let docs: Vec<Vec<String>> = (0..50)
            .map(|i| expand_ngrams(&s(&[["a", "b", "c"][i % 3], ["d", "e"][i % 2], "f"]), 3))
            .collect();
        let c = PrepConfig::default();
        assert_eq!(build_vocabulary(&docs, &c).unwrap(), build_vocabulary(&docs, &c).unwrap());
    }
}

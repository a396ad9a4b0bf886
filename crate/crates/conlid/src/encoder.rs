//! Featurization: whitespace tokenization, boundary-marked character
//! n-grams, FNV-1a hashing into a shared bucket range, vocabulary
//! construction, and mean-pooled sentence embeddings.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Marker prepended to every word before n-gram extraction.
pub const BOW: char = '<';
/// Marker appended to every word before n-gram extraction.
pub const EOW: char = '>';

const FNV_OFFSET: u32 = 2_166_136_261;
const FNV_PRIME: u32 = 16_777_619;

/// Featurization hyperparameters. The defaults match the trained-model
/// configuration used throughout the test suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Embedding dimensionality.
    pub dim: usize,
    /// Shortest character n-gram, counted in Unicode scalar values.
    pub minn: usize,
    /// Longest character n-gram.
    pub maxn: usize,
    /// Number of hash buckets shared by all character n-grams.
    pub bucket: usize,
    /// Minimum corpus frequency for a word to enter the vocabulary.
    pub min_count: usize,
    /// Word n-gram order; only unigrams (1) are supported.
    pub word_ngrams: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 256,
            minn: 2,
            maxn: 5,
            bucket: 1_000_000,
            min_count: 1000,
            word_ngrams: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.minn == 0 || self.minn > self.maxn {
            return Err(Error::Config(format!(
                "character n-gram range {}..={} is invalid",
                self.minn, self.maxn
            )));
        }
        if self.bucket == 0 {
            return Err(Error::Config("bucket must be at least 1".into()));
        }
        if self.word_ngrams != 1 {
            return Err(Error::Config(
                "only word_ngrams = 1 is supported".into(),
            ));
        }
        Ok(())
    }
}

/// Splits on Unicode whitespace; no other normalization is applied.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// All character n-grams of `word` wrapped in the `<`/`>` boundary markers,
/// with lengths in `minn..=maxn` counted in Unicode scalar values. Output is
/// ordered left-to-right by start position, shortest first within each
/// position. The wrapped whole word is included whenever it fits the range.
pub fn char_ngrams(word: &str, minn: usize, maxn: usize) -> Vec<String> {
    let mut wrapped: Vec<char> = Vec::with_capacity(word.len() + 2);
    wrapped.push(BOW);
    wrapped.extend(word.chars());
    wrapped.push(EOW);

    let n = wrapped.len();
    let mut grams = Vec::new();
    for start in 0..n {
        let longest = maxn.min(n - start);
        for len in minn..=longest {
            grams.push(wrapped[start..start + len].iter().collect());
        }
    }
    grams
}

/// 32-bit FNV-1a over a byte string.
pub fn fnv1a_32(bytes: &[u8]) -> u32 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u32::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Embedding row for a character n-gram: rows `0..vocab_size` belong to
/// words, so n-grams land in `vocab_size + (fnv1a(g) mod bucket)`.
pub fn hash_ngram(ngram: &str, bucket: usize, vocab_size: usize) -> usize {
    debug_assert!(bucket > 0);
    vocab_size + (fnv1a_32(ngram.as_bytes()) as usize) % bucket
}

/// Word vocabulary plus the exact set of character n-grams observed during
/// training (used to flag unknown n-grams at inference time).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    seen_ngrams: HashSet<String>,
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its serialized parts. Word ids follow the
    /// order of `words`.
    pub fn from_parts(words: Vec<String>, seen_ngrams: HashSet<String>) -> Self {
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            word_ids,
            seen_ngrams,
        }
    }

    pub fn word_id(&self, word: &str) -> Option<usize> {
        self.word_ids.get(word).copied()
    }

    /// Words in id order.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains_ngram(&self, gram: &str) -> bool {
        self.seen_ngrams.contains(gram)
    }

    pub fn seen_ngram_count(&self) -> usize {
        self.seen_ngrams.len()
    }

    /// Seen n-grams in sorted order, for deterministic serialization.
    pub fn sorted_ngrams(&self) -> Vec<&str> {
        let mut grams: Vec<&str> = self.seen_ngrams.iter().map(String::as_str).collect();
        grams.sort_unstable();
        grams
    }
}

/// Scans the training corpus once, admitting words with frequency at least
/// `min_count` (ids ordered by descending frequency, ties broken
/// lexicographically) and recording every character n-gram of every word
/// token.
pub fn build_vocab(train: &Dataset, config: &EncoderConfig) -> Result<Vocabulary> {
    config.validate()?;

    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut seen_ngrams: HashSet<String> = HashSet::new();
    for ex in &train.examples {
        for word in tokenize(&ex.text) {
            *counts.entry(word.to_string()).or_insert(0) += 1;
            for gram in char_ngrams(word, config.minn, config.maxn) {
                seen_ngrams.insert(gram);
            }
        }
    }

    let mut admitted: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count)
        .collect();
    admitted.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let words = admitted.into_iter().map(|(w, _)| w).collect();

    Ok(Vocabulary::from_parts(words, seen_ngrams))
}

/// Feature rows extracted from one document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Features {
    /// Embedding rows, with multiplicity: one id per in-vocabulary word
    /// token plus one per character n-gram of every word token.
    pub ids: Vec<usize>,
    /// Total number of character n-gram tokens.
    pub ngram_total: usize,
    /// Character n-gram tokens never seen during training.
    pub ngram_unseen: usize,
}

impl Features {
    /// Fraction of n-gram tokens outside the training n-gram set; zero when
    /// the document produced no n-grams.
    pub fn unk_ngram_ratio(&self) -> f64 {
        if self.ngram_total == 0 {
            0.0
        } else {
            self.ngram_unseen as f64 / self.ngram_total as f64
        }
    }
}

/// Maps a document to its embedding rows.
pub fn features(vocab: &Vocabulary, config: &EncoderConfig, text: &str) -> Features {
    let mut out = Features::default();
    for word in tokenize(text) {
        if let Some(id) = vocab.word_id(word) {
            out.ids.push(id);
        }
        for gram in char_ngrams(word, config.minn, config.maxn) {
            out.ids.push(hash_ngram(&gram, config.bucket, vocab.len()));
            out.ngram_total += 1;
            if !vocab.contains_ngram(&gram) {
                out.ngram_unseen += 1;
            }
        }
    }
    out
}

/// Mean of the embedding rows selected by [`features`], accumulated in
/// double precision. A document with no features embeds to the zero vector
/// with an unknown-n-gram ratio of 1.0.
pub fn encode(
    embeddings: &Matrix,
    vocab: &Vocabulary,
    config: &EncoderConfig,
    text: &str,
) -> (Vec<f64>, f64) {
    let feats = features(vocab, config, text);
    let mut mean = vec![0.0f64; config.dim];
    if feats.ids.is_empty() {
        return (mean, 1.0);
    }
    for &id in &feats.ids {
        let row = embeddings.row(id);
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += f64::from(x);
        }
    }
    let inv = 1.0 / feats.ids.len() as f64;
    for m in &mut mean {
        *m *= inv;
    }
    (mean, feats.unk_ngram_ratio())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Example;
    use proptest::prelude::*;

    #[test]
    fn tokenize_splits_on_unicode_whitespace() {
        assert_eq!(tokenize("the cat"), vec!["the", "cat"]);
        assert_eq!(tokenize("  a\t b\u{00a0}c  "), vec!["a", "b", "c"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn char_ngrams_enumerates_wrapped_substrings_in_order() {
        assert_eq!(
            char_ngrams("ab", 2, 5),
            vec!["<a", "<ab", "<ab>", "ab", "ab>", "b>"]
        );
    }

    #[test]
    fn char_ngrams_single_char_word() {
        assert_eq!(char_ngrams("x", 2, 5), vec!["<x", "<x>", "x>"]);
    }

    #[test]
    fn char_ngrams_window_longer_than_most_of_word() {
        let grams = char_ngrams("abcdef", 7, 8);
        let expect: std::collections::HashSet<&str> =
            ["<abcdef", "<abcdef>", "abcdef>"].into_iter().collect();
        let got: std::collections::HashSet<&str> =
            grams.iter().map(String::as_str).collect();
        assert_eq!(got, expect);
        assert_eq!(grams.len(), 3);
    }

    #[test]
    fn char_ngrams_counts_unicode_scalars_not_bytes() {
        // Two-char word in Cyrillic: same shape as the ASCII case.
        assert_eq!(
            char_ngrams("ню", 2, 5),
            vec!["<н", "<ню", "<ню>", "ню", "ню>", "ю>"]
        );
    }

    #[test]
    fn fnv1a_matches_reference_vectors() {
        // Offset basis: hash of the empty string.
        assert_eq!(fnv1a_32(b""), 0x811C_9DC5);
        assert_eq!(fnv1a_32(b"a"), 0xE40C_292C);
        assert_eq!(fnv1a_32(b"foobar"), 0xBF9C_F968);
    }

    #[test]
    fn hash_ngram_offsets_by_vocab_size() {
        // fnv1a("a") = 3826002220, and 3826002220 mod 10 = 0.
        assert_eq!(hash_ngram("a", 10, 0), 0);
        assert_eq!(hash_ngram("a", 10, 7), 7);
    }

    #[test]
    fn hash_is_stable_across_calls() {
        for g in ["<ab", "ю>", "hello"] {
            assert_eq!(hash_ngram(g, 1000, 3), hash_ngram(g, 1000, 3));
        }
    }

    fn dataset_from_texts(texts: &[&str]) -> Dataset {
        Dataset::from_examples(
            texts
                .iter()
                .map(|t| Example {
                    text: t.to_string(),
                    label: "xx_Latn".into(),
                    script: None,
                    domain: None,
                })
                .collect(),
        )
    }

    #[test]
    fn build_vocab_applies_min_count_boundary() {
        let ds = dataset_from_texts(&["cat cat dog", "cat dog bird"]);
        let cfg = EncoderConfig {
            min_count: 2,
            ..EncoderConfig::default()
        };
        let vocab = build_vocab(&ds, &cfg).unwrap();
        // cat: 3, dog: 2, bird: 1.
        assert_eq!(vocab.words(), &["cat", "dog"]);
        assert_eq!(vocab.word_id("cat"), Some(0));
        assert_eq!(vocab.word_id("bird"), None);
    }

    #[test]
    fn build_vocab_orders_ties_lexicographically() {
        let ds = dataset_from_texts(&["b a", "a b"]);
        let cfg = EncoderConfig {
            min_count: 1,
            ..EncoderConfig::default()
        };
        let vocab = build_vocab(&ds, &cfg).unwrap();
        assert_eq!(vocab.words(), &["a", "b"]);
    }

    #[test]
    fn build_vocab_records_ngrams_of_rare_words_too() {
        let ds = dataset_from_texts(&["qqq"]);
        let cfg = EncoderConfig {
            min_count: 1000,
            ..EncoderConfig::default()
        };
        let vocab = build_vocab(&ds, &cfg).unwrap();
        assert!(vocab.is_empty());
        assert!(vocab.contains_ngram("<qq"));
        assert!(vocab.contains_ngram("qqq>"));
    }

    #[test]
    fn features_counts_unseen_ngrams() {
        let ds = dataset_from_texts(&["ab"]);
        let cfg = EncoderConfig {
            min_count: 1,
            ..EncoderConfig::default()
        };
        let vocab = build_vocab(&ds, &cfg).unwrap();
        let seen = features(&vocab, &cfg, "ab");
        assert_eq!(seen.ngram_unseen, 0);
        assert!(seen.unk_ngram_ratio() == 0.0);
        // One in-vocab word id plus six n-grams.
        assert_eq!(seen.ids.len(), 7);

        let unseen = features(&vocab, &cfg, "zq");
        assert_eq!(unseen.ngram_total, 6);
        assert_eq!(unseen.ngram_unseen, 6);
        assert!(unseen.unk_ngram_ratio() == 1.0);
    }

    #[test]
    fn encode_means_rows_and_flags_empty_documents() {
        let cfg = EncoderConfig {
            dim: 2,
            minn: 2,
            maxn: 2,
            bucket: 4,
            min_count: 1,
            word_ngrams: 1,
        };
        let ds = dataset_from_texts(&["ab"]);
        let vocab = build_vocab(&ds, &cfg).unwrap();
        let mut emb = Matrix::zeros(vocab.len() + cfg.bucket, cfg.dim);
        for r in 0..emb.rows() {
            emb.row_mut(r).copy_from_slice(&[1.0, 2.0]);
        }
        let (vec_ab, unk) = encode(&emb, &vocab, &cfg, "ab");
        assert_eq!(vec_ab, vec![1.0, 2.0]);
        assert_eq!(unk, 0.0);

        let (zero, unk_empty) = encode(&emb, &vocab, &cfg, "   ");
        assert_eq!(zero, vec![0.0, 0.0]);
        assert_eq!(unk_empty, 1.0);
    }

    #[test]
    fn config_validation_rejects_bad_ranges() {
        let cfg = EncoderConfig {
            minn: 6,
            maxn: 5,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EncoderConfig {
            bucket: 0,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = EncoderConfig {
            word_ngrams: 2,
            ..EncoderConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    proptest! {
        // Count identity: with wrapped length w = chars + 2, the number of
        // n-grams is the sum over admissible lengths L of (w - L + 1).
        #[test]
        fn ngram_count_matches_closed_form(
            word in "[a-zа-я]{0,12}",
            minn in 1usize..6,
            span in 0usize..4,
        ) {
            let maxn = minn + span;
            let w = word.chars().count() + 2;
            let expected: usize = (minn..=maxn.min(w)).map(|l| w - l + 1).sum();
            prop_assert_eq!(char_ngrams(&word, minn, maxn).len(), expected);
        }

        #[test]
        fn hashed_ids_stay_in_bucket_range(
            gram in "\\PC{1,8}",
            bucket in 1usize..10_000,
            vocab in 0usize..50,
        ) {
            let id = hash_ngram(&gram, bucket, vocab);
            prop_assert!(id >= vocab && id < vocab + bucket);
        }
    }
}

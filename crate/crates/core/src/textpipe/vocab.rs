//! Unigram/bigram vocabularies with hashed out-of-vocabulary buckets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::xxh64;

use super::dataset::DialoguePair;
use super::normalize::{normalize, NormalizedText};
use crate::error::{Error, Result};

pub const DEFAULT_OOV_BUCKETS: usize = 50_000;

/// Stable 64-bit hash used for OOV bucketing and fingerprints (XXH64, seed 0).
pub fn stable_hash(bytes: &[u8]) -> u64 {
    xxh64(bytes, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VocabConfig {
    /// Number of pairs sampled (uniformly, without replacement) for counting.
    pub sample_size: usize,
    pub min_count: usize,
    pub max_bigrams: usize,
    pub oov_buckets: usize,
    pub seed: u64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            sample_size: 1_000_000,
            min_count: 10,
            max_bigrams: 200_000,
            oov_buckets: DEFAULT_OOV_BUCKETS,
            seed: 0,
        }
    }
}

/// Unigram and bigram id tables.
///
/// Each embedding table has `table_len + oov_buckets` rows: in-vocabulary
/// n-grams take the dense ids `0..table_len` and OOV n-grams take
/// `table_len + hash % oov_buckets`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    unigrams: Vec<String>,
    bigrams: Vec<String>,
    unigram_ids: HashMap<String, u32>,
    bigram_ids: HashMap<String, u32>,
    oov_buckets: usize,
    min_unigram_count: usize,
    max_bigrams: usize,
}

/// A text as two id sequences, rows into the unigram and bigram tables.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureIds {
    pub unigrams: Vec<u32>,
    pub bigrams: Vec<u32>,
}

fn bigram_key(a: &str, b: &str) -> String {
    let mut key = String::with_capacity(a.len() + b.len() + 1);
    key.push_str(a);
    key.push(' ');
    key.push_str(b);
    key
}

fn index(items: &[String]) -> HashMap<String, u32> {
    items
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect()
}

/// Sorts by descending count, then lexicographically.
fn ranked(counts: HashMap<String, usize>) -> Vec<(String, usize)> {
    let mut items: Vec<_> = counts.into_iter().collect();
    items.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items
}

impl Vocabulary {
    pub fn from_tables(
        unigrams: Vec<String>,
        bigrams: Vec<String>,
        oov_buckets: usize,
        min_unigram_count: usize,
        max_bigrams: usize,
    ) -> Result<Self> {
        if oov_buckets == 0 {
            return Err(Error::Config("oov_buckets must be >= 1".into()));
        }
        let unigram_ids = index(&unigrams);
        let bigram_ids = index(&bigrams);
        if unigram_ids.len() != unigrams.len() || bigram_ids.len() != bigrams.len() {
            return Err(Error::format("vocabulary", "duplicate entries"));
        }
        Ok(Self {
            unigrams,
            bigrams,
            unigram_ids,
            bigram_ids,
            oov_buckets,
            min_unigram_count,
            max_bigrams,
        })
    }

    pub fn unigrams(&self) -> &[String] {
        &self.unigrams
    }

    pub fn bigrams(&self) -> &[String] {
        &self.bigrams
    }

    pub fn oov_buckets(&self) -> usize {
        self.oov_buckets
    }

    pub fn min_unigram_count(&self) -> usize {
        self.min_unigram_count
    }

    pub fn max_bigrams(&self) -> usize {
        self.max_bigrams
    }

    /// Rows of the unigram embedding table.
    pub fn unigram_rows(&self) -> usize {
        self.unigrams.len() + self.oov_buckets
    }

    pub fn bigram_rows(&self) -> usize {
        self.bigrams.len() + self.oov_buckets
    }

    pub fn unigram_id(&self, token: &str) -> Option<u32> {
        self.unigram_ids.get(token).copied()
    }

    pub fn bigram_id(&self, a: &str, b: &str) -> Option<u32> {
        self.bigram_ids.get(&bigram_key(a, b)).copied()
    }

    fn bucket(&self, key: &str) -> u32 {
        (stable_hash(key.as_bytes()) % self.oov_buckets as u64) as u32
    }

    pub fn featurize(&self, text: &NormalizedText) -> FeatureIds {
        let tokens = text.tokens();
        let n_uni = self.unigrams.len() as u32;
        let n_bi = self.bigrams.len() as u32;
        let unigrams = tokens
            .iter()
            .map(|t| self.unigram_id(t).unwrap_or_else(|| n_uni + self.bucket(t)))
            .collect();
        let bigrams = tokens
            .windows(2)
            .map(|w| {
                let key = bigram_key(&w[0], &w[1]);
                self.bigram_ids
                    .get(&key)
                    .copied()
                    .unwrap_or_else(|| n_bi + self.bucket(&key))
            })
            .collect();
        FeatureIds { unigrams, bigrams }
    }

    /// Normalizes, truncates to `max_tokens` and featurizes raw text.
    pub fn featurize_text(&self, raw: &str, max_tokens: usize) -> FeatureIds {
        self.featurize(&normalize(raw).truncated(max_tokens))
    }

    /// Serializes to the TSV vocabulary format.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("#rsel-vocab v1\n");
        let _ = writeln!(out, "#min_count={}", self.min_unigram_count);
        let _ = writeln!(out, "#max_bigrams={}", self.max_bigrams);
        let _ = writeln!(out, "#oov_buckets={}", self.oov_buckets);
        for (i, t) in self.unigrams.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out.push_str("##bigrams\n");
        for (i, t) in self.bigrams.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut min_count = None;
        let mut max_bigrams = None;
        let mut oov = None;
        let mut unigrams = Vec::new();
        let mut bigrams = Vec::new();
        let mut in_bigrams = false;
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            match line.split_once('\t') {
                None => {
                    if line == "##bigrams" {
                        in_bigrams = true;
                    } else if let Some((key, value)) =
                        line.strip_prefix('#').and_then(|l| l.split_once('='))
                    {
                        let value: usize = value.parse().map_err(|_| {
                            Error::format("vocabulary", format!("line {lineno}: bad header value"))
                        })?;
                        match key {
                            "min_count" => min_count = Some(value),
                            "max_bigrams" => max_bigrams = Some(value),
                            "oov_buckets" => oov = Some(value),
                            _ => {
                                return Err(Error::format(
                                    "vocabulary",
                                    format!("line {lineno}: unknown header {key}"),
                                ))
                            }
                        }
                    } else if line.starts_with("#rsel-vocab") || line.is_empty() {
                    } else {
                        return Err(Error::format(
                            "vocabulary",
                            format!("line {lineno}: expected token<TAB>id"),
                        ));
                    }
                }
                Some((token, id)) => {
                    let table = if in_bigrams { &mut bigrams } else { &mut unigrams };
                    let id: usize = id.parse().map_err(|_| {
                        Error::format("vocabulary", format!("line {lineno}: bad id"))
                    })?;
                    if id != table.len() {
                        return Err(Error::format(
                            "vocabulary",
                            format!("line {lineno}: ids must be dense, expected {}", table.len()),
                        ));
                    }
                    table.push(token.to_string());
                }
            }
        }
        let missing = |name: &str| Error::format("vocabulary", format!("missing header {name}"));
        Self::from_tables(
            unigrams,
            bigrams,
            oov.ok_or_else(|| missing("oov_buckets"))?,
            min_count.ok_or_else(|| missing("min_count"))?,
            max_bigrams.ok_or_else(|| missing("max_bigrams"))?,
        )
    }

    /// Hash of the serialized tables; checkpoints record it.
    pub fn fingerprint(&self) -> u64 {
        stable_hash(self.to_tsv().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }
}

/// Builds the vocabulary from a uniform sample of `sample_size` pairs,
/// counting n-grams on both sides including the boundary tokens.
pub fn build_vocab<I>(pairs: I, config: &VocabConfig) -> Result<Vocabulary>
where
    I: IntoIterator<Item = DialoguePair>,
{
    if config.sample_size == 0 {
        return Err(Error::Config("sample_size must be >= 1".into()));
    }
    // reservoir sampling keeps the pass single and streaming
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sample: Vec<DialoguePair> = Vec::new();
    let mut seen = 0usize;
    for pair in pairs {
        if sample.len() < config.sample_size {
            sample.push(pair);
        } else {
            let j = rng.gen_range(0..=seen);
            if j < config.sample_size {
                sample[j] = pair;
            }
        }
        seen += 1;
    }
    if sample.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let mut unigram_counts: HashMap<String, usize> = HashMap::new();
    let mut bigram_counts: HashMap<String, usize> = HashMap::new();
    for pair in &sample {
        for text in [&pair.input, &pair.response] {
            let norm = normalize(text);
            let tokens = norm.tokens();
            for t in tokens {
                *unigram_counts.entry(t.clone()).or_default() += 1;
            }
            for w in tokens.windows(2) {
                *bigram_counts.entry(bigram_key(&w[0], &w[1])).or_default() += 1;
            }
        }
    }

    let unigrams = ranked(unigram_counts)
        .into_iter()
        .filter(|(_, c)| *c >= config.min_count)
        .map(|(t, _)| t)
        .collect();
    let bigrams = ranked(bigram_counts)
        .into_iter()
        .take(config.max_bigrams)
        .map(|(t, _)| t)
        .collect();
    Vocabulary::from_tables(
        unigrams,
        bigrams,
        config.oov_buckets,
        config.min_count,
        config.max_bigrams,
    )
}

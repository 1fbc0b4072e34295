//! Text normalization, vocabularies, featurization and datasets.

mod dataset;
mod normalize;
pub mod synthetic;
mod vocab;

pub use dataset::{
    filter_pair, read_jsonl, read_jsonl_from, write_jsonl, write_jsonl_to, DialoguePair, Origin,
    MAX_PAIR_TOKENS, MIN_PAIR_TOKENS,
};
pub use normalize::{
    normalize, tokenize, NormalizedText, BOS, DIGIT_WILDCARD, EOS, LONGWORD, MAX_TOKEN_CHARS,
    MIN_WILDCARD_DIGITS,
};
pub use vocab::{build_vocab, stable_hash, FeatureIds, VocabConfig, Vocabulary, DEFAULT_OOV_BUCKETS};

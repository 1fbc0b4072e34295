//! Keyword (TF-IDF, BM25) and vector (SIM, MAP) response-ranking baselines.
//!
//! Reference toy corpus used by the golden tests:
//!
//! ```text
//! d0: the cat sat on the mat
//! d1: the dog sat down
//! d2: a cat and a dog played in the park today
//! query: the cat sat
//! ```

mod keyword;
mod vector;

pub use keyword::{
    bm25_rank, bm25_score, keyword_tokens, tfidf_rank, tfidf_score, Bm25Params, KeywordIndexStats,
    KeywordRanker, KeywordScheme,
};
pub use vector::{
    map_loss, map_score, sim_rank, train_map, tune_map, Embedder, EncoderEmbedder, MapParams,
    MapTrainConfig, VectorRanker,
};

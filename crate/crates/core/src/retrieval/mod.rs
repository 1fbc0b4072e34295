//! Precomputed response vectors with exact and graph-based approximate
//! top-k search.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! "RSEL" | u32 version | u8 kind=3
//! u64 count | u32 dim | u32 max_neighbors | u32 ef_construction | u64 seed
//! u64 checkpoint fingerprint | u64 score scale (f64 bits)
//! f32 vectors (count × dim)
//! count × str payload
//! u8 has_graph | graph block
//! ```

mod hnsw;

use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::binio::{ArtifactKind, ByteReader, ByteWriter};
use crate::encoder::{Encoder, Side};
use crate::error::{Error, Result};
use crate::textpipe::Vocabulary;

pub use hnsw::HnswGraph;

pub const INDEX_VERSION: u32 = 1;
const UNIT_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnConfig {
    pub max_neighbors: usize,
    pub ef_construction: usize,
    pub seed: u64,
}

impl Default for AnnConfig {
    fn default() -> Self {
        Self {
            max_neighbors: 16,
            ef_construction: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    /// `(id, cosine)`, best first.
    pub hits: Vec<(usize, f64)>,
    pub query_time: Duration,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<usize> {
        self.hits.iter().map(|h| h.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseIndex {
    dim: usize,
    vectors: Vec<f32>,
    payloads: Vec<String>,
    build_config: AnnConfig,
    checkpoint_fingerprint: u64,
    /// The checkpoint's `C`; converts cosines to score units.
    scale: f64,
    graph: Option<HnswGraph>,
}

impl ResponseIndex {
    /// Normalizes `vectors` and optionally builds the ANN graph.
    pub fn from_vectors(
        vectors: Vec<Vec<f32>>,
        payloads: Vec<String>,
        with_ann: bool,
        config: AnnConfig,
        checkpoint_fingerprint: u64,
        scale: f64,
    ) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::invalid("cannot index an empty response set"));
        }
        if vectors.len() != payloads.len() {
            return Err(Error::invalid(format!(
                "{} vectors but {} payloads",
                vectors.len(),
                payloads.len()
            )));
        }
        let dim = vectors[0].len();
        let mut flat = Vec::with_capacity(vectors.len() * dim);
        for v in &vectors {
            if v.len() != dim {
                return Err(Error::Shape {
                    op: "build_index",
                    left: vec![dim],
                    right: vec![v.len()],
                });
            }
            flat.extend(unit(v)?);
        }
        let graph = if with_ann {
            Some(HnswGraph::build(
                &flat,
                dim,
                config.max_neighbors,
                config.ef_construction,
                config.seed,
            )?)
        } else {
            None
        };
        Ok(Self {
            dim,
            vectors: flat,
            payloads,
            build_config: config,
            checkpoint_fingerprint,
            scale,
            graph,
        })
    }

    pub fn len(&self) -> usize {
        self.payloads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payloads.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    pub fn payload(&self, id: usize) -> &str {
        &self.payloads[id]
    }

    pub fn has_ann(&self) -> bool {
        self.graph.is_some()
    }

    pub fn build_config(&self) -> AnnConfig {
        self.build_config
    }

    pub fn checkpoint_fingerprint(&self) -> u64 {
        self.checkpoint_fingerprint
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn graph(&self) -> Option<&HnswGraph> {
        self.graph.as_ref()
    }

    fn check_query(&self, query: &[f32], k: usize) -> Result<Vec<f32>> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k must lie in [1, {}], got {k}",
                self.len()
            )));
        }
        if query.len() != self.dim {
            return Err(Error::Shape {
                op: "search",
                left: vec![self.dim],
                right: vec![query.len()],
            });
        }
        unit(query)
    }

    /// True top-`k` by cosine via a full scan; ties by id.
    pub fn search_exact(&self, query: &[f32], k: usize) -> Result<SearchResult> {
        let start = Instant::now();
        let q = self.check_query(query, k)?;
        let mut scored: Vec<hnsw::Scored> = (0..self.len())
            .map(|i| hnsw::Scored {
                sim: hnsw::dot(&q, self.vector(i)),
                id: i as u32,
            })
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, |a, b| b.cmp(a));
            scored.truncate(k);
        }
        scored.sort_unstable_by(|a, b| b.cmp(a));
        Ok(SearchResult {
            hits: scored.iter().map(|s| (s.id as usize, s.sim as f64)).collect(),
            query_time: start.elapsed(),
        })
    }

    /// Approximate top-`k` by layered graph search with frontier `ef_search`.
    pub fn search_ann(&self, query: &[f32], k: usize, ef_search: usize) -> Result<SearchResult> {
        let start = Instant::now();
        let graph = self
            .graph
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("index was built without an ANN graph".into()))?;
        let q = self.check_query(query, k)?;
        if ef_search < k {
            return Err(Error::InvalidArgument(format!(
                "ef_search {ef_search} must be >= k {k}"
            )));
        }
        let found = graph.search(&q, ef_search, &self.vectors, self.dim);
        Ok(SearchResult {
            hits: found
                .iter()
                .take(k)
                .map(|s| (s.id as usize, s.sim as f64))
                .collect(),
            query_time: start.elapsed(),
        })
    }

    /// Keeps hits whose scaled score `C * cos` reaches `theta`.
    pub fn threshold(&self, result: &SearchResult, theta: f64) -> Result<SearchResult> {
        if !(theta.abs() <= self.scale) {
            return Err(Error::InvalidArgument(format!(
                "threshold {theta} outside [-{c}, {c}]",
                c = self.scale
            )));
        }
        Ok(SearchResult {
            hits: result
                .hits
                .iter()
                .copied()
                .filter(|&(_, cos)| self.scale * cos >= theta)
                .collect(),
            query_time: result.query_time,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(ArtifactKind::Index, INDEX_VERSION);
        w.u64(self.len() as u64);
        w.u32(self.dim as u32);
        w.u32(self.build_config.max_neighbors as u32);
        w.u32(self.build_config.ef_construction as u32);
        w.u64(self.build_config.seed);
        w.u64(self.checkpoint_fingerprint);
        w.u64(self.scale.to_bits());
        w.f32s(&self.vectors);
        for p in &self.payloads {
            w.str(p);
        }
        match &self.graph {
            Some(g) => {
                w.u8(1);
                g.write(&mut w);
            }
            None => w.u8(0),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "index");
        r.header(ArtifactKind::Index, INDEX_VERSION)?;
        let n = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let build_config = AnnConfig {
            max_neighbors: r.u32()? as usize,
            ef_construction: r.u32()? as usize,
            seed: r.u64()?,
        };
        let checkpoint_fingerprint = r.u64()?;
        let scale = f64::from_bits(r.u64()?);
        let count = n
            .checked_mul(dim)
            .ok_or_else(|| Error::format("index", "size overflow"))?;
        let vectors = r.f32s(count)?;
        for row in vectors.chunks(dim.max(1)) {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::format("index", "stored vector is not unit-norm"));
            }
        }
        let payloads = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let graph = match r.u8()? {
            0 => None,
            1 => Some(HnswGraph::read(&mut r, n, build_config.max_neighbors)?),
            other => return Err(Error::format("index", format!("bad graph flag {other}"))),
        };
        r.finish()?;
        if n == 0 || dim == 0 {
            return Err(Error::format("index", "empty index"));
        }
        Ok(Self {
            dim,
            vectors,
            payloads,
            build_config,
            checkpoint_fingerprint,
            scale,
            graph,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn unit(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateEncoding);
    }
    Ok(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}

/// Identifies the encoder parameters an index was built from.
pub fn encoder_fingerprint(encoder: &Encoder<f32>) -> u64 {
    encoder.to_checkpoint("").fingerprint()
}

/// Encodes `text` with the input tower for querying an index.
pub fn encode_query(encoder: &Encoder<f32>, vocab: &Vocabulary, text: &str) -> Result<Vec<f32>> {
    let f = vocab.featurize_text(text, encoder.config().max_positions);
    encoder.encode(&f, Side::Input)
}

/// Encodes every response with the response tower and indexes it.
pub fn build_index(
    responses: &[String],
    encoder: &Encoder<f32>,
    vocab: &Vocabulary,
    with_ann: bool,
    config: AnnConfig,
) -> Result<ResponseIndex> {
    if encoder.vocab_fingerprint() != vocab.fingerprint() {
        return Err(Error::FingerprintMismatch {
            expected: vocab.fingerprint(),
            found: encoder.vocab_fingerprint(),
        });
    }
    if responses.is_empty() {
        return Err(Error::invalid("cannot index an empty response set"));
    }
    let max = encoder.config().max_positions;
    let vectors = responses
        .iter()
        .map(|t| encoder.encode(&vocab.featurize_text(t, max), Side::Response))
        .collect::<Result<Vec<_>>>()?;
    ResponseIndex::from_vectors(
        vectors,
        responses.to_vec(),
        with_ann,
        config,
        encoder_fingerprint(encoder),
        encoder.scale(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_index(n: usize, dim: usize, with_ann: bool, seed: u64) -> ResponseIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
            .collect();
        let payloads = (0..n).map(|i| format!("r{i}")).collect();
        ResponseIndex::from_vectors(vectors, payloads, with_ann, AnnConfig::default(), 7, 2.0).unwrap()
    }

    #[test]
    fn single_item() {
        let idx = ResponseIndex::from_vectors(vec![vec![1.0, 2.0]], vec!["a".into()], true, AnnConfig::default(), 0, 1.0)
            .unwrap();
        assert_eq!(idx.search_exact(&[0.3, 0.1], 1).unwrap().ids(), vec![0]);
        assert_eq!(idx.search_ann(&[0.3, 0.1], 1, 1).unwrap().ids(), vec![0]);
    }

    #[test]
    fn exact_matches_oracle_sort() {
        let idx = random_index(100, 8, false, 1);
        let q: Vec<f32> = idx.vector(17).iter().map(|v| v * 0.5).collect();
        let res = idx.search_exact(&q, 5).unwrap();
        assert_eq!(res.hits[0].0, 17);
        assert!((res.hits[0].1 - 1.0).abs() < 1e-6);
        let mut oracle: Vec<(usize, f64)> = (0..100)
            .map(|i| {
                let d: f64 = idx.vector(i).iter().zip(&q).map(|(&a, &b)| a as f64 * b as f64).sum();
                (i, d)
            })
            .collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        assert_eq!(res.ids(), oracle[..5].iter().map(|o| o.0).collect::<Vec<_>>());
        let all = idx.search_exact(&q, 100).unwrap();
        assert!(all.hits.windows(2).all(|w| w[0].1 >= w[1].1));
        assert!(idx.search_exact(&q, 0).is_err());
        assert!(idx.search_exact(&q, 101).is_err());
    }

    #[test]
    fn ann_requires_graph_and_wide_frontier() {
        let plain = random_index(20, 4, false, 2);
        assert!(plain.search_ann(&[1.0, 0.0, 0.0, 0.0], 1, 10).is_err());
        let idx = random_index(20, 4, true, 2);
        assert!(idx.search_ann(&[1.0, 0.0, 0.0, 0.0], 5, 4).is_err());
    }

    #[test]
    fn exhaustive_frontier_is_exact() {
        let idx = random_index(300, 8, true, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let q: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let exact = idx.search_exact(&q, 10).unwrap().ids();
            assert_eq!(idx.search_ann(&q, 10, 300).unwrap().ids(), exact);
        }
    }

    #[test]
    fn rebuild_is_identical_and_round_trips() {
        let a = random_index(200, 6, true, 4);
        let b = random_index(200, 6, true, 4);
        assert_eq!(a.graph(), b.graph());
        let bytes = a.to_bytes();
        let back = ResponseIndex::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
        assert!(ResponseIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
    }

    #[test]
    fn threshold_uses_score_units() {
        let idx = random_index(50, 4, false, 5);
        let res = idx.search_exact(idx.vector(0), 50).unwrap();
        let kept = idx.threshold(&res, 1.0).unwrap();
        assert!(kept.hits.iter().all(|&(_, c)| 2.0 * c >= 1.0));
        assert!(kept.hits.len() < 50 && !kept.hits.is_empty());
        assert!(idx.threshold(&res, 2.5).is_err());
    }
}

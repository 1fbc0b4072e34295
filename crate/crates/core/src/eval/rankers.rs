use super::Ranker;
use crate::encoder::{Encoder, Side};
use crate::error::{Error, Result};
use crate::textpipe::{stable_hash, Vocabulary};

/// Scores are a pure hash of `(seed, input, candidate)`, uniform in `[0, 1)`.
#[derive(Debug, Clone)]
pub struct RandomRanker {
    seed: u64,
    pool: Vec<String>,
}

impl RandomRanker {
    pub fn new(seed: u64) -> Self {
        Self { seed, pool: Vec::new() }
    }
}

impl Ranker for RandomRanker {
    fn name(&self) -> String {
        "random".into()
    }

    fn prepare(&mut self, pool: &[String]) -> Result<()> {
        self.pool = pool.to_vec();
        Ok(())
    }

    fn score(&self, input: &str, candidates: &[usize]) -> Result<Vec<f64>> {
        let base = stable_hash(input.as_bytes()) ^ self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        Ok(candidates
            .iter()
            .map(|&c| {
                let mut key = base.to_le_bytes().to_vec();
                key.extend_from_slice(self.pool[c].as_bytes());
                (stable_hash(&key) >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// Ranks by the dual encoder's scaled cosine.
pub struct EncoderRanker<'a> {
    encoder: &'a Encoder<f32>,
    vocab: &'a Vocabulary,
    name: String,
    /// Unit-norm response encodings.
    pool: Vec<Vec<f32>>,
}

impl<'a> EncoderRanker<'a> {
    pub fn new(encoder: &'a Encoder<f32>, vocab: &'a Vocabulary) -> Self {
        Self::named(encoder, vocab, "encoder")
    }

    pub fn named(encoder: &'a Encoder<f32>, vocab: &'a Vocabulary, name: &str) -> Self {
        Self {
            encoder,
            vocab,
            name: name.into(),
            pool: Vec::new(),
        }
    }

    fn encode_unit(&self, text: &str, side: Side) -> Result<Vec<f32>> {
        let f = self
            .vocab
            .featurize_text(text, self.encoder.config().max_positions);
        let mut h = self.encoder.encode(&f, side)?;
        let norm = h.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::DegenerateEncoding);
        }
        h.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        Ok(h)
    }
}

impl Ranker for EncoderRanker<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn prepare(&mut self, pool: &[String]) -> Result<()> {
        self.pool = pool
            .iter()
            .map(|t| self.encode_unit(t, Side::Response))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn score(&self, input: &str, candidates: &[usize]) -> Result<Vec<f64>> {
        let hx = self.encode_unit(input, Side::Input)?;
        let c = self.encoder.scale();
        Ok(candidates
            .iter()
            .map(|&j| {
                c * hx
                    .iter()
                    .zip(&self.pool[j])
                    .map(|(&a, &b)| a as f64 * b as f64)
                    .sum::<f64>()
            })
            .collect())
    }
}

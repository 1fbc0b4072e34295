//! Synthetic dialogue corpora for desk-scale experiments.
//!
//! A "world" fixes topics and word forms; a corpus samples pairs from it.
//! Each pair has a latent signature `(topic, facet)`. Both sides carry two
//! key phrases of the topic (different keyword sets per side) and one facet
//! cue word, shuffled among Zipf-distributed filler. Topics come in mirrored
//! twins that share keywords but reverse the word order inside every
//! phrase, so only adjacent-order features separate them. A facet is a cue
//! word together with its placement, early or late in the text: facets that
//! share a cue differ only in absolute position.
//!
//! The target domain swaps a share of topic keywords for words that never
//! occur in the source domain and draws filler from a shifted distribution.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index::sample, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DialoguePair, Origin};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const KEYWORDS_PER_SIDE: usize = 8;
const PHRASES_PER_TEXT: usize = 2;
const MIN_CONTENT: usize = 10;
const MAX_CONTENT: usize = 14;
/// Index offset for words that exist only in the target domain.
const TARGET_WORD_BASE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_topics: usize,
    pub pairs_per_topic: usize,
    /// Source word types (filler, cues and keywords), raised to the minimum
    /// the structure needs.
    pub vocab_size: usize,
    /// Sampling seed for the pairs.
    pub seed: u64,
    /// Facets per text; `1` makes all pairs of a topic interchangeable.
    pub facets: usize,
    pub domain: Domain,
    /// Fixes topics and word forms; source and target corpora of one
    /// benchmark share it.
    pub world_seed: u64,
    /// Share of topic keywords replaced by target-only words.
    pub target_shift: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_topics: 100,
            pairs_per_topic: 500,
            vocab_size: 4000,
            seed: 0,
            facets: 12,
            domain: Domain::Source,
            world_seed: 0,
            target_shift: 0.5,
        }
    }
}

/// Latent structure that generated a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub topic: usize,
    pub facet: usize,
}

/// Pronounceable, unique, alphabetic form of word `i`.
fn word_form(mut i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut syllables = 2;
    let mut capacity = base * base;
    while i >= capacity {
        i -= capacity;
        syllables += 1;
        capacity *= base;
    }
    let mut out = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        let s = i % base;
        i /= base;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

struct Topic {
    /// Ordered two-word phrases per side.
    phrases: [Vec<[usize; 2]>; 2],
}

struct World {
    topics: Vec<Topic>,
    /// Cue word per side, for each facet.
    cues: Vec<[usize; 2]>,
    filler: [Vec<usize>; 2],
    /// Keyword substitutions in the target domain.
    target_words: std::collections::HashMap<usize, usize>,
}

impl World {
    fn new(config: &SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.world_seed ^ 0x77_6f72_6c64);
        let n_topics = config.n_topics.max(1);
        let facets = config.facets.max(1);
        let n_filler = (config.vocab_size / 4).max(8);
        let per_side = facets.div_ceil(2);
        let n_cues = 2 * per_side;
        let pool = config
            .vocab_size
            .saturating_sub(n_filler + n_cues)
            .max(2 * KEYWORDS_PER_SIDE);
        let mut next = 0;
        let mut take = |n: usize| {
            let ids: Vec<usize> = (next..next + n).collect();
            next += n;
            ids
        };
        let filler = take(n_filler);
        let cue_ids = take(n_cues);
        let keywords = take(pool);
        // Facet `f` uses cue `f / 2`, placed early for even `f`.
        let cues = (0..facets)
            .map(|f| [cue_ids[f / 2], cue_ids[per_side + f / 2]])
            .collect();

        let mut topics: Vec<Topic> = Vec::with_capacity(n_topics);
        for t in 0..n_topics {
            if t % 2 == 1 {
                let twin = &topics[t - 1];
                let mirror = |ps: &Vec<[usize; 2]>| ps.iter().map(|&[a, b]| [b, a]).collect();
                topics.push(Topic {
                    phrases: [mirror(&twin.phrases[0]), mirror(&twin.phrases[1])],
                });
                continue;
            }
            let mut phrases = [Vec::new(), Vec::new()];
            for side in &mut phrases {
                let chosen: Vec<usize> = sample(&mut rng, keywords.len(), KEYWORDS_PER_SIDE)
                    .into_iter()
                    .map(|i| keywords[i])
                    .collect();
                *side = chosen.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
            }
            topics.push(Topic { phrases });
        }

        let target_words = keywords
            .iter()
            .filter(|_| rng.gen_bool(config.target_shift.clamp(0.0, 1.0)))
            .enumerate()
            .map(|(j, &w)| (w, TARGET_WORD_BASE + j))
            .collect();

        // Target filler keeps half the source filler, in a new frequency
        // order, and adds as many unseen words.
        let mut target_filler: Vec<usize> = filler[..n_filler / 2].to_vec();
        target_filler.extend((0..n_filler - n_filler / 2).map(|j| TARGET_WORD_BASE / 2 + j));
        target_filler.shuffle(&mut rng);

        Self {
            topics,
            cues,
            filler: [filler, target_filler],
            target_words,
        }
    }
}

/// Deterministic stream of synthetic pairs with their signatures.
pub struct SyntheticCorpus {
    world: World,
    config: SyntheticConfig,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
    zipf: WeightedIndex<f64>,
}

impl SyntheticCorpus {
    pub fn new(config: SyntheticConfig) -> Self {
        let world = World::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let n_topics = world.topics.len();
        let mut order: Vec<usize> = (0..n_topics * config.pairs_per_topic.max(1))
            .map(|i| i % n_topics)
            .collect();
        order.shuffle(&mut rng);
        let n_filler = world.filler[0].len();
        let zipf = WeightedIndex::new((0..n_filler).map(|r| 1.0 / (r + 1) as f64))
            .expect("positive weights");
        Self {
            world,
            config,
            order,
            pos: 0,
            rng,
            zipf,
        }
    }

    fn text(&mut self, sig: Signature, side: usize) -> String {
        let target = self.config.domain == Domain::Target;
        let topic = &self.world.topics[sig.topic];
        let mut units: Vec<Vec<usize>> = Vec::with_capacity(MAX_CONTENT);
        for p in sample(&mut self.rng, topic.phrases[side].len(), PHRASES_PER_TEXT) {
            units.push(topic.phrases[side][p].to_vec());
        }
        let len = self.rng.gen_range(MIN_CONTENT..=MAX_CONTENT);
        let filler = &self.world.filler[target as usize];
        for _ in 0..len - (2 * PHRASES_PER_TEXT + 1) {
            units.push(vec![filler[self.zipf.sample(&mut self.rng)]]);
        }
        units.shuffle(&mut self.rng);
        // Early cues land in the first third of the slots, late ones in the
        // last third, never at either end.
        let n = units.len();
        let third = ((n + 1) / 3).max(1);
        let slot = if sig.facet % 2 == 0 {
            self.rng.gen_range(1..=third)
        } else {
            self.rng.gen_range(n - third..n)
        };
        units.insert(slot, vec![self.world.cues[sig.facet][side]]);
        let words: Vec<String> = units
            .into_iter()
            .flatten()
            .map(|w| {
                let w = if target {
                    *self.world.target_words.get(&w).unwrap_or(&w)
                } else {
                    w
                };
                word_form(w)
            })
            .collect();
        words.join(" ")
    }
}

impl Iterator for SyntheticCorpus {
    type Item = (DialoguePair, Signature);

    fn next(&mut self) -> Option<Self::Item> {
        let topic = *self.order.get(self.pos)?;
        self.pos += 1;
        let sig = Signature {
            topic,
            facet: self.rng.gen_range(0..self.world.cues.len()),
        };
        let input = self.text(sig, 0);
        let response = self.text(sig, 1);
        let origin = match self.config.domain {
            Domain::Source => Origin::Source,
            Domain::Target => Origin::Target,
        };
        Some((DialoguePair::new(input, response, origin), sig))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.order.len() - self.pos;
        (n, Some(n))
    }
}

/// Source-domain pairs with default facets and world.
pub fn generate_synthetic_corpus(
    n_topics: usize,
    pairs_per_topic: usize,
    vocab_size: usize,
    seed: u64,
) -> impl Iterator<Item = DialoguePair> {
    SyntheticCorpus::new(SyntheticConfig {
        n_topics,
        pairs_per_topic,
        vocab_size,
        seed,
        ..Default::default()
    })
    .map(|(p, _)| p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textpipe::{filter_pair, normalize};
    use std::collections::HashSet;

    fn words(text: &str) -> HashSet<String> {
        text.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn word_forms_are_unique_and_short() {
        let mut seen = HashSet::new();
        for i in (0..10_000).chain(TARGET_WORD_BASE..TARGET_WORD_BASE + 100) {
            let w = word_form(i);
            assert!(w.len() <= 16 && w.chars().all(|c| c.is_ascii_lowercase()));
            assert!(seen.insert(w));
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let a: Vec<_> = generate_synthetic_corpus(5, 7, 300, 7).collect();
        let b: Vec<_> = generate_synthetic_corpus(5, 7, 300, 7).collect();
        assert_eq!(a.len(), 35);
        assert_eq!(a, b);
        let c: Vec<_> = generate_synthetic_corpus(5, 7, 300, 8).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn pairs_pass_the_length_filter() {
        for p in generate_synthetic_corpus(10, 20, 500, 1) {
            assert!(filter_pair(&p), "{p:?}");
            assert_eq!(normalize(&p.input).content().join(" "), p.input);
        }
    }

    #[test]
    fn mirrored_twins_share_keywords() {
        let world = World::new(&SyntheticConfig::default());
        let (a, b) = (&world.topics[0], &world.topics[1]);
        for side in 0..2 {
            for (pa, pb) in a.phrases[side].iter().zip(&b.phrases[side]) {
                assert_eq!([pa[1], pa[0]], *pb);
            }
        }
        assert_ne!(world.topics[1].phrases[0], world.topics[2].phrases[0]);
    }

    #[test]
    fn target_domain_introduces_unseen_words() {
        let base = SyntheticConfig {
            n_topics: 20,
            pairs_per_topic: 50,
            vocab_size: 800,
            ..Default::default()
        };
        let source: HashSet<String> = SyntheticCorpus::new(base.clone())
            .flat_map(|(p, _)| words(&p.input).into_iter().chain(words(&p.response)))
            .collect();
        let target: Vec<_> = SyntheticCorpus::new(SyntheticConfig {
            domain: Domain::Target,
            seed: 1,
            ..base
        })
        .collect();
        assert!(target.iter().all(|(p, _)| p.origin == Origin::Target));
        let unseen = target
            .iter()
            .flat_map(|(p, _)| words(&p.input))
            .filter(|w| !source.contains(w))
            .count();
        assert!(unseen > 0);
    }
}

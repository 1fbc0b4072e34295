//! `R_N@k` evaluation: for each test input, rank its true response against
//! `N - 1` distractors drawn from the other test responses.

mod rankers;

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textpipe::{normalize, DialoguePair};

pub use rankers::{EncoderRanker, RandomRanker};

/// Where distractors come from; recorded in every report.
pub const DISTRACTOR_POOL: &str = "test-set";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_candidates: usize,
    pub k: usize,
    pub seed: u64,
    pub dedupe_inputs: bool,
    pub dedupe_responses: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_candidates: 100,
            k: 1,
            seed: 0,
            dedupe_inputs: false,
            dedupe_responses: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates < 2 {
            return Err(Error::Config("N must be >= 2".into()));
        }
        if self.k < 1 || self.k > self.n_candidates {
            return Err(Error::Config(format!(
                "k must lie in [1, N={}], got {}",
                self.n_candidates, self.k
            )));
        }
        Ok(())
    }
}

/// One query: an input and its candidate responses (indices into the pool).
/// The true response is always `candidates[0]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub input: String,
    pub candidates: Vec<usize>,
}

impl Query {
    pub fn truth(&self) -> usize {
        self.candidates[0]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSets {
    /// Distinct response texts.
    pub pool: Vec<String>,
    pub queries: Vec<Query>,
}

impl CandidateSets {
    /// Keeps the first `n` candidates of every query (truth plus the first
    /// `n - 1` distractors).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            pool: self.pool.clone(),
            queries: self
                .queries
                .iter()
                .map(|q| Query {
                    input: q.input.clone(),
                    candidates: q.candidates[..n.min(q.candidates.len())].to_vec(),
                })
                .collect(),
        }
    }
}

fn text_key(text: &str) -> String {
    normalize(text).join()
}

/// Collapses duplicate inputs and/or responses, keeping first occurrences.
pub fn dedupe(pairs: &[DialoguePair], inputs: bool, responses: bool) -> Vec<DialoguePair> {
    let mut seen_inputs = HashSet::new();
    let mut seen_responses = HashSet::new();
    pairs
        .iter()
        .filter(|p| {
            let keep_in = !inputs || seen_inputs.insert(text_key(&p.input));
            keep_in && (!responses || seen_responses.insert(text_key(&p.response)))
        })
        .cloned()
        .collect()
}

/// Builds per-query candidate sets with distractors sampled uniformly
/// without replacement from the other distinct test responses.
pub fn make_candidate_sets(pairs: &[DialoguePair], config: &EvalConfig) -> Result<CandidateSets> {
    config.validate()?;
    let pairs = dedupe(pairs, config.dedupe_inputs, config.dedupe_responses);
    let mut pool = Vec::new();
    let mut pool_index = std::collections::HashMap::new();
    let mut truths = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let idx = *pool_index.entry(text_key(&p.response)).or_insert_with(|| {
            pool.push(p.response.clone());
            pool.len() - 1
        });
        truths.push(idx);
    }
    if pool.len() < config.n_candidates {
        return Err(Error::NotEnoughResponses {
            needed: config.n_candidates,
            available: pool.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let queries = pairs
        .iter()
        .zip(truths)
        .map(|(p, truth)| {
            let mut candidates = Vec::with_capacity(config.n_candidates);
            candidates.push(truth);
            for i in sample(&mut rng, pool.len() - 1, config.n_candidates - 1) {
                candidates.push(if i >= truth { i + 1 } else { i });
            }
            Query {
                input: p.input.clone(),
                candidates,
            }
        })
        .collect();
    Ok(CandidateSets { pool, queries })
}

/// Fraction of ranks `<= k`.
pub fn recall_at_k(ranks: &[usize], k: usize) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::invalid("recall over an empty rank list"));
    }
    if ranks.contains(&0) {
        return Err(Error::invalid("ranks start at 1"));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// 1-based rank of the candidate at `truth_pos`; any tie counts against it.
pub fn rank_of_truth(scores: &[f64], truth_pos: usize) -> Result<usize> {
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("ranker produced NaN scores"));
    }
    let s = scores[truth_pos];
    Ok(1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &v)| j != truth_pos && v >= s)
        .count())
}

/// Orders candidate indices by descending score, ties by candidate index.
pub fn ranked_order(candidates: &[usize], scores: &[f64]) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = candidates.iter().copied().zip(scores.iter().copied()).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

/// Anything that can score candidate responses for an input.
pub trait Ranker: Sync {
    fn name(&self) -> String;

    /// Called once with the response pool before scoring.
    fn prepare(&mut self, _pool: &[String]) -> Result<()> {
        Ok(())
    }

    /// Scores for `candidates` (indices into the prepared pool); higher is
    /// better.
    fn score(&self, input: &str, candidates: &[usize]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub ranker: String,
    #[serde(rename = "N")]
    pub n_candidates: usize,
    pub k: usize,
    pub seed: u64,
    pub recall: f64,
    pub n_queries: usize,
    pub distractor_pool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_query_ranks: Option<Vec<usize>>,
}

impl EvalResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    pub fn without_ranks(mut self) -> Self {
        self.per_query_ranks = None;
        self
    }
}

/// Ranks every query of prepared candidate sets; returns 1-based ranks.
pub fn rank_queries(ranker: &mut dyn Ranker, sets: &CandidateSets) -> Result<Vec<usize>> {
    ranker.prepare(&sets.pool)?;
    let ranker: &dyn Ranker = ranker;
    sets.queries
        .par_iter()
        .map(|q| {
            let scores = ranker.score(&q.input, &q.candidates)?;
            if scores.len() != q.candidates.len() {
                return Err(Error::invalid(format!(
                    "ranker {} returned {} scores for {} candidates",
                    ranker.name(),
                    scores.len(),
                    q.candidates.len()
                )));
            }
            rank_of_truth(&scores, 0)
        })
        .collect()
}

pub fn evaluate_sets(
    ranker: &mut dyn Ranker,
    sets: &CandidateSets,
    config: &EvalConfig,
    dataset: &str,
) -> Result<EvalResult> {
    let ranks = rank_queries(ranker, sets)?;
    Ok(EvalResult {
        dataset: dataset.to_string(),
        ranker: ranker.name(),
        n_candidates: config.n_candidates,
        k: config.k,
        seed: config.seed,
        recall: recall_at_k(&ranks, config.k)?,
        n_queries: ranks.len(),
        distractor_pool: DISTRACTOR_POOL.to_string(),
        per_query_ranks: Some(ranks),
    })
}

/// Builds candidate sets, ranks every query and aggregates `R_N@k`.
pub fn evaluate(
    ranker: &mut dyn Ranker,
    pairs: &[DialoguePair],
    config: &EvalConfig,
    dataset: &str,
) -> Result<EvalResult> {
    let sets = make_candidate_sets(pairs, config)?;
    evaluate_sets(ranker, &sets, config, dataset)
}

/// CSV with one row per ranker and one column per dataset (recall values).
pub fn results_table(results: &[EvalResult]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut rankers: Vec<&str> = Vec::new();
    for r in results {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !rankers.contains(&r.ranker.as_str()) {
            rankers.push(&r.ranker);
        }
    }
    let mut out = String::from("ranker");
    for d in &datasets {
        let _ = write!(out, ",{d}");
    }
    out.push('\n');
    for rk in &rankers {
        out.push_str(rk);
        for d in &datasets {
            match results.iter().find(|r| r.ranker == *rk && r.dataset == *d) {
                Some(r) => {
                    let _ = write!(out, ",{:.4}", r.recall);
                }
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::eval::{ranked_order, Ranker};
use crate::textpipe::normalize;

/// Content tokens of a text (boundary tokens dropped).
pub fn keyword_tokens(text: &str) -> Vec<String> {
    normalize(text).content().to_vec()
}

/// Document frequencies and lengths of a document collection.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordIndexStats {
    df: HashMap<String, usize>,
    doc_lens: Vec<usize>,
    avg_len: f64,
}

impl KeywordIndexStats {
    pub fn from_docs<D: AsRef<[String]>>(docs: &[D]) -> Self {
        let mut df = HashMap::new();
        let mut doc_lens = Vec::with_capacity(docs.len());
        for d in docs {
            let d = d.as_ref();
            doc_lens.push(d.len());
            for t in d.iter().collect::<HashSet<_>>() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        let total: usize = doc_lens.iter().sum();
        let avg_len = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Self { df, doc_lens, avg_len }
    }

    pub fn n_docs(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn df(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn doc_lens(&self) -> &[usize] {
        &self.doc_lens
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    /// `ln((N+1)/(df+1)) + 1`.
    pub fn tfidf_idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        ((n + 1.0) / (self.df(term) as f64 + 1.0)).ln() + 1.0
    }

    /// `ln(1 + (N-df+0.5)/(df+0.5))`, positive even when `df = N`.
    pub fn bm25_idf(&self, term: &str) -> f64 {
        let n = self.n_docs() as f64;
        let df = self.df(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0) || !(0.0..=1.0).contains(&self.b) {
            return Err(Error::Config(format!(
                "BM25 needs k1 > 0 and b in [0, 1], got k1={} b={}",
                self.k1, self.b
            )));
        }
        Ok(())
    }
}

fn term_counts(doc: &[String]) -> HashMap<&str, usize> {
    let mut tf = HashMap::new();
    for t in doc {
        *tf.entry(t.as_str()).or_insert(0) += 1;
    }
    tf
}

fn distinct(query: &[String]) -> Vec<&str> {
    let mut seen = HashSet::new();
    query.iter().map(String::as_str).filter(|t| seen.insert(*t)).collect()
}

pub fn tfidf_score(query: &[String], doc: &[String], stats: &KeywordIndexStats) -> f64 {
    let tf = term_counts(doc);
    distinct(query)
        .into_iter()
        .filter_map(|t| tf.get(t).map(|&c| c as f64 * stats.tfidf_idf(t)))
        .sum()
}

pub fn bm25_score(query: &[String], doc: &[String], stats: &KeywordIndexStats, params: Bm25Params) -> f64 {
    let tf = term_counts(doc);
    let norm = if stats.avg_len() > 0.0 {
        1.0 - params.b + params.b * doc.len() as f64 / stats.avg_len()
    } else {
        1.0
    };
    distinct(query)
        .into_iter()
        .filter_map(|t| {
            tf.get(t).map(|&c| {
                let c = c as f64;
                stats.bm25_idf(t) * c * (params.k1 + 1.0) / (c + params.k1 * norm)
            })
        })
        .sum()
}

fn check_candidates<D>(candidates: &[D]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    Ok(())
}

/// Candidates `(id, score)` by descending TF-IDF score, ties by id.
pub fn tfidf_rank<D: AsRef<[String]>>(
    query: &[String],
    candidates: &[D],
    stats: &KeywordIndexStats,
) -> Result<Vec<(usize, f64)>> {
    check_candidates(candidates)?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|d| tfidf_score(query, d.as_ref(), stats))
        .collect();
    Ok(ranked_order(&(0..candidates.len()).collect::<Vec<_>>(), &scores))
}

/// Candidates `(id, score)` by descending Okapi BM25 score, ties by id.
pub fn bm25_rank<D: AsRef<[String]>>(
    query: &[String],
    candidates: &[D],
    stats: &KeywordIndexStats,
    params: Bm25Params,
) -> Result<Vec<(usize, f64)>> {
    params.validate()?;
    check_candidates(candidates)?;
    let scores: Vec<f64> = candidates
        .iter()
        .map(|d| bm25_score(query, d.as_ref(), stats, params))
        .collect();
    Ok(ranked_order(&(0..candidates.len()).collect::<Vec<_>>(), &scores))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeywordScheme {
    TfIdf,
    Bm25(Bm25Params),
}

/// TF-IDF or BM25 as an evaluation ranker. Statistics come from each
/// query's candidate set unless `global_stats` is set, in which case the
/// whole response pool is used.
pub struct KeywordRanker {
    scheme: KeywordScheme,
    global_stats: bool,
    docs: Vec<Vec<String>>,
    global: Option<KeywordIndexStats>,
}

impl KeywordRanker {
    pub fn new(scheme: KeywordScheme, global_stats: bool) -> Result<Self> {
        if let KeywordScheme::Bm25(p) = scheme {
            p.validate()?;
        }
        Ok(Self {
            scheme,
            global_stats,
            docs: Vec::new(),
            global: None,
        })
    }
}

impl Ranker for KeywordRanker {
    fn name(&self) -> String {
        match self.scheme {
            KeywordScheme::TfIdf => "tfidf".into(),
            KeywordScheme::Bm25(_) => "bm25".into(),
        }
    }

    fn prepare(&mut self, pool: &[String]) -> Result<()> {
        self.docs = pool.iter().map(|t| keyword_tokens(t)).collect();
        self.global = self
            .global_stats
            .then(|| KeywordIndexStats::from_docs(&self.docs));
        Ok(())
    }

    fn score(&self, input: &str, candidates: &[usize]) -> Result<Vec<f64>> {
        check_candidates(candidates)?;
        let query = keyword_tokens(input);
        let docs: Vec<&[String]> = candidates.iter().map(|&c| self.docs[c].as_slice()).collect();
        let local;
        let stats = match &self.global {
            Some(g) => g,
            None => {
                local = KeywordIndexStats::from_docs(&docs);
                &local
            }
        };
        Ok(docs
            .iter()
            .map(|d| match self.scheme {
                KeywordScheme::TfIdf => tfidf_score(&query, d, stats),
                KeywordScheme::Bm25(p) => bm25_score(&query, d, stats, p),
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_string).collect()
    }

    #[test]
    fn no_shared_terms_scores_zero() {
        let docs = vec![toks("a b"), toks("c d")];
        let stats = KeywordIndexStats::from_docs(&docs);
        let ranked = tfidf_rank(&toks("x y"), &docs, &stats).unwrap();
        assert!(ranked.iter().all(|&(_, s)| s == 0.0));
        assert_eq!(ranked[0].0, 0);
    }

    #[test]
    fn zero_b_ignores_length() {
        let docs = vec![toks("cat"), toks("cat x y z w v")];
        let stats = KeywordIndexStats::from_docs(&docs);
        let p = Bm25Params { k1: 1.2, b: 0.0 };
        let q = toks("cat");
        assert_eq!(bm25_score(&q, &docs[0], &stats, p), bm25_score(&q, &docs[1], &stats, p));
    }

    #[test]
    fn full_df_keeps_positive_idf() {
        let docs = vec![toks("a"), toks("a b")];
        let stats = KeywordIndexStats::from_docs(&docs);
        assert!(stats.bm25_idf("a") > 0.0);
        assert_eq!(stats.tfidf_idf("a"), 1.0);
    }

    #[test]
    fn empty_candidates_error() {
        let stats = KeywordIndexStats::from_docs::<Vec<String>>(&[]);
        assert!(tfidf_rank::<Vec<String>>(&toks("a"), &[], &stats).is_err());
        assert!(bm25_rank::<Vec<String>>(&toks("a"), &[], &stats, Bm25Params::default()).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(Bm25Params { k1: 0.0, b: 0.5 }.validate().is_err());
        assert!(Bm25Params { k1: 1.0, b: 1.5 }.validate().is_err());
    }

    #[test]
    fn non_matching_candidate_keeps_order_under_fixed_stats() {
        let docs = vec![toks("a b a"), toks("b c"), toks("a c c")];
        let stats = KeywordIndexStats::from_docs(&docs);
        let q = toks("a c");
        let before = tfidf_rank(&q, &docs, &stats).unwrap();
        let mut more = docs.clone();
        more.push(toks("z z"));
        let after = tfidf_rank(&q, &more, &stats).unwrap();
        let ids: Vec<usize> = after.iter().map(|r| r.0).filter(|&i| i < 3).collect();
        assert_eq!(ids, before.iter().map(|r| r.0).collect::<Vec<_>>());
    }
}

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsel::textpipe::{build_vocab, normalize, DialoguePair, Origin, VocabConfig, BOS, EOS};

const WORDS: [&str; 12] = [
    "apple", "river", "stone", "cloud", "bread", "lamp", "forest", "train", "music", "glass", "paper", "door",
];

/// Lowercase alphabetic sentences, so the oracle can tokenize by whitespace.
fn hand_corpus() -> Vec<DialoguePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let sentence = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..9);
        // Skewed draws give a spread of counts around the threshold.
        (0..n)
            .map(|_| WORDS[rng.gen_range(0..WORDS.len()).min(rng.gen_range(0..WORDS.len()))])
            .collect::<Vec<_>>()
            .join(" ")
    };
    (0..100)
        .map(|_| DialoguePair::new(sentence(&mut rng), sentence(&mut rng), Origin::Source))
        .collect()
}

#[test]
fn unigram_table_matches_frequency_oracle() {
    let pairs = hand_corpus();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut bigrams: BTreeMap<String, usize> = BTreeMap::new();
    for p in &pairs {
        for text in [&p.input, &p.response] {
            let tokens: Vec<String> = std::iter::once(BOS.to_string())
                .chain(text.split_whitespace().map(str::to_string))
                .chain(std::iter::once(EOS.to_string()))
                .collect();
            for t in &tokens {
                *counts.entry(t.clone()).or_default() += 1;
            }
            for w in tokens.windows(2) {
                *bigrams.entry(format!("{} {}", w[0], w[1])).or_default() += 1;
            }
        }
    }
    for min_count in [1, 20, 60] {
        let mut expected: Vec<(&String, &usize)> = counts.iter().filter(|(_, &c)| c >= min_count).collect();
        expected.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let vocab = build_vocab(
            pairs.iter().cloned(),
            &VocabConfig {
                min_count,
                max_bigrams: 10,
                oov_buckets: 8,
                ..Default::default()
            },
        )
        .unwrap();
        let expected: Vec<&String> = expected.into_iter().map(|e| e.0).collect();
        assert_eq!(vocab.unigrams().iter().collect::<Vec<_>>(), expected, "min_count {min_count}");

        let mut top: Vec<(&String, &usize)> = bigrams.iter().collect();
        top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        let top: Vec<&String> = top.into_iter().take(10).map(|e| e.0).collect();
        assert_eq!(vocab.bigrams().iter().collect::<Vec<_>>(), top);
    }
}

#[test]
fn oov_buckets_are_uniform() {
    let pairs = hand_corpus();
    let buckets = 64;
    let vocab = build_vocab(
        pairs.iter().cloned(),
        &VocabConfig {
            min_count: 1,
            oov_buckets: buckets,
            ..Default::default()
        },
    )
    .unwrap();
    let known: HashSet<&str> = vocab.unigrams().iter().map(String::as_str).collect();
    let n_uni = vocab.unigrams().len() as u32;
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut hist = vec![0usize; buckets];
    let n = 32_000;
    let mut drawn = 0;
    while drawn < n {
        let word: String = (0..rng.gen_range(3..10)).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        if known.contains(word.as_str()) {
            continue;
        }
        let ids = vocab.featurize(&normalize(&word));
        // BOS, word, EOS
        let id = ids.unigrams[1];
        assert!(id >= n_uni && id < n_uni + buckets as u32);
        hist[(id - n_uni) as usize] += 1;
        drawn += 1;
    }
    let expected = n as f64 / buckets as f64;
    let chi2: f64 = hist.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // Upper 0.1% point of chi-squared with 63 degrees of freedom.
    assert!(chi2 < 103.4, "chi2 {chi2:.1} over {buckets} buckets");
}

#[test]
fn featurize_respects_position_budget() {
    let pairs = hand_corpus();
    let vocab = build_vocab(pairs.iter().cloned(), &VocabConfig { min_count: 1, ..Default::default() }).unwrap();
    let long = vec!["river"; 300].join(" ");
    let f = vocab.featurize_text(&long, 32);
    assert_eq!(f.unigrams.len(), 32);
    assert_eq!(f.bigrams.len(), 31);
    assert_eq!(f.unigrams[31], vocab.unigram_id(EOS).unwrap());
}

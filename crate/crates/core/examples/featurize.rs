//! Normalize a few texts, build a vocabulary from a small synthetic corpus
//! and show how known and unknown n-grams map to embedding rows.

use rsel::textpipe::synthetic::{SyntheticConfig, SyntheticCorpus};
use rsel::textpipe::{build_vocab, normalize, VocabConfig};

fn main() -> rsel::Result<()> {
    for raw in [
        "Hello, World! Call 0123456789 now.",
        "supercalifragilisticexpialidocious words get wildcarded",
    ] {
        println!("{raw:?}\n  -> {}", normalize(raw).join());
    }

    let corpus: Vec<_> = SyntheticCorpus::new(SyntheticConfig {
        n_topics: 10,
        pairs_per_topic: 50,
        ..Default::default()
    })
    .map(|(pair, _)| pair)
    .collect();
    let vocab = build_vocab(
        corpus.iter().cloned(),
        &VocabConfig {
            min_count: 3,
            oov_buckets: 100,
            ..Default::default()
        },
    )?;
    println!(
        "\nvocabulary: {} unigrams, {} bigrams, {} OOV buckets per table",
        vocab.unigrams().len(),
        vocab.bigrams().len(),
        vocab.oov_buckets()
    );

    let known = &corpus[0].input;
    let text = format!("{known} zzyzx");
    let features = vocab.featurize_text(&text, 128);
    println!("\n{text}");
    let norm = normalize(&text);
    for (token, row) in norm.tokens().iter().zip(&features.unigrams) {
        let kind = if (*row as usize) < vocab.unigrams().len() { "vocab" } else { "oov" };
        println!("  {token:<14} row {row:>5} ({kind})");
    }
    println!("  bigram rows: {:?}", features.bigrams);
    Ok(())
}

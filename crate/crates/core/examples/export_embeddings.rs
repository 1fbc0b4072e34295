//! Encode the inputs of a synthetic corpus and write `id, topic, values`
//! TSV rows for an external t-SNE or UMAP tool.
//!
//! `cargo run --release --example export_embeddings -- [out.tsv]`

use std::fmt::Write as _;

use rsel::encoder::{Encoder, EncoderConfig, Side};
use rsel::textpipe::synthetic::{SyntheticConfig, SyntheticCorpus};
use rsel::textpipe::{build_vocab, VocabConfig};
use rsel::training::{featurize_pairs, pretrain, TrainingConfig};

fn main() -> rsel::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/embeddings.tsv".into());
    let items: Vec<_> = SyntheticCorpus::new(SyntheticConfig {
        n_topics: 10,
        pairs_per_topic: 300,
        ..Default::default()
    })
    .collect();
    let pairs: Vec<_> = items.iter().map(|(p, _)| p.clone()).collect();
    let vocab = build_vocab(
        pairs.iter().cloned(),
        &VocabConfig {
            min_count: 3,
            oov_buckets: 500,
            ..Default::default()
        },
    )?;
    let config = EncoderConfig {
        embedding_dim: 16,
        hidden_layers: 1,
        hidden_width: 32,
        output_dim: 16,
        attn_dim: 8,
        max_positions: 32,
        ..Default::default()
    };
    let schedule = TrainingConfig {
        batch_size: 50,
        max_steps: 500,
        eval_every: 0,
        ..Default::default()
    };
    let train = featurize_pairs(&pairs, &vocab, config.max_positions);
    let encoder = pretrain(Encoder::new(config, &vocab, 0)?, &train, None, &schedule, &mut |_, _| Ok(()))?.encoder;

    let mut tsv = String::new();
    for (id, (pair, signature)) in items.iter().enumerate().take(1000) {
        let h = encoder.encode(&train[id].input, Side::Input)?;
        let _ = write!(tsv, "{id}\ttopic{}", signature.topic);
        for v in h {
            let _ = write!(tsv, "\t{v}");
        }
        tsv.push('\n');
        debug_assert_eq!(vocab.featurize_text(&pair.input, 32), train[id].input);
    }
    std::fs::write(&out, tsv)?;
    println!("wrote 1000 input encodings to {out}");
    Ok(())
}

//! Pretrain a small dual encoder on a synthetic corpus, logging held-out
//! R_100@1, and save the vocabulary and checkpoint.
//!
//! `cargo run --release --example pretrain_synthetic -- [steps] [out_dir]`

use std::path::PathBuf;

use rsel::encoder::{Encoder, EncoderConfig};
use rsel::eval::{make_candidate_sets, EvalConfig};
use rsel::textpipe::synthetic::{SyntheticConfig, SyntheticCorpus};
use rsel::textpipe::{build_vocab, VocabConfig};
use rsel::training::{featurize_pairs, pretrain, TrainingConfig, Validation};

fn main() -> rsel::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let out_dir = PathBuf::from(args.next().unwrap_or_else(|| "target/pretrain_synthetic".into()));
    std::fs::create_dir_all(&out_dir)?;

    let pairs: Vec<_> = SyntheticCorpus::new(SyntheticConfig::default()).map(|(p, _)| p).collect();
    let (valid, train) = pairs.split_at(1000);
    let vocab = build_vocab(
        train.iter().cloned(),
        &VocabConfig {
            min_count: 5,
            oov_buckets: 5000,
            ..Default::default()
        },
    )?;
    let config = EncoderConfig {
        embedding_dim: 32,
        hidden_layers: 1,
        hidden_width: 64,
        output_dim: 32,
        attn_dim: 16,
        max_positions: 32,
        ..Default::default()
    };
    let train_f = featurize_pairs(train, &vocab, config.max_positions);
    let sets = make_candidate_sets(valid, &EvalConfig::default())?;
    let validation = Validation {
        vocab: &vocab,
        sets: &sets,
        k: 1,
    };
    let schedule = TrainingConfig {
        batch_size: 100,
        max_steps: steps,
        eval_every: (steps / 10).max(1),
        ..Default::default()
    };
    let encoder = Encoder::new(config, &vocab, 0)?;
    let state = pretrain(encoder, &train_f, Some(&validation), &schedule, &mut |_, record| {
        println!("{}", record.to_json());
        Ok(())
    })?;

    vocab.save(out_dir.join("vocab.tsv"))?;
    state
        .encoder
        .to_checkpoint(&format!("steps = {steps}\n"))
        .save(out_dir.join("encoder.ckpt"))?;
    println!("saved to {}", out_dir.display());
    Ok(())
}

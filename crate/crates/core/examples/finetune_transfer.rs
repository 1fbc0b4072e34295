//! Source-to-target transfer on the synthetic benchmark: pretrain on 50K
//! source pairs, then compare no fine-tuning, training on the 1K target
//! pairs alone, direct fine-tuning and mixed fine-tuning.
//!
//! `cargo run --release --example finetune_transfer -- [seed] [pretrain_steps]`

use std::time::Instant;

use rsel::encoder::{Encoder, EncoderConfig};
use rsel::eval::{evaluate, make_candidate_sets, EncoderRanker, EvalConfig};
use rsel::textpipe::synthetic::{Domain, SyntheticConfig, SyntheticCorpus};
use rsel::textpipe::{build_vocab, DialoguePair, VocabConfig};
use rsel::training::{
    featurize_pairs, finetune, pretrain, FineTuneStrategy, FinetuneConfig, TrainingConfig, Validation,
};

fn corpus(domain: Domain, pairs_per_topic: usize, seed: u64) -> Vec<DialoguePair> {
    SyntheticCorpus::new(SyntheticConfig {
        pairs_per_topic,
        domain,
        seed,
        ..Default::default()
    })
    .map(|(p, _)| p)
    .collect()
}

fn main() -> rsel::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let seed = args.first().copied().unwrap_or(0);
    let pretrain_steps = args.get(1).copied().unwrap_or(3000);
    let started = Instant::now();

    let source = corpus(Domain::Source, 500, 3 * seed);
    let source_test = corpus(Domain::Source, 10, 3 * seed + 1);
    let target = corpus(Domain::Target, 10, 3 * seed);
    let target_valid = corpus(Domain::Target, 5, 3 * seed + 1);
    let target_test = corpus(Domain::Target, 10, 3 * seed + 2);

    let vocab = build_vocab(
        source.iter().cloned(),
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
    let max = config.max_positions;
    let eval = EvalConfig {
        seed,
        ..Default::default()
    };
    let valid_sets = make_candidate_sets(&target_valid, &eval)?;
    let validation = Validation {
        vocab: &vocab,
        sets: &valid_sets,
        k: 1,
    };
    let recall = |encoder: &Encoder<f32>, pairs: &[DialoguePair]| -> rsel::Result<f64> {
        Ok(evaluate(&mut EncoderRanker::new(encoder, &vocab), pairs, &eval, "")?.recall)
    };
    let quiet = &mut |_: &_, _: &_| Ok(());

    let train = TrainingConfig {
        batch_size: 100,
        max_steps: pretrain_steps,
        eval_every: 0,
        seed,
        ..Default::default()
    };
    let source_f = featurize_pairs(&source, &vocab, max);
    let target_f = featurize_pairs(&target, &vocab, max);
    let pretrained = pretrain(Encoder::new(config.clone(), &vocab, seed)?, &source_f, None, &train, quiet)?.encoder;
    println!("pretrained in {:.1?}", started.elapsed());

    let ft_train = TrainingConfig {
        max_steps: 3000,
        ..train.clone()
    };
    let direct = FinetuneConfig {
        strategy: FineTuneStrategy::Direct,
        eval_every: 50,
        ..Default::default()
    };
    let mixed = FinetuneConfig {
        strategy: FineTuneStrategy::Mixed,
        ..direct.clone()
    };
    let run = |start: Encoder<f32>, ft: &FinetuneConfig, source: Option<&[_]>| {
        finetune(start, &target_f, source, &validation, &ft_train, ft, &mut |_, _| Ok(()))
    };
    let target_only = run(Encoder::new(config.clone(), &vocab, seed + 1)?, &direct, None)?;
    let ft_direct = run(pretrained.clone(), &direct, None)?;
    let ft_mixed = run(pretrained.clone(), &mixed, Some(&source_f))?;

    println!("{:<12} {:>8} {:>8} {:>6}", "regime", "target", "source", "step");
    for (name, model, step) in [
        ("no-finetune", &pretrained, 0),
        ("target-only", &target_only.best, target_only.best_step),
        ("ft-direct", &ft_direct.best, ft_direct.best_step),
        ("ft-mixed", &ft_mixed.best, ft_mixed.best_step),
    ] {
        println!(
            "{name:<12} {:>8.3} {:>8.3} {step:>6}",
            recall(model, &target_test)?,
            recall(model, &source_test)?
        );
    }
    println!("total {:.1?}", started.elapsed());
    Ok(())
}

//! R_100@1 of the random and keyword rankers and a briefly trained encoder
//! on a synthetic test set, as a rankers-by-dataset table.

use rsel::baselines::{Bm25Params, KeywordRanker, KeywordScheme};
use rsel::encoder::{Encoder, EncoderConfig};
use rsel::eval::{evaluate, results_table, EncoderRanker, EvalConfig, RandomRanker, Ranker};
use rsel::textpipe::synthetic::{SyntheticConfig, SyntheticCorpus};
use rsel::textpipe::{build_vocab, DialoguePair, VocabConfig};
use rsel::training::{featurize_pairs, pretrain, TrainingConfig};

fn corpus(pairs_per_topic: usize, seed: u64) -> Vec<DialoguePair> {
    SyntheticCorpus::new(SyntheticConfig {
        pairs_per_topic,
        seed,
        ..Default::default()
    })
    .map(|(p, _)| p)
    .collect()
}

fn main() -> rsel::Result<()> {
    let train = corpus(100, 0);
    let test = corpus(10, 1);
    let vocab = build_vocab(
        train.iter().cloned(),
        &VocabConfig {
            min_count: 5,
            oov_buckets: 1000,
            ..Default::default()
        },
    )?;
    let config = EncoderConfig {
        embedding_dim: 32,
        hidden_layers: 1,
        hidden_width: 64,
        output_dim: 32,
        use_self_attention: false,
        max_positions: 32,
        ..Default::default()
    };
    let schedule = TrainingConfig {
        batch_size: 100,
        max_steps: 1000,
        eval_every: 0,
        ..Default::default()
    };
    let train_f = featurize_pairs(&train, &vocab, config.max_positions);
    let encoder = pretrain(Encoder::new(config, &vocab, 0)?, &train_f, None, &schedule, &mut |_, _| Ok(()))?.encoder;

    let eval = EvalConfig::default();
    let mut rankers: Vec<Box<dyn Ranker + '_>> = vec![
        Box::new(RandomRanker::new(0)),
        Box::new(KeywordRanker::new(KeywordScheme::TfIdf, false)?),
        Box::new(KeywordRanker::new(KeywordScheme::Bm25(Bm25Params::default()), false)?),
        Box::new(EncoderRanker::new(&encoder, &vocab)),
    ];
    let mut results = Vec::new();
    for ranker in &mut rankers {
        let result = evaluate(ranker.as_mut(), &test, &eval, "synthetic")?.without_ranks();
        println!("{}", result.to_json());
        results.push(result);
    }
    print!("\n{}", results_table(&results));
    Ok(())
}

//! Finite-difference check of the full encoder and in-batch loss, run in
//! `f64` on a model small enough to perturb every parameter.

use rsel::encoder::{Encoder, EncoderConfig};
use rsel::numerics::{grad_check, GradCheckOptions};
use rsel::textpipe::FeatureIds;
use rsel::training::batch_loss;

fn main() -> rsel::Result<()> {
    let config = EncoderConfig {
        embedding_dim: 8,
        hidden_layers: 1,
        hidden_width: 8,
        output_dim: 4,
        attn_dim: 4,
        max_positions: 8,
        ..Default::default()
    };
    let (uni_rows, bi_rows) = (12, 10);
    let text = |s: u32, n: u32| FeatureIds {
        unigrams: (0..n).map(|i| (i * 7 + s) % uni_rows).collect(),
        bigrams: (0..n - 1).map(|i| (i * 3 + s) % bi_rows).collect(),
    };
    let inputs: Vec<FeatureIds> = (0..4).map(|i| text(i, 3 + i)).collect();
    let responses: Vec<FeatureIds> = (0..4).map(|i| text(i + 5, 6 - i)).collect();

    for seed in 0..3 {
        let encoder = Encoder::<f64>::with_table_sizes(config.clone(), uni_rows as usize, bi_rows as usize, 0, seed)?;
        let mut store = encoder.store().clone();
        let report = grad_check(&mut store, &GradCheckOptions::default(), |s| {
            let mut e = Encoder::from_store(config.clone(), s.clone(), 0)?;
            let xs: Vec<&FeatureIds> = inputs.iter().collect();
            let ys: Vec<&FeatureIds> = responses.iter().collect();
            let (scores, trace) = e.forward_batch(&xs, &ys)?;
            let (loss, grad) = batch_loss(&scores, 0.8)?;
            e.backward_batch(&trace, &grad)?;
            *s = e.store().clone();
            Ok(loss)
        })?;
        println!(
            "seed {seed}: {} entries, max relative error {:.2e} (worst {:?})",
            report.entries_checked, report.max_rel_error, report.worst
        );
    }
    Ok(())
}

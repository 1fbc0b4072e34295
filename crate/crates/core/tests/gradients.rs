use rsel::encoder::{Activation, Encoder, EncoderConfig};
use rsel::numerics::{grad_check, GradCheckOptions, ParamStore};
use rsel::textpipe::FeatureIds;
use rsel::training::batch_loss;

fn base() -> EncoderConfig {
    EncoderConfig {
        embedding_dim: 8,
        hidden_layers: 2,
        hidden_width: 8,
        output_dim: 4,
        attn_dim: 4,
        max_positions: 8,
        activation: Activation::Swish,
        use_self_attention: true,
        use_bigrams: true,
        shared_towers: false,
    }
}

/// Worst relative error of the full loss gradient for a K=4 batch.
fn max_error(config: &EncoderConfig, seed: u64) -> f64 {
    let enc = Encoder::<f64>::with_table_sizes(config.clone(), 12, 10, 0, seed).unwrap();
    let mk = |s: u32, n: u32| FeatureIds {
        unigrams: (0..n).map(|i| (i * 7 + s) % 12).collect(),
        bigrams: if config.use_bigrams {
            (0..n - 1).map(|i| (i * 3 + s) % 10).collect()
        } else {
            Vec::new()
        },
    };
    let inputs: Vec<FeatureIds> = (0..4).map(|i| mk(i, 3 + i)).collect();
    let responses: Vec<FeatureIds> = (0..4).map(|i| mk(i + 5, 6 - i)).collect();
    let mut store: ParamStore<f64> = enc.store().clone();
    let r = grad_check(&mut store, &GradCheckOptions::default(), |s| {
        let mut e = Encoder::from_store(config.clone(), s.clone(), 0)?;
        let xi: Vec<&FeatureIds> = inputs.iter().collect();
        let yi: Vec<&FeatureIds> = responses.iter().collect();
        let (scores, trace) = e.forward_batch(&xi, &yi)?;
        let (loss, g) = batch_loss(&scores, 0.8)?;
        e.backward_batch(&trace, &g)?;
        *s = e.store().clone();
        Ok(loss)
    })
    .unwrap();
    assert!(r.entries_checked > 0);
    r.max_rel_error
}

fn assert_variant(config: EncoderConfig, seeds: std::ops::Range<u64>) {
    for seed in seeds {
        let err = max_error(&config, seed);
        assert!(err < 1e-4, "seed {seed}: relative error {err:.3e} for {config:?}");
    }
}

#[test]
fn full_encoder() {
    assert_variant(base(), 0..10);
}

#[test]
fn tanh_activation() {
    assert_variant(EncoderConfig { activation: Activation::Tanh, ..base() }, 0..3);
}

#[test]
fn without_attention() {
    assert_variant(EncoderConfig { use_self_attention: false, ..base() }, 0..3);
}

#[test]
fn without_bigrams() {
    assert_variant(EncoderConfig { use_bigrams: false, ..base() }, 0..3);
}

#[test]
fn shared_towers() {
    assert_variant(EncoderConfig { shared_towers: true, ..base() }, 0..3);
}

#[test]
fn single_hidden_layer() {
    assert_variant(EncoderConfig { hidden_layers: 1, ..base() }, 0..3);
}

//! Mini-batch SGD for the dual encoder: source pretraining and target
//! fine-tuning with early stopping.

mod loss;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{rank_queries, recall_at_k, CandidateSets, EncoderRanker};
use crate::textpipe::{DialoguePair, FeatureIds, Vocabulary};

pub use loss::{batch_loss, smoothed_target_row, target_entropy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: u64,
    pub decay_after: u64,
    pub smoothing_mass: f64,
    /// Multiplies embedding-table gradients by `K`, undoing the `1/K` loss
    /// averaging for the sparse rows.
    pub scale_embedding_grads_by_batch: bool,
    pub max_steps: u64,
    /// Validation period in steps; 0 disables periodic validation.
    pub eval_every: u64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            batch_size: 500,
            lr0: 0.03,
            decay_factor: 0.3,
            decay_every: 1_000_000,
            decay_after: 2_500_000,
            smoothing_mass: 0.8,
            scale_embedding_grads_by_batch: true,
            max_steps: 3_000_000,
            eval_every: 10_000,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::Config(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::Config("decay_every must be positive".into()));
        }
        if !(self.smoothing_mass > 0.5 && self.smoothing_mass <= 1.0) {
            return Err(Error::Config(format!(
                "smoothing_mass must lie in (0.5, 1], got {}",
                self.smoothing_mass
            )));
        }
        Ok(())
    }

    /// `lr0` until `decay_after`, then multiplied by `decay_factor` once
    /// immediately and again every `decay_every` steps.
    pub fn learning_rate(&self, step: u64) -> f64 {
        if step < self.decay_after {
            return self.lr0;
        }
        let drops = (step - self.decay_after) / self.decay_every + 1;
        self.lr0 * self.decay_factor.powf(drops as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FineTuneStrategy {
    /// Target pairs only.
    Direct,
    /// Every batch mixes in a fixed share of source pairs.
    Mixed,
}

impl std::str::FromStr for FineTuneStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "mixed" => Ok(Self::Mixed),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?}; expected direct or mixed"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub strategy: FineTuneStrategy,
    /// Percent of each batch drawn from the source corpus under `Mixed`.
    pub source_share_percent: u32,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: u64,
    /// Overrides `lr0` for fine-tuning; the schedule restarts at step 0.
    pub lr0: Option<f64>,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            strategy: FineTuneStrategy::Mixed,
            source_share_percent: 75,
            patience: 5,
            eval_every: 200,
            lr0: None,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.source_share_percent >= 100 {
            return Err(Error::Config(format!(
                "source share must be below 100%, got {}",
                self.source_share_percent
            )));
        }
        if self.patience == 0 || self.eval_every == 0 {
            return Err(Error::Config("patience and eval_every must be positive".into()));
        }
        Ok(())
    }

    /// Source pairs per batch of `k`.
    pub fn source_per_batch(&self, k: usize) -> usize {
        match self.strategy {
            FineTuneStrategy::Direct => 0,
            FineTuneStrategy::Mixed => {
                ((k as u64 * self.source_share_percent as u64 + 50) / 100) as usize
            }
        }
    }
}

/// A pair already mapped to table rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturizedPair {
    pub input: FeatureIds,
    pub response: FeatureIds,
}

pub fn featurize_pairs(pairs: &[DialoguePair], vocab: &Vocabulary, max_tokens: usize) -> Vec<FeaturizedPair> {
    pairs
        .iter()
        .map(|p| FeaturizedPair {
            input: vocab.featurize_text(&p.input, max_tokens),
            response: vocab.featurize_text(&p.response, max_tokens),
        })
        .collect()
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_recall: Option<f64>,
    pub wall_ms: u64,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

/// Held-out queries scored with `R_N@k` during training.
pub struct Validation<'a> {
    pub vocab: &'a Vocabulary,
    pub sets: &'a CandidateSets,
    pub k: usize,
}

impl Validation<'_> {
    pub fn recall(&self, encoder: &Encoder<f32>) -> Result<f64> {
        let mut ranker = EncoderRanker::new(encoder, self.vocab);
        recall_at_k(&rank_queries(&mut ranker, self.sets)?, self.k)
    }
}

/// Index stream over a corpus, reshuffled on every pass.
struct Shuffler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Shuffler {
    fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    /// `n` indices without repeats inside the draw (requires `n <= len`).
    fn draw(&mut self, n: usize, out: &mut Vec<usize>) {
        let start = out.len();
        while out.len() - start < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
                // A fresh pass may repeat an index already taken in this draw.
                let taken: Vec<usize> = out[start..].to_vec();
                let (front, back): (Vec<usize>, Vec<usize>) =
                    self.order.iter().partition(|i| !taken.contains(i));
                self.order = front.into_iter().chain(back).collect();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
    }
}

/// Mutable training state: the model plus its step counter.
pub struct TrainState {
    pub encoder: Encoder<f32>,
    pub step: u64,
    pub history: Vec<LogRecord>,
}

impl TrainState {
    pub fn new(encoder: Encoder<f32>) -> Self {
        Self {
            encoder,
            step: 0,
            history: Vec::new(),
        }
    }
}

/// One SGD step on a batch; returns the batch loss.
pub fn sgd_step(
    state: &mut TrainState,
    batch: &[&FeaturizedPair],
    config: &TrainingConfig,
    lr: f64,
) -> Result<f64> {
    if batch.len() != config.batch_size {
        return Err(Error::invalid(format!(
            "batch has {} pairs, expected K={}",
            batch.len(),
            config.batch_size
        )));
    }
    let inputs: Vec<&FeatureIds> = batch.iter().map(|p| &p.input).collect();
    let responses: Vec<&FeatureIds> = batch.iter().map(|p| &p.response).collect();
    let encoder = &mut state.encoder;
    encoder.store_mut().zero_grad();
    let (scores, trace) = encoder.forward_batch(&inputs, &responses)?;
    let (loss, grad) = batch_loss(&scores, config.smoothing_mass)?;
    if !loss.is_finite() || !scores.all_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            detail: format!(
                "loss {loss}, lr {lr}, scale {:.4}, batch {}",
                encoder.scale(),
                batch.len()
            ),
        });
    }
    encoder.backward_batch(&trace, &grad)?;
    if config.scale_embedding_grads_by_batch {
        let k = batch.len() as f32;
        for id in encoder.embedding_param_ids() {
            encoder.store_mut().get_mut(id).scale_grad(k);
        }
    }
    let lr32 = lr as f32;
    for p in encoder.store_mut().iter_mut() {
        p.sgd_update(lr32);
    }
    state.step += 1;
    Ok(loss)
}

/// Called after every validation; may write checkpoints.
pub type EvalHook<'h> = dyn FnMut(&TrainState, &LogRecord) -> Result<()> + 'h;

fn check_corpus(len: usize, needed: usize, what: &str) -> Result<()> {
    if len < needed {
        return Err(Error::InvalidArgument(format!(
            "{what} corpus has {len} pairs but each batch needs {needed}"
        )));
    }
    Ok(())
}

/// Trains on shuffled passes over `train` for `max_steps` steps.
pub fn pretrain(
    encoder: Encoder<f32>,
    train: &[FeaturizedPair],
    validation: Option<&Validation<'_>>,
    config: &TrainingConfig,
    on_eval: &mut EvalHook<'_>,
) -> Result<TrainState> {
    config.validate()?;
    check_corpus(train.len(), config.batch_size, "training")?;
    let mut state = TrainState::new(encoder);
    let mut shuffler = Shuffler::new(train.len(), config.seed);
    let started = Instant::now();
    let mut idx = Vec::with_capacity(config.batch_size);
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    while state.step < config.max_steps {
        idx.clear();
        shuffler.draw(config.batch_size, &mut idx);
        let batch: Vec<&FeaturizedPair> = idx.iter().map(|&i| &train[i]).collect();
        let lr = config.learning_rate(state.step);
        loss_sum += sgd_step(&mut state, &batch, config, lr)?;
        loss_n += 1;
        let last = state.step == config.max_steps;
        if (config.eval_every > 0 && state.step % config.eval_every == 0) || last {
            let val_recall = validation.map(|v| v.recall(&state.encoder)).transpose()?;
            let record = LogRecord {
                step: state.step,
                lr,
                train_loss: loss_sum / loss_n as f64,
                val_recall,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            loss_sum = 0.0;
            loss_n = 0;
            on_eval(&state, &record)?;
            state.history.push(record);
        }
    }
    Ok(state)
}

pub struct FinetuneOutcome {
    /// Parameters with the best validation recall (possibly the starting
    /// model).
    pub best: Encoder<f32>,
    pub best_recall: f64,
    pub best_step: u64,
    pub final_state: TrainState,
    pub stopped_early: bool,
}

/// Continues training a pretrained model on the target corpus, keeping the
/// parameters with the best target validation recall.
pub fn finetune(
    encoder: Encoder<f32>,
    target: &[FeaturizedPair],
    source: Option<&[FeaturizedPair]>,
    validation: &Validation<'_>,
    config: &TrainingConfig,
    ft: &FinetuneConfig,
    on_eval: &mut EvalHook<'_>,
) -> Result<FinetuneOutcome> {
    config.validate()?;
    ft.validate()?;
    let schedule = TrainingConfig {
        lr0: ft.lr0.unwrap_or(config.lr0),
        ..config.clone()
    };
    schedule.validate()?;
    let k = config.batch_size;
    let n_src = ft.source_per_batch(k);
    let n_tgt = k - n_src;
    let source = match (n_src, source) {
        (0, _) => &[][..],
        (_, Some(s)) => {
            check_corpus(s.len(), n_src, "source")?;
            s
        }
        (_, None) => {
            return Err(Error::InvalidArgument(
                "mixed fine-tuning needs the source corpus".into(),
            ))
        }
    };
    check_corpus(target.len(), n_tgt, "target")?;

    let mut state = TrainState::new(encoder);
    let mut tgt_shuffler = Shuffler::new(target.len(), config.seed);
    let mut src_shuffler = Shuffler::new(source.len(), config.seed ^ 0x5eed_5eed_5eed_5eed);
    let started = Instant::now();

    let mut best_recall = validation.recall(&state.encoder)?;
    let mut best = state.encoder.clone();
    let mut best_step = 0;
    let record = LogRecord {
        step: 0,
        lr: schedule.learning_rate(0),
        train_loss: f64::NAN,
        val_recall: Some(best_recall),
        wall_ms: 0,
    };
    on_eval(&state, &record)?;
    state.history.push(record);

    let mut stale = 0;
    let mut stopped_early = false;
    let (mut src_idx, mut tgt_idx) = (Vec::with_capacity(n_src), Vec::with_capacity(n_tgt));
    let mut loss_sum = 0.0;
    let mut loss_n = 0u64;
    while state.step < schedule.max_steps {
        src_idx.clear();
        tgt_idx.clear();
        src_shuffler.draw(n_src, &mut src_idx);
        tgt_shuffler.draw(n_tgt, &mut tgt_idx);
        let batch: Vec<&FeaturizedPair> = src_idx
            .iter()
            .map(|&i| &source[i])
            .chain(tgt_idx.iter().map(|&i| &target[i]))
            .collect();
        let lr = schedule.learning_rate(state.step);
        loss_sum += sgd_step(&mut state, &batch, &schedule, lr)?;
        loss_n += 1;
        if state.step % ft.eval_every == 0 {
            let recall = validation.recall(&state.encoder)?;
            let record = LogRecord {
                step: state.step,
                lr,
                train_loss: loss_sum / loss_n as f64,
                val_recall: Some(recall),
                wall_ms: started.elapsed().as_millis() as u64,
            };
            loss_sum = 0.0;
            loss_n = 0;
            on_eval(&state, &record)?;
            state.history.push(record);
            if recall > best_recall {
                best_recall = recall;
                best = state.encoder.clone();
                best_step = state.step;
                stale = 0;
            } else {
                stale += 1;
                if stale >= ft.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    Ok(FinetuneOutcome {
        best,
        best_recall,
        best_step,
        final_state: state,
        stopped_early,
    })
}

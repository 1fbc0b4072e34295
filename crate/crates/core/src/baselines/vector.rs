use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::ArtifactKind;
use crate::encoder::{cosine, Checkpoint, Encoder, Side};
use crate::error::{Error, Result};
use crate::eval::{ranked_order, Ranker};
use crate::numerics::{ops, Tensor};
use crate::textpipe::Vocabulary;
use crate::training::batch_loss;

/// Candidates `(id, cosine)` by descending cosine, ties by id.
pub fn sim_rank<V: AsRef<[f32]>>(query: &[f32], candidates: &[V]) -> Result<Vec<(usize, f64)>> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let scores = candidates
        .iter()
        .map(|c| cosine(query, c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ranked_order(&(0..candidates.len()).collect::<Vec<_>>(), &scores))
}

/// Linear response map `W + alpha I`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapParams {
    pub w: Tensor<f32>,
    pub alpha: f32,
}

impl MapParams {
    /// `W = 0`, `alpha = 1`: the identity map.
    pub fn identity(dim: usize) -> Self {
        Self {
            w: Tensor::zeros(vec![dim, dim]),
            alpha: 1.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    /// `(W + alpha I) · y`.
    pub fn apply(&self, y: &[f32]) -> Result<Vec<f64>> {
        let l = self.dim();
        if y.len() != l {
            return Err(Error::Shape {
                op: "map_apply",
                left: vec![l, l],
                right: vec![y.len()],
            });
        }
        Ok((0..l)
            .map(|i| {
                let row = self.w.row(i);
                let wy: f64 = row.iter().zip(y).map(|(&w, &v)| w as f64 * v as f64).sum();
                wy + self.alpha as f64 * y[i] as f64
            })
            .collect())
    }

    pub fn to_checkpoint(&self, meta: &str) -> Checkpoint {
        Checkpoint {
            kind: ArtifactKind::Map,
            vocab_fingerprint: 0,
            config: format!("{{\"dim\":{}}}", self.dim()),
            meta: meta.to_string(),
            tensors: vec![
                ("map.w".into(), self.w.clone()),
                ("map.alpha".into(), Tensor::vector(vec![self.alpha])),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let get = |name: &str| {
            ckpt.tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format("map checkpoint", format!("missing {name}")))
        };
        let w = get("map.w")?.clone();
        let alpha = get("map.alpha")?;
        if w.shape().len() != 2 || w.rows() != w.cols() || alpha.len() != 1 {
            return Err(Error::format("map checkpoint", "bad tensor shapes"));
        }
        if !w.all_finite() || !alpha.all_finite() {
            return Err(Error::format("map checkpoint", "non-finite values"));
        }
        Ok(Self {
            w,
            alpha: alpha.data()[0],
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint("").save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, ArtifactKind::Map)?)
    }
}

/// `cos(h_x, (W + alpha I) h_y)`.
pub fn map_score(hx: &[f32], hy: &[f32], params: &MapParams) -> Result<f64> {
    let mapped = params.apply(hy)?;
    if hx.len() != mapped.len() {
        return Err(Error::Shape {
            op: "map_score",
            left: vec![hx.len()],
            right: vec![mapped.len()],
        });
    }
    if mapped.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateEncoding);
    }
    let hx: Vec<f64> = hx.iter().map(|&v| v as f64).collect();
    cosine(&hx, &mapped)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapTrainConfig {
    pub sample_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 strength pulling `(W, alpha)` toward `(0, 1)`.
    pub regularization: f64,
    pub seed: u64,
}

impl Default for MapTrainConfig {
    fn default() -> Self {
        Self {
            sample_size: 10_000,
            batch_size: 50,
            epochs: 20,
            learning_rate: 1.0,
            regularization: 1e-4,
            seed: 0,
        }
    }
}

fn unit_rows(vectors: &[&[f32]]) -> Result<Tensor<f64>> {
    let l = vectors[0].len();
    let mut data = Vec::with_capacity(vectors.len() * l);
    for v in vectors {
        if v.len() != l {
            return Err(Error::Shape {
                op: "train_map",
                left: vec![l],
                right: vec![v.len()],
            });
        }
        data.extend(v.iter().map(|&x| x as f64));
    }
    Ok(ops::l2_normalize(&Tensor::matrix(vectors.len(), l, data)?)?.0)
}

/// Unregularized in-batch loss for the full map `m = W + alpha I`; adds
/// `d loss / d m` into `grads` when given.
fn map_batch_loss(
    x: &Tensor<f64>,
    y: &Tensor<f64>,
    m: &Tensor<f64>,
    grads: Option<&mut Tensor<f64>>,
) -> Result<f64> {
    // z_j = M y_j, so Z = Y M^T.
    let z = ops::matmul_nt(y, m)?;
    let (zn, norms) = ops::l2_normalize(&z)?;
    let cos = ops::matmul_nt(x, &zn)?;
    let (loss, g) = batch_loss(&cos, 1.0)?;
    if let Some(gm) = grads {
        let g_zn = ops::matmul_tn(&g, x)?;
        let g_z = ops::l2_normalize_backward(&zn, &norms, &g_zn);
        let g_m = ops::matmul_tn(&g_z, y)?;
        for (a, &b) in gm.data_mut().iter_mut().zip(g_m.data()) {
            *a += b;
        }
    }
    Ok(loss)
}

fn full_matrix(params: &MapParams) -> Tensor<f64> {
    let l = params.dim();
    let mut m: Tensor<f64> = params.w.cast();
    for i in 0..l {
        m.data_mut()[i * l + i] += params.alpha as f64;
    }
    m
}

/// Mean in-batch loss over consecutive batches of `batch_size`.
pub fn map_loss(pairs: &[(Vec<f32>, Vec<f32>)], params: &MapParams, batch_size: usize) -> Result<f64> {
    let m = full_matrix(params);
    let mut total = 0.0;
    let mut n = 0;
    for chunk in pairs.chunks(batch_size.max(2)) {
        if chunk.len() < 2 {
            continue;
        }
        let x = unit_rows(&chunk.iter().map(|p| p.0.as_slice()).collect::<Vec<_>>())?;
        let y = unit_rows(&chunk.iter().map(|p| p.1.as_slice()).collect::<Vec<_>>())?;
        total += map_batch_loss(&x, &y, &m, None)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("MAP loss needs at least 2 pairs"));
    }
    Ok(total / n as f64)
}

/// Fits `(W, alpha)` by SGD on the in-batch softmax loss over normalized
/// `(h_x, h_y)` pairs, starting from the identity map.
pub fn train_map(pairs: &[(Vec<f32>, Vec<f32>)], config: &MapTrainConfig) -> Result<MapParams> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "MAP needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    if config.batch_size < 2 || !(config.learning_rate > 0.0) || !(config.regularization >= 0.0) {
        return Err(Error::Config(
            "MAP needs batch_size >= 2, learning_rate > 0 and regularization >= 0".into(),
        ));
    }
    let l = pairs[0].0.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut chosen: Vec<usize> = if pairs.len() > config.sample_size {
        sample(&mut rng, pairs.len(), config.sample_size).into_vec()
    } else {
        (0..pairs.len()).collect()
    };
    chosen.sort_unstable();
    let xs = unit_rows(&chosen.iter().map(|&i| pairs[i].0.as_slice()).collect::<Vec<_>>())?;
    let ys = unit_rows(&chosen.iter().map(|&i| pairs[i].1.as_slice()).collect::<Vec<_>>())?;

    let mut w = Tensor::<f64>::zeros(vec![l, l]);
    let mut alpha = 1.0f64;
    let mut order: Vec<usize> = (0..chosen.len()).collect();
    let k = config.batch_size.min(chosen.len());
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(k) {
            if batch.len() < 2 {
                continue;
            }
            let pick = |t: &Tensor<f64>| {
                let data = batch.iter().flat_map(|&i| t.row(i).to_vec()).collect();
                Tensor::matrix(batch.len(), l, data)
            };
            let (x, y) = (pick(&xs)?, pick(&ys)?);
            let mut m = w.clone();
            for i in 0..l {
                m.data_mut()[i * l + i] += alpha;
            }
            let mut g_m = Tensor::<f64>::zeros(vec![l, l]);
            let loss = map_batch_loss(&x, &y, &m, Some(&mut g_m))?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: 0,
                    detail: "MAP training diverged".into(),
                });
            }
            // g_W = g_M and g_alpha = trace(g_M), plus the pull toward (0, 1).
            let g_alpha: f64 = (0..l).map(|i| g_m.data()[i * l + i]).sum::<f64>()
                + config.regularization * (alpha - 1.0);
            for (wv, &g) in w.data_mut().iter_mut().zip(g_m.data()) {
                *wv -= config.learning_rate * (g + config.regularization * *wv);
            }
            alpha -= config.learning_rate * g_alpha;
        }
    }
    Ok(MapParams {
        w: w.cast(),
        alpha: alpha as f32,
    })
}

/// Grid search over learning rate and regularization, selecting by mean
/// in-batch loss on a held-out dev split; returns the chosen parameters
/// with their `(learning_rate, regularization)`.
pub fn tune_map(
    pairs: &[(Vec<f32>, Vec<f32>)],
    base: &MapTrainConfig,
    learning_rates: &[f64],
    regularizations: &[f64],
    dev_fraction: f64,
) -> Result<(MapParams, f64, f64)> {
    let n_dev = ((pairs.len() as f64 * dev_fraction).round() as usize).clamp(2, pairs.len().saturating_sub(2));
    if pairs.len() < 4 {
        return Err(Error::InvalidArgument("tuning MAP needs at least 4 pairs".into()));
    }
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(base.seed ^ 0xd3f));
    let dev: Vec<_> = idx[..n_dev].iter().map(|&i| pairs[i].clone()).collect();
    let train: Vec<_> = idx[n_dev..].iter().map(|&i| pairs[i].clone()).collect();
    let mut best: Option<(f64, MapParams, f64, f64)> = None;
    for &lr in learning_rates {
        for &reg in regularizations {
            let cfg = MapTrainConfig {
                learning_rate: lr,
                regularization: reg,
                ..base.clone()
            };
            let params = match train_map(&train, &cfg) {
                Ok(p) => p,
                Err(Error::NonFiniteLoss { .. }) => continue,
                Err(e) => return Err(e),
            };
            let loss = map_loss(&dev, &params, base.batch_size)?;
            if best.as_ref().map_or(true, |b| loss < b.0) {
                best = Some((loss, params, lr, reg));
            }
        }
    }
    best.map(|(_, p, lr, reg)| (p, lr, reg))
        .ok_or_else(|| Error::Config("no MAP hyperparameter setting converged".into()))
}

/// Text to fixed-length vector for the vector baselines.
pub trait Embedder: Sync {
    fn embed(&self, text: &str, side: Side) -> Result<Vec<f32>>;
}

/// Embeds with a trained dual encoder: the input tower for inputs, the
/// response tower for responses.
pub struct EncoderEmbedder<'a> {
    pub encoder: &'a Encoder<f32>,
    pub vocab: &'a Vocabulary,
}

impl Embedder for EncoderEmbedder<'_> {
    fn embed(&self, text: &str, side: Side) -> Result<Vec<f32>> {
        let f = self.vocab.featurize_text(text, self.encoder.config().max_positions);
        self.encoder.encode(&f, side)
    }
}

/// SIM (plain cosine) or MAP (cosine after the learned response map).
pub struct VectorRanker<'a, E: Embedder> {
    embedder: &'a E,
    map: Option<MapParams>,
    pool: Vec<Vec<f32>>,
}

impl<'a, E: Embedder> VectorRanker<'a, E> {
    pub fn sim(embedder: &'a E) -> Self {
        Self {
            embedder,
            map: None,
            pool: Vec::new(),
        }
    }

    pub fn map(embedder: &'a E, params: MapParams) -> Self {
        Self {
            embedder,
            map: Some(params),
            pool: Vec::new(),
        }
    }
}

impl<E: Embedder> Ranker for VectorRanker<'_, E> {
    fn name(&self) -> String {
        if self.map.is_some() { "map" } else { "sim" }.into()
    }

    fn prepare(&mut self, pool: &[String]) -> Result<()> {
        self.pool = pool
            .iter()
            .map(|t| {
                let v = self.embedder.embed(t, Side::Response)?;
                match &self.map {
                    Some(m) => Ok(m.apply(&v)?.into_iter().map(|x| x as f32).collect()),
                    None => Ok(v),
                }
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn score(&self, input: &str, candidates: &[usize]) -> Result<Vec<f64>> {
        let hx = self.embedder.embed(input, Side::Input)?;
        candidates
            .iter()
            .map(|&c| cosine(&hx, &self.pool[c]))
            .collect()
    }
}

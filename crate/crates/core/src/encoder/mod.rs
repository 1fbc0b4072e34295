//! Dual encoder over unigram and bigram embeddings.
//!
//! Each side of a pair goes through the same pipeline:
//!
//! 1. per n-gram order: embedding lookup, learned positional embeddings,
//!    optional single-head self-attention, row sum divided by `sqrt(len)`;
//! 2. the order vectors are averaged;
//! 3. a feed-forward tower (`H` hidden layers, then a linear map to `l`).
//!
//! Embedding and positional tables are shared between sides; attention
//! projections and towers are per side unless `shared_towers` is set.
//! Pairs are scored by `C * cos(h_x, h_y)` with `C = sqrt(l) * sigmoid(s)`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::ops::{self, AttentionCache};
use crate::numerics::{ParamId, ParamStore, Scalar, Tensor};
use crate::textpipe::{FeatureIds, Vocabulary};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Swish,
    Tanh,
}

impl std::str::FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "swish" => Ok(Self::Swish),
            "tanh" => Ok(Self::Tanh),
            other => Err(Error::Config(format!("unknown activation {other}"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embedding_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
    pub attn_dim: usize,
    pub max_positions: usize,
    pub activation: Activation,
    pub use_self_attention: bool,
    pub use_bigrams: bool,
    pub shared_towers: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 320,
            hidden_layers: 3,
            hidden_width: 1024,
            output_dim: 512,
            attn_dim: 64,
            max_positions: 128,
            activation: Activation::Swish,
            use_self_attention: true,
            use_bigrams: true,
            shared_towers: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_width", self.hidden_width),
            ("output_dim", self.output_dim),
            ("attn_dim", self.attn_dim),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Input,
    Response,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::Input => 0,
            Side::Response => 1,
        }
    }
}

const ORDER_NAMES: [&str; 2] = ["uni", "bi"];

#[derive(Debug, Clone, Copy)]
struct AttnIds {
    q: ParamId,
    k: ParamId,
    v: ParamId,
}

#[derive(Debug, Clone)]
struct OrderIds {
    emb: ParamId,
    pos: ParamId,
    attn: [Option<AttnIds>; 2],
}

#[derive(Debug, Clone)]
struct TowerIds {
    hidden: Vec<(ParamId, ParamId)>,
    out: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
struct Layout {
    orders: Vec<OrderIds>,
    towers: [TowerIds; 2],
    scale_raw: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Zero,
    /// Uniform in `±1/sqrt(fan_in)`.
    Uniform { fan_in: usize },
    /// Uniform in `±0.1/sqrt(fan_in)`: near-uniform attention at start.
    Small { fan_in: usize },
    /// Square identity, so untrained attention averages the input rows.
    Identity,
}

/// Parameter names, shapes and initializers for a configuration and
/// vocabulary size.
fn param_specs(config: &EncoderConfig, uni_rows: usize, bi_rows: usize) -> Vec<(String, Vec<usize>, Init)> {
    use Init::*;
    let d = config.embedding_dim;
    let mut specs = Vec::new();
    let tables: &[(usize, &str)] = if config.use_bigrams {
        &[(0, "uni"), (1, "bi")]
    } else {
        &[(0, "uni")]
    };
    for &(order, name) in tables {
        let rows = if order == 0 { uni_rows } else { bi_rows };
        specs.push((format!("emb.{name}"), vec![rows, d], Uniform { fan_in: d }));
        specs.push((format!("pos.{name}"), vec![config.max_positions, d], Uniform { fan_in: d }));
    }
    let sides: &[&str] = if config.shared_towers {
        &["shared"]
    } else {
        &["input", "response"]
    };
    for side in sides {
        if config.use_self_attention {
            for &(_, order) in tables {
                specs.push((format!("attn.{side}.{order}.q"), vec![d, config.attn_dim], Small { fan_in: d }));
                specs.push((format!("attn.{side}.{order}.k"), vec![d, config.attn_dim], Small { fan_in: d }));
                specs.push((format!("attn.{side}.{order}.v"), vec![d, d], Identity));
            }
        }
        let mut fan_in = d;
        for i in 0..config.hidden_layers {
            specs.push((format!("tower.{side}.{i}.w"), vec![fan_in, config.hidden_width], Uniform { fan_in }));
            specs.push((format!("tower.{side}.{i}.b"), vec![config.hidden_width], Zero));
            fan_in = config.hidden_width;
        }
        specs.push((format!("tower.{side}.out.w"), vec![fan_in, config.output_dim], Uniform { fan_in }));
        specs.push((format!("tower.{side}.out.b"), vec![config.output_dim], Zero));
    }
    specs.push(("scale_raw".to_string(), vec![1], Zero));
    specs
}

fn is_sparse_table(name: &str) -> bool {
    name.starts_with("emb.") || name.starts_with("pos.")
}

/// Per-order intermediate values of one text's reduction.
#[derive(Debug, Clone)]
struct OrderTrace<T> {
    order: usize,
    ids: Vec<u32>,
    attention: Option<AttentionCache<T>>,
}

#[derive(Debug, Clone)]
struct ReduceTrace<T> {
    orders: Vec<OrderTrace<T>>,
}

#[derive(Debug, Clone)]
struct TowerTrace<T> {
    /// Inputs to each layer, the last one feeding the output layer.
    layer_inputs: Vec<Tensor<T>>,
    pre_activations: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
struct SideTrace<T> {
    reduces: Vec<ReduceTrace<T>>,
    tower: TowerTrace<T>,
    normalized: Tensor<T>,
    norms: Vec<f64>,
}

/// Everything the backward pass of a batch needs.
#[derive(Debug, Clone)]
pub struct BatchTrace<T> {
    sides: [SideTrace<T>; 2],
    cosines: Tensor<T>,
}

/// Dual encoder parameters plus architecture.
#[derive(Debug, Clone)]
pub struct Encoder<T: Scalar = f32> {
    config: EncoderConfig,
    store: ParamStore<T>,
    layout: Layout,
    vocab_fingerprint: u64,
}

impl<T: Scalar> Encoder<T> {
    /// Fresh parameters for `vocab`: weights uniform in `±1/sqrt(fan_in)`,
    /// attention value maps at identity, zero biases and `scale_raw = 0`.
    pub fn new(config: EncoderConfig, vocab: &Vocabulary, seed: u64) -> Result<Self> {
        Self::with_table_sizes(
            config,
            vocab.unigram_rows(),
            vocab.bigram_rows(),
            vocab.fingerprint(),
            seed,
        )
    }

    pub fn with_table_sizes(
        config: EncoderConfig,
        unigram_rows: usize,
        bigram_rows: usize,
        vocab_fingerprint: u64,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape, init) in param_specs(&config, unigram_rows, bigram_rows) {
            let count: usize = shape.iter().product();
            let data = match init {
                Init::Zero => vec![T::zero(); count],
                Init::Uniform { fan_in } | Init::Small { fan_in } => {
                    let gain = if matches!(init, Init::Small { .. }) { 0.1 } else { 1.0 };
                    let bound = gain / (fan_in as f64).sqrt();
                    (0..count)
                        .map(|_| T::of(rng.gen_range(-bound..bound)))
                        .collect()
                }
                Init::Identity => {
                    let n = shape[0];
                    (0..count)
                        .map(|i| if i / n == i % n { T::one() } else { T::zero() })
                        .collect()
                }
            };
            let tensor = Tensor::new(shape, data)?;
            if is_sparse_table(&name) {
                store.add_sparse(&name, tensor)?;
            } else {
                store.add(&name, tensor)?;
            }
        }
        Self::from_store(config, store, vocab_fingerprint)
    }

    /// Rebuilds an encoder from named tensors, checking names and shapes.
    pub fn from_store(config: EncoderConfig, store: ParamStore<T>, vocab_fingerprint: u64) -> Result<Self> {
        config.validate()?;
        let rows_of = |name: &str| store.id(name).map(|id| store.value(id).rows());
        let uni_rows = rows_of("emb.uni").ok_or_else(|| Error::format("encoder", "missing emb.uni"))?;
        let bi_rows = if config.use_bigrams {
            rows_of("emb.bi").ok_or_else(|| Error::format("encoder", "missing emb.bi"))?
        } else {
            0
        };
        let specs = param_specs(&config, uni_rows, bi_rows);
        if specs.len() != store.len() {
            return Err(Error::format(
                "encoder",
                format!("expected {} tensors, found {}", specs.len(), store.len()),
            ));
        }
        for (name, shape, _) in &specs {
            let id = store
                .id(name)
                .ok_or_else(|| Error::format("encoder", format!("missing tensor {name}")))?;
            store.value(id).expect_shape("encoder tensor", shape)?;
        }
        let id = |name: String| store.id(&name).expect("checked above");
        let side_names: [&str; 2] = if config.shared_towers {
            ["shared", "shared"]
        } else {
            ["input", "response"]
        };
        let n_orders = if config.use_bigrams { 2 } else { 1 };
        let orders = (0..n_orders)
            .map(|o| {
                let order = ORDER_NAMES[o];
                let attn = side_names.map(|side| {
                    config.use_self_attention.then(|| AttnIds {
                        q: id(format!("attn.{side}.{order}.q")),
                        k: id(format!("attn.{side}.{order}.k")),
                        v: id(format!("attn.{side}.{order}.v")),
                    })
                });
                OrderIds {
                    emb: id(format!("emb.{order}")),
                    pos: id(format!("pos.{order}")),
                    attn,
                }
            })
            .collect();
        let towers = side_names.map(|side| TowerIds {
            hidden: (0..config.hidden_layers)
                .map(|i| (id(format!("tower.{side}.{i}.w")), id(format!("tower.{side}.{i}.b"))))
                .collect(),
            out: (id(format!("tower.{side}.out.w")), id(format!("tower.{side}.out.b"))),
        });
        let layout = Layout {
            orders,
            towers,
            scale_raw: id("scale_raw".into()),
        };
        Ok(Self {
            config,
            store,
            layout,
            vocab_fingerprint,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        self.vocab_fingerprint
    }

    /// Unigram and bigram embedding tables.
    pub fn embedding_param_ids(&self) -> Vec<ParamId> {
        self.layout.orders.iter().map(|o| o.emb).collect()
    }

    /// Same parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Encoder<U> {
        Encoder::from_store(self.config.clone(), self.store.cast(), self.vocab_fingerprint)
            .expect("same layout")
    }

    fn sigmoid_scale(&self) -> f64 {
        let raw = self.store.value(self.layout.scale_raw).data()[0].to64();
        1.0 / (1.0 + (-raw).exp())
    }

    /// The learned score scale `C`, always inside `(0, sqrt(l))`.
    pub fn scale(&self) -> f64 {
        (self.config.output_dim as f64).sqrt() * self.sigmoid_scale()
    }

    fn order_ids<'a>(&self, features: &'a FeatureIds, order: usize) -> &'a [u32] {
        if order == 0 {
            &features.unigrams
        } else {
            &features.bigrams
        }
    }

    /// The reduction layer: per-order attention-and-sum, then the average.
    fn reduce(&self, features: &FeatureIds, side: Side, trace: bool) -> Result<(Vec<T>, Option<ReduceTrace<T>>)> {
        let mut vectors = Vec::with_capacity(2);
        let mut traces = Vec::new();
        for (o, order_ids) in self.layout.orders.iter().enumerate() {
            let ids = self.order_ids(features, o);
            if ids.is_empty() {
                continue;
            }
            if ids.len() > self.config.max_positions {
                return Err(Error::SequenceTooLong {
                    len: ids.len(),
                    max: self.config.max_positions,
                });
            }
            let emb = ops::embedding_gather(self.store.value(order_ids.emb), ids)?;
            let x = ops::add_positional(&emb, self.store.value(order_ids.pos))?;
            let (z, attention) = match &order_ids.attn[side.index()] {
                Some(a) => {
                    let (z, cache) = ops::single_head_attention(
                        &x,
                        self.store.value(a.q),
                        self.store.value(a.k),
                        self.store.value(a.v),
                    )?;
                    (z, Some(cache))
                }
                None => (x, None),
            };
            let summed = ops::sum_rows(&z)?;
            vectors.push(ops::scale_by(&summed, T::of(1.0 / (ids.len() as f64).sqrt())));
            if trace {
                traces.push(OrderTrace {
                    order: o,
                    ids: ids.to_vec(),
                    attention,
                });
            }
        }
        if vectors.is_empty() {
            return Err(Error::invalid("empty feature sequence"));
        }
        let refs: Vec<&[T]> = vectors.iter().map(Vec::as_slice).collect();
        let reduced = ops::mean(&refs)?;
        Ok((reduced, trace.then_some(ReduceTrace { orders: traces })))
    }

    fn reduce_backward(&mut self, trace: &ReduceTrace<T>, side: Side, grad: &[T]) -> Result<()> {
        let per_order = ops::mean_backward(grad, trace.orders.len());
        for ot in &trace.orders {
            let n = ot.ids.len();
            let g_sum = ops::scale_by_backward(&per_order, T::of(1.0 / (n as f64).sqrt()));
            let g_z = ops::sum_rows_backward(&g_sum, n);
            let ids = self.layout.orders[ot.order].clone();
            let g_x = match (&ids.attn[side.index()], &ot.attention) {
                (Some(a), Some(cache)) => {
                    let grads = ops::attention_backward(
                        cache,
                        &g_z,
                        self.store.value(a.q),
                        self.store.value(a.k),
                        self.store.value(a.v),
                    )?;
                    add_dense(&mut self.store, a.q, &grads.wq);
                    add_dense(&mut self.store, a.k, &grads.wk);
                    add_dense(&mut self.store, a.v, &grads.wv);
                    grads.x
                }
                _ => g_z,
            };
            ops::embedding_gather_backward(&g_x, &ot.ids, self.store.get_mut(ids.emb));
            ops::add_positional_backward(&g_x, self.store.get_mut(ids.pos));
        }
        Ok(())
    }

    fn activate(&self, pre: &Tensor<T>) -> Tensor<T> {
        match self.config.activation {
            Activation::Swish => ops::swish(pre, 1.0),
            Activation::Tanh => ops::tanh(pre),
        }
    }

    fn tower(&self, side: Side, x: Tensor<T>) -> Result<(Tensor<T>, TowerTrace<T>)> {
        let tower = &self.layout.towers[side.index()];
        let mut layer_inputs = Vec::with_capacity(tower.hidden.len() + 1);
        let mut pre_activations = Vec::with_capacity(tower.hidden.len());
        let mut h = x;
        for &(w, b) in &tower.hidden {
            let pre = ops::affine(&h, self.store.value(w), self.store.value(b))?;
            let next = self.activate(&pre);
            layer_inputs.push(h);
            pre_activations.push(pre);
            h = next;
        }
        let (w, b) = tower.out;
        let out = ops::affine(&h, self.store.value(w), self.store.value(b))?;
        layer_inputs.push(h);
        Ok((
            out,
            TowerTrace {
                layer_inputs,
                pre_activations,
            },
        ))
    }

    fn tower_backward(&mut self, side: Side, trace: &TowerTrace<T>, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let tower = self.layout.towers[side.index()].clone();
        let last_input = trace.layer_inputs.last().expect("output layer input");
        let (w, b) = tower.out;
        let (mut g, gw, gb) = ops::affine_backward(grad, last_input, self.store.value(w))?;
        add_dense(&mut self.store, w, &gw);
        add_dense(&mut self.store, b, &Tensor::vector(gb));
        for (i, &(w, b)) in tower.hidden.iter().enumerate().rev() {
            let pre = &trace.pre_activations[i];
            let g_pre = match self.config.activation {
                Activation::Swish => ops::swish_backward(pre, &g, 1.0),
                Activation::Tanh => ops::tanh_backward(&trace.layer_inputs[i + 1], &g),
            };
            let (gx, gw, gb) = ops::affine_backward(&g_pre, &trace.layer_inputs[i], self.store.value(w))?;
            add_dense(&mut self.store, w, &gw);
            add_dense(&mut self.store, b, &Tensor::vector(gb));
            g = gx;
        }
        Ok(g)
    }

    /// The 320-dim (embedding_dim) reduction of one text.
    pub fn embed_and_reduce(&self, features: &FeatureIds, side: Side) -> Result<Vec<T>> {
        Ok(self.reduce(features, side, false)?.0)
    }

    /// The `l`-dimensional encoding of one text.
    pub fn encode(&self, features: &FeatureIds, side: Side) -> Result<Vec<T>> {
        let r = self.embed_and_reduce(features, side)?;
        let x = Tensor::matrix(1, r.len(), r)?;
        Ok(self.tower(side, x)?.0.into_data())
    }

    /// Encodings of many texts as rows of a matrix.
    pub fn encode_batch(&self, features: &[&FeatureIds], side: Side) -> Result<Tensor<T>> {
        let d = self.config.embedding_dim;
        let mut data = Vec::with_capacity(features.len() * d);
        for f in features {
            data.extend(self.embed_and_reduce(f, side)?);
        }
        let x = Tensor::matrix(features.len(), d, data)?;
        Ok(self.tower(side, x)?.0)
    }

    /// Scaled cosine `C * cos(hx, hy)`.
    pub fn score(&self, hx: &[T], hy: &[T]) -> Result<f64> {
        if hx.len() != hy.len() {
            return Err(Error::Shape {
                op: "score",
                left: vec![hx.len()],
                right: vec![hy.len()],
            });
        }
        Ok(self.scale() * cosine(hx, hy)?)
    }

    /// `K×K` matrix of `C * cos(encode(x_i), encode(y_j))`.
    pub fn score_matrix(&self, inputs: &[&FeatureIds], responses: &[&FeatureIds]) -> Result<Tensor<T>> {
        let (nx, _) = ops::l2_normalize(&self.encode_batch(inputs, Side::Input)?)?;
        let (ny, _) = ops::l2_normalize(&self.encode_batch(responses, Side::Response)?)?;
        let mut s = ops::matmul_nt(&nx, &ny)?;
        let c = T::of(self.scale());
        s.data_mut().iter_mut().for_each(|v| *v *= c);
        Ok(s)
    }

    fn side_forward(&self, features: &[&FeatureIds], side: Side) -> Result<SideTrace<T>> {
        let d = self.config.embedding_dim;
        let mut data = Vec::with_capacity(features.len() * d);
        let mut reduces = Vec::with_capacity(features.len());
        for f in features {
            let (r, trace) = self.reduce(f, side, true)?;
            data.extend(r);
            reduces.push(trace.expect("trace requested"));
        }
        let x = Tensor::matrix(features.len(), d, data)?;
        let (h, tower) = self.tower(side, x)?;
        let (normalized, norms) = ops::l2_normalize(&h)?;
        Ok(SideTrace {
            reduces,
            tower,
            normalized,
            norms,
        })
    }

    /// Score matrix of a training batch together with its trace.
    pub fn forward_batch(
        &self,
        inputs: &[&FeatureIds],
        responses: &[&FeatureIds],
    ) -> Result<(Tensor<T>, BatchTrace<T>)> {
        if inputs.len() != responses.len() || inputs.is_empty() {
            return Err(Error::invalid(format!(
                "batch needs matching non-empty sides, got {} inputs and {} responses",
                inputs.len(),
                responses.len()
            )));
        }
        let sx = self.side_forward(inputs, Side::Input)?;
        let sy = self.side_forward(responses, Side::Response)?;
        let cosines = ops::matmul_nt(&sx.normalized, &sy.normalized)?;
        let mut scores = cosines.clone();
        let c = T::of(self.scale());
        scores.data_mut().iter_mut().for_each(|v| *v *= c);
        Ok((
            scores,
            BatchTrace {
                sides: [sx, sy],
                cosines,
            },
        ))
    }

    /// Accumulates parameter gradients given `d loss / d scores`.
    pub fn backward_batch(&mut self, trace: &BatchTrace<T>, grad_scores: &Tensor<T>) -> Result<()> {
        grad_scores.expect_shape("backward_batch", trace.cosines.shape())?;
        let sigma = self.sigmoid_scale();
        let c = (self.config.output_dim as f64).sqrt() * sigma;
        let g_c: f64 = grad_scores
            .data()
            .iter()
            .zip(trace.cosines.data())
            .map(|(&g, &u)| g.to64() * u.to64())
            .sum();
        let g_raw = g_c * (self.config.output_dim as f64).sqrt() * sigma * (1.0 - sigma);
        let scale_raw = self.layout.scale_raw;
        self.store
            .get_mut(scale_raw)
            .accumulate_row(0, &[T::of(g_raw)]);

        let mut g_cos = grad_scores.clone();
        let ct = T::of(c);
        g_cos.data_mut().iter_mut().for_each(|v| *v *= ct);
        let [sx, sy] = &trace.sides;
        let g_nx = ops::matmul(&g_cos, &sy.normalized)?;
        let g_ny = ops::matmul_tn(&g_cos, &sx.normalized)?;
        for (side, st, g_n) in [(Side::Input, sx, g_nx), (Side::Response, sy, g_ny)] {
            let g_h = ops::l2_normalize_backward(&st.normalized, &st.norms, &g_n);
            let g_r = self.tower_backward(side, &st.tower, &g_h)?;
            for (i, rt) in st.reduces.iter().enumerate() {
                self.reduce_backward(rt, side, g_r.row(i))?;
            }
        }
        Ok(())
    }
}

impl Encoder<f32> {
    /// Serializes into a checkpoint; `meta` records the effective run config.
    pub fn to_checkpoint(&self, meta: &str) -> Checkpoint {
        Checkpoint::from_encoder(self, meta)
    }

    /// Loads against `vocab`, rejecting a fingerprint mismatch.
    pub fn from_checkpoint(checkpoint: &Checkpoint, vocab: &Vocabulary) -> Result<Self> {
        let expected = vocab.fingerprint();
        if checkpoint.vocab_fingerprint != expected {
            return Err(Error::FingerprintMismatch {
                expected,
                found: checkpoint.vocab_fingerprint,
            });
        }
        checkpoint.to_encoder()
    }
}

fn add_dense<T: Scalar>(store: &mut ParamStore<T>, id: ParamId, grad: &Tensor<T>) {
    for (dst, &g) in store.get_mut(id).grad_mut().data_mut().iter_mut().zip(grad.data()) {
        *dst += g;
    }
}

/// Cosine similarity with `f64` accumulation.
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.to64(), y.to64());
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::DegenerateEncoding);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(attention: bool, bigrams: bool) -> EncoderConfig {
        EncoderConfig {
            embedding_dim: 4,
            hidden_layers: 1,
            hidden_width: 5,
            output_dim: 3,
            attn_dim: 2,
            max_positions: 8,
            activation: Activation::Swish,
            use_self_attention: attention,
            use_bigrams: bigrams,
            shared_towers: false,
        }
    }

    fn encoder(config: EncoderConfig) -> Encoder<f64> {
        Encoder::with_table_sizes(config, 10, 12, 0, 1).unwrap()
    }

    #[test]
    fn length_one_without_attention_is_embedding_plus_position() {
        let enc = encoder(tiny(false, false));
        let f = FeatureIds {
            unigrams: vec![7],
            bigrams: vec![],
        };
        let r = enc.embed_and_reduce(&f, Side::Input).unwrap();
        let emb = enc.store.value(enc.store.id("emb.uni").unwrap());
        let pos = enc.store.value(enc.store.id("pos.uni").unwrap());
        for j in 0..4 {
            assert!((r[j] - (emb.row(7)[j] + pos.row(0)[j])).abs() < 1e-15);
        }
    }

    #[test]
    fn length_four_sum_over_sqrt_len() {
        let enc = encoder(tiny(false, false));
        let ids = vec![1u32, 4, 4, 9];
        let f = FeatureIds {
            unigrams: ids.clone(),
            bigrams: vec![],
        };
        let r = enc.embed_and_reduce(&f, Side::Response).unwrap();
        let emb = enc.store.value(enc.store.id("emb.uni").unwrap());
        let pos = enc.store.value(enc.store.id("pos.uni").unwrap());
        for j in 0..4 {
            let mut s = 0.0;
            for (p, &id) in ids.iter().enumerate() {
                s += emb.row(id as usize)[j] + pos.row(p)[j];
            }
            assert!((r[j] - s / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_overlong_sequences() {
        let enc = encoder(tiny(true, true));
        let f = FeatureIds {
            unigrams: vec![0; 9],
            bigrams: vec![0; 8],
        };
        assert!(matches!(
            enc.encode(&f, Side::Input),
            Err(Error::SequenceTooLong { len: 9, max: 8 })
        ));
    }

    #[test]
    fn zero_hidden_layers_is_linear() {
        let mut config = tiny(false, false);
        config.hidden_layers = 0;
        let enc = encoder(config);
        let f = FeatureIds {
            unigrams: vec![1, 2],
            bigrams: vec![],
        };
        let r = enc.embed_and_reduce(&f, Side::Input).unwrap();
        let h = enc.encode(&f, Side::Input).unwrap();
        let w = enc.store.value(enc.store.id("tower.input.out.w").unwrap());
        for j in 0..3 {
            let expect: f64 = (0..4).map(|i| r[i] * w.row(i)[j]).sum();
            assert!((h[j] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn sides_use_separate_towers() {
        let enc = encoder(tiny(true, true));
        let f = FeatureIds {
            unigrams: vec![1, 2, 3],
            bigrams: vec![4, 5],
        };
        let hx = enc.encode(&f, Side::Input).unwrap();
        let hy = enc.encode(&f, Side::Response).unwrap();
        assert_ne!(hx, hy);
        assert_eq!(hx, enc.encode(&f, Side::Input).unwrap());
    }

    #[test]
    fn score_bounds_and_signs() {
        let enc = encoder(tiny(true, true));
        let c = enc.scale();
        assert!((c - 3f64.sqrt() / 2.0).abs() < 1e-12);
        let v = [0.3, -1.2, 2.0];
        let neg = [-0.3, 1.2, -2.0];
        assert!((enc.score(&v, &v).unwrap() - c).abs() < 1e-12);
        assert!((enc.score(&v, &neg).unwrap() + c).abs() < 1e-12);
        assert!(enc.score(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap().abs() < 1e-6);
        assert!(matches!(
            enc.score(&v, &[0.0; 3]),
            Err(Error::DegenerateEncoding)
        ));
    }

    #[test]
    fn ablation_flags_remove_parameters() {
        let full = encoder(tiny(true, true));
        let no_bi = encoder(tiny(true, false));
        let no_attn = encoder(tiny(false, true));
        let names = |e: &Encoder<f64>| e.store.iter().map(|p| p.name().to_string()).collect::<Vec<_>>();
        assert!(names(&no_bi).iter().all(|n| !n.contains("bi")));
        assert!(names(&no_attn).iter().all(|n| !n.starts_with("attn.")));
        let d = 4;
        let attn_per_side_order = d * 2 + d * 2 + d * d;
        assert_eq!(
            full.store.num_scalars() - no_attn.store.num_scalars(),
            2 * 2 * attn_per_side_order
        );
        // bigram table, bigram positions, bigram attention for both sides
        assert_eq!(
            full.store.num_scalars() - no_bi.store.num_scalars(),
            12 * d + 8 * d + 2 * attn_per_side_order
        );
    }

    #[test]
    fn shared_towers_reuse_parameters() {
        let mut config = tiny(true, true);
        config.shared_towers = true;
        let enc = encoder(config);
        let f = FeatureIds {
            unigrams: vec![1, 2, 3],
            bigrams: vec![4, 5],
        };
        assert_eq!(
            enc.encode(&f, Side::Input).unwrap(),
            enc.encode(&f, Side::Response).unwrap()
        );
    }
}

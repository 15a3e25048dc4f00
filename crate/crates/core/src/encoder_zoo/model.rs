use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{EncoderConfig, EncoderError, Variant};
use crate::tensor_core::ops::MASK_NEG;
use crate::tensor_core::{Graph, Scalar, Tensor, Var};
use crate::text_pipeline::TokenSequence;

const INIT_STD: f64 = 0.02;
const LN_EPS: f64 = 1e-5;

pub const TOKEN_EMBEDDING: &str = "embeddings.token";
pub const POSITION_EMBEDDING: &str = "embeddings.position";
pub const EMBEDDING_PROJECTION: &str = "embeddings.projection";
pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";
pub const SHARED_BLOCK: &str = "shared";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Parameter-name prefix of the block applied at `layer`.
pub fn block_prefix(config: &EncoderConfig, layer: usize) -> String {
    match config.variant {
        Variant::SharedLayers => SHARED_BLOCK.to_string(),
        _ => format!("layers.{layer}"),
    }
}

fn block_inventory(config: &EncoderConfig, prefix: &str, out: &mut Vec<(String, Vec<usize>, Init)>) {
    let (h, f) = (config.hidden, config.ffn_dim);
    let mut add = |name: &str, shape: Vec<usize>, init| out.push((format!("{prefix}.{name}"), shape, init));
    for proj in ["query", "key", "value", "output"] {
        add(&format!("attn.{proj}.weight"), vec![h, h], Init::Normal);
        add(&format!("attn.{proj}.bias"), vec![h], Init::Zeros);
    }
    if config.variant == Variant::RelativePosition {
        let span = 2 * config.max_relative_distance() + 1;
        add("attn.relative_bias", vec![config.heads, span], Init::Normal);
    }
    add("attn.norm.gamma", vec![h], Init::Ones);
    add("attn.norm.beta", vec![h], Init::Zeros);
    add("ffn.input.weight", vec![h, f], Init::Normal);
    add("ffn.input.bias", vec![f], Init::Zeros);
    add("ffn.output.weight", vec![f, h], Init::Normal);
    add("ffn.output.bias", vec![h], Init::Zeros);
    add("ffn.norm.gamma", vec![h], Init::Ones);
    add("ffn.norm.beta", vec![h], Init::Zeros);
}

/// Every parameter the config requires, in initialization order.
pub fn parameter_inventory(config: &EncoderConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let width = config.token_width();
    out.push((
        TOKEN_EMBEDDING.to_string(),
        vec![config.vocab_size, width],
        Init::Normal,
    ));
    match config.variant {
        Variant::Standard => {
            out.push((
                POSITION_EMBEDDING.to_string(),
                vec![config.max_length, width],
                Init::Normal,
            ));
        }
        Variant::RelativePosition => {}
        Variant::SharedLayers => {
            out.push((
                POSITION_EMBEDDING.to_string(),
                vec![config.max_length, width],
                Init::Normal,
            ));
            out.push((
                EMBEDDING_PROJECTION.to_string(),
                vec![width, config.hidden],
                Init::Normal,
            ));
        }
    }
    let blocks = match config.variant {
        Variant::SharedLayers => 1,
        _ => config.num_layers,
    };
    for layer in 0..blocks {
        block_inventory(config, &block_prefix(config, layer), &mut out);
    }
    out.push((
        CLASSIFIER_WEIGHT.to_string(),
        vec![config.hidden, config.num_classes],
        Init::Normal,
    ));
    out.push((CLASSIFIER_BIAS.to_string(), vec![config.num_classes], Init::Zeros));
    out
}

/// Named parameter tensors of one encoder classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters<T> {
    pub config: EncoderConfig,
    pub params: BTreeMap<String, Tensor<T>>,
    /// Hash of the vocabulary the model was trained against, if recorded.
    pub vocab_hash: Option<String>,
}

fn truncated_normal(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

pub fn build_encoder<T: Scalar>(config: &EncoderConfig) -> Result<ModelParameters<T>, EncoderError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let params = parameter_inventory(config)
        .into_iter()
        .map(|(name, shape, init)| {
            let tensor = match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::ones(shape),
                Init::Normal => {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|_| T::lit(truncated_normal(&mut rng, &normal))).collect();
                    Tensor::new(shape, data).expect("inventory shape")
                }
            };
            (name, tensor)
        })
        .collect();
    Ok(ModelParameters {
        config: config.clone(),
        params,
        vocab_hash: None,
    })
}

impl<T: Scalar> ModelParameters<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>, EncoderError> {
        self.params
            .get(name)
            .ok_or_else(|| EncoderError::MissingParam(name.to_string()))
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Token table plus, for the factorized variant, its projection.
    pub fn token_embedding_param_count(&self) -> usize {
        [TOKEN_EMBEDDING, EMBEDDING_PROJECTION]
            .iter()
            .filter_map(|n| self.params.get(*n))
            .map(Tensor::len)
            .sum()
    }

    /// Scalars in the block applied at `layer`.
    pub fn block_param_count(&self, layer: usize) -> usize {
        let prefix = format!("{}.", block_prefix(&self.config, layer));
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(&prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Checks names and shapes against the config's inventory.
    pub fn check_inventory(&self) -> Result<(), EncoderError> {
        let inventory = parameter_inventory(&self.config);
        if inventory.len() != self.params.len() {
            return Err(EncoderError::CorruptCheckpoint(format!(
                "expected {} parameters, found {}",
                inventory.len(),
                self.params.len()
            )));
        }
        for (name, shape, _) in inventory {
            let t = self
                .params
                .get(&name)
                .ok_or_else(|| EncoderError::CorruptCheckpoint(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(EncoderError::CorruptCheckpoint(format!("shape mismatch for {name}")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ModelParameters<U> {
        ModelParameters {
            config: self.config.clone(),
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
            vocab_hash: self.vocab_hash.clone(),
        }
    }

    /// Registers every parameter as a named leaf of `graph`.
    pub fn register(&self, graph: &mut Graph<T>, trainable: bool) -> ParamVars {
        ParamVars(
            self.params
                .iter()
                .map(|(name, t)| {
                    (
                        name.clone(),
                        graph.param(name.clone(), t.clone().with_requires_grad(trainable)),
                    )
                })
                .collect(),
        )
    }
}

/// Graph handles of a model's parameters.
#[derive(Debug, Clone)]
pub struct ParamVars(BTreeMap<String, Var>);

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var, EncoderError> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| EncoderError::MissingParam(name.to_string()))
    }
}

/// Raw class scores, `[B × 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits<T> {
    pub values: Tensor<T>,
}

impl<T: Scalar> Logits<T> {
    pub fn batch_size(&self) -> usize {
        self.values.shape().first().copied().unwrap_or(0)
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.values.data().chunks(self.values.last_dim().max(1))
    }
}

fn validate_batch(config: &EncoderConfig, batch: &[TokenSequence]) -> Result<(), EncoderError> {
    if batch.is_empty() {
        return Err(EncoderError::EmptyBatch);
    }
    for (i, seq) in batch.iter().enumerate() {
        if seq.ids.len() != config.max_length || seq.mask.len() != config.max_length {
            return Err(EncoderError::BadSequenceLength {
                index: i,
                expected: config.max_length,
                got: seq.ids.len(),
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id >= config.vocab_size) {
            return Err(EncoderError::IdOutOfVocab { index: i, id });
        }
    }
    Ok(())
}

/// `[T×T]` additive mask: key positions with mask 0 get a large negative logit.
fn attention_mask<T: Scalar>(seq: &TokenSequence) -> Tensor<T> {
    let t = seq.mask.len();
    let row: Vec<T> = seq
        .mask
        .iter()
        .map(|&m| if m == 1 { T::zero() } else { T::lit(MASK_NEG) })
        .collect();
    let data = (0..t).flat_map(|_| row.iter().copied()).collect();
    Tensor::new(vec![t, t], data).expect("square mask")
}

fn relative_index(config: &EncoderConfig, head: usize) -> Vec<usize> {
    let t = config.max_length;
    let k = config.max_relative_distance() as isize;
    let span = (2 * k + 1) as usize;
    let mut idx = Vec::with_capacity(t * t);
    for i in 0..t as isize {
        for j in 0..t as isize {
            let offset = (j - i).clamp(-k, k) + k;
            idx.push(head * span + offset as usize);
        }
    }
    idx
}

fn linear<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, x: Var, prefix: &str) -> Result<Var, EncoderError> {
    let w = p.get(&format!("{prefix}.weight"))?;
    let b = p.get(&format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

struct BlockInput<'a> {
    masks: &'a [Var],
    relative: &'a [Vec<usize>],
    batch: usize,
}

fn block<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    config: &EncoderConfig,
    input: &BlockInput<'_>,
    x: Var,
    prefix: &str,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var, EncoderError> {
    let t = config.max_length;
    let dh = config.head_dim();
    let q = linear(g, p, x, &format!("{prefix}.attn.query"))?;
    let k = linear(g, p, x, &format!("{prefix}.attn.key"))?;
    let v = linear(g, p, x, &format!("{prefix}.attn.value"))?;
    let rel_table = match config.variant {
        Variant::RelativePosition => Some(p.get(&format!("{prefix}.attn.relative_bias"))?),
        _ => None,
    };
    let scale = T::lit(1.0 / (dh as f64).sqrt());

    let mut rel_bias = Vec::new();
    if let Some(table) = rel_table {
        for idx in input.relative {
            rel_bias.push(g.gather(table, idx, vec![t, t])?);
        }
    }

    let mut sequences = Vec::with_capacity(input.batch);
    for b in 0..input.batch {
        let mut heads = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let qh = g.slice(q, b * t, t, h * dh, dh)?;
            let kh = g.slice(k, b * t, t, h * dh, dh)?;
            let vh = g.slice(v, b * t, t, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let mut scores = g.scale(scores, scale);
            if let Some(&bias) = rel_bias.get(h) {
                scores = g.add(scores, bias)?;
            }
            let scores = g.add(scores, input.masks[b])?;
            let weights = g.softmax(scores);
            heads.push(g.matmul(weights, vh)?);
        }
        sequences.push(g.concat_cols(&heads)?);
    }
    let context = g.concat_rows(&sequences)?;
    let attn = linear(g, p, context, &format!("{prefix}.attn.output"))?;
    let attn = dropout(g, attn, config.dropout, rng)?;
    let x = g.add(x, attn)?;
    let x = layer_norm(g, p, x, &format!("{prefix}.attn.norm"))?;

    let hidden = linear(g, p, x, &format!("{prefix}.ffn.input"))?;
    let hidden = g.gelu(hidden);
    let out = linear(g, p, hidden, &format!("{prefix}.ffn.output"))?;
    let out = dropout(g, out, config.dropout, rng)?;
    let x2 = g.add(x, out)?;
    layer_norm(g, p, x2, &format!("{prefix}.ffn.norm"))
}

fn layer_norm<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, x: Var, prefix: &str) -> Result<Var, EncoderError> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    Ok(g.layer_norm(x, gamma, beta, T::lit(LN_EPS))?)
}

fn dropout<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var, EncoderError> {
    match rng {
        Some(r) if rate > 0.0 => Ok(g.dropout(x, rate, *r)?),
        _ => Ok(x),
    }
}

/// Records the classifier forward pass into `g` and returns the `[B×2]`
/// logits node. Dropout is applied only when `rng` is given.
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    config: &EncoderConfig,
    batch: &[TokenSequence],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, EncoderError> {
    validate_batch(config, batch)?;
    let t = config.max_length;
    let ids: Vec<usize> = batch.iter().flat_map(|s| s.ids.iter().copied()).collect();

    let table = p.get(TOKEN_EMBEDDING)?;
    let mut x = g.gather_rows(table, &ids)?;
    if config.variant != Variant::RelativePosition {
        let positions: Vec<usize> = (0..batch.len()).flat_map(|_| 0..t).collect();
        let pos_table = p.get(POSITION_EMBEDDING)?;
        let pos = g.gather_rows(pos_table, &positions)?;
        x = g.add(x, pos)?;
    }
    if config.variant == Variant::SharedLayers {
        let proj = p.get(EMBEDDING_PROJECTION)?;
        x = g.matmul(x, proj)?;
    }
    x = dropout(g, x, config.dropout, &mut rng)?;

    let masks: Vec<Var> = batch.iter().map(|s| g.constant(attention_mask(s))).collect();
    let relative: Vec<Vec<usize>> = match config.variant {
        Variant::RelativePosition => (0..config.heads).map(|h| relative_index(config, h)).collect(),
        _ => Vec::new(),
    };
    let input = BlockInput {
        masks: &masks,
        relative: &relative,
        batch: batch.len(),
    };
    for layer in 0..config.num_layers {
        x = block(g, p, config, &input, x, &block_prefix(config, layer), &mut rng)?;
    }

    let cls_rows: Vec<usize> = (0..batch.len()).map(|b| b * t).collect();
    let cls = g.gather_rows(x, &cls_rows)?;
    let w = p.get(CLASSIFIER_WEIGHT)?;
    let bias = p.get(CLASSIFIER_BIAS)?;
    let logits = g.matmul(cls, w)?;
    Ok(g.add_row(logits, bias)?)
}

/// Inference-only forward pass.
pub fn forward<T: Scalar>(model: &ModelParameters<T>, batch: &[TokenSequence]) -> Result<Logits<T>, EncoderError> {
    let mut g = Graph::new();
    let p = model.register(&mut g, false);
    let out = forward_graph(&mut g, &p, &model.config, batch, None)?;
    Ok(Logits {
        values: g.value(out).clone(),
    })
}

/// Applies the block used at `layer` to a `[T×H]` hidden state of a single
/// unpadded sequence. Exposed for weight-tying checks.
pub fn apply_block<T: Scalar>(
    model: &ModelParameters<T>,
    layer: usize,
    hidden: &Tensor<T>,
) -> Result<Tensor<T>, EncoderError> {
    let config = &model.config;
    let mut g = Graph::new();
    let p = model.register(&mut g, false);
    let x = g.constant(hidden.clone());
    let seq = TokenSequence {
        ids: vec![0; config.max_length],
        mask: vec![1; config.max_length],
        original_length: config.max_length,
    };
    let masks = [g.constant(attention_mask(&seq))];
    let relative: Vec<Vec<usize>> = match config.variant {
        Variant::RelativePosition => (0..config.heads).map(|h| relative_index(config, h)).collect(),
        _ => Vec::new(),
    };
    let input = BlockInput {
        masks: &masks,
        relative: &relative,
        batch: 1,
    };
    let out = block(&mut g, &p, config, &input, x, &block_prefix(config, layer), &mut None)?;
    Ok(g.value(out).clone())
}

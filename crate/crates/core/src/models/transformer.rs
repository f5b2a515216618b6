use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Batch, Classifier, ModelConfig, ModelError, NormPlacement};
use crate::lego::TokenizedExample;
use crate::tensor::{Element, ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-12;
/// Examples per forward pass when scoring without gradients.
const EVAL_CHUNK: usize = 256;

type Affine = (ParamId, ParamId);

#[derive(Debug, Clone, PartialEq)]
struct Block {
    norm1: Affine,
    query: Affine,
    key: Affine,
    value: Affine,
    out: Affine,
    norm2: Affine,
    ff_in: Affine,
    ff_out: Affine,
}

/// Encoder classifier with learned absolute positions and a per-token head.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerModel<E> {
    config: ModelConfig,
    params: ParamStore<E>,
    token: ParamId,
    position: ParamId,
    embed_norm: Affine,
    blocks: Vec<Block>,
    final_norm: Option<Affine>,
    head: Affine,
}

/// Result of one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `[size * len, num_classes]`
    pub logits: Var,
    /// Per layer `[size, heads, len, len]`, when captured.
    pub attention: Vec<Var>,
}

/// Puts each parameter on the tape once per forward pass.
struct Binder<'a, E> {
    params: &'a ParamStore<E>,
    bound: Vec<Option<Var>>,
    track: bool,
}

impl<E: Element> Binder<'_, E> {
    fn get(&mut self, tape: &mut Tape<E>, id: ParamId) -> Var {
        let (params, track) = (self.params, self.track);
        *self.bound[id.0].get_or_insert_with(|| {
            if track {
                tape.param(params, id)
            } else {
                tape.constant(params.value(id).clone())
            }
        })
    }

    fn linear(&mut self, tape: &mut Tape<E>, x: Var, (w, b): Affine) -> Result<Var, ModelError> {
        let (w, b) = (self.get(tape, w), self.get(tape, b));
        let y = tape.matmul(x, w)?;
        Ok(tape.add_bias(y, b)?)
    }

    fn norm(&mut self, tape: &mut Tape<E>, x: Var, (g, b): Affine) -> Result<Var, ModelError> {
        let (g, b) = (self.get(tape, g), self.get(tape, b));
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Attention weights of one example, `[layers, heads, len, len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    pub layers: usize,
    pub heads: usize,
    pub len: usize,
    pub weights: Vec<f64>,
    /// Canonical clause of each token, `None` for separators.
    pub clause_index: Vec<Option<usize>>,
}

impl AttentionRecord {
    pub fn get(&self, layer: usize, head: usize, query: usize, key: usize) -> f64 {
        self.weights[((layer * self.heads + head) * self.len + query) * self.len + key]
    }

    pub fn row(&self, layer: usize, head: usize, query: usize) -> &[f64] {
        let start = ((layer * self.heads + head) * self.len + query) * self.len;
        &self.weights[start..start + self.len]
    }
}

fn block_names(prefix: &str) -> Vec<(String, &'static str)> {
    [
        ("norm1.gamma", "g"),
        ("norm1.beta", "b"),
        ("attn.query.weight", "w"),
        ("attn.query.bias", "b"),
        ("attn.key.weight", "w"),
        ("attn.key.bias", "b"),
        ("attn.value.weight", "w"),
        ("attn.value.bias", "b"),
        ("attn.out.weight", "w"),
        ("attn.out.bias", "b"),
        ("norm2.gamma", "g"),
        ("norm2.beta", "b"),
        ("ffn.in.weight", "w"),
        ("ffn.in.bias", "b"),
        ("ffn.out.weight", "w"),
        ("ffn.out.bias", "b"),
    ]
    .into_iter()
    .map(|(n, k)| (format!("{prefix}.{n}"), k))
    .collect()
}

impl<E: Element> TransformerModel<E> {
    /// Fresh model: weight matrices and embeddings from N(0, init_std²), biases
    /// zero, norm gains one.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, config.init_std).expect("validated std");
        let mut store = ParamStore::new();
        let mut add = |store: &mut ParamStore<E>, name: String, shape: &[usize], kind: &str| {
            let n: usize = shape.iter().product();
            let data: Vec<E> = match kind {
                "w" => (0..n).map(|_| E::of(normal.sample(&mut rng))).collect(),
                "g" => vec![E::one(); n],
                _ => vec![E::zero(); n],
            };
            store.add(name, Tensor::new(shape.to_vec(), data).expect("sized"));
        };
        let (d, f) = (config.hidden, config.ffn);
        add(&mut store, "embed.token".into(), &[config.vocab_size, d], "w");
        add(&mut store, "embed.position".into(), &[config.max_positions, d], "w");
        add(&mut store, "embed.norm.gamma".into(), &[d], "g");
        add(&mut store, "embed.norm.beta".into(), &[d], "b");
        for prefix in Self::block_prefixes(config) {
            for (name, kind) in block_names(&prefix) {
                let shape: Vec<usize> = match (name.rsplit_once('.').unwrap().1, kind) {
                    ("weight", _) if name.contains("ffn.in") => vec![d, f],
                    ("weight", _) if name.contains("ffn.out") => vec![f, d],
                    ("weight", _) => vec![d, d],
                    ("bias", _) if name.contains("ffn.in") => vec![f],
                    _ => vec![d],
                };
                add(&mut store, name, &shape, kind);
            }
        }
        if config.norm == NormPlacement::Pre {
            add(&mut store, "final_norm.gamma".into(), &[d], "g");
            add(&mut store, "final_norm.beta".into(), &[d], "b");
        }
        add(&mut store, "head.weight".into(), &[d, config.num_classes], "w");
        add(&mut store, "head.bias".into(), &[config.num_classes], "b");
        Self::from_params(config.clone(), store)
    }

    fn block_prefixes(config: &ModelConfig) -> Vec<String> {
        if config.weight_sharing {
            vec!["encoder.shared".into()]
        } else {
            (0..config.num_layers).map(|l| format!("encoder.{l}")).collect()
        }
    }

    /// Binds a parameter store to `config`, checking every expected tensor is
    /// present with the right shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<E>) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, f, c) = (config.hidden, config.ffn, config.num_classes);
        let find = |name: &str, shape: &[usize]| -> Result<ParamId, ModelError> {
            let id = params.find(name).ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))?;
            if params.value(id).shape() != shape {
                return Err(ModelError::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        };
        let affine = |prefix: &str, a: &str, b: &str, sa: &[usize], sb: &[usize]| -> Result<Affine, ModelError> {
            Ok((find(&format!("{prefix}.{a}"), sa)?, find(&format!("{prefix}.{b}"), sb)?))
        };
        let norm = |prefix: &str| affine(prefix, "gamma", "beta", &[d], &[d]);
        let linear = |prefix: &str, i: usize, o: usize| affine(prefix, "weight", "bias", &[i, o], &[o]);

        let token = find("embed.token", &[config.vocab_size, d])?;
        let position = find("embed.position", &[config.max_positions, d])?;
        let embed_norm = norm("embed.norm")?;
        let blocks = Self::block_prefixes(&config)
            .iter()
            .map(|p| {
                Ok(Block {
                    norm1: norm(&format!("{p}.norm1"))?,
                    query: linear(&format!("{p}.attn.query"), d, d)?,
                    key: linear(&format!("{p}.attn.key"), d, d)?,
                    value: linear(&format!("{p}.attn.value"), d, d)?,
                    out: linear(&format!("{p}.attn.out"), d, d)?,
                    norm2: norm(&format!("{p}.norm2"))?,
                    ff_in: linear(&format!("{p}.ffn.in"), d, f)?,
                    ff_out: linear(&format!("{p}.ffn.out"), f, d)?,
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        let final_norm = match config.norm {
            NormPlacement::Pre => Some(norm("final_norm")?),
            NormPlacement::Post => None,
        };
        let head = linear("head", d, c)?;
        let expected = 4 + blocks.len() * 16 + 2 * final_norm.is_some() as usize + 2;
        if params.len() != expected {
            return Err(ModelError::Config(format!(
                "parameter store has {} tensors, config expects {expected}",
                params.len()
            )));
        }
        Ok(Self { config, params, token, position, embed_norm, blocks, final_norm, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<E> {
        self.params
    }

    pub fn encoder_param_count(&self) -> usize {
        self.params.count_prefixed("encoder.")
    }

    pub fn cast<F: Element>(&self) -> TransformerModel<F> {
        TransformerModel::from_params(self.config.clone(), self.params.cast()).expect("same layout")
    }

    /// Records the forward computation on `tape`. With `track` the parameters
    /// are bound for gradients. `train_rng` enables dropout.
    pub fn forward(
        &self,
        tape: &mut Tape<E>,
        batch: &Batch,
        track: bool,
        capture: bool,
        mut train_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward, ModelError> {
        let cfg = &self.config;
        if let Some(&p) = batch.positions.iter().max() {
            if p >= cfg.max_positions {
                return Err(ModelError::Length { len: p + 1, max: cfg.max_positions });
            }
        }
        let mut bind = Binder { params: &self.params, bound: vec![None; self.params.len()], track };

        let tok_table = bind.get(tape, self.token);
        let pos_table = bind.get(tape, self.position);
        let tok = tape.embedding(tok_table, &batch.tokens)?;
        let pos = tape.embedding(pos_table, &batch.positions)?;
        let mut x = tape.add(tok, pos)?;
        x = bind.norm(tape, x, self.embed_norm)?;
        x = self.dropout(tape, x, train_rng.as_deref_mut())?;

        let mut attention = Vec::new();
        for layer in 0..cfg.num_layers {
            let blk = &self.blocks[if cfg.weight_sharing { 0 } else { layer }];
            let pre = cfg.norm == NormPlacement::Pre;

            let input = if pre { bind.norm(tape, x, blk.norm1)? } else { x };
            let (a, probs) = self.attend(tape, &mut bind, blk, batch, input)?;
            if capture {
                attention.push(probs);
            }
            let a = self.dropout(tape, a, train_rng.as_deref_mut())?;
            x = tape.add(x, a)?;
            if !pre {
                x = bind.norm(tape, x, blk.norm1)?;
            }

            let input = if pre { bind.norm(tape, x, blk.norm2)? } else { x };
            let hid = bind.linear(tape, input, blk.ff_in)?;
            let hid = tape.gelu(hid);
            let f = bind.linear(tape, hid, blk.ff_out)?;
            let f = self.dropout(tape, f, train_rng.as_deref_mut())?;
            x = tape.add(x, f)?;
            if !pre {
                x = bind.norm(tape, x, blk.norm2)?;
            }
        }
        if let Some(n) = self.final_norm {
            x = bind.norm(tape, x, n)?;
        }
        let logits = bind.linear(tape, x, self.head)?;
        Ok(Forward { logits, attention })
    }

    /// Multi-head self-attention; returns the projected output and the
    /// attention weights `[size, heads, len, len]`.
    fn attend(
        &self,
        tape: &mut Tape<E>,
        bind: &mut Binder<'_, E>,
        blk: &Block,
        batch: &Batch,
        x: Var,
    ) -> Result<(Var, Var), ModelError> {
        let (b, n, d, h) = (batch.size, batch.len, self.config.hidden, self.config.num_heads);
        let dh = d / h;
        let mut split = |tape: &mut Tape<E>, aff: Affine| -> Result<Var, ModelError> {
            let t = bind.linear(tape, x, aff)?;
            if h == 1 {
                Ok(tape.reshape(t, &[b, 1, n, d])?)
            } else {
                let t = tape.reshape(t, &[b, n, h, dh])?;
                Ok(tape.permute(t, &[0, 2, 1, 3])?)
            }
        };
        let q = split(tape, blk.query)?;
        let k = split(tape, blk.key)?;
        let v = split(tape, blk.value)?;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let probs = tape.masked_softmax(scores, &batch.keep)?;
        let ctx = tape.bmm(probs, v, false)?;
        let ctx = if h == 1 { ctx } else { tape.permute(ctx, &[0, 2, 1, 3])? };
        let ctx = tape.reshape(ctx, &[b * n, d])?;
        Ok((bind.linear(tape, ctx, blk.out)?, probs))
    }

    fn dropout(&self, tape: &mut Tape<E>, x: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let rate = self.config.dropout;
        let Some(rng) = rng.filter(|_| rate > 0.0) else { return Ok(x) };
        let keep = 1.0 - rate;
        let shape = tape.shape(x).to_vec();
        let mask: Vec<E> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.gen::<f64>() < keep { E::of(1.0 / keep) } else { E::zero() })
            .collect();
        let m = tape.constant(Tensor::new(shape, mask)?);
        Ok(tape.mul(x, m)?)
    }

    /// Mean cross-entropy over the labeled tokens of `batch`, recorded with
    /// parameters bound for gradients.
    pub fn loss(&self, tape: &mut Tape<E>, batch: &Batch, train_rng: Option<&mut ChaCha8Rng>) -> Result<Var, ModelError> {
        let fwd = self.forward(tape, batch, true, false, train_rng)?;
        Ok(tape.masked_cross_entropy(fwd.logits, &batch.targets)?)
    }

    /// The vocabulary puts padding last.
    fn pad_token(&self) -> u32 {
        (self.config.vocab_size - 1) as u32
    }

    fn check_lengths(&self, examples: &[&TokenizedExample]) -> Result<(), ModelError> {
        match examples.iter().map(|e| e.len()).max() {
            Some(len) if len > self.config.max_positions => {
                Err(ModelError::Length { len, max: self.config.max_positions })
            }
            _ => Ok(()),
        }
    }

    /// Attention weights per example, padding stripped.
    pub fn attention(&self, examples: &[&TokenizedExample]) -> Result<Vec<AttentionRecord>, ModelError> {
        self.check_lengths(examples)?;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch = Batch::new(chunk, self.pad_token())?;
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, false, true, None)?;
            let (n, h, layers) = (batch.len, self.config.num_heads, self.config.num_layers);
            for (i, ex) in chunk.iter().enumerate() {
                let len = ex.len();
                let mut weights = Vec::with_capacity(layers * h * len * len);
                for &a in &fwd.attention {
                    let data = tape.value(a).data();
                    for head in 0..h {
                        for q in 0..len {
                            let start = ((i * h + head) * n + q) * n;
                            weights.extend(data[start..start + len].iter().map(|v| v.to_f64().unwrap()));
                        }
                    }
                }
                out.push(AttentionRecord { layers, heads: h, len, weights, clause_index: ex.clause_index.clone() });
            }
        }
        Ok(out)
    }
}

impl<E: Element> Classifier for TransformerModel<E> {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, examples: &[&TokenizedExample]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.check_lengths(examples)?;
        let c = self.config.num_classes;
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch = Batch::new(chunk, self.pad_token())?;
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, false, false, None)?;
            let data = tape.value(fwd.logits).data();
            for (i, ex) in chunk.iter().enumerate() {
                let start = i * batch.len * c;
                out.push(data[start..start + ex.len() * c].iter().map(|v| v.to_f64().unwrap()).collect());
            }
        }
        Ok(out)
    }
}

//! A tiny deterministic causal language model used as both teacher and
//! student at desk scale, with a byte-exact checkpoint encoding and greedy
//! generation.
//!
//! Architecture: token embedding plus learned positions, then `n_layers`
//! pre-norm blocks (causal multi-head attention and a gelu feed-forward,
//! each behind an rms-normalize and a residual connection), a final
//! rms-normalize, and an output projection tied to the token embedding.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::{Error, Result};

/// Feed-forward width as a multiple of `d_model`.
pub const FF_MULT: usize = 2;

/// Standard deviation of the seeded normal initializer.
pub const INIT_STD: f32 = 0.02;

/// First bytes of every checkpoint.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ULDC";

/// Current checkpoint format version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Shape and seed of a [`TinyCausalLm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// A config with the default two layers.
    pub fn new(
        vocab_size: usize,
        context_len: usize,
        d_model: usize,
        n_heads: usize,
        seed: u64,
    ) -> Self {
        ModelConfig {
            vocab_size,
            context_len,
            d_model,
            n_heads,
            n_layers: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::parameter("vocab_size must be at least 1"));
        }
        if self.context_len < 2 {
            return Err(Error::parameter("context_len must be at least 2"));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::parameter(
                "d_model, n_heads and n_layers must be positive",
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::parameter(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

/// Parameter layout for a config: `(name, rows, cols, is_norm_gain)` in
/// declaration order. Declaration order is also checkpoint order.
fn param_specs(config: &ModelConfig) -> Vec<(String, usize, usize, bool)> {
    let d = config.d_model;
    let ff = FF_MULT * d;
    let mut specs = vec![
        ("tok_embedding".into(), config.vocab_size, d, false),
        ("pos_embedding".into(), config.context_len, d, false),
    ];
    for layer in 0..config.n_layers {
        specs.push((format!("layers.{layer}.attn_norm_gain"), 1, d, true));
        specs.push((format!("layers.{layer}.wq"), d, d, false));
        specs.push((format!("layers.{layer}.wk"), d, d, false));
        specs.push((format!("layers.{layer}.wv"), d, d, false));
        specs.push((format!("layers.{layer}.wo"), d, d, false));
        specs.push((format!("layers.{layer}.ff_norm_gain"), 1, d, true));
        specs.push((format!("layers.{layer}.ff_w1"), d, ff, false));
        specs.push((format!("layers.{layer}.ff_w2"), ff, d, false));
    }
    specs.push(("out_norm_gain".into(), 1, d, true));
    specs
}

/// A forward pass recorded on a tape, ready for gradient injection at the
/// logits.
pub struct ForwardPass {
    pub tape: Tape<f32>,
    /// The `(seq_len, vocab_size)` logits node.
    pub logits: NodeId,
    /// Tape leaves of the parameters, in declaration order.
    pub param_nodes: Vec<NodeId>,
}

/// The trainable autoregressive model.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCausalLm {
    config: ModelConfig,
    params: Vec<Param>,
}

impl TinyCausalLm {
    /// Builds a model with parameters drawn from a seeded normal
    /// (`std` = [`INIT_STD`]); normalization gains start at 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0f32, INIT_STD).expect("valid std");
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, rows, cols, is_gain)| {
                let data = if is_gain {
                    vec![1.0f32; rows * cols]
                } else {
                    (0..rows * cols).map(|_| normal.sample(&mut rng)).collect()
                };
                Param {
                    name,
                    rows,
                    cols,
                    data,
                }
            })
            .collect();
        Ok(TinyCausalLm { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Named parameter views in declaration order.
    pub fn named_params(&self) -> impl Iterator<Item = (&str, (usize, usize), &[f32])> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), (p.rows, p.cols), p.data.as_slice()))
    }

    /// Mutable view of one parameter tensor, by name.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        self.params
            .iter_mut()
            .find(|p| p.name == name)
            .map(|p| p.data.as_mut_slice())
    }

    pub(crate) fn param_data_mut(&mut self, index: usize) -> &mut [f32] {
        &mut self.params[index].data
    }

    /// The tied token-embedding table as `f64` rows, for embedding-distance
    /// cost matrices.
    pub fn embedding_rows(&self) -> Vec<Vec<f64>> {
        let emb = &self.params[0];
        emb.data
            .chunks(emb.cols)
            .map(|row| row.iter().map(|&x| x as f64).collect())
            .collect()
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::parameter("input sequence must be non-empty"));
        }
        if ids.len() > self.config.context_len {
            return Err(Error::parameter(format!(
                "input length {} exceeds context_len {}",
                ids.len(),
                self.config.context_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::parameter(format!(
                "token id {bad} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records the full forward computation on a fresh tape. With
    /// `with_grads` the parameter leaves require gradients, so a backward
    /// pass seeded at [`ForwardPass::logits`] fills them in.
    pub fn forward_pass(&self, ids: &[usize], with_grads: bool) -> Result<ForwardPass> {
        self.check_ids(ids)?;
        let seq = ids.len();
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let head_dim = d / heads;
        let att_scale = 1.0 / (head_dim as f32).sqrt();

        let mut tape = Tape::new();
        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| {
                let t = Tensor::new(p.rows, p.cols, p.data.clone()).expect("stored shapes valid");
                tape.leaf(t, with_grads)
            })
            .collect();
        let embedding = param_nodes[0];
        let positions = param_nodes[1];

        let tok = tape.gather_rows(embedding, ids)?;
        let pos_ids: Vec<usize> = (0..seq).collect();
        let pos = tape.gather_rows(positions, &pos_ids)?;
        let mut x = tape.add(tok, pos)?;

        let mut next = 2;
        for _ in 0..self.config.n_layers {
            let attn_gain = param_nodes[next];
            let wq = param_nodes[next + 1];
            let wk = param_nodes[next + 2];
            let wv = param_nodes[next + 3];
            let wo = param_nodes[next + 4];
            let ff_gain = param_nodes[next + 5];
            let ff_w1 = param_nodes[next + 6];
            let ff_w2 = param_nodes[next + 7];
            next += 8;

            let normed = tape.rms_norm(x, attn_gain)?;
            let q = tape.matmul(normed, wq)?;
            let k = tape.matmul(normed, wk)?;
            let v = tape.matmul(normed, wv)?;
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let start = h * head_dim;
                let qh = tape.slice_cols(q, start, head_dim)?;
                let kh = tape.slice_cols(k, start, head_dim)?;
                let vh = tape.slice_cols(v, start, head_dim)?;
                let scores = tape.matmul_trans_b(qh, kh)?;
                let scaled = tape.scale(scores, att_scale);
                let masked = tape.causal_mask_add(scaled)?;
                let att = tape.row_softmax(masked);
                head_outputs.push(tape.matmul(att, vh)?);
            }
            let merged = tape.concat_cols(&head_outputs)?;
            let projected = tape.matmul(merged, wo)?;
            x = tape.add(x, projected)?;

            let normed = tape.rms_norm(x, ff_gain)?;
            let hidden = tape.matmul(normed, ff_w1)?;
            let activated = tape.gelu(hidden);
            let ff_out = tape.matmul(activated, ff_w2)?;
            x = tape.add(x, ff_out)?;
        }

        let out_gain = param_nodes[next];
        let final_norm = tape.rms_norm(x, out_gain)?;
        let logits = tape.matmul_trans_b(final_norm, embedding)?;
        Ok(ForwardPass {
            tape,
            logits,
            param_nodes,
        })
    }

    /// One logit row per input position; row `t` scores the token at
    /// position `t + 1`. Causal: row `t` depends only on `ids[..=t]`.
    pub fn forward(&self, ids: &[usize]) -> Result<Vec<Vec<f32>>> {
        let pass = self.forward_pass(ids, false)?;
        let v = self.config.vocab_size;
        Ok(pass
            .tape
            .value(pass.logits)
            .chunks(v)
            .map(|row| row.to_vec())
            .collect())
    }

    /// Appends argmax tokens until `stop_id` or `max_new` tokens; when the
    /// sequence outgrows the context window the model conditions on the
    /// last `context_len` tokens. Ties break toward the lowest id.
    pub fn greedy_generate(
        &self,
        prompt: &[usize],
        max_new: usize,
        stop_id: usize,
    ) -> Result<Vec<usize>> {
        self.check_ids(prompt)?;
        let mut ids = prompt.to_vec();
        for _ in 0..max_new {
            let window_start = ids.len().saturating_sub(self.config.context_len);
            let logits = self.forward(&ids[window_start..])?;
            let last = logits.last().expect("non-empty window");
            let mut best = 0;
            for (i, &score) in last.iter().enumerate() {
                if score > last[best] {
                    best = i;
                }
            }
            ids.push(best);
            if best == stop_id {
                break;
            }
        }
        Ok(ids)
    }

    /// Serializes the model: magic, version, config, then each named
    /// tensor in declaration order as little-endian bytes.
    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.vocab_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.context_len as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.d_model as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.n_heads as u32).to_le_bytes());
        out.extend_from_slice(&(self.config.n_layers as u32).to_le_bytes());
        out.extend_from_slice(&self.config.seed.to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes()); // rank
            out.extend_from_slice(&(p.rows as u32).to_le_bytes());
            out.extend_from_slice(&(p.cols as u32).to_le_bytes());
            for &x in &p.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    /// Reconstructs a model from checkpoint bytes, verifying magic,
    /// version, tensor names, shapes and exact length.
    pub fn decode_checkpoint(bytes: &[u8]) -> Result<Self> {
        let mut reader = Reader { bytes, pos: 0 };
        let magic = reader.take(4, "magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(
                "magic",
                format!("expected ULDC, got {magic:?}"),
            ));
        }
        let version = reader.read_u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "version",
                format!("expected {CHECKPOINT_VERSION}, got {version}"),
            ));
        }
        let config = ModelConfig {
            vocab_size: reader.read_u32("config.vocab_size")? as usize,
            context_len: reader.read_u32("config.context_len")? as usize,
            d_model: reader.read_u32("config.d_model")? as usize,
            n_heads: reader.read_u32("config.n_heads")? as usize,
            n_layers: reader.read_u32("config.n_layers")? as usize,
            seed: reader.read_u64("config.seed")?,
        };
        config
            .validate()
            .map_err(|e| Error::format("config", format!("{e}")))?;

        let mut params = Vec::new();
        for (name, rows, cols, _) in param_specs(&config) {
            let name_len = reader.read_u32("tensor name length")? as usize;
            let raw = reader.take(name_len, "tensor name")?;
            let stored = core::str::from_utf8(raw)
                .map_err(|_| Error::format("tensor name", "invalid UTF-8"))?;
            if stored != name {
                return Err(Error::format(
                    "tensor name",
                    format!("expected {name}, got {stored}"),
                ));
            }
            let rank = reader.read_u32("tensor rank")?;
            if rank != 2 {
                return Err(Error::format(
                    "tensor rank",
                    format!("expected 2 for {name}, got {rank}"),
                ));
            }
            let stored_rows = reader.read_u32("tensor dims")? as usize;
            let stored_cols = reader.read_u32("tensor dims")? as usize;
            if (stored_rows, stored_cols) != (rows, cols) {
                return Err(Error::format(
                    "tensor dims",
                    format!("{name}: expected {rows}x{cols}, got {stored_rows}x{stored_cols}"),
                ));
            }
            let raw = reader.take(rows * cols * 4, "tensor data")?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.push(Param {
                name,
                rows,
                cols,
                data,
            });
        }
        if reader.pos != bytes.len() {
            return Err(Error::format(
                "trailing bytes",
                format!(
                    "{} unexpected bytes after last tensor",
                    bytes.len() - reader.pos
                ),
            ));
        }
        Ok(TinyCausalLm { config, params })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::format(field, "checkpoint truncated"));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn read_u32(&mut self, field: &'static str) -> Result<u32> {
        let raw = self.take(4, field)?;
        Ok(u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]))
    }

    fn read_u64(&mut self, field: &'static str) -> Result<u64> {
        let raw = self.take(8, field)?;
        Ok(u64::from_le_bytes([
            raw[0], raw[1], raw[2], raw[3], raw[4], raw[5], raw[6], raw[7],
        ]))
    }
}

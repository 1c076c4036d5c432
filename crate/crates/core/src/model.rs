// SPDX-License-Identifier: MIT OR Apache-2.0

//! Llama-family decoder forward pass with full residual-stream capture and
//! in-flight residual replacement.
//!
//! Layer indexing follows the residual stream: state `0` is the token
//! embedding and state `j` (for `1 <= j <= k`) is the residual after
//! transformer block `j`. A model with `n_layers = k` therefore records
//! `k + 1` states per position.
//!
//! # Checkpoint format
//!
//! ```text
//! "RLNS" | version: u32 LE (= 1) | header_len: u64 LE | header: UTF-8 JSON
//! | payload: raw f32 LE tensors
//! ```
//!
//! The header is `{"config": ModelConfig, "tensors": [{"name", "dims",
//! "byte_offset"}]}`; `byte_offset` counts from the first payload byte.

use std::collections::HashMap;
use std::path::Path;

use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, matvec, rms_norm, Tensor};
use crate::tokenizer::TokenId;

pub const MAGIC: &[u8; 4] = b"RLNS";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub dim: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub mlp_hidden: usize,
    pub vocab_size: usize,
    pub rope_theta: f32,
    pub norm_eps: f32,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("mlp_hidden", self.mlp_hidden),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Format(format!("config field {name} must be positive")));
        }
        if self.dim % self.n_heads != 0 {
            return Err(Error::Format(format!(
                "dim {} not divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Format(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            )));
        }
        if (self.dim / self.n_heads) % 2 != 0 {
            return Err(Error::Format("head dimension must be even for rotary embeddings".into()));
        }
        if !(self.rope_theta > 0.0 && self.norm_eps >= 0.0) {
            return Err(Error::Format("rope_theta must be positive and norm_eps non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    /// Final layer index `k`; there are `k + 1` residual states.
    pub fn final_layer(&self) -> usize {
        self.n_layers
    }

    /// Canonical tensor names with their expected dims, in file order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.dim;
        let hd = self.head_dim();
        let kv = self.n_kv_heads * hd;
        let mut out = vec![("tok_embed".to_string(), vec![self.vocab_size, d])];
        for i in 0..self.n_layers {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attn_norm"), vec![d]));
            out.push((format!("{p}.wq"), vec![d, d]));
            out.push((format!("{p}.wk"), vec![kv, d]));
            out.push((format!("{p}.wv"), vec![kv, d]));
            out.push((format!("{p}.wo"), vec![d, d]));
            out.push((format!("{p}.mlp_norm"), vec![d]));
            out.push((format!("{p}.w_gate"), vec![self.mlp_hidden, d]));
            out.push((format!("{p}.w_up"), vec![self.mlp_hidden, d]));
            out.push((format!("{p}.w_down"), vec![d, self.mlp_hidden]));
        }
        out.push(("final_norm".to_string(), vec![d]));
        out.push(("unembed".to_string(), vec![self.vocab_size, d]));
        out
    }
}

#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn_norm: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub mlp_norm: Tensor,
    pub w_gate: Tensor,
    pub w_up: Tensor,
    pub w_down: Tensor,
}

/// Model configuration plus all weights. Immutable once built.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    config: ModelConfig,
    tok_embed: Tensor,
    layers: Vec<LayerWeights>,
    final_norm: Tensor,
    unembed: Tensor,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dims: Vec<usize>,
    byte_offset: u64,
}

impl Checkpoint {
    /// Assembles a checkpoint from named tensors, checking every canonical
    /// name is present with the dims implied by `config`.
    pub fn from_tensors(config: ModelConfig, mut tensors: HashMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        for (name, dims) in config.tensor_layout() {
            match tensors.get(&name) {
                None => return Err(Error::IncompleteCheckpoint(name)),
                Some(t) if t.dims() != dims.as_slice() => {
                    return Err(Error::Shape(format!(
                        "tensor {name} has dims {:?}, expected {dims:?}",
                        t.dims()
                    )))
                }
                Some(t) => t.check_finite(&name)?,
            }
        }
        let mut take = |name: &str| tensors.remove(name).expect("presence checked above");
        let tok_embed = take("tok_embed");
        let layers = (0..config.n_layers)
            .map(|i| {
                let mut t = |s: &str| take(&format!("layers.{i}.{s}"));
                LayerWeights {
                    attn_norm: t("attn_norm"),
                    wq: t("wq"),
                    wk: t("wk"),
                    wv: t("wv"),
                    wo: t("wo"),
                    mlp_norm: t("mlp_norm"),
                    w_gate: t("w_gate"),
                    w_up: t("w_up"),
                    w_down: t("w_down"),
                }
            })
            .collect();
        let final_norm = take("final_norm");
        let unembed = take("unembed");
        Ok(Self {
            config,
            tok_embed,
            layers,
            final_norm,
            unembed,
        })
    }

    /// Gaussian random weights, deterministic in `seed`. Norm gains are
    /// drawn around 1 so they are not trivially the identity.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = StdRng::seed_from_u64(seed);
        let mut tensors = HashMap::new();
        for (name, dims) in config.tensor_layout() {
            let len: usize = dims.iter().product();
            let std = if name.ends_with("norm") {
                0.1
            } else if name == "tok_embed" {
                1.0
            } else if name == "unembed" {
                0.5
            } else {
                1.0 / (*dims.last().unwrap() as f32).sqrt()
            };
            let normal = Normal::new(0.0f32, std).expect("positive std");
            let mut data: Vec<f32> = (0..len).map(|_| normal.sample(&mut rng)).collect();
            if name.ends_with("norm") {
                data.iter_mut().for_each(|v| *v += 1.0);
            }
            tensors.insert(name, Tensor::new(dims, data)?);
        }
        Self::from_tensors(config, tensors)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn unembed(&self) -> &Tensor {
        &self.unembed
    }

    pub fn final_norm(&self) -> &Tensor {
        &self.final_norm
    }

    pub fn layer(&self, i: usize) -> &LayerWeights {
        &self.layers[i]
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("tok_embed".to_string(), &self.tok_embed)];
        for (i, l) in self.layers.iter().enumerate() {
            let p = format!("layers.{i}");
            out.push((format!("{p}.attn_norm"), &l.attn_norm));
            out.push((format!("{p}.wq"), &l.wq));
            out.push((format!("{p}.wk"), &l.wk));
            out.push((format!("{p}.wv"), &l.wv));
            out.push((format!("{p}.wo"), &l.wo));
            out.push((format!("{p}.mlp_norm"), &l.mlp_norm));
            out.push((format!("{p}.w_gate"), &l.w_gate));
            out.push((format!("{p}.w_up"), &l.w_up));
            out.push((format!("{p}.w_down"), &l.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("unembed".to_string(), &self.unembed));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        for (name, t) in self.named_tensors() {
            entries.push(TensorEntry {
                name,
                dims: t.dims().to_vec(),
                byte_offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            tensors: entries,
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
        let data_start = 16u64
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len() as u64)
            .ok_or_else(|| Error::Format("header extends past end of file".into()))?
            as usize;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::Format(format!("header JSON: {e}")))?;
        let payload = &bytes[data_start..];
        let mut tensors = HashMap::new();
        for entry in header.tensors {
            let len: usize = entry.dims.iter().product();
            let start = entry.byte_offset as usize;
            let end = start
                .checked_add(len * 4)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| {
                    Error::Format(format!("tensor {} extends past end of file", entry.name))
                })?;
            let data = payload[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(entry.dims, data)?;
            if tensors.insert(entry.name.clone(), t).is_some() {
                return Err(Error::Format(format!("tensor {} listed twice", entry.name)));
            }
        }
        Self::from_tensors(header.config, tensors)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Length { len: 0, max: self.config.max_seq_len });
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(Error::Length {
                len: tokens.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(t) = tokens.iter().find(|t| t.index() >= self.config.vocab_size) {
            return Err(Error::Range(format!(
                "token id {t} outside [0, {})",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Residual after embedding, `n x d`.
    fn embed(&self, tokens: &[TokenId]) -> Vec<f32> {
        tokens
            .iter()
            .flat_map(|t| self.tok_embed.outer(t.index()).iter().copied())
            .collect()
    }

    /// Output `f_j` of block `layer` (1-based) on a whole `n x d` residual
    /// matrix: `h_j = h_{j-1} + f_j(h_{j-1})`.
    pub fn block(&self, layer: usize, hidden: &[f32]) -> Result<Vec<f32>> {
        if layer == 0 || layer > self.config.n_layers {
            return Err(Error::Range(format!(
                "block index {layer} outside [1, {}]",
                self.config.n_layers
            )));
        }
        let d = self.config.dim;
        if hidden.is_empty() || hidden.len() % d != 0 {
            return Err(Error::Shape(format!(
                "residual length {} is not a multiple of dim {d}",
                hidden.len()
            )));
        }
        let mut h = hidden.to_vec();
        self.apply_block(layer - 1, &mut h);
        Ok(h.iter().zip(hidden).map(|(a, b)| a - b).collect())
    }

    /// `U * rms_norm(h)` for a single residual vector.
    pub fn unembed_state(&self, state: &[f32]) -> Vec<f32> {
        let normed = rms_norm(state, self.final_norm.data(), self.config.norm_eps);
        let mut logits = vec![0.0; self.config.vocab_size];
        matvec(self.unembed.data(), &normed, &mut logits);
        logits
    }

    pub fn forward(&self, tokens: &[TokenId]) -> Result<ResidualTrace> {
        self.run(tokens, None)
    }

    pub fn forward_patched(&self, tokens: &[TokenId], plan: &PatchPlan) -> Result<ResidualTrace> {
        plan.validate_for(&self.config, tokens.len())?;
        self.run(tokens, Some(plan))
    }

    fn run(&self, tokens: &[TokenId], plan: Option<&PatchPlan>) -> Result<ResidualTrace> {
        self.check_tokens(tokens)?;
        let n = tokens.len();
        let d = self.config.dim;
        let k = self.config.n_layers;
        let mut states = Vec::with_capacity((k + 1) * n * d);
        let mut h = self.embed(tokens);
        for j in 0..=k {
            if j > 0 {
                self.apply_block(j - 1, &mut h);
            }
            if let Some(plan) = plan {
                if j >= plan.start_layer {
                    let at = plan.target_position * d;
                    h[at..at + d].copy_from_slice(plan.donor_states.outer(j));
                }
            }
            states.extend_from_slice(&h);
        }
        let final_logits = self.unembed_state(&h[(n - 1) * d..]);
        let states = Tensor::new(vec![k + 1, n, d], states)?;
        states.check_finite("residual stream")?;
        Ok(ResidualTrace {
            states,
            final_logits,
        })
    }

    /// In-place `h += attn(norm(h)); h += mlp(norm(h))` for block `idx` (0-based).
    fn apply_block(&self, idx: usize, h: &mut [f32]) {
        let cfg = &self.config;
        let w = &self.layers[idx];
        let d = cfg.dim;
        let n = h.len() / d;
        let hd = cfg.head_dim();
        let kv_dim = cfg.n_kv_heads * hd;
        let group = cfg.n_heads / cfg.n_kv_heads;

        let mut q = vec![0.0f32; n * d];
        let mut keys = vec![0.0f32; n * kv_dim];
        let mut values = vec![0.0f32; n * kv_dim];
        for i in 0..n {
            let x = rms_norm(&h[i * d..(i + 1) * d], w.attn_norm.data(), cfg.norm_eps);
            matvec(w.wq.data(), &x, &mut q[i * d..(i + 1) * d]);
            matvec(w.wk.data(), &x, &mut keys[i * kv_dim..(i + 1) * kv_dim]);
            matvec(w.wv.data(), &x, &mut values[i * kv_dim..(i + 1) * kv_dim]);
            for head in q[i * d..(i + 1) * d].chunks_exact_mut(hd) {
                apply_rope(head, i, cfg.rope_theta);
            }
            for head in keys[i * kv_dim..(i + 1) * kv_dim].chunks_exact_mut(hd) {
                apply_rope(head, i, cfg.rope_theta);
            }
        }

        let scale = 1.0 / (hd as f64).sqrt();
        let mut mixed = vec![0.0f32; d];
        let mut attn_out = vec![0.0f32; d];
        let mut scores = vec![0.0f64; n];
        for i in 0..n {
            for head in 0..cfg.n_heads {
                let kv_head = head / group;
                let qh = &q[i * d + head * hd..i * d + (head + 1) * hd];
                let mut max = f64::NEG_INFINITY;
                for (t, s) in scores[..=i].iter_mut().enumerate() {
                    let kh = &keys[t * kv_dim + kv_head * hd..t * kv_dim + (kv_head + 1) * hd];
                    *s = f64::from(dot(qh, kh)) * scale;
                    max = max.max(*s);
                }
                let mut total = 0.0;
                for s in scores[..=i].iter_mut() {
                    *s = (*s - max).exp();
                    total += *s;
                }
                let out = &mut mixed[head * hd..(head + 1) * hd];
                for (c, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0f64;
                    for (t, &s) in scores[..=i].iter().enumerate() {
                        acc += s * f64::from(values[t * kv_dim + kv_head * hd + c]);
                    }
                    *o = (acc / total) as f32;
                }
            }
            matvec(w.wo.data(), &mixed, &mut attn_out);
            for (x, a) in h[i * d..(i + 1) * d].iter_mut().zip(&attn_out) {
                *x += a;
            }
        }

        let hidden = cfg.mlp_hidden;
        let mut gate = vec![0.0f32; hidden];
        let mut up = vec![0.0f32; hidden];
        let mut down = vec![0.0f32; d];
        for i in 0..n {
            let row = &mut h[i * d..(i + 1) * d];
            let x = rms_norm(row, w.mlp_norm.data(), cfg.norm_eps);
            matvec(w.w_gate.data(), &x, &mut gate);
            matvec(w.w_up.data(), &x, &mut up);
            for (g, u) in gate.iter_mut().zip(&up) {
                let gv = f64::from(*g);
                *g = (gv / (1.0 + (-gv).exp()) * f64::from(*u)) as f32;
            }
            matvec(w.w_down.data(), &gate, &mut down);
            for (x, m) in row.iter_mut().zip(&down) {
                *x += m;
            }
        }
    }
}

/// Rotary embedding, half-split pairing (`x[c]` with `x[c + hd/2]`).
fn apply_rope(head: &mut [f32], pos: usize, theta: f32) {
    let half = head.len() / 2;
    for c in 0..half {
        let freq = f64::from(theta).powf(-2.0 * c as f64 / head.len() as f64);
        let (sin, cos) = (pos as f64 * freq).sin_cos();
        let (a, b) = (f64::from(head[c]), f64::from(head[c + half]));
        head[c] = (a * cos - b * sin) as f32;
        head[c + half] = (b * cos + a * sin) as f32;
    }
}

/// Residual states `h^(j)_i` for one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualTrace {
    /// `(k + 1) x n x d`.
    pub states: Tensor,
    /// Logits at the last position from the final state.
    pub final_logits: Vec<f32>,
}

impl ResidualTrace {
    pub fn num_states(&self) -> usize {
        self.states.dims()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.states.dims()[1]
    }

    pub fn dim(&self) -> usize {
        self.states.dims()[2]
    }

    pub fn state(&self, layer: usize, position: usize) -> &[f32] {
        let d = self.dim();
        let start = (layer * self.seq_len() + position) * d;
        &self.states.data()[start..start + d]
    }

    /// All layers at one position, `(k + 1) x d`.
    pub fn position_states(&self, position: usize) -> Result<Tensor> {
        if position >= self.seq_len() {
            return Err(Error::Range(format!(
                "position {position} outside sequence of length {}",
                self.seq_len()
            )));
        }
        let data = (0..self.num_states())
            .flat_map(|j| self.state(j, position).iter().copied())
            .collect();
        Tensor::new(vec![self.num_states(), self.dim()], data)
    }
}

/// Replace `h^(j')_{target}` with `donor[j']` for every `j' >= start_layer`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    /// `(k + 1) x d`, one donor vector per residual state.
    pub donor_states: Tensor,
    pub start_layer: usize,
    pub target_position: usize,
}

impl PatchPlan {
    pub fn new(donor_states: Tensor, start_layer: usize, target_position: usize) -> Self {
        Self {
            donor_states,
            start_layer,
            target_position,
        }
    }

    pub fn validate_for(&self, config: &ModelConfig, seq_len: usize) -> Result<()> {
        let expected = [config.n_layers + 1, config.dim];
        if self.donor_states.dims() != expected {
            return Err(Error::Plan(format!(
                "donor dims {:?}, expected {expected:?}",
                self.donor_states.dims()
            )));
        }
        if self.start_layer > config.n_layers {
            return Err(Error::Plan(format!(
                "start layer {} outside [0, {}]",
                self.start_layer, config.n_layers
            )));
        }
        if self.target_position >= seq_len {
            return Err(Error::Plan(format!(
                "target position {} outside sequence of length {seq_len}",
                self.target_position
            )));
        }
        if !self.donor_states.is_finite() {
            return Err(Error::Plan("donor states contain non-finite values".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::softmax;

    pub(crate) fn tiny_config(n_layers: usize) -> ModelConfig {
        ModelConfig {
            n_layers,
            dim: 16,
            n_heads: 4,
            n_kv_heads: 2,
            mlp_hidden: 24,
            vocab_size: 20,
            rope_theta: 10000.0,
            norm_eps: 1e-5,
            max_seq_len: 32,
        }
    }

    fn ids(v: &[u32]) -> Vec<TokenId> {
        v.iter().map(|&i| TokenId(i)).collect()
    }

    #[test]
    fn trace_dims() {
        let ck = Checkpoint::random(tiny_config(3), 1).unwrap();
        let tr = ck.forward(&ids(&[1, 2, 3, 4, 5])).unwrap();
        assert_eq!(tr.states.dims(), &[4, 5, 16]);
        assert_eq!(tr.final_logits.len(), 20);
    }

    #[test]
    fn zero_layer_model_unembeds_embedding() {
        let ck = Checkpoint::random(tiny_config(0), 2).unwrap();
        let tr = ck.forward(&ids(&[3, 7])).unwrap();
        let emb = ck.tok_embed.outer(7);
        assert_eq!(tr.state(0, 1), emb);
        let normed = rms_norm(emb, ck.final_norm.data(), 1e-5);
        for (t, &z) in tr.final_logits.iter().enumerate() {
            let expect: f64 = ck
                .unembed
                .outer(t)
                .iter()
                .zip(&normed)
                .map(|(&u, &x)| f64::from(u) * f64::from(x))
                .sum();
            assert!((f64::from(z) - expect).abs() < 1e-5);
        }
    }

    #[test]
    fn length_and_range_errors() {
        let ck = Checkpoint::random(tiny_config(1), 3).unwrap();
        assert!(matches!(ck.forward(&[]), Err(Error::Length { .. })));
        assert!(matches!(
            ck.forward(&vec![TokenId(0); 33]),
            Err(Error::Length { len: 33, max: 32 })
        ));
        assert!(matches!(ck.forward(&ids(&[20])), Err(Error::Range(_))));
    }

    #[test]
    fn causality_prefix_unchanged() {
        let ck = Checkpoint::random(tiny_config(2), 4).unwrap();
        let short = ck.forward(&ids(&[1, 5, 9])).unwrap();
        let long = ck.forward(&ids(&[1, 5, 9, 2])).unwrap();
        for j in 0..3 {
            for i in 0..3 {
                for (a, b) in short.state(j, i).iter().zip(long.state(j, i)) {
                    assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn residual_identity_against_block() {
        let ck = Checkpoint::random(tiny_config(3), 5).unwrap();
        let tr = ck.forward(&ids(&[4, 4, 1, 0, 19])).unwrap();
        let n = tr.seq_len();
        for j in 1..=3 {
            let prev: Vec<f32> = (0..n).flat_map(|i| tr.state(j - 1, i).to_vec()).collect();
            let delta = ck.block(j, &prev).unwrap();
            for i in 0..n {
                for c in 0..16 {
                    let diff = tr.state(j, i)[c] - tr.state(j - 1, i)[c];
                    assert!((diff - delta[i * 16 + c]).abs() < 1e-6);
                }
            }
        }
        assert!(ck.block(0, &prev_dummy()).is_err());
        assert!(ck.block(4, &prev_dummy()).is_err());
    }

    fn prev_dummy() -> Vec<f32> {
        vec![0.0; 16]
    }

    #[test]
    fn deterministic_bitwise() {
        let ck = Checkpoint::random(tiny_config(2), 6).unwrap();
        let a = ck.forward(&ids(&[1, 2, 3])).unwrap();
        let b = ck.forward(&ids(&[1, 2, 3])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn self_patch_is_identity() {
        let ck = Checkpoint::random(tiny_config(3), 7).unwrap();
        let tokens = ids(&[2, 8, 8, 1, 6]);
        let base = ck.forward(&tokens).unwrap();
        let donor = base.position_states(2).unwrap();
        for j in 0..=3 {
            let plan = PatchPlan::new(donor.clone(), j, 2);
            let patched = ck.forward_patched(&tokens, &plan).unwrap();
            for (a, b) in patched.final_logits.iter().zip(&base.final_logits) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn final_layer_patch_elsewhere_is_noop() {
        let ck = Checkpoint::random(tiny_config(3), 8).unwrap();
        let tokens = ids(&[2, 8, 8, 1, 6]);
        let base = ck.forward(&tokens).unwrap();
        let other = ck.forward(&ids(&[5, 5, 5])).unwrap();
        let plan = PatchPlan::new(other.position_states(1).unwrap(), 3, 1);
        let patched = ck.forward_patched(&tokens, &plan).unwrap();
        assert_eq!(patched.final_logits, base.final_logits);
        assert_eq!(patched.state(3, 1), other.state(3, 1));
    }

    #[test]
    fn patch_propagates_downstream() {
        let ck = Checkpoint::random(tiny_config(3), 9).unwrap();
        let tokens = ids(&[2, 8, 8, 1, 6]);
        let base = ck.forward(&tokens).unwrap();
        let other = ck.forward(&ids(&[5, 5, 5])).unwrap();
        let plan = PatchPlan::new(other.position_states(1).unwrap(), 0, 1);
        let patched = ck.forward_patched(&tokens, &plan).unwrap();
        assert_ne!(patched.final_logits, base.final_logits);
        // positions before the patch are untouched
        assert_eq!(patched.state(3, 0), base.state(3, 0));
        softmax(&patched.final_logits).unwrap();
    }

    #[test]
    fn plan_validation() {
        let cfg = tiny_config(2);
        let ck = Checkpoint::random(cfg.clone(), 10).unwrap();
        let tokens = ids(&[1, 2]);
        let donor = Tensor::zeros(vec![3, 16]).unwrap();
        let bad_layer = PatchPlan::new(donor.clone(), 3, 0);
        assert!(matches!(ck.forward_patched(&tokens, &bad_layer), Err(Error::Plan(_))));
        let bad_pos = PatchPlan::new(donor.clone(), 0, 2);
        assert!(matches!(ck.forward_patched(&tokens, &bad_pos), Err(Error::Plan(_))));
        let bad_dims = PatchPlan::new(Tensor::zeros(vec![2, 16]).unwrap(), 0, 0);
        assert!(matches!(ck.forward_patched(&tokens, &bad_dims), Err(Error::Plan(_))));
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let ck = Checkpoint::random(tiny_config(2), 11).unwrap();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        let tokens = ids(&[3, 1, 4]);
        assert_eq!(back.forward(&tokens).unwrap(), ck.forward(&tokens).unwrap());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format(_))
        ));
        assert!(matches!(Checkpoint::from_bytes(&bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn missing_and_misshapen_tensors() {
        let cfg = tiny_config(1);
        let ck = Checkpoint::random(cfg.clone(), 12).unwrap();
        let mut tensors: HashMap<String, Tensor> = ck
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        let unembed = tensors.remove("unembed").unwrap();
        assert!(matches!(
            Checkpoint::from_tensors(cfg.clone(), tensors.clone()),
            Err(Error::IncompleteCheckpoint(name)) if name == "unembed"
        ));
        tensors.insert("unembed".into(), Tensor::new(vec![16, 20], unembed.into_data()).unwrap());
        assert!(matches!(
            Checkpoint::from_tensors(cfg, tensors),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config(1);
        cfg.n_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(1);
        cfg.n_kv_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(1);
        cfg.vocab_size = 0;
        assert!(cfg.validate().is_err());
    }
}

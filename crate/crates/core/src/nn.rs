//! Parameter storage and the pre-norm transformer shared by both agents.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::rng::Rng;
use crate::tensor::{Tape, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Named tensors in insertion order. The order is part of the checkpoint
/// format, so it never depends on hashing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.entries.push((name.into(), tensor));
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for (_, t) in &mut self.entries {
            t.requires_grad = trainable;
            if !trainable {
                t.grad = None;
            }
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.entries.iter().any(|(_, t)| t.requires_grad)
    }

    pub fn zero_grad(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Records every tensor on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t)).collect()
    }

    /// Adds the tape gradients of `vars` into the stored gradient buffers.
    pub fn accumulate(&mut self, tape: &Tape, vars: &[Var]) {
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            if t.requires_grad {
                if let Some(g) = tape.grad(v) {
                    t.accumulate_grad(g);
                }
            }
        }
    }

    /// Replaces every tensor with the same-named one from `other`.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        ensure!(
            self.len() == other.len(),
            Config,
            "expected {} tensors, got {}",
            self.len(),
            other.len()
        );
        for ((name, t), (oname, o)) in self.entries.iter_mut().zip(&other.entries) {
            ensure!(name == oname, Config, "expected tensor `{name}`, found `{oname}`");
            ensure!(
                t.shape() == o.shape(),
                Config,
                "tensor `{name}` has shape {:?}, checkpoint has {:?}",
                t.shape(),
                o.shape()
            );
            let rg = t.requires_grad;
            *t = o.clone().with_grad(rg);
            t.grad = None;
        }
        Ok(())
    }

    /// Values only, for equality checks that ignore gradient buffers.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.len() == other.len()
            && self
                .iter()
                .zip(other.iter())
                .all(|((a, x), (b, y))| a == b && x.shape() == y.shape() && x.data() == y.data())
    }
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for a `fan_in × fan_out` matrix.
pub fn fan_in_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| rng.gen_range(-bound..bound))
}

pub fn uniform(rng: &mut Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

pub fn ones(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.vocab_size > 0, Config, "vocab_size must be positive");
        ensure!(self.d_model > 0 && self.n_layers > 0, Config, "empty model");
        ensure!(
            self.n_heads > 0 && self.d_model.is_multiple_of(self.n_heads),
            Config,
            "d_model {} is not divisible by {} heads",
            self.d_model,
            self.n_heads
        );
        ensure!(self.d_ff > 0 && self.max_len > 0, Config, "d_ff and max_len must be positive");
        Ok(())
    }
}

/// Matrices inside a block that LoRA may target.
const BLOCK_MATRICES: [&str; 6] = ["wq", "wk", "wv", "wo", "w1", "w2"];

/// Low-rank deltas `W + (alpha/r)·B·A` for the attention and FFN projections.
/// `A` is `r × d_in`, `B` is `d_out × r`; `B` starts at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub rank: usize,
    pub alpha: f64,
    pub params: ParamStore,
}

impl LoraAdapter {
    pub fn new(cfg: &ModelConfig, rank: usize, alpha: f64, rng: &mut Rng) -> Result<Self> {
        ensure!(rank > 0, Config, "LoRA rank must be positive");
        let mut params = ParamStore::new();
        for layer in 0..cfg.n_layers {
            for m in BLOCK_MATRICES {
                let (d_in, d_out) = block_matrix_shape(cfg, m);
                let bound = 1.0 / (d_in as f64).sqrt();
                params.push(format!("layers.{layer}.{m}.lora_a"), uniform(rng, &[rank, d_in], bound));
                params.push(format!("layers.{layer}.{m}.lora_b"), Tensor::zeros(&[d_out, rank]));
            }
        }
        params.set_trainable(true);
        Ok(Self { rank, alpha, params })
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Checks that every pair matches the matrix it adapts.
    pub fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        ensure!(
            self.params.len() == cfg.n_layers * BLOCK_MATRICES.len() * 2,
            Config,
            "adapter has {} tensors for {} layers",
            self.params.len(),
            cfg.n_layers
        );
        for layer in 0..cfg.n_layers {
            for (mi, m) in BLOCK_MATRICES.iter().enumerate() {
                let (d_in, d_out) = block_matrix_shape(cfg, m);
                let i = (layer * BLOCK_MATRICES.len() + mi) * 2;
                let (a, b) = (self.params.tensor(i), self.params.tensor(i + 1));
                ensure!(
                    a.shape() == [self.rank, d_in] && b.shape() == [d_out, self.rank],
                    Config,
                    "adapter for layers.{layer}.{m}: A {:?}, B {:?}, expected [{}, {d_in}] and [{d_out}, {}]",
                    a.shape(),
                    b.shape(),
                    self.rank,
                    self.rank
                );
            }
        }
        Ok(())
    }
}

fn block_matrix_shape(cfg: &ModelConfig, m: &str) -> (usize, usize) {
    match m {
        "w1" => (cfg.d_model, cfg.d_ff),
        "w2" => (cfg.d_ff, cfg.d_model),
        _ => (cfg.d_model, cfg.d_model),
    }
}

// Tensor order inside the store.
const TOK: usize = 0;
const POS: usize = 1;
const PER_LAYER: usize = 8; // norm1, wq, wk, wv, wo, norm2, w1, w2
const HEAD_OFFSET_FROM_END: usize = 2; // norm_f, head

/// Pre-norm transformer with learned absolute positions and no biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub config: ModelConfig,
    pub causal: bool,
    pub params: ParamStore,
    pub lora: Option<LoraAdapter>,
}

/// Tape handles for one forward pass.
pub struct Bound {
    base: Vec<Var>,
    lora: Option<Vec<Var>>,
}

impl Bound {
    pub fn base(&self) -> &[Var] {
        &self.base
    }

    pub fn lora(&self) -> Option<&[Var]> {
        self.lora.as_deref()
    }
}

/// Outputs of a forward pass: final normalized hidden rows and logits.
pub struct Forward {
    pub hidden: Var,
    pub logits: Var,
}

impl Transformer {
    pub fn new(config: ModelConfig, causal: bool, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut p = ParamStore::new();
        p.push("tok_emb", uniform(rng, &[config.vocab_size, d], 0.5));
        p.push("pos_emb", uniform(rng, &[config.max_len, d], 0.1));
        for l in 0..config.n_layers {
            p.push(format!("layers.{l}.norm1"), ones(&[d]));
            for m in ["wq", "wk", "wv", "wo"] {
                p.push(format!("layers.{l}.{m}"), fan_in_uniform(rng, d, d));
            }
            p.push(format!("layers.{l}.norm2"), ones(&[d]));
            p.push(format!("layers.{l}.w1"), fan_in_uniform(rng, d, config.d_ff));
            p.push(format!("layers.{l}.w2"), fan_in_uniform(rng, config.d_ff, d));
        }
        p.push("norm_f", ones(&[d]));
        p.push("head", fan_in_uniform(rng, d, config.vocab_size));
        p.set_trainable(true);
        Ok(Self {
            config,
            causal,
            params: p,
            lora: None,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            base: self.params.bind(tape),
            lora: self.lora.as_ref().map(|a| a.params.bind(tape)),
        }
    }

    /// Adds tape gradients into base and adapter buffers.
    pub fn accumulate(&mut self, tape: &Tape, b: &Bound) {
        self.params.accumulate(tape, &b.base);
        if let (Some(a), Some(vars)) = (&mut self.lora, &b.lora) {
            a.params.accumulate(tape, vars);
        }
    }

    pub fn embed_tokens(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Result<Var> {
        tape.embedding(b.base[TOK], ids)
    }

    /// Runs the stack over already-embedded rows (positions are added here).
    pub fn forward(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Forward> {
        let shape = tape.shape(x).to_vec();
        ensure!(
            shape.len() == 2 && shape[1] == self.config.d_model,
            Dimension,
            "input rows {:?} for model width {}",
            shape,
            self.config.d_model
        );
        let len = shape[0];
        ensure!(
            len <= self.config.max_len,
            Contract,
            "sequence of {len} rows exceeds max_len {}",
            self.config.max_len
        );
        let pos = tape.slice_rows(b.base[POS], 0, len)?;
        let mut h = tape.add(x, pos)?;
        for l in 0..self.config.n_layers {
            h = self.block(tape, b, l, h)?;
        }
        let n = b.base.len();
        let hidden = tape.rmsnorm(h, b.base[n - HEAD_OFFSET_FROM_END], NORM_EPS)?;
        let logits = tape.matmul(hidden, b.base[n - 1])?;
        Ok(Forward { hidden, logits })
    }

    pub fn forward_tokens(&self, tape: &mut Tape, b: &Bound, ids: &[usize]) -> Result<Forward> {
        let x = self.embed_tokens(tape, b, ids)?;
        self.forward(tape, b, x)
    }

    fn block(&self, tape: &mut Tape, b: &Bound, layer: usize, x: Var) -> Result<Var> {
        let base = 2 + layer * PER_LAYER;
        let w = |i: usize| b.base[base + i];
        let n1 = tape.rmsnorm(x, w(0), NORM_EPS)?;
        let q = self.project(tape, b, layer, 0, n1, w(1))?;
        let k = self.project(tape, b, layer, 1, n1, w(2))?;
        let v = self.project(tape, b, layer, 2, n1, w(3))?;
        let att = tape.attention(q, k, v, self.config.n_heads, self.causal)?;
        let o = self.project(tape, b, layer, 3, att, w(4))?;
        let h = tape.add(x, o)?;
        let n2 = tape.rmsnorm(h, w(5), NORM_EPS)?;
        let up = self.project(tape, b, layer, 4, n2, w(6))?;
        let act = tape.gelu(up);
        let down = self.project(tape, b, layer, 5, act, w(7))?;
        tape.add(h, down)
    }

    /// `x·W`, plus `scale·(x·Aᵀ)·Bᵀ` when an adapter is attached.
    fn project(&self, tape: &mut Tape, b: &Bound, layer: usize, m: usize, x: Var, w: Var) -> Result<Var> {
        let y = tape.matmul(x, w)?;
        match (&self.lora, &b.lora) {
            (Some(adapter), Some(vars)) => {
                let i = (layer * BLOCK_MATRICES.len() + m) * 2;
                let at = tape.transpose(vars[i])?;
                let bt = tape.transpose(vars[i + 1])?;
                let xa = tape.matmul(x, at)?;
                let delta = tape.matmul(xa, bt)?;
                let delta = tape.scale(delta, adapter.scale());
                tape.add(y, delta)
            }
            _ => Ok(y),
        }
    }

    /// Attaches `adapter` after checking its shapes.
    pub fn apply_lora(&mut self, adapter: LoraAdapter) -> Result<()> {
        adapter.check_against(&self.config)?;
        self.lora = Some(adapter);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
        if let Some(a) = &mut self.lora {
            a.params.zero_grad();
        }
    }

    /// Tensor index of the token embedding table inside `params`.
    pub const TOKEN_EMBEDDING: usize = TOK;
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::tensor::Precision;
    use crate::Error;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            d_model: 8,
            n_layers: 2,
            n_heads: 2,
            d_ff: 16,
            max_len: 12,
        }
    }

    fn logits(m: &Transformer, ids: &[usize]) -> Vec<f64> {
        let mut tape = Tape::new(Precision::F64);
        let b = m.bind(&mut tape);
        let f = m.forward_tokens(&mut tape, &b, ids).unwrap();
        tape.value(f.logits).to_vec()
    }

    #[test]
    fn causal_model_ignores_the_future() {
        let m = Transformer::new(cfg(), true, &mut stream_rng(1, "init")).unwrap();
        let a = logits(&m, &[1, 2, 3, 4, 5]);
        let b = logits(&m, &[1, 2, 3, 9, 5]);
        let v = cfg().vocab_size;
        assert_eq!(a[..3 * v], b[..3 * v]);
        assert_ne!(a[3 * v..], b[3 * v..]);
    }

    #[test]
    fn bidirectional_model_sees_the_right() {
        let m = Transformer::new(cfg(), false, &mut stream_rng(1, "init")).unwrap();
        let a = logits(&m, &[1, 2, 3, 4, 5]);
        let b = logits(&m, &[1, 2, 3, 4, 9]);
        assert_ne!(a[..cfg().vocab_size], b[..cfg().vocab_size]);
    }

    #[test]
    fn zero_b_adapter_is_bit_identical() {
        let mut rng = stream_rng(2, "init");
        let mut m = Transformer::new(cfg(), true, &mut rng).unwrap();
        let base = logits(&m, &[3, 1, 4, 1, 5]);
        m.apply_lora(LoraAdapter::new(&cfg(), 4, 16.0, &mut rng).unwrap()).unwrap();
        assert_eq!(logits(&m, &[3, 1, 4, 1, 5]), base);
    }

    #[test]
    fn adapter_shape_mismatch_is_a_config_error() {
        let mut rng = stream_rng(2, "init");
        let mut m = Transformer::new(cfg(), true, &mut rng).unwrap();
        let other = ModelConfig { d_ff: 24, ..cfg() };
        let a = LoraAdapter::new(&other, 2, 8.0, &mut rng).unwrap();
        assert!(matches!(m.apply_lora(a), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_sequences_longer_than_positions() {
        let m = Transformer::new(cfg(), true, &mut stream_rng(1, "init")).unwrap();
        let mut tape = Tape::new(Precision::F64);
        let b = m.bind(&mut tape);
        assert!(m.forward_tokens(&mut tape, &b, &[1; 13]).is_err());
    }

    #[test]
    fn full_rank_adapter_reaches_any_delta() {
        // With r = d, A = I and B = D/scale give W + D exactly.
        let c = ModelConfig { n_layers: 1, ..cfg() };
        let mut rng = stream_rng(3, "init");
        let mut m = Transformer::new(c, true, &mut rng).unwrap();
        let mut target = m.clone();
        let d = c.d_model;
        let delta: Vec<f64> = (0..d * d).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.125).collect();
        let wq = 3; // tok, pos, norm1, wq
        for (w, dv) in target.params.tensor_mut(wq).data_mut().iter_mut().zip(&delta) {
            *w += dv;
        }
        let mut a = LoraAdapter::new(&c, d, 2.0 * d as f64, &mut rng).unwrap();
        let s = a.scale();
        for (i, v) in a.params.tensor_mut(0).data_mut().iter_mut().enumerate() {
            *v = if i / d == i % d { 1.0 } else { 0.0 };
        }
        // (B·A)ᵀ must equal delta in the x·W convention, so B = deltaᵀ / s.
        for (i, v) in a.params.tensor_mut(1).data_mut().iter_mut().enumerate() {
            let (r, c) = (i / d, i % d);
            *v = delta[c * d + r] / s;
        }
        m.apply_lora(a).unwrap();
        let (x, y) = (logits(&m, &[1, 2, 3]), logits(&target, &[1, 2, 3]));
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_first_tie() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}

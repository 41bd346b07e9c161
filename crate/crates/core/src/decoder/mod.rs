//! Toy causal decoder stack with per-block taps and state injection.
//!
//! The stack is a pre-norm transformer: RMS norm, multi-head causal
//! attention with rotary position encoding, a residual add, RMS norm,
//! a SiLU MLP and another residual add. There is no KV cache; every
//! forward pass recomputes the whole context.

mod io;
mod tokenizer;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::ShapeError;
use crate::numeric::{self, argmax, causal_attention, matmul, rms_norm, vec_matmul, Tensor2D};

pub use io::{load_stack, save_stack, FormatError, STACK_FORMAT_VERSION, STACK_MAGIC};
pub use tokenizer::ByteTokenizer;

/// Hidden size multiplier of the MLP.
pub const MLP_EXPANSION: usize = 4;
const ROPE_BASE: f32 = 10_000.0;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("token {token} is outside the vocabulary of size {vocab_size}")]
    Vocab { token: u32, vocab_size: usize },
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("layer index {layer} is outside 1..={num_layers}")]
    InvalidLayer { layer: usize, num_layers: usize },
    #[error("invalid stack dimensions: {0}")]
    InvalidDims(String),
    #[error("non-finite values after {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StackDims {
    pub num_layers: usize,
    pub model_dim: usize,
    pub vocab_size: usize,
    pub num_heads: usize,
}

impl StackDims {
    /// Small default used for experiments on a laptop.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            num_layers: 4,
            model_dim: 64,
            vocab_size,
            num_heads: 4,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn ff_dim(&self) -> usize {
        self.model_dim * MLP_EXPANSION
    }

    pub fn validate(&self) -> Result<(), DecoderError> {
        if self.num_layers == 0 || self.model_dim == 0 || self.num_heads == 0 {
            return Err(DecoderError::InvalidDims(format!(
                "zero-sized dimension in {self:?}"
            )));
        }
        if self.vocab_size < 2 {
            return Err(DecoderError::InvalidDims(format!(
                "vocab_size must be at least 2, got {}",
                self.vocab_size
            )));
        }
        if !self.model_dim.is_multiple_of(self.num_heads) || !self.head_dim().is_multiple_of(2) {
            return Err(DecoderError::InvalidDims(format!(
                "model_dim {} must split into an even head dimension across {} heads",
                self.model_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Weights of one decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub attn_norm: Vec<f32>,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub mlp_norm: Vec<f32>,
    pub w_up: Tensor2D,
    pub w_down: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStack {
    dims: StackDims,
    token_embeddings: Tensor2D,
    blocks: Vec<Block>,
    final_norm: Vec<f32>,
    head: Tensor2D,
}

/// Ordered token indices fed to a stack.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, token: u32) {
        self.0.push(token);
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(tokens: Vec<u32>) -> Self {
        Self(tokens)
    }
}

/// Hidden state emitted after a block, before any injection is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTapRecord {
    /// 1-based block index.
    pub layer_index: usize,
    pub last_token_state: Vec<f32>,
    pub full_states: Option<Tensor2D>,
}

/// Replacement applied to the hidden states after a block.
#[derive(Debug, Clone, PartialEq)]
pub enum Injection {
    /// Replace only the last position.
    LastToken(Vec<f32>),
    /// Replace every position.
    AllPositions(Tensor2D),
}

impl Injection {
    pub fn apply(&self, states: &mut Tensor2D) -> Result<(), ShapeError> {
        match self {
            Injection::LastToken(v) => {
                if v.len() != states.cols() {
                    return Err(ShapeError::new("injection vector", states.cols(), v.len()));
                }
                let last = states.rows() - 1;
                states.row_mut(last).copy_from_slice(v);
            }
            Injection::AllPositions(t) => {
                if t.shape() != states.shape() {
                    return Err(ShapeError::new(
                        "injection matrix size",
                        states.rows() * states.cols(),
                        t.rows() * t.cols(),
                    ));
                }
                *states = t.clone();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TapMode {
    #[default]
    LastToken,
    Full,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub taps: Vec<LayerTapRecord>,
    pub logits: Vec<f32>,
}

impl DecoderStack {
    /// Assembles a stack from explicit weights, checking every shape.
    pub fn from_parts(
        dims: StackDims,
        token_embeddings: Tensor2D,
        blocks: Vec<Block>,
        final_norm: Vec<f32>,
        head: Tensor2D,
    ) -> Result<Self, DecoderError> {
        dims.validate()?;
        let d = dims.model_dim;
        let ff = dims.ff_dim();
        let expect = |what: &'static str, t: &Tensor2D, rows: usize, cols: usize| {
            if t.rows() != rows {
                return Err(ShapeError::new(what, rows, t.rows()));
            }
            if t.cols() != cols {
                return Err(ShapeError::new(what, cols, t.cols()));
            }
            Ok(())
        };
        let expect_len = |what: &'static str, v: &[f32], len: usize| {
            if v.len() != len {
                return Err(ShapeError::new(what, len, v.len()));
            }
            Ok(())
        };
        expect("token embeddings", &token_embeddings, dims.vocab_size, d)?;
        if blocks.len() != dims.num_layers {
            return Err(ShapeError::new("block count", dims.num_layers, blocks.len()).into());
        }
        for b in &blocks {
            expect_len("attention norm gain", &b.attn_norm, d)?;
            expect("query projection", &b.wq, d, d)?;
            expect("key projection", &b.wk, d, d)?;
            expect("value projection", &b.wv, d, d)?;
            expect("output projection", &b.wo, d, d)?;
            expect_len("mlp norm gain", &b.mlp_norm, d)?;
            expect("mlp up projection", &b.w_up, d, ff)?;
            expect("mlp down projection", &b.w_down, ff, d)?;
        }
        expect_len("final norm gain", &final_norm, d)?;
        expect("head weights", &head, d, dims.vocab_size)?;
        Ok(Self {
            dims,
            token_embeddings,
            blocks,
            final_norm,
            head,
        })
    }

    /// Deterministic pseudo-random weights: the same seed always yields a
    /// bit-identical stack.
    pub fn seed_init(dims: StackDims, seed: u64) -> Result<Self, DecoderError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.model_dim;
        let ff = dims.ff_dim();
        let mut uniform = |rows: usize, cols: usize, scale: f32| {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-scale..scale))
                .collect();
            Tensor2D::new(rows, cols, data).expect("sized by construction")
        };
        let proj = 1.0 / (d as f32).sqrt();
        let token_embeddings = uniform(dims.vocab_size, d, 1.0);
        let mut blocks = Vec::with_capacity(dims.num_layers);
        for _ in 0..dims.num_layers {
            let attn_norm = uniform(1, d, 0.1).into_data();
            let wq = uniform(d, d, proj);
            let wk = uniform(d, d, proj);
            let wv = uniform(d, d, proj);
            let wo = uniform(d, d, proj);
            let mlp_norm = uniform(1, d, 0.1).into_data();
            let w_up = uniform(d, ff, proj);
            let w_down = uniform(ff, d, 1.0 / (ff as f32).sqrt());
            blocks.push(Block {
                attn_norm: attn_norm.into_iter().map(|g| 1.0 + g).collect(),
                wq,
                wk,
                wv,
                wo,
                mlp_norm: mlp_norm.into_iter().map(|g| 1.0 + g).collect(),
                w_up,
                w_down,
            });
        }
        let final_norm = uniform(1, d, 0.1)
            .into_data()
            .into_iter()
            .map(|g| 1.0 + g)
            .collect();
        let head = uniform(d, dims.vocab_size, 2.0 * proj);
        Self::from_parts(dims, token_embeddings, blocks, final_norm, head)
    }

    pub fn dims(&self) -> StackDims {
        self.dims
    }

    pub fn num_layers(&self) -> usize {
        self.dims.num_layers
    }

    pub fn model_dim(&self) -> usize {
        self.dims.model_dim
    }

    pub fn vocab_size(&self) -> usize {
        self.dims.vocab_size
    }

    pub fn token_embeddings(&self) -> &Tensor2D {
        &self.token_embeddings
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn final_norm_gain(&self) -> &[f32] {
        &self.final_norm
    }

    pub fn head_weights(&self) -> &Tensor2D {
        &self.head
    }

    /// Embedding lookup for every position of `seq`.
    pub fn embed(&self, seq: &TokenSequence) -> Result<Tensor2D, DecoderError> {
        if seq.is_empty() {
            return Err(DecoderError::EmptySequence);
        }
        let d = self.dims.model_dim;
        let mut data = Vec::with_capacity(seq.len() * d);
        for &tok in seq.tokens() {
            if tok as usize >= self.dims.vocab_size {
                return Err(DecoderError::Vocab {
                    token: tok,
                    vocab_size: self.dims.vocab_size,
                });
            }
            data.extend_from_slice(self.token_embeddings.row(tok as usize));
        }
        Ok(Tensor2D::new(seq.len(), d, data)?)
    }

    /// Runs block `layer` (1-based) over the full hidden-state matrix.
    pub fn block_forward(&self, layer: usize, states: &Tensor2D) -> Result<Tensor2D, DecoderError> {
        if layer == 0 || layer > self.dims.num_layers {
            return Err(DecoderError::InvalidLayer {
                layer,
                num_layers: self.dims.num_layers,
            });
        }
        let d = self.dims.model_dim;
        if states.cols() != d {
            return Err(ShapeError::new("hidden state width", d, states.cols()).into());
        }
        let block = &self.blocks[layer - 1];
        let seq = states.rows();

        let normed = rows_rms_norm(states, &block.attn_norm)?;
        let mut q = matmul(&normed, &block.wq)?;
        let mut k = matmul(&normed, &block.wk)?;
        let v = matmul(&normed, &block.wv)?;
        let hd = self.dims.head_dim();
        apply_rope(&mut q, self.dims.num_heads, hd);
        apply_rope(&mut k, self.dims.num_heads, hd);

        let scale = 1.0 / (hd as f32).sqrt();
        let mut attn = Tensor2D::zeros(seq, d);
        for h in 0..self.dims.num_heads {
            let start = h * hd;
            let out = causal_attention(
                &q.col_slice(start, hd),
                &k.col_slice(start, hd),
                &v.col_slice(start, hd),
                scale,
            )?;
            for r in 0..seq {
                attn.row_mut(r)[start..start + hd].copy_from_slice(out.row(r));
            }
        }
        let attn_out = matmul(&attn, &block.wo)?;
        let mut hidden = add(states, &attn_out);

        let normed = rows_rms_norm(&hidden, &block.mlp_norm)?;
        let mut up = matmul(&normed, &block.w_up)?;
        for x in up.data_mut() {
            *x = silu(*x);
        }
        let down = matmul(&up, &block.w_down)?;
        hidden = add(&hidden, &down);
        if !hidden.is_finite() {
            return Err(DecoderError::NonFinite("decoder block"));
        }
        Ok(hidden)
    }

    /// Final RMS norm of a single hidden state.
    pub fn final_features(&self, state: &[f32]) -> Result<Vec<f32>, DecoderError> {
        Ok(rms_norm(state, &self.final_norm)?)
    }

    /// `features · head_weights`.
    pub fn head_logits(&self, features: &[f32]) -> Result<Vec<f32>, DecoderError> {
        let logits = vec_matmul(features, &self.head)?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(DecoderError::NonFinite("head projection"));
        }
        Ok(logits)
    }

    /// Full-context forward pass. After each block a tap is recorded; if
    /// `injections` holds an entry for that block the hidden states are
    /// replaced before the next block runs.
    pub fn forward_full(
        &self,
        seq: &TokenSequence,
        injections: &BTreeMap<usize, Injection>,
        tap_mode: TapMode,
    ) -> Result<ForwardOutput, DecoderError> {
        if let Some((&layer, _)) = injections
            .iter()
            .find(|(&l, _)| l == 0 || l > self.dims.num_layers)
        {
            return Err(DecoderError::InvalidLayer {
                layer,
                num_layers: self.dims.num_layers,
            });
        }
        let mut states = self.embed(seq)?;
        let mut taps = Vec::with_capacity(self.dims.num_layers);
        for layer in 1..=self.dims.num_layers {
            states = self.block_forward(layer, &states)?;
            taps.push(LayerTapRecord {
                layer_index: layer,
                last_token_state: last_row(&states).to_vec(),
                full_states: (tap_mode == TapMode::Full).then(|| states.clone()),
            });
            if let Some(inj) = injections.get(&layer) {
                inj.apply(&mut states)?;
            }
        }
        let features = self.final_features(last_row(&states))?;
        let logits = self.head_logits(&features)?;
        Ok(ForwardOutput { taps, logits })
    }

    /// Logits for the next token with no injections.
    pub fn next_logits(&self, seq: &TokenSequence) -> Result<Vec<f32>, DecoderError> {
        Ok(self
            .forward_full(seq, &BTreeMap::new(), TapMode::LastToken)?
            .logits)
    }

    /// Greedy decoding on this stack alone.
    pub fn greedy_decode(
        &self,
        prompt: &TokenSequence,
        max_new_tokens: usize,
        end_token: Option<u32>,
    ) -> Result<Vec<u32>, DecoderError> {
        let mut ctx = prompt.clone();
        let mut generated = Vec::new();
        for _ in 0..max_new_tokens {
            let logits = self.next_logits(&ctx)?;
            let tok = greedy_select(&logits, 0)?;
            if Some(tok) == end_token {
                break;
            }
            generated.push(tok);
            ctx.push(tok);
        }
        Ok(generated)
    }
}

/// Picks the highest-scoring token, lowest index on ties. The seed is kept
/// for sampling extensions; greedy selection never reads it.
pub fn greedy_select(logits: &[f32], _seed: u64) -> Result<u32, DecoderError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(DecoderError::NonFinite("logits"));
    }
    argmax(logits)
        .map(|i| i as u32)
        .ok_or_else(|| ShapeError::new("logits length", 1, 0).into())
}

pub(crate) fn last_row(t: &Tensor2D) -> &[f32] {
    t.row(t.rows() - 1)
}

fn rows_rms_norm(states: &Tensor2D, gain: &[f32]) -> Result<Tensor2D, ShapeError> {
    let mut data = Vec::with_capacity(states.rows() * states.cols());
    for r in 0..states.rows() {
        data.extend(numeric::rms_norm(states.row(r), gain)?);
    }
    Tensor2D::new(states.rows(), states.cols(), data)
}

fn add(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor2D::new(a.rows(), a.cols(), data).expect("operands share a shape")
}

fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Rotary position encoding applied in place to each head's column block.
fn apply_rope(t: &mut Tensor2D, num_heads: usize, head_dim: usize) {
    let half = head_dim / 2;
    for pos in 0..t.rows() {
        let row = t.row_mut(pos);
        for h in 0..num_heads {
            let base = h * head_dim;
            for i in 0..half {
                let freq = ROPE_BASE.powf(-((2 * i) as f32) / head_dim as f32);
                let (sin, cos) = (pos as f32 * freq).sin_cos();
                let a = row[base + 2 * i];
                let b = row[base + 2 * i + 1];
                row[base + 2 * i] = a * cos - b * sin;
                row[base + 2 * i + 1] = a * sin + b * cos;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> StackDims {
        StackDims {
            num_layers: 2,
            model_dim: 16,
            vocab_size: 40,
            num_heads: 2,
        }
    }

    #[test]
    fn logits_shape_for_single_token() {
        let stack = DecoderStack::seed_init(small_dims(), 3).unwrap();
        let logits = stack.next_logits(&TokenSequence::new(vec![5])).unwrap();
        assert_eq!(logits.len(), 40);
    }

    #[test]
    fn self_injection_is_noop() {
        let stack = DecoderStack::seed_init(small_dims(), 9).unwrap();
        let seq = TokenSequence::new(vec![1, 2, 3, 4]);
        let base = stack
            .forward_full(&seq, &BTreeMap::new(), TapMode::Full)
            .unwrap();
        let mut inj = BTreeMap::new();
        for tap in &base.taps {
            inj.insert(
                tap.layer_index,
                Injection::LastToken(tap.last_token_state.clone()),
            );
        }
        let again = stack.forward_full(&seq, &inj, TapMode::LastToken).unwrap();
        assert_eq!(base.logits, again.logits);
        let full: BTreeMap<_, _> = base
            .taps
            .iter()
            .map(|t| {
                (
                    t.layer_index,
                    Injection::AllPositions(t.full_states.clone().unwrap()),
                )
            })
            .collect();
        assert_eq!(
            stack
                .forward_full(&seq, &full, TapMode::LastToken)
                .unwrap()
                .logits,
            base.logits
        );
    }

    #[test]
    fn zero_injection_at_final_layer_erases_prompt() {
        let stack = DecoderStack::seed_init(small_dims(), 11).unwrap();
        let mut inj = BTreeMap::new();
        inj.insert(2, Injection::LastToken(vec![0.0; 16]));
        let a = stack
            .forward_full(&TokenSequence::new(vec![1, 2, 3]), &inj, TapMode::LastToken)
            .unwrap();
        let b = stack
            .forward_full(&TokenSequence::new(vec![30]), &inj, TapMode::LastToken)
            .unwrap();
        assert_eq!(a.logits, b.logits);
        // final-norm(0) is the zero vector, so every logit is zero.
        assert!(a.logits.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn tap_last_state_matches_full_states() {
        let stack = DecoderStack::seed_init(small_dims(), 1).unwrap();
        let out = stack
            .forward_full(
                &TokenSequence::new(vec![7, 8, 9]),
                &BTreeMap::new(),
                TapMode::Full,
            )
            .unwrap();
        for tap in &out.taps {
            let full = tap.full_states.as_ref().unwrap();
            assert_eq!(full.row(full.rows() - 1), tap.last_token_state.as_slice());
        }
    }

    #[test]
    fn prefix_recomputation_matches() {
        let stack = DecoderStack::seed_init(small_dims(), 5).unwrap();
        let long = stack
            .forward_full(
                &TokenSequence::new(vec![3, 1, 4, 1, 5]),
                &BTreeMap::new(),
                TapMode::Full,
            )
            .unwrap();
        let short = stack
            .forward_full(
                &TokenSequence::new(vec![3, 1, 4]),
                &BTreeMap::new(),
                TapMode::Full,
            )
            .unwrap();
        for (l, s) in long.taps.iter().zip(&short.taps) {
            let lf = l.full_states.as_ref().unwrap();
            let sf = s.full_states.as_ref().unwrap();
            for r in 0..3 {
                assert_eq!(lf.row(r), sf.row(r));
            }
        }
    }

    #[test]
    fn bad_inputs_rejected() {
        let stack = DecoderStack::seed_init(small_dims(), 5).unwrap();
        assert!(matches!(
            stack.next_logits(&TokenSequence::new(vec![40])),
            Err(DecoderError::Vocab { token: 40, .. })
        ));
        assert!(matches!(
            stack.next_logits(&TokenSequence::default()),
            Err(DecoderError::EmptySequence)
        ));
        let mut inj = BTreeMap::new();
        inj.insert(1, Injection::LastToken(vec![0.0; 3]));
        assert!(matches!(
            stack.forward_full(&TokenSequence::new(vec![1]), &inj, TapMode::LastToken),
            Err(DecoderError::Shape(_))
        ));
        let mut inj = BTreeMap::new();
        inj.insert(3, Injection::LastToken(vec![0.0; 16]));
        assert!(matches!(
            stack.forward_full(&TokenSequence::new(vec![1]), &inj, TapMode::LastToken),
            Err(DecoderError::InvalidLayer { layer: 3, .. })
        ));
    }

    #[test]
    fn greedy_select_cases() {
        assert_eq!(greedy_select(&[0.1, 0.9, 0.3], 42).unwrap(), 1);
        assert_eq!(greedy_select(&[0.5, 0.5], 42).unwrap(), 0);
        assert!(greedy_select(&[], 42).is_err());
        let logits = [0.3, -1.2, 2.5, 2.4];
        let probs = numeric::softmax(&logits).unwrap();
        assert_eq!(
            greedy_select(&logits, 1).unwrap(),
            greedy_select(&probs, 7).unwrap()
        );
    }

    #[test]
    fn seed_init_determinism() {
        let a = DecoderStack::seed_init(small_dims(), 42).unwrap();
        let b = DecoderStack::seed_init(small_dims(), 42).unwrap();
        let c = DecoderStack::seed_init(small_dims(), 2).unwrap();
        let d = DecoderStack::seed_init(small_dims(), 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(c, d);
    }

    #[test]
    fn seed_init_rejects_zero_dims() {
        let mut dims = small_dims();
        dims.num_layers = 0;
        assert!(DecoderStack::seed_init(dims, 1).is_err());
        let mut dims = small_dims();
        dims.vocab_size = 1;
        assert!(DecoderStack::seed_init(dims, 1).is_err());
    }

    #[test]
    fn logits_finite_for_random_prompts() {
        use rand::Rng;
        let stack = DecoderStack::seed_init(StackDims::toy(256), 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for len in 1..=32 {
            let seq: Vec<u32> = (0..len).map(|_| rng.random_range(0..256)).collect();
            let logits = stack.next_logits(&TokenSequence::new(seq)).unwrap();
            assert!(logits.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let stack = DecoderStack::seed_init(small_dims(), 8).unwrap();
        let prompt = TokenSequence::new(vec![2, 4, 6]);
        let a = stack.greedy_decode(&prompt, 6, None).unwrap();
        let b = stack.greedy_decode(&prompt, 6, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }
}

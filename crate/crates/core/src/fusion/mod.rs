//! Lockstep decoding of two decoder stacks with weighted feature merging.
//!
//! Both branches run block by block over their own contexts. After every
//! configured merge layer the branches' last-token states are combined by
//! weighted sum and written back: always into the LLM branch, and into the
//! LVLM branch unless `isolate_lvlm` is set. If the final block is a merge
//! layer, the merge happens after each branch's final norm instead, and the
//! merged feature is projected through the weighted sum of both heads.
//! Without a final merge the head reads the LLM branch alone.
//!
//! Score-distribution fusion and text-level fusion through a third model
//! are deliberately absent.

mod config;

use thiserror::Error;

use crate::decoder::{greedy_select, last_row, DecoderError, DecoderStack, TokenSequence};
use crate::error::ShapeError;
use crate::numeric::{vec_matmul, Tensor2D};

pub use config::{
    effective_layer_weights, FusionConfig, MergeMode, WeightPair, DEFAULT_MAX_NEW_TOKENS,
    DEFAULT_SEED,
};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("incompatible stacks: {0}")]
    Incompatible(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
}

/// Shared prefix of two vocabularies. Indices below `shared_size` denote
/// the same token in both.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabAlignment {
    pub shared_size: usize,
    pub note: String,
}

pub fn align_vocab(vocab_llm: usize, vocab_lvlm: usize) -> VocabAlignment {
    let shared_size = vocab_llm.min(vocab_lvlm);
    let note = match vocab_llm.cmp(&vocab_lvlm) {
        std::cmp::Ordering::Equal => "vocabularies identical".to_string(),
        std::cmp::Ordering::Greater => format!(
            "LLM tokens {shared_size}..{vocab_llm} have no LVLM counterpart and are dropped"
        ),
        std::cmp::Ordering::Less => format!(
            "LVLM tokens {shared_size}..{vocab_lvlm} have no LLM counterpart and are dropped"
        ),
    };
    VocabAlignment { shared_size, note }
}

/// `p.llm * w_llm + p.lvlm * w_lvlm` over the shared vocabulary columns.
pub fn combine_heads(
    w_llm: &Tensor2D,
    w_lvlm: &Tensor2D,
    p: WeightPair,
    align: &VocabAlignment,
) -> Result<Tensor2D, ShapeError> {
    if w_llm.rows() != w_lvlm.rows() {
        return Err(ShapeError::new(
            "head model dimension",
            w_llm.rows(),
            w_lvlm.rows(),
        ));
    }
    let a = w_llm.truncate_cols(align.shared_size)?;
    let b = w_lvlm.truncate_cols(align.shared_size)?;
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| p.llm * x + p.lvlm * y)
        .collect();
    Tensor2D::new(a.rows(), a.cols(), data)
}

/// `w.llm * h_llm + w.lvlm * h_lvlm`.
pub fn merge_features(
    h_llm: &[f32],
    h_lvlm: &[f32],
    w: WeightPair,
) -> Result<Vec<f32>, ShapeError> {
    if h_llm.len() != h_lvlm.len() {
        return Err(ShapeError::new(
            "merged feature length",
            h_llm.len(),
            h_lvlm.len(),
        ));
    }
    Ok(h_llm
        .iter()
        .zip(h_lvlm)
        .map(|(x, y)| w.llm * x + w.lvlm * y)
        .collect())
}

/// One merge that happened during a forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeEvent {
    pub layer: usize,
    pub weights: WeightPair,
    /// True for the final-block merge taken after the final norms.
    pub post_norm: bool,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Vec<f32>,
    pub merges: Vec<MergeEvent>,
}

#[derive(Debug, Clone)]
pub struct FusedOutput {
    pub tokens: Vec<u32>,
    /// Logits of the last decoding step.
    pub final_logits: Vec<f32>,
    pub stopped_on_end_token: bool,
}

/// Two validated stacks plus everything precomputed for one config.
#[derive(Debug)]
pub struct FusionEngine<'a> {
    llm: &'a DecoderStack,
    lvlm: &'a DecoderStack,
    config: FusionConfig,
    merge_layers: Vec<usize>,
    alignment: VocabAlignment,
    combined_head: Tensor2D,
}

impl<'a> FusionEngine<'a> {
    pub fn new(
        llm: &'a DecoderStack,
        lvlm: &'a DecoderStack,
        config: FusionConfig,
    ) -> Result<Self, FusionError> {
        check_compatible(llm, lvlm)?;
        config.validate()?;
        let merge_layers = config.resolved_merge_layers(llm.num_layers())?;
        let alignment = align_vocab(llm.vocab_size(), lvlm.vocab_size());
        let combined_head = combine_heads(
            llm.head_weights(),
            lvlm.head_weights(),
            config.head_weights,
            &alignment,
        )?;
        Ok(Self {
            llm,
            lvlm,
            config,
            merge_layers,
            alignment,
            combined_head,
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn alignment(&self) -> &VocabAlignment {
        &self.alignment
    }

    pub fn combined_head(&self) -> &Tensor2D {
        &self.combined_head
    }

    /// Merge layers as resolved 1-based indices.
    pub fn merge_layers(&self) -> &[usize] {
        &self.merge_layers
    }

    fn layer_weights(&self, layer: usize) -> WeightPair {
        let final_merge = *self
            .merge_layers
            .last()
            .expect("called only for merge layers");
        if self.config.sum_all && layer != final_merge {
            WeightPair::ONES
        } else {
            self.config.feature_weights
        }
    }

    /// One full-context forward step of both branches.
    pub fn step(
        &self,
        llm_ctx: &TokenSequence,
        lvlm_ctx: &TokenSequence,
    ) -> Result<StepOutput, FusionError> {
        let num_layers = self.llm.num_layers();
        let mut h_llm = self.llm.embed(llm_ctx)?;
        let mut h_lvlm = self.lvlm.embed(lvlm_ctx)?;
        let mut merges = Vec::new();
        let final_merged = self.merge_layers.last() == Some(&num_layers);

        for layer in 1..=num_layers {
            h_llm = self.llm.block_forward(layer, &h_llm)?;
            h_lvlm = self.lvlm.block_forward(layer, &h_lvlm)?;
            if layer == num_layers || !self.merge_layers.contains(&layer) {
                continue;
            }
            let w = self.layer_weights(layer);
            merges.push(MergeEvent {
                layer,
                weights: w,
                post_norm: false,
            });
            let last_llm = last_row(&h_llm).to_vec();
            let last_lvlm = last_row(&h_lvlm).to_vec();
            match self.config.merge_mode {
                MergeMode::Pairwise => {
                    let m = merge_features(&last_llm, &last_lvlm, w)?;
                    let r = h_llm.rows() - 1;
                    h_llm.row_mut(r).copy_from_slice(&m);
                    if !self.config.isolate_lvlm {
                        let r = h_lvlm.rows() - 1;
                        h_lvlm.row_mut(r).copy_from_slice(&m);
                    }
                }
                MergeMode::Broadcast => {
                    for r in 0..h_llm.rows() {
                        let m = merge_features(h_llm.row(r), &last_lvlm, w)?;
                        h_llm.row_mut(r).copy_from_slice(&m);
                    }
                    if !self.config.isolate_lvlm {
                        for r in 0..h_lvlm.rows() {
                            let m = merge_features(&last_llm, h_lvlm.row(r), w)?;
                            h_lvlm.row_mut(r).copy_from_slice(&m);
                        }
                    }
                }
            }
        }

        let f_llm = self.llm.final_features(last_row(&h_llm))?;
        let features = if final_merged {
            let w = self.layer_weights(num_layers);
            merges.push(MergeEvent {
                layer: num_layers,
                weights: w,
                post_norm: true,
            });
            let f_lvlm = self.lvlm.final_features(last_row(&h_lvlm))?;
            merge_features(&f_llm, &f_lvlm, w)?
        } else {
            f_llm
        };
        let logits = vec_matmul(&features, &self.combined_head)?;
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(DecoderError::NonFinite("combined head").into());
        }
        Ok(StepOutput { logits, merges })
    }

    /// Greedy lockstep decoding; each selected token is appended to both
    /// branch contexts.
    pub fn decode(
        &self,
        llm_prompt: &TokenSequence,
        lvlm_prompt: &TokenSequence,
        end_token: Option<u32>,
    ) -> Result<FusedOutput, FusionError> {
        if llm_prompt.is_empty() || lvlm_prompt.is_empty() {
            return Err(FusionError::Precondition(
                "both prompts must be non-empty".into(),
            ));
        }
        let mut llm_ctx = llm_prompt.clone();
        let mut lvlm_ctx = lvlm_prompt.clone();
        let mut tokens = Vec::new();
        let mut final_logits = Vec::new();
        let mut stopped_on_end_token = false;
        for _ in 0..self.config.max_new_tokens {
            let step = self.step(&llm_ctx, &lvlm_ctx)?;
            let tok = greedy_select(&step.logits, self.config.seed)?;
            final_logits = step.logits;
            if Some(tok) == end_token {
                stopped_on_end_token = true;
                break;
            }
            tokens.push(tok);
            llm_ctx.push(tok);
            lvlm_ctx.push(tok);
        }
        Ok(FusedOutput {
            tokens,
            final_logits,
            stopped_on_end_token,
        })
    }
}

pub fn check_compatible(llm: &DecoderStack, lvlm: &DecoderStack) -> Result<(), FusionError> {
    if llm.num_layers() != lvlm.num_layers() {
        return Err(FusionError::Incompatible(format!(
            "layer counts differ: {} vs {}",
            llm.num_layers(),
            lvlm.num_layers()
        )));
    }
    if llm.model_dim() != lvlm.model_dim() {
        return Err(FusionError::Incompatible(format!(
            "model dimensions differ: {} vs {}",
            llm.model_dim(),
            lvlm.model_dim()
        )));
    }
    Ok(())
}

/// Convenience wrapper: build an engine and decode once.
pub fn fused_decode(
    llm: &DecoderStack,
    lvlm: &DecoderStack,
    llm_prompt: &TokenSequence,
    lvlm_prompt: &TokenSequence,
    config: &FusionConfig,
    end_token: Option<u32>,
) -> Result<FusedOutput, FusionError> {
    FusionEngine::new(llm, lvlm, config.clone())?.decode(llm_prompt, lvlm_prompt, end_token)
}

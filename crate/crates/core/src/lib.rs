//! Dual decoder-stack fusion.
//!
//! * [`numeric`]: deterministic f32 kernels.
//! * [`decoder`]: toy causal decoder with per-block taps and injections.
//! * [`fusion`]: lockstep decoding of two stacks with weighted feature
//!   merging and a combined classification head.
//! * [`scene`]: detections, depth maps and sign embeddings turned into the
//!   object block of a language-model prompt.

pub mod decoder;
pub mod error;
pub mod fusion;
pub mod numeric;
pub mod scene;

pub use decoder::{ByteTokenizer, DecoderError, DecoderStack, StackDims, TokenSequence};
pub use error::ShapeError;
pub use fusion::{fused_decode, FusionConfig, FusionEngine, FusionError, MergeMode, WeightPair};
pub use numeric::Tensor2D;

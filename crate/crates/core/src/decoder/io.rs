//! Binary weight file for [`DecoderStack`].
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic        8 bytes  "DFSTACK\0"
//! version      u32
//! num_layers   u32
//! model_dim    u32
//! vocab_size   u32
//! num_heads    u32
//! tensors      repeated: rows u32, cols u32, rows*cols f32 (row-major)
//! ```
//!
//! Tensor order: token embeddings, then per block attention norm gain,
//! wq, wk, wv, wo, mlp norm gain, mlp up, mlp down, then the final norm
//! gain and the head weights. Norm gains are stored as `1 x model_dim`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Block, DecoderStack, StackDims};
use crate::numeric::Tensor2D;

pub const STACK_MAGIC: &[u8; 8] = b"DFSTACK\0";
pub const STACK_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes, not a stack weight file")]
    BadMagic,
    #[error("unsupported format version {found} (expected {STACK_FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("invalid header field {field}: {reason}")]
    InvalidHeader { field: &'static str, reason: String },
    #[error("file truncated while reading {field}")]
    Truncated { field: String },
    #[error("tensor {tensor} has shape {found_rows}x{found_cols}, header implies {expected_rows}x{expected_cols}")]
    Inconsistent {
        tensor: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
    #[error("tensor {tensor} contains non-finite values")]
    NonFinite { tensor: String },
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
}

pub fn save_stack(stack: &DecoderStack, path: impl AsRef<Path>) -> Result<(), FormatError> {
    let path = path.as_ref();
    fs::write(path, to_bytes(stack)).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<DecoderStack, FormatError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_bytes(&bytes)
}

pub fn to_bytes(stack: &DecoderStack) -> Vec<u8> {
    let dims = stack.dims();
    let mut out = Vec::new();
    out.extend_from_slice(STACK_MAGIC);
    for v in [
        STACK_FORMAT_VERSION,
        dims.num_layers as u32,
        dims.model_dim as u32,
        dims.vocab_size as u32,
        dims.num_heads as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut put = |rows: usize, cols: usize, data: &[f32]| {
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    let t = stack.token_embeddings();
    put(t.rows(), t.cols(), t.data());
    for b in stack.blocks() {
        put(1, b.attn_norm.len(), &b.attn_norm);
        for w in [&b.wq, &b.wk, &b.wv, &b.wo] {
            put(w.rows(), w.cols(), w.data());
        }
        put(1, b.mlp_norm.len(), &b.mlp_norm);
        put(b.w_up.rows(), b.w_up.cols(), b.w_up.data());
        put(b.w_down.rows(), b.w_down.cols(), b.w_down.data());
    }
    put(1, stack.final_norm_gain().len(), stack.final_norm_gain());
    let h = stack.head_weights();
    put(h.rows(), h.cols(), h.data());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, field: &str) -> Result<&[u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                field: field.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32, FormatError> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self, name: &str, rows: usize, cols: usize) -> Result<Tensor2D, FormatError> {
        let found_rows = self.u32(name)? as usize;
        let found_cols = self.u32(name)? as usize;
        if (found_rows, found_cols) != (rows, cols) {
            return Err(FormatError::Inconsistent {
                tensor: name.to_string(),
                expected_rows: rows,
                expected_cols: cols,
                found_rows,
                found_cols,
            });
        }
        let raw = self.take(rows * cols * 4, name)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(FormatError::NonFinite {
                tensor: name.to_string(),
            });
        }
        Ok(Tensor2D::new(rows, cols, data).expect("sized by header"))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<DecoderStack, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != STACK_MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != STACK_FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let num_layers = r.u32("num_layers")? as usize;
    let model_dim = r.u32("model_dim")? as usize;
    let vocab_size = r.u32("vocab_size")? as usize;
    let num_heads = r.u32("num_heads")? as usize;
    let zero_check = [
        ("num_layers", num_layers),
        ("model_dim", model_dim),
        ("num_heads", num_heads),
    ];
    for (field, v) in zero_check {
        if v == 0 {
            return Err(FormatError::InvalidHeader {
                field,
                reason: "must be positive".into(),
            });
        }
    }
    if vocab_size < 2 {
        return Err(FormatError::InvalidHeader {
            field: "vocab_size",
            reason: format!("must be at least 2, got {vocab_size}"),
        });
    }
    let dims = StackDims {
        num_layers,
        model_dim,
        vocab_size,
        num_heads,
    };
    if !model_dim.is_multiple_of(num_heads) || !dims.head_dim().is_multiple_of(2) {
        return Err(FormatError::InvalidHeader {
            field: "num_heads",
            reason: format!(
                "{num_heads} heads do not give an even head dimension for model_dim {model_dim}"
            ),
        });
    }
    let d = model_dim;
    let ff = dims.ff_dim();
    let token_embeddings = r.tensor("token_embeddings", vocab_size, d)?;
    let mut blocks = Vec::with_capacity(num_layers);
    for l in 1..=num_layers {
        let name = |part: &str| format!("block{l}.{part}");
        let attn_norm = r.tensor(&name("attn_norm"), 1, d)?.into_data();
        let wq = r.tensor(&name("wq"), d, d)?;
        let wk = r.tensor(&name("wk"), d, d)?;
        let wv = r.tensor(&name("wv"), d, d)?;
        let wo = r.tensor(&name("wo"), d, d)?;
        let mlp_norm = r.tensor(&name("mlp_norm"), 1, d)?.into_data();
        let w_up = r.tensor(&name("w_up"), d, ff)?;
        let w_down = r.tensor(&name("w_down"), ff, d)?;
        blocks.push(Block {
            attn_norm,
            wq,
            wk,
            wv,
            wo,
            mlp_norm,
            w_up,
            w_down,
        });
    }
    let final_norm = r.tensor("final_norm", 1, d)?.into_data();
    let head = r.tensor("head", d, vocab_size)?;
    if r.pos != bytes.len() {
        return Err(FormatError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(
        DecoderStack::from_parts(dims, token_embeddings, blocks, final_norm, head)
            .expect("shapes validated while reading"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> StackDims {
        StackDims {
            num_layers: 4,
            model_dim: 8,
            vocab_size: 97,
            num_heads: 2,
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let stack = DecoderStack::seed_init(dims(), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        save_stack(&stack, &path).unwrap();
        let loaded = load_stack(&path).unwrap();
        assert_eq!(to_bytes(&loaded), to_bytes(&stack));
        assert_eq!(loaded, stack);
    }

    #[test]
    fn corrupt_header_names_field() {
        let mut bytes = to_bytes(&DecoderStack::seed_init(dims(), 4).unwrap());
        // model_dim lives at offset 8 + 4 + 4.
        bytes[16..20].copy_from_slice(&0u32.to_le_bytes());
        match from_bytes(&bytes) {
            Err(FormatError::InvalidHeader { field, .. }) => assert_eq!(field, "model_dim"),
            other => panic!("unexpected {other:?}"),
        }
        let mut bytes = to_bytes(&DecoderStack::seed_init(dims(), 4).unwrap());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(FormatError::BadMagic)));
        let mut bytes = to_bytes(&DecoderStack::seed_init(dims(), 4).unwrap());
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        assert!(matches!(
            from_bytes(&bytes),
            Err(FormatError::UnsupportedVersion { found: 9 })
        ));
    }

    #[test]
    fn head_width_inconsistent_with_vocab() {
        let stack = DecoderStack::seed_init(dims(), 4).unwrap();
        let mut bytes = to_bytes(&stack);
        // Rewrite the head tensor with 100 columns while the header says 97.
        let head_len = 8 + 8 * 97 * 4;
        bytes.truncate(bytes.len() - head_len);
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&100u32.to_le_bytes());
        bytes.extend(std::iter::repeat_n(0u8, 8 * 100 * 4));
        match from_bytes(&bytes) {
            Err(FormatError::Inconsistent {
                tensor,
                expected_cols,
                found_cols,
                ..
            }) => {
                assert_eq!(tensor, "head");
                assert_eq!((expected_cols, found_cols), (97, 100));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = to_bytes(&DecoderStack::seed_init(dims(), 4).unwrap());
        assert!(matches!(
            from_bytes(&bytes[..bytes.len() - 3]),
            Err(FormatError::Truncated { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(
            from_bytes(&longer),
            Err(FormatError::TrailingBytes(1))
        ));
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_stack("/nonexistent/weights.bin").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/weights.bin"));
    }
}

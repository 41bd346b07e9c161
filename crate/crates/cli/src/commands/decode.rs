use std::path::PathBuf;

use dualfuse_core::decoder::{load_stack, save_stack};
use dualfuse_core::{
    fused_decode, ByteTokenizer, DecoderStack, FusionConfig, StackDims, TokenSequence,
};
use serde_json::json;

use super::{read_text, write_text};
use crate::error::CliError;
use crate::manifest::{beside, RunManifest};
use crate::{FuseDecodeArgs, InitStackArgs, OutputArgs, SingleDecodeArgs};

fn manifest_path(output: &OutputArgs, command: &str) -> PathBuf {
    output
        .manifest
        .clone()
        .or_else(|| output.out.as_deref().map(beside))
        .unwrap_or_else(|| PathBuf::from(format!("{command}.manifest.json")))
}

fn emit(
    text: &str,
    output: &OutputArgs,
    mut manifest: RunManifest,
    command: &str,
) -> Result<(), CliError> {
    println!("{text}");
    if let Some(out) = &output.out {
        write_text(out, text)?;
        manifest.output(out);
    }
    manifest.write(&manifest_path(output, command))
}

pub fn init_stack(a: InitStackArgs) -> Result<(), CliError> {
    let dims = StackDims {
        num_layers: a.layers,
        model_dim: a.dim,
        vocab_size: a.vocab,
        num_heads: a.heads,
    };
    let stack =
        DecoderStack::seed_init(dims, a.seed).map_err(|e| CliError::Input(e.to_string()))?;
    save_stack(&stack, &a.out)?;
    let mut m = RunManifest::new(
        "init-stack",
        json!({ "seed": a.seed, "layers": a.layers, "dim": a.dim, "heads": a.heads, "vocab": a.vocab }),
    );
    m.output(&a.out);
    m.write(&beside(&a.out))
}

pub fn single_decode(a: SingleDecodeArgs) -> Result<(), CliError> {
    let stack = load_stack(&a.weights)?;
    let tok = ByteTokenizer;
    let prompt = TokenSequence::new(tok.encode(&read_text(&a.prompt)?));
    let tokens = stack.greedy_decode(&prompt, a.max_new_tokens, Some(ByteTokenizer::END_TOKEN))?;
    let mut m = RunManifest::new(
        "single-decode",
        json!({ "max_new_tokens": a.max_new_tokens, "seed": a.seed }),
    );
    m.input(&a.weights)?;
    m.input(&a.prompt)?;
    emit(&tok.decode(&tokens), &a.output, m, "single-decode")
}

pub fn fuse_decode(a: FuseDecodeArgs) -> Result<(), CliError> {
    let mut config = FusionConfig::load(&a.fusion_config)?;
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(n) = a.max_new_tokens {
        config.max_new_tokens = n;
    }
    let llm = load_stack(&a.llm_weights)?;
    let lvlm = load_stack(&a.lvlm_weights)?;
    let tok = ByteTokenizer;
    let llm_prompt = TokenSequence::new(tok.encode(&read_text(&a.llm_prompt)?));
    let lvlm_prompt = TokenSequence::new(tok.encode(&read_text(&a.lvlm_prompt)?));
    let out = fused_decode(
        &llm,
        &lvlm,
        &llm_prompt,
        &lvlm_prompt,
        &config,
        Some(ByteTokenizer::END_TOKEN),
    )?;
    let mut m = RunManifest::new(
        "fuse-decode",
        serde_json::to_value(&config).expect("config serializes"),
    );
    for p in [
        &a.llm_weights,
        &a.lvlm_weights,
        &a.fusion_config,
        &a.llm_prompt,
        &a.lvlm_prompt,
    ] {
        m.input(p)?;
    }
    emit(&tok.decode(&out.tokens), &a.output, m, "fuse-decode")
}

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "dualfuse",
    version,
    about = "Fuse two decoder stacks, build scene prompts, run sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded random toy stack.
    InitStack(InitStackArgs),
    /// Greedy decoding with one stack.
    SingleDecode(SingleDecodeArgs),
    /// Greedy decoding with two fused stacks.
    FuseDecode(FuseDecodeArgs),
    /// Turn detections, depth maps, lights and signs into prompt files.
    BuildPrompts(BuildPromptsArgs),
    /// Pack sign embeddings into a database matrix and table.
    BuildSignDb(BuildSignDbArgs),
    /// Run every grid config over every question.
    Sweep(SweepArgs),
    /// Attach judge scores to sweep records.
    Score(ScoreArgs),
    /// Per-config results and marginal tables from records.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct InitStackArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Also write the generated text here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path; defaults to beside --out, else the working directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SingleDecodeArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Prompt text file.
    #[arg(long)]
    prompt: PathBuf,
    #[arg(long, default_value_t = dualfuse_core::fusion::DEFAULT_MAX_NEW_TOKENS)]
    max_new_tokens: usize,
    /// Recorded only; greedy decoding draws no randomness.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct FuseDecodeArgs {
    #[arg(long)]
    llm_weights: PathBuf,
    #[arg(long)]
    lvlm_weights: PathBuf,
    #[arg(long)]
    fusion_config: PathBuf,
    #[arg(long)]
    llm_prompt: PathBuf,
    #[arg(long)]
    lvlm_prompt: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's max_new_tokens.
    #[arg(long)]
    max_new_tokens: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct BuildPromptsArgs {
    /// Detections JSONL for one scene; its file stem names the scene.
    #[arg(long)]
    detections: PathBuf,
    /// Directory of `*.depth` frame files.
    #[arg(long)]
    depths: PathBuf,
    /// Sign database matrix; the table is read from --signs-table.
    #[arg(long, requires = "signs_table")]
    signs_db: Option<PathBuf>,
    #[arg(long)]
    signs_table: Option<PathBuf>,
    #[arg(long, default_value_t = dualfuse_core::scene::DEFAULT_SIGN_THRESHOLD)]
    sign_threshold: f64,
    /// Traffic-light states JSONL.
    #[arg(long)]
    lights: Option<PathBuf>,
    #[arg(long)]
    questions: PathBuf,
    /// Replaces the built-in task preamble.
    #[arg(long)]
    preamble: Option<PathBuf>,
    #[arg(long, default_value_t = dualfuse_core::scene::DEFAULT_IOU_THRESHOLD)]
    iou_threshold: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct BuildSignDbArgs {
    /// JSONL, one sign per line: category, description, embeddings (3 x 512).
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out_matrix: PathBuf,
    #[arg(long)]
    out_table: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    llm_weights: PathBuf,
    #[arg(long)]
    lvlm_weights: PathBuf,
    #[arg(long)]
    questions: PathBuf,
    /// Directory of `<question_id>.txt` LLM prompts; the bare question
    /// text is used when absent.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    /// Output directory; an existing checkpoint there is resumed.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, env = "DUALFUSE_WORKERS", default_value_t = 1)]
    workers: usize,
    /// Evaluate a seeded random subset of this many questions.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 42)]
    subset_seed: u64,
    /// Stop after this many configs, leaving the rest for a resume.
    #[arg(long, hide = true)]
    stop_after: Option<usize>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Records JSONL written by `sweep`.
    #[arg(long)]
    records: PathBuf,
    /// Offline scores CSV.
    #[arg(long, conflicts_with = "judge_url")]
    scores: Option<PathBuf>,
    #[arg(long, env = "DUALFUSE_JUDGE_URL")]
    judge_url: Option<String>,
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 500)]
    backoff_ms: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    /// Grid the records were produced with.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitStack(a) => commands::decode::init_stack(a),
        Command::SingleDecode(a) => commands::decode::single_decode(a),
        Command::FuseDecode(a) => commands::decode::fuse_decode(a),
        Command::BuildPrompts(a) => commands::scene::build_prompts(a),
        Command::BuildSignDb(a) => commands::scene::build_sign_db(a),
        Command::Sweep(a) => commands::sweep::sweep(a),
        Command::Score(a) => commands::sweep::score(a),
        Command::Report(a) => commands::sweep::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

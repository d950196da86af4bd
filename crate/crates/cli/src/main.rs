mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use racig_core::diffusion::PreserveMode;
use racig_core::inject::MergeMode;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing argument)
  3  i/o error (missing or unreadable file)
  4  validation error (schema violation, bad parameter, arity mismatch)
  5  format error (bad magic, truncated or corrupt binary data, malformed JSON)
  6  pipeline error (a numeric stage failed)

Errors are written to stderr as a JSON object {\"error\": {\"kind\", \"stage\", \"message\"}}.";

#[derive(Debug, Parser)]
#[command(name = "racig", version, about = "Retrieval-augmented multi-character latent injection", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthetic record fixtures.
    #[command(subcommand)]
    Fixtures(FixturesCmd),
    /// Build, validate and query an index directory.
    #[command(subcommand)]
    Index(IndexCmd),
    /// Assign prompt characters to the regions of one record.
    Assign(AssignArgs),
    /// Run the full pipeline and write a report.
    Run(RunArgs),
}

#[derive(Debug, Subcommand)]
enum FixturesCmd {
    /// Write a fixture index directory plus user reference crops under user_refs/.
    Gen(FixturesGenArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCmd {
    /// Validate a manifest and feature bank and report the index summary.
    Build(IndexBuildArgs),
    /// Rank index records against a prompt.
    Query(IndexQueryArgs),
}

#[derive(Debug, Args)]
struct Output {
    /// Write JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FixturesGenArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    count: usize,
    /// Characters per record (1 or 2).
    #[arg(long, default_value_t = 2)]
    chars: usize,
    #[arg(long, default_value_t = 224)]
    width: u32,
    #[arg(long, default_value_t = 128)]
    height: u32,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = racig_core::msdb::DEFAULT_TEXT_ENCODER_SEED)]
    encoder_seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct IndexBuildArgs {
    /// Index directory; supplies defaults for --manifest and --features.
    #[arg(long)]
    dir: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct IndexQueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 5)]
    top_m: usize,
    /// Seed for the shortlist draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = racig_core::msdb::DEFAULT_TEXT_ENCODER_SEED)]
    encoder_seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    /// Reads planted region labels.
    Oracle,
    /// Text-span versus region-geometry cosine.
    Stub,
}

#[derive(Debug, Args)]
struct AssignArgs {
    #[arg(long)]
    index: PathBuf,
    /// Record id to assign against.
    #[arg(long)]
    id: String,
    #[arg(long)]
    prompt: String,
    #[arg(long, value_enum, default_value_t = ScorerKind::Oracle)]
    scorer: ScorerKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = racig_core::msdb::DEFAULT_TEXT_ENCODER_SEED)]
    encoder_seed: u64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MergeArg {
    Normalized,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PreserveArg {
    Strict,
    PaperLiteral,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    prompt: String,
    /// Directory with `character_<k>_face.pgm` and `character_<k>_body.pgm`.
    #[arg(long)]
    refs: PathBuf,
    /// JSON config file; falls back to $RACIG_CONFIG, then defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ScorerKind::Oracle)]
    scorer: ScorerKind,
    /// Dump every step's latents here in the binary tensor format.
    #[arg(long)]
    emit_latents: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    cfg_scale: Option<f64>,
    /// Latent grid as HxW, e.g. 32x56.
    #[arg(long, value_parser = parse_grid)]
    grid: Option<(usize, usize)>,
    #[arg(long)]
    shortlist_m: Option<usize>,
    #[arg(long, value_enum)]
    merge_mode: Option<MergeArg>,
    #[arg(long, value_enum)]
    preserve_mode: Option<PreserveArg>,
    #[arg(long)]
    control_scale: Option<f64>,
    #[command(flatten)]
    output: Output,
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{v}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

impl From<MergeArg> for MergeMode {
    fn from(m: MergeArg) -> Self {
        match m {
            MergeArg::Normalized => MergeMode::Normalized,
            MergeArg::PaperLiteral => MergeMode::PaperLiteral,
        }
    }
}

impl From<PreserveArg> for PreserveMode {
    fn from(m: PreserveArg) -> Self {
        match m {
            PreserveArg::Strict => PreserveMode::Strict,
            PreserveArg::PaperLiteral => PreserveMode::PaperLiteral,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, out) = match cli.command {
        Command::Fixtures(FixturesCmd::Gen(a)) => (commands::fixtures_gen(&a), a.output.out),
        Command::Index(IndexCmd::Build(a)) => (commands::index_build(&a), a.output.out),
        Command::Index(IndexCmd::Query(a)) => (commands::index_query(&a), a.output.out),
        Command::Assign(a) => (commands::assign(&a), a.output.out),
        Command::Run(a) => (commands::run(&a), a.output.out),
    };
    match result.and_then(|json| commands::write_output(&json, out.as_deref())) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprint!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use natlas::corpus::{LabelKind, TokenizerSpec};
use natlas::pipeline::{self, Command, RunConfig, DEFAULT_HOLDOUT_TOKENS};

/// Locate language- and culture-specific neurons in GLU transformers.
#[derive(Debug, Parser)]
#[command(name = "natlas", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,

    /// Output directory shared by all subcommands.
    #[arg(long)]
    out: PathBuf,

    /// Model container.
    #[arg(long)]
    model: Option<PathBuf>,

    /// Directory of label subdirectories, or of `language/` and `culture/`.
    #[arg(long)]
    corpus_root: Option<PathBuf>,

    /// `byte` or `vocab:<path>[:unk=<id>]`.
    #[arg(long, default_value = "byte", value_parser = parse_tokenizer)]
    tokenizer: TokenizerSpec,

    #[arg(long, value_enum, default_value_t = Kind::Language)]
    kind: Kind,

    /// Share of all neurons to select.
    #[arg(long, default_value_t = 0.01)]
    fraction: f64,

    /// Minimum firing probability for selection and label assignment.
    #[arg(long, default_value_t = 0.9)]
    floor: f64,

    /// Select every eligible neuron with entropy at most this value instead
    /// of using --fraction.
    #[arg(long)]
    tau: Option<f64>,

    /// JSON object mapping culture labels to language labels.
    #[arg(long)]
    culture_map: Option<PathBuf>,

    /// Held-out tokens per label for ablation; 0 counts everything.
    #[arg(long, default_value_t = DEFAULT_HOLDOUT_TOKENS)]
    holdout_tokens: usize,

    /// Training tokens per label (stats) or generated tokens per label (synth).
    #[arg(long)]
    budget: Option<usize>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Random-control replicates per ablation matrix; 0 disables them.
    #[arg(long, default_value_t = 5)]
    random_replicates: usize,

    /// Draw random controls only from neurons outside every identified set.
    #[arg(long)]
    exclude_identified: bool,

    /// Remove every language set, not only the associated one, from culture sets.
    #[arg(long)]
    subtract_all_languages: bool,

    /// Plant description (JSON) for synth.
    #[arg(long)]
    plant: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Synth,
    Stats,
    Select,
    Setops,
    Ablate,
    Report,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Kind {
    Language,
    Culture,
}

fn parse_tokenizer(s: &str) -> Result<TokenizerSpec, String> {
    s.parse().map_err(|e: natlas::Error| e.to_string())
}

impl Cli {
    fn into_config(self) -> RunConfig {
        let command = match self.command {
            Cmd::Synth => Command::Synth,
            Cmd::Stats => Command::Stats,
            Cmd::Select => Command::Select,
            Cmd::Setops => Command::Setops,
            Cmd::Ablate => Command::Ablate,
            Cmd::Report => Command::Report,
        };
        RunConfig {
            command,
            out: self.out,
            model: self.model,
            corpus_root: self.corpus_root,
            tokenizer: self.tokenizer,
            kind: match self.kind {
                Kind::Language => LabelKind::Language,
                Kind::Culture => LabelKind::Culture,
            },
            fraction: self.fraction,
            floor: self.floor,
            tau: self.tau,
            culture_map: self.culture_map,
            seed: self.seed,
            budget: self.budget,
            holdout_tokens: self.holdout_tokens,
            random_replicates: self.random_replicates,
            exclude_identified: self.exclude_identified,
            subtract_all_languages: self.subtract_all_languages,
            plant: self.plant,
        }
    }
}

fn main() -> ExitCode {
    let config = Cli::parse().into_config();
    match pipeline::run(&config) {
        Ok(()) => {
            println!(
                "{}",
                serde_json::json!({ "ok": config.command, "out": config.out })
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}

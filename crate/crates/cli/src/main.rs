use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use draftreuse_cli::bench::build_table;
use draftreuse_cli::report::Format;
use draftreuse_cli::{gen_corpus, run_ablation, run_bench, write_atomic, CliError, Report, RunSpec};
use draftreuse_core::token_info::write_corpus;
use draftreuse_core::{DraftModel, TargetModel};

/// Speculative decoding benchmark harness.
///
/// Run settings come from built-in defaults, then `--config`, then each
/// `--set key=value` in order. Keys are the flat RunSpec field names
/// (steps, branch, budget, draft_noise, vocab, table_rank, ...).
///
/// Exit codes: 0 success, 2 configuration error, 3 lossless-equivalence
/// violation, 1 anything else.
#[derive(Parser)]
#[command(name = "draftreuse", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a Zipf-distributed token corpus.
    GenCorpus {
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        draws: usize,
        #[arg(long, default_value_t = 1.1)]
        exponent: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic target model, and optionally its fitted token-info
    /// table.
    GenModel {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        table_out: Option<PathBuf>,
    },
    /// Run the configured grid and write a report.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run full / no-resample / no-fusion variants of every grid config.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Convert a report between CSV and JSON, recomputing aggregates.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with flat RunSpec keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set steps=4 --set sweep_budget=[4,8]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write one event-log line per verification pass.
    #[arg(long)]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct OutputArgs {
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the extension of `--out`, else CSV.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

impl RunArgs {
    fn spec(&self) -> Result<RunSpec, CliError> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::load(path)?,
            None => RunSpec::default(),
        };
        for s in &self.set {
            spec.set(s)?;
        }
        if self.event_log.is_some() {
            spec.event_log = self.event_log.clone();
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl OutputArgs {
    fn emit(&self, spec_out: Option<&PathBuf>, report: &Report) -> Result<(), CliError> {
        let out = self.out.as_ref().or(spec_out);
        let format = match (self.format, out) {
            (Some(FormatArg::Csv), _) => Format::Csv,
            (Some(FormatArg::Json), _) => Format::Json,
            (None, Some(p)) => Format::from_path(p).unwrap_or(Format::Csv),
            (None, None) => Format::Csv,
        };
        match out {
            Some(path) => report.emit(path, format),
            None => {
                print!("{}", report.render(format)?);
                Ok(())
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus {
            vocab,
            draws,
            exponent,
            seed,
            out,
        } => {
            let corpus = gen_corpus(vocab, draws, exponent, seed)?;
            let mut buf = Vec::new();
            write_corpus(&mut buf, &corpus)?;
            write_atomic(&out, &buf)
        }
        Command::GenModel { run, out, table_out } => {
            let spec = run.spec()?;
            let target = TargetModel::synthetic(&spec.model_spec())?;
            let mut buf = Vec::new();
            target.write_to(&mut buf)?;
            write_atomic(&out, &buf)?;
            if let Some(path) = table_out {
                let draft = DraftModel::perturbed(std::sync::Arc::new(target.clone()), spec.draft_noise, spec.seed)?;
                let table = build_table(&spec, &target, &draft)?;
                let mut buf = Vec::new();
                table.write_to(&mut buf)?;
                write_atomic(&path, &buf)?;
            }
            Ok(())
        }
        Command::Bench { run, output } => {
            let spec = run.spec()?;
            let report = run_bench(&spec)?;
            output.emit(spec.out.as_ref(), &report)
        }
        Command::Ablate { run, output } => {
            let spec = run.spec()?;
            let report = run_ablation(&spec)?;
            output.emit(spec.out.as_ref(), &report)
        }
        Command::Report { input, output } => {
            let report = Report::load(&input)?;
            output.emit(None, &report)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("draftreuse: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

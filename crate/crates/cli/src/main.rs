//! `tokbias`: train ranked tokenisers, collect subword outcomes and estimate
//! tokenisation bias at the vocabulary cutoff.
//!
//! Every failure prints exactly one line of the form `error[<stage>]: <message>`
//! to stderr and exits with a nonzero status.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use tokbias::lm::BackendKind;
use tokbias::outcomes::OutcomeStat;
use tokbias::pipeline::{EstimateSummary, Overrides, Pipeline, PipelineConfig, StageError};
use tokbias::Execution;

#[derive(Parser, Debug)]
#[command(
    name = "tokbias",
    version,
    about = "Tokenisation bias via regression discontinuity"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Vocabulary cutoff K (number of merges in the tokeniser).
    #[arg(long, global = true)]
    cutoff: Option<usize>,

    /// Half-width of the candidate window around the cutoff, in ranks.
    #[arg(long, global = true)]
    window: Option<usize>,

    /// Outcome aggregate to estimate on.
    #[arg(long, global = true, value_enum)]
    stat: Option<StatArg>,

    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the ranked vocabulary and write vocab.json.
    TrainTokeniser,
    /// Tokenise text at the cutoff and write tokens.txt.
    Tokenise {
        /// Text to tokenise, one document per line (default: evaluation corpus).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Also write decoded.txt reconstructed from the token stream.
        #[arg(long)]
        decode: bool,
    },
    /// Collect per-candidate outcomes and write outcomes.csv.
    Collect,
    /// Fit the discontinuity for each configured statistic.
    Estimate,
    /// Fit the discontinuity over the configured window sweep.
    Sweep,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StatArg {
    Mean,
    Std,
    Median,
    Iqr,
}

impl From<StatArg> for OutcomeStat {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::Mean => OutcomeStat::Mean,
            StatArg::Std => OutcomeStat::Std,
            StatArg::Median => OutcomeStat::Median,
            StatArg::Iqr => OutcomeStat::Iqr,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BackendArg {
    Uniform,
    Ngram,
    Perfect,
    External,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Uniform => BackendKind::Uniform,
            BackendArg::Ngram => BackendKind::Ngram,
            BackendArg::Perfect => BackendKind::Perfect,
            BackendArg::External => BackendKind::External,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[args]: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p).map_err(|error| StageError {
            stage: tokbias::pipeline::Stage::Config,
            error,
        })?,
        None => PipelineConfig::default(),
    };
    config.apply(&Overrides {
        cutoff: cli.cutoff,
        window: cli.window,
        stat: cli.stat.map(Into::into),
        backend: cli.backend.map(Into::into),
        seed: cli.seed,
    });
    let mut pipeline = Pipeline::new(config, &cli.out_dir)?;
    if cli.sequential {
        pipeline.execution = Execution::Sequential;
    }

    let start = Instant::now();
    match cli.command {
        Command::TrainTokeniser => {
            let s = pipeline.train_tokeniser()?;
            println!(
                "merges: {}{}",
                s.merges,
                if s.truncated {
                    " (corpus exhausted)"
                } else {
                    ""
                }
            );
            println!("vocabulary: {}", s.vocab_path.display());
            println!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
        }
        Command::Tokenise { input, decode } => {
            let s = pipeline.tokenise(input.as_deref(), decode)?;
            let secs = start.elapsed().as_secs_f64();
            println!("documents: {}", s.documents);
            println!("tokens: {}", s.tokens);
            println!("tokens/s: {:.0}", s.tokens as f64 / secs.max(1e-9));
            println!("stream: {}", s.stream_path.display());
        }
        Command::Collect => {
            let s = pipeline.collect()?;
            println!("candidates: {}", s.candidates);
            println!("nested excluded: {}", s.nested_excluded);
            println!("records: {}", s.rows.len());
            println!("dropped: {}", s.dropped.len());
            println!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
        }
        Command::Estimate => {
            report(&pipeline.estimate()?);
            println!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
        }
        Command::Sweep => {
            report(&pipeline.sweep()?);
            println!("elapsed: {:.3}s", start.elapsed().as_secs_f64());
        }
    }
    Ok(())
}

fn report(s: &EstimateSummary) {
    for f in &s.fits {
        println!(
            "stat={} window={} tau_hat={:.6} se_tau={:.6} alpha_hat={:.6} beta_hat={:.6} n_treated={} n_control={}",
            f.stat, f.window, f.tau_hat, f.se_tau, f.alpha_hat, f.beta_hat, f.n_treated, f.n_control
        );
    }
    for w in &s.skipped {
        println!("skipped window={}: {}", w.window, w.reason);
    }
    if let Some(ok) = s.uniform_bound_ok {
        println!(
            "uniform bound tau_hat >= ln|V+EOS|: {}",
            if ok { "holds" } else { "violated" }
        );
    }
}

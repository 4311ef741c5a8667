// SPDX-License-Identifier: MIT OR Apache-2.0

//! `corrlat`: fit LAT readers, score candidates, and run the evaluation
//! protocols from the command line.
//!
//! Exit codes: 0 success, 1 domain violation, 2 I/O failure, 64 usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use corrlat::baselines::{MetricKind, ReflectiveMode};

const EXIT_DOMAIN: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "corrlat", version, about = "Correctness directions from LLM hidden states")]
struct Cli {
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "CORRLAT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check an activation store against every format invariant
    ValidateStore {
        path: PathBuf,
    },
    /// Fit one reading vector per layer from the dataset's fit pairs
    Fit {
        #[arg(long)]
        store: PathBuf,
        /// Tasks to fit on
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds the choice of incorrect candidate when a task has several
        #[arg(long)]
        seed: u64,
    },
    /// Choose the operating layer on held-out data
    SelectLayer {
        #[arg(long)]
        reader: PathBuf,
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        validation: ValidationArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the LAT score of store records
    Score {
        #[arg(long)]
        reader: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Layer to score at (default: the reader's chosen layer)
        #[arg(long)]
        layer: Option<usize>,
        /// Record ids to score (default: every EVAL record)
        #[arg(long = "record")]
        records: Vec<String>,
    },
    /// Pick one candidate per MCQA instance
    Choose {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        qa: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Lat)]
        metric: Metric,
        /// Needed for --metric lat
        #[arg(long)]
        reader: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Mode::ArgmaxWeighted)]
        reflective_mode: Mode,
    },
    /// Rank every candidate of every task and report pass@rank-k
    Rank {
        #[arg(long)]
        store: PathBuf,
        /// Ranking dataset: tasks with labelled candidate pools
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        reader: Option<PathBuf>,
        #[arg(long = "k", value_delimiter = ',', default_value = "1,2,3,4,5")]
        ks: Vec<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        metrics: Option<Vec<Metric>>,
        #[arg(long)]
        seed: u64,
        /// Restrict to the test split of one fold of this plan
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        fold: usize,
        #[arg(long, value_enum, default_value_t = Mode::ArgmaxWeighted)]
        reflective_mode: Mode,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run the in-distribution or out-of-distribution protocol from a config
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Override a config key, e.g. --set seed=7 --set fractions.fit=0.2
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write the fold plan used
        #[arg(long)]
        write_plan: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a synthetic store with a planted direction
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Receives store.acts, dataset.json, qa.json and truth.json
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build multiple-choice instances from a dataset manifest
    MakeQa {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        n_incorrect: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render a saved report
    Report {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Write the prompts an extractor must run, one JSON object per line
    RenderPrompts {
        #[arg(long)]
        dataset: PathBuf,
        /// Template overrides (JSON); defaults are built in
        #[arg(long)]
        templates: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct ValidationArgs {
    /// Validate on the fit pairs of these tasks
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Validate on these multiple-choice instances (EVAL records)
    #[arg(long)]
    qa: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Format printed to stdout
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Random,
    IntrinsicLengthNorm,
    ReflectiveRegular,
    ReflectiveTf,
    Lat,
}

impl From<Metric> for MetricKind {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Random => MetricKind::Random,
            Metric::IntrinsicLengthNorm => MetricKind::IntrinsicLengthNorm,
            Metric::ReflectiveRegular => MetricKind::ReflectiveRegular,
            Metric::ReflectiveTf => MetricKind::ReflectiveTf,
            Metric::Lat => MetricKind::Lat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    ArgmaxWeighted,
    Expectation,
}

impl From<Mode> for ReflectiveMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ArgmaxWeighted => ReflectiveMode::ArgmaxWeighted,
            Mode::Expectation => ReflectiveMode::Expectation,
        }
    }
}

/// Why a command stopped.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(corrlat::Error),
    /// A check failed after printing its own findings.
    Violations,
}

impl From<corrlat::Error> for Failure {
    fn from(e: corrlat::Error) -> Self {
        Failure::Core(e)
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_DOMAIN);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("usage: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Violations) => ExitCode::from(EXIT_DOMAIN),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { EXIT_IO } else { EXIT_DOMAIN })
        }
    }
}

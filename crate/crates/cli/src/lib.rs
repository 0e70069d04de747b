//! `hcc` command line: corpus validation, synthetic data, diagnostics,
//! boundary-proxy training and dataset cutting.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hcc",
    version,
    about = "Diagnose and cut post-conclusion continuation in reasoning traces"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    /// Write reports as JSON instead of CSV.
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InputArg {
    /// Corpus manifest (`.jsonl`; the sidecar sits next to it as `.bin`).
    #[arg(value_name = "CORPUS")]
    pub corpus: Option<PathBuf>,

    #[arg(long, conflicts_with = "corpus")]
    pub input: Option<PathBuf>,

    /// Repair non-suffix editor labels instead of rejecting them.
    #[arg(long)]
    pub lenient_labels: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CutMode {
    /// Boundaries predicted by a trained checkpoint.
    Model,
    /// Boundaries from the editor annotations.
    Labels,
    /// Sentence-complete suffix cut to a token target.
    Random,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a corpus and list every violation.
    Validate {
        #[command(flatten)]
        input: InputArg,
        /// Also write the violations as a report.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic annotated corpus.
    Synth {
        /// Manifest to write.
        #[arg(long)]
        output: PathBuf,
        /// key=value generator settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        traces: Option<usize>,
    },
    /// Progressive answer curves, boundary statistics and answer perturbations.
    DiagnoseUncertainty {
        #[command(flatten)]
        input: InputArg,
        /// Directory for the reports.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Per-sentence hidden-state geometry and per-trace segment means.
    DiagnoseGeometry {
        #[command(flatten)]
        input: InputArg,
        /// Directory for the reports.
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = hcc_core::geometry::DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// Removed-versus-retained paired comparison with bootstrap intervals.
    PairedStats {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = hcc_core::geometry::DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = hcc_core::stats::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = hcc_core::stats::DEFAULT_LEVEL)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the boundary proxy on an annotated corpus.
    Train {
        #[command(flatten)]
        input: InputArg,
        /// Checkpoint to write.
        #[arg(long)]
        output: PathBuf,
        /// key=value model and training settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Per-epoch loss history; defaults to `<output>.history.csv`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Per-sentence predictions of a trained checkpoint.
    Predict {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Choose a cut boundary for every trace.
    Cut {
        #[command(flatten)]
        input: InputArg,
        #[arg(long, value_enum)]
        mode: CutMode,
        /// Cut summary to write (id, boundary, removed_tokens).
        #[arg(long)]
        output: PathBuf,
        /// Checkpoint, for `--mode model`.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Mean removed tokens to aim for, for `--mode random`.
        #[arg(long)]
        target_tokens: Option<f64>,
        /// Match the mean removal of this cut summary, for `--mode random`.
        #[arg(long, conflicts_with = "target_tokens")]
        r#match: Option<PathBuf>,
        /// Break equal-distance ties at random instead of removing less.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write prompt/response JSON lines from a corpus and a cut summary.
    ExportSft {
        #[command(flatten)]
        input: InputArg,
        #[arg(long)]
        cuts: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Rates of the removable-continuation pattern in model predictions.
    SelfConsistency {
        #[command(flatten)]
        input: InputArg,
        /// Output of `predict`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Delete probability at or above which a sentence is flagged.
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

/// Parse `argv` (program name first), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::execute(cli) {
        Ok(()) => EXIT_OK,
        Err(commands::Failure::Usage(message)) => {
            eprintln!("error: {message}\n\nRun `hcc --help` for usage.");
            EXIT_USAGE
        }
        Err(commands::Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            EXIT_DATA
        }
    }
}

//! `equibus` — design bus lines over a fixed metro skeleton for
//! bottom-quantile accessibility.
//!
//! Subcommands: `generate` (synthetic scenario), `evaluate`
//! (accessibility report), `train` (online Q-learning), `optimize`
//! (rl/ga/random under a budget), `compare` (matched-budget benchmark
//! with t-tests), `export` (per-centroid improvement heatmap).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use equibus_core::Error as CoreError;

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Validation,
    Io,
    Internal,
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError { category: Category::Validation, message: msg.into() }
    }
    pub fn io(msg: impl Into<String>) -> Self {
        CliError { category: Category::Io, message: msg.into() }
    }
    pub fn internal(msg: impl Into<String>) -> Self {
        CliError { category: Category::Internal, message: msg.into() }
    }

    fn exit_code(&self) -> u8 {
        match self.category {
            Category::Validation => 2,
            Category::Io => 3,
            Category::Internal => 4,
        }
    }

    fn label(&self) -> &'static str {
        match self.category {
            Category::Validation => "validation",
            Category::Io => "io",
            Category::Internal => "internal",
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Io(_) => CliError::io(e.to_string()),
            CoreError::InvalidScenario(_)
            | CoreError::InvalidAssignment(_)
            | CoreError::InadmissibleAction(_)
            | CoreError::Config(_)
            | CoreError::Stats(_)
            | CoreError::Parse(_) => CliError::validation(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "equibus", version, about, max_term_width = 100)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Rl,
    Ga,
    Random,
}

/// Flags shared by every subcommand. Precedence: flag, then config file,
/// then built-in default.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML config file supplying defaults for any omitted flag.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory for files not given an explicit path
    /// (default: $EQUIBUS_OUT_DIR, else the working directory).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for accessibility evaluation. With more than one
    /// thread, floating-point reduction order may differ in the lowest
    /// bits between runs; use 1 for byte-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base seed; every internal random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Wall-clock budget in seconds.
    #[arg(long = "budget-s")]
    pub budget_s: Option<f64>,
    /// Evaluation-count budget (deterministic alternative to --budget-s).
    #[arg(long = "budget-evals", conflicts_with = "budget_s")]
    pub budget_evals: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic grid scenario file.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
        /// Output scenario path (default: <out-dir>/scenario.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid width in cells.
        #[arg(long)]
        width: Option<usize>,
        /// Grid height in cells.
        #[arg(long)]
        height: Option<usize>,
        /// Cell side in kilometers.
        #[arg(long)]
        spacing_km: Option<f64>,
        /// Mean PoIs per cell (uniform density map).
        #[arg(long)]
        poi_density: Option<f64>,
        /// JSON file with one density value per cell (overrides
        /// --poi-density).
        #[arg(long)]
        poi_density_map: Option<PathBuf>,
        /// Metro line as comma-separated cell indices; repeatable.
        #[arg(long = "metro-line")]
        metro_lines: Vec<String>,
        /// Number of bus lines to design.
        #[arg(long)]
        num_lines: Option<u32>,
        /// Buses per designed line.
        #[arg(long)]
        fleet_per_line: Option<u32>,
        /// Accessibility horizon in minutes.
        #[arg(long)]
        t_max: Option<f64>,
        #[arg(long)]
        walk_speed: Option<f64>,
        #[arg(long)]
        bus_speed: Option<f64>,
        /// Headway of generated metro lines in minutes.
        #[arg(long)]
        metro_headway: Option<f64>,
    },
    /// Print the accessibility report of a scenario (optionally with a
    /// line assignment applied).
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scenario: PathBuf,
        /// Assignment JSON produced by optimize/train; metro-only when
        /// omitted.
        #[arg(long)]
        assignment: Option<PathBuf>,
        /// Extra quantile to report besides 20/50/100.
        #[arg(long)]
        q: Option<f64>,
        /// Write the full report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the Q-network online and write checkpoint plus result files.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        q: Option<f64>,
        /// Episode patience: non-improving steps before a restart.
        #[arg(long)]
        stall_limit: Option<u32>,
        /// Warm-start checkpoint to continue training from.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Where to write the trained checkpoint
        /// (default: <out-dir>/checkpoint.json).
        #[arg(long)]
        checkpoint_out: Option<PathBuf>,
        /// Result JSON (default: <out-dir>/train_result.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Best-so-far trajectory JSONL
        /// (default: <out-dir>/train_trajectory.jsonl).
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Run one optimizer under a budget and write the best design found.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum)]
        optimizer: Option<OptimizerKind>,
        #[arg(long)]
        q: Option<f64>,
        /// Trained checkpoint (required for --optimizer rl).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Result JSON (default: <out-dir>/optimize_result.json).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Best-so-far trajectory JSONL
        /// (default: <out-dir>/optimize_trajectory.jsonl).
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// Best-assignment JSON usable by `evaluate --assignment`
        /// (default: <out-dir>/best_assignment.json).
        #[arg(long)]
        assignment_out: Option<PathBuf>,
    },
    /// Benchmark rl and ga against random search over matched budgets.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        budget: BudgetArgs,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        q: Option<f64>,
        /// Independent trials (seeds base..base+trials-1).
        #[arg(long)]
        trials: Option<u32>,
        /// Arms to benchmark against random (default: rl,ga).
        #[arg(long, value_delimiter = ',')]
        optimizers: Vec<String>,
        #[arg(long)]
        stall_limit: Option<u32>,
        /// Report JSON (default: <out-dir>/compare_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a per-centroid improvement heatmap (CSV, optional GeoJSON).
    Export {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        scenario: PathBuf,
        /// Baseline accessibility report (from `evaluate --out`).
        #[arg(long)]
        baseline: PathBuf,
        /// Improved accessibility report.
        #[arg(long)]
        improved: PathBuf,
        #[arg(long)]
        q: Option<f64>,
        /// Heatmap CSV (default: <out-dir>/heatmap.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a GeoJSON mirror here.
        #[arg(long)]
        geojson: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = commands::dispatch(cli.command);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", e.label(), e.message);
            ExitCode::from(e.exit_code())
        }
    }
}

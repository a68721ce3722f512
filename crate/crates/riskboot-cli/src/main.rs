//! riskboot command line: competing-risks estimation, multiplier-bootstrap
//! confidence bands and tests, weight-scheme diagnostics, and Monte Carlo
//! studies, with machine-readable output.
//!
//! Exit codes: 0 success (test decisions are data, not exit status),
//! 2 input/validation error, 3 statistical inadmissibility.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use riskboot::{Error as CoreError, MultiplierScheme};

mod commands;
mod output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Normal,
    Poisson,
    Weird,
}

impl SchemeArg {
    pub fn to_scheme(self) -> MultiplierScheme {
        match self {
            SchemeArg::Normal => MultiplierScheme::StandardNormal,
            SchemeArg::Poisson => MultiplierScheme::CenteredPoisson,
            SchemeArg::Weird => MultiplierScheme::WeirdBinomial,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeArg::Normal => "normal",
            SchemeArg::Poisson => "poisson",
            SchemeArg::Weird => "weird",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandTypeArg {
    Hw,
    Ep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Loglog,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Ks,
    Cvm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AdjustArg {
    None,
    Count,
    Risk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

/// Flags shared by every stochastic subcommand.
#[derive(Debug, Clone, Args)]
pub struct StochasticArgs {
    /// Multiplier weight scheme.
    #[arg(long, value_enum, default_value_t = SchemeArg::Weird)]
    pub scheme: SchemeArg,

    /// Number of bootstrap replicates.
    #[arg(long = "reps", default_value_t = 999)]
    pub replicates: usize,

    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Master seed; falls back to RISKBOOT_SEED, then 0. Echoed in output.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl StochasticArgs {
    pub fn resolve_seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| {
            std::env::var("RISKBOOT_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(0)
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Input CSV with header; columns: id (optional), entry (optional,
    /// default 0), time, status (0/1/2), group (optional, default 1).
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct IntervalArgs {
    /// Interval [t1, t2], two values.
    #[arg(long, num_args = 2, value_names = ["T1", "T2"])]
    pub interval: Vec<f64>,
}

#[derive(Debug, Parser)]
#[command(name = "riskboot")]
#[command(about = "Competing-risks estimation with multiplier-bootstrap inference")]
#[command(version)]
pub struct Cli {
    /// Worker threads for replicate evaluation (0 = all cores). Results do
    /// not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write Kaplan-Meier, Nelson-Aalen and Aalen-Johansen tables.
    Estimate {
        #[command(flatten)]
        input: InputArgs,

        /// Output directory for the CSV tables (csv format).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,

        /// Output format: five CSV tables or one JSON document.
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,

        /// JSON output path (json format); stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Simultaneous confidence band for the cause-1 CIF.
    Band {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        interval: IntervalArgs,
        #[command(flatten)]
        stochastic: StochasticArgs,

        /// Band weight family.
        #[arg(long = "type", value_enum, default_value_t = BandTypeArg::Hw)]
        band_type: BandTypeArg,

        /// Transformation.
        #[arg(long, value_enum, default_value_t = TransformArg::Loglog)]
        transform: TransformArg,

        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,

        /// Output path; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Pointwise confidence interval for the cause-1 CIF at one time.
    Ci {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        stochastic: StochasticArgs,

        /// Evaluation time.
        #[arg(long)]
        at: f64,

        /// Output path; stdout if omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// One-sample containment test of a reference CIF.
    Test1 {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        interval: IntervalArgs,
        #[command(flatten)]
        stochastic: StochasticArgs,

        /// Reference CIF as a two-column CSV (time, value), a step function.
        #[arg(long = "ref")]
        reference: PathBuf,

        #[arg(long = "type", value_enum, default_value_t = BandTypeArg::Hw)]
        band_type: BandTypeArg,

        #[arg(long, value_enum, default_value_t = TransformArg::Loglog)]
        transform: TransformArg,

        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Two-sample test of equal cause-1 CIFs.
    Test2 {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        interval: IntervalArgs,
        #[command(flatten)]
        stochastic: StochasticArgs,

        /// Second cohort; with one input file the group column splits it.
        #[arg(long)]
        input2: Option<PathBuf>,

        /// Test statistic family.
        #[arg(long, value_enum, default_value_t = KindArg::Ks)]
        kind: KindArg,

        /// Conservative reweighting of the bootstrap.
        #[arg(long, value_enum, default_value_t = AdjustArg::None)]
        adjust: AdjustArg,

        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Weight-scheme moment diagnostics on a dataset.
    Diagnose {
        #[command(flatten)]
        input: InputArgs,

        #[arg(long, value_enum, default_value_t = SchemeArg::Weird)]
        scheme: SchemeArg,

        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Monte Carlo studies under the calibrated constant-hazard process.
    #[command(subcommand)]
    Simulate(SimulateCommand),
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Coverage study of the simultaneous bands.
    Coverage {
        /// Cohort sizes, comma separated.
        #[arg(long = "n-list", value_delimiter = ',', default_value = "100,636")]
        n_list: Vec<usize>,

        /// Weight schemes, comma separated.
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = vec![SchemeArg::Normal, SchemeArg::Poisson, SchemeArg::Weird])]
        schemes: Vec<SchemeArg>,

        /// Band families, comma separated.
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = vec![BandTypeArg::Hw, BandTypeArg::Ep])]
        bands: Vec<BandTypeArg>,

        /// Monte Carlo runs per cell.
        #[arg(long, default_value_t = 1000)]
        nsim: usize,

        #[arg(long = "reps", default_value_t = 999)]
        replicates: usize,

        #[command(flatten)]
        interval: IntervalArgs,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        #[arg(long)]
        seed: Option<u64>,

        /// Target mix of type-1/type-2/censored percentages.
        #[arg(
            long,
            value_delimiter = ',',
            num_args = 3,
            default_value = "38.68,20.06,41.26"
        )]
        mix: Vec<f64>,

        /// Administrative censoring time of the generator.
        #[arg(long = "admin-end", default_value_t = 5.0)]
        admin_end: f64,

        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,

        #[arg(long)]
        output: Option<PathBuf>,
    },

    /// Size and power of the two-sample tests.
    Power {
        #[arg(long, default_value_t = 200)]
        n1: usize,

        #[arg(long, default_value_t = 200)]
        n2: usize,

        /// Multiplier on hazard1 for group 2 under the alternative.
        #[arg(long = "hazard-scale", default_value_t = 2.0)]
        hazard_scale: f64,

        #[arg(long, default_value_t = 1000)]
        nsim: usize,

        #[arg(long = "reps", default_value_t = 999)]
        replicates: usize,

        #[command(flatten)]
        interval: IntervalArgs,

        #[arg(long, default_value_t = 0.05)]
        alpha: f64,

        #[arg(long)]
        seed: Option<u64>,

        #[arg(long, value_enum, default_value_t = SchemeArg::Normal)]
        scheme: SchemeArg,

        #[arg(long, value_enum, default_value_t = AdjustArg::None)]
        adjust: AdjustArg,

        #[arg(
            long,
            value_delimiter = ',',
            num_args = 3,
            default_value = "38.68,20.06,41.26"
        )]
        mix: Vec<f64>,

        #[arg(long = "admin-end", default_value_t = 5.0)]
        admin_end: f64,

        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,

        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn exit_code_for(err: &CoreError) -> u8 {
    match err {
        CoreError::Inadmissible(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        // Capping workers never changes results, only wall time.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

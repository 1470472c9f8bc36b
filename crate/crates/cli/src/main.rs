//! `halddp`: command-line front end for joint Bayesian source attribution.
//!
//! Exit codes: 0 on success, 1 when the model or the numerics fail (or a
//! fit is interrupted), 2 for input, output and validation errors.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "HALDDP_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "halddp",
    version,
    about = "Joint Bayesian source attribution with Dirichlet-process type effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and write the chain, acceptance table and run manifest.
    Fit(FitArgs),
    /// Continue a stored chain for more samples.
    Append(AppendArgs),
    /// Posterior medians and credible intervals as CSV.
    Summary(SummaryArgs),
    /// Raw posterior samples of one parameter as CSV.
    Extract(ExtractArgs),
    /// Co-clustering dissimilarity matrix, dendrogram and heatmap.
    Heatmap(HeatmapArgs),
    /// Dutch model attribution with bootstrap intervals.
    Dutch(DutchArgs),
    /// Write a simulated dataset and its true parameters.
    Simulate(SimulateArgs),
    /// Per-component acceptance rates of a chain.
    Acceptance(AcceptanceArgs),
    /// Summary tables and every plot for a chain.
    Report(ReportArgs),
}

/// Inputs shared by commands that read the data files.
#[derive(Args, Clone, Default)]
pub struct InputArgs {
    /// Configuration file (`key = value` lines); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Case and isolate counts (CSV).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Source prevalences (CSV).
    #[arg(long)]
    pub prevalence: Option<PathBuf>,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory [default: $HALDDP_OUT_DIR, else the current directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; required here or in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stored samples.
    #[arg(long)]
    pub n_iter: Option<usize>,
    /// Raw iterations discarded first.
    #[arg(long)]
    pub burn_in: Option<u64>,
    /// Raw iterations per stored sample.
    #[arg(long)]
    pub thin: Option<u64>,
    /// Independent chains run in parallel; chain c uses seed + c - 1.
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub a_theta: Option<f64>,
    #[arg(long)]
    pub b_theta: Option<f64>,
    /// Number, or comma-separated numbers per source.
    #[arg(long)]
    pub a_alpha: Option<String>,
    /// Number, or comma-separated numbers per type.
    #[arg(long)]
    pub a_r: Option<String>,
    #[arg(long)]
    pub a_q: Option<f64>,
    /// Hold relative prevalences at their maximum likelihood estimates.
    #[arg(long)]
    pub fixed_r: bool,
    /// Type order in the cluster assignment sweep: fixed or random.
    #[arg(long)]
    pub sweep_order: Option<String>,
    /// No progress output.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Args)]
pub struct AppendArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Chain file to continue.
    #[arg(long)]
    pub chain: PathBuf,
    /// Extra stored samples.
    #[arg(long)]
    pub n_iter: usize,
    /// Where to write the longer chain [default: overwrite --chain].
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, short)]
    pub quiet: bool,
}

/// Interval options shared by summary and report.
#[derive(Args, Clone)]
pub struct IntervalArgs {
    /// percentile or chen-shao.
    #[arg(long, default_value = "percentile")]
    pub interval: String,
    /// Interval level is 1 - ci-alpha.
    #[arg(long, default_value_t = 0.05)]
    pub ci_alpha: f64,
}

#[derive(Args)]
pub struct SummaryArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Parameters to summarise [default: all except c].
    #[arg(long, value_delimiter = ',')]
    pub param: Vec<String>,
    #[command(flatten)]
    pub interval: IntervalArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// One of alpha, r, q, c, lambda_i, lambda_j, lambda_j_prop.
    #[arg(long)]
    pub param: String,
    #[arg(long = "type", value_delimiter = ',')]
    pub types: Vec<String>,
    #[arg(long = "source", value_delimiter = ',')]
    pub sources: Vec<String>,
    #[arg(long = "time", value_delimiter = ',')]
    pub times: Vec<String>,
    #[arg(long = "location", value_delimiter = ',')]
    pub locations: Vec<String>,
    /// First stored sample to keep (1-based).
    #[arg(long)]
    pub from: Option<usize>,
    /// Last stored sample to keep (inclusive).
    #[arg(long)]
    pub to: Option<usize>,
    /// Output CSV [default: standard output].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// average, complete or single.
    #[arg(long, default_value = "average")]
    pub linkage: String,
    /// Also write cluster memberships from a cut at this height.
    #[arg(long)]
    pub cut: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct DutchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Bootstrap replicates; 0 gives point estimates only.
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
    /// Keep human cases fixed in the bootstrap.
    #[arg(long)]
    pub no_resample_humans: bool,
    /// Keep source isolates fixed in the bootstrap.
    #[arg(long)]
    pub no_resample_sources: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub ci_alpha: f64,
    /// Output CSV [default: <out>/dutch.csv].
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// example (2 times x 2 locations, 3 clusters) or campy.
    #[arg(long, default_value = "example")]
    pub preset: String,
    /// Seed of the example preset [default: the documented example seed].
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AcceptanceArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Output CSV [default: standard output].
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub chain: PathBuf,
    /// Data file; overlays observed cases on the type plots.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dutch result CSV from `halddp dutch`; adds a source-proportion comparison.
    #[arg(long)]
    pub dutch: Option<PathBuf>,
    /// Parameters to draw trace and autocorrelation plots for.
    #[arg(long, value_delimiter = ',', default_values_t = ["alpha".to_string(), "lambda_j".to_string()])]
    pub trace: Vec<String>,
    /// Label filters for the trace plots, as dimension=label (e.g. source=ChickenA).
    #[arg(long = "select", value_delimiter = ',')]
    pub select: Vec<String>,
    /// At most this many trace plots per parameter.
    #[arg(long, default_value_t = 60)]
    pub max_cells: usize,
    /// Largest autocorrelation lag.
    #[arg(long, default_value_t = 40)]
    pub lags: usize,
    #[arg(long, default_value = "average")]
    pub linkage: String,
    #[command(flatten)]
    pub interval: IntervalArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Append(a) => commands::append(a),
        Command::Summary(a) => commands::summary(a),
        Command::Extract(a) => commands::extract(a),
        Command::Heatmap(a) => commands::heatmap(a),
        Command::Dutch(a) => commands::dutch(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Acceptance(a) => commands::acceptance(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_model_failure() { 1 } else { 2 })
        }
    }
}

use clap::{Args, Parser, Subcommand, ValueEnum};
use modavg::linmodel::VarianceMode;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "modavg", version, about = "Model-averaged Bayesian and frequentist hypothesis tests for linear regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Scan every submodel and report per-variable tests, estimates and groups.
    Analyze(AnalyzeArgs),
    /// Test one or more groups of variables.
    Test(TestArgs),
    /// Rank variables by univariable evidence and pick a subset to analyse.
    Select(SelectArgs),
    /// Two-variable false positive simulation.
    SimTwovar(SimTwovarArgs),
    /// Prior-matched Bayes FWER, FDR and strikeout simulation.
    SimPrior(SimPriorArgs),
    /// Solve for the one-term/two-term tail crossing point.
    Xcrit(XcritArgs),
    /// Run the HTTP session service.
    Serve(ServeArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Json,
    Tsv,
}

/// `known:<sigma2>` or `profile`.
pub fn parse_variance(s: &str) -> Result<VarianceMode, String> {
    if s == "profile" || s == "profiled" {
        return Ok(VarianceMode::Profiled);
    }
    let v = s
        .strip_prefix("known:")
        .ok_or_else(|| format!("expected `profile` or `known:<variance>`, got `{s}`"))?;
    match v.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(VarianceMode::Known(x)),
        _ => Err(format!("known variance must be a positive number, got `{v}`")),
    }
}

#[derive(Args, Debug, Clone)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Table, env = "MODAVG_FORMAT")]
    pub format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file with a header row.
    pub csv: PathBuf,
    /// Outcome column (default: first column).
    #[arg(long, env = "MODAVG_OUTCOME")]
    pub outcome: Option<String>,
    /// Candidate columns (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Columns always adjusted for and never tested.
    #[arg(long, value_delimiter = ',')]
    pub nuisance: Vec<String>,
    /// Fit an intercept.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, env = "MODAVG_INTERCEPT")]
    pub intercept: bool,
    /// Residual variance: `profile` or `known:<variance>`.
    #[arg(long, default_value = "profile", value_parser = parse_variance, env = "MODAVG_VARIANCE")]
    pub variance: VarianceMode,
}

#[derive(Args, Debug, Clone)]
pub struct HyperArgs {
    /// Prior odds of inclusion per variable.
    #[arg(long, default_value_t = 0.1, env = "MODAVG_MU")]
    pub mu: f64,
    /// Prior precision.
    #[arg(long, default_value_t = 1.0, env = "MODAVG_H")]
    pub h: f64,
    /// Posterior-odds threshold (default: the value giving FWER alpha).
    #[arg(long, env = "MODAVG_TAU")]
    pub tau: Option<f64>,
    /// Frequentist level.
    #[arg(long, default_value_t = 0.025, env = "MODAVG_ALPHA")]
    pub alpha: f64,
    /// Correlation threshold defining indivisible groups.
    #[arg(long, default_value_t = 1.0, env = "MODAVG_RHO")]
    pub rho: f64,
    /// Size of the full variable family when analysing a subset.
    #[arg(long, env = "MODAVG_SUB_ANALYSIS_NU")]
    pub sub_analysis_nu: Option<usize>,
    /// Variables of the full family left out of this analysis.
    #[arg(long, value_delimiter = ',')]
    pub excluded: Vec<String>,
    /// Largest number of candidates scanned exhaustively.
    #[arg(long, default_value_t = modavg::linmodel::DEFAULT_SCAN_CAP)]
    pub scan_cap: usize,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Report uncensored adjusted p-values in the main column.
    #[arg(long)]
    pub uncensored: bool,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated variables tested jointly; repeat for several groups.
    #[arg(long, required = true)]
    pub group: Vec<String>,
    /// Test groups that split a correlation block instead of refusing.
    #[arg(long)]
    pub allow_inadmissible: bool,
    #[arg(long)]
    pub uncensored: bool,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Number of variables to keep.
    #[arg(long, default_value_t = 15)]
    pub max_vars: usize,
    /// Skip a candidate correlated above this with two or more kept variables.
    #[arg(long, default_value_t = 0.9)]
    pub rho_cap: f64,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum TwovarTarget {
    Beta1,
    GrandNull,
}

#[derive(Args, Debug)]
pub struct SimTwovarArgs {
    /// Sample sizes.
    #[arg(long, value_delimiter = ',', default_value = "145")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0.1, env = "MODAVG_MU")]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0, env = "MODAVG_H")]
    pub h: f64,
    #[arg(long, default_value_t = 9.0, env = "MODAVG_TAU")]
    pub tau: f64,
    /// Correlations between the two variables.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub rho: Vec<f64>,
    /// Effect sizes of the second variable.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub beta2: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = TwovarTarget::Beta1)]
    pub target: TwovarTarget,
    #[arg(long, default_value_t = 100_000, env = "MODAVG_REPLICATES")]
    pub replicates: u64,
    #[arg(long, default_value_t = 1, env = "MODAVG_SEED")]
    pub seed: u64,
    /// Simulate full datasets and fit them instead of sampling scores.
    #[arg(long)]
    pub data_level: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct SimPriorArgs {
    #[arg(long, default_value_t = 15)]
    pub nu: usize,
    #[arg(long, default_value_t = 145)]
    pub n: usize,
    #[arg(long, default_value_t = 0.1, env = "MODAVG_MU")]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0, env = "MODAVG_H")]
    pub h: f64,
    #[arg(long, default_value_t = 9.0, env = "MODAVG_TAU")]
    pub tau: f64,
    /// Fixed design: CSV whose columns are the candidates.
    #[arg(long, conflicts_with_all = ["equicorr", "ar1"])]
    pub design_csv: Option<PathBuf>,
    /// Synthetic design with this common pairwise correlation.
    #[arg(long, conflicts_with = "ar1")]
    pub equicorr: Option<f64>,
    /// Synthetic design with correlation phi^|i-j|.
    #[arg(long)]
    pub ar1: Option<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.9,1")]
    pub rho_levels: Vec<f64>,
    #[arg(long, default_value_t = 10_000, env = "MODAVG_REPLICATES")]
    pub replicates: u64,
    #[arg(long, default_value_t = 1, env = "MODAVG_SEED")]
    pub seed: u64,
    /// Also report the strikeout rate of marginal tests at this FWER level.
    #[arg(long)]
    pub strikeout_alpha: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct XcritArgs {
    /// Also check the tail by Monte Carlo with this many draws.
    #[arg(long)]
    pub mc_draws: Option<u64>,
    #[arg(long, default_value_t = 1, env = "MODAVG_SEED")]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8080, env = "MODAVG_PORT")]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1", env = "MODAVG_BIND")]
    pub bind: String,
    #[arg(long, default_value_t = modavg::linmodel::DEFAULT_SCAN_CAP, env = "MODAVG_SCAN_CAP")]
    pub scan_cap: usize,
}

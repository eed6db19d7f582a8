use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dash", version, about = "Exact multi-party regression and association scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Linear regression of one response on the covariates.
    Regress(RegressArgs),
    /// Association scan of every feature against every response.
    Scan(ScanArgs),
    /// Reduce one party's dataset to a compressed message.
    Compress(CompressArgs),
    /// Combine compressed messages from every party.
    Combine(CombineArgs),
    /// Scan results from combined statistics.
    Finalize(FinalizeArgs),
    /// Fold one more party into combined statistics.
    Merge(MergeArgs),
    /// Synthetic parties: check the federated pipeline against a pooled scan.
    Simulate(SimulateArgs),
}

/// Where a TSV dataset is and which columns play which role.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Tab-separated file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Add a column of ones to the covariates.
    #[arg(long)]
    pub intercept: bool,
    /// Column holding sample ids (excluded from features).
    #[arg(long)]
    pub sample_id: Option<String>,
}

#[derive(Args, Debug)]
pub struct RegressArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub response: String,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ScanColumns {
    /// Comma-separated response columns.
    #[arg(long, alias = "response", value_delimiter = ',', required = true)]
    pub responses: Vec<String>,
    /// Comma-separated feature columns; default is every other column.
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub columns: ScanColumns,
    #[arg(long, default_value_t = 256)]
    pub block_size: usize,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterArg {
    PerParty,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub columns: ScanColumns,
    #[arg(long)]
    pub out: PathBuf,
    /// Mean-center every column with this party's own means.
    #[arg(long, value_enum)]
    pub center: Option<CenterArg>,
    /// Defaults to the data file's stem.
    #[arg(long)]
    pub party_id: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyArg {
    /// Sum CᵀC under the mask and factor it.
    MaskedGram,
    /// Send each party's R factor in the clear and stack them.
    PlaintextStack,
}

#[derive(Args, Debug)]
pub struct CombineArgs {
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Sum through pairwise masking instead of in the clear.
    #[arg(long, requires = "seeds")]
    pub secure: bool,
    /// Pairwise seeds: party_a, party_b, 64 hex digits per line.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PolicyArg::MaskedGram)]
    pub policy: PolicyArg,
    #[arg(long, default_value_t = 1)]
    pub round: u64,
    #[arg(long, default_value_t = 24)]
    pub fractional_bits: u32,
}

#[derive(Args, Debug)]
pub struct FinalizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long)]
    pub combined: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 3)]
    pub parties: usize,
    #[arg(long, default_value_t = 3000)]
    pub samples: usize,
    #[arg(long, default_value_t = 500)]
    pub features: usize,
    /// Covariates including the intercept.
    #[arg(long, default_value_t = 5)]
    pub covariates: usize,
    #[arg(long, default_value_t = 2)]
    pub responses: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also run the masked combine.
    #[arg(long)]
    pub secure: bool,
    /// Write pooled.tsv and party<p>.tsv into this directory.
    #[arg(long)]
    pub write_parties: Option<PathBuf>,
}

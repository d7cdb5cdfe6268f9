use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal failure (solver breakdown, unwritable output)
  2  input error: unreadable or malformed files, invalid flags or spec
  3  the solver did not converge; outputs are still written";

/// Robust PCA decomposition and path-inflation detection for RTT matrices.
#[derive(Debug, Parser)]
#[command(name = "delayspace", version, after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a matrix into low-rank L and sparse S; write CSVs and heatmaps.
    #[command(after_help = EXIT_CODES)]
    Decompose(DecomposeArgs),
    /// Rank inflated paths by their sparse component.
    #[command(after_help = EXIT_CODES)]
    Detect(DetectArgs),
    /// Relate the rank of L to endpoint feature counts.
    #[command(after_help = EXIT_CODES)]
    RankAnalysis(RankArgs),
    /// Generate a planted fixture and optionally score detectors on it.
    #[command(after_help = EXIT_CODES)]
    Synth(SynthArgs),
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Ratio threshold: flag cells with S / L above this.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Absolute inflation threshold in ms for the cross-continent filter.
    #[arg(long = "abs-ms")]
    pub abs_ms: Option<f64>,
    /// Apply the absolute filter to every cell, not only cross-continent ones.
    #[arg(long = "abs-all")]
    pub abs_all: bool,
    /// Candidates with less inflation are kept but marked below_floor.
    #[arg(long = "severity-floor-ms")]
    pub severity_floor_ms: Option<f64>,
    /// Weight of the sparse term; default 1/sqrt(max(rows, cols)).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Relative residual at which the solver stops.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long = "max-iters")]
    pub max_iters: Option<usize>,
    /// Minimum distinct measured IPs for a prefix column.
    #[arg(long = "min-ips")]
    pub min_ips: Option<usize>,
    /// Fill missing cells from same (AS, city) donor groups first.
    #[arg(long)]
    pub interpolate: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "out-dir", default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON file with `solver`, `filter`, `min_ips`, `interpolate`, `seed`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Either a matrix CSV or a measurement bundle.
#[derive(Debug, Clone, Default, Args)]
pub struct Input {
    /// Matrix CSV: header of column ids, leading column of row ids.
    #[arg(long, conflicts_with_all = ["measurements", "prefixes"])]
    pub matrix: Option<PathBuf>,
    /// Cell-state grid (O/I/M). Defaults to `<matrix stem>.mask.csv` if present.
    #[arg(long, requires = "matrix")]
    pub mask: Option<PathBuf>,
    /// Probe records: source_id,destination_ip,rtt_ms,probe_index,complete.
    #[arg(long, requires = "prefixes")]
    pub measurements: Option<PathBuf>,
    /// One CIDR per line, optional `,origin_asn`.
    #[arg(long, requires = "measurements")]
    pub prefixes: Option<PathBuf>,
    /// source_id,asn,city,country,continent
    #[arg(long = "source-tags")]
    pub source_tags: Option<PathBuf>,
    /// prefix_or_ip,asn,city,country,continent
    #[arg(long = "dest-tags")]
    pub dest_tags: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub common: Common,
    /// Scale each heatmap by its own maximum instead of the triple's.
    #[arg(long = "per-file-scale")]
    pub per_file_scale: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub common: Common,
    /// Id echoed in the report; defaults to the input file stem.
    #[arg(long = "matrix-id")]
    pub matrix_id: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Granularity {
    City,
    Country,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub input: Input,
    #[command(flatten)]
    pub common: Common,
    /// Random submatrices to analyse; 0 analyses the full matrix only.
    #[arg(long, default_value_t = 0)]
    pub submatrices: usize,
    /// Smallest submatrix side.
    #[arg(long = "min-dim", default_value_t = 5)]
    pub min_dim: usize,
    #[arg(long, value_enum, default_value = "city")]
    pub granularity: Granularity,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthetic spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub common: Common,
    /// Score RPCA, two-sigma and PCA over the spec's sweep seeds.
    #[arg(long)]
    pub sweep: bool,
    /// Hosts per prefix in the measurement bundle.
    #[arg(long = "ips-per-prefix", default_value_t = 10)]
    pub ips_per_prefix: usize,
    /// Planted anomalies below this inflation are not scored.
    #[arg(long = "min-inflation-ms", default_value_t = 0.0)]
    pub min_inflation_ms: f64,
}

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmcorr::evalbench::{Split, DEFAULT_MAX_THRESHOLD};
use fmcorr::funcmap::{FmapWeights, RecoveryMethod, SolveOptions, DEFAULT_FMAP_K};
use fmcorr::pipeline::{DescriptorStack, MatchConfig, MatchMethod};

/// Dense correspondences between triangle meshes via regularized functional maps.
#[derive(Debug, Parser)]
#[command(name = "fmcorr", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    /// Log as JSON lines on standard error.
    #[arg(long, global = true)]
    pub log_json: bool,

    /// Seed for every sampled quantity.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Match target vertices to source vertices and write the map.
    Match(MatchArgs),
    /// Score a map between two dataset instances.
    Eval(EvalArgs),
    /// All ordered pairs of every category of a dataset.
    Benchmark(BenchmarkArgs),
    /// Color a target mesh through a map.
    TransferColor(TransferColorArgs),
    /// Move template keypoints onto a target mesh.
    TransferKeypoints(TransferKeypointsArgs),
    /// Write the descriptor stack of a mesh as a DMF file.
    Descriptors(DescriptorArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Fmap,
    Hungarian,
    Nn,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Recovery {
    SpectralNearest,
    RowArgmax,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

/// Matcher settings shared by every command that solves a map.
#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value = "fmap")]
    pub method: Method,
    /// Eigenfunctions per shape in the functional map.
    #[arg(long, default_value_t = DEFAULT_FMAP_K)]
    pub k: usize,
    #[arg(long, default_value_t = FmapWeights::default().alpha)]
    pub alpha: f64,
    #[arg(long, default_value_t = FmapWeights::default().beta)]
    pub beta: f64,
    #[arg(long, default_value_t = FmapWeights::default().w_entropy)]
    pub w_entropy: f64,
    #[arg(long, default_value_t = FmapWeights::default().w_sum)]
    pub w_sum: f64,
    /// Comma-separated descriptor stack used when no feature files are given.
    #[arg(long, default_value = "hks,wks,posenc")]
    pub descriptors: String,
    #[arg(long, value_enum, default_value = "spectral-nearest")]
    pub recovery: Recovery,
    #[arg(long, default_value_t = SolveOptions::default().max_iter)]
    pub max_iter: usize,
}

impl SolverArgs {
    pub fn config(&self) -> fmcorr::Result<MatchConfig> {
        let weights = FmapWeights {
            alpha: self.alpha,
            beta: self.beta,
            w_entropy: self.w_entropy,
            w_sum: self.w_sum,
        };
        weights.validate()?;
        if self.k == 0 {
            return Err(fmcorr::Error::Argument("--k must be positive".into()));
        }
        Ok(MatchConfig {
            method: match self.method {
                Method::Fmap => MatchMethod::Fmap,
                Method::Hungarian => MatchMethod::Hungarian,
                Method::Nn => MatchMethod::Nn,
            },
            k: self.k,
            weights,
            solve: SolveOptions {
                max_iter: self.max_iter,
                ..Default::default()
            },
            recovery: match self.recovery {
                Recovery::SpectralNearest => RecoveryMethod::SpectralNearest,
                Recovery::RowArgmax => RecoveryMethod::RowArgmax,
            },
            descriptors: self.descriptors.parse::<DescriptorStack>()?,
            keep_dense: false,
        })
    }
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Map JSON to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Per-vertex source features (DMF or text); requires --target-features.
    #[arg(long, requires = "target_features")]
    pub source_features: Option<PathBuf>,
    #[arg(long, requires = "source_features")]
    pub target_features: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Map JSON from `match`, solved with the source instance as source.
    #[arg(long)]
    pub map: PathBuf,
    /// Source instance directory (`<root>/<category>/<name>`).
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value_t = DEFAULT_MAX_THRESHOLD)]
    pub max_threshold: f64,
    /// Result JSON; printed to standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Also score this source feature file against the source groups.
    #[arg(long)]
    pub score_features: Option<PathBuf>,
    /// Vertex pairs sampled for --score-features.
    #[arg(long, default_value_t = 10_000)]
    pub pairs: usize,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Dataset root (`<root>/<category>/<instance>/`).
    pub root: PathBuf,
    /// Per-pair CSV.
    #[arg(long)]
    pub csv: PathBuf,
    /// Aggregate JSON.
    #[arg(long)]
    pub json: PathBuf,
    /// Restrict to one category.
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Feature file inside each instance directory used instead of descriptors.
    #[arg(long)]
    pub feature_file: Option<String>,
    #[arg(long, default_value_t = DEFAULT_MAX_THRESHOLD)]
    pub max_threshold: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
}

impl SplitArg {
    pub fn split(self) -> Split {
        match self {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TransferColorArgs {
    /// Simplified source mesh the map was solved on.
    #[arg(long)]
    pub source: PathBuf,
    /// Colored full-resolution source; defaults to --source.
    #[arg(long)]
    pub source_textured: Option<PathBuf>,
    #[arg(long)]
    pub target: PathBuf,
    /// Target-to-source map JSON.
    #[arg(long)]
    pub map: PathBuf,
    /// Colored PLY to write.
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferKeypointsArgs {
    /// Mesh the keypoints live on.
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub target: PathBuf,
    /// Keypoints JSON: `[{"label", "vertex"} | {"label", "xyz"}]`.
    #[arg(long)]
    pub keypoints: PathBuf,
    /// Target-to-template map JSON; solved on the fly when absent.
    #[arg(long, conflicts_with = "reverse")]
    pub map: Option<PathBuf>,
    /// Solve the template-to-target map instead of inverting the usual one.
    #[arg(long)]
    pub reverse: bool,
    /// Transferred keypoints JSON.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct DescriptorArgs {
    pub mesh: PathBuf,
    /// DMF file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    /// HKS time samples; selecting any size restricts the stack to the sized kinds.
    #[arg(long)]
    pub hks: Option<usize>,
    /// WKS energy samples.
    #[arg(long)]
    pub wks: Option<usize>,
    /// Positional-encoding frequency bands.
    #[arg(long)]
    pub posenc: Option<usize>,
    /// Stack used when no size is given.
    #[arg(long, default_value = "hks,wks,posenc")]
    pub stack: String,
}

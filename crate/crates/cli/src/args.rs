//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pointseg::io::SynthKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "pointseg",
    version,
    about = "Unsupervised part segmentation of 3D point clouds",
    after_help = "Exit codes: 0 success, 2 bad arguments, 3 I/O failure, 4 pipeline failure.\n\
                  Config files are flat JSON objects keyed by configuration field names; \
                  flags override the file, the file overrides the defaults."
)]
pub struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment point clouds and write labeled PLY files, reports and a manifest.
    Segment(SegmentArgs),
    /// The k-means baseline: `segment --method kmeans` with k-means options.
    Baseline(BaselineArgs),
    /// Compare a labeled prediction with labeled ground truth.
    Eval(EvalArgs),
    /// Re-run region growing over a list of values of one parameter.
    Sweep(SweepArgs),
    /// Generate a synthetic labeled cloud.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Seed region growing only.
    Srg,
    /// Region growing, self-trained network and superpoint refinement.
    Srgnet,
    /// k-means on point features.
    Kmeans,
}

/// Options shared by the commands that run the pipeline.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Flat JSON configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Number of parts q (at least 2).
    #[arg(long)]
    pub parts: Option<usize>,
    /// Seed for every random choice of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Options for runs over several input files.
#[derive(Debug, Clone, Args)]
pub struct BatchArgs {
    /// Input clouds (.ply, .xyz, .obj, or ShapeNet .pts with a .seg next to it).
    #[arg(value_name = "INPUT")]
    pub inputs: Vec<PathBuf>,
    /// Replay a previous run: its configuration, method and inputs become the
    /// starting point; other options still apply on top.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Number of clouds processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[command(flatten)]
    pub batch: BatchArgs,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Training iterations T.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Region-growing normal threshold in degrees.
    #[arg(long)]
    pub normal_deg: Option<f64>,
    /// Region-growing neighbourhood size.
    #[arg(long)]
    pub knn: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Features {
    Xyz,
    XyzNormal,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub batch: BatchArgs,
    /// Feature space of the clustering.
    #[arg(long, value_enum)]
    pub features: Option<Features>,
    /// Weight of the normals in `xyz-normal` mode.
    #[arg(long)]
    pub normal_weight: Option<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Labeled prediction.
    pub pred: PathBuf,
    /// Labeled ground truth.
    pub truth: PathBuf,
    /// Print JSON instead of `key: value` lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// `normal_threshold_deg`.
    NormalDeg,
    /// `euclid_threshold_factor`.
    EuclidFactor,
    /// `knn_k` of region growing (integers only).
    Knn,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Input cloud with ground-truth labels.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// plane, sphere, dihedral, two_blobs or humanoid6.
    #[arg(value_parser = parse_kind)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 6000)]
    pub n: usize,
    /// Gaussian noise as a fraction of the shape's size.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Attach analytic normals.
    #[arg(long)]
    pub normals: bool,
    /// Centre distance of `two_blobs`, in blob radii.
    #[arg(long, default_value_t = 10.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PLY path; the manifest goes next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: pointseg::error::Error| e.to_string())
}

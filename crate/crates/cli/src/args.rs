use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gcnstab::graph::FilterKind;
use gcnstab::model::{Activation, Loss, DEFAULT_XENT_EPS};
use gcnstab::stability::LambdaSource;
use gcnstab::trainer::SequenceMode;

#[derive(Debug, Parser)]
#[command(name = "gcnstab", version, about = "Stability experiments for single-layer graph convolution models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a seeded synthetic dataset in canonical form.
    Synth(SynthArgs),
    /// Largest singular value of each filter.
    Spectra(SpectraArgs),
    /// Check that every ego-graph's spectrum sits under the whole graph's.
    Interlace(InterlaceArgs),
    /// Train by SGD and record per-epoch losses.
    Train(TrainArgs),
    /// Train on S and S^i in lockstep and record parameter divergence.
    Twin(TwinArgs),
    /// Per-epoch generalization gap with the theoretical bound attached.
    Gap(GapArgs),
    /// Closed-form stability and generalization bounds as JSON.
    Bound(BoundArgs),
    /// Empirical uniform stability against the closed-form bound.
    Stability(StabilityArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Spectra(_) => "spectra",
            Command::Interlace(_) => "interlace",
            Command::Train(_) => "train",
            Command::Twin(_) => "twin",
            Command::Gap(_) => "gap",
            Command::Bound(_) => "bound",
            Command::Stability(_) => "stability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphChoice {
    Er,
    Star,
    Complete,
    Cycle,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: GraphChoice,
    #[arg(long)]
    pub n: usize,
    /// Edge probability for `er`.
    #[arg(long, default_value_t = 0.05)]
    pub p: f64,
    /// Feature dimension.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Probability of flipping each teacher label.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0.6)]
    pub train_fraction: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterChoice {
    Unnorm,
    Symnorm,
    Rw,
    Identity,
}

impl FilterChoice {
    pub fn kind(self) -> FilterKind {
        match self {
            FilterChoice::Unnorm => FilterKind::Unnormalized,
            FilterChoice::Symnorm => FilterKind::SymNormalized,
            FilterChoice::Rw => FilterKind::RandomWalk,
            FilterChoice::Identity => FilterKind::Identity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ActChoice {
    Elu,
    Sigmoid,
    Tanh,
}

impl ActChoice {
    pub fn activation(self) -> Activation {
        match self {
            ActChoice::Elu => Activation::Elu1,
            ActChoice::Sigmoid => Activation::Sigmoid,
            ActChoice::Tanh => Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossChoice {
    Logistic,
    Xent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderChoice {
    Uniform,
    Permutation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaChoice {
    GLambda,
    LambdaMax,
}

impl LambdaChoice {
    pub fn source(self) -> LambdaSource {
        match self {
            LambdaChoice::GLambda => LambdaSource::GLambda,
            LambdaChoice::LambdaMax => LambdaSource::LambdaMax,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// Canonical dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Scale every nonzero feature row to unit norm on load.
    #[arg(long, value_enum, default_value = "on")]
    pub normalize: Switch,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "symnorm")]
    pub filter: FilterChoice,
    #[arg(long, value_enum, default_value = "elu")]
    pub act: ActChoice,
    #[arg(long, value_enum, default_value = "logistic")]
    pub loss: LossChoice,
    /// Clamp for the cross-entropy loss.
    #[arg(long, default_value_t = DEFAULT_XENT_EPS)]
    pub xent_eps: f64,
}

impl ModelArgs {
    pub fn loss(&self) -> Loss {
        match self.loss {
            LossChoice::Logistic => Loss::Logistic,
            LossChoice::Xent => Loss::ClampedCrossEntropy { eps: self.xent_eps },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SgdArgs {
    #[arg(long, default_value_t = 1.0)]
    pub eta: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sample order: uniform with replacement, or a fresh permutation per epoch.
    #[arg(long, value_enum, default_value = "uniform")]
    pub order: OrderChoice,
    /// Seed for a uniform(-0.01, 0.01) start; zero weights when absent.
    #[arg(long)]
    pub init_seed: Option<u64>,
}

impl SgdArgs {
    pub fn mode(&self) -> SequenceMode {
        match self.order {
            OrderChoice::Uniform => SequenceMode::UniformWithReplacement,
            OrderChoice::Permutation => SequenceMode::PermutationPerEpoch,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SpectraArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Filters to report; all four when absent.
    #[arg(long, value_enum, num_args = 1..)]
    pub filter: Vec<FilterChoice>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iters: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InterlaceArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Filters to check; unnorm, symnorm and rw when absent.
    #[arg(long, value_enum, num_args = 1..)]
    pub filter: Vec<FilterChoice>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TwinArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    /// Training position replaced in S^i.
    #[arg(long, default_value_t = 0)]
    pub perturb_index: usize,
    /// Node whose sample replaces it; the first test node when absent.
    #[arg(long)]
    pub replacement: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundSourceArgs {
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Quantity used for λ in the bounds.
    #[arg(long, value_enum, default_value = "g-lambda")]
    pub lambda_source: LambdaChoice,
    /// Loss bound M; derived from the trained weights when absent.
    #[arg(long)]
    pub loss_bound: Option<f64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[command(flatten)]
    pub bound: BoundSourceArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[command(flatten)]
    pub bound: BoundSourceArgs,
    /// Training-set size; the split's when absent.
    #[arg(long)]
    pub m: Option<usize>,
    /// SGD step count T; epochs × m when absent.
    #[arg(long)]
    pub steps: Option<usize>,
    /// JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StabilityArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub sgd: SgdArgs,
    #[command(flatten)]
    pub bound: BoundSourceArgs,
    /// Number of replaced training positions.
    #[arg(long, default_value_t = 5)]
    pub perturbations: usize,
    /// SGD seeds averaged per expectation.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

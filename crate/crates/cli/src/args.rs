//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ftir_unmix_core::model::BnMode;
use ftir_unmix_core::train::LossPixels;
use ftir_unmix_core::{LossKind, ModelConfig, TrainConfig, WeightConfig};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "ftir-unmix",
    version,
    about = "Blind unmixing of FTIR hyperspectral cubes with a patch-wise autoencoder"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cube with ground truth.
    Synth(SynthArgs),
    /// Estimate band-reliability weights from a cube.
    Weights(WeightsArgs),
    /// Train the autoencoder and write a checkpoint.
    Train(TrainArgs),
    /// Apply a checkpoint: abundance maps and endmember spectra.
    Unmix(UnmixArgs),
    /// Score a checkpoint against synthetic ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per K and export each for inspection.
    Ksweep(KsweepArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Sad,
    Wsad,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Sad => LossKind::Sad,
            LossArg::Wsad => LossKind::Wsad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelsArg {
    All,
    Center,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub height: usize,
    #[arg(long, default_value_t = 32)]
    pub width: usize,
    #[arg(long, default_value_t = 100)]
    pub bands: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub peaks: usize,
    #[arg(long, default_value_t = 3.0)]
    pub peak_width_min: f64,
    #[arg(long, default_value_t = 10.0)]
    pub peak_width_max: f64,
    #[arg(long, default_value_t = 0)]
    pub smoothing_radius: usize,
    #[arg(long, default_value_t = 0.3)]
    pub concentration: f64,
    #[arg(long, default_value_t = 30.0)]
    pub snr_db: f64,
    /// Skip the noise term entirely.
    #[arg(long)]
    pub noiseless: bool,
    /// Inject the default spike, flat and common-mode artifacts.
    #[arg(long)]
    pub artifacts: bool,
    /// Attach a linear wavenumber axis from START to END (cm⁻¹).
    #[arg(long, num_args = 2, value_names = ["START", "END"], allow_negative_numbers = true)]
    pub wavenumbers: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WeightOpts {
    #[arg(long, default_value_t = 1.0)]
    pub gamma_rough: f64,
    #[arg(long, default_value_t = 1.0)]
    pub gamma_flat: f64,
    #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
    pub tau: f64,
    #[arg(long, default_value_t = 2.0)]
    pub alpha_sig: f64,
    #[arg(long, default_value_t = 0.05)]
    pub w_min: f64,
    #[arg(long, default_value_t = 1e-12)]
    pub eps: f64,
}

impl WeightOpts {
    pub fn config(&self) -> WeightConfig {
        WeightConfig {
            gamma_rough: self.gamma_rough,
            gamma_flat: self.gamma_flat,
            tau: self.tau,
            alpha_sig: self.alpha_sig,
            w_min: self.w_min,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WeightsArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub weights: WeightOpts,
}

/// Training and architecture options shared by `train` and `ksweep`.
#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 5)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 20_000)]
    pub patches: usize,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.005)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, value_enum, default_value_t = LossArg::Wsad)]
    pub loss: LossArg,
    /// Pixels entering the loss: every patch pixel or only the center.
    #[arg(long, value_enum, default_value_t = PixelsArg::All)]
    pub loss_pixels: PixelsArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    /// Band-weight CSV; required for `--loss wsad`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Hidden channels of the encoder.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 5.0)]
    pub alpha_soft: f64,
}

impl TrainOpts {
    pub fn model_config(&self, bands: usize, k: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(bands, k);
        cfg.patch = self.patch_size;
        cfg.hidden = self.hidden;
        cfg.alpha_soft = self.alpha_soft;
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            num_patches: self.patches,
            patch: self.patch_size,
            batch_size: self.batch,
            epochs: self.epochs,
            learning_rate: self.lr,
            seed: self.seed,
            loss: self.loss.into(),
            loss_pixels: match self.loss_pixels {
                PixelsArg::All => LossPixels::All,
                PixelsArg::Center => LossPixels::Center,
            },
            deterministic: self.deterministic,
            ..TrainConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Number of endmembers.
    #[arg(long)]
    pub k: usize,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct UnmixArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    /// Directory written by `synth` under `truth/`.
    #[arg(long)]
    pub truth_dir: PathBuf,
    /// Band-weight CSV to score against the artifact log.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GradLoss {
    Sad,
    Wsad,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BnArg {
    /// Fixed normalization statistics.
    Running,
    /// Statistics of the batch itself.
    Batch,
}

impl From<BnArg> for BnMode {
    fn from(b: BnArg) -> Self {
        match b {
            BnArg::Running => BnMode::Running,
            BnArg::Batch => BnMode::Batch,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = GradLoss::Both)]
    pub loss: GradLoss,
    #[arg(long, value_enum, default_value_t = BnArg::Running)]
    pub bn: BnArg,
    #[arg(long, default_value_t = 12)]
    pub bands: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 4)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the run manifest; nothing is written without it.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KsweepArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub k_min: usize,
    #[arg(long)]
    pub k_max: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Ground truth from `synth`; adds matched SAD per K to the summary.
    #[arg(long)]
    pub truth_dir: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainOpts,
}

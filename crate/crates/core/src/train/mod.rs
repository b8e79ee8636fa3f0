//! Losses over patch batches, gradients, Adam and the training loop.

mod adam;
mod gradcheck;
mod patches;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::cube::{AbundanceMap, HyperCube};
use crate::error::{bail, Error, Result};
use crate::loss::wsad_grad;
use crate::model::{
    self, init_params, update_running_stats, BnMode, DropoutMasks, ForwardCache, ForwardOptions,
    ModelConfig, ModelParams, ParamTensors,
};
use crate::rng::{stream, Stream};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use gradcheck::{
    central_difference, finite_diff_grad, gradient_check, max_relative_error, relative_error,
    GradCheckConfig, GradCheckReport,
};
pub use patches::{sample_patches, PatchBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Sad,
    Wsad,
}

/// Which patch pixels enter the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPixels {
    /// Every pixel of every patch.
    All,
    /// Only the center pixel of each patch.
    Center,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub num_patches: usize,
    pub patch: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossKind,
    pub loss_pixels: LossPixels,
    /// Requests ordered reductions. Training is single-threaded, so every
    /// run already satisfies this.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    /// 5×5 patches, 20000 of them, 500 epochs of Adam at 0.005, batch 64.
    fn default() -> Self {
        Self {
            num_patches: 20_000,
            patch: 5,
            batch_size: 64,
            epochs: 500,
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossKind::Wsad,
            loss_pixels: LossPixels::All,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch size must be at least 1");
        }
        if self.num_patches == 0 {
            bail!(Config, "num_patches must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bail!(Config, "learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            bail!(Config, "Adam epsilon must be positive");
        }
        if self.patch.is_multiple_of(2) {
            bail!(Config, "patch side must be odd, got {}", self.patch);
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    /// Mean training loss per epoch, radians.
    pub epoch_loss: Vec<f64>,
    /// Wall-clock duration; 0 when no clock was supplied.
    pub seconds: f64,
    pub final_loss: f64,
}

/// Hooks into the training loop. `now` supplies wall-clock seconds, which
/// the `no_std` core cannot read itself.
pub trait TrainMonitor {
    fn now(&self) -> Option<f64> {
        None
    }

    fn on_epoch(&mut self, _epoch: usize, _mean_loss: f64) {}
}

impl TrainMonitor for () {}

/// Mean loss over the selected pixels of a forward pass, and `∂L/∂X̂`.
pub fn loss_and_recon_grad(
    cfg: &ModelConfig,
    cache: &ForwardCache,
    weights: &[f64],
    pixels: LossPixels,
) -> (f64, Vec<f64>) {
    let bands = cfg.bands;
    let area = cfg.patch_area();
    let n = cache.samples();
    let np = n * area;
    let center = (cfg.patch / 2) * cfg.patch + cfg.patch / 2;
    let selected: Vec<usize> = match pixels {
        LossPixels::All => (0..np).collect(),
        LossPixels::Center => (0..n).map(|s| s * area + center).collect(),
    };
    let scale = 1.0 / selected.len() as f64;
    let (x, x_hat) = (cache.input(), cache.reconstruction());
    let mut grad = vec![0.0; bands * np];
    let (mut xs, mut ys, mut gs) = (vec![0.0; bands], vec![0.0; bands], vec![0.0; bands]);
    let mut total = 0.0;
    for &q in &selected {
        for b in 0..bands {
            xs[b] = x[b * np + q];
            ys[b] = x_hat[b * np + q];
        }
        gs.fill(0.0);
        total += wsad_grad(&xs, &ys, weights, scale, &mut gs);
        for b in 0..bands {
            grad[b * np + q] = gs[b];
        }
    }
    (total * scale, grad)
}

fn check_batch(cfg: &ModelConfig, batch: &PatchBatch, weights: &[f64]) -> Result<()> {
    if batch.bands != cfg.bands || batch.patch != cfg.patch {
        bail!(
            Dimension,
            "batch of {}-band {}x{} patches for a model with B={} p={}",
            batch.bands,
            batch.patch,
            batch.patch,
            cfg.bands,
            cfg.patch
        );
    }
    if weights.len() != cfg.bands {
        bail!(
            Dimension,
            "{} band weights for {} bands",
            weights.len(),
            cfg.bands
        );
    }
    if batch.is_empty() {
        bail!(Dimension, "empty patch batch");
    }
    Ok(())
}

/// Mean WSAD over the selected pixels of every patch in the batch.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &PatchBatch,
    weights: &[f64],
    pixels: LossPixels,
    opts: &ForwardOptions,
) -> Result<f64> {
    check_batch(cfg, batch, weights)?;
    let cache = model::forward(params, cfg, &batch.data, batch.len(), opts);
    Ok(loss_and_recon_grad(cfg, &cache, weights, pixels).0)
}

/// Loss and exact gradients for one batch with fixed stochastic choices.
pub fn batch_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &PatchBatch,
    weights: &[f64],
    pixels: LossPixels,
    opts: &ForwardOptions,
) -> Result<(f64, ParamTensors)> {
    check_batch(cfg, batch, weights)?;
    let cache = model::forward(params, cfg, &batch.data, batch.len(), opts);
    let (loss, g_recon) = loss_and_recon_grad(cfg, &cache, weights, pixels);
    let grads = model::backward(params, cfg, &cache, &g_recon);
    check_finite(&grads)?;
    Ok((loss, grads))
}

fn check_finite(grads: &ParamTensors) -> Result<()> {
    for (name, t) in grads.named() {
        if let Some(i) = t.iter().position(|v| !v.is_finite()) {
            bail!(Numerical, "non-finite gradient in {name} at index {i}");
        }
    }
    Ok(())
}

fn resolve_weights(
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    match (tcfg.loss, weights) {
        (LossKind::Sad, _) => Ok(vec![1.0; cfg.bands]),
        (LossKind::Wsad, Some(w)) if w.len() == cfg.bands => Ok(w.to_vec()),
        (LossKind::Wsad, Some(w)) => Err(Error::Dimension(format!(
            "{} band weights for {} bands",
            w.len(),
            cfg.bands
        ))),
        (LossKind::Wsad, None) => Err(Error::Config("WSAD training needs band weights".into())),
    }
}

/// Trains from a fresh initialization. See [`train_with`].
pub fn train(
    cube: &HyperCube,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    weights: Option<&[f64]>,
) -> Result<(ModelParams, TrainHistory)> {
    train_with(cube, cfg, tcfg, weights, &mut ())
}

/// Samples `num_patches` patch centers once, then for every epoch visits
/// them in a fresh random order in mini-batches: train-mode forward, loss,
/// backward, running-statistics update and one Adam step per batch.
pub fn train_with(
    cube: &HyperCube,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    weights: Option<&[f64]>,
    monitor: &mut dyn TrainMonitor,
) -> Result<(ModelParams, TrainHistory)> {
    cfg.validate()?;
    tcfg.validate()?;
    if cfg.patch != tcfg.patch {
        bail!(
            Config,
            "model patch side {} differs from training patch side {}",
            cfg.patch,
            tcfg.patch
        );
    }
    let w = resolve_weights(cfg, tcfg, weights)?;
    let start = monitor.now();
    let mut params = init_params(cfg, cube, tcfg.seed)?;
    let centers = sample_patches(cube, tcfg.num_patches, tcfg.patch, tcfg.seed)?;
    let mut shuffle_rng = stream(tcfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(tcfg.seed, Stream::Dropout);
    let adam_cfg = tcfg.adam();
    let mut state = AdamState::new(&params.learn);
    let mut order: Vec<usize> = (0..centers.len()).collect();
    let mut epoch_loss = Vec::with_capacity(tcfg.epochs);
    let mut batch_centers = Vec::with_capacity(tcfg.batch_size);

    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sum = 0.0;
        for (bi, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            batch_centers.clear();
            batch_centers.extend(chunk.iter().map(|&i| centers[i]));
            let batch = PatchBatch::extract(cube, &batch_centers, tcfg.patch)?;
            let masks = DropoutMasks::sample(batch.len(), cfg, &mut dropout_rng);
            let opts = ForwardOptions {
                bn: BnMode::Batch,
                dropout: Some(&masks),
            };
            let cache = model::forward(&params, cfg, &batch.data, batch.len(), &opts);
            let (loss, g_recon) = loss_and_recon_grad(cfg, &cache, &w, tcfg.loss_pixels);
            if !loss.is_finite() {
                bail!(Numerical, "non-finite loss at epoch {epoch}, batch {bi}");
            }
            let grads = model::backward(&params, cfg, &cache, &g_recon);
            check_finite(&grads)
                .map_err(|e| Error::Numerical(format!("epoch {epoch}, batch {bi}: {e}")))?;
            update_running_stats(&mut params, cfg, &cache);
            adam_step(&mut state, &mut params.learn, &grads, &adam_cfg);
            sum += loss * chunk.len() as f64;
        }
        let mean = sum / centers.len() as f64;
        epoch_loss.push(mean);
        monitor.on_epoch(epoch, mean);
    }
    let seconds = match (start, monitor.now()) {
        (Some(a), Some(b)) => b - a,
        _ => 0.0,
    };
    let final_loss = epoch_loss.last().copied().unwrap_or(f64::NAN);
    Ok((
        params,
        TrainHistory {
            epoch_loss,
            seconds,
            final_loss,
        },
    ))
}

const INFER_CHUNK: usize = 256;

/// Eval-mode abundances for every pixel, read from the center of its
/// zero-padded patch.
pub fn infer_abundances(
    params: &ModelParams,
    cfg: &ModelConfig,
    cube: &HyperCube,
) -> Result<AbundanceMap> {
    cfg.validate()?;
    params.validate(cfg)?;
    if cube.bands() != cfg.bands {
        bail!(
            Dimension,
            "cube has {} bands, model expects {}",
            cube.bands(),
            cfg.bands
        );
    }
    if cube.height() < cfg.patch || cube.width() < cfg.patch {
        bail!(
            Dimension,
            "cube {}x{} is smaller than the {}x{} patch",
            cube.height(),
            cube.width(),
            cfg.patch,
            cfg.patch
        );
    }
    let (h, w, k) = (cube.height(), cube.width(), cfg.endmembers);
    let area = cfg.patch_area();
    let center = (cfg.patch / 2) * cfg.patch + cfg.patch / 2;
    let all: Vec<(usize, usize)> = (0..h).flat_map(|i| (0..w).map(move |j| (i, j))).collect();
    let opts = ForwardOptions {
        bn: BnMode::Running,
        dropout: None,
    };
    let mut out = AbundanceMap::zeros(k, h, w);
    for chunk in all.chunks(INFER_CHUNK) {
        let batch = PatchBatch::extract_padded(cube, chunk, cfg.patch);
        let cache = model::forward::encode_only(params, cfg, &batch.data, chunk.len(), &opts);
        let np = chunk.len() * area;
        let a = cache.abundances();
        for (s, &(i, j)) in chunk.iter().enumerate() {
            for kk in 0..k {
                out.set(kk, i, j, a[kk * np + s * area + center]);
            }
        }
    }
    Ok(out)
}

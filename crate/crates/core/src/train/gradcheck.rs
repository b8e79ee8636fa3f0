//! Central-difference gradient oracle.

use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::cube::HyperCube;
use crate::error::Result;
use crate::model::{
    forward, init_params, BnMode, DropoutMasks, ForwardOptions, ModelConfig, ModelParams,
    ParamTensors,
};
use crate::rng::{stream, Stream};

use super::{batch_gradients, batch_loss, LossKind, LossPixels, PatchBatch};

/// Floor on the denominator of [`relative_error`].
pub const REL_FLOOR: f64 = 1e-8;

/// `(f(θ+h) − f(θ−h)) / 2h` for every coordinate of `theta`.
pub fn central_difference<F>(theta: &mut [f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let plus = f(theta);
        theta[i] = orig - h;
        let minus = f(theta);
        theta[i] = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Numerical gradient of [`batch_loss`] with respect to every learnable
/// tensor. `opts` must fix the stochastic parts of the forward pass
/// (dropout masks and BN statistics) so the loss is a pure function.
pub fn finite_diff_grad(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &PatchBatch,
    weights: &[f64],
    pixels: LossPixels,
    opts: &ForwardOptions,
    h: f64,
) -> Result<ParamTensors> {
    batch_loss(params, cfg, batch, weights, pixels, opts)?;
    let mut work = params.clone();
    let mut grads = params.learn.zeros_like();
    for t in 0..ParamTensors::NAMES.len() {
        let len = work.learn.tensors()[t].len();
        for i in 0..len {
            let orig = work.learn.tensors()[t][i];
            work.learn.tensors_mut()[t][i] = orig + h;
            let plus = batch_loss(&work, cfg, batch, weights, pixels, opts)?;
            work.learn.tensors_mut()[t][i] = orig - h;
            let minus = batch_loss(&work, cfg, batch, weights, pixels, opts)?;
            work.learn.tensors_mut()[t][i] = orig;
            grads.tensors_mut()[t][i] = (plus - minus) / (2.0 * h);
        }
    }
    Ok(grads)
}

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Largest [`relative_error`] over all entries, with the tensor name and
/// index where it occurs.
pub fn max_relative_error(a: &ParamTensors, b: &ParamTensors) -> (f64, &'static str, usize) {
    let mut worst = (0.0, ParamTensors::NAMES[0], 0);
    for ((name, x), y) in a.named().zip(b.tensors()) {
        for (i, (&u, &v)) in x.iter().zip(y.iter()).enumerate() {
            let e = relative_error(u, v);
            if e > worst.0 || e.is_nan() {
                worst = (e, name, i);
            }
        }
    }
    worst
}

/// Setup of a randomized gradient comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub batch: usize,
    pub loss: LossKind,
    pub bn: BnMode,
    pub step: f64,
    pub seed: u64,
}

impl GradCheckConfig {
    /// B=12, K=3, p=3, C=4, batch 2, h=1e-5.
    pub fn small(loss: LossKind, seed: u64) -> Self {
        let mut model = ModelConfig::new(12, 3);
        model.patch = 3;
        model.hidden = 4;
        Self {
            model,
            batch: 2,
            loss,
            bn: BnMode::Running,
            step: 1e-5,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_relative_error: f64,
    pub worst_tensor: &'static str,
    pub worst_index: usize,
    pub analytic: ParamTensors,
    pub numeric: ParamTensors,
}

/// Compares [`batch_gradients`] with [`finite_diff_grad`] on a random cube,
/// randomly perturbed parameters, random band weights (WSAD) and one fixed
/// dropout draw. With [`BnMode::Running`] the running statistics are set to
/// the statistics of the batch itself so normalization stays non-trivial.
pub fn gradient_check(gc: &GradCheckConfig) -> Result<GradCheckReport> {
    let cfg = &gc.model;
    cfg.validate()?;
    let side = cfg.patch + 2;
    let mut rng = stream(gc.seed, Stream::Noise);
    let data: Vec<f64> = (0..side * side * cfg.bands)
        .map(|_| rng.random_range(0.1..1.1))
        .collect();
    let cube = HyperCube::new(side, side, cfg.bands, data, None)?;

    let mut params = init_params(cfg, &cube, gc.seed)?;
    let l = &mut params.learn;
    l.bn1_gamma
        .iter_mut()
        .chain(l.bn2_gamma.iter_mut())
        .for_each(|v| *v = rng.random_range(0.5..1.5));
    l.bn1_beta
        .iter_mut()
        .chain(l.bn2_beta.iter_mut())
        .for_each(|v| *v = rng.random_range(-0.5..0.5));
    l.decoder_u
        .iter_mut()
        .for_each(|v| *v = rng.sample::<f64, _>(StandardNormal));

    let half = cfg.patch / 2;
    let centers: Vec<(usize, usize)> = (0..gc.batch)
        .map(|_| {
            (
                rng.random_range(half..side - half),
                rng.random_range(half..side - half),
            )
        })
        .collect();
    let batch = PatchBatch::extract(&cube, &centers, cfg.patch)?;
    let weights: Vec<f64> = match gc.loss {
        LossKind::Sad => alloc::vec![1.0; cfg.bands],
        LossKind::Wsad => (0..cfg.bands)
            .map(|_| rng.random_range(0.05..1.0))
            .collect(),
    };
    let masks = DropoutMasks::sample(gc.batch, cfg, &mut stream(gc.seed, Stream::Dropout));
    if gc.bn == BnMode::Running {
        let probe = forward(
            &params,
            cfg,
            &batch.data,
            batch.len(),
            &ForwardOptions {
                bn: BnMode::Batch,
                dropout: Some(&masks),
            },
        );
        let (m1, v1, m2, v2) = probe.batch_stats();
        let r = &mut params.running;
        r.bn1_mean.copy_from_slice(m1);
        r.bn1_var.copy_from_slice(v1);
        r.bn2_mean.copy_from_slice(m2);
        r.bn2_var.copy_from_slice(v2);
    }
    let opts = ForwardOptions {
        bn: gc.bn,
        dropout: Some(&masks),
    };
    let (loss, analytic) = batch_gradients(&params, cfg, &batch, &weights, LossPixels::All, &opts)?;
    let numeric = finite_diff_grad(
        &params,
        cfg,
        &batch,
        &weights,
        LossPixels::All,
        &opts,
        gc.step,
    )?;
    let (max_relative_error, worst_tensor, worst_index) = max_relative_error(&analytic, &numeric);
    Ok(GradCheckReport {
        loss,
        max_relative_error,
        worst_tensor,
        worst_index,
        analytic,
        numeric,
    })
}

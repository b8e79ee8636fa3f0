//! The patch-wise autoencoder.
//!
//! Encoder: `Conv3×3 → BN → LeakyReLU → SpatialDropout → Conv1×1 → BN →
//! LeakyReLU → SpatialDropout → softmax(α·)` producing K abundance maps per
//! p×p patch. Decoder: a single bias-free p×p convolution with weights
//! `softplus(U)`, `U ∈ R^{B×K×p×p}`. Endmembers are the sum of the decoder's
//! spatial slices.

mod backward;
pub(crate) mod forward;

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng as _;

use crate::cube::{EndmemberMatrix, HyperCube};
use crate::error::{bail, Result};
use crate::rng::{stream, Rng, Stream};
use crate::stats::{inv_softplus, softplus};

pub use backward::backward;
pub use forward::{
    forward, update_running_stats, BnMode, DropoutMasks, ForwardCache, ForwardOptions,
};

/// Floor applied to sampled pixel spectra before inverting the softplus at
/// initialization; also the value of every off-center decoder slice.
pub const INIT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub bands: usize,
    pub endmembers: usize,
    /// Patch side p (odd).
    pub patch: usize,
    /// Output channels of the 3×3 convolution.
    pub hidden: usize,
    /// Softmax sharpness.
    pub alpha_soft: f64,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl ModelConfig {
    pub fn new(bands: usize, endmembers: usize) -> Self {
        Self {
            bands,
            endmembers,
            patch: 5,
            hidden: 64,
            alpha_soft: 5.0,
            leaky_slope: 0.02,
            dropout: 0.2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            bail!(Config, "bands must be positive");
        }
        if self.patch.is_multiple_of(2) {
            bail!(Config, "patch side must be odd, got {}", self.patch);
        }
        if self.endmembers < 2 {
            bail!(
                Config,
                "need at least 2 endmembers, got {}",
                self.endmembers
            );
        }
        if self.hidden < self.endmembers {
            bail!(
                Config,
                "hidden channels ({}) must be >= endmembers ({})",
                self.hidden,
                self.endmembers
            );
        }
        if !(self.alpha_soft > 0.0 && self.alpha_soft.is_finite()) {
            bail!(Config, "alpha_soft must be positive");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            bail!(Config, "leaky slope must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!(Config, "dropout rate must lie in [0, 1)");
        }
        if !(self.bn_eps > 0.0) {
            bail!(Config, "bn_eps must be positive");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            bail!(Config, "bn_momentum must lie in (0, 1]");
        }
        Ok(())
    }

    /// Pixels per patch.
    pub fn patch_area(&self) -> usize {
        self.patch * self.patch
    }

    pub fn decoder_len(&self) -> usize {
        self.bands * self.endmembers * self.patch_area()
    }
}

/// Learnable tensors, in declaration order. Also used for gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensors {
    /// C×B×3×3
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub bn1_gamma: Vec<f64>,
    pub bn1_beta: Vec<f64>,
    /// K×C
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub bn2_gamma: Vec<f64>,
    pub bn2_beta: Vec<f64>,
    /// B×K×p×p, mapped through softplus.
    pub decoder_u: Vec<f64>,
}

impl ParamTensors {
    pub const NAMES: [&'static str; 9] = [
        "conv1_w",
        "conv1_b",
        "bn1_gamma",
        "bn1_beta",
        "conv2_w",
        "conv2_b",
        "bn2_gamma",
        "bn2_beta",
        "decoder_u",
    ];

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (b, k, c) = (cfg.bands, cfg.endmembers, cfg.hidden);
        Self {
            conv1_w: vec![0.0; c * b * 9],
            conv1_b: vec![0.0; c],
            bn1_gamma: vec![0.0; c],
            bn1_beta: vec![0.0; c],
            conv2_w: vec![0.0; k * c],
            conv2_b: vec![0.0; k],
            bn2_gamma: vec![0.0; k],
            bn2_beta: vec![0.0; k],
            decoder_u: vec![0.0; cfg.decoder_len()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        out.tensors_mut().into_iter().for_each(|t| t.fill(0.0));
        out
    }

    pub fn tensors(&self) -> [&[f64]; 9] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.conv2_w,
            &self.conv2_b,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.decoder_u,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.bn1_gamma,
            &mut self.bn1_beta,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.bn2_gamma,
            &mut self.bn2_beta,
            &mut self.decoder_u,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        Self::NAMES.into_iter().zip(self.tensors())
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Batch-norm running statistics (no gradient).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub bn1_mean: Vec<f64>,
    pub bn1_var: Vec<f64>,
    pub bn2_mean: Vec<f64>,
    pub bn2_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub learn: ParamTensors,
    pub running: RunningStats,
}

impl ModelParams {
    /// Checks every tensor shape against `cfg` and that all entries are
    /// finite with positive running variances.
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = ParamTensors::zeros(cfg);
        for ((name, t), want) in self.learn.named().zip(expected.tensors()) {
            if t.len() != want.len() {
                bail!(
                    Dimension,
                    "{name} has {} entries, expected {}",
                    t.len(),
                    want.len()
                );
            }
            if t.iter().any(|v| !v.is_finite()) {
                bail!(Numerical, "{name} contains non-finite values");
            }
        }
        let r = &self.running;
        for (name, t, n) in [
            ("bn1_mean", &r.bn1_mean, cfg.hidden),
            ("bn1_var", &r.bn1_var, cfg.hidden),
            ("bn2_mean", &r.bn2_mean, cfg.endmembers),
            ("bn2_var", &r.bn2_var, cfg.endmembers),
        ] {
            if t.len() != n {
                bail!(Dimension, "{name} has {} entries, expected {n}", t.len());
            }
            if t.iter().any(|v| !v.is_finite()) {
                bail!(Numerical, "{name} contains non-finite values");
            }
        }
        if r.bn1_var.iter().chain(&r.bn2_var).any(|&v| v <= 0.0) {
            bail!(Numerical, "batch-norm running variance must be positive");
        }
        Ok(())
    }
}

/// Deterministic initialization.
///
/// Convolution weights and biases are uniform in `±1/sqrt(fan_in)`. Batch
/// norm starts as the identity with running statistics (0, 1). The decoder's
/// center slice reproduces K distinct random pixel spectra (floored at
/// [`INIT_FLOOR`]) and every other slice equals `INIT_FLOOR` after softplus.
pub fn init_params(cfg: &ModelConfig, cube: &HyperCube, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    if cube.bands() != cfg.bands {
        bail!(
            Dimension,
            "cube has {} bands, model expects {}",
            cube.bands(),
            cfg.bands
        );
    }
    if cfg.endmembers > cube.pixels() {
        bail!(
            Config,
            "cannot pick {} distinct pixels from a cube with {}",
            cfg.endmembers,
            cube.pixels()
        );
    }
    let mut rng = stream(seed, Stream::Init);
    let mut learn = ParamTensors::zeros(cfg);
    let uniform = |rng: &mut Rng, t: &mut [f64], fan_in: usize| {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        t.iter_mut()
            .for_each(|v| *v = rng.random_range(-bound..bound));
    };
    uniform(&mut rng, &mut learn.conv1_w, cfg.bands * 9);
    uniform(&mut rng, &mut learn.conv1_b, cfg.bands * 9);
    uniform(&mut rng, &mut learn.conv2_w, cfg.hidden);
    uniform(&mut rng, &mut learn.conv2_b, cfg.hidden);
    learn.bn1_gamma.fill(1.0);
    learn.bn2_gamma.fill(1.0);

    let area = cfg.patch_area();
    let center = (cfg.patch / 2) * cfg.patch + cfg.patch / 2;
    learn.decoder_u.fill(inv_softplus(INIT_FLOOR));
    let picks = sample(&mut rng, cube.pixels(), cfg.endmembers);
    for (k, pixel) in picks.iter().enumerate() {
        for (b, &v) in cube.spectrum(pixel).iter().enumerate() {
            let idx = (b * cfg.endmembers + k) * area + center;
            learn.decoder_u[idx] = inv_softplus(v.max(INIT_FLOOR));
        }
    }
    Ok(ModelParams {
        learn,
        running: RunningStats {
            bn1_mean: vec![0.0; cfg.hidden],
            bn1_var: vec![1.0; cfg.hidden],
            bn2_mean: vec![0.0; cfg.endmembers],
            bn2_var: vec![1.0; cfg.endmembers],
        },
    })
}

/// `Ê = Σ_{u,v} softplus(U)_{u,v}`, a B×K matrix with strictly positive entries.
pub fn endmembers(params: &ModelParams, cfg: &ModelConfig) -> EndmemberMatrix {
    let area = cfg.patch_area();
    let data = params
        .learn
        .decoder_u
        .chunks_exact(area)
        .map(|slices| slices.iter().map(|&u| softplus(u)).sum())
        .collect();
    EndmemberMatrix {
        bands: cfg.bands,
        endmembers: cfg.endmembers,
        data,
    }
}

/// K×p×p abundances of one patch, `data[(k * p + u) * p + v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundancePatch {
    pub endmembers: usize,
    pub patch: usize,
    pub data: Vec<f64>,
}

impl AbundancePatch {
    #[inline]
    pub fn get(&self, k: usize, u: usize, v: usize) -> f64 {
        self.data[(k * self.patch + u) * self.patch + v]
    }

    /// Abundance vector at patch position `(u, v)`.
    pub fn column(&self, u: usize, v: usize) -> Vec<f64> {
        (0..self.endmembers).map(|k| self.get(k, u, v)).collect()
    }
}

fn check_patch(cfg: &ModelConfig, patch: &[f64]) -> Result<()> {
    let want = cfg.bands * cfg.patch_area();
    if patch.len() != want {
        bail!(
            Dimension,
            "patch has {} values, expected B·p·p = {want}",
            patch.len()
        );
    }
    Ok(())
}

fn single_patch_abundances(cfg: &ModelConfig, cache: &ForwardCache) -> AbundancePatch {
    AbundancePatch {
        endmembers: cfg.endmembers,
        patch: cfg.patch,
        data: cache.abundances().to_vec(),
    }
}

/// Eval-mode encoding of one B×p×p patch (running BN statistics, no dropout).
pub fn encode_eval(
    params: &ModelParams,
    cfg: &ModelConfig,
    patch: &[f64],
) -> Result<AbundancePatch> {
    cfg.validate()?;
    check_patch(cfg, patch)?;
    let opts = ForwardOptions {
        bn: BnMode::Running,
        dropout: None,
    };
    let cache = forward::encode_only(params, cfg, patch, 1, &opts);
    Ok(single_patch_abundances(cfg, &cache))
}

/// Train-mode encoding of one patch: batch statistics over the patch's p×p
/// positions, fresh spatial dropout masks, running statistics updated.
pub fn encode_train(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    patch: &[f64],
    rng: &mut Rng,
) -> Result<AbundancePatch> {
    cfg.validate()?;
    check_patch(cfg, patch)?;
    let masks = DropoutMasks::sample(1, cfg, rng);
    let opts = ForwardOptions {
        bn: BnMode::Batch,
        dropout: Some(&masks),
    };
    let cache = forward::encode_only(params, cfg, patch, 1, &opts);
    update_running_stats(params, cfg, &cache);
    Ok(single_patch_abundances(cfg, &cache))
}

/// `X̂ = softplus(U) ⋆ A`: same-size cross-correlation with zero padding.
pub fn decode(params: &ModelParams, cfg: &ModelConfig, a: &AbundancePatch) -> Result<Vec<f64>> {
    cfg.validate()?;
    if a.endmembers != cfg.endmembers
        || a.patch != cfg.patch
        || a.data.len() != cfg.endmembers * cfg.patch_area()
    {
        bail!(
            Dimension,
            "{}x{}x{} abundance patch for a model with K={} p={}",
            a.endmembers,
            a.patch,
            a.patch,
            cfg.endmembers,
            cfg.patch
        );
    }
    let recon = forward::decode_batch(params, cfg, &a.data, 1);
    Ok(format_patch(cfg, &recon, 1))
}

/// Band-major `B × (n·p²)` activations back to patch-major `n × B × p × p`.
pub(crate) fn format_patch(cfg: &ModelConfig, band_major: &[f64], n: usize) -> Vec<f64> {
    let area = cfg.patch_area();
    let np = n * area;
    let mut out = vec![0.0; cfg.bands * np];
    for s in 0..n {
        for b in 0..cfg.bands {
            let dst = &mut out[(s * cfg.bands + b) * area..(s * cfg.bands + b + 1) * area];
            dst.copy_from_slice(&band_major[b * np + s * area..b * np + (s + 1) * area]);
        }
    }
    out
}

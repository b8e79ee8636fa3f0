//! Batched forward pass.
//!
//! Activations are stored channel-major over the whole batch: a tensor with
//! `ch` channels is a `ch × (n·p²)` row-major matrix whose column
//! `s·p² + i·p + j` is pixel `(i, j)` of sample `s`. Both convolutions run as
//! a single matrix product after an im2col gather.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use super::{ModelConfig, ModelParams};
use crate::gemm::gemm;
use crate::rng::Rng;
use crate::stats::softplus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with the statistics of the current batch (training).
    Batch,
    /// Normalize with the stored running statistics (inference).
    Running,
}

/// Spatial dropout multipliers, one per (sample, channel): either 0 or
/// `1/(1 − rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// n×C, applied after the first block.
    pub hidden: Vec<f64>,
    /// n×K, applied after the second block.
    pub output: Vec<f64>,
}

impl DropoutMasks {
    pub fn identity(n: usize, cfg: &ModelConfig) -> Self {
        Self {
            hidden: vec![1.0; n * cfg.hidden],
            output: vec![1.0; n * cfg.endmembers],
        }
    }

    pub fn sample(n: usize, cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let keep = 1.0 - cfg.dropout;
        let scale = 1.0 / keep;
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        0.0
                    }
                })
                .collect()
        };
        let hidden = draw(n * cfg.hidden);
        let output = draw(n * cfg.endmembers);
        Self { hidden, output }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions<'a> {
    pub bn: BnMode,
    /// `None` disables dropout.
    pub dropout: Option<&'a DropoutMasks>,
}

#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub xhat: Vec<f64>,
    /// γ·x̂ + β, input of the leaky ReLU.
    pub out: Vec<f64>,
}

/// Everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) n: usize,
    pub(crate) bn_mode: BnMode,
    /// B × (n·p²) input
    pub(crate) input: Vec<f64>,
    /// (B·9) × (n·p²)
    pub(crate) col1: Vec<f64>,
    pub(crate) bn1: BnCache,
    pub(crate) z1: Vec<f64>,
    pub(crate) bn2: BnCache,
    pub(crate) masks: Option<DropoutMasks>,
    /// K × (n·p²) simplex columns
    pub(crate) abund: Vec<f64>,
    /// (K·p²) × (n·p²)
    pub(crate) col_a: Vec<f64>,
    /// softplus(U), B × (K·p²)
    pub(crate) w_dec: Vec<f64>,
    /// B × (n·p²)
    pub(crate) recon: Vec<f64>,
}

impl ForwardCache {
    pub fn samples(&self) -> usize {
        self.n
    }

    /// Input batch, band-major `B × (n·p²)`.
    pub fn input(&self) -> &[f64] {
        &self.input
    }

    /// Abundances, `K × (n·p²)`.
    pub fn abundances(&self) -> &[f64] {
        &self.abund
    }

    /// Reconstruction, band-major `B × (n·p²)`.
    pub fn reconstruction(&self) -> &[f64] {
        &self.recon
    }

    /// Batch statistics of both normalization layers
    /// `(mean1, var1, mean2, var2)`; biased variances.
    pub fn batch_stats(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        (&self.bn1.mean, &self.bn1.var, &self.bn2.mean, &self.bn2.var)
    }
}

/// Patch-major `n × B × p × p` to band-major `B × (n·p²)`.
pub(crate) fn to_band_major(cfg: &ModelConfig, patches: &[f64], n: usize) -> Vec<f64> {
    let area = cfg.patch_area();
    let np = n * area;
    let mut out = vec![0.0; cfg.bands * np];
    for s in 0..n {
        for b in 0..cfg.bands {
            let src = &patches[(s * cfg.bands + b) * area..(s * cfg.bands + b + 1) * area];
            out[b * np + s * area..b * np + (s + 1) * area].copy_from_slice(src);
        }
    }
    out
}

/// Copies `src` shifted by `(du, dv)` within each p×p tile into `dst`:
/// `dst[s][i][j] = src[s][i+du][j+dv]`, zero outside the tile. `dst` must
/// be zeroed.
fn shift_tiles(src: &[f64], dst: &mut [f64], n: usize, p: usize, du: isize, dv: isize) {
    let area = p * p;
    let pi = p as isize;
    let (i0, i1) = ((-du).max(0), (pi - du).min(pi));
    let (j0, j1) = ((-dv).max(0), (pi - dv).min(pi));
    if i0 >= i1 || j0 >= j1 {
        return;
    }
    let (j0, j1) = (j0 as usize, j1 as usize);
    for s in 0..n {
        let base = s * area;
        for i in i0..i1 {
            let d = base + i as usize * p;
            let r = base + (i + du) as usize * p;
            let sj0 = (j0 as isize + dv) as usize;
            dst[d + j0..d + j1].copy_from_slice(&src[r + sj0..r + sj0 + (j1 - j0)]);
        }
    }
}

/// Adjoint of [`shift_tiles`]: `dst[s][i+du][j+dv] += src[s][i][j]`.
pub(crate) fn shift_tiles_add(
    src: &[f64],
    dst: &mut [f64],
    n: usize,
    p: usize,
    du: isize,
    dv: isize,
) {
    let area = p * p;
    let pi = p as isize;
    let (i0, i1) = ((-du).max(0), (pi - du).min(pi));
    let (j0, j1) = ((-dv).max(0), (pi - dv).min(pi));
    if i0 >= i1 || j0 >= j1 {
        return;
    }
    let (j0, j1) = (j0 as usize, j1 as usize);
    for s in 0..n {
        let base = s * area;
        for i in i0..i1 {
            let d = base + i as usize * p;
            let r = base + (i + du) as usize * p;
            let sj0 = (j0 as isize + dv) as usize;
            for (o, v) in dst[r + sj0..r + sj0 + (j1 - j0)]
                .iter_mut()
                .zip(&src[d + j0..d + j1])
            {
                *o += v;
            }
        }
    }
}

/// Rows `(b, di, dj)`, columns `(s, i, j)`: `x[b][s][i+di-1][j+dj-1]` or 0.
fn im2col3(x: &[f64], channels: usize, n: usize, p: usize) -> Vec<f64> {
    let np = n * p * p;
    let mut col = vec![0.0; channels * 9 * np];
    for c in 0..channels {
        let src = &x[c * np..(c + 1) * np];
        for di in 0..3 {
            for dj in 0..3 {
                let r = (c * 3 + di) * 3 + dj;
                shift_tiles(
                    src,
                    &mut col[r * np..(r + 1) * np],
                    n,
                    p,
                    di as isize - 1,
                    dj as isize - 1,
                );
            }
        }
    }
    col
}

/// Rows `(k, u, v)`, columns `(s, i, j)`: `a[k][s][i+u-h][j+v-h]` or 0.
pub(crate) fn im2col_decoder(a: &[f64], k: usize, n: usize, p: usize) -> Vec<f64> {
    let np = n * p * p;
    let half = (p / 2) as isize;
    let mut col = vec![0.0; k * p * p * np];
    for kk in 0..k {
        let src = &a[kk * np..(kk + 1) * np];
        for u in 0..p {
            for v in 0..p {
                let r = (kk * p + u) * p + v;
                shift_tiles(
                    src,
                    &mut col[r * np..(r + 1) * np],
                    n,
                    p,
                    u as isize - half,
                    v as isize - half,
                );
            }
        }
    }
    col
}

fn add_bias(y: &mut [f64], bias: &[f64], np: usize) {
    for (row, &b) in y.chunks_exact_mut(np).zip(bias) {
        row.iter_mut().for_each(|v| *v += b);
    }
}

#[allow(clippy::too_many_arguments)]
fn batch_norm(
    y: &[f64],
    np: usize,
    gamma: &[f64],
    beta: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
    eps: f64,
    mode: BnMode,
) -> BnCache {
    let ch = gamma.len();
    let mut cache = BnCache {
        mean: vec![0.0; ch],
        var: vec![0.0; ch],
        inv_std: vec![0.0; ch],
        xhat: vec![0.0; ch * np],
        out: vec![0.0; ch * np],
    };
    for c in 0..ch {
        let row = &y[c * np..(c + 1) * np];
        let (mean, var) = match mode {
            BnMode::Batch => {
                let m = row.iter().sum::<f64>() / np as f64;
                let v = row.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / np as f64;
                (m, v)
            }
            BnMode::Running => (running_mean[c], running_var[c]),
        };
        let inv_std = 1.0 / libm::sqrt(var + eps);
        cache.mean[c] = mean;
        cache.var[c] = var;
        cache.inv_std[c] = inv_std;
        let xhat = &mut cache.xhat[c * np..(c + 1) * np];
        let out = &mut cache.out[c * np..(c + 1) * np];
        for ((xh, o), &x) in xhat.iter_mut().zip(out.iter_mut()).zip(row) {
            *xh = (x - mean) * inv_std;
            *o = gamma[c] * *xh + beta[c];
        }
    }
    cache
}

/// Leaky ReLU then per-(sample, channel) dropout multiplier.
fn activate(out: &[f64], slope: f64, mask: Option<&[f64]>, area: usize, np: usize) -> Vec<f64> {
    let ch = out.len() / np;
    let mut z = vec![0.0; out.len()];
    for c in 0..ch {
        for q in 0..np {
            let x = out[c * np + q];
            let a = if x > 0.0 { x } else { slope * x };
            let m = mask.map_or(1.0, |m| m[(q / area) * ch + c]);
            z[c * np + q] = a * m;
        }
    }
    z
}

fn softmax_columns(z: &[f64], k: usize, np: usize, alpha: f64) -> Vec<f64> {
    let mut a = vec![0.0; k * np];
    for q in 0..np {
        let max = (0..k)
            .map(|kk| alpha * z[kk * np + q])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for kk in 0..k {
            let e = libm::exp(alpha * z[kk * np + q] - max);
            a[kk * np + q] = e;
            total += e;
        }
        for kk in 0..k {
            a[kk * np + q] /= total;
        }
    }
    a
}

pub(crate) fn decoder_weights(params: &ModelParams) -> Vec<f64> {
    params
        .learn
        .decoder_u
        .iter()
        .map(|&u| softplus(u))
        .collect()
}

struct Encoded {
    input: Vec<f64>,
    col1: Vec<f64>,
    bn1: BnCache,
    z1: Vec<f64>,
    bn2: BnCache,
    abund: Vec<f64>,
}

fn encode_band_major(
    params: &ModelParams,
    cfg: &ModelConfig,
    input: Vec<f64>,
    n: usize,
    opts: &ForwardOptions,
) -> Encoded {
    let (b, c, k, p) = (cfg.bands, cfg.hidden, cfg.endmembers, cfg.patch);
    let area = p * p;
    let np = n * area;
    let w = &params.learn;
    let r = &params.running;

    let col1 = im2col3(&input, b, n, p);
    let mut y1 = vec![0.0; c * np];
    gemm(
        c,
        b * 9,
        np,
        1.0,
        &w.conv1_w,
        false,
        &col1,
        false,
        0.0,
        &mut y1,
    );
    add_bias(&mut y1, &w.conv1_b, np);
    let bn1 = batch_norm(
        &y1,
        np,
        &w.bn1_gamma,
        &w.bn1_beta,
        &r.bn1_mean,
        &r.bn1_var,
        cfg.bn_eps,
        opts.bn,
    );
    let z1 = activate(
        &bn1.out,
        cfg.leaky_slope,
        opts.dropout.map(|m| m.hidden.as_slice()),
        area,
        np,
    );

    let mut y2 = vec![0.0; k * np];
    gemm(k, c, np, 1.0, &w.conv2_w, false, &z1, false, 0.0, &mut y2);
    add_bias(&mut y2, &w.conv2_b, np);
    let bn2 = batch_norm(
        &y2,
        np,
        &w.bn2_gamma,
        &w.bn2_beta,
        &r.bn2_mean,
        &r.bn2_var,
        cfg.bn_eps,
        opts.bn,
    );
    let z2 = activate(
        &bn2.out,
        cfg.leaky_slope,
        opts.dropout.map(|m| m.output.as_slice()),
        area,
        np,
    );
    let abund = softmax_columns(&z2, k, np, cfg.alpha_soft);
    Encoded {
        input,
        col1,
        bn1,
        z1,
        bn2,
        abund,
    }
}

/// Full forward pass over `n` patch-major patches (`n × B × p × p`).
pub fn forward(
    params: &ModelParams,
    cfg: &ModelConfig,
    patches: &[f64],
    n: usize,
    opts: &ForwardOptions,
) -> ForwardCache {
    assert_eq!(
        patches.len(),
        n * cfg.bands * cfg.patch_area(),
        "patch batch shape"
    );
    let input = to_band_major(cfg, patches, n);
    let enc = encode_band_major(params, cfg, input, n, opts);
    let (b, k, p) = (cfg.bands, cfg.endmembers, cfg.patch);
    let np = n * p * p;
    let col_a = im2col_decoder(&enc.abund, k, n, p);
    let w_dec = decoder_weights(params);
    let mut recon = vec![0.0; b * np];
    gemm(
        b,
        k * p * p,
        np,
        1.0,
        &w_dec,
        false,
        &col_a,
        false,
        0.0,
        &mut recon,
    );
    ForwardCache {
        n,
        bn_mode: opts.bn,
        input: enc.input,
        col1: enc.col1,
        bn1: enc.bn1,
        z1: enc.z1,
        bn2: enc.bn2,
        masks: opts.dropout.cloned(),
        abund: enc.abund,
        col_a,
        w_dec,
        recon,
    }
}

/// Encoder only; the decoder fields of the returned cache are empty.
pub(crate) fn encode_only(
    params: &ModelParams,
    cfg: &ModelConfig,
    patches: &[f64],
    n: usize,
    opts: &ForwardOptions,
) -> ForwardCache {
    let input = to_band_major(cfg, patches, n);
    let enc = encode_band_major(params, cfg, input, n, opts);
    ForwardCache {
        n,
        bn_mode: opts.bn,
        input: enc.input,
        col1: enc.col1,
        bn1: enc.bn1,
        z1: enc.z1,
        bn2: enc.bn2,
        masks: opts.dropout.cloned(),
        abund: enc.abund,
        col_a: Vec::new(),
        w_dec: Vec::new(),
        recon: Vec::new(),
    }
}

/// Decoder on abundances given as `K × (n·p²)`; returns `B × (n·p²)`.
pub(crate) fn decode_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    abund: &[f64],
    n: usize,
) -> Vec<f64> {
    let (b, k, p) = (cfg.bands, cfg.endmembers, cfg.patch);
    let np = n * p * p;
    let col_a = im2col_decoder(abund, k, n, p);
    let w_dec = decoder_weights(params);
    let mut recon = vec![0.0; b * np];
    gemm(
        b,
        k * p * p,
        np,
        1.0,
        &w_dec,
        false,
        &col_a,
        false,
        0.0,
        &mut recon,
    );
    recon
}

/// Exponential moving update of the running statistics from a batch-mode
/// forward pass. The running variance uses the unbiased batch variance.
pub fn update_running_stats(params: &mut ModelParams, cfg: &ModelConfig, cache: &ForwardCache) {
    if cache.bn_mode != BnMode::Batch {
        return;
    }
    let count = (cache.n * cfg.patch_area()) as f64;
    let unbias = if count > 1.0 {
        count / (count - 1.0)
    } else {
        1.0
    };
    let m = cfg.bn_momentum;
    let r = &mut params.running;
    for (run, &batch) in r.bn1_mean.iter_mut().zip(&cache.bn1.mean) {
        *run = (1.0 - m) * *run + m * batch;
    }
    for (run, &batch) in r.bn1_var.iter_mut().zip(&cache.bn1.var) {
        *run = (1.0 - m) * *run + m * batch * unbias;
    }
    for (run, &batch) in r.bn2_mean.iter_mut().zip(&cache.bn2.mean) {
        *run = (1.0 - m) * *run + m * batch;
    }
    for (run, &batch) in r.bn2_var.iter_mut().zip(&cache.bn2.var) {
        *run = (1.0 - m) * *run + m * batch * unbias;
    }
}

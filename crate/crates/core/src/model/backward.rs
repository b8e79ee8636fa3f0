//! Reverse-mode gradients of the batched forward pass.

use alloc::vec;
use alloc::vec::Vec;

use super::forward::{shift_tiles_add, BnCache, BnMode, ForwardCache};
use super::{ModelConfig, ModelParams, ParamTensors};
use crate::gemm::gemm;
use crate::stats::logistic;

/// Gradients of a scalar loss with respect to every learnable tensor, given
/// `grad_recon = ∂L/∂X̂` in band-major `B × (n·p²)` layout.
///
/// Dropout masks and the normalization mode are those recorded in `cache`;
/// running statistics receive no gradient.
pub fn backward(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    grad_recon: &[f64],
) -> ParamTensors {
    let (b, c, k, p) = (cfg.bands, cfg.hidden, cfg.endmembers, cfg.patch);
    let area = p * p;
    let np = cache.n * area;
    let ka = k * area;
    assert_eq!(grad_recon.len(), b * np, "reconstruction gradient shape");
    let w = &params.learn;
    let mut g = ParamTensors::zeros(cfg);

    // Decoder: X̂ = W · colA
    gemm(
        b,
        np,
        ka,
        1.0,
        grad_recon,
        false,
        &cache.col_a,
        true,
        0.0,
        &mut g.decoder_u,
    );
    for (gu, &u) in g.decoder_u.iter_mut().zip(&w.decoder_u) {
        *gu *= logistic(u);
    }
    let mut d_col = vec![0.0; ka * np];
    gemm(
        ka,
        b,
        np,
        1.0,
        &cache.w_dec,
        true,
        grad_recon,
        false,
        0.0,
        &mut d_col,
    );
    let d_abund = col2im_decoder(&d_col, k, cache.n, p);

    // Softmax with sharpness α.
    let alpha = cfg.alpha_soft;
    let a = &cache.abund;
    let mut d_z2 = vec![0.0; k * np];
    for q in 0..np {
        let dot: f64 = (0..k).map(|kk| a[kk * np + q] * d_abund[kk * np + q]).sum();
        for kk in 0..k {
            d_z2[kk * np + q] = alpha * a[kk * np + q] * (d_abund[kk * np + q] - dot);
        }
    }

    let masks = cache.masks.as_ref();
    let d_y2 = through_activation_and_bn(
        &d_z2,
        &cache.bn2,
        masks.map(|m| m.output.as_slice()),
        &w.bn2_gamma,
        cfg.leaky_slope,
        cache.bn_mode,
        area,
        np,
        &mut g.bn2_gamma,
        &mut g.bn2_beta,
    );

    // 1×1 convolution: y2 = W2 · z1 + b2
    gemm(
        k,
        np,
        c,
        1.0,
        &d_y2,
        false,
        &cache.z1,
        true,
        0.0,
        &mut g.conv2_w,
    );
    row_sums(&d_y2, np, &mut g.conv2_b);
    let mut d_z1 = vec![0.0; c * np];
    gemm(
        c, k, np, 1.0, &w.conv2_w, true, &d_y2, false, 0.0, &mut d_z1,
    );

    let d_y1 = through_activation_and_bn(
        &d_z1,
        &cache.bn1,
        masks.map(|m| m.hidden.as_slice()),
        &w.bn1_gamma,
        cfg.leaky_slope,
        cache.bn_mode,
        area,
        np,
        &mut g.bn1_gamma,
        &mut g.bn1_beta,
    );

    // 3×3 convolution: y1 = W1 · col1 + b1
    gemm(
        c,
        np,
        b * 9,
        1.0,
        &d_y1,
        false,
        &cache.col1,
        true,
        0.0,
        &mut g.conv1_w,
    );
    row_sums(&d_y1, np, &mut g.conv1_b);
    g
}

fn row_sums(m: &[f64], np: usize, out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(np)) {
        *o = row.iter().sum();
    }
}

/// Adjoint of `im2col_decoder`: scatter-add back to `K × (n·p²)`.
fn col2im_decoder(col: &[f64], k: usize, n: usize, p: usize) -> Vec<f64> {
    let np = n * p * p;
    let half = (p / 2) as isize;
    let mut out = vec![0.0; k * np];
    for kk in 0..k {
        let dst = &mut out[kk * np..(kk + 1) * np];
        for u in 0..p {
            for v in 0..p {
                let r = (kk * p + u) * p + v;
                shift_tiles_add(
                    &col[r * np..(r + 1) * np],
                    dst,
                    n,
                    p,
                    u as isize - half,
                    v as isize - half,
                );
            }
        }
    }
    out
}

/// Back through dropout, leaky ReLU and batch norm; returns `∂L/∂y` for the
/// normalization input and accumulates the scale/shift gradients.
#[allow(clippy::too_many_arguments)]
fn through_activation_and_bn(
    d_z: &[f64],
    bn: &BnCache,
    mask: Option<&[f64]>,
    gamma: &[f64],
    slope: f64,
    mode: BnMode,
    area: usize,
    np: usize,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Vec<f64> {
    let ch = gamma.len();
    let mut d_y = vec![0.0; ch * np];
    let mut d_out = vec![0.0; np];
    for c in 0..ch {
        let out = &bn.out[c * np..(c + 1) * np];
        let xhat = &bn.xhat[c * np..(c + 1) * np];
        for q in 0..np {
            let m = mask.map_or(1.0, |m| m[(q / area) * ch + c]);
            let leak = if out[q] > 0.0 { 1.0 } else { slope };
            d_out[q] = d_z[c * np + q] * m * leak;
        }
        let sum_d: f64 = d_out.iter().sum();
        let sum_dx: f64 = d_out.iter().zip(xhat).map(|(d, x)| d * x).sum();
        d_beta[c] = sum_d;
        d_gamma[c] = sum_dx;
        let scale = gamma[c] * bn.inv_std[c];
        let row = &mut d_y[c * np..(c + 1) * np];
        match mode {
            BnMode::Running => {
                for (dy, d) in row.iter_mut().zip(&d_out) {
                    *dy = scale * d;
                }
            }
            BnMode::Batch => {
                let (mean_d, mean_dx) = (sum_d / np as f64, sum_dx / np as f64);
                for ((dy, d), x) in row.iter_mut().zip(&d_out).zip(xhat) {
                    *dy = scale * (d - mean_d - x * mean_dx);
                }
            }
        }
    }
    d_y
}

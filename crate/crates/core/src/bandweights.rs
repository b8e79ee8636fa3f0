//! Global band-reliability weights from three per-band diagnostics.
//!
//! Bands that decorrelate from a neighbour, that make the median spectrum
//! unusually curved, or that are spatially flat get a high outlier score and
//! are mapped to a weight near `w_min`.

use alloc::vec;
use alloc::vec::Vec;

use crate::cube::HyperCube;
use crate::error::{bail, Result};
use crate::stats::{logistic, mad_about, median, median_in_place, variance};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightConfig {
    pub gamma_rough: f64,
    pub gamma_flat: f64,
    /// Score at which the weight is halfway between `w_min` and 1.
    pub tau: f64,
    pub alpha_sig: f64,
    pub w_min: f64,
    pub eps: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            gamma_rough: 1.0,
            gamma_flat: 1.0,
            tau: 3.0,
            alpha_sig: 2.0,
            w_min: 0.05,
            eps: 1e-12,
        }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_rough >= 0.0 && self.gamma_flat >= 0.0) {
            bail!(Config, "fusion gains must be nonnegative");
        }
        if !self.tau.is_finite() {
            bail!(Config, "tau must be finite");
        }
        if !(self.alpha_sig > 0.0 && self.alpha_sig.is_finite()) {
            bail!(Config, "alpha_sig must be positive");
        }
        if !(0.0..=1.0).contains(&self.w_min) {
            bail!(Config, "w_min must lie in [0, 1], got {}", self.w_min);
        }
        if !(self.eps > 0.0) {
            bail!(Config, "eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandDiagnostics {
    pub d_corr: Vec<f64>,
    pub d_rough: Vec<f64>,
    pub d_flat: Vec<f64>,
    /// Fused nonnegative outlier score.
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandWeights {
    pub w: Vec<f64>,
    pub diagnostics: BandDiagnostics,
    pub config: WeightConfig,
}

impl BandWeights {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Bands with weight below `threshold`.
    pub fn flagged(&self, threshold: f64) -> Vec<usize> {
        (0..self.w.len())
            .filter(|&b| self.w[b] < threshold)
            .collect()
    }
}

/// Pixels × bands matrix stored band-major: column `b` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedMatrix {
    pixels: usize,
    bands: usize,
    data: Vec<f64>,
}

impl StandardizedMatrix {
    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn column(&self, b: usize) -> &[f64] {
        &self.data[b * self.pixels..(b + 1) * self.pixels]
    }

    pub fn get(&self, p: usize, b: usize) -> f64 {
        self.data[b * self.pixels + p]
    }
}

/// Per-band `(y − median) / (MAD + ε)`, then exact zero mean and unit
/// population variance. Constant columns become all zeros.
pub fn robust_standardize(cube: &HyperCube, eps: f64) -> Result<StandardizedMatrix> {
    let n = cube.pixels();
    if n < 2 {
        bail!(
            InsufficientData,
            "band standardization needs at least 2 pixels, got {n}"
        );
    }
    let bands = cube.bands();
    let mut data = Vec::with_capacity(n * bands);
    for b in 0..bands {
        let mut col = cube.band(b);
        let m = median(&col);
        let scale = mad_about(&col, m) + eps;
        col.iter_mut().for_each(|v| *v = (*v - m) / scale);
        let mu = col.iter().sum::<f64>() / n as f64;
        col.iter_mut().for_each(|v| *v -= mu);
        let sd = libm::sqrt(col.iter().map(|v| v * v).sum::<f64>() / n as f64);
        if sd > 0.0 {
            col.iter_mut().for_each(|v| *v /= sd);
        } else {
            col.fill(0.0);
        }
        data.extend_from_slice(&col);
    }
    Ok(StandardizedMatrix {
        pixels: n,
        bands,
        data,
    })
}

/// `1 − c_b`, where `c_b` is the smaller of the correlations with the two
/// neighbouring bands (the single neighbour at either end).
pub fn neighbour_corr_deficit(z: &StandardizedMatrix) -> Result<Vec<f64>> {
    let bands = z.bands;
    if bands < 2 {
        bail!(
            Dimension,
            "correlation deficit needs at least 2 bands, got {bands}"
        );
    }
    let n = z.pixels as f64;
    let rho: Vec<f64> = (0..bands - 1)
        .map(|b| {
            let (u, v) = (z.column(b), z.column(b + 1));
            u.iter().zip(v).map(|(a, c)| a * c).sum::<f64>() / n
        })
        .collect();
    Ok((0..bands)
        .map(|b| {
            let c = if b == 0 {
                rho[0]
            } else if b == bands - 1 {
                rho[bands - 2]
            } else {
                rho[b - 1].min(rho[b])
            };
            1.0 - c
        })
        .collect())
}

/// Absolute second difference of the per-band median spectrum; the end
/// bands copy their neighbour.
pub fn spectral_roughness(cube: &HyperCube) -> Result<Vec<f64>> {
    let bands = cube.bands();
    if bands < 3 {
        bail!(Dimension, "roughness needs at least 3 bands, got {bands}");
    }
    let m: Vec<f64> = (0..bands)
        .map(|b| median_in_place(&mut cube.band(b)))
        .collect();
    Ok(second_difference(&m))
}

fn second_difference(m: &[f64]) -> Vec<f64> {
    let bands = m.len();
    let mut d = vec![0.0; bands];
    for b in 1..bands - 1 {
        d[b] = libm::fabs(m[b + 1] - 2.0 * m[b] + m[b - 1]);
    }
    d[0] = d[1];
    d[bands - 1] = d[bands - 2];
    d
}

/// `−ln(var + ε)` of every band over all pixels.
pub fn spatial_flatness(cube: &HyperCube, eps: f64) -> Result<Vec<f64>> {
    if cube.pixels() < 2 {
        bail!(
            InsufficientData,
            "flatness needs at least 2 pixels, got {}",
            cube.pixels()
        );
    }
    Ok((0..cube.bands())
        .map(|b| -libm::log(variance(&cube.band(b)) + eps))
        .collect())
}

/// `(u − median(u)) / (MAD(u) + ε)`.
pub fn robust_z(u: &[f64], eps: f64) -> Vec<f64> {
    if u.is_empty() {
        return Vec::new();
    }
    let m = median(u);
    let scale = mad_about(u, m) + eps;
    u.iter().map(|v| (v - m) / scale).collect()
}

pub fn outlier_score(
    d_corr: &[f64],
    d_rough: &[f64],
    d_flat: &[f64],
    cfg: &WeightConfig,
) -> Result<Vec<f64>> {
    if d_rough.len() != d_corr.len() || d_flat.len() != d_corr.len() {
        bail!(
            Dimension,
            "diagnostic lengths differ: {}, {}, {}",
            d_corr.len(),
            d_rough.len(),
            d_flat.len()
        );
    }
    let zc = robust_z(d_corr, cfg.eps);
    let zr = robust_z(d_rough, cfg.eps);
    let zf = robust_z(d_flat, cfg.eps);
    Ok((0..d_corr.len())
        .map(|b| {
            zc[b].max(0.0) + cfg.gamma_rough * zr[b].max(0.0) + cfg.gamma_flat * zf[b].max(0.0)
        })
        .collect())
}

/// `w_min + (1 − w_min)·σ(−α(s − τ))`.
pub fn map_weights(s: &[f64], cfg: &WeightConfig) -> Vec<f64> {
    s.iter()
        .map(|&sb| {
            let w = cfg.w_min + (1.0 - cfg.w_min) * logistic(-cfg.alpha_sig * (sb - cfg.tau));
            w.clamp(cfg.w_min, 1.0)
        })
        .collect()
}

pub fn estimate_band_weights(cube: &HyperCube, cfg: &WeightConfig) -> Result<BandWeights> {
    cfg.validate()?;
    if cube.bands() < 3 {
        bail!(
            Dimension,
            "band weights need at least 3 bands, got {}",
            cube.bands()
        );
    }
    let z = robust_standardize(cube, cfg.eps)?;
    let d_corr = neighbour_corr_deficit(&z)?;
    let d_rough = spectral_roughness(cube)?;
    let d_flat = spatial_flatness(cube, cfg.eps)?;
    let s = outlier_score(&d_corr, &d_rough, &d_flat, cfg)?;
    let w = map_weights(&s, cfg);
    Ok(BandWeights {
        w,
        diagnostics: BandDiagnostics {
            d_corr,
            d_rough,
            d_flat,
            s,
        },
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from_columns(cols: &[Vec<f64>]) -> HyperCube {
        let n = cols[0].len();
        let b = cols.len();
        let mut data = vec![0.0; n * b];
        for (j, c) in cols.iter().enumerate() {
            for (p, v) in c.iter().enumerate() {
                data[p * b + j] = *v;
            }
        }
        HyperCube::new(1, n, b, data, None).unwrap()
    }

    #[test]
    fn constant_band_standardizes_to_zero() {
        let cube = cube_from_columns(&[vec![2.0; 5], vec![1.0, 2.0, 3.0, 4.0, 9.0]]);
        let z = robust_standardize(&cube, 1e-12).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
        let c = z.column(1);
        let mu: f64 = c.iter().sum::<f64>() / 5.0;
        let var: f64 = c.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 5.0;
        assert!(mu.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_outlier_survives_standardization() {
        let cube = cube_from_columns(&[vec![0.0, 0.0, 0.0, 1000.0], vec![1.0, 2.0, 3.0, 4.0]]);
        let z = robust_standardize(&cube, 1e-12).unwrap();
        assert!(z.get(3, 0) > 1.5, "{}", z.get(3, 0));
    }

    #[test]
    fn too_few_pixels() {
        let cube = HyperCube::new(1, 1, 3, vec![1.0, 2.0, 3.0], None).unwrap();
        assert!(matches!(
            robust_standardize(&cube, 1e-12),
            Err(crate::Error::InsufficientData(_))
        ));
    }

    #[test]
    fn identical_and_negated_columns() {
        let base = vec![1.0, 3.0, 2.0, 5.0, 4.0];
        let neg: Vec<f64> = base.iter().map(|v| -v).collect();
        let same = cube_from_columns(&[base.clone(), base.clone(), base.clone()]);
        let d = neighbour_corr_deficit(&robust_standardize(&same, 1e-12).unwrap()).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12), "{d:?}");
        let flipped = cube_from_columns(&[base.clone(), neg, base]);
        let d = neighbour_corr_deficit(&robust_standardize(&flipped, 1e-12).unwrap()).unwrap();
        assert!((d[1] - 2.0).abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn second_difference_cases() {
        let lin: Vec<f64> = (0..6).map(|b| 2.0 * b as f64 + 1.0).collect();
        assert!(second_difference(&lin).iter().all(|v| v.abs() < 1e-12));
        let mut spike = vec![1.0; 7];
        spike[3] += 0.5;
        let d = second_difference(&spike);
        assert!((d[3] - 1.0).abs() < 1e-15);
        assert!((d[2] - 0.5).abs() < 1e-15 && (d[4] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn broad_peak_is_smooth() {
        let m: Vec<f64> = (0..100)
            .map(|b| {
                let t = (b as f64 - 50.0) / 8.0;
                libm::exp(-0.5 * t * t)
            })
            .collect();
        let max = second_difference(&m).into_iter().fold(0.0, f64::max);
        // Analytic bound: |g''| ≤ 1/σ² = 1/64.
        assert!(max < 0.03, "{max}");
        assert!(max <= 1.0 / 64.0 + 1e-6, "{max}");
    }

    #[test]
    fn flatness_values() {
        let cube = cube_from_columns(&[
            vec![5.0; 4],
            vec![-1.0, 1.0, -1.0, 1.0],
            vec![-2.0, 2.0, -2.0, 2.0],
        ]);
        let d = spatial_flatness(&cube, 1e-12).unwrap();
        assert!((d[0] - 27.631021115928547).abs() < 1e-9);
        assert!(d[1].abs() < 1e-11);
        assert!((d[1] - d[2] - libm::log(4.0)).abs() < 1e-11);
    }

    #[test]
    fn robust_z_cases() {
        assert!(robust_z(&[3.0; 5], 1e-12).iter().all(|&v| v == 0.0));
        let z = robust_z(&[0.0, 0.0, 0.0, 0.0, 10.0], 1e-12);
        assert!((z[4] - 1e13).abs() / 1e13 < 1e-12);
        let z = robust_z(&[1.0, 4.0, 2.0], 1e-12);
        assert_eq!(z[2], 0.0);
    }

    #[test]
    fn score_ablation_and_constants() {
        let cfg = WeightConfig::default();
        let s = outlier_score(&[1.0; 4], &[2.0; 4], &[3.0; 4], &cfg).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        let ablate = WeightConfig {
            gamma_rough: 0.0,
            gamma_flat: 0.0,
            ..cfg
        };
        let dc = [0.1, 0.2, 0.9, 0.15, 0.12];
        let a = outlier_score(
            &dc,
            &[0.0, 5.0, 0.0, 0.0, 9.0],
            &[1.0, 0.0, 0.0, 7.0, 0.0],
            &ablate,
        )
        .unwrap();
        let b = outlier_score(&dc, &[3.0, 0.0, 1.0, 0.0, 0.0], &[0.0; 5], &ablate).unwrap();
        assert_eq!(a, b);
        assert!(outlier_score(&dc, &[0.0; 4], &[0.0; 5], &cfg).is_err());
    }

    #[test]
    fn weight_mapping_values() {
        let cfg = WeightConfig::default();
        let w = map_weights(&[3.0, 0.0, 1e9], &cfg);
        assert!((w[0] - (0.05 + 0.95 / 2.0)).abs() < 1e-15);
        let expected = 0.05 + 0.95 / (1.0 + libm::exp(-6.0));
        assert!((w[1] - expected).abs() < 1e-15);
        assert!((w[1] - 0.9977).abs() < 1e-4);
        assert!((w[2] - 0.05).abs() < 1e-15);
        let flat = WeightConfig { w_min: 1.0, ..cfg };
        assert!(map_weights(&[0.0, 3.0, 100.0], &flat)
            .iter()
            .all(|&v| v == 1.0));
    }
}

//! Ground-truthed synthetic scenes following the linear mixing model, with
//! injectable acquisition artifacts.
//!
//! Endmembers are sums of Gaussian absorption peaks on the band grid.
//! Abundances are symmetric Dirichlet draws per pixel, box-filtered and
//! renormalized. Artifacts mimic what contaminates real FTIR maps: isolated
//! per-pixel spikes, dead (constant) bands and a spatially uniform,
//! spectrally rough modulation standing in for ambient CO₂/H₂O lines.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::cube::{AbundanceMap, EndmemberMatrix, HyperCube};
use crate::error::{bail, Result};
use crate::loss::spectral_angle;
use crate::rng::{stream, Stream};

/// Minimum pairwise spectral angle between generated endmembers (radians).
pub const MIN_SEPARATION: f64 = 0.3;
const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub peaks_per_endmember: usize,
    /// Inclusive range of Gaussian peak standard deviations, in bands.
    pub peak_width: (f64, f64),
    /// Box-filter radius applied to the abundance field; 0 disables smoothing.
    pub smoothing_radius: usize,
    /// Symmetric Dirichlet concentration.
    pub concentration: f64,
    /// `None` generates a noiseless cube.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    /// Desk-scale scene: 32×32 pixels, 100 bands, 3 endmembers, 30 dB SNR.
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            bands: 100,
            endmembers: 3,
            peaks_per_endmember: 4,
            peak_width: (3.0, 10.0),
            smoothing_radius: 0,
            concentration: 0.3,
            snr_db: Some(30.0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.endmembers < 1 {
            bail!(Config, "at least one endmember is required");
        }
        if self.bands < 3 {
            bail!(Config, "at least 3 bands are required, got {}", self.bands);
        }
        if self.height == 0 || self.width == 0 {
            bail!(
                Config,
                "empty spatial extent {}x{}",
                self.height,
                self.width
            );
        }
        if self.peaks_per_endmember == 0 {
            bail!(Config, "peaks_per_endmember must be positive");
        }
        let (lo, hi) = self.peak_width;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            bail!(
                Config,
                "peak width range ({lo}, {hi}) must satisfy 1 <= lo <= hi"
            );
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            bail!(Config, "Dirichlet concentration must be positive");
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                bail!(Config, "snr_db must be finite");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ArtifactKind {
    Spike,
    Flat,
    CommonMode,
}

impl ArtifactKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Spike => "spike",
            ArtifactKind::Flat => "flat",
            ArtifactKind::CommonMode => "common_mode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "spike" => Some(Self::Spike),
            "flat" => Some(Self::Flat),
            "common_mode" => Some(Self::CommonMode),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeBand {
    pub band: usize,
    /// Standard deviation of the zero-mean per-pixel spike.
    pub amplitude: f64,
}

/// Contiguous block receiving the same alternating-sign waveform at every pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonModeBlock {
    pub start: usize,
    pub len: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ArtifactSpec {
    pub spikes: Vec<SpikeBand>,
    pub flat_bands: Vec<usize>,
    pub common_mode: Option<CommonModeBlock>,
}

impl ArtifactSpec {
    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty() && self.flat_bands.is_empty() && self.common_mode.is_none()
    }

    /// Every affected band with its artifact kind, sorted by band.
    pub fn bands(&self) -> Vec<(usize, ArtifactKind)> {
        let mut out: Vec<(usize, ArtifactKind)> =
            self.spikes
                .iter()
                .map(|s| (s.band, ArtifactKind::Spike))
                .chain(self.flat_bands.iter().map(|&b| (b, ArtifactKind::Flat)))
                .chain(self.common_mode.iter().flat_map(|c| {
                    (c.start..c.start + c.len).map(|b| (b, ArtifactKind::CommonMode))
                }))
                .collect();
        out.sort();
        out
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (b, kind) in self.bands() {
            if b >= bands {
                bail!(
                    Config,
                    "{} artifact band {b} outside [0, {bands})",
                    kind.as_str()
                );
            }
            if !seen.insert(b) {
                bail!(Config, "artifact ranges overlap at band {b}");
            }
        }
        if let Some(c) = &self.common_mode {
            if c.len == 0 {
                bail!(Config, "empty common-mode block");
            }
        }
        Ok(())
    }

    /// Default contamination for a cube whose RMS signal level is `scale`:
    /// a spike band at 20 % of the axis (10× scale), a flat band at 50 % and
    /// an 8-band common-mode block starting at 70 %.
    pub fn default_for(bands: usize, scale: f64) -> Self {
        Self {
            spikes: vec![SpikeBand {
                band: bands / 5,
                amplitude: 10.0 * scale,
            }],
            flat_bands: vec![bands / 2],
            common_mode: Some(CommonModeBlock {
                start: bands * 7 / 10,
                len: 8.min(bands - bands * 7 / 10),
                amplitude: 0.2 * scale,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMap,
    pub artifacts: Vec<(usize, ArtifactKind)>,
}

/// Endmember spectra as sums of Gaussian peaks, each column rescaled so its
/// maximum lies in [0.5, 1.5]. Redraws until every pair is at least
/// [`MIN_SEPARATION`] radians apart.
pub fn gen_endmembers(spec: &SynthSpec) -> Result<EndmemberMatrix> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Endmembers);
    let (bands, k) = (spec.bands, spec.endmembers);
    for _ in 0..MAX_RETRIES {
        let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
        for _ in 0..k {
            let mut col = vec![0.0; bands];
            for _ in 0..spec.peaks_per_endmember {
                let center = rng.random_range(0.0..bands as f64);
                let sigma = if spec.peak_width.1 > spec.peak_width.0 {
                    rng.random_range(spec.peak_width.0..=spec.peak_width.1)
                } else {
                    spec.peak_width.0
                };
                let height = rng.random_range(0.3..=1.0);
                for (b, v) in col.iter_mut().enumerate() {
                    let d = (b as f64 - center) / sigma;
                    *v += height * libm::exp(-0.5 * d * d);
                }
            }
            let peak = col.iter().copied().fold(0.0, f64::max);
            let target = rng.random_range(0.5..=1.5);
            col.iter_mut().for_each(|v| *v *= target / peak);
            columns.push(col);
        }
        let separated = (0..k).all(|i| {
            (i + 1..k).all(|j| spectral_angle(&columns[i], &columns[j]) >= MIN_SEPARATION)
        });
        if separated {
            let mut e = EndmemberMatrix::zeros(bands, k);
            for (kk, col) in columns.iter().enumerate() {
                for (b, &v) in col.iter().enumerate() {
                    e.set(b, kk, v);
                }
            }
            return Ok(e);
        }
    }
    bail!(
        Generation,
        "could not separate {k} endmembers by {MIN_SEPARATION} rad over {bands} bands in {MAX_RETRIES} attempts"
    )
}

/// Per-pixel symmetric Dirichlet abundances, box-filtered with
/// `smoothing_radius` (window clipped at the borders) and renormalized.
pub fn gen_abundances(spec: &SynthSpec) -> Result<AbundanceMap> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Abundances);
    let (k, h, w) = (spec.endmembers, spec.height, spec.width);
    let gamma = Gamma::new(spec.concentration, 1.0)
        .map_err(|e| crate::Error::Config(alloc::format!("gamma: {e}")))?;
    let mut raw = AbundanceMap::zeros(k, h, w);
    let mut draw = vec![0.0; k];
    for i in 0..h {
        for j in 0..w {
            // Small concentrations can underflow every gamma draw; redraw.
            let total = loop {
                draw.iter_mut().for_each(|d| *d = gamma.sample(&mut rng));
                let s: f64 = draw.iter().sum();
                if s > 0.0 && s.is_finite() {
                    break s;
                }
            };
            for (kk, d) in draw.iter().enumerate() {
                raw.set(kk, i, j, d / total);
            }
        }
    }
    let r = spec.smoothing_radius;
    if r == 0 {
        return Ok(raw);
    }
    let mut out = AbundanceMap::zeros(k, h, w);
    let mut acc = vec![0.0; k];
    for i in 0..h {
        for j in 0..w {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for ii in i.saturating_sub(r)..(i + r + 1).min(h) {
                for jj in j.saturating_sub(r)..(j + r + 1).min(w) {
                    for (kk, a) in acc.iter_mut().enumerate() {
                        *a += raw.get(kk, ii, jj);
                    }
                }
            }
            let total: f64 = acc.iter().sum();
            for (kk, a) in acc.iter().enumerate() {
                out.set(kk, i, j, a / total);
            }
        }
    }
    Ok(out)
}

/// `x(h,w) = E·a(h,w) + ν` with i.i.d. Gaussian ν scaled to the requested SNR
/// (signal power = mean squared noiseless value).
pub fn mix(
    e: &EndmemberMatrix,
    a: &AbundanceMap,
    snr_db: Option<f64>,
    seed: u64,
) -> Result<HyperCube> {
    if e.endmembers != a.endmembers {
        bail!(
            Dimension,
            "endmember matrix has {} columns, abundances have {} maps",
            e.endmembers,
            a.endmembers
        );
    }
    let (h, w, bands) = (a.height, a.width, e.bands);
    let mut data = vec![0.0; h * w * bands];
    for i in 0..h {
        for j in 0..w {
            let start = (i * w + j) * bands;
            e.mix_into(&a.pixel(i, j), &mut data[start..start + bands]);
        }
    }
    if let Some(snr) = snr_db {
        let power = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
        let sigma = libm::sqrt(power / libm::pow(10.0, snr / 10.0));
        let mut rng = stream(seed, Stream::Noise);
        for v in &mut data {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * z;
        }
    }
    HyperCube::new(h, w, bands, data, None)
}

/// Applies the artifacts in `art` and returns the contaminated cube plus the
/// log of modified bands.
///
/// Spike bands get independent zero-mean Gaussian spikes per pixel, flat
/// bands are replaced by their spatial mean, and the common-mode block gets
/// `amplitude·(−1)^j` added at every pixel.
pub fn inject_artifacts(
    cube: &HyperCube,
    art: &ArtifactSpec,
    seed: u64,
) -> Result<(HyperCube, Vec<(usize, ArtifactKind)>)> {
    art.validate(cube.bands())?;
    let mut out = cube.clone();
    let mut rng = stream(seed, Stream::Artifacts);
    let (h, w) = (cube.height(), cube.width());
    for spike in &art.spikes {
        for i in 0..h {
            for j in 0..w {
                let z: f64 = StandardNormal.sample(&mut rng);
                out.pixel_mut(i, j)[spike.band] += spike.amplitude * z;
            }
        }
    }
    for &b in &art.flat_bands {
        let level = crate::stats::mean(&cube.band(b));
        for i in 0..h {
            for j in 0..w {
                out.pixel_mut(i, j)[b] = level;
            }
        }
    }
    if let Some(c) = &art.common_mode {
        for i in 0..h {
            for j in 0..w {
                let px = out.pixel_mut(i, j);
                for off in 0..c.len {
                    let sign = if off % 2 == 0 { 1.0 } else { -1.0 };
                    px[c.start + off] += sign * c.amplitude;
                }
            }
        }
    }
    Ok((out, art.bands()))
}

/// Full scene: endmembers, abundances, mixing with noise, then artifacts.
pub fn generate_scene(spec: &SynthSpec, art: &ArtifactSpec) -> Result<(HyperCube, GroundTruth)> {
    let endmembers = gen_endmembers(spec)?;
    let abundances = gen_abundances(spec)?;
    let clean = mix(&endmembers, &abundances, spec.snr_db, spec.seed)?;
    let (cube, artifacts) = inject_artifacts(&clean, art, spec.seed)?;
    Ok((
        cube,
        GroundTruth {
            endmembers,
            abundances,
            artifacts,
        },
    ))
}

/// Scene with [`ArtifactSpec::default_for`] contamination scaled to the RMS
/// of the clean cube. Also returns the artifact specification used.
pub fn contaminated_scene(spec: &SynthSpec) -> Result<(HyperCube, GroundTruth, ArtifactSpec)> {
    let (clean, mut truth) = generate_scene(spec, &ArtifactSpec::default())?;
    let art = ArtifactSpec::default_for(spec.bands, clean.rms());
    let (cube, log) = inject_artifacts(&clean, &art, spec.seed)?;
    truth.artifacts = log;
    Ok((cube, truth, art))
}

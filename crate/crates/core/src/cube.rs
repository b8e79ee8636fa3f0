//! Raster and factor containers: the observed cube, its wavenumber axis,
//! abundance maps and endmember matrices.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisDirection {
    Ascending,
    Descending,
}

/// Strictly monotonic wavenumber axis in cm⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct WavenumberAxis {
    values: Vec<f64>,
    direction: AxisDirection,
}

impl WavenumberAxis {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            bail!(Data, "wavenumber axis contains non-finite values");
        }
        let direction = if values.len() < 2 || values[1] > values[0] {
            AxisDirection::Ascending
        } else {
            AxisDirection::Descending
        };
        let monotonic = values.windows(2).all(|p| match direction {
            AxisDirection::Ascending => p[1] > p[0],
            AxisDirection::Descending => p[1] < p[0],
        });
        if !monotonic {
            bail!(Data, "wavenumber axis is not strictly monotonic");
        }
        Ok(Self { values, direction })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn direction(&self) -> AxisDirection {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// H×W×B absorbance cube stored pixel-interleaved:
/// `index = ((h * W) + w) * B + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    height: usize,
    width: usize,
    bands: usize,
    wavenumbers: Option<WavenumberAxis>,
    data: Vec<f64>,
}

impl HyperCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        data: Vec<f64>,
        wavenumbers: Option<WavenumberAxis>,
    ) -> Result<Self> {
        let expected = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(bands))
            .ok_or_else(|| Error::Dimension(format!("{height}x{width}x{bands} overflows")))?;
        if data.len() != expected {
            bail!(
                Dimension,
                "data length {} does not match {height}x{width}x{bands}",
                data.len()
            );
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite value at index {idx}");
        }
        if let Some(axis) = &wavenumbers {
            if axis.len() != bands {
                bail!(
                    Dimension,
                    "wavenumber axis has {} entries for {bands} bands",
                    axis.len()
                );
            }
        }
        Ok(Self {
            height,
            width,
            bands,
            wavenumbers,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn wavenumbers(&self) -> Option<&WavenumberAxis> {
        self.wavenumbers.as_ref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Spectrum of pixel `(h, w)`.
    pub fn pixel(&self, h: usize, w: usize) -> &[f64] {
        let start = (h * self.width + w) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub(crate) fn pixel_mut(&mut self, h: usize, w: usize) -> &mut [f64] {
        let start = (h * self.width + w) * self.bands;
        &mut self.data[start..start + self.bands]
    }

    /// Spectrum of the pixel with flat index `p = h * W + w`.
    pub fn spectrum(&self, p: usize) -> &[f64] {
        &self.data[p * self.bands..(p + 1) * self.bands]
    }

    /// Values of band `b` across all pixels, in raster order.
    pub fn band(&self, b: usize) -> Vec<f64> {
        self.data
            .iter()
            .skip(b)
            .step_by(self.bands)
            .copied()
            .collect()
    }

    /// Root-mean-square over every stored value.
    pub fn rms(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64)
    }

    /// Same cube with every value rounded to single precision, i.e. exactly
    /// what a round trip through the on-disk format yields.
    pub fn to_storage_precision(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.data {
            *v = *v as f32 as f64;
        }
        out
    }
}

/// K×H×W abundance maps, `data[(k * H + h) * W + w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    pub endmembers: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl AbundanceMap {
    pub fn zeros(endmembers: usize, height: usize, width: usize) -> Self {
        Self {
            endmembers,
            height,
            width,
            data: alloc::vec![0.0; endmembers * height * width],
        }
    }

    #[inline]
    pub fn get(&self, k: usize, h: usize, w: usize) -> f64 {
        self.data[(k * self.height + h) * self.width + w]
    }

    #[inline]
    pub fn set(&mut self, k: usize, h: usize, w: usize, v: f64) {
        self.data[(k * self.height + h) * self.width + w] = v;
    }

    pub fn map(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[k * n..(k + 1) * n]
    }

    /// Abundance vector of one pixel.
    pub fn pixel(&self, h: usize, w: usize) -> Vec<f64> {
        (0..self.endmembers).map(|k| self.get(k, h, w)).collect()
    }

    /// Largest deviation from the simplex over all pixels: the maximum of
    /// `|sum - 1|` and of `-min(a)`.
    pub fn simplex_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for h in 0..self.height {
            for w in 0..self.width {
                let mut sum = 0.0;
                for k in 0..self.endmembers {
                    let a = self.get(k, h, w);
                    sum += a;
                    worst = worst.max(-a);
                }
                worst = worst.max(libm::fabs(sum - 1.0));
            }
        }
        worst
    }

    /// Reorders channels so that output channel `perm[k]` holds input channel `k`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.endmembers {
            bail!(
                Dimension,
                "permutation of length {} for {} maps",
                perm.len(),
                self.endmembers
            );
        }
        let n = self.height * self.width;
        let mut out = Self::zeros(self.endmembers, self.height, self.width);
        for (k, &dst) in perm.iter().enumerate() {
            out.data[dst * n..(dst + 1) * n].copy_from_slice(self.map(k));
        }
        Ok(out)
    }

    /// Pixel-interleaved view as a cube with K "bands".
    pub fn to_cube(&self) -> Result<HyperCube> {
        let mut data = Vec::with_capacity(self.data.len());
        for h in 0..self.height {
            for w in 0..self.width {
                data.extend((0..self.endmembers).map(|k| self.get(k, h, w)));
            }
        }
        HyperCube::new(self.height, self.width, self.endmembers, data, None)
    }

    pub fn from_cube(cube: &HyperCube) -> Self {
        let mut out = Self::zeros(cube.bands(), cube.height(), cube.width());
        for h in 0..cube.height() {
            for w in 0..cube.width() {
                for (k, &v) in cube.pixel(h, w).iter().enumerate() {
                    out.set(k, h, w, v);
                }
            }
        }
        out
    }
}

/// B×K endmember spectra, row-major (`data[b * K + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    pub bands: usize,
    pub endmembers: usize,
    pub data: Vec<f64>,
}

impl EndmemberMatrix {
    pub fn new(bands: usize, endmembers: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != bands * endmembers {
            bail!(
                Dimension,
                "endmember data length {} for {bands}x{endmembers}",
                data.len()
            );
        }
        Ok(Self {
            bands,
            endmembers,
            data,
        })
    }

    pub fn zeros(bands: usize, endmembers: usize) -> Self {
        Self {
            bands,
            endmembers,
            data: alloc::vec![0.0; bands * endmembers],
        }
    }

    #[inline]
    pub fn get(&self, b: usize, k: usize) -> f64 {
        self.data[b * self.endmembers + k]
    }

    #[inline]
    pub fn set(&mut self, b: usize, k: usize, v: f64) {
        self.data[b * self.endmembers + k] = v;
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, k)).collect()
    }

    /// `E · a` for one abundance vector.
    pub fn mix_into(&self, abundances: &[f64], out: &mut [f64]) {
        for (b, o) in out.iter_mut().enumerate() {
            let row = &self.data[b * self.endmembers..(b + 1) * self.endmembers];
            *o = row.iter().zip(abundances).map(|(e, a)| e * a).sum();
        }
    }
}

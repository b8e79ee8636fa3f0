use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::cube::HyperCube;
use crate::error::{bail, Result};
use crate::rng::{stream, Stream};

/// `n × B × p × p` patch tensor plus the center pixel of each patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchBatch {
    pub bands: usize,
    pub patch: usize,
    pub data: Vec<f64>,
    pub centers: Vec<(usize, usize)>,
}

impl PatchBatch {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Patches fully inside the cube around each center.
    pub fn extract(cube: &HyperCube, centers: &[(usize, usize)], patch: usize) -> Result<Self> {
        let half = patch / 2;
        for &(h, w) in centers {
            if h < half || w < half || h + half >= cube.height() || w + half >= cube.width() {
                bail!(
                    Dimension,
                    "patch of side {patch} at ({h}, {w}) leaves the {}x{} cube",
                    cube.height(),
                    cube.width()
                );
            }
        }
        Ok(Self::gather(cube, centers, patch))
    }

    /// Patches around arbitrary pixels, zero outside the cube.
    pub fn extract_padded(cube: &HyperCube, centers: &[(usize, usize)], patch: usize) -> Self {
        Self::gather(cube, centers, patch)
    }

    fn gather(cube: &HyperCube, centers: &[(usize, usize)], patch: usize) -> Self {
        let bands = cube.bands();
        let area = patch * patch;
        let half = patch as isize / 2;
        let mut data = vec![0.0; centers.len() * bands * area];
        for (s, &(h, w)) in centers.iter().enumerate() {
            for u in 0..patch {
                let hh = h as isize + u as isize - half;
                if hh < 0 || hh >= cube.height() as isize {
                    continue;
                }
                for v in 0..patch {
                    let ww = w as isize + v as isize - half;
                    if ww < 0 || ww >= cube.width() as isize {
                        continue;
                    }
                    let spectrum = cube.pixel(hh as usize, ww as usize);
                    for (b, &x) in spectrum.iter().enumerate() {
                        data[(s * bands + b) * area + u * patch + v] = x;
                    }
                }
            }
        }
        Self {
            bands,
            patch,
            data,
            centers: centers.to_vec(),
        }
    }
}

/// Draws `n` patch centers uniformly, with replacement, among the centers
/// whose p×p patch lies fully inside the cube.
pub fn sample_patches(
    cube: &HyperCube,
    n: usize,
    patch: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || patch.is_multiple_of(2) {
        bail!(Config, "patch side must be odd, got {patch}");
    }
    if cube.height() < patch || cube.width() < patch {
        bail!(
            Dimension,
            "cube {}x{} is smaller than a {patch}x{patch} patch",
            cube.height(),
            cube.width()
        );
    }
    let half = patch / 2;
    let (h_hi, w_hi) = (cube.height() - half, cube.width() - half);
    let mut rng = stream(seed, Stream::Patches);
    Ok((0..n)
        .map(|_| (rng.random_range(half..h_hi), rng.random_range(half..w_hi)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn cube(h: usize, w: usize, b: usize) -> HyperCube {
        let data = (0..h * w * b).map(|i| i as f64).collect();
        HyperCube::new(h, w, b, data, None).unwrap()
    }

    #[test]
    fn single_valid_center() {
        let c = cube(5, 5, 2);
        let centers = sample_patches(&c, 20, 5, 1).unwrap();
        assert!(centers.iter().all(|&x| x == (2, 2)));
        let batch = PatchBatch::extract(&c, &centers, 5).unwrap();
        assert!(batch.data.chunks(50).all(|p| p == &batch.data[..50]));
    }

    #[test]
    fn deterministic_and_too_small() {
        let c = cube(9, 7, 1);
        assert_eq!(
            sample_patches(&c, 50, 3, 4).unwrap(),
            sample_patches(&c, 50, 3, 4).unwrap()
        );
        assert!(matches!(
            sample_patches(&cube(4, 9, 1), 1, 5, 0),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn every_interior_center_is_drawn() {
        let c = cube(32, 32, 1);
        let centers = sample_patches(&c, 100_000, 5, 7).unwrap();
        let distinct: BTreeSet<_> = centers.iter().collect();
        assert_eq!(distinct.len(), 28 * 28);
        assert!(centers
            .iter()
            .all(|&(h, w)| (2..30).contains(&h) && (2..30).contains(&w)));
    }

    #[test]
    fn patch_layout_and_padding() {
        let c = cube(4, 4, 2);
        let p = PatchBatch::extract(&c, &[(1, 2)], 3).unwrap();
        // band 1 of pixel (0, 1) sits at patch position (0, 0)
        assert_eq!(p.data[9], c.pixel(0, 1)[1]);
        let padded = PatchBatch::extract_padded(&c, &[(0, 0)], 3);
        assert_eq!(padded.data[0], 0.0);
        assert_eq!(padded.data[4], c.pixel(0, 0)[0]);
        assert!(PatchBatch::extract(&c, &[(0, 0)], 3).is_err());
    }
}

//! Comparison of estimates against synthetic ground truth.

use alloc::vec;
use alloc::vec::Vec;

use crate::cube::{AbundanceMap, EndmemberMatrix};
use crate::error::{bail, Result};
use crate::loss::spectral_angle;

/// Weight below which a band counts as flagged.
pub const DETECTION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `permutation[k]` is the true endmember matched to estimated `k`.
    pub permutation: Vec<usize>,
    /// SAD of each matched pair, indexed by estimated endmember.
    pub sad: Vec<f64>,
    pub mean_sad: f64,
}

fn sad_table(est: &EndmemberMatrix, truth: &EndmemberMatrix) -> Vec<Vec<f64>> {
    let tc: Vec<Vec<f64>> = (0..truth.endmembers).map(|j| truth.column(j)).collect();
    (0..est.endmembers)
        .map(|i| {
            let e = est.column(i);
            tc.iter().map(|t| spectral_angle(&e, t)).collect()
        })
        .collect()
}

fn greedy(table: &[Vec<f64>], rows: usize, cols: usize) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(rows * cols);
    for (i, row) in table.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            pairs.push((v, i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assign = vec![None; rows];
    let mut taken = vec![false; cols];
    let mut left = rows.min(cols);
    for (_, i, j) in pairs {
        if left == 0 {
            break;
        }
        if assign[i].is_none() && !taken[j] {
            assign[i] = Some(j);
            taken[j] = true;
            left -= 1;
        }
    }
    assign
}

/// Greedy matching: repeatedly pairs the globally closest unmatched
/// (estimated, true) endmembers by spectral angle.
pub fn match_endmembers(est: &EndmemberMatrix, truth: &EndmemberMatrix) -> Result<MatchResult> {
    if est.endmembers != truth.endmembers {
        bail!(
            Dimension,
            "{} estimated endmembers against {} true ones",
            est.endmembers,
            truth.endmembers
        );
    }
    if est.bands != truth.bands {
        bail!(Dimension, "{} bands against {}", est.bands, truth.bands);
    }
    let table = sad_table(est, truth);
    let assign = greedy(&table, est.endmembers, truth.endmembers);
    let permutation: Vec<usize> = assign
        .into_iter()
        .map(|a| a.expect("square matching is complete"))
        .collect();
    let sad: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| table[i][j])
        .collect();
    let mean_sad = sad.iter().sum::<f64>() / sad.len() as f64;
    Ok(MatchResult {
        permutation,
        sad,
        mean_sad,
    })
}

/// Greedy matching when the counts differ. Only `min(K̂, K)` pairs are
/// formed; unmatched estimates map to `None`.
pub fn match_endmembers_partial(
    est: &EndmemberMatrix,
    truth: &EndmemberMatrix,
) -> Result<(Vec<Option<usize>>, Vec<f64>)> {
    if est.bands != truth.bands {
        bail!(Dimension, "{} bands against {}", est.bands, truth.bands);
    }
    let table = sad_table(est, truth);
    let assign = greedy(&table, est.endmembers, truth.endmembers);
    let sad = assign
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|j| table[i][j]))
        .collect();
    Ok((assign, sad))
}

/// Spectral angle of each matched pair restricted to `bands`.
pub fn matched_sad_on_bands(
    est: &EndmemberMatrix,
    truth: &EndmemberMatrix,
    perm: &[usize],
    bands: &[usize],
) -> Result<Vec<f64>> {
    if perm.len() != est.endmembers || est.bands != truth.bands {
        bail!(
            Dimension,
            "permutation or band count does not fit the endmember matrices"
        );
    }
    if let Some(&b) = bands.iter().find(|&&b| b >= est.bands) {
        bail!(Dimension, "band {b} out of range for {} bands", est.bands);
    }
    Ok(perm
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            if j >= truth.endmembers {
                return f64::NAN;
            }
            let e: Vec<f64> = bands.iter().map(|&b| est.get(b, i)).collect();
            let t: Vec<f64> = bands.iter().map(|&b| truth.get(b, j)).collect();
            spectral_angle(&e, &t)
        })
        .collect())
}

/// RMSE over all K·H·W entries after reordering `est` by `perm`.
pub fn abundance_rmse(est: &AbundanceMap, truth: &AbundanceMap, perm: &[usize]) -> Result<f64> {
    if est.endmembers != truth.endmembers || est.height != truth.height || est.width != truth.width
    {
        bail!(
            Dimension,
            "abundance maps {}x{}x{} and {}x{}x{}",
            est.endmembers,
            est.height,
            est.width,
            truth.endmembers,
            truth.height,
            truth.width
        );
    }
    let aligned = est.permuted(perm)?;
    let n = aligned.data.len() as f64;
    let sq: f64 = aligned
        .data
        .iter()
        .zip(&truth.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(sq / n))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Flagged bands adjacent to a contaminated band, not counted.
    pub ignored: usize,
    pub precision: f64,
    pub recall: f64,
    pub flagged: Vec<usize>,
}

/// Precision and recall of `w < 0.5` against the contaminated bands. The
/// immediate neighbours of each contaminated band are excluded from the
/// false-positive count. An empty flag set reports precision 1; an empty
/// truth set reports recall 1.
pub fn weight_detection_report(w: &[f64], contaminated: &[usize]) -> Result<DetectionReport> {
    let bands = w.len();
    if let Some(&b) = contaminated.iter().find(|&&b| b >= bands) {
        bail!(
            Dimension,
            "contaminated band {b} out of range for {bands} bands"
        );
    }
    let mut truth = vec![false; bands];
    contaminated.iter().for_each(|&b| truth[b] = true);
    let mut spill = vec![false; bands];
    for &b in contaminated {
        if b > 0 {
            spill[b - 1] = true;
        }
        if b + 1 < bands {
            spill[b + 1] = true;
        }
    }
    let flagged: Vec<usize> = (0..bands).filter(|&b| w[b] < DETECTION_THRESHOLD).collect();
    let (mut tp, mut fp, mut ignored) = (0, 0, 0);
    for &b in &flagged {
        if truth[b] {
            tp += 1;
        } else if spill[b] {
            ignored += 1;
        } else {
            fp += 1;
        }
    }
    let positives = truth.iter().filter(|&&t| t).count();
    let fn_ = positives - tp;
    let precision = if tp + fp == 0 {
        1.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if positives == 0 {
        1.0
    } else {
        tp as f64 / positives as f64
    };
    Ok(DetectionReport {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        ignored,
        precision,
        recall,
        flagged,
    })
}

/// Bands that are neither contaminated nor adjacent to a contaminated band.
pub fn clean_bands(bands: usize, contaminated: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; bands];
    for &b in contaminated.iter().filter(|&&b| b < bands) {
        mask[b] = false;
        if b > 0 {
            mask[b - 1] = false;
        }
        if b + 1 < bands {
            mask[b + 1] = false;
        }
    }
    (0..bands).filter(|&b| mask[b]).collect()
}

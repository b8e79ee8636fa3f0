//! Spectral angle losses.
//!
//! `wsad(x, x̂; w) = arccos(⟨w⊙x, w⊙x̂⟩ / max(‖w⊙x‖·‖w⊙x̂‖, ε))`, with
//! `sad` the unweighted special case. The angle is always in [0, π]; a zero
//! vector yields π/2.

/// Denominator guard.
pub const LOSS_EPS: f64 = 1e-9;
/// The arccos derivative is evaluated with its argument clamped to
/// `[-1 + DERIV_CLAMP, 1 - DERIV_CLAMP]`.
pub const DERIV_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle {
    pub radians: f64,
    /// One of the (weighted) vectors had zero norm.
    pub degenerate: bool,
}

#[inline]
fn cosine<I: Iterator<Item = (f64, f64)>>(pairs: I) -> (f64, f64, f64, f64) {
    let (mut dot, mut nx, mut ny) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        dot += a * b;
        nx += a * a;
        ny += b * b;
    }
    let (nx, ny) = (libm::sqrt(nx), libm::sqrt(ny));
    (dot, nx, ny, dot / (nx * ny).max(LOSS_EPS))
}

#[inline]
fn angle_of(cos: f64) -> f64 {
    libm::acos(cos.clamp(-1.0, 1.0))
}

pub fn sad_checked(x: &[f64], x_hat: &[f64]) -> Angle {
    assert_eq!(x.len(), x_hat.len(), "spectra must have equal length");
    let (_, nx, ny, cos) = cosine(x.iter().copied().zip(x_hat.iter().copied()));
    Angle {
        radians: angle_of(cos),
        degenerate: nx == 0.0 || ny == 0.0,
    }
}

/// Spectral angle distance in radians.
pub fn sad(x: &[f64], x_hat: &[f64]) -> f64 {
    sad_checked(x, x_hat).radians
}

/// Alias used where the quantity is a similarity between spectra rather than
/// a loss.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    sad(a, b)
}

pub fn wsad_checked(x: &[f64], x_hat: &[f64], w: &[f64]) -> Angle {
    assert_eq!(x.len(), x_hat.len(), "spectra must have equal length");
    assert_eq!(x.len(), w.len(), "weights must match the band count");
    let (_, nx, ny, cos) = cosine(
        x.iter()
            .zip(x_hat)
            .zip(w)
            .map(|((a, b), wb)| (wb * a, wb * b)),
    );
    Angle {
        radians: angle_of(cos),
        degenerate: nx == 0.0 || ny == 0.0,
    }
}

/// Weighted spectral angle distance in radians.
pub fn wsad(x: &[f64], x_hat: &[f64], w: &[f64]) -> f64 {
    wsad_checked(x, x_hat, w).radians
}

/// WSAD and its gradient with respect to `x_hat`, scaled by `scale`
/// (accumulated into `grad`).
pub fn wsad_grad(x: &[f64], x_hat: &[f64], w: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let (dot, nx, ny, cos) = cosine(
        x.iter()
            .zip(x_hat)
            .zip(w)
            .map(|((a, b), wb)| (wb * a, wb * b)),
    );
    let value = angle_of(cos);
    let c = cos.clamp(-1.0 + DERIV_CLAMP, 1.0 - DERIV_CLAMP);
    let dl_dcos = -1.0 / libm::sqrt(1.0 - c * c) * scale;
    let prod = nx * ny;
    if prod >= LOSS_EPS {
        // d cos / d y_b = (x_b - cos · (nx/ny) · y_b) / (nx·ny), y = w⊙x̂
        let ratio = cos * nx / ny;
        for b in 0..x.len() {
            let (xb, yb) = (w[b] * x[b], w[b] * x_hat[b]);
            grad[b] += dl_dcos * (xb - ratio * yb) / prod * w[b];
        }
    } else {
        for b in 0..x.len() {
            grad[b] += dl_dcos * w[b] * x[b] / LOSS_EPS * w[b];
        }
    }
    let _ = dot;
    value
}

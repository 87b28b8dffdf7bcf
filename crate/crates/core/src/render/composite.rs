//! Emission-absorption compositing along a ray.
//!
//! `Ĉ = Σ_i T_i (1 − e^{−σ_i δ_i}) c_i` with `T_i = e^{−Σ_{j<i} σ_j δ_j}`.
//! Skipped samples enter with `σ = 0` and therefore carry zero weight while
//! keeping their interval in the sum.

use alloc::vec::Vec;

use crate::autodiff::Matrix;
use crate::math::{exp, floor};

/// Per-sample compositing weights `w_i = T_i (1 − e^{−σ_i δ_i})`.
pub fn composite_weights(sigma: &[f64], delta: &[f64]) -> Vec<f64> {
    assert_eq!(sigma.len(), delta.len(), "sigma/delta length mismatch");
    let mut depth = 0.0;
    sigma
        .iter()
        .zip(delta)
        .map(|(&s, &d)| {
            let od = s * d;
            let w = exp(-depth) * (1.0 - exp(-od));
            depth += od;
            w
        })
        .collect()
}

/// Transmittance left after the last sample, `T_N`.
pub fn residual_transmittance(sigma: &[f64], delta: &[f64]) -> f64 {
    exp(-sigma.iter().zip(delta).map(|(s, d)| s * d).sum::<f64>())
}

/// Composite `(rgb, σ, δ)` samples, ordered by ray parameter.
pub fn composite(samples: &[([f64; 3], f64, f64)]) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut depth = 0.0;
    for (c, s, d) in samples {
        let od = s * d;
        let w = exp(-depth) * (1.0 - exp(-od));
        depth += od;
        for k in 0..3 {
            out[k] += w * c[k];
        }
    }
    out
}

/// Midpoint Riemann sum of `∫ T(t) σ(t) c(t) dt` with about `substeps`
/// steps spread over the ray in proportion to each sample's interval (so no
/// step straddles a change of `σ` or `c`), and `T` integrated exactly. A
/// numerical reference for [`composite`].
pub fn riemann_composite(samples: &[([f64; 3], f64, f64)], substeps: usize) -> [f64; 3] {
    let length: f64 = samples.iter().map(|s| s.2).sum();
    let mut out = [0.0; 3];
    if substeps == 0 || !(length > 0.0) {
        return out;
    }
    let mut depth = 0.0;
    for &(c, sigma, delta) in samples {
        let n = (floor(substeps as f64 * delta / length + 0.5) as usize).max(1);
        let dt = delta / n as f64;
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let transmittance = exp(-(depth + sigma * t));
            for i in 0..3 {
                out[i] += transmittance * sigma * c[i] * dt;
            }
        }
        depth += sigma * delta;
    }
    out
}

pub(crate) fn composite_rows(rgb: &Matrix, sigma: &Matrix, delta: &[f64], offsets: &[usize]) -> Matrix {
    assert_eq!(rgb.cols(), 3, "composite expects rgb columns");
    assert_eq!(sigma.shape(), (rgb.rows(), 1), "composite sigma shape");
    assert_eq!(delta.len(), rgb.rows(), "composite delta length");
    let rays = offsets.len().saturating_sub(1);
    let mut out = Matrix::zeros(rays, 3);
    for r in 0..rays {
        let mut acc = [0.0; 3];
        let mut depth = 0.0;
        for i in offsets[r]..offsets[r + 1] {
            let od = sigma.get(i, 0) * delta[i];
            let w = exp(-depth) * (1.0 - exp(-od));
            depth += od;
            for (k, a) in acc.iter_mut().enumerate() {
                *a += w * rgb.get(i, k);
            }
        }
        out.row_mut(r).copy_from_slice(&acc);
    }
    out
}

/// Returns `(∂/∂rgb, ∂/∂σ)` for the cotangent `g` on the composited colours.
pub(crate) fn composite_rows_vjp(
    rgb: &Matrix,
    sigma: &Matrix,
    delta: &[f64],
    offsets: &[usize],
    g: &Matrix,
) -> (Matrix, Matrix) {
    let mut grgb = Matrix::zeros(rgb.rows(), 3);
    let mut gsigma = Matrix::zeros(rgb.rows(), 1);
    let rays = offsets.len().saturating_sub(1);
    let mut weights = Vec::new();
    let mut t_after = Vec::new();
    for r in 0..rays {
        let (lo, hi) = (offsets[r], offsets[r + 1]);
        weights.clear();
        t_after.clear();
        let mut depth = 0.0;
        for i in lo..hi {
            let od = sigma.get(i, 0) * delta[i];
            weights.push(exp(-depth) * (1.0 - exp(-od)));
            depth += od;
            t_after.push(exp(-depth));
        }
        let gr = g.row(r);
        // suffix = Σ_{j>i} w_j c_j
        let mut suffix = [0.0; 3];
        for i in (lo..hi).rev() {
            let k = i - lo;
            let c = rgb.row(i);
            let mut gs = 0.0;
            for ch in 0..3 {
                grgb.set(i, ch, gr[ch] * weights[k]);
                gs += gr[ch] * (t_after[k] * c[ch] - suffix[ch]);
            }
            gsigma.set(i, 0, gs * delta[i]);
            for ch in 0..3 {
                suffix[ch] += weights[k] * c[ch];
            }
        }
    }
    (grgb, gsigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::ln;

    #[test]
    fn empty_space_is_black() {
        let c = composite(&[([1.0, 1.0, 1.0], 0.0, 1.0), ([0.5, 0.2, 0.1], 0.0, 3.0)]);
        assert_eq!(c, [0.0, 0.0, 0.0]);
    }

    #[test]
    fn opaque_sample_returns_its_colour() {
        let c = composite(&[([0.2, 0.4, 0.6], 1e6, 1.0)]);
        assert_eq!(c, [0.2, 0.4, 0.6]);
    }

    #[test]
    fn half_transmittance_split() {
        let c = composite(&[([1.0, 0.0, 0.0], ln(2.0), 1.0), ([0.0, 1.0, 0.0], 1e6, 1.0)]);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.5).abs() < 1e-12);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn weights_telescope_to_one_minus_residual() {
        let sigma = [0.3, 2.0, 0.0, 5.5, 0.1];
        let delta = [0.5, 0.2, 1.0, 0.1, 4.0];
        let w = composite_weights(&sigma, &delta);
        let total: f64 = w.iter().sum();
        assert!(w.iter().all(|&x| x >= 0.0));
        assert!((total - (1.0 - residual_transmittance(&sigma, &delta))).abs() < 1e-12);
    }
}

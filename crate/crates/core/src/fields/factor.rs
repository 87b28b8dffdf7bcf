//! Low-rank canonical features.
//!
//! A factor vector of length `4m` is split into `v11, v12, v21, v22 ∈ R^m`.
//! With row-major flattening of outer products,
//!
//! ```text
//! u1[a·m + b] = v11[a]·v12[b]          u1, u2 ∈ R^{m²}
//! u2[a·m + b] = v21[a]·v22[b]
//! y[p·m² + q] = u1[p]·u2[q] + z[p·m² + q]   y, z ∈ R^{m⁴}
//! ```

use alloc::vec;
use alloc::vec::Vec;

use super::FieldError;
use crate::autodiff::Matrix;

/// Largest supported rank (`m⁴ = 4096`).
pub const MAX_RANK: usize = 8;

/// Feature dimension reconstructed from rank `m`: `m⁴`.
pub fn feature_len(rank: usize) -> usize {
    rank * rank * rank * rank
}

/// Per-bin factor count for rank `m`: `4m`.
pub fn factor_len(rank: usize) -> usize {
    4 * rank
}

/// `y = flatten(u1 ⊗ u2) + z` with `u_i = flatten(v_{i,1} ⊗ v_{i,2})`.
pub fn reconstruct_feature(factors: &[f64], z: &[f64]) -> Result<Vec<f64>, FieldError> {
    if factors.len() % 4 != 0 || factors.is_empty() {
        return Err(FieldError::Dimension {
            what: "factor vector (must be 4·m)",
            expected: 4,
            found: factors.len(),
        });
    }
    let m = factors.len() / 4;
    if m > MAX_RANK {
        return Err(FieldError::Dimension {
            what: "factor rank",
            expected: MAX_RANK,
            found: m,
        });
    }
    if z.len() != feature_len(m) {
        return Err(FieldError::Dimension {
            what: "shared feature z (must be m⁴)",
            expected: feature_len(m),
            found: z.len(),
        });
    }
    let mut y = vec![0.0; z.len()];
    reconstruct_into(factors, z, m, &mut y);
    Ok(y)
}

fn outer_into(a: &[f64], b: &[f64], out: &mut [f64]) {
    let n = b.len();
    for (i, &ai) in a.iter().enumerate() {
        for (o, &bj) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
            *o = ai * bj;
        }
    }
}

fn reconstruct_into(f: &[f64], z: &[f64], m: usize, y: &mut [f64]) {
    let m2 = m * m;
    let mut u1 = [0.0; 64];
    let mut u2 = [0.0; 64];
    let (u1, u2) = (&mut u1[..m2], &mut u2[..m2]);
    outer_into(&f[..m], &f[m..2 * m], u1);
    outer_into(&f[2 * m..3 * m], &f[3 * m..4 * m], u2);
    for p in 0..m2 {
        let row = &mut y[p * m2..(p + 1) * m2];
        let zr = &z[p * m2..(p + 1) * m2];
        for q in 0..m2 {
            row[q] = u1[p] * u2[q] + zr[q];
        }
    }
}

/// Row-wise reconstruction. `z` is either one row shared by every factor
/// row or one row per factor row.
pub(crate) fn reconstruct_rows(factors: &Matrix, z: &Matrix, m: usize) -> Matrix {
    assert!(m <= MAX_RANK, "rank above {MAX_RANK} is not supported");
    assert_eq!(factors.cols(), factor_len(m), "factor width mismatch");
    let l = feature_len(m);
    assert_eq!(z.cols(), l, "shared feature width mismatch");
    assert!(z.rows() == 1 || z.rows() == factors.rows(), "shared feature rows mismatch");
    let mut out = Matrix::zeros(factors.rows(), l);
    for i in 0..factors.rows() {
        let zr = if z.rows() == 1 { z.row(0) } else { z.row(i) };
        reconstruct_into(factors.row(i), zr, m, out.row_mut(i));
    }
    out
}

/// Returns `(∂/∂factors, ∂/∂z)` for the cotangent `g` on the features.
pub(crate) fn reconstruct_rows_vjp(factors: &Matrix, z: &Matrix, m: usize, g: &Matrix) -> (Matrix, Matrix) {
    let m2 = m * m;
    let mut gf = Matrix::zeros(factors.rows(), 4 * m);
    let mut gz = Matrix::zeros(z.rows(), z.cols());
    let mut u1 = vec![0.0; m2];
    let mut u2 = vec![0.0; m2];
    let mut gu1 = vec![0.0; m2];
    let mut gu2 = vec![0.0; m2];
    for i in 0..factors.rows() {
        let f = factors.row(i);
        let gi = g.row(i);
        let zr = if z.rows() == 1 { 0 } else { i };
        for (d, s) in gz.row_mut(zr).iter_mut().zip(gi) {
            *d += s;
        }
        outer_into(&f[..m], &f[m..2 * m], &mut u1);
        outer_into(&f[2 * m..3 * m], &f[3 * m..4 * m], &mut u2);
        gu1.iter_mut().for_each(|v| *v = 0.0);
        gu2.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..m2 {
            let row = &gi[p * m2..(p + 1) * m2];
            for q in 0..m2 {
                gu1[p] += row[q] * u2[q];
                gu2[q] += row[q] * u1[p];
            }
        }
        let out = gf.row_mut(i);
        for a in 0..m {
            for b in 0..m {
                out[a] += gu1[a * m + b] * f[m + b];
                out[m + b] += gu1[a * m + b] * f[a];
                out[2 * m + a] += gu2[a * m + b] * f[3 * m + b];
                out[3 * m + b] += gu2[a * m + b] * f[2 * m + a];
            }
        }
    }
    (gf, gz)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nested-loop oracle written directly from the definition.
    fn oracle(f: &[f64], z: &[f64], m: usize) -> Vec<f64> {
        let v = |i: usize, j: usize, k: usize| f[(2 * i + j) * m + k];
        let mut y = Vec::new();
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    for d in 0..m {
                        y.push(v(0, 0, a) * v(0, 1, b) * v(1, 0, c) * v(1, 1, d));
                    }
                }
            }
        }
        y.iter().zip(z).map(|(a, b)| a + b).collect()
    }

    #[test]
    fn zero_factors_return_shared_feature() {
        let z: Vec<f64> = (0..256).map(|i| i as f64 * 0.01).collect();
        assert_eq!(reconstruct_feature(&[0.0; 16], &z).unwrap(), z);
    }

    #[test]
    fn rank_one_is_a_product() {
        let y = reconstruct_feature(&[2.0, 3.0, 0.5, -1.0], &[0.0]).unwrap();
        assert_eq!(y, [-3.0]);
    }

    #[test]
    fn rank_two_matches_nested_oracle() {
        let f = [0.3, -1.2, 0.7, 2.0, -0.4, 1.1, 0.9, -0.6];
        let z: Vec<f64> = (0..16).map(|i| crate::math::sin(i as f64 * 0.7)).collect();
        let got = reconstruct_feature(&f, &z).unwrap();
        for (a, b) in got.iter().zip(oracle(&f, &z, 2)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_errors() {
        assert!(reconstruct_feature(&[1.0; 15], &[0.0; 256]).is_err());
        assert!(reconstruct_feature(&[1.0; 16], &[0.0; 255]).is_err());
    }
}

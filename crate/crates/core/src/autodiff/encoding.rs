//! Sinusoidal positional encoding.
//!
//! Layout for an input `x` of dimension `d` and `L` frequencies:
//!
//! ```text
//! [ x_0 .. x_{d-1} | sin block | cos block ]
//! sin block = sin(2^0 π x_0) .. sin(2^0 π x_{d-1}), sin(2^1 π x_0) .. , sin(2^{L-1} π x_{d-1})
//! cos block = same ordering with cos
//! ```
//!
//! i.e. frequency-major within each block. Output length is `d + 2·d·L`.

use alloc::vec::Vec;

use super::Matrix;
use crate::math::{cos, powi, sin, PI};

pub fn encoded_len(dim: usize, freqs: usize) -> usize {
    dim + 2 * dim * freqs
}

/// Encode one vector. See the module docs for the layout.
pub fn positional_encode(x: &[f64], freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(x.len(), freqs));
    encode_into(x, freqs, &mut out);
    out
}

pub(crate) fn encode_into(x: &[f64], freqs: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(x);
    for k in 0..freqs {
        let w = powi(2.0, k as i32) * PI;
        out.extend(x.iter().map(|&v| sin(w * v)));
    }
    for k in 0..freqs {
        let w = powi(2.0, k as i32) * PI;
        out.extend(x.iter().map(|&v| cos(w * v)));
    }
}

/// Row-wise encoding of a batch.
pub fn encode_rows(x: &Matrix, freqs: usize) -> Matrix {
    let width = encoded_len(x.cols(), freqs);
    let mut data = Vec::with_capacity(x.rows() * width);
    for i in 0..x.rows() {
        encode_into(x.row(i), freqs, &mut data);
    }
    Matrix::from_vec(x.rows(), width, data)
}

/// Vector-Jacobian product of [`encode_rows`]: maps a cotangent on the
/// encoded batch back to the raw inputs.
pub(crate) fn encode_rows_vjp(x: &Matrix, freqs: usize, g: &Matrix) -> Matrix {
    let d = x.cols();
    let mut out = Matrix::zeros(x.rows(), d);
    for i in 0..x.rows() {
        let xi = x.row(i);
        let gi = g.row(i);
        let oi = out.row_mut(i);
        oi.copy_from_slice(&gi[..d]);
        for k in 0..freqs {
            let w = powi(2.0, k as i32) * PI;
            let sin_at = d + k * d;
            let cos_at = d + freqs * d + k * d;
            for j in 0..d {
                oi[j] += gi[sin_at + j] * w * cos(w * xi[j]);
                oi[j] -= gi[cos_at + j] * w * sin(w * xi[j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn zero_input_single_frequency() {
        let e = positional_encode(&[0.0, 0.0, 0.0], 1);
        assert_eq!(e, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn no_frequencies_is_identity() {
        assert_eq!(positional_encode(&[0.5], 0), [0.5]);
    }

    #[test]
    fn exact_trig_values() {
        let e = positional_encode(&[1.0], 2);
        assert!(close(&e, &[1.0, 0.0, 0.0, -1.0, 1.0]));
    }

    #[test]
    fn length_formula_holds() {
        for d in 1..=3 {
            for l in 0..=10 {
                let x: Vec<f64> = (0..d).map(|i| i as f64 * 0.1).collect();
                assert_eq!(positional_encode(&x, l).len(), d + 2 * d * l);
            }
        }
    }
}

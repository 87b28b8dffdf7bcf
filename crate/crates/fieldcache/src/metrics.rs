//! Image quality metrics.

use fieldcache_core::render::Image;

/// Reported in place of +∞ for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image sizes differ: {a:?} vs {b:?}")]
    Dimension { a: (usize, usize), b: (usize, usize) },
    #[error("image is {0}×{1}, need at least 11×11 for SSIM")]
    TooSmall(usize, usize),
}

fn check(a: &Image, b: &Image) -> Result<(), MetricError> {
    let (da, db) = ((a.width(), a.height()), (b.width(), b.height()));
    if da != db {
        return Err(MetricError::Dimension { a: da, b: db });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / (3 * a.pixels().len()).max(1) as f64)
}

/// `10·log10(1/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64, MetricError> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Mean PSNR over paired frames.
pub fn mean_psnr(a: &[Image], b: &[Image]) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += psnr(x, y)?;
    }
    Ok(total / a.len().max(1) as f64)
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-scale SSIM, 11×11 Gaussian window (σ = 1.5), valid windows only,
/// averaged over windows and channels.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, MetricError> {
    check(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < WINDOW || h < WINDOW {
        return Err(MetricError::TooSmall(w, h));
    }
    let g = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..3 {
        for y0 in 0..=h - WINDOW {
            for x0 in 0..=w - WINDOW {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (j, gy) in g.iter().enumerate() {
                    for (i, gx) in g.iter().enumerate() {
                        let wgt = gx * gy;
                        let va = a.get(x0 + i, y0 + j)[c];
                        let vb = b.get(x0 + i, y0 + j)[c];
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_closed_forms() {
        let zero = Image::filled(4, 4, [0.0; 3]);
        assert_eq!(psnr(&zero, &zero).unwrap(), PSNR_CAP_DB);
        assert!((psnr(&zero, &Image::filled(4, 4, [0.1; 3])).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&zero, &Image::filled(4, 4, [1.0; 3])).unwrap(), 0.0);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let a = Image::new(4, 4);
        let b = Image::new(4, 5);
        assert!(matches!(psnr(&a, &b), Err(MetricError::Dimension { .. })));
        assert!(matches!(ssim(&Image::new(10, 12), &Image::new(10, 12)), Err(MetricError::TooSmall(10, 12))));
    }

    #[test]
    fn ssim_of_constant_images() {
        let half = Image::filled(12, 12, [0.5; 3]);
        assert!((ssim(&half, &half).unwrap() - 1.0).abs() < 1e-12);
        // Constant a vs b: (2ab + C1)/(a² + b² + C1).
        let (x, y) = (0.2, 0.8);
        let expect = (2.0 * x * y + C1) / (x * x + y * y + C1);
        let got = ssim(&Image::filled(12, 12, [x; 3]), &Image::filled(12, 12, [y; 3])).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!(got < 0.5);
    }

    #[test]
    fn gaussian_window_is_normalised() {
        assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}

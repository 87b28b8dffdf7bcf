use std::time::Instant;

use fieldcache_core::render::composite::riemann_composite;
use fieldcache_core::render::{composite, composite_weights, residual_transmittance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_ray(rng: &mut ChaCha8Rng) -> Vec<([f64; 3], f64, f64)> {
    let n = rng.gen_range(1..=8);
    (0..n)
        .map(|_| {
            let c = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            (c, rng.gen_range(0.0..3.0), rng.gen_range(0.01..1.0))
        })
        .collect()
}

#[test]
fn matches_a_fine_riemann_sum_on_random_rays() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let ray = random_ray(&mut rng);
        let a = composite(&ray);
        let b = riemann_composite(&ray, 10_000);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() <= 1e-6, "{a:?} vs {b:?}");
        }
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn opaque_slab_returns_its_colour() {
    let c = [0.2, 0.4, 0.9];
    let ray = [(c, 1e6, 1.0), ([1.0, 1.0, 1.0], 3.0, 0.5)];
    assert_eq!(composite(&ray), c);
}

#[test]
fn zero_density_is_black() {
    let ray = [([0.3, 0.3, 0.3], 0.0, 1.0), ([0.9, 0.1, 0.5], 0.0, 2.0)];
    assert_eq!(composite(&ray), [0.0; 3]);
    assert_eq!(composite(&[]), [0.0; 3]);
}

proptest! {
    #[test]
    fn weights_and_residual_partition_unity(
        samples in prop::collection::vec((0.0f64..10.0, 0.0f64..2.0), 1..12)
    ) {
        let (sigma, delta): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let w = composite_weights(&sigma, &delta);
        prop_assert!(w.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let total: f64 = w.iter().sum::<f64>() + residual_transmittance(&sigma, &delta);
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn white_samples_composite_to_their_opacity(
        samples in prop::collection::vec((0.0f64..10.0, 0.0f64..2.0), 1..12)
    ) {
        let ray: Vec<_> = samples.iter().map(|&(s, d)| ([1.0; 3], s, d)).collect();
        let (sigma, delta): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
        let c = composite(&ray);
        let opacity = 1.0 - residual_transmittance(&sigma, &delta);
        for k in 0..3 {
            prop_assert!((c[k] - opacity).abs() < 1e-12);
        }
    }
}

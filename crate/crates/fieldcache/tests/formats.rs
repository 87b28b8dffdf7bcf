use fieldcache::formats::{decode_snapshot, encode_snapshot};
use fieldcache::image_io::{decode_ppm, encode_ppm};
use fieldcache::metrics::{mse, psnr, ssim};
use fieldcache_core::cache::{BinIndex, CacheSet, Strategy as Layout};
use fieldcache_core::render::Image;
use proptest::prelude::*;

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), w * h)
        .prop_map(move |p| Image::from_pixels(w, h, p).expect("pixel count matches"))
}

proptest! {
    #[test]
    fn snapshot_round_trips(entries in prop::collection::vec((0u16..50, 0u16..50, 0u16..6, -2.0f32..2.0, 0.0f32..1.0), 0..40)) {
        let mut set = CacheSet::new(Layout::Rgb, Layout::LowRank { rank: 2 }, 2, 50).unwrap();
        for &(a, b, plane, v, s) in &entries {
            set.background.update_parts(BinIndex::Plane { plane, cell: [a, b] }, &[v, v * 0.5, -v], v.abs(), s).unwrap();
            set.objects[(a % 2) as usize].update_parts(BinIndex::Cell([a, b, plane]), &[v; 8], v.abs(), s).unwrap();
        }
        let back = decode_snapshot(&encode_snapshot(&set)).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn ppm_round_trip_is_within_quantization(img in image(5, 3)) {
        let back = decode_ppm(&encode_ppm(&img)).unwrap();
        prop_assert_eq!((back.width(), back.height()), (5, 3));
        for (p, q) in img.pixels().iter().zip(back.pixels()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn metrics_are_symmetric(a in image(12, 12), b in image(12, 12)) {
        prop_assert_eq!(mse(&a, &b).unwrap(), mse(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn psnr_of_uniform_offset() {
    let a = Image::filled(4, 4, [0.5; 3]);
    let b = Image::filled(4, 4, [0.6; 3]);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn truncated_snapshot_is_rejected() {
    let set = CacheSet::new(Layout::Rgb, Layout::Rgb, 1, 10).unwrap();
    let bytes = encode_snapshot(&set);
    assert!(decode_snapshot(&bytes[..bytes.len() - 1]).is_err());
}

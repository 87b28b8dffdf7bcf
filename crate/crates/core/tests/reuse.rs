use fieldcache_core::cache::{bin_index, memory_usage_for, BinIndex, BinStore, CacheSet, Strategy as Layout};
use fieldcache_core::fields::{Component, FieldConfig, SceneModel};
use fieldcache_core::math::Vec3;
use fieldcache_core::presets;
use fieldcache_core::render::SamplingConfig;
use fieldcache_core::reuse::{blend_outputs, reuse_output, select_path, PathDecision, ReuseConfig};
use fieldcache_core::train::frame_queries;
use proptest::prelude::*;

fn omega() -> impl Strategy<Value = [f64; 4]> {
    prop::array::uniform4(-10.0f64..10.0)
}

proptest! {
    #[test]
    fn blend_endpoints_are_exact(r in omega(), f in omega()) {
        prop_assert_eq!(blend_outputs(0.0, r, f), f);
        prop_assert_eq!(blend_outputs(1.0, r, f), r);
    }

    #[test]
    fn blend_is_affine_in_s(r in omega(), f in omega(), s in 0.0f64..1.0, t in 0.0f64..1.0, a in 0.0f64..1.0) {
        let mix = blend_outputs(a * s + (1.0 - a) * t, r, f);
        let (bs, bt) = (blend_outputs(s, r, f), blend_outputs(t, r, f));
        for i in 0..4 {
            prop_assert!((mix[i] - (a * bs[i] + (1.0 - a) * bt[i])).abs() <= 1e-12);
        }
    }
}

#[test]
fn path_truth_table_at_default_thresholds() {
    let config = ReuseConfig::default();
    assert_eq!((config.tau, config.tau_sigma), (0.5, 0.9));
    let mut store = BinStore::new(Layout::LowRank { rank: 4 }, 100).unwrap();
    let cases = [
        ((0.6, 0.1), PathDecision::Skip),
        ((0.6, 1.5), PathDecision::Reuse),
        ((0.4, 0.1), PathDecision::Full),
        ((0.4, 1.5), PathDecision::Full),
    ];
    for (k, &((s, sigma), want)) in cases.iter().enumerate() {
        let idx = BinIndex::Cell([k as u16, 0, 0]);
        store.update_f64(idx, &[0.0; 16], sigma, s).unwrap();
        assert_eq!(select_path(&store, &idx, &config), want, "s={s} sigma={sigma}");
    }
    assert_eq!(select_path(&store, &BinIndex::Cell([9, 9, 9]), &config), PathDecision::Full);
}

#[test]
fn low_rank_storage_saves_93_75_percent_of_features() {
    let low = Layout::LowRank { rank: 4 };
    let direct = Layout::Feature { len: 256 };
    assert_eq!((low.feature_len(), direct.feature_len()), (16, 256));
    assert_eq!(1.0 - low.feature_len() as f64 / direct.feature_len() as f64, 0.9375);

    let entries = 100_000;
    let mut a = BinStore::new(low, 100).unwrap();
    let mut b = BinStore::new(direct, 100).unwrap();
    for i in 0..entries {
        let idx = BinIndex::Cell([(i % 100) as u16, (i / 100 % 100) as u16, (i / 10_000) as u16]);
        a.update_f64(idx, &[0.5; 16], 1.0, 0.5).unwrap();
        b.update_f64(idx, &[0.5; 256], 1.0, 0.5).unwrap();
    }
    assert_eq!(a.len(), entries);
    assert_eq!(a.memory_usage(), memory_usage_for(low, entries));
    assert_eq!(a.memory_usage(), entries * 18 * 4);
    assert_eq!(b.memory_usage(), entries * 258 * 4);
    let reduction = 1.0 - a.memory_usage() as f64 / b.memory_usage() as f64;
    assert!(reduction >= 0.93, "{reduction}");
}

#[test]
fn frozen_reuse_matches_full_path() {
    let preset = presets::desk().unwrap();
    let scene = preset.spec.scene_graph().unwrap();
    let config = FieldConfig::default();
    let model = SceneModel::new(&scene, config, 3).unwrap();
    let sampling = SamplingConfig::default();
    let queries = frame_queries(&scene, &preset.camera, &sampling, 0).unwrap();
    let queries: Vec<_> = queries.into_iter().step_by(7).collect();
    let mut stores = CacheSet::for_model(&config, scene.objects.len(), 100, false).unwrap();
    let samples = model.evaluate(&queries).unwrap();

    // Ask again with other transient inputs: the stored feature depends on
    // position (and latent) only.
    let mut moved = queries.clone();
    for q in &mut moved {
        q.direction = (q.direction + Vec3::new(0.05, -0.03, 0.0)).normalized().unwrap();
        if let Component::Object(_) = q.component {
            q.location = q.location + Vec3::new(0.3, -0.2, 0.1);
        }
    }
    let full = model.evaluate(&moved).unwrap();
    let mut worst = 0.0f64;
    for (i, q) in queries.iter().enumerate() {
        let store = stores.store_mut(q.component);
        let idx = bin_index(q, store.bins()).unwrap();
        store.update_f64(idx, &samples[i].feature, samples[i].sigma, samples[i].score).unwrap();
        let store = stores.store(q.component);
        let w = reuse_output(&model, store.strategy(), &moved[i], store.get(&idx).unwrap()).unwrap();
        for k in 0..3 {
            worst = worst.max((w[k] - full[i].rgb[k]).abs());
        }
        assert!((w[3] - full[i].sigma).abs() <= 1e-5 * full[i].sigma.max(1.0));
    }
    assert!(worst <= 1e-3, "{worst}");
}

use fieldcache_core::autodiff::check::relative_error;
use fieldcache_core::autodiff::Tape;
use fieldcache_core::fields::{FieldConfig, Storage};
use fieldcache_core::presets;
use fieldcache_core::render::{render_image, RenderContext, RenderMode, SamplingConfig};
use fieldcache_core::reuse::ReuseConfig;
use fieldcache_core::train::{Phase, RayBatch, TrainConfig, Trainer, TrainingSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_fields() -> FieldConfig {
    FieldConfig {
        first_width: 16,
        first_layers: 2,
        second_width: 16,
        second_layers: 2,
        position_freqs: 2,
        direction_freqs: 1,
        location_freqs: 1,
        latent_len: 4,
        feature_len: 16,
        rank: 2,
        storage: Storage::LowRank,
        ..FieldConfig::default()
    }
}

fn small_trainer(seed: u64, warmup: usize, consistency: usize) -> Trainer {
    let preset = presets::desk().unwrap();
    let scene = preset.spec.scene_graph().unwrap();
    let data = TrainingSet::render(&preset.spec, &preset.camera).unwrap();
    let config = TrainConfig {
        batch_rays: 24,
        warmup_steps: warmup,
        consistency_steps: consistency,
        learning_rate: 1e-3,
        seed,
        ..TrainConfig::default()
    };
    Trainer::new(scene, data, small_fields(), config, SamplingConfig::default()).unwrap()
}

fn batch(trainer: &Trainer, seed: u64) -> RayBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = &trainer.data.camera;
    // Rays through the middle of the view cross objects and every plane.
    let pixels: Vec<_> = (0..32)
        .map(|_| {
            (
                rng.gen_range(0..trainer.scene.frame_count),
                rng.gen_range(cam.width / 4..3 * cam.width / 4),
                rng.gen_range(cam.height / 4..3 * cam.height / 4),
            )
        })
        .collect();
    RayBatch::build(&trainer.scene, &trainer.data, &trainer.sampling, &pixels).unwrap()
}

fn loss(trainer: &Trainer, batch: &RayBatch) -> f64 {
    let mut tape = Tape::new();
    let (obj, _, _) = trainer.record(&mut tape, batch, Phase::Consistency).unwrap();
    tape.value(obj.total).item()
}

#[test]
fn consistency_loss_gradient_matches_finite_differences() {
    let mut trainer = small_trainer(5, 2, 6);
    while !trainer.is_done() {
        trainer.step().unwrap();
    }
    // Fill every bin the probe batch touches so the mixed term is live.
    let probe = batch(&trainer, 99);
    trainer.step_on(&probe).unwrap();

    let mut tape = Tape::new();
    let (obj, _, _) = trainer.record(&mut tape, &probe, Phase::Consistency).unwrap();
    let terms = obj.terms(&tape);
    assert!(terms.mixed > 0.0 && terms.score_reg > 0.0 && terms.latent_prior > 0.0);
    assert_ne!(terms.mixed, terms.photometric);
    let grads = tape.backward_scalar(obj.total).unwrap();
    let mut store = trainer.model.store.clone();
    store.zero_grad();
    grads.accumulate_into(&tape, &mut store);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let h = 1e-6;
    let mut checked = 0;
    for _ in 0..24 {
        let id = ids[rng.gen_range(0..ids.len())];
        let j = rng.gen_range(0..store.value(id).len());
        let analytic = store.grad(id).as_slice()[j];
        let orig = trainer.model.store.value(id).as_slice()[j];
        trainer.model.store.value_mut(id).as_mut_slice()[j] = orig + h;
        let plus = loss(&trainer, &probe);
        trainer.model.store.value_mut(id).as_mut_slice()[j] = orig - h;
        let minus = loss(&trainer, &probe);
        trainer.model.store.value_mut(id).as_mut_slice()[j] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic, numeric);
        assert!(err <= 1e-3, "{}[{j}]: analytic {analytic:e} numeric {numeric:e}", store.get(id).name());
        checked += 1;
    }
    assert_eq!(checked, 24);
}

#[test]
fn latent_prior_quadruples_when_latents_double() {
    let mut trainer = small_trainer(1, 1, 0);
    let probe = batch(&trainer, 3);
    let prior = |t: &Trainer| {
        let mut tape = Tape::new();
        let (obj, _, _) = t.record(&mut tape, &probe, Phase::Warmup).unwrap();
        obj.terms(&tape).latent_prior
    };
    let before = prior(&trainer);
    let ids: Vec<_> = trainer.model.latents().collect();
    for id in ids {
        trainer.model.store.value_mut(id).as_mut_slice().iter_mut().for_each(|v| *v *= 2.0);
    }
    let after = prior(&trainer);
    assert!(before > 0.0);
    assert!((after / before - 4.0).abs() < 1e-12);
}

#[test]
fn identical_seeds_give_identical_traces_and_renders() {
    let run = || {
        let mut t = small_trainer(9, 6, 6);
        t.run(|_, _| {}).unwrap();
        let ctx = RenderContext {
            model: &t.model,
            scene: &t.scene,
            camera: &t.data.camera,
            sampling: t.sampling,
            reuse: ReuseConfig::default(),
        };
        let (img, _) = render_image(&ctx, 4, RenderMode::Baseline).unwrap();
        let trace: Vec<u64> = t.trace().iter().map(|r| r.terms.total.to_bits()).collect();
        let pixels: Vec<u64> = img.pixels().iter().flat_map(|p| p.map(f64::to_bits)).collect();
        (trace, pixels)
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.len(), 12);
    assert_eq!(a, b);
}

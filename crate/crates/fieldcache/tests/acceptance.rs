//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Trains the desk scene with the default configuration and the translucent
//! slab scene with a shorter schedule, so a full run takes several minutes.

use std::time::Instant;

use anyhow::Result;
use fieldcache::experiment::{self, Dataset, TrainedRun};
use fieldcache::redundancy::{analyze_redundancy, build_history, default_eps_grid};
use fieldcache_core::autodiff::check::{random_instances, relative_error, DEFAULT_STEP};
use fieldcache_core::cache::{bin_index, BinIndex, BinStore, CacheSet, Strategy};
use fieldcache_core::fields::{Component, FieldConfig, SceneModel};
use fieldcache_core::math::Vec3;
use fieldcache_core::presets;
use fieldcache_core::render::composite::riemann_composite;
use fieldcache_core::render::{composite, render_image, RenderMode, SamplingConfig};
use fieldcache_core::reuse::{
    blend_outputs, grad_norm_finite_difference, grad_norms_wrt_transients, reuse_output, select_path, PathDecision,
    ReuseConfig, SkipRule,
};
use fieldcache_core::train::{frame_queries, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Report {
    passed: usize,
    failed: Vec<u8>,
}

impl Report {
    fn line(&mut self, id: u8, pass: bool, detail: impl AsRef<str>) {
        println!("criterion {id:>2}: {}  {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id);
        }
    }
}

fn gradients(r: &mut Report) -> Result<()> {
    let start = Instant::now();
    let instances = random_instances(100, 1)?;
    let mut worst = 0.0f64;
    for inst in &instances {
        worst = worst.max(inst.check(DEFAULT_STEP)?.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    r.line(
        1,
        worst <= 1e-4 && secs < 60.0,
        format!("100 instances, max relative error {worst:.2e} (≤ 1e-4), {secs:.1} s (< 60 s)"),
    );
    Ok(())
}

fn compositing(r: &mut Report) {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=8);
        let ray: Vec<([f64; 3], f64, f64)> = (0..n)
            .map(|_| ([rng.gen(), rng.gen(), rng.gen()], rng.gen_range(0.0..3.0), rng.gen_range(0.01..1.0)))
            .collect();
        let (a, b) = (composite(&ray), riemann_composite(&ray, 10_000));
        for k in 0..3 {
            worst = worst.max((a[k] - b[k]).abs());
        }
    }
    let c = [0.2, 0.4, 0.9];
    let opaque = composite(&[(c, 1e6, 1.0), ([1.0; 3], 2.0, 1.0)]) == c;
    let empty = composite(&[([0.5; 3], 0.0, 1.0), ([0.9; 3], 0.0, 3.0)]) == [0.0; 3];
    let secs = start.elapsed().as_secs_f64();
    r.line(
        2,
        worst <= 1e-6 && opaque && empty && secs < 30.0,
        format!("100 rays, max |Δ| vs Riemann {worst:.2e} (≤ 1e-6); opaque exact {opaque}; empty exact {empty}; {secs:.2} s"),
    );
}

fn blending(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut exact = true;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let reuse: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
        let full: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
        exact &= blend_outputs(0.0, reuse, full) == full && blend_outputs(1.0, reuse, full) == reuse;
        let (s, t, a) = (rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
        let mix = blend_outputs(a * s + (1.0 - a) * t, reuse, full);
        let (bs, bt) = (blend_outputs(s, reuse, full), blend_outputs(t, reuse, full));
        for i in 0..4 {
            worst = worst.max((mix[i] - (a * bs[i] + (1.0 - a) * bt[i])).abs());
        }
    }
    r.line(
        3,
        exact && worst <= 1e-12,
        format!("endpoints exact {exact}; affinity max deviation {worst:.1e} (≤ 1e-12)"),
    );
}

fn truth_table(r: &mut Report) -> Result<()> {
    let config = ReuseConfig::default();
    let mut store = BinStore::new(Strategy::LowRank { rank: 4 }, 100)?;
    let cases = [
        (0.6, 0.1, PathDecision::Skip),
        (0.6, 1.5, PathDecision::Reuse),
        (0.4, 0.1, PathDecision::Full),
        (0.4, 1.5, PathDecision::Full),
    ];
    let mut ok = config.tau == 0.5 && config.tau_sigma == 0.9;
    let mut got = Vec::new();
    for (k, &(s, sigma, want)) in cases.iter().enumerate() {
        let idx = BinIndex::Cell([k as u16, 0, 0]);
        store.update_f64(idx, &[0.0; 16], sigma, s)?;
        let d = select_path(&store, &idx, &config);
        ok &= d == want;
        got.push(format!("(s={s}, σ={sigma})→{d:?}"));
    }
    r.line(4, ok, got.join(", "));
    Ok(())
}

fn memory(r: &mut Report) -> Result<()> {
    let (low, direct) = (Strategy::LowRank { rank: 4 }, Strategy::Feature { len: 256 });
    let feature_saving = 1.0 - low.feature_len() as f64 / direct.feature_len() as f64;
    let n = 100_000;
    let mut a = BinStore::new(low, 100)?;
    let mut b = BinStore::new(direct, 100)?;
    for i in 0..n {
        let idx = BinIndex::Cell([(i % 100) as u16, (i / 100 % 100) as u16, (i / 10_000) as u16]);
        a.update_f64(idx, &[0.1; 16], 1.0, 0.5)?;
        b.update_f64(idx, &[0.1; 256], 1.0, 0.5)?;
    }
    let ok = low.feature_len() == 16
        && direct.feature_len() == 256
        && feature_saving == 0.9375
        && a.len() == n
        && a.memory_usage() == n * 18 * 4
        && b.memory_usage() == n * 258 * 4
        && 1.0 - a.memory_usage() as f64 / b.memory_usage() as f64 >= 0.93;
    r.line(
        5,
        ok,
        format!(
            "feature scalars 16 vs 256 → {:.2}% saved; at 10⁵ entries {} vs {} bytes",
            feature_saving * 100.0,
            a.memory_usage(),
            b.memory_usage()
        ),
    );
    Ok(())
}

fn determinism(r: &mut Report, data: &Dataset) -> Result<()> {
    let run = || -> Result<(Vec<u64>, Vec<u64>)> {
        let config = TrainConfig::default();
        let mut t = Trainer::new(
            data.scene.clone(),
            data.training_set(),
            FieldConfig::default(),
            config,
            SamplingConfig::default(),
        )?;
        let mut trace = Vec::new();
        for _ in 0..100 {
            trace.push(t.step()?.terms.total.to_bits());
        }
        let ctx = experiment::context(data, &t.model, t.sampling, ReuseConfig::default());
        let (img, _) = render_image(&ctx, 0, RenderMode::Baseline)?;
        Ok((trace, img.pixels().iter().flat_map(|p| p.map(f64::to_bits)).collect()))
    };
    let (a, b) = (run()?, run()?);
    r.line(
        10,
        a == b,
        format!("loss traces (100 steps) identical {}; baseline renders identical {}", a.0 == b.0, a.1 == b.1),
    );
    Ok(())
}

fn frozen_reuse(r: &mut Report, data: &Dataset, run: &TrainedRun) -> Result<()> {
    let model = &run.model;
    let config = *model.config();
    let queries = frame_queries(&data.scene, &data.preset.camera, &SamplingConfig::default(), 7)?;
    let mut stores = CacheSet::for_model(&config, data.scene.objects.len(), 100, false)?;
    let samples = model.evaluate(&queries)?;
    let mut moved = queries.clone();
    for q in &mut moved {
        q.direction = (q.direction + Vec3::new(0.04, 0.02, 0.0)).normalized().expect("non-zero direction");
        if let Component::Object(_) = q.component {
            q.location = q.location + Vec3::new(0.2, 0.1, -0.1);
        }
    }
    let full = model.evaluate(&moved)?;
    let mut worst = 0.0f64;
    for (i, q) in queries.iter().enumerate() {
        let idx = bin_index(q, 100)?;
        stores
            .store_mut(q.component)
            .update_f64(idx, &samples[i].feature, samples[i].sigma, samples[i].score)?;
        let store = stores.store(q.component);
        let w = reuse_output(model, store.strategy(), &moved[i], store.get(&idx).expect("just written"))?;
        for k in 0..3 {
            worst = worst.max((w[k] - full[i].rgb[k]).abs());
        }
    }
    r.line(
        9,
        worst <= 1e-3,
        format!("{} queries, max per-channel |rgb_reuse − rgb_full| {worst:.2e} (≤ 1e-3)", queries.len()),
    );
    Ok(())
}

fn grad_norm_check(data: &Dataset, model: &SceneModel) -> Result<(bool, String)> {
    let queries = frame_queries(&data.scene, &data.preset.camera, &SamplingConfig::default(), 12)?;
    let picked: Vec<_> = queries.into_iter().step_by(101).collect();
    let analytic = grad_norms_wrt_transients(model, &picked)?;
    let (mut worst, mut compared) = (0.0f64, 0);
    for (q, &g) in picked.iter().zip(&analytic) {
        if let Some(fd) = grad_norm_finite_difference(model, q, 2e-6)? {
            worst = worst.max(relative_error(g, fd));
            compared += 1;
        }
    }
    let ok = worst <= 1e-3 && compared * 10 >= picked.len() * 9;
    Ok((ok, format!("∂ vs finite differences on {compared}/{} queries, max relative error {worst:.1e}", picked.len())))
}

fn main() -> Result<()> {
    let mut r = Report {
        passed: 0,
        failed: Vec::new(),
    };
    gradients(&mut r)?;
    compositing(&mut r);
    blending(&mut r);
    truth_table(&mut r)?;
    memory(&mut r)?;

    let desk = Dataset::new(presets::desk()?)?;
    determinism(&mut r, &desk)?;

    let sampling = SamplingConfig::default();
    let start = Instant::now();
    let run = experiment::train(&desk, FieldConfig::default(), TrainConfig::default(), sampling, |t, rec| {
        if (rec.step + 1) % 1000 == 0 {
            eprintln!(
                "desk step {} / {}: loss {:.4}",
                rec.step + 1,
                t.config.total_steps(),
                rec.terms.total
            );
        }
    })?;
    let frames = desk.frames.len();
    let ctx = experiment::context(&desk, &run.model, sampling, ReuseConfig::default());
    let full = experiment::evaluate(&ctx, frames, RenderMode::Baseline)?;
    let cf = experiment::evaluate(&ctx, frames, RenderMode::CfInference(&run.stores))?;
    let secs = start.elapsed().as_secs_f64();
    let base_psnr = full.psnr_against(&desk.frames)?;
    let cf_psnr = cf.psnr_against(&desk.frames)?;
    let full_fraction = cf.counters.full_fraction();
    r.line(
        6,
        base_psnr >= 25.0 && full_fraction <= 0.6 && base_psnr - cf_psnr <= 1.5,
        format!(
            "(a) baseline PSNR {base_psnr:.2} dB (≥ 25); (b) full-path fraction {full_fraction:.3} (≤ 0.60), \
             reuse {} skip {} of {}, PSNR drop {:.3} dB (≤ 1.5); train+render {:.1} min (target < 30)",
            cf.counters.reuse,
            cf.counters.skip,
            cf.counters.total,
            base_psnr - cf_psnr,
            secs / 60.0
        ),
    );

    let tracked = experiment::touched_bins(&desk, &sampling, run.stores.bins())?;
    let history = build_history(&run.model, &desk.scene, &desk.preset.camera, &tracked, run.stores.bins())?;
    let eps = default_eps_grid();
    let ratios = analyze_redundancy(&history, &eps);
    let monotone = ratios.windows(2).all(|w| w[0] <= w[1]);
    let at_one = eps.iter().zip(&ratios).find(|(e, _)| **e == 1.0).map(|(_, r)| *r);
    let best_small = eps
        .iter()
        .zip(&ratios)
        .filter(|(e, _)| **e <= 0.2)
        .map(|(_, r)| *r)
        .fold(0.0, f64::max);
    r.line(
        8,
        monotone && at_one == Some(1.0) && best_small >= 0.5,
        format!(
            "{} events; monotone {monotone}; ratio(1.0) = {:?}; max ratio at ε ≤ 0.2 is {best_small:.3} (≥ 0.5)",
            history.events(),
            at_one
        ),
    );

    frozen_reuse(&mut r, &desk, &run)?;

    let (fd_ok, fd_detail) = grad_norm_check(&desk, &run.model)?;
    let naive = experiment::naive_stores(&desk, &run.model, &sampling, run.stores.bins())?;
    // Naive routing has no skip path, so the matched comparison disables
    // skipping: every query with s > τ reuses.
    let reuse_only = ReuseConfig {
        tau_sigma: 0.0,
        ..ReuseConfig::default()
    };
    let ctx_reuse = experiment::context(&desk, &run.model, sampling, reuse_only);
    let scored = experiment::evaluate(&ctx_reuse, frames, RenderMode::CfInference(&run.stores))?;
    let scored_psnr = scored.psnr_against(&desk.frames)?;
    let (tau_grad, nv) = experiment::matched_naive(&ctx_reuse, &naive, &scored)?;
    let naive_psnr = nv.psnr_against(&desk.frames)?;
    let (_, nv_skip) = experiment::matched_naive(&ctx, &naive, &cf)?;
    let naive_skip_psnr = nv_skip.psnr_against(&desk.frames)?;
    r.line(
        11,
        fd_ok && scored.counters.reuse == nv.counters.reuse && scored_psnr >= naive_psnr,
        format!(
            "{fd_detail}; reused queries score {} vs naive {} (τ_∂ = {tau_grad:.3e}), PSNR score {scored_psnr:.3} vs naive \
             {naive_psnr:.3}; with default skipping {cf_psnr:.3} vs naive {naive_skip_psnr:.3} at {} off-full queries",
            scored.counters.reuse,
            nv.counters.reuse,
            cf.counters.total - cf.counters.full
        ),
    );

    let slab = Dataset::new(presets::translucent_slab()?)?;
    let config = TrainConfig {
        warmup_steps: 2000,
        consistency_steps: 1000,
        ..TrainConfig::default()
    };
    let run = experiment::train(&slab, FieldConfig::default(), config, sampling, |t, rec| {
        if (rec.step + 1) % 1000 == 0 {
            eprintln!("slab step {} / {}", rec.step + 1, t.config.total_steps());
        }
    })?;
    let frames = slab.frames.len();
    let routed = |rule: SkipRule| -> Result<experiment::Evaluation> {
        let reuse = ReuseConfig {
            skip_rule: rule,
            allow_reuse: false,
            ..ReuseConfig::default()
        };
        let ctx = experiment::context(&slab, &run.model, sampling, reuse);
        experiment::evaluate(&ctx, frames, RenderMode::CfInference(&run.stores))
    };
    let ctx = experiment::context(&slab, &run.model, sampling, ReuseConfig::default());
    let full = experiment::evaluate(&ctx, frames, RenderMode::Baseline)?;
    let both = routed(SkipRule::ScoreAndDensity)?;
    let density = routed(SkipRule::DensityOnly)?;
    let sb = experiment::skip_ablation_stats(&slab, &full, &both)?;
    let sd = experiment::skip_ablation_stats(&slab, &full, &density)?;
    r.line(
        7,
        sb.empty_max <= 1e-3 && sd.object_mean > sb.object_mean,
        format!(
            "score+density: empty-region max error {:.2e} (≤ 1e-3), slab mean error {:.3e}, skips {}; \
             density-only: slab mean error {:.3e}, skips {}",
            sb.empty_max, sb.object_mean, both.counters.skip, sd.object_mean, density.counters.skip
        ),
    );

    println!(
        "acceptance: {} passed, {} failed{}",
        r.passed,
        r.failed.len(),
        if r.failed.is_empty() {
            String::new()
        } else {
            format!(" ({:?})", r.failed)
        }
    );
    Ok(())
}

//! End-to-end drivers shared by the CLI and the acceptance suite.

use anyhow::{ensure, Result};
use fieldcache_core::cache::{bin_index, CacheSet};
use fieldcache_core::fields::{Component, FieldConfig, SceneModel};
use fieldcache_core::presets::Preset;
use fieldcache_core::render::{render_image, Image, RenderContext, RenderMode, RenderOutput, SamplingConfig};
use fieldcache_core::reuse::{PathCounters, ReuseConfig};
use fieldcache_core::scene::SceneGraph;
use fieldcache_core::train::{bake_naive_stores, LossRecord, TrainConfig, Trainer, TrainingSet};

use crate::cost::{count_cost, counters_by_network, Cost};
use crate::metrics::{mean_psnr, psnr};

/// A preset with its scene graph and ground-truth frames.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub preset: Preset,
    pub scene: SceneGraph,
    pub frames: Vec<Image>,
}

impl Dataset {
    pub fn new(preset: Preset) -> Result<Self> {
        let scene = preset.spec.scene_graph()?;
        let frames = TrainingSet::render(&preset.spec, &preset.camera)?.frames;
        Ok(Self { preset, scene, frames })
    }

    pub fn training_set(&self) -> TrainingSet {
        TrainingSet {
            camera: self.preset.camera.clone(),
            frames: self.frames.clone(),
        }
    }
}

/// A trained model with baked stores and its loss trace.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub model: SceneModel,
    pub stores: CacheSet,
    pub trace: Vec<LossRecord>,
}

/// Trains, then bakes the stores with the final parameters.
pub fn train(
    data: &Dataset,
    fields: FieldConfig,
    config: TrainConfig,
    sampling: SamplingConfig,
    mut on_step: impl FnMut(&Trainer, &LossRecord),
) -> Result<TrainedRun> {
    let mut trainer = Trainer::new(data.scene.clone(), data.training_set(), fields, config, sampling)?;
    trainer.run(|t, r| on_step(t, r))?;
    trainer.bake()?;
    let (model, stores, trace) = trainer.into_parts();
    Ok(TrainedRun { model, stores, trace })
}

/// Rendered frames under one routing mode.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub images: Vec<Image>,
    pub outputs: Vec<RenderOutput>,
    pub counters: PathCounters,
}

impl Evaluation {
    pub fn psnr_against(&self, reference: &[Image]) -> Result<f64> {
        Ok(mean_psnr(&self.images, reference)?)
    }

    pub fn per_frame_psnr(&self, reference: &[Image]) -> Result<Vec<f64>> {
        self.images
            .iter()
            .zip(reference)
            .map(|(a, b)| Ok(psnr(a, b)?))
            .collect()
    }

    pub fn cost(&self, model: &SceneModel, baseline_total: usize) -> Result<Cost> {
        let records: Vec<_> = self.outputs.iter().flat_map(|o| o.records.iter().copied()).collect();
        Ok(count_cost(model, &counters_by_network(model, &records)?, baseline_total))
    }
}

pub fn context<'a>(data: &'a Dataset, model: &'a SceneModel, sampling: SamplingConfig, reuse: ReuseConfig) -> RenderContext<'a> {
    RenderContext {
        model,
        scene: &data.scene,
        camera: &data.preset.camera,
        sampling,
        reuse,
    }
}

pub fn evaluate(ctx: &RenderContext<'_>, frames: usize, mode: RenderMode<'_>) -> Result<Evaluation> {
    let mut images = Vec::with_capacity(frames);
    let mut outputs = Vec::with_capacity(frames);
    let mut counters = PathCounters::default();
    for f in 0..frames {
        let (img, out) = render_image(ctx, f, mode)?;
        counters.merge(&out.counters);
        images.push(img);
        outputs.push(out);
    }
    Ok(Evaluation {
        images,
        outputs,
        counters,
    })
}

/// Naive stores filled from the frozen model over every training view.
pub fn naive_stores(data: &Dataset, model: &SceneModel, sampling: &SamplingConfig, bins: usize) -> Result<CacheSet> {
    Ok(bake_naive_stores(model, &data.scene, &data.preset.camera, sampling, bins)?)
}

/// The gradient-norm threshold at which naive routing sends `target`
/// queries (out of the given records' queries) off the full path.
pub fn naive_threshold_for(naive: &CacheSet, records: impl IntoIterator<Item = (Component, fieldcache_core::cache::BinIndex)>, target: usize) -> f64 {
    let mut norms: Vec<f64> = records
        .into_iter()
        .filter_map(|(c, b)| naive.store(c).get(&b).map(|p| p.score as f64))
        .collect();
    norms.sort_by(f64::total_cmp);
    if target == 0 || norms.is_empty() {
        return 0.0;
    }
    if target >= norms.len() {
        return f64::INFINITY;
    }
    // Reuse needs norm < threshold: take the midpoint between the
    // target-th and (target+1)-th smallest.
    let (a, b) = (norms[target - 1], norms[target]);
    if a < b {
        0.5 * (a + b)
    } else {
        // Ties: the strict cut below `b` reuses as many as possible without
        // exceeding the target.
        b
    }
}

/// Naive routing with `τ_∂` chosen so that it leaves the full path for as
/// many queries as `cf` did. Returns the threshold and the evaluation.
pub fn matched_naive(ctx: &RenderContext<'_>, naive: &CacheSet, cf: &Evaluation) -> Result<(f64, Evaluation)> {
    let target = cf.counters.total - cf.counters.full;
    let records = cf.outputs.iter().flat_map(|o| o.records.iter().map(|r| (r.component, r.bin)));
    let tau_grad = naive_threshold_for(naive, records, target);
    let ctx = RenderContext {
        reuse: ReuseConfig { tau_grad, ..ctx.reuse },
        ..*ctx
    };
    let ev = evaluate(&ctx, cf.images.len(), RenderMode::Naive(naive))?;
    Ok((tau_grad, ev))
}

/// One row of a threshold sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchRow {
    pub tau: f64,
    pub tau_sigma: f64,
    pub psnr: f64,
    pub psnr_vs_full: f64,
    pub counters: PathCounters,
    pub query_ratio: f64,
    pub flops_per_frame: f64,
}

pub const BENCH_HEADER: &str = "tau,tau_sigma,psnr,psnr_vs_full,total,full,reuse,skip,full_fraction,query_ratio,flops_per_frame";

impl BenchRow {
    pub fn csv_line(&self) -> String {
        let c = &self.counters;
        format!(
            "{},{},{:.4},{:.4},{},{},{},{},{:.6},{:.6},{:.6e}",
            self.tau,
            self.tau_sigma,
            self.psnr,
            self.psnr_vs_full,
            c.total,
            c.full,
            c.reuse,
            c.skip,
            c.full_fraction(),
            self.query_ratio,
            self.flops_per_frame
        )
    }
}

/// Sweeps `τ`, rendering every frame with the stores in `run`.
pub fn bench(data: &Dataset, run: &TrainedRun, sampling: SamplingConfig, base: ReuseConfig, taus: &[f64]) -> Result<Vec<BenchRow>> {
    let frames = data.frames.len();
    let full = evaluate(&context(data, &run.model, sampling, base), frames, RenderMode::Baseline)?;
    let mut rows = Vec::new();
    for &tau in taus {
        let reuse = ReuseConfig { tau, ..base };
        reuse.validate().map_err(anyhow::Error::msg)?;
        let ev = evaluate(&context(data, &run.model, sampling, reuse), frames, RenderMode::CfInference(&run.stores))?;
        let cost = ev.cost(&run.model, full.counters.total)?;
        rows.push(BenchRow {
            tau,
            tau_sigma: reuse.tau_sigma,
            psnr: ev.psnr_against(&data.frames)?,
            psnr_vs_full: ev.psnr_against(&full.images)?,
            counters: ev.counters,
            query_ratio: cost.query_ratio,
            flops_per_frame: cost.flops / frames.max(1) as f64,
        });
    }
    Ok(rows)
}

/// Per-pixel mask of rays that cross any object's bounding box at `frame`.
pub fn object_mask(data: &Dataset, frame: usize) -> Result<Vec<bool>> {
    ensure!(frame < data.frames.len(), "frame {frame} out of range");
    let cam = &data.preset.camera;
    let mut mask = Vec::with_capacity(cam.width * cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let ray = fieldcache_core::render::generate_ray(cam, x, y, frame);
            mask.push(data.scene.objects.iter().any(|o| {
                fieldcache_core::scene::ray_box_intersect(ray.origin, ray.direction, &o.poses[frame]).is_some()
            }));
        }
    }
    Ok(mask)
}

/// Max and mean absolute per-channel difference over masked pixels.
pub fn masked_error(a: &Image, b: &Image, mask: &[bool]) -> (f64, f64) {
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, q), &m) in a.pixels().iter().zip(b.pixels()).zip(mask) {
        if m {
            for k in 0..3 {
                let d = (p[k] - q[k]).abs();
                max = max.max(d);
                sum += d;
                n += 1;
            }
        }
    }
    (max, if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Every (component, bin) a baseline pass touches, in first-seen order.
pub fn touched_bins(data: &Dataset, sampling: &SamplingConfig, bins: usize) -> Result<Vec<(Component, fieldcache_core::cache::BinIndex)>> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    let cam = &data.preset.camera;
    for f in 0..data.frames.len() {
        for y in 0..cam.height {
            for x in 0..cam.width {
                let ray = fieldcache_core::render::generate_ray(cam, x, y, f);
                for s in fieldcache_core::render::sample_ray(&ray, &data.scene, sampling)? {
                    let b = bin_index(&s.query, bins)?;
                    if seen.insert((s.query.component, b)) {
                        out.push((s.query.component, b));
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Pixel errors of a routed render against the all-full render, split by
/// whether the ray crosses an object box.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RegionErrors {
    pub object_max: f64,
    pub object_mean: f64,
    pub empty_max: f64,
    pub empty_mean: f64,
}

pub fn skip_ablation_stats(data: &Dataset, full: &Evaluation, routed: &Evaluation) -> Result<RegionErrors> {
    let mut e = RegionErrors::default();
    let (mut on, mut off) = (0usize, 0usize);
    for f in 0..data.frames.len() {
        let mask = object_mask(data, f)?;
        let inv: Vec<bool> = mask.iter().map(|m| !m).collect();
        let (a, b) = masked_error(&routed.images[f], &full.images[f], &mask);
        let (c, d) = masked_error(&routed.images[f], &full.images[f], &inv);
        let (n_on, n_off) = (mask.iter().filter(|m| **m).count(), inv.iter().filter(|m| **m).count());
        e.object_max = e.object_max.max(a);
        e.object_mean += b * n_on as f64;
        e.empty_max = e.empty_max.max(c);
        e.empty_mean += d * n_off as f64;
        on += n_on;
        off += n_off;
    }
    e.object_mean /= on.max(1) as f64;
    e.empty_mean /= off.max(1) as f64;
    Ok(e)
}

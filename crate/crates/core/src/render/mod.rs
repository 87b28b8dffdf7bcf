//! Ray generation, scene-graph sampling and image rendering in each routing mode.

pub mod composite;

use alloc::vec;
use alloc::vec::Vec;

pub use composite::{composite, composite_weights, residual_transmittance};

use crate::cache::{bin_index, BinIndex, CacheSet, Strategy};
use crate::fields::{Component, FieldError, Query, SceneModel};
use crate::math::Vec3;
use crate::reuse::{blend_outputs, naive_route, omega, route, PathCounters, PathDecision, ReuseConfig, ReuseError};
use crate::scene::{ray_box_intersect, Camera, SceneError, SceneGraph};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Reuse(#[from] ReuseError),
    #[error("pixel ({0}, {1}) outside the image")]
    PixelOutOfRange(usize, usize),
}

impl From<FieldError> for RenderError {
    fn from(e: FieldError) -> Self {
        RenderError::Reuse(ReuseError::Field(e))
    }
}

impl From<crate::cache::CacheError> for RenderError {
    fn from(e: crate::cache::CacheError) -> Self {
        RenderError::Reuse(ReuseError::Cache(e))
    }
}

/// Row-major RGB image with linear values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// `pixels` in row-major order; `None` if the count does not match.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Option<Self> {
        (pixels.len() == width * height).then_some(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub pixel: (usize, usize),
    pub frame: usize,
}

/// Pinhole ray through the centre of pixel `(px, py)`; image rows run
/// downward, so `+y` in camera space is up.
pub fn generate_ray(camera: &Camera, px: usize, py: usize, frame: usize) -> Ray {
    debug_assert!(px < camera.width && py < camera.height, "pixel outside image");
    let pose = camera.pose(frame);
    let u = (px as f64 + 0.5 - camera.principal.0) / camera.focal;
    let v = -(py as f64 + 0.5 - camera.principal.1) / camera.focal;
    let d = pose
        .rotation
        .mul_vec(Vec3::new(u, v, 1.0))
        .normalized()
        .expect("camera ray has non-zero length");
    Ray {
        origin: pose.position,
        direction: d,
        pixel: (px, py),
        frame,
    }
}

/// Checked variant of [`generate_ray`].
pub fn generate_ray_at(camera: &Camera, px: usize, py: usize, frame: usize) -> Result<Ray, RenderError> {
    if px >= camera.width || py >= camera.height {
        return Err(RenderError::PixelOutOfRange(px, py));
    }
    Ok(generate_ray(camera, px, py, frame))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingConfig {
    /// Equispaced samples per intersected object box.
    pub box_samples: usize,
    /// Ray parameter closing the last interval; where the ray leaves the
    /// world bounds when `None`.
    pub far_cap: Option<f64>,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            box_samples: 7,
            far_cap: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    /// Distance to the next sample (or to the far cap for the last one).
    pub delta: f64,
    pub query: Query,
}

/// Plane intersections inside the world bounds plus `K` midpoint samples in
/// each object box hit at `ray.frame`, merged by `t` with forward-difference `δ`.
pub fn sample_ray(ray: &Ray, scene: &SceneGraph, config: &SamplingConfig) -> Result<Vec<SamplePoint>, RenderError> {
    scene.check_frame(ray.frame)?;
    let (o, d) = (ray.origin, ray.direction);
    let mut out = Vec::new();
    let n = scene.planes.normal();
    let dn = d.dot(n);
    if dn.abs() >= 1e-12 {
        let on = o.dot(n);
        for (k, &off) in scene.planes.offsets().iter().enumerate() {
            let t = (off - on) / dn;
            if t < 0.0 {
                continue;
            }
            let x = o + d * t;
            if !scene.bounds.contains(x) {
                continue;
            }
            out.push(SamplePoint {
                t,
                delta: 0.0,
                query: Query {
                    component: Component::Plane(k),
                    position: scene.bounds.normalize(x),
                    direction: d,
                    location: Vec3::ZERO,
                    frame: ray.frame,
                },
            });
        }
    }
    let k = config.box_samples;
    for (i, obj) in scene.objects.iter().enumerate() {
        let pose = &obj.poses[ray.frame];
        let Some((t0, t1)) = ray_box_intersect(o, d, pose) else {
            continue;
        };
        let d_o = pose.global_to_canonical(o, d)?.1;
        for j in 0..k {
            let t = t0 + (j as f64 + 0.5) / k as f64 * (t1 - t0);
            let x_o = pose.point_to_canonical(o + d * t);
            out.push(SamplePoint {
                t,
                delta: 0.0,
                query: Query {
                    component: Component::Object(i),
                    position: clamp_unit(x_o),
                    direction: d_o,
                    location: pose.translation(),
                    frame: ray.frame,
                },
            });
        }
    }
    out.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.query.component.cmp(&b.query.component)));
    let far = config
        .far_cap
        .or_else(|| scene.bounds.exit_distance(o, d))
        .unwrap_or_else(|| scene.bounds.diagonal());
    for i in 0..out.len() {
        let next = out.get(i + 1).map_or(far, |s| s.t);
        out[i].delta = (next - out[i].t).max(0.0);
    }
    Ok(out)
}

fn clamp_unit(v: Vec3) -> Vec3 {
    Vec3::new(v.x.clamp(-1.0, 1.0), v.y.clamp(-1.0, 1.0), v.z.clamp(-1.0, 1.0))
}

/// How each query is resolved.
#[derive(Clone, Copy, Debug)]
pub enum RenderMode<'a> {
    /// Every query runs the full forward pass.
    Baseline,
    /// Skip / reuse / full routing on consistency-field stores.
    CfInference(&'a CacheSet),
    /// Gradient-norm routing on naive rgb stores.
    Naive(&'a CacheSet),
    /// The training-time blend `s·ω_reuse + (1 − s)·ω_full` wherever a bin exists.
    MixedTrain(&'a CacheSet),
}

/// Everything fixed across the frames of one render job.
#[derive(Clone, Copy, Debug)]
pub struct RenderContext<'a> {
    pub model: &'a SceneModel,
    pub scene: &'a SceneGraph,
    pub camera: &'a Camera,
    pub sampling: SamplingConfig,
    pub reuse: ReuseConfig,
}

/// One routed query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryRecord {
    /// Position in the requested pixel list.
    pub ray: usize,
    pub component: Component,
    pub bin: BinIndex,
    pub decision: PathDecision,
    pub rgb: [f64; 3],
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub colors: Vec<[f64; 3]>,
    pub counters: PathCounters,
    pub records: Vec<QueryRecord>,
}

/// Render the listed pixels of `frame`. Each pixel depends only on its own
/// samples, so the result for a pixel does not depend on the list.
pub fn render_pixels(
    ctx: &RenderContext<'_>,
    frame: usize,
    pixels: &[(usize, usize)],
    mode: RenderMode<'_>,
) -> Result<RenderOutput, RenderError> {
    let mut samples = Vec::new();
    let mut offsets = vec![0];
    let mut owner = Vec::new();
    for (r, &(px, py)) in pixels.iter().enumerate() {
        let ray = generate_ray_at(ctx.camera, px, py, frame)?;
        let s = sample_ray(&ray, ctx.scene, &ctx.sampling)?;
        owner.extend(core::iter::repeat(r).take(s.len()));
        samples.extend(s);
        offsets.push(samples.len());
    }
    let queries: Vec<Query> = samples.iter().map(|s| s.query).collect();
    let bins = match mode {
        RenderMode::Baseline => crate::cache::DEFAULT_BINS,
        RenderMode::CfInference(c) | RenderMode::Naive(c) | RenderMode::MixedTrain(c) => c.bins(),
    };
    let idx: Vec<BinIndex> = queries.iter().map(|q| bin_index(q, bins)).collect::<Result<_, _>>()?;

    let decisions: Vec<PathDecision> = match mode {
        RenderMode::Baseline | RenderMode::MixedTrain(_) => vec![PathDecision::Full; queries.len()],
        RenderMode::CfInference(c) => queries
            .iter()
            .zip(&idx)
            .map(|(q, i)| route(c.store(q.component).get(i), &ctx.reuse))
            .collect(),
        RenderMode::Naive(c) => queries
            .iter()
            .zip(&idx)
            .map(|(q, i)| naive_route(c.store(q.component).get(i), &ctx.reuse))
            .collect(),
    };

    let mut omegas = vec![[0.0; 4]; queries.len()];
    let full_rows: Vec<usize> = (0..queries.len()).filter(|&i| decisions[i] == PathDecision::Full).collect();
    let full_q: Vec<Query> = full_rows.iter().map(|&i| queries[i]).collect();
    let full = ctx.model.evaluate(&full_q)?;
    for (&i, s) in full_rows.iter().zip(&full) {
        omegas[i] = omega(s.rgb, s.sigma);
    }

    let cache = match mode {
        RenderMode::Baseline => None,
        RenderMode::CfInference(c) | RenderMode::Naive(c) | RenderMode::MixedTrain(c) => Some(c),
    };
    if let Some(cache) = cache {
        let reuse_rows: Vec<usize> = match mode {
            RenderMode::MixedTrain(_) => (0..queries.len())
                .filter(|&i| cache.store(queries[i].component).exists(&idx[i]))
                .collect(),
            _ => (0..queries.len()).filter(|&i| decisions[i] == PathDecision::Reuse).collect(),
        };
        let reused = reuse_outputs(ctx.model, cache, &queries, &idx, &reuse_rows)?;
        for (&i, w) in reuse_rows.iter().zip(reused) {
            omegas[i] = match mode {
                RenderMode::MixedTrain(_) => {
                    let f = full_rows.binary_search(&i).expect("mixed mode evaluates every query");
                    blend_outputs(full[f].score, w, omegas[i])
                }
                _ => w,
            };
        }
    }

    let mut counters = PathCounters::default();
    let mut records = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        counters.record(decisions[i]);
        records.push(QueryRecord {
            ray: owner[i],
            component: q.component,
            bin: idx[i],
            decision: decisions[i],
            rgb: [omegas[i][0], omegas[i][1], omegas[i][2]],
            sigma: omegas[i][3],
        });
    }
    let colors = (0..pixels.len())
        .map(|r| {
            let ray: Vec<([f64; 3], f64, f64)> = (offsets[r]..offsets[r + 1])
                .map(|i| {
                    let w = omegas[i];
                    ([w[0], w[1], w[2]], w[3], samples[i].delta)
                })
                .collect();
            composite(&ray)
        })
        .collect();
    Ok(RenderOutput {
        colors,
        counters,
        records,
    })
}

/// `(r, g, b, σ)` rebuilt from stored payloads for the listed queries.
fn reuse_outputs(
    model: &SceneModel,
    cache: &CacheSet,
    queries: &[Query],
    idx: &[BinIndex],
    rows: &[usize],
) -> Result<Vec<[f64; 4]>, RenderError> {
    let mut out = vec![[0.0; 4]; rows.len()];
    let mut feat_rows = Vec::new();
    let mut feat_q = Vec::new();
    let mut feats: Vec<&[f32]> = Vec::new();
    for (k, &i) in rows.iter().enumerate() {
        let store = cache.store(queries[i].component);
        let p = store.get(&idx[i]).expect("reuse rows have payloads");
        match store.strategy() {
            Strategy::Rgb | Strategy::NaiveRgb => {
                out[k] = [p.feature[0] as f64, p.feature[1] as f64, p.feature[2] as f64, p.sigma as f64];
            }
            _ => {
                out[k][3] = p.sigma as f64;
                feat_rows.push(k);
                feat_q.push(queries[i]);
                feats.push(p.feature);
            }
        }
    }
    let rgb = model.color_from_payloads(&feat_q, &feats)?;
    for (&k, c) in feat_rows.iter().zip(rgb) {
        out[k][..3].copy_from_slice(&c);
    }
    Ok(out)
}

/// Render a whole frame.
pub fn render_image(ctx: &RenderContext<'_>, frame: usize, mode: RenderMode<'_>) -> Result<(Image, RenderOutput), RenderError> {
    let pixels = all_pixels(ctx.camera);
    let out = render_pixels(ctx, frame, &pixels, mode)?;
    let image = Image::from_pixels(ctx.camera.width, ctx.camera.height, out.colors.clone()).expect("one colour per pixel");
    Ok((image, out))
}

/// Every pixel coordinate in row-major order.
pub fn all_pixels(camera: &Camera) -> Vec<(usize, usize)> {
    (0..camera.height)
        .flat_map(|y| (0..camera.width).map(move |x| (x, y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{atan, sqrt, Mat3};
    use crate::scene::{Bounds, CameraPose, ObjectTrack, PlaneStack, Pose};

    fn camera(w: usize, h: usize, f: f64) -> Camera {
        Camera::new(vec![CameraPose::looking_forward(Vec3::ZERO)], f, w, h).unwrap()
    }

    #[test]
    fn centre_ray_is_forward() {
        let cam = camera(5, 5, 10.0);
        let r = generate_ray(&cam, 2, 2, 0);
        assert_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn mirrored_pixels_mirror_directions() {
        let cam = camera(8, 6, 7.0);
        let a = generate_ray(&cam, 1, 3, 0).direction;
        let b = generate_ray(&cam, 6, 3, 0).direction;
        assert!((a.x + b.x).abs() < 1e-15 && (a.y - b.y).abs() < 1e-15 && (a.z - b.z).abs() < 1e-15);
    }

    #[test]
    fn corner_angle_matches_closed_form() {
        let (w, h, f) = (48.0, 32.0, 40.0);
        let cam = camera(48, 32, f);
        let d = generate_ray(&cam, 0, 0, 0).direction;
        // The pixel centre sits half a pixel inside the image corner.
        let (u, v) = ((w / 2.0 - 0.5) / f, (h / 2.0 - 0.5) / f);
        let angle = crate::math::acos(d.z);
        assert!((angle - atan(sqrt(u * u + v * v))).abs() < 1e-12);
    }

    fn scene_with_box() -> SceneGraph {
        let pose = Pose::new(Vec3::new(0.0, 0.0, 4.0), Mat3::IDENTITY, Vec3::splat(1.0)).unwrap();
        SceneGraph::new(
            PlaneStack::uniform(7.0, 1.0, 6).unwrap(),
            vec![ObjectTrack {
                id: 1,
                class: 0,
                poses: vec![pose],
            }],
            1,
            Bounds {
                min: Vec3::new(-10.0, -10.0, -1.0),
                max: Vec3::new(10.0, 10.0, 13.0),
            },
        )
        .unwrap()
    }

    #[test]
    fn thirteen_samples_through_one_box() {
        let scene = scene_with_box();
        let ray = generate_ray(&camera(5, 5, 10.0), 2, 2, 0);
        let s = sample_ray(&ray, &scene, &SamplingConfig::default()).unwrap();
        assert_eq!(s.len(), 13);
        assert!(s.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(s.iter().all(|p| p.delta >= 0.0));
        for p in s.iter().filter(|p| matches!(p.query.component, Component::Object(_))) {
            assert!(p.query.position.max_abs() <= 1.0);
        }
        let last = s.last().unwrap();
        // Centre ray along +z leaves the bounds at z = 13.
        assert!((last.t + last.delta - 13.0).abs() < 1e-12);
        let capped = SamplingConfig {
            far_cap: Some(40.0),
            ..SamplingConfig::default()
        };
        let last = *sample_ray(&ray, &scene, &capped).unwrap().last().unwrap();
        assert!((last.t + last.delta - 40.0).abs() < 1e-12);
    }

    #[test]
    fn missing_ray_gets_plane_samples_only() {
        let scene = scene_with_box();
        let ray = generate_ray(&camera(41, 41, 40.0), 0, 20, 0);
        let s = sample_ray(&ray, &scene, &SamplingConfig::default()).unwrap();
        assert_eq!(s.len(), 6);
    }
}

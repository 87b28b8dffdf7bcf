//! Analytic ground truth: a handful of primitives moving in front of a
//! textured wall, ray-cast directly (no learning involved).

use alloc::vec::Vec;

use super::{Bounds, Camera, ObjectTrack, PlaneStack, Pose, SceneError, SceneGraph};
use crate::math::{cos, floor, sin, Vec3, PI};
use crate::render::{generate_ray, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    /// Opaque box filling its bounding box.
    Cuboid,
    /// Opaque sphere of radius `half_extents.x`, centred in its box.
    Sphere,
    /// Box with constant per-hit opacity in `(0, 1)`.
    Slab { opacity: f64 },
}

/// Albedo modulation over the primitive's canonical coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pattern {
    Solid,
    /// Alternating `1 ± contrast` over a `cells`-per-axis checkerboard.
    Checker { cells: f64, contrast: f64 },
}

/// Linear translation plus constant yaw rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub start: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl Motion {
    pub fn stationary(at: Vec3) -> Self {
        Self {
            start: at,
            velocity: Vec3::ZERO,
            yaw: 0.0,
            yaw_rate: 0.0,
        }
    }

    pub fn position(&self, frame: usize) -> Vec3 {
        self.start + self.velocity * frame as f64
    }

    pub fn yaw_at(&self, frame: usize) -> f64 {
        self.yaw + self.yaw_rate * frame as f64
    }
}

/// Scalar brightness multiplier that varies over frames, standing in for
/// shadows and other environment effects: `base + amplitude·sin(2π f/period + phase)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tint {
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    pub phase: f64,
}

impl Tint {
    pub const NONE: Tint = Tint {
        base: 1.0,
        amplitude: 0.0,
        period: 1.0,
        phase: 0.0,
    };

    pub fn at(&self, frame: usize) -> f64 {
        self.base + self.amplitude * sin(2.0 * PI * frame as f64 / self.period + self.phase)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub class: usize,
    pub half_extents: Vec3,
    pub albedo: [f64; 3],
    pub pattern: Pattern,
    pub motion: Motion,
    pub tint: Tint,
}

impl Primitive {
    pub fn pose(&self, frame: usize) -> Result<Pose, SceneError> {
        let scale = match self.shape {
            Shape::Sphere => Vec3::splat(self.half_extents.x),
            _ => self.half_extents,
        };
        Pose::from_yaw(self.motion.position(frame), self.motion.yaw_at(frame), scale)
    }

    fn opacity(&self) -> f64 {
        match self.shape {
            Shape::Slab { opacity } => opacity,
            _ => 1.0,
        }
    }

    fn colour(&self, x_o: Vec3, frame: usize) -> [f64; 3] {
        let pattern = match self.pattern {
            Pattern::Solid => 1.0,
            Pattern::Checker { cells, contrast } => {
                let cell = |v: f64| floor((v + 1.0) * 0.5 * cells) as i64;
                if (cell(x_o.x) + cell(x_o.y) + cell(x_o.z)).rem_euclid(2) == 0 {
                    1.0 + contrast
                } else {
                    1.0 - contrast
                }
            }
        };
        let k = self.tint.at(frame) * pattern;
        self.albedo.map(|a| (a * k).clamp(0.0, 1.0))
    }

    /// Nearest forward hit: `(t, canonical point)`.
    fn hit(&self, origin: Vec3, dir: Vec3, frame: usize) -> Option<(f64, Vec3)> {
        let pose = self.pose(frame).ok()?;
        match self.shape {
            Shape::Cuboid | Shape::Slab { .. } => {
                let (t0, _) = super::ray_box_intersect(origin, dir, &pose)?;
                Some((t0, pose.point_to_canonical(origin + dir * t0)))
            }
            Shape::Sphere => {
                let r = self.half_extents.x;
                let oc = origin - pose.translation();
                let b = oc.dot(dir);
                let c = oc.dot(oc) - r * r;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - crate::math::sqrt(disc);
                (t >= 0.0).then(|| (t, pose.point_to_canonical(origin + dir * t)))
            }
        }
    }
}

/// Smooth colour pattern on the wall plane `z = wall_z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackgroundTexture {
    /// An infinite value removes the wall, so every ray sees `sky`.
    pub wall_z: f64,
    pub sky: [f64; 3],
    /// Spatial frequency multiplier of the pattern (1 = the base pattern).
    pub frequency: f64,
}

impl BackgroundTexture {
    pub fn colour_at(&self, x: f64, y: f64) -> [f64; 3] {
        let (x, y) = (x * self.frequency, y * self.frequency);
        [
            0.5 + 0.3 * sin(0.7 * x + 0.2) * cos(0.5 * y),
            0.45 + 0.25 * sin(0.4 * x - 0.6 * y + 1.0),
            0.5 + 0.3 * cos(0.3 * x + 0.8 * y),
        ]
    }

    fn shade(&self, origin: Vec3, dir: Vec3) -> [f64; 3] {
        if dir.z <= 1e-12 || !self.wall_z.is_finite() {
            return self.sky;
        }
        let t = (self.wall_z - origin.z) / dir.z;
        if t < 0.0 {
            return self.sky;
        }
        let p = origin + dir * t;
        self.colour_at(p.x, p.y)
    }
}

/// A procedurally defined dynamic scene used as the training-data oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: BackgroundTexture,
    pub planes: PlaneStack,
    pub bounds: Bounds,
    pub frame_count: usize,
}

impl SyntheticSceneSpec {
    /// Checks that primitives stay inside the bounds and tints stay in `[0.5, 1.5]`.
    pub fn validate(&self) -> Result<(), SceneError> {
        for (index, p) in self.primitives.iter().enumerate() {
            for frame in 0..self.frame_count {
                let pose = p.pose(frame)?;
                for corner in 0..8 {
                    let sign = |bit: usize| if corner & bit == 0 { -1.0 } else { 1.0 };
                    let c = pose.point_to_global(Vec3::new(sign(1), sign(2), sign(4)));
                    if !self.bounds.contains(c) {
                        return Err(SceneError::PrimitiveOutOfBounds { index, frame });
                    }
                }
                let value = p.tint.at(frame);
                if !(0.5..=1.5).contains(&value) {
                    return Err(SceneError::TintOutOfRange { value, frame });
                }
            }
        }
        Ok(())
    }

    /// Object `i` of the graph corresponds to primitive `i` and has id `i + 1`.
    pub fn scene_graph(&self) -> Result<SceneGraph, SceneError> {
        let objects = self
            .primitives
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let poses = (0..self.frame_count).map(|f| p.pose(f)).collect::<Result<_, _>>()?;
                Ok(ObjectTrack {
                    id: i as u32 + 1,
                    class: p.class,
                    poses,
                })
            })
            .collect::<Result<Vec<_>, SceneError>>()?;
        SceneGraph::new(self.planes.clone(), objects, self.frame_count, self.bounds)
    }

    /// Colour seen along one ray: front-to-back over primitive hits, then the wall.
    pub fn trace(&self, origin: Vec3, dir: Vec3, frame: usize) -> [f64; 3] {
        let mut hits: Vec<(f64, usize, Vec3)> = self
            .primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.hit(origin, dir, frame).map(|(t, x)| (t, i, x)))
            .collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut out = [0.0; 3];
        let mut transmittance = 1.0;
        for (_, i, x_o) in hits {
            let p = &self.primitives[i];
            let alpha = p.opacity();
            let c = p.colour(x_o, frame);
            for k in 0..3 {
                out[k] += transmittance * alpha * c[k];
            }
            transmittance *= 1.0 - alpha;
            if transmittance <= 0.0 {
                return out;
            }
        }
        let bg = self.background.shade(origin, dir);
        for k in 0..3 {
            out[k] += transmittance * bg[k];
        }
        out
    }
}

/// Ray-cast every pixel of `frame`.
pub fn render_ground_truth(spec: &SyntheticSceneSpec, camera: &Camera, frame: usize) -> Result<Image, SceneError> {
    if frame >= spec.frame_count {
        return Err(SceneError::FrameOutOfRange {
            frame,
            count: spec.frame_count,
        });
    }
    let mut image = Image::new(camera.width, camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let ray = generate_ray(camera, px, py, frame);
            image.set(px, py, spec.trace(ray.origin, ray.direction, frame));
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::CameraPose;

    fn wall() -> BackgroundTexture {
        BackgroundTexture {
            wall_z: 12.0,
            sky: [0.0, 0.0, 0.0],
            frequency: 1.0,
        }
    }

    fn spec(primitives: Vec<Primitive>) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            primitives,
            background: wall(),
            planes: PlaneStack::uniform(7.0, 1.0, 6).unwrap(),
            bounds: Bounds {
                min: Vec3::new(-10.0, -10.0, -1.0),
                max: Vec3::new(10.0, 10.0, 13.0),
            },
            frame_count: 3,
        }
    }

    fn camera() -> Camera {
        Camera::new(alloc::vec![CameraPose::looking_forward(Vec3::ZERO)], 8.0, 8, 8).unwrap()
    }

    #[test]
    fn empty_scene_shows_wall_texture() {
        let s = spec(Vec::new());
        let cam = camera();
        let img = render_ground_truth(&s, &cam, 0).unwrap();
        let ray = generate_ray(&cam, 3, 5, 0);
        let t = 12.0 / ray.direction.z;
        let p = ray.origin + ray.direction * t;
        assert_eq!(img.get(3, 5), s.background.colour_at(p.x, p.y));
    }

    #[test]
    fn box_filling_view_is_uniform() {
        let big = Primitive {
            shape: Shape::Cuboid,
            class: 0,
            half_extents: Vec3::new(5.0, 5.0, 0.5),
            albedo: [1.0, 0.0, 0.0],
            pattern: Pattern::Solid,
            motion: Motion::stationary(Vec3::new(0.0, 0.0, 3.0)),
            tint: Tint::NONE,
        };
        let img = render_ground_truth(&spec(alloc::vec![big]), &camera(), 1).unwrap();
        assert!(img.pixels().iter().all(|p| *p == [1.0, 0.0, 0.0]));
    }

    #[test]
    fn translucent_slab_blends_with_wall() {
        let slab = Primitive {
            shape: Shape::Slab { opacity: 0.25 },
            class: 0,
            half_extents: Vec3::new(5.0, 5.0, 0.1),
            albedo: [0.0, 0.0, 1.0],
            pattern: Pattern::Solid,
            motion: Motion::stationary(Vec3::new(0.0, 0.0, 3.0)),
            tint: Tint::NONE,
        };
        let s = spec(alloc::vec![slab]);
        let cam = camera();
        let img = render_ground_truth(&s, &cam, 0).unwrap();
        let bare = render_ground_truth(&spec(Vec::new()), &cam, 0).unwrap();
        let (a, b) = (img.get(4, 4), bare.get(4, 4));
        assert!((a[2] - (0.25 + 0.75 * b[2])).abs() < 1e-12);
        assert!((a[0] - 0.75 * b[0]).abs() < 1e-12);
    }

    #[test]
    fn frame_outside_range_is_rejected() {
        assert!(render_ground_truth(&spec(Vec::new()), &camera(), 3).is_err());
    }

    #[test]
    fn validation_catches_escaping_primitive() {
        let runaway = Primitive {
            shape: Shape::Cuboid,
            class: 0,
            half_extents: Vec3::splat(0.5),
            albedo: [0.5; 3],
            pattern: Pattern::Solid,
            motion: Motion {
                start: Vec3::new(8.0, 0.0, 4.0),
                velocity: Vec3::new(1.0, 0.0, 0.0),
                yaw: 0.0,
                yaw_rate: 0.0,
            },
            tint: Tint::NONE,
        };
        assert!(matches!(
            spec(alloc::vec![runaway]).validate(),
            Err(SceneError::PrimitiveOutOfBounds { index: 0, frame: 2 })
        ));
    }
}

//! Scene graph: a stack of background planes plus dynamic objects with
//! per-frame poses, and the transforms between global and canonical frames.

mod intersect;
mod synthetic;

use alloc::vec::Vec;

pub use intersect::{ray_box_intersect, ray_planes_intersect};
pub use synthetic::{
    render_ground_truth, BackgroundTexture, Motion, Pattern, Primitive, Shape, SyntheticSceneSpec, Tint,
};

use crate::math::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("direction vector has zero length")]
    ZeroDirection,
    #[error("rotation is not orthonormal (error {0:e})")]
    NotOrthonormal(f64),
    #[error("scale components must be positive, got {0:?}")]
    NonPositiveScale([f64; 3]),
    #[error("unknown object id {0}")]
    UnknownObject(u32),
    #[error("object {object} has {found} poses but the scene has {expected} frames")]
    PoseTrackLength { object: u32, expected: usize, found: usize },
    #[error("background needs at least one plane with strictly increasing offsets")]
    BadPlanes,
    #[error("frame {frame} outside scene range 0..{count}")]
    FrameOutOfRange { frame: usize, count: usize },
    #[error("camera intrinsics invalid: {0}")]
    BadCamera(&'static str),
    #[error("primitive {index} leaves the world bounds at frame {frame}")]
    PrimitiveOutOfBounds { index: usize, frame: usize },
    #[error("tint {value} at frame {frame} outside [0.5, 1.5]")]
    TintOutOfRange { value: f64, frame: usize },
}

/// Rigid placement plus anisotropic scale of an object's bounding box.
///
/// The box occupies `translation + rotation·(scale ⊙ [−1,1]³)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    translation: Vec3,
    rotation: Mat3,
    scale: Vec3,
}

impl Pose {
    pub fn new(translation: Vec3, rotation: Mat3, scale: Vec3) -> Result<Self, SceneError> {
        let err = rotation.orthonormality_error();
        if !(err <= 1e-9) {
            return Err(SceneError::NotOrthonormal(err));
        }
        if !(scale.x > 0.0 && scale.y > 0.0 && scale.z > 0.0) {
            return Err(SceneError::NonPositiveScale(scale.to_array()));
        }
        Ok(Self {
            translation,
            rotation,
            scale,
        })
    }

    pub fn from_yaw(translation: Vec3, yaw: f64, scale: Vec3) -> Result<Self, SceneError> {
        Self::new(translation, Mat3::yaw(yaw), scale)
    }

    pub fn identity() -> Self {
        Self {
            translation: Vec3::ZERO,
            rotation: Mat3::IDENTITY,
            scale: Vec3::ONE,
        }
    }

    pub fn translation(&self) -> Vec3 {
        self.translation
    }

    pub fn rotation(&self) -> Mat3 {
        self.rotation
    }

    pub fn scale(&self) -> Vec3 {
        self.scale
    }

    pub fn point_to_canonical(&self, x: Vec3) -> Vec3 {
        self.rotation
            .transpose()
            .mul_vec(x - self.translation)
            .div_elem(self.scale)
    }

    pub fn point_to_global(&self, x_o: Vec3) -> Vec3 {
        self.rotation.mul_vec(x_o.mul_elem(self.scale)) + self.translation
    }

    /// `x_o = diag(1/scale)·Rᵀ·(x − p)`, `d_o = normalize(Rᵀ·d)`.
    pub fn global_to_canonical(&self, x: Vec3, d: Vec3) -> Result<(Vec3, Vec3), SceneError> {
        let d_o = self
            .rotation
            .transpose()
            .mul_vec(d)
            .normalized()
            .ok_or(SceneError::ZeroDirection)?;
        Ok((self.point_to_canonical(x), d_o))
    }

    /// Inverse of [`Pose::global_to_canonical`] for unit canonical directions.
    pub fn canonical_to_global(&self, x_o: Vec3, d_o: Vec3) -> (Vec3, Vec3) {
        (self.point_to_global(x_o), self.rotation.mul_vec(d_o))
    }

    pub fn contains(&self, x: Vec3) -> bool {
        self.point_to_canonical(x).max_abs() <= 1.0
    }
}

/// A dynamic object: its class and one pose per scene frame.
///
/// The object's latent code is a trainable parameter owned by the model
/// (see [`crate::fields::SceneModel`]), sized by the class configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectTrack {
    pub id: u32,
    pub class: usize,
    pub poses: Vec<Pose>,
}

impl ObjectTrack {
    pub fn pose(&self, frame: usize) -> Option<&Pose> {
        self.poses.get(frame)
    }
}

/// Axis-aligned world bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: Vec3,
    pub max: Vec3,
}

impl Bounds {
    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn half_extent(&self) -> Vec3 {
        (self.max - self.min) * 0.5
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    /// Ray parameter at which `o + t·d` leaves the box, for `o` inside it.
    pub fn exit_distance(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let mut t = f64::INFINITY;
        for (o, d, lo, hi) in [
            (o.x, d.x, self.min.x, self.max.x),
            (o.y, d.y, self.min.y, self.max.y),
            (o.z, d.z, self.min.z, self.max.z),
        ] {
            if d > 0.0 {
                t = t.min((hi - o) / d);
            } else if d < 0.0 {
                t = t.min((lo - o) / d);
            }
        }
        (t.is_finite() && t >= 0.0).then_some(t)
    }

    /// Map into `[−1,1]³` (unclamped).
    pub fn normalize(&self, x: Vec3) -> Vec3 {
        (x - self.center()).div_elem(self.half_extent())
    }

    pub fn contains(&self, x: Vec3) -> bool {
        x.x >= self.min.x
            && x.x <= self.max.x
            && x.y >= self.min.y
            && x.y <= self.max.y
            && x.z >= self.min.z
            && x.z <= self.max.z
    }
}

/// Background planes `z = offset_k`, all with normal `+z`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneStack {
    offsets: Vec<f64>,
}

impl PlaneStack {
    pub fn new(offsets: Vec<f64>) -> Result<Self, SceneError> {
        if offsets.is_empty() || offsets.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SceneError::BadPlanes);
        }
        Ok(Self { offsets })
    }

    /// `count` planes starting at `first`, spaced by `spacing`.
    pub fn uniform(first: f64, spacing: f64, count: usize) -> Result<Self, SceneError> {
        Self::new((0..count).map(|k| first + spacing * k as f64).collect())
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn normal(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub planes: PlaneStack,
    pub objects: Vec<ObjectTrack>,
    pub frame_count: usize,
    pub bounds: Bounds,
}

impl SceneGraph {
    pub fn new(
        planes: PlaneStack,
        objects: Vec<ObjectTrack>,
        frame_count: usize,
        bounds: Bounds,
    ) -> Result<Self, SceneError> {
        for o in &objects {
            if o.poses.len() != frame_count {
                return Err(SceneError::PoseTrackLength {
                    object: o.id,
                    expected: frame_count,
                    found: o.poses.len(),
                });
            }
        }
        Ok(Self {
            planes,
            objects,
            frame_count,
            bounds,
        })
    }

    pub fn object_index(&self, id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn class_count(&self) -> usize {
        self.objects.iter().map(|o| o.class + 1).max().unwrap_or(0)
    }

    pub fn check_frame(&self, frame: usize) -> Result<(), SceneError> {
        if frame < self.frame_count {
            Ok(())
        } else {
            Err(SceneError::FrameOutOfRange {
                frame,
                count: self.frame_count,
            })
        }
    }
}

/// How [`manipulate`] edits an object's pose track.
#[derive(Clone, Debug, PartialEq)]
pub enum PoseEdit {
    /// Replace the whole track; must have one pose per frame.
    Replace(Vec<Pose>),
    /// Shift every pose and turn it about its own centre.
    Transform { translate: Vec3, yaw: f64 },
}

/// Return a copy of `scene` with one object's pose track edited.
pub fn manipulate(scene: &SceneGraph, object_id: u32, edit: &PoseEdit) -> Result<SceneGraph, SceneError> {
    let idx = scene
        .object_index(object_id)
        .ok_or(SceneError::UnknownObject(object_id))?;
    let mut out = scene.clone();
    let track = &mut out.objects[idx];
    match edit {
        PoseEdit::Replace(poses) => {
            if poses.len() != scene.frame_count {
                return Err(SceneError::PoseTrackLength {
                    object: object_id,
                    expected: scene.frame_count,
                    found: poses.len(),
                });
            }
            track.poses = poses.clone();
        }
        PoseEdit::Transform { translate, yaw } => {
            let turn = Mat3::yaw(*yaw);
            for pose in &mut track.poses {
                *pose = Pose::new(
                    pose.translation + *translate,
                    turn.mul(&pose.rotation),
                    pose.scale,
                )?;
            }
        }
    }
    Ok(out)
}

/// Camera placement for one frame. The rotation's columns are the camera's
/// right, up and forward axes in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl CameraPose {
    /// Looking down `+z` with `+y` up.
    pub fn looking_forward(position: Vec3) -> Self {
        Self {
            position,
            rotation: Mat3::IDENTITY,
        }
    }

    pub fn forward(&self) -> Vec3 {
        self.rotation.col(2)
    }
}

/// Pinhole camera with one pose per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub poses: Vec<CameraPose>,
    pub focal: f64,
    pub principal: (f64, f64),
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Principal point at the image centre.
    pub fn new(poses: Vec<CameraPose>, focal: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        if !(focal > 0.0) {
            return Err(SceneError::BadCamera("focal length must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(SceneError::BadCamera("image must be at least 1×1"));
        }
        if poses.is_empty() {
            return Err(SceneError::BadCamera("camera needs at least one pose"));
        }
        Ok(Self {
            poses,
            focal,
            principal: (width as f64 / 2.0, height as f64 / 2.0),
            width,
            height,
        })
    }

    /// Pose for `frame`; a single-pose camera is static.
    pub fn pose(&self, frame: usize) -> &CameraPose {
        self.poses.get(frame).unwrap_or(&self.poses[self.poses.len() - 1])
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

//! Built-in synthetic scenes.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::Vec3;
use crate::scene::{
    BackgroundTexture, Bounds, Camera, CameraPose, Motion, Pattern, PlaneStack, Primitive, SceneError, Shape,
    SyntheticSceneSpec, Tint,
};

/// A scene definition together with the camera that films it.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub spec: SyntheticSceneSpec,
    pub camera: Camera,
}

const WALL_FREQ: f64 = 3.0;
const DESK_PAN: f64 = 1.5;

fn bounds() -> Bounds {
    Bounds {
        min: Vec3::new(-10.0, -10.0, -1.0),
        max: Vec3::new(10.0, 10.0, 13.0),
    }
}

fn wall(frequency: f64) -> BackgroundTexture {
    BackgroundTexture {
        wall_z: 12.0,
        sky: [0.0, 0.0, 0.0],
        frequency,
    }
}

/// Camera sliding along `x` from `-pan` to `pan` over the sequence.
fn panning_camera(frames: usize, pan: f64, size: usize, focal: f64) -> Result<Camera, SceneError> {
    let poses: Vec<CameraPose> = (0..frames)
        .map(|f| {
            let u = if frames > 1 { f as f64 / (frames - 1) as f64 } else { 0.5 };
            CameraPose::looking_forward(Vec3::new(-pan + 2.0 * pan * u, 0.0, 0.0))
        })
        .collect();
    Camera::new(poses, focal, size, size)
}

/// Reference scene: 48×48 pixels, 30 frames, two moving boxes and a sphere
/// with per-frame tints in front of a finely textured wall, six background
/// planes. The camera pans 3 units sideways so the wall shows parallax.
pub fn desk() -> Result<Preset, SceneError> {
    let frames = 30;
    let primitives = vec![
        Primitive {
            shape: Shape::Cuboid,
            class: 0,
            half_extents: Vec3::new(0.6, 0.6, 0.6),
            albedo: [0.8, 0.3, 0.2],
            pattern: Pattern::Checker {
                cells: 2.0,
                contrast: 0.2,
            },
            motion: Motion {
                start: Vec3::new(-1.4, -0.4, 4.5),
                velocity: Vec3::new(0.04, 0.0, 0.0),
                yaw: 0.3,
                yaw_rate: 0.02,
            },
            tint: Tint {
                base: 1.0,
                amplitude: 0.3,
                period: 30.0,
                phase: 0.0,
            },
        },
        Primitive {
            shape: Shape::Cuboid,
            class: 0,
            half_extents: Vec3::new(0.5, 0.4, 0.5),
            albedo: [0.2, 0.55, 0.8],
            pattern: Pattern::Solid,
            motion: Motion {
                start: Vec3::new(1.4, 0.7, 5.2),
                velocity: Vec3::new(-0.02, 0.01, 0.0),
                yaw: -0.4,
                yaw_rate: -0.015,
            },
            tint: Tint {
                base: 1.0,
                amplitude: 0.25,
                period: 20.0,
                phase: 1.5,
            },
        },
        Primitive {
            shape: Shape::Sphere,
            class: 1,
            half_extents: Vec3::splat(0.5),
            albedo: [0.9, 0.8, 0.3],
            pattern: Pattern::Solid,
            motion: Motion {
                start: Vec3::new(0.0, -1.0, 3.6),
                velocity: Vec3::new(0.01, 0.03, 0.0),
                yaw: 0.0,
                yaw_rate: 0.0,
            },
            tint: Tint {
                base: 1.0,
                amplitude: 0.2,
                period: 15.0,
                phase: 0.7,
            },
        },
    ];
    let spec = SyntheticSceneSpec {
        primitives,
        background: wall(WALL_FREQ),
        planes: PlaneStack::uniform(7.0, 1.0, 6)?,
        bounds: bounds(),
        frame_count: frames,
    };
    spec.validate()?;
    Ok(Preset {
        spec,
        camera: panning_camera(frames, DESK_PAN, 48, 40.0)?,
    })
}

/// Skipping-ablation scene: a thick translucent checkered slab whose tint
/// changes every frame, covering the middle of the view, against black sky
/// with no wall, so every other pixel sees only empty space. The slab's
/// learned density stays below the density threshold while its appearance
/// is inconsistent over time.
pub fn translucent_slab() -> Result<Preset, SceneError> {
    let frames = 20;
    let primitives = vec![Primitive {
        shape: Shape::Slab { opacity: 0.5 },
        class: 0,
        half_extents: Vec3::new(1.0, 1.0, 0.6),
        albedo: [0.3, 0.7, 0.4],
        pattern: Pattern::Checker {
            cells: 4.0,
            contrast: 0.3,
        },
        motion: Motion::stationary(Vec3::new(0.0, 0.0, 4.5)),
        tint: Tint {
            base: 1.0,
            amplitude: 0.45,
            period: 5.0,
            phase: 0.0,
        },
    }];
    let spec = SyntheticSceneSpec {
        primitives,
        background: BackgroundTexture {
            wall_z: f64::INFINITY,
            ..wall(1.0)
        },
        planes: PlaneStack::uniform(7.0, 1.0, 6)?,
        bounds: bounds(),
        frame_count: frames,
    };
    spec.validate()?;
    Ok(Preset {
        spec,
        camera: panning_camera(frames, 0.3, 32, 26.0)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        let d = desk().unwrap();
        assert_eq!(d.spec.primitives.len(), 3);
        assert_eq!(d.spec.planes.len(), 6);
        assert_eq!((d.camera.width, d.camera.height, d.spec.frame_count), (48, 48, 30));
        let g = d.spec.scene_graph().unwrap();
        assert_eq!(g.class_count(), 2);
        translucent_slab().unwrap().spec.scene_graph().unwrap();
    }
}

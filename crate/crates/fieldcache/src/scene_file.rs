//! TOML scene descriptions for synthetic sequences.
//!
//! ```toml
//! frames = 30
//!
//! [bounds]
//! min = [-10.0, -10.0, -1.0]
//! max = [10.0, 10.0, 13.0]
//!
//! [planes]            # either first/spacing/count or offsets = [...]
//! first = 7.0
//! spacing = 1.0
//! count = 6
//!
//! [background]
//! wall_z = 12.0
//! sky = [0.0, 0.0, 0.0]
//!
//! [camera]
//! width = 48
//! height = 48
//! focal = 40.0
//! start = [-0.5, 0.0, 0.0]   # linear track from start to end,
//! end = [0.5, 0.0, 0.0]      # or positions = [[x, y, z], ...] per frame
//!
//! [[primitive]]
//! shape = "cuboid"           # cuboid | sphere | slab (slab takes opacity)
//! class = 0
//! half_extents = [0.6, 0.6, 0.6]
//! albedo = [0.8, 0.3, 0.2]
//! start = [-1.4, -0.4, 4.5]
//! velocity = [0.04, 0.0, 0.0]
//! yaw = 0.3
//! yaw_rate = 0.02
//! checker = { cells = 2.0, contrast = 0.2 }
//! tint = { base = 1.0, amplitude = 0.3, period = 30.0, phase = 0.0 }
//! ```
//!
//! Cameras look down `+z` with `+y` up.

use std::path::Path;

use anyhow::{bail, Context, Result};
use fieldcache_core::math::Vec3;
use fieldcache_core::presets::Preset;
use fieldcache_core::scene::{
    BackgroundTexture, Bounds, Camera, CameraPose, Motion, Pattern, PlaneStack, Primitive, Shape, SyntheticSceneSpec,
    Tint,
};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub frames: usize,
    pub bounds: BoundsDef,
    pub planes: PlanesDef,
    pub background: BackgroundDef,
    pub camera: CameraDef,
    #[serde(default, rename = "primitive")]
    pub primitives: Vec<PrimitiveDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsDef {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanesDef {
    pub first: Option<f64>,
    pub spacing: Option<f64>,
    pub count: Option<usize>,
    pub offsets: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackgroundDef {
    pub wall_z: f64,
    #[serde(default)]
    pub sky: [f64; 3],
    #[serde(default = "unit")]
    pub frequency: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDef {
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub start: Option<[f64; 3]>,
    pub end: Option<[f64; 3]>,
    pub positions: Option<Vec<[f64; 3]>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeName {
    Cuboid,
    Sphere,
    Slab,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckerDef {
    pub cells: f64,
    pub contrast: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TintDef {
    #[serde(default = "one")]
    pub base: f64,
    pub amplitude: f64,
    pub period: f64,
    #[serde(default)]
    pub phase: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveDef {
    pub shape: ShapeName,
    #[serde(default)]
    pub class: usize,
    pub half_extents: [f64; 3],
    pub albedo: [f64; 3],
    pub start: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub yaw_rate: f64,
    pub opacity: Option<f64>,
    pub checker: Option<CheckerDef>,
    pub tint: Option<TintDef>,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::from_array(a)
}

impl PrimitiveDef {
    fn build(&self, index: usize) -> Result<Primitive> {
        let shape = match (self.shape, self.opacity) {
            (ShapeName::Slab, Some(opacity)) if opacity > 0.0 && opacity < 1.0 => Shape::Slab { opacity },
            (ShapeName::Slab, _) => bail!("primitive {index}: slab needs opacity in (0, 1)"),
            (_, Some(_)) => bail!("primitive {index}: opacity applies to slabs only"),
            (ShapeName::Cuboid, None) => Shape::Cuboid,
            (ShapeName::Sphere, None) => Shape::Sphere,
        };
        if self.half_extents.iter().any(|&h| !(h > 0.0)) {
            bail!("primitive {index}: half extents must be positive");
        }
        Ok(Primitive {
            shape,
            class: self.class,
            half_extents: v3(self.half_extents),
            albedo: self.albedo,
            pattern: self.checker.map_or(Pattern::Solid, |c| Pattern::Checker {
                cells: c.cells,
                contrast: c.contrast,
            }),
            motion: Motion {
                start: v3(self.start),
                velocity: v3(self.velocity),
                yaw: self.yaw,
                yaw_rate: self.yaw_rate,
            },
            tint: self.tint.map_or(Tint::NONE, |t| Tint {
                base: t.base,
                amplitude: t.amplitude,
                period: t.period,
                phase: t.phase,
            }),
        })
    }

    fn from_primitive(p: &Primitive) -> Self {
        let (shape, opacity) = match p.shape {
            Shape::Cuboid => (ShapeName::Cuboid, None),
            Shape::Sphere => (ShapeName::Sphere, None),
            Shape::Slab { opacity } => (ShapeName::Slab, Some(opacity)),
        };
        Self {
            shape,
            class: p.class,
            half_extents: p.half_extents.to_array(),
            albedo: p.albedo,
            start: p.motion.start.to_array(),
            velocity: p.motion.velocity.to_array(),
            yaw: p.motion.yaw,
            yaw_rate: p.motion.yaw_rate,
            opacity,
            checker: match p.pattern {
                Pattern::Solid => None,
                Pattern::Checker { cells, contrast } => Some(CheckerDef { cells, contrast }),
            },
            tint: (p.tint != Tint::NONE).then_some(TintDef {
                base: p.tint.base,
                amplitude: p.tint.amplitude,
                period: p.tint.period,
                phase: p.tint.phase,
            }),
        }
    }
}

impl SceneFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading scene file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing scene file {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn build(&self) -> Result<Preset> {
        let planes = match (&self.planes.offsets, self.planes.first, self.planes.spacing, self.planes.count) {
            (Some(o), None, None, None) => PlaneStack::new(o.clone())?,
            (None, Some(first), Some(spacing), Some(count)) => PlaneStack::uniform(first, spacing, count)?,
            _ => bail!("planes: give either offsets or first, spacing and count"),
        };
        let primitives = self
            .primitives
            .iter()
            .enumerate()
            .map(|(i, p)| p.build(i))
            .collect::<Result<Vec<_>>>()?;
        let spec = SyntheticSceneSpec {
            primitives,
            background: BackgroundTexture {
                wall_z: self.background.wall_z,
                sky: self.background.sky,
                frequency: self.background.frequency,
            },
            planes,
            bounds: Bounds {
                min: v3(self.bounds.min),
                max: v3(self.bounds.max),
            },
            frame_count: self.frames,
        };
        spec.validate()?;
        let c = &self.camera;
        let positions: Vec<[f64; 3]> = match (&c.positions, c.start, c.end) {
            (Some(p), None, None) => {
                if p.len() != self.frames {
                    bail!("camera: {} positions for {} frames", p.len(), self.frames);
                }
                p.clone()
            }
            (None, Some(a), b) => {
                let b = b.unwrap_or(a);
                (0..self.frames)
                    .map(|f| {
                        let u = if self.frames > 1 { f as f64 / (self.frames - 1) as f64 } else { 0.0 };
                        [0, 1, 2].map(|k| a[k] + (b[k] - a[k]) * u)
                    })
                    .collect()
            }
            _ => bail!("camera: give either positions or start (and optionally end)"),
        };
        let poses = positions.into_iter().map(|p| CameraPose::looking_forward(v3(p))).collect();
        let camera = Camera::new(poses, c.focal, c.width, c.height)?;
        Ok(Preset { spec, camera })
    }

    /// Scene file describing a preset. Camera positions are listed per frame.
    pub fn from_preset(p: &Preset) -> Self {
        let s = &p.spec;
        Self {
            frames: s.frame_count,
            bounds: BoundsDef {
                min: s.bounds.min.to_array(),
                max: s.bounds.max.to_array(),
            },
            planes: PlanesDef {
                first: None,
                spacing: None,
                count: None,
                offsets: Some(s.planes.offsets().to_vec()),
            },
            background: BackgroundDef {
                wall_z: s.background.wall_z,
                sky: s.background.sky,
                frequency: s.background.frequency,
            },
            camera: CameraDef {
                width: p.camera.width,
                height: p.camera.height,
                focal: p.camera.focal,
                start: None,
                end: None,
                positions: Some((0..s.frame_count).map(|f| p.camera.pose(f).position.to_array()).collect()),
            },
            primitives: s.primitives.iter().map(PrimitiveDef::from_primitive).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use fieldcache_core::presets;

    #[test]
    fn module_doc_example_parses() {
        let doc = include_str!("scene_file.rs");
        let example: String = doc
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let p = SceneFile::parse(&example).unwrap().build().unwrap();
        assert_eq!(p.spec.primitives.len(), 1);
        assert_eq!(p.camera.poses.len(), 30);
        assert_eq!(p.camera.pose(29).position, Vec3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [presets::desk().unwrap(), presets::translucent_slab().unwrap()] {
            let text = SceneFile::from_preset(&p).to_toml().unwrap();
            let back = SceneFile::parse(&text).unwrap().build().unwrap();
            assert_eq!(back.spec, p.spec);
            assert_eq!(back.camera, p.camera);
        }
    }

    #[test]
    fn rejects_bad_descriptions() {
        let p = presets::desk().unwrap();
        let mut f = SceneFile::from_preset(&p);
        f.primitives[0].shape = ShapeName::Slab;
        assert!(f.build().unwrap_err().to_string().contains("opacity"));
        let mut f = SceneFile::from_preset(&p);
        f.primitives[0].start = [9.8, 0.0, 4.0];
        assert!(f.build().is_err());
        let mut f = SceneFile::from_preset(&p);
        f.planes.count = Some(3);
        assert!(f.build().is_err());
        assert!(SceneFile::parse("frames = 3\nunknown = 1").is_err());
    }
}

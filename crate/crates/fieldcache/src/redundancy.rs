//! How much of a trained field stays put between consecutive frames.
//!
//! Each tracked bin is probed at its centre once per frame, with that
//! frame's object pose and a viewing direction from that frame's camera.
//! An event is one (bin, consecutive frame pair); it is redundant at `ε`
//! when the max-abs change over `(r, g, b, σ)` is below `ε`.

use anyhow::Result;
use fieldcache_core::cache::BinIndex;
use fieldcache_core::fields::{Component, Query, SceneModel};
use fieldcache_core::math::Vec3;
use fieldcache_core::scene::{Camera, SceneGraph};

/// Per-bin `(r, g, b, σ)` series over the same frame range.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RedundancyHistory {
    pub frames: usize,
    pub series: Vec<Vec<[f64; 4]>>,
}

impl RedundancyHistory {
    pub fn new(frames: usize) -> Self {
        Self {
            frames,
            series: Vec::new(),
        }
    }

    /// Panics if the series does not cover `frames` frames.
    pub fn push(&mut self, series: Vec<[f64; 4]>) {
        assert_eq!(series.len(), self.frames, "series must cover every frame");
        self.series.push(series);
    }

    pub fn events(&self) -> usize {
        self.series.len() * self.frames.saturating_sub(1)
    }

    /// Largest per-event change, one entry per (bin, frame pair).
    pub fn changes(&self) -> Vec<f64> {
        self.series
            .iter()
            .flat_map(|s| {
                s.windows(2)
                    .map(|w| (0..4).map(|k| (w[1][k] - w[0][k]).abs()).fold(0.0, f64::max))
            })
            .collect()
    }
}

/// Fraction of events whose change is below each `ε`.
pub fn analyze_redundancy(history: &RedundancyHistory, eps: &[f64]) -> Vec<f64> {
    let mut changes = history.changes();
    changes.sort_by(f64::total_cmp);
    eps.iter()
        .map(|&e| {
            if changes.is_empty() {
                return 1.0;
            }
            let below = changes.partition_point(|&c| c < e);
            below as f64 / changes.len() as f64
        })
        .collect()
}

pub const CSV_HEADER: &str = "epsilon,ratio";

pub fn to_csv(eps: &[f64], ratios: &[f64]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (e, r) in eps.iter().zip(ratios) {
        out.push_str(&format!("{e},{r:.6}\n"));
    }
    out
}

/// `0.01, 0.02, …, 0.2` followed by `0.3, …, 1.0`.
pub fn default_eps_grid() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=20).map(|i| i as f64 * 0.01).collect();
    g.extend((3..=10).map(|i| i as f64 * 0.1));
    g
}

fn cell_centre(c: u16, n: usize) -> f64 {
    -1.0 + (c as f64 + 0.5) * 2.0 / n as f64
}

/// The query probing `bin` of `component` at `frame`.
pub fn probe_query(scene: &SceneGraph, camera: &Camera, component: Component, bin: BinIndex, bins: usize, frame: usize) -> Option<Query> {
    let eye = camera.pose(frame).position;
    match (component, bin) {
        (Component::Object(i), BinIndex::Cell(c)) => {
            let pose = scene.objects.get(i)?.poses.get(frame)?;
            let x_o = Vec3::new(cell_centre(c[0], bins), cell_centre(c[1], bins), cell_centre(c[2], bins));
            let world = pose.point_to_global(x_o);
            let d = (world - eye).normalized()?;
            let (_, d_o) = pose.global_to_canonical(eye, d).ok()?;
            Some(Query {
                component,
                position: x_o,
                direction: d_o,
                location: pose.translation(),
                frame,
            })
        }
        (Component::Plane(_), BinIndex::Plane { plane, cell }) => {
            let b = &scene.bounds;
            let (c, h) = (b.center(), b.half_extent());
            let z = *scene.planes.offsets().get(plane as usize)?;
            let world = Vec3::new(c.x + h.x * cell_centre(cell[0], bins), c.y + h.y * cell_centre(cell[1], bins), z);
            let d = (world - eye).normalized()?;
            Some(Query {
                component: Component::Plane(plane as usize),
                position: b.normalize(world),
                direction: d,
                location: Vec3::ZERO,
                frame,
            })
        }
        _ => None,
    }
}

/// Probes every listed bin at every frame with the model's full path.
pub fn build_history(
    model: &SceneModel,
    scene: &SceneGraph,
    camera: &Camera,
    tracked: &[(Component, BinIndex)],
    bins: usize,
) -> Result<RedundancyHistory> {
    let frames = scene.frame_count;
    let mut history = RedundancyHistory::new(frames);
    let mut per_frame = Vec::with_capacity(frames);
    let mut kept = Vec::new();
    for &(component, bin) in tracked {
        if (0..frames).all(|f| probe_query(scene, camera, component, bin, bins, f).is_some()) {
            kept.push((component, bin));
        }
    }
    for f in 0..frames {
        let queries: Vec<Query> = kept
            .iter()
            .map(|&(c, b)| probe_query(scene, camera, c, b, bins, f).expect("checked above"))
            .collect();
        per_frame.push(model.evaluate(&queries)?);
    }
    for i in 0..kept.len() {
        history.push(
            per_frame
                .iter()
                .map(|samples| {
                    let s = &samples[i];
                    [s.rgb[0], s.rgb[1], s.rgb[2], s.sigma]
                })
                .collect(),
        );
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn history(series: Vec<Vec<[f64; 4]>>) -> RedundancyHistory {
        let mut h = RedundancyHistory::new(series[0].len());
        series.into_iter().for_each(|s| h.push(s));
        h
    }

    #[test]
    fn static_history_is_fully_redundant() {
        let h = history(vec![vec![[0.3, 0.2, 0.1, 0.5]; 5]; 3]);
        assert!(analyze_redundancy(&h, &[1e-9, 0.1, 1.0]).iter().all(|&r| r == 1.0));
    }

    #[test]
    fn ratio_counts_events_below_eps() {
        let h = history(vec![
            vec![[0.0; 4], [0.05, 0.0, 0.0, 0.0], [0.05, 0.0, 0.0, 0.3]],
            vec![[0.0; 4], [0.0; 4], [0.0, 0.0, 0.9, 0.0]],
        ]);
        assert_eq!(h.events(), 4);
        assert_eq!(analyze_redundancy(&h, &[0.01, 0.1, 0.5, 1.0]), vec![0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn csv_and_grid() {
        let g = default_eps_grid();
        assert_eq!(g.len(), 28);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*g.last().unwrap(), 1.0);
        assert_eq!(to_csv(&[0.5], &[0.25]), "epsilon,ratio\n0.5,0.250000\n");
    }
}

use alloc::vec::Vec;

use super::{PlaneStack, Pose};
use crate::math::Vec3;

const PARALLEL_EPS: f64 = 1e-12;

/// Slab test against the pose's box, done in the canonical frame.
///
/// The canonical ray keeps the global ray parameter (its direction is not
/// renormalised), so the returned `(t_near, t_far)` are global distances
/// along a unit `direction`. `t_near` is clamped to zero for origins inside
/// the box.
pub fn ray_box_intersect(origin: Vec3, direction: Vec3, pose: &Pose) -> Option<(f64, f64)> {
    let o = pose.point_to_canonical(origin);
    let d = pose
        .rotation()
        .transpose()
        .mul_vec(direction)
        .div_elem(pose.scale());
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for axis in 0..3 {
        let (oa, da) = (o[axis], d[axis]);
        if da.abs() < PARALLEL_EPS {
            if oa.abs() > 1.0 {
                return None;
            }
            continue;
        }
        let (mut t0, mut t1) = ((-1.0 - oa) / da, (1.0 - oa) / da);
        if t0 > t1 {
            core::mem::swap(&mut t0, &mut t1);
        }
        t_near = t_near.max(t0);
        t_far = t_far.min(t1);
    }
    let t_near = t_near.max(0.0);
    (t_near < t_far).then_some((t_near, t_far))
}

/// Ray parameters of every forward intersection with the plane stack,
/// ascending. Planes parallel to the ray are skipped.
pub fn ray_planes_intersect(origin: Vec3, direction: Vec3, planes: &PlaneStack) -> Vec<f64> {
    let n = planes.normal();
    let dn = direction.dot(n);
    if dn.abs() < PARALLEL_EPS {
        return Vec::new();
    }
    let on = origin.dot(n);
    let mut ts: Vec<f64> = planes
        .offsets()
        .iter()
        .map(|&off| (off - on) / dn)
        .filter(|&t| t >= 0.0)
        .collect();
    ts.sort_by(f64::total_cmp);
    ts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{sqrt, Mat3};

    #[test]
    fn axis_aligned_slab() {
        let hit = ray_box_intersect(Vec3::new(-2.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), &Pose::identity());
        assert_eq!(hit, Some((1.0, 3.0)));
    }

    #[test]
    fn parallel_outside_face_misses() {
        let hit = ray_box_intersect(Vec3::new(-2.0, 1.5, 0.0), Vec3::new(1.0, 0.0, 0.0), &Pose::identity());
        assert_eq!(hit, None);
    }

    #[test]
    fn origin_inside_clamps_near() {
        let hit = ray_box_intersect(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), &Pose::identity()).unwrap();
        assert_eq!(hit, (0.0, 1.0));
    }

    #[test]
    fn box_behind_origin_misses() {
        let hit = ray_box_intersect(Vec3::new(5.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), &Pose::identity());
        assert_eq!(hit, None);
    }

    #[test]
    fn scaled_box_uses_global_distance() {
        let pose = Pose::new(Vec3::new(3.0, 0.0, 0.0), Mat3::IDENTITY, Vec3::new(2.0, 1.0, 1.0)).unwrap();
        let hit = ray_box_intersect(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), &pose).unwrap();
        assert!((hit.0 - 1.0).abs() < 1e-12 && (hit.1 - 5.0).abs() < 1e-12);
    }

    #[test]
    fn perpendicular_planes() {
        let planes = PlaneStack::uniform(1.0, 1.0, 6).unwrap();
        let ts = ray_planes_intersect(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), &planes);
        assert_eq!(ts, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn parallel_ray_hits_no_plane() {
        let planes = PlaneStack::uniform(1.0, 1.0, 6).unwrap();
        assert!(ray_planes_intersect(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), &planes).is_empty());
    }

    #[test]
    fn oblique_ray() {
        let planes = PlaneStack::new(alloc::vec![1.0]).unwrap();
        let d = Vec3::new(1.0, 0.0, 1.0).normalized().unwrap();
        let ts = ray_planes_intersect(Vec3::ZERO, d, &planes);
        assert!((ts[0] - sqrt(2.0)).abs() < 1e-12);
    }

    #[test]
    fn planes_behind_are_dropped() {
        let planes = PlaneStack::new(alloc::vec![-2.0, -1.0, 3.0]).unwrap();
        let ts = ray_planes_intersect(Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0), &planes);
        assert_eq!(ts, [3.0]);
    }
}

//! Pose re-expressed as normalized joint-to-joint vectors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::pose::Pose;
use crate::skeleton::SkeletonSpec;

/// One vector per bone, `(child - parent) / scale`, where `scale` is the
/// diagonal of the pose's tight bounding box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneVectorSet {
    pub vectors: Vec<[f64; 2]>,
    pub scale: f64,
}

impl BoneVectorSet {
    pub fn bone_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.scale.is_finite() && self.vectors.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::input("bone vectors contain non-finite values"))
        }
    }

    /// Flattened `[x0, y0, x1, y1, ...]`.
    pub fn flat(&self) -> Vec<f64> {
        self.vectors.iter().flatten().copied().collect()
    }

    /// Joint positions obtained by accumulating `scale * vector` from `root_at`
    /// down the tree.
    pub fn reconstruct(&self, skel: &SkeletonSpec, root_at: [f64; 2]) -> Vec<[f64; 2]> {
        let mut pos = vec![[0.0; 2]; skel.joint_count()];
        pos[skel.root] = root_at;
        for (&(p, c), v) in skel.bones.iter().zip(&self.vectors) {
            pos[c] = [pos[p][0] + self.scale * v[0], pos[p][1] + self.scale * v[1]];
        }
        pos
    }
}

fn bbox_all(coords: &[[f64; 2]]) -> ([usize; 4], f64, f64) {
    // indices of (min_x, min_y, max_x, max_y); first occurrence wins
    let mut idx = [0usize; 4];
    for (i, c) in coords.iter().enumerate() {
        if c[0] < coords[idx[0]][0] {
            idx[0] = i;
        }
        if c[1] < coords[idx[1]][1] {
            idx[1] = i;
        }
        if c[0] > coords[idx[2]][0] {
            idx[2] = i;
        }
        if c[1] > coords[idx[3]][1] {
            idx[3] = i;
        }
    }
    let w = coords[idx[2]][0] - coords[idx[0]][0];
    let h = coords[idx[3]][1] - coords[idx[1]][1];
    (idx, w, h)
}

/// Converts a pose into its bone vector set.
///
/// Every joint must be valid (all joints are bone endpoints in a tree).
pub fn bone_vectors(pose: &Pose, skel: &SkeletonSpec) -> Result<BoneVectorSet> {
    if pose.joint_count() != skel.joint_count() {
        return Err(Error::input(alloc::format!(
            "pose has {} joints, skeleton {}",
            pose.joint_count(),
            skel.joint_count()
        )));
    }
    pose.check_finite()?;
    if pose.valid.iter().any(|v| !v) {
        return Err(Error::input("bone endpoints must all be valid"));
    }
    let (_, w, h) = bbox_all(&pose.coords);
    let scale = math::hypot(w, h);
    if !(scale > 0.0) {
        return Err(Error::input("degenerate pose: zero bounding-box diagonal"));
    }
    let vectors = skel
        .bones
        .iter()
        .map(|&(p, c)| {
            let (a, b) = (pose.coords[p], pose.coords[c]);
            [(b[0] - a[0]) / scale, (b[1] - a[1]) / scale]
        })
        .collect();
    Ok(BoneVectorSet { vectors, scale })
}

/// Pulls a gradient w.r.t. the bone vectors back to the joint coordinates,
/// including the dependence of the bounding-box scale on the extreme joints.
pub fn bone_vectors_backward(coords: &[[f64; 2]], skel: &SkeletonSpec, set: &BoneVectorSet, grad: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let s = set.scale;
    let mut g = vec![[0.0; 2]; coords.len()];
    // v = (c - p) / s  =>  dv/dc = 1/s, dv/dp = -1/s, dv/ds = -v/s
    let mut gs = 0.0;
    for ((&(p, c), v), gv) in skel.bones.iter().zip(&set.vectors).zip(grad) {
        for d in 0..2 {
            g[c][d] += gv[d] / s;
            g[p][d] -= gv[d] / s;
            gs -= gv[d] * v[d] / s;
        }
    }
    let (idx, w, h) = bbox_all(coords);
    // s = sqrt(w^2 + h^2), w = x[max] - x[min], h = y[max] - y[min]
    g[idx[2]][0] += gs * w / s;
    g[idx[0]][0] -= gs * w / s;
    g[idx[3]][1] += gs * h / s;
    g[idx[1]][1] -= gs * h / s;
    g
}

/// Angle in `[0, pi]` between two 2D vectors; `pi / 2` when either is zero.
pub fn angle_between(a: [f64; 2], b: [f64; 2]) -> f64 {
    let na = math::hypot(a[0], a[1]);
    let nb = math::hypot(b[0], b[1]);
    if na == 0.0 || nb == 0.0 {
        return core::f64::consts::FRAC_PI_2;
    }
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    math::atan2(cross, dot).abs()
}

/// Mean over bones of the angle between corresponding bone directions.
pub fn mean_angular_deviation(a: &BoneVectorSet, b: &BoneVectorSet) -> f64 {
    let m = a.vectors.len();
    if m == 0 {
        return 0.0;
    }
    a.vectors.iter().zip(&b.vectors).map(|(&u, &v)| angle_between(u, v)).sum::<f64>() / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn two_joint() -> SkeletonSpec {
        SkeletonSpec::new(vec!["a".to_string(), "b".to_string()], vec![(0, 1)], vec![], 0, vec![]).unwrap()
    }

    #[test]
    fn three_four_five() {
        let s = two_joint();
        let b = bone_vectors(&Pose::new(vec![[0.0, 0.0], [3.0, 4.0]]), &s).unwrap();
        assert_eq!(b.scale, 5.0);
        assert!((b.vectors[0][0] - 0.6).abs() < 1e-15 && (b.vectors[0][1] - 0.8).abs() < 1e-15);
        let t = bone_vectors(&Pose::new(vec![[17.0, -9.0], [20.0, -5.0]]), &s).unwrap();
        assert_eq!(b, t);
    }

    #[test]
    fn degenerate_pose_is_rejected() {
        let s = two_joint();
        assert!(bone_vectors(&Pose::new(vec![[2.0, 2.0], [2.0, 2.0]]), &s).is_err());
        let p = Pose::with_mask(vec![[0.0, 0.0], [1.0, 1.0]], vec![true, false]).unwrap();
        assert!(bone_vectors(&p, &s).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let skel = SkeletonSpec::default13();
        let coords: Vec<[f64; 2]> = (0..13).map(|i| [(i as f64 * 1.7).sin() * 50.0 + 100.0, (i as f64 * 2.3).cos() * 60.0 + 90.0]).collect();
        let wts: Vec<[f64; 2]> = (0..12).map(|i| [(i as f64).sin(), (i as f64 * 0.5).cos()]).collect();
        let f = |c: &[[f64; 2]]| -> f64 {
            let b = bone_vectors(&Pose::new(c.to_vec()), &skel).unwrap();
            b.vectors.iter().zip(&wts).map(|(v, w)| v[0] * w[0] + v[1] * w[1]).sum()
        };
        let set = bone_vectors(&Pose::new(coords.clone()), &skel).unwrap();
        let g = bone_vectors_backward(&coords, &skel, &set, &wts);
        for j in 0..13 {
            for d in 0..2 {
                let mut c = coords.clone();
                c[j][d] += 1e-6;
                let a = f(&c);
                c[j][d] -= 2e-6;
                let b = f(&c);
                let fd = (a - b) / 2e-6;
                assert!((fd - g[j][d]).abs() < 1e-7, "joint {j} dim {d}: {fd} vs {}", g[j][d]);
            }
        }
    }

    #[test]
    fn angles() {
        assert!((angle_between([1.0, 0.0], [-1.0, 0.0]) - core::f64::consts::PI).abs() < 1e-12);
        assert!((angle_between([1.0, 0.0], [0.0, 2.0]) - core::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(angle_between([1.0, 1.0], [2.0, 2.0]), 0.0);
    }
}

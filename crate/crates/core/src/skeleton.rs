//! Joint topology shared by every other module.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named set of joints reported together as one result-table column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointGroup {
    pub name: String,
    pub joints: Vec<usize>,
}

/// Skeleton topology: `K` named joints joined by `K - 1` bones forming a tree.
///
/// Bones are `(parent, child)` index pairs listed in topological order: every
/// parent is either the root or the child of an earlier bone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub joint_names: Vec<String>,
    pub bones: Vec<(usize, usize)>,
    pub symmetric_pairs: Vec<(usize, usize)>,
    pub root: usize,
    /// Column layout for result tables; the union is the evaluated joint set.
    pub groups: Vec<JointGroup>,
}

const DEFAULT_JOINTS: [&str; 13] = [
    "pelvis",
    "l_shoulder",
    "r_shoulder",
    "l_elbow",
    "r_elbow",
    "l_wrist",
    "r_wrist",
    "l_hip",
    "r_hip",
    "l_knee",
    "r_knee",
    "l_ankle",
    "r_ankle",
];

/// Joint indices of the default skeleton.
pub mod joint {
    pub const PELVIS: usize = 0;
    pub const L_SHOULDER: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const L_ELBOW: usize = 3;
    pub const R_ELBOW: usize = 4;
    pub const L_WRIST: usize = 5;
    pub const R_WRIST: usize = 6;
    pub const L_HIP: usize = 7;
    pub const R_HIP: usize = 8;
    pub const L_KNEE: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const L_ANKLE: usize = 11;
    pub const R_ANKLE: usize = 12;
}

impl SkeletonSpec {
    /// Builds and validates a skeleton.
    pub fn new(
        joint_names: Vec<String>,
        bones: Vec<(usize, usize)>,
        symmetric_pairs: Vec<(usize, usize)>,
        root: usize,
        groups: Vec<JointGroup>,
    ) -> Result<Self> {
        let s = SkeletonSpec { joint_names, bones, symmetric_pairs, root, groups };
        s.validate()?;
        Ok(s)
    }

    /// The 13-joint figure: pelvis root plus shoulders, elbows, wrists, hips,
    /// knees and ankles on both sides. The head is drawn by the synthetic
    /// renderer but is not a keypoint.
    pub fn default13() -> Self {
        use joint::*;
        let names = DEFAULT_JOINTS.iter().map(|s| s.to_string()).collect();
        let bones = vec![
            (PELVIS, L_SHOULDER),
            (PELVIS, R_SHOULDER),
            (L_SHOULDER, L_ELBOW),
            (R_SHOULDER, R_ELBOW),
            (L_ELBOW, L_WRIST),
            (R_ELBOW, R_WRIST),
            (PELVIS, L_HIP),
            (PELVIS, R_HIP),
            (L_HIP, L_KNEE),
            (R_HIP, R_KNEE),
            (L_KNEE, L_ANKLE),
            (R_KNEE, R_ANKLE),
        ];
        let sym = vec![
            (L_SHOULDER, R_SHOULDER),
            (L_ELBOW, R_ELBOW),
            (L_WRIST, R_WRIST),
            (L_HIP, R_HIP),
            (L_KNEE, R_KNEE),
            (L_ANKLE, R_ANKLE),
        ];
        let group = |name: &str, a: usize, b: usize| JointGroup { name: name.to_string(), joints: vec![a, b] };
        let groups = vec![
            group("Sld.", L_SHOULDER, R_SHOULDER),
            group("Elb.", L_ELBOW, R_ELBOW),
            group("Wrist", L_WRIST, R_WRIST),
            group("Hip", L_HIP, R_HIP),
            group("Knee", L_KNEE, R_KNEE),
            group("Ankle", L_ANKLE, R_ANKLE),
        ];
        SkeletonSpec::new(names, bones, sym, PELVIS, groups).expect("default skeleton is valid")
    }

    /// A five-joint chain-and-fork figure used to exercise non-default shapes.
    pub fn five_joint() -> Self {
        let names = ["pelvis", "neck", "head", "l_foot", "r_foot"].iter().map(|s| s.to_string()).collect();
        SkeletonSpec::new(
            names,
            vec![(0, 1), (1, 2), (0, 3), (0, 4)],
            vec![(3, 4)],
            0,
            vec![
                JointGroup { name: "Head".to_string(), joints: vec![2] },
                JointGroup { name: "Foot".to_string(), joints: vec![3, 4] },
            ],
        )
        .expect("five-joint skeleton is valid")
    }

    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn bone_count(&self) -> usize {
        self.bones.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|n| n == name)
    }

    /// Index of the bone whose child is `joint`, if any.
    pub fn bone_into(&self, joint: usize) -> Option<usize> {
        self.bones.iter().position(|&(_, c)| c == joint)
    }

    /// For each bone, the bone ending at its parent joint (`None` at the root).
    pub fn parent_bones(&self) -> Vec<Option<usize>> {
        self.bones.iter().map(|&(p, _)| self.bone_into(p)).collect()
    }

    /// Sorted, de-duplicated union of all group members.
    pub fn evaluated_joints(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.groups.iter().flat_map(|g| g.joints.iter().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.joint_count();
        if k < 2 {
            return Err(Error::config("skeleton needs at least 2 joints"));
        }
        if self.bones.len() != k - 1 {
            return Err(Error::config(alloc::format!("skeleton with {k} joints needs {} bones, got {}", k - 1, self.bones.len())));
        }
        if self.root >= k {
            return Err(Error::config("root index out of range"));
        }
        let mut seen = vec![false; k];
        seen[self.root] = true;
        for &(p, c) in &self.bones {
            if p >= k || c >= k {
                return Err(Error::config(alloc::format!("bone ({p}, {c}) out of range for {k} joints")));
            }
            if !seen[p] {
                return Err(Error::config(alloc::format!(
                    "bone ({p}, {c}): parent not yet connected to the root (bones must be listed root-outward)"
                )));
            }
            if seen[c] {
                return Err(Error::config(alloc::format!("bone ({p}, {c}): joint {c} has two parents or closes a cycle")));
            }
            seen[c] = true;
        }
        for &(a, b) in &self.symmetric_pairs {
            if a >= k || b >= k || a == b {
                return Err(Error::config(alloc::format!("symmetric pair ({a}, {b}) invalid")));
            }
        }
        for g in &self.groups {
            if g.joints.iter().any(|&j| j >= k) {
                return Err(Error::config(alloc::format!("group {} references a joint out of range", g.name)));
            }
        }
        let mut names = self.joint_names.clone();
        names.sort();
        names.dedup();
        if names.len() != k {
            return Err(Error::config("joint names must be unique"));
        }
        Ok(())
    }

    /// Stable 64-bit FNV-1a fingerprint of the topology, used to refuse
    /// mixing checkpoints and datasets built for different skeletons.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for n in &self.joint_names {
            eat(n.as_bytes());
            eat(&[0]);
        }
        for &(p, c) in &self.bones {
            eat(&(p as u32).to_le_bytes());
            eat(&(c as u32).to_le_bytes());
        }
        eat(&(self.root as u32).to_le_bytes());
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_13_joints_and_12_bones() {
        let s = SkeletonSpec::default13();
        assert_eq!(s.joint_count(), 13);
        assert_eq!(s.bone_count(), 12);
        assert_eq!(s.evaluated_joints().len(), 12);
        assert!(!s.evaluated_joints().contains(&s.root));
    }

    #[test]
    fn rejects_cycles_and_bad_counts() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert!(SkeletonSpec::new(names.clone(), vec![(0, 1)], vec![], 0, vec![]).is_err());
        assert!(SkeletonSpec::new(names.clone(), vec![(0, 1), (1, 0)], vec![], 0, vec![]).is_err());
        assert!(SkeletonSpec::new(names.clone(), vec![(1, 2), (0, 1)], vec![], 0, vec![]).is_err());
        assert!(SkeletonSpec::new(names.clone(), vec![(0, 1), (0, 5)], vec![], 0, vec![]).is_err());
        assert!(SkeletonSpec::new(names, vec![(0, 1), (0, 2)], vec![], 0, vec![]).is_ok());
    }

    #[test]
    fn parent_bones_follow_the_tree() {
        let s = SkeletonSpec::default13();
        let pb = s.parent_bones();
        assert_eq!(pb[0], None);
        // l_elbow's bone hangs off the l_shoulder bone
        assert_eq!(pb[2], Some(0));
        assert_eq!(pb[4], Some(2));
    }

    #[test]
    fn fingerprint_distinguishes_topologies() {
        assert_ne!(SkeletonSpec::default13().fingerprint(), SkeletonSpec::five_joint().fingerprint());
        assert_eq!(SkeletonSpec::default13().fingerprint(), SkeletonSpec::default13().fingerprint());
    }
}

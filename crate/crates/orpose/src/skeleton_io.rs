//! Skeleton definitions as TOML text.
//!
//! ```toml
//! version = 1
//! root = "pelvis"
//! joints = ["pelvis", "l_hip", "l_knee"]
//! bones = [["pelvis", "l_hip"], ["l_hip", "l_knee"]]
//! symmetric = []
//!
//! [[groups]]
//! name = "Knee"
//! joints = ["l_knee"]
//! ```

use std::path::Path;

use orpose_core::skeleton::{JointGroup, SkeletonSpec};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

pub const SKELETON_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    version: u32,
    root: String,
    joints: Vec<String>,
    bones: Vec<[String; 2]>,
    #[serde(default)]
    symmetric: Vec<[String; 2]>,
    #[serde(default)]
    groups: Vec<GroupFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroupFile {
    name: String,
    joints: Vec<String>,
}

pub fn to_toml(s: &SkeletonSpec) -> String {
    let name = |i: usize| s.joint_names[i].clone();
    let file = SkeletonFile {
        version: SKELETON_FORMAT_VERSION,
        root: name(s.root),
        joints: s.joint_names.clone(),
        bones: s.bones.iter().map(|&(a, b)| [name(a), name(b)]).collect(),
        symmetric: s.symmetric_pairs.iter().map(|&(a, b)| [name(a), name(b)]).collect(),
        groups: s.groups.iter().map(|g| GroupFile { name: g.name.clone(), joints: g.joints.iter().map(|&j| name(j)).collect() }).collect(),
    };
    toml::to_string(&file).expect("skeleton serializes")
}

pub fn from_toml(text: &str) -> std::result::Result<SkeletonSpec, String> {
    let f: SkeletonFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if f.version != SKELETON_FORMAT_VERSION {
        return Err(format!("unsupported skeleton format version {}", f.version));
    }
    let idx = |n: &str| f.joints.iter().position(|j| j == n).ok_or_else(|| format!("unknown joint name {n:?}"));
    let pairs = |v: &[[String; 2]]| -> std::result::Result<Vec<(usize, usize)>, String> { v.iter().map(|[a, b]| Ok((idx(a)?, idx(b)?))).collect() };
    let groups = f
        .groups
        .iter()
        .map(|g| Ok(JointGroup { name: g.name.clone(), joints: g.joints.iter().map(|j| idx(j)).collect::<std::result::Result<_, String>>()? }))
        .collect::<std::result::Result<Vec<_>, String>>()?;
    SkeletonSpec::new(f.joints.clone(), pairs(&f.bones)?, pairs(&f.symmetric)?, idx(&f.root)?, groups).map_err(|e| e.to_string())
}

pub fn read_skeleton(path: &Path) -> Result<SkeletonSpec> {
    from_toml(&fsutil::read_string(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_skeleton(path: &Path, s: &SkeletonSpec) -> Result<()> {
    fsutil::write_bytes(path, to_toml(s).as_bytes())
}

/// Fingerprint as fixed-width hex, the form stored in manifests and checkpoints.
pub fn fingerprint_hex(s: &SkeletonSpec) -> String {
    format!("{:016x}", s.fingerprint())
}

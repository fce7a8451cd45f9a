//! On-disk dataset splits.
//!
//! ```text
//! <split>/manifest.json      counts, severity histogram, skeleton and generator hashes
//! <split>/samples.jsonl      id, domain, severity, seed, joints (null when withheld)
//! <split>/eval_labels.jsonl  joints of target splits, read only by evaluation
//! <split>/images/00000.png   RGB
//! <split>/silhouettes/00000.png  8-bit mask (0 / 255)
//! ```
//!
//! Adaptation-facing code uses [`read_unlabeled`], which never opens
//! `eval_labels.jsonl`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use orpose_core::pose::Pose;
use orpose_core::skeleton::SkeletonSpec;
use orpose_core::synth::{Domain, DomainStyle, Image, Mask, Sample, SplitSpec};

use serde::{Deserialize, Serialize};

use crate::config::hash_json;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::image_io;
use crate::skeleton_io::fingerprint_hex;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "samples.jsonl";
pub const EVAL_LABELS: &str = "eval_labels.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelAccess {
    /// Poses stored in `samples.jsonl`.
    Records,
    /// Poses only in `eval_labels.jsonl`.
    EvalOnly,
    /// Poses are not written at all.
    Withheld,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub split: String,
    pub domain: Domain,
    pub count: usize,
    pub labels: LabelAccess,
    pub severity_histogram: BTreeMap<u8, usize>,
    pub skeleton_fingerprint: String,
    pub generator_config_hash: String,
    pub generator: SplitSpec,
    pub style: DomainStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: usize,
    pub domain: Domain,
    pub severity: u8,
    pub seed: u64,
    pub joints: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EvalLabel {
    id: usize,
    joints: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    valid: Option<Vec<bool>>,
}

/// A sample as seen by the adaptation loop: no pose.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSample {
    pub id: usize,
    pub image: Image,
    pub silhouette: Mask,
    pub domain: Domain,
    pub severity: u8,
    pub seed: u64,
}

fn image_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("images").join(format!("{id:05}.png"))
}

fn mask_path(dir: &Path, id: usize) -> PathBuf {
    dir.join("silhouettes").join(format!("{id:05}.png"))
}

fn mask_of(p: &Pose) -> Option<Vec<bool>> {
    if p.valid.iter().all(|&v| v) {
        None
    } else {
        Some(p.valid.clone())
    }
}

fn pose_from(path: &Path, joints: Vec<[f64; 2]>, valid: Option<Vec<bool>>) -> Result<Pose> {
    match valid {
        None => Ok(Pose::new(joints)),
        Some(v) => Pose::with_mask(joints, v).map_err(|e| Error::format(path, e)),
    }
}

pub fn generator_hash(spec: &SplitSpec, style: &DomainStyle) -> String {
    hash_json(&(spec, style))
}

/// Generates and writes a split, one sample at a time. With
/// `LabelAccess::EvalOnly` poses go to the separate evaluation file and the
/// records carry `null` joints.
pub fn write_split(dir: &Path, name: &str, spec: &SplitSpec, style: &DomainStyle, skel: &SkeletonSpec, labels: LabelAccess) -> Result<Manifest> {
    if spec.domain != style.name {
        return Err(Error::Config(format!("split {name} is {} but its style is {}", spec.domain.as_str(), style.name.as_str())));
    }
    fsutil::create_dir(dir)?;
    let mut hist = BTreeMap::new();
    let mut records = Vec::with_capacity(spec.count);
    let mut eval = Vec::new();
    for id in 0..spec.count {
        let s = spec.generate_one(style, id)?;
        if s.pose.joint_count() != skel.joint_count() {
            return Err(Error::Config(format!("generator draws {} joints but the skeleton has {}", s.pose.joint_count(), skel.joint_count())));
        }
        *hist.entry(s.severity).or_insert(0) += 1;
        image_io::write_rgb(&image_path(dir, id), &s.image)?;
        image_io::write_mask(&mask_path(dir, id), &s.silhouette)?;
        let (joints, valid) = match labels {
            LabelAccess::Records => (Some(s.pose.coords.clone()), mask_of(&s.pose)),
            LabelAccess::EvalOnly => {
                eval.push(EvalLabel { id, joints: s.pose.coords.clone(), valid: mask_of(&s.pose) });
                (None, None)
            }
            LabelAccess::Withheld => (None, None),
        };
        records.push(Record { id, domain: s.domain, severity: s.severity, seed: s.seed, joints, valid });
    }
    fsutil::write_jsonl(&dir.join(RECORDS), &records)?;
    if labels == LabelAccess::EvalOnly {
        fsutil::write_jsonl(&dir.join(EVAL_LABELS), &eval)?;
    }
    let manifest = Manifest {
        format_version: DATASET_FORMAT_VERSION,
        split: name.to_string(),
        domain: style.name,
        count: spec.count,
        labels,
        severity_histogram: hist,
        skeleton_fingerprint: fingerprint_hex(skel),
        generator_config_hash: generator_hash(spec, style),
        generator: spec.clone(),
        style: style.clone(),
    };
    fsutil::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let m: Manifest = fsutil::read_json(&path)?;
    if m.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(&path, format!("unsupported dataset format version {}", m.format_version)));
    }
    Ok(m)
}

fn read_records(dir: &Path, m: &Manifest) -> Result<Vec<Record>> {
    let path = dir.join(RECORDS);
    let recs: Vec<Record> = fsutil::read_jsonl(&path)?;
    if recs.len() != m.count {
        return Err(Error::format(&path, format!("{} records but the manifest says {}", recs.len(), m.count)));
    }
    for (i, r) in recs.iter().enumerate() {
        if r.id != i {
            return Err(Error::format(&path, format!("record {i} has id {}", r.id)));
        }
    }
    Ok(recs)
}

/// Images, silhouettes and metadata only; never touches the evaluation labels.
pub fn read_unlabeled(dir: &Path) -> Result<(Manifest, Vec<UnlabeledSample>)> {
    let m = read_manifest(dir)?;
    let recs = read_records(dir, &m)?;
    let mut out = Vec::with_capacity(recs.len());
    for r in recs {
        out.push(UnlabeledSample {
            id: r.id,
            image: image_io::read_rgb(&image_path(dir, r.id))?,
            silhouette: image_io::read_mask(&mask_path(dir, r.id))?,
            domain: r.domain,
            severity: r.severity,
            seed: r.seed,
        });
    }
    Ok((m, out))
}

/// Ground-truth poses of a split, from the records or the evaluation file.
pub fn read_poses(dir: &Path) -> Result<Vec<Pose>> {
    let m = read_manifest(dir)?;
    match m.labels {
        LabelAccess::Records => {
            let path = dir.join(RECORDS);
            read_records(dir, &m)?
                .into_iter()
                .map(|r| {
                    let joints = r.joints.ok_or_else(|| Error::format(&path, format!("record {} has no joints", r.id)))?;
                    pose_from(&path, joints, r.valid)
                })
                .collect()
        }
        LabelAccess::EvalOnly => {
            let path = dir.join(EVAL_LABELS);
            if !path.exists() {
                return Err(Error::format(&path, "evaluation label file is missing; this split can be adapted on but not evaluated"));
            }
            let labels: Vec<EvalLabel> = fsutil::read_jsonl(&path)?;
            if labels.len() != m.count {
                return Err(Error::format(&path, format!("{} labels but the manifest says {}", labels.len(), m.count)));
            }
            labels
                .into_iter()
                .enumerate()
                .map(|(i, l)| {
                    if l.id != i {
                        return Err(Error::format(&path, format!("label {i} has id {}", l.id)));
                    }
                    pose_from(&path, l.joints, l.valid)
                })
                .collect()
        }
        LabelAccess::Withheld => Err(Error::Refused(format!("{}: labels of this split are withheld", dir.display()))),
    }
}

/// Full samples including poses (evaluation and source-side loaders).
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let poses = read_poses(dir)?;
    let (_, items) = read_unlabeled(dir)?;
    Ok(items
        .into_iter()
        .zip(poses)
        .map(|(u, pose)| Sample { image: u.image, pose, silhouette: u.silhouette, domain: u.domain, severity: u.severity, seed: u.seed })
        .collect())
}

/// Refuses a split whose skeleton does not match.
pub fn check_skeleton(dir: &Path, skel: &SkeletonSpec) -> Result<()> {
    let m = read_manifest(dir)?;
    let want = fingerprint_hex(skel);
    if m.skeleton_fingerprint != want {
        return Err(Error::Refused(format!(
            "skeleton mismatch: {} was generated for skeleton {} but {} is configured",
            dir.display(),
            m.skeleton_fingerprint,
            want
        )));
    }
    Ok(())
}

/// One image of a split, without reading anything else.
pub fn read_image(dir: &Path, id: usize) -> Result<Image> {
    image_io::read_rgb(&image_path(dir, id))
}

pub fn read_silhouette(dir: &Path, id: usize) -> Result<Mask> {
    image_io::read_mask(&mask_path(dir, id))
}

/// Per-sample severities from the records (no label access).
pub fn read_severities(dir: &Path) -> Result<Vec<u8>> {
    let m = read_manifest(dir)?;
    Ok(read_records(dir, &m)?.into_iter().map(|r| r.severity).collect())
}

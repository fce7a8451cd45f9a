//! Binary checkpoints.
//!
//! ```text
//! magic  8 bytes  "ORPOSECK"
//! u32 LE          format version
//! u64 LE          header length
//! header          JSON (kind, architecture, skeleton fingerprint, ...)
//! body            little-endian tensors listed in the header, in order
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use orpose_core::nn::{ArchSpec, PoseNet};
use orpose_core::optim::{Adam, AdamConfig};
use orpose_core::prior::{PriorArch, PriorModel};
use orpose_core::rng::SeededRng;
use orpose_core::skeleton::SkeletonSpec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::skeleton_io::fingerprint_hex;

pub const MAGIC: &[u8; 8] = b"ORPOSECK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OptimHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Header {
    PoseNet {
        arch: ArchSpec,
        skeleton_fingerprint: String,
        param_count: usize,
        optimizer: Option<OptimHeader>,
        /// JSON of the sampler state, kept as a string because it holds 128-bit words.
        rng: Option<String>,
        meta: BTreeMap<String, String>,
    },
    Prior {
        arch: PriorArch,
        skeleton_fingerprint: String,
        param_count: usize,
        meta: BTreeMap<String, String>,
    },
}

/// Pose network weights plus the state needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct NetCheckpoint {
    pub arch: ArchSpec,
    pub skeleton_fingerprint: String,
    pub params: Vec<f32>,
    pub optimizer: Option<Adam>,
    pub rng: Option<SeededRng>,
    pub meta: BTreeMap<String, String>,
}

impl NetCheckpoint {
    pub fn new(net: &PoseNet<f32>, skel: &SkeletonSpec) -> Self {
        NetCheckpoint {
            arch: net.arch.clone(),
            skeleton_fingerprint: fingerprint_hex(skel),
            params: net.params.clone(),
            optimizer: None,
            rng: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn network(&self) -> Result<PoseNet<f32>> {
        Ok(PoseNet::with_params(self.arch.clone(), self.params.clone())?)
    }

    /// Refuses use with a different skeleton than the one trained on.
    pub fn check_skeleton(&self, skel: &SkeletonSpec, what: &str) -> Result<()> {
        let want = fingerprint_hex(skel);
        if self.skeleton_fingerprint != want {
            return Err(Error::Refused(format!(
                "skeleton mismatch: checkpoint is for skeleton {} but {what} uses {want}",
                self.skeleton_fingerprint
            )));
        }
        Ok(())
    }
}

fn push_f32(out: &mut Vec<u8>, v: &[f32]) {
    out.reserve(v.len() * 4);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn push_f64(out: &mut Vec<u8>, v: &[f64]) {
    out.reserve(v.len() * 8);
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn encode(header: &Header, body: Vec<u8>) -> Vec<u8> {
    let h = serde_json::to_vec(header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(20 + h.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(h.len() as u64).to_le_bytes());
    out.extend_from_slice(&h);
    out.extend_from_slice(&body);
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::format(self.path, "checkpoint is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self.take(n * 4)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(self.path, "trailing bytes after checkpoint body"));
        }
        Ok(())
    }
}

fn decode<'a>(path: &'a Path, bytes: &'a [u8]) -> Result<(Header, Reader<'a>)> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(8).ok() != Some(&MAGIC[..]) {
        return Err(Error::format(path, "not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(r.take(8)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(path, format!("bad checkpoint header: {e}")))?;
    Ok((header, r))
}

pub fn net_to_bytes(c: &NetCheckpoint) -> Vec<u8> {
    let header = Header::PoseNet {
        arch: c.arch.clone(),
        skeleton_fingerprint: c.skeleton_fingerprint.clone(),
        param_count: c.params.len(),
        optimizer: c.optimizer.as_ref().map(|o| OptimHeader { config: o.config.clone(), step: o.step }),
        rng: c.rng.as_ref().map(|r| serde_json::to_string(r).expect("rng state serializes")),
        meta: c.meta.clone(),
    };
    let mut body = Vec::new();
    push_f32(&mut body, &c.params);
    if let Some(o) = &c.optimizer {
        push_f32(&mut body, &o.m);
        push_f32(&mut body, &o.v);
    }
    encode(&header, body)
}

pub fn net_from_bytes(path: &Path, bytes: &[u8]) -> Result<NetCheckpoint> {
    let (header, mut r) = decode(path, bytes)?;
    let Header::PoseNet { arch, skeleton_fingerprint, param_count, optimizer, rng, meta } = header else {
        return Err(Error::format(path, "expected a pose network checkpoint, found a prior checkpoint"));
    };
    let params = r.f32s(param_count)?;
    let optimizer = match optimizer {
        Some(h) => {
            let mut a = Adam::new(h.config, param_count);
            a.step = h.step;
            a.m = r.f32s(param_count)?;
            a.v = r.f32s(param_count)?;
            Some(a)
        }
        None => None,
    };
    r.finish()?;
    let rng = match rng {
        Some(s) => Some(serde_json::from_str(&s).map_err(|e| Error::format(path, format!("bad rng state: {e}")))?),
        None => None,
    };
    let c = NetCheckpoint { arch, skeleton_fingerprint, params, optimizer, rng, meta };
    // catches a header whose architecture disagrees with the stored tensor
    c.network().map_err(|e| Error::format(path, e))?;
    Ok(c)
}

pub fn save_net(path: &Path, c: &NetCheckpoint) -> Result<()> {
    fsutil::write_bytes(path, &net_to_bytes(c))
}

pub fn load_net(path: &Path) -> Result<NetCheckpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    net_from_bytes(path, &bytes)
}

pub fn prior_to_bytes(p: &PriorModel, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let header = Header::Prior {
        arch: p.arch.clone(),
        skeleton_fingerprint: format!("{:016x}", p.skeleton_fingerprint),
        param_count: p.params.len(),
        meta: meta.clone(),
    };
    let mut body = Vec::new();
    push_f64(&mut body, &p.params);
    encode(&header, body)
}

/// Loads a prior for `skel`, refusing one trained on another skeleton.
pub fn prior_from_bytes(path: &Path, bytes: &[u8], skel: &SkeletonSpec) -> Result<PriorModel> {
    let (header, mut r) = decode(path, bytes)?;
    let Header::Prior { arch, skeleton_fingerprint, param_count, .. } = header else {
        return Err(Error::format(path, "expected a prior checkpoint, found a pose network checkpoint"));
    };
    let want = fingerprint_hex(skel);
    if skeleton_fingerprint != want {
        return Err(Error::Refused(format!("skeleton mismatch: prior {} is for skeleton {skeleton_fingerprint}, configured {want}", path.display())));
    }
    let params = r.f64s(param_count)?;
    r.finish()?;
    PriorModel::with_params(skel, arch, params).map_err(|e| Error::format(path, e))
}

pub fn save_prior(path: &Path, p: &PriorModel, meta: &BTreeMap<String, String>) -> Result<()> {
    fsutil::write_bytes(path, &prior_to_bytes(p, meta))
}

pub fn load_prior(path: &Path, skel: &SkeletonSpec) -> Result<PriorModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    prior_from_bytes(path, &bytes, skel)
}

//! Experiment configuration (TOML, versioned).
//!
//! Every field has a default, so an empty file (or no file) is a valid
//! config. Seed fields inside the sections are not used directly: each run
//! derives them from its run seed, see [`ExperimentConfig::for_seed`].
//!
//! ```toml
//! version = 1
//! seeds = [0, 1, 2]
//! out = "runs"
//!
//! [data]
//! source_count = 2000
//! target_adapt_count = 2000
//!
//! [adapt]
//! epochs = 6
//! tau = 0.5
//! ```

use std::path::{Path, PathBuf};

use orpose_core::adapt::AdaptConfig;
use orpose_core::nn::ArchSpec;
use orpose_core::prior::{NegativeConfig, PriorArch, PriorTrainConfig};
use orpose_core::rng::mix;
use orpose_core::skeleton::SkeletonSpec;
use orpose_core::synth::{DomainStyle, SeverityMix};
use orpose_core::train::PretrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::skeleton_io;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Skeleton definition file; the built-in 13-joint figure when absent.
    pub skeleton: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub data: DataConfig,
    /// Network layout; derived from the skeleton when absent.
    pub net: Option<ArchSpec>,
    pub pretrain: PretrainConfig,
    pub prior: PriorConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            version: CONFIG_VERSION,
            skeleton: None,
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
            data: DataConfig::default(),
            net: None,
            pretrain: PretrainConfig::default(),
            prior: PriorConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source_count: usize,
    /// Occluded source preview split.
    pub preview_count: usize,
    pub target_adapt_count: usize,
    pub target_eval_count: usize,
    pub target_severity: SeverityMix,
    pub preview_severity: SeverityMix,
    /// Also write one target-eval variant per severity 1..5.
    pub severity_sweep: bool,
    /// Samples per sweep variant; the variants share poses and scenes.
    pub sweep_count: usize,
    pub source_style: DomainStyle,
    pub target_style: DomainStyle,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source_count: 2000,
            preview_count: 200,
            target_adapt_count: 2000,
            target_eval_count: 500,
            target_severity: SeverityMix::Uniform { min: 1, max: 5 },
            preview_severity: SeverityMix::Uniform { min: 1, max: 5 },
            severity_sweep: true,
            sweep_count: 500,
            source_style: DomainStyle::source(),
            target_style: DomainStyle::target(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub arch: PriorArch,
    pub train: PriorTrainConfig,
    pub negatives: NegativeConfig,
    /// Occluded source images scored with the pretrained network.
    pub prediction_negatives: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { arch: PriorArch::default(), train: PriorTrainConfig::default(), negatives: NegativeConfig::default(), prediction_negatives: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Best-N and worst-N overlays written by `evaluate`.
    pub overlays: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { overlays: 4 }
    }
}

/// Per-run seeds, all derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub source: u64,
    pub preview: u64,
    pub target_adapt: u64,
    pub target_eval: u64,
    pub net_init: u64,
    pub pretrain: u64,
    pub prior_init: u64,
    pub prior_train: u64,
    pub negatives: u64,
    pub prediction_negatives: u64,
    pub adapt: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        let s = |salt| mix(seed, salt);
        RunSeeds {
            source: s(1),
            preview: s(2),
            target_adapt: s(3),
            target_eval: s(4),
            net_init: s(5),
            pretrain: s(6),
            prior_init: s(7),
            prior_train: s(8),
            negatives: s(9),
            prediction_negatives: s(10),
            adapt: s(11),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative skeleton paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&fsutil::read_string(path)?).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })?;
        if let (Some(s), Some(dir)) = (&cfg.skeleton, path.parent()) {
            if s.is_relative() {
                cfg.skeleton = Some(dir.join(s));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        let d = &self.data;
        if d.source_count < 2 || d.target_adapt_count == 0 || d.target_eval_count == 0 {
            return Err(Error::Config("source needs >= 2 samples and target splits must be non-empty".into()));
        }
        self.adapt.validate()?;
        Ok(())
    }

    pub fn skeleton(&self) -> Result<SkeletonSpec> {
        match &self.skeleton {
            Some(p) => skeleton_io::read_skeleton(p),
            None => Ok(SkeletonSpec::default13()),
        }
    }

    pub fn arch(&self, skel: &SkeletonSpec) -> Result<ArchSpec> {
        let a = self.net.clone().unwrap_or_else(|| ArchSpec::default_for(skel.joint_count()));
        if a.joints != skel.joint_count() {
            return Err(Error::Config(format!("net has {} joints but the skeleton has {}", a.joints, skel.joint_count())));
        }
        a.validate()?;
        Ok(a)
    }

    /// A copy with every section seed derived from `seed`.
    pub fn for_seed(&self, seed: u64) -> (ExperimentConfig, RunSeeds) {
        let s = RunSeeds::new(seed);
        let mut c = self.clone();
        c.seeds = vec![seed];
        c.pretrain.seed = s.pretrain;
        c.prior.train.seed = s.prior_train;
        c.prior.negatives.seed = s.negatives;
        c.adapt.seed = s.adapt;
        (c, s)
    }

    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// SHA-256 of the compact JSON encoding, hex.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(&bytes))
}

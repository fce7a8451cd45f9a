//! Experiment stages shared by the CLI and the end-to-end tests.
//!
//! ```text
//! <out>/seed-<s>/data/{source,source_occluded,target_adapt,target_eval,target_eval_sev1..5}
//! <out>/seed-<s>/pretrain/   model.ckpt metrics.csv summary.json config.toml
//! <out>/seed-<s>/prior/      prior.ckpt samples.jsonl metrics.csv report.json config.toml
//! <out>/seed-<s>/adapt/<v>/  best.ckpt last.ckpt student.ckpt steps.csv epochs.csv summary.json config.toml
//! <out>/seed-<s>/eval/<name>/ table.csv table.txt records.jsonl overlays/
//! <out>/seed-<s>/ablation.{csv,txt} severity.{csv,txt}
//! <out>/ablation.{csv,txt} severity.{csv,txt} report/
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use orpose_core::adapt::{adapt, AdaptInputs, AdaptVariant, EpochLog, EvalSet, SourceItem, StepLog, TargetItem, TeacherStudentPair};
use orpose_core::bones::bone_vectors;
use orpose_core::metrics::PckResult;
use orpose_core::nn::{prepare_input, PoseNet, Workspace};
use orpose_core::pose::Pose;
use orpose_core::prior::{model_prediction_negative, train_prior, vonmises_negatives, PriorModel, PriorSample, PriorTrainReport};
use orpose_core::rng::mix;
use orpose_core::skeleton::SkeletonSpec;
use orpose_core::synth::{occlude, Domain, OcclusionSpec, SeverityMix, SplitSpec, IMAGE_SIZE};
use orpose_core::train::{predict_pose, pretrain_source, Labeled, PretrainEpoch, PCK_ALPHA};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, NetCheckpoint};
use crate::config::{hash_json, ExperimentConfig, RunSeeds};
use crate::dataset::{self, LabelAccess, Manifest};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::negatives;
use crate::plot::{LineChart, Series};
use crate::report::{pck_from_records, winners_by_severity, write_overlays, Flags, ResultRow, ResultTable, SampleRecord};

pub const SPLIT_SOURCE: &str = "source";
pub const SPLIT_PREVIEW: &str = "source_occluded";
pub const SPLIT_TARGET_ADAPT: &str = "target_adapt";
pub const SPLIT_TARGET_EVAL: &str = "target_eval";
pub const SOURCE_ONLY: &str = "source_only";
pub const SEVERITIES: [u8; 5] = [1, 2, 3, 4, 5];

pub fn sweep_split(severity: u8) -> String {
    format!("target_eval_sev{severity}")
}

pub fn parse_variant(s: &str) -> Result<AdaptVariant> {
    AdaptVariant::ALL
        .into_iter()
        .find(|v| v.as_str() == s || v.as_str().replace('_', "-") == s)
        .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected mean_teacher, with_prior or full)")))
}

pub fn variant_flags(v: Option<AdaptVariant>) -> Flags {
    match v {
        None => Flags::default(),
        Some(AdaptVariant::MeanTeacher) => Flags { src_ocl: true, pred: true, ant: false, vis: false },
        Some(AdaptVariant::WithPrior) => Flags { src_ocl: true, pred: true, ant: true, vis: false },
        Some(AdaptVariant::Full) => Flags { src_ocl: true, pred: true, ant: true, vis: true },
    }
}

/// Progress sink; the CLI prints to stderr, tests usually discard.
pub type Log<'a> = &'a mut dyn FnMut(&str);

#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(out: &Path, seed: u64) -> Self {
        RunPaths { root: out.join(format!("seed-{seed}")) }
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn split(&self, name: &str) -> PathBuf {
        self.data().join(name)
    }
    pub fn pretrain(&self) -> PathBuf {
        self.root.join("pretrain")
    }
    pub fn pretrain_ckpt(&self) -> PathBuf {
        self.pretrain().join("model.ckpt")
    }
    pub fn prior(&self) -> PathBuf {
        self.root.join("prior")
    }
    pub fn prior_ckpt(&self) -> PathBuf {
        self.prior().join("prior.ckpt")
    }
    pub fn adapt(&self, v: AdaptVariant) -> PathBuf {
        self.root.join("adapt").join(v.as_str())
    }
    pub fn eval(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(name)
    }
}

/// One seed of an experiment: the seeded config, skeleton and directories.
#[derive(Debug, Clone)]
pub struct Run {
    pub seed: u64,
    pub cfg: ExperimentConfig,
    pub seeds: RunSeeds,
    pub skel: SkeletonSpec,
    pub paths: RunPaths,
}

impl Run {
    pub fn new(base: &ExperimentConfig, seed: u64) -> Result<Self> {
        base.validate()?;
        let (cfg, seeds) = base.for_seed(seed);
        let skel = cfg.skeleton()?;
        cfg.arch(&skel)?;
        let paths = RunPaths::new(&cfg.out, seed);
        Ok(Run { seed, cfg, seeds, skel, paths })
    }

    fn snapshot(&self, dir: &Path) -> Result<()> {
        fsutil::write_bytes(&dir.join("config.toml"), self.cfg.to_toml()?.as_bytes())
    }
}

fn require(path: &Path, what: &str, cmd: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Refused(format!("{what} not found at {} (run `{cmd}` first)", path.display())))
    }
}

/// Split recipes for a run, in generation order.
pub fn split_plan(run: &Run) -> Vec<(String, SplitSpec, LabelAccess)> {
    let d = &run.cfg.data;
    let s = &run.seeds;
    let mut plan = vec![
        (SPLIT_SOURCE.to_string(), SplitSpec { domain: Domain::Source, count: d.source_count, severity: SeverityMix::Fixed { severity: 0 }, seed: s.source }, LabelAccess::Records),
        (SPLIT_PREVIEW.to_string(), SplitSpec { domain: Domain::Source, count: d.preview_count, severity: d.preview_severity, seed: s.preview }, LabelAccess::Records),
        (SPLIT_TARGET_ADAPT.to_string(), SplitSpec { domain: Domain::Target, count: d.target_adapt_count, severity: d.target_severity, seed: s.target_adapt }, LabelAccess::Withheld),
        (SPLIT_TARGET_EVAL.to_string(), SplitSpec { domain: Domain::Target, count: d.target_eval_count, severity: d.target_severity, seed: s.target_eval }, LabelAccess::EvalOnly),
    ];
    if d.severity_sweep {
        // one seed for all levels: same figures and scenes, only the occluders grow
        let sweep_seed = mix(s.target_eval, 0x5eed);
        for sev in SEVERITIES {
            plan.push((sweep_split(sev), SplitSpec { domain: Domain::Target, count: d.sweep_count, severity: SeverityMix::Fixed { severity: sev }, seed: sweep_seed }, LabelAccess::EvalOnly));
        }
    }
    plan
}

pub fn generate(run: &Run, log: Log) -> Result<Vec<Manifest>> {
    let mut out = Vec::new();
    for (name, spec, labels) in split_plan(run) {
        let style = match spec.domain {
            Domain::Source => &run.cfg.data.source_style,
            Domain::Target => &run.cfg.data.target_style,
        };
        log(&format!("seed {}: generating {name} ({} samples)", run.seed, spec.count));
        out.push(dataset::write_split(&run.paths.split(&name), &name, &spec, style, &run.skel, labels)?);
    }
    Ok(out)
}

fn labeled_inputs(dir: &Path, pool: usize) -> Result<Vec<Labeled>> {
    let poses = dataset::read_poses(dir)?;
    poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let img = dataset::read_image(dir, i)?;
            Ok(Labeled { input: prepare_input(&img.data, img.height, img.width, pool), pose })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRow {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub source_pck: f64,
}

impl From<&PretrainEpoch> for PretrainRow {
    fn from(e: &PretrainEpoch) -> Self {
        PretrainRow { epoch: e.epoch, loss: e.loss, lr: e.lr, source_pck: e.holdout_pck }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainSummary {
    pub best_epoch: usize,
    pub best_holdout_pck: f64,
    pub first_epoch_loss: f64,
    pub final_epoch_loss: f64,
    pub param_count: usize,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    fsutil::write_bytes(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fsutil::read_string(path)?;
    csv::Reader::from_reader(text.as_bytes()).deserialize().map(|r| r.map_err(|e| Error::format(path, e))).collect()
}

pub fn pretrain(run: &Run, log: Log) -> Result<PretrainSummary> {
    let src = run.paths.split(SPLIT_SOURCE);
    require(&src, "source split", "generate")?;
    dataset::check_skeleton(&src, &run.skel)?;
    let arch = run.cfg.arch(&run.skel)?;
    let data = labeled_inputs(&src, arch.input_pool)?;
    let mut net = PoseNet::new(arch, run.seeds.net_init)?;
    log(&format!("seed {}: pretraining on {} source samples ({} parameters)", run.seed, data.len(), net.param_count()));
    let joints = run.skel.evaluated_joints();
    let seed = run.seed;
    let out = pretrain_source(&mut net, &data, &run.cfg.pretrain, Some(&joints), |e| {
        log(&format!("seed {seed}: pretrain epoch {} loss {:.6} lr {:.2e} holdout pck {:.4}", e.epoch, e.loss, e.lr, e.holdout_pck))
    })?;
    let dir = run.paths.pretrain();
    let rows: Vec<PretrainRow> = out.log.iter().map(PretrainRow::from).collect();
    write_csv(&dir.join("metrics.csv"), &rows)?;
    let mut ck = NetCheckpoint::new(&net, &run.skel);
    ck.optimizer = Some(out.optimizer.clone());
    ck.rng = Some(out.rng.clone());
    ck.meta.insert("stage".into(), "pretrain".into());
    ck.meta.insert("best_epoch".into(), out.best_epoch.to_string());
    ck.meta.insert("config_hash".into(), run.cfg.hash());
    checkpoint::save_net(&run.paths.pretrain_ckpt(), &ck)?;
    let summary = PretrainSummary {
        best_epoch: out.best_epoch,
        best_holdout_pck: out.best_pck,
        first_epoch_loss: rows.first().map_or(f64::NAN, |r| r.loss),
        final_epoch_loss: rows.last().map_or(f64::NAN, |r| r.loss),
        param_count: net.param_count(),
    };
    fsutil::write_json(&dir.join("summary.json"), &summary)?;
    run.snapshot(&dir)?;
    Ok(summary)
}

/// Plausible poses, von Mises negatives and (with a network) scored
/// predictions on occluded source images.
pub fn prior_samples(run: &Run, net: Option<&PoseNet<f32>>, log: Log) -> Result<Vec<PriorSample>> {
    let src = run.paths.split(SPLIT_SOURCE);
    require(&src, "source split", "generate")?;
    dataset::check_skeleton(&src, &run.skel)?;
    let poses = dataset::read_poses(&src)?;
    let mut samples: Vec<PriorSample> = poses.iter().map(|p| Ok(PriorSample::plausible(bone_vectors(p, &run.skel)?))).collect::<Result<_>>()?;
    samples.extend(vonmises_negatives(&poses, &run.skel, &run.cfg.prior.negatives)?);
    let count = run.cfg.prior.prediction_negatives;
    if let (Some(net), true) = (net, count > 0) {
        log(&format!("seed {}: scoring {count} occluded source predictions", run.seed));
        let mix_sev = SeverityMix::Uniform { min: 1, max: 5 };
        let mut ws = Workspace::new();
        for i in 0..count {
            let id = i % poses.len();
            let (img, fig) = (dataset::read_image(&src, id)?, dataset::read_silhouette(&src, id)?);
            let sev = mix_sev.severity_for(run.seeds.prediction_negatives, i);
            let (occ, _) = occlude(&img, &fig, &OcclusionSpec::severity(sev), mix(run.seeds.prediction_negatives, i as u64))?;
            let x = prepare_input(&occ.data, occ.height, occ.width, net.arch.input_pool);
            if let Some(s) = model_prediction_negative(net, &x, &poses[id], &run.skel, &mut ws)? {
                samples.push(s);
            }
        }
    }
    Ok(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSummary {
    pub report: PriorTrainReport,
    pub sample_counts: BTreeMap<String, usize>,
    pub param_count: usize,
    pub param_hash: String,
}

pub fn prior_param_hash(p: &PriorModel) -> String {
    hash_json(&p.params.iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
}

pub fn train_prior_stage(run: &Run, log: Log) -> Result<(PriorModel, PriorSummary)> {
    let net = if run.cfg.prior.prediction_negatives > 0 {
        let path = run.paths.pretrain_ckpt();
        if !path.exists() {
            return Err(Error::Refused(format!(
                "prediction negatives need the pretrained checkpoint at {} (run `pretrain` first or set prior.prediction_negatives = 0)",
                path.display()
            )));
        }
        let ck = checkpoint::load_net(&path)?;
        ck.check_skeleton(&run.skel, "this config")?;
        Some(ck.network()?)
    } else {
        None
    };
    let samples = prior_samples(run, net.as_ref(), log)?;
    let dir = run.paths.prior();
    negatives::write_samples(&dir.join("samples.jsonl"), &samples)?;
    let mut prior = PriorModel::new(&run.skel, run.cfg.prior.arch.clone(), run.seeds.prior_init);
    log(&format!("seed {}: training prior on {} samples", run.seed, samples.len()));
    let report = train_prior(&mut prior, &samples, &run.cfg.prior.train)?;
    log(&format!("seed {}: prior holdout mse {:.5} (target variance {:.5})", run.seed, report.holdout_mse, report.holdout_d_variance));
    write_csv(&dir.join("metrics.csv"), &report.epochs)?;
    let meta = BTreeMap::from([("config_hash".to_string(), run.cfg.hash())]);
    checkpoint::save_prior(&run.paths.prior_ckpt(), &prior, &meta)?;
    let sample_counts = negatives::provenance_counts(&samples).iter().map(|(p, n)| (format!("{p:?}"), *n)).collect();
    let summary = PriorSummary { report, sample_counts, param_count: prior.param_count(), param_hash: prior_param_hash(&prior) };
    fsutil::write_json(&dir.join("report.json"), &summary)?;
    run.snapshot(&dir)?;
    Ok((prior, summary))
}

/// Loads the labeled evaluation split, or `None` with a reason when its
/// labels cannot be read.
pub fn load_eval_set(dir: &Path, skel: &SkeletonSpec, pool: usize) -> Result<std::result::Result<EvalSet, String>> {
    let poses = match dataset::read_poses(dir) {
        Ok(p) => p,
        Err(e @ (Error::Format { .. } | Error::Io { .. } | Error::Refused(_))) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e),
    };
    let severities = dataset::read_severities(dir)?;
    let items = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let img = dataset::read_image(dir, i)?;
            Ok(Labeled { input: prepare_input(&img.data, img.height, img.width, pool), pose })
        })
        .collect::<Result<_>>()?;
    Ok(Ok(EvalSet { items, severities, joints: skel.evaluated_joints() }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub src_ocl: f64,
    pub ant: f64,
    pub pred_vis: f64,
    pub pred: f64,
    pub gamma: f64,
    pub vis: f64,
    pub total: f64,
    pub kept_fraction: f64,
    pub ant_degenerate: usize,
    pub vis_degenerate: bool,
}

impl From<&StepLog> for StepRow {
    fn from(s: &StepLog) -> Self {
        let l = &s.loss;
        StepRow {
            epoch: s.epoch,
            step: s.step,
            lr: s.lr,
            src_ocl: l.src_ocl,
            ant: l.ant,
            pred_vis: l.pred_vis,
            pred: l.pred,
            gamma: l.gamma,
            vis: l.vis,
            total: l.total,
            kept_fraction: s.kept_fraction,
            ant_degenerate: s.ant_degenerate,
            vis_degenerate: s.vis_degenerate,
        }
    }
}

fn epoch_rows(epochs: &[EpochLog], skel: &SkeletonSpec) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<String> = ["epoch", "gamma", "lr", "mean_loss", "role", "mean"].map(String::from).to_vec();
    head.extend(skel.joint_names.iter().cloned());
    head.extend(SEVERITIES.map(|s| format!("sev{s}")));
    let err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(&head).map_err(err)?;
    for e in epochs {
        let base = [e.epoch.to_string(), e.gamma.to_string(), e.lr.to_string(), e.mean_loss.to_string()];
        let reports = [("teacher", &e.teacher), ("student", &e.student)];
        if reports.iter().all(|(_, r)| r.is_none()) {
            let mut rec: Vec<String> = base.to_vec();
            rec.push("none".into());
            rec.resize(head.len(), String::new());
            w.write_record(&rec).map_err(err)?;
        }
        for (role, r) in reports {
            let Some(r) = r else { continue };
            let mut rec: Vec<String> = base.to_vec();
            rec.push(role.into());
            rec.push(r.mean.to_string());
            rec.extend(r.overall.fractions().iter().map(|f| f.map(|v| v.to_string()).unwrap_or_default()));
            rec.extend(SEVERITIES.map(|s| r.by_severity.iter().find(|(l, _)| *l == s).map(|(_, v)| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).map_err(err)?;
        }
    }
    String::from_utf8(w.into_inner().map_err(|e| Error::Config(e.to_string()))?).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    pub variant: String,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
    pub eval_available: bool,
    pub warnings: Vec<String>,
    pub prior_param_hash: Option<String>,
}

/// Runs one adaptation variant and writes its run directory.
///
/// Never reads the target-adapt labels (they are not on disk) and reads the
/// evaluation labels only through [`load_eval_set`]; when those are missing
/// the run continues without per-epoch evaluation and keeps the last teacher.
pub fn adapt_stage(run: &Run, variant: AdaptVariant, log: Log) -> Result<AdaptSummary> {
    let ckpt_path = run.paths.pretrain_ckpt();
    require(&ckpt_path, "pretrained checkpoint", "pretrain")?;
    let ck = checkpoint::load_net(&ckpt_path)?;
    ck.check_skeleton(&run.skel, "this config")?;
    let net = ck.network()?;
    let pool = net.arch.input_pool;

    let src = run.paths.split(SPLIT_SOURCE);
    let tgt = run.paths.split(SPLIT_TARGET_ADAPT);
    for d in [&src, &tgt] {
        require(d, "dataset split", "generate")?;
        dataset::check_skeleton(d, &run.skel)?;
    }
    let poses = dataset::read_poses(&src)?;
    let source: Vec<SourceItem> = poses
        .into_iter()
        .enumerate()
        .map(|(i, pose)| Ok(SourceItem { image: dataset::read_image(&src, i)?, figure: dataset::read_silhouette(&src, i)?, pose }))
        .collect::<Result<_>>()?;
    let (_, unlabeled) = dataset::read_unlabeled(&tgt)?;
    let target: Vec<TargetItem> = unlabeled
        .iter()
        .map(|u| TargetItem { input: prepare_input(&u.image.data, u.image.height, u.image.width, pool), visible: u.silhouette.count() })
        .collect();
    drop(unlabeled);

    let mut warnings = Vec::new();
    let eval = match load_eval_set(&run.paths.split(SPLIT_TARGET_EVAL), &run.skel, pool)? {
        Ok(e) => Some(e),
        Err(why) => {
            let w = format!("no per-epoch evaluation: {why}");
            log(&format!("seed {}: warning: {w}", run.seed));
            warnings.push(w);
            None
        }
    };
    let prior = if variant.uses_prior() {
        require(&run.paths.prior_ckpt(), "prior checkpoint", "train-prior")?;
        Some(checkpoint::load_prior(&run.paths.prior_ckpt(), &run.skel)?)
    } else {
        None
    };
    let prior_hash = prior.as_ref().map(prior_param_hash);

    let cfg = variant.configure(&run.cfg.adapt);
    let mut pair = TeacherStudentPair::from_source(&net, cfg.alpha);
    let inputs = AdaptInputs { source: &source, target: &target, prior: prior.as_ref(), skeleton: &run.skel, eval: eval.as_ref() };
    let dir = run.paths.adapt(variant);
    run.snapshot(&dir)?;
    let tag = format!("seed {} {}", run.seed, variant.as_str());
    log(&format!("{tag}: adapting ({} target, {} source samples)", target.len(), source.len()));
    let mut steps = Vec::new();
    let result = adapt(
        &mut pair,
        &inputs,
        &cfg,
        |s| steps.push(StepRow::from(s)),
        |e| {
            let t = e.teacher.as_ref().map_or("-".to_string(), |r| format!("{:.4}", r.mean));
            let s = e.student.as_ref().map_or("-".to_string(), |r| format!("{:.4}", r.mean));
            log(&format!("{tag}: epoch {} gamma {:.4} loss {:.6} teacher pck {t} student pck {s}", e.epoch, e.gamma, e.mean_loss));
        },
    );
    write_csv(&dir.join("steps.csv"), &steps)?;
    let save = |name: &str, params: &[f32], extra: Option<&orpose_core::optim::Adam>| {
        let mut c = NetCheckpoint::new(&pair.teacher, &run.skel);
        c.params = params.to_vec();
        c.optimizer = extra.cloned();
        c.meta.insert("stage".into(), format!("adapt/{}", variant.as_str()));
        c.meta.insert("config_hash".into(), run.cfg.hash());
        checkpoint::save_net(&dir.join(name), &c)
    };
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            // the pair still holds the last parameters that produced a finite loss
            save("last.ckpt", &pair.teacher.params, None)?;
            return Err(e.into());
        }
    };
    fsutil::write_bytes(&dir.join("epochs.csv"), epoch_rows(&out.epochs, &run.skel)?.as_bytes())?;
    save("best.ckpt", &out.best_teacher, None)?;
    save("last.ckpt", &pair.teacher.params, None)?;
    save("student.ckpt", &pair.student.params, Some(&out.optimizer))?;
    if let (Some(p), Some(h)) = (&prior, &prior_hash) {
        if &prior_param_hash(p) != h {
            return Err(Error::Config("prior parameters changed during adaptation".into()));
        }
    }
    warnings.extend(out.warnings);
    let summary = AdaptSummary {
        variant: variant.as_str().into(),
        config_hash: run.cfg.hash(),
        best_epoch: out.best_epoch,
        eval_available: eval.is_some(),
        warnings,
        prior_param_hash: prior_hash,
    };
    fsutil::write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// PCK tallies and per-sample records of one model on one split.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub pck: PckResult,
    pub records: Vec<SampleRecord>,
}

/// Evaluates any pose predictor on a labeled split.
pub fn evaluate_with(dir: &Path, skel: &SkeletonSpec, predict: &mut dyn FnMut(usize, &orpose_core::synth::Image) -> Result<Pose>) -> Result<Evaluation> {
    dataset::check_skeleton(dir, skel)?;
    let poses = dataset::read_poses(dir)?;
    let severities = dataset::read_severities(dir)?;
    let image_size = IMAGE_SIZE;
    let threshold = PCK_ALPHA * image_size as f64;
    let mut records = Vec::with_capacity(poses.len());
    for (i, gt) in poses.iter().enumerate() {
        let img = dataset::read_image(dir, i)?;
        let pred = predict(i, &img)?;
        records.push(SampleRecord::new(i, severities[i], &pred, gt, threshold)?);
    }
    let preds: Vec<Pose> = records.iter().map(|r| Pose::new(r.pred.clone())).collect();
    let pck = orpose_core::metrics::pck(&preds, &poses, PCK_ALPHA, image_size as f64)?;
    debug_assert_eq!(pck, pck_from_records(&records, skel.joint_count(), threshold));
    Ok(Evaluation { pck, records })
}

pub fn evaluate_net(net: &PoseNet<f32>, dir: &Path, skel: &SkeletonSpec) -> Result<Evaluation> {
    let mut ws = Workspace::new();
    let pool = net.arch.input_pool;
    evaluate_with(dir, skel, &mut |_, img| {
        let x = prepare_input(&img.data, img.height, img.width, pool);
        Ok(predict_pose(net, &x, &mut ws)?.0)
    })
}

/// Evaluates a checkpoint file and writes table, records and overlays to `out`.
pub fn evaluate_stage(ckpt_path: &Path, split_dir: &Path, out: &Path, method: &str, skel: &SkeletonSpec, overlays: usize) -> Result<(ResultRow, Evaluation)> {
    require(ckpt_path, "checkpoint", "pretrain")?;
    let ck = checkpoint::load_net(ckpt_path)?;
    ck.check_skeleton(skel, &format!("split {}", split_dir.display()))?;
    dataset::check_skeleton(split_dir, skel)?;
    let ev = evaluate_net(&ck.network()?, split_dir, skel)?;
    let split = split_dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let row = ResultRow::from_pck(method, &split, None, Flags::default(), &ev.pck, skel);
    let mut table = ResultTable::new(skel);
    table.rows.push(row.clone());
    table.write(out, "table")?;
    fsutil::write_jsonl(&out.join("records.jsonl"), &ev.records)?;
    write_overlays(&out.join("overlays"), &ev.records, &|id| dataset::read_image(split_dir, id), skel, overlays)?;
    Ok((row, ev))
}

/// Whether `dir` holds a finished adaptation run for this exact config.
pub fn adapt_done(run: &Run, v: AdaptVariant) -> bool {
    let dir = run.paths.adapt(v);
    match fsutil::read_json::<AdaptSummary>(&dir.join("summary.json")) {
        Ok(s) => s.config_hash == run.cfg.hash() && dir.join("best.ckpt").exists(),
        Err(_) => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedAblation {
    /// Source-only then each variant, on the mixed-severity eval split.
    pub rows: Vec<ResultRow>,
    /// Same models on each sweep split (empty without a sweep).
    pub severity_rows: Vec<ResultRow>,
}

fn model_rows(run: &Run, method: &str, flags: Flags, ckpt: &Path, severity_rows: &mut Vec<ResultRow>) -> Result<ResultRow> {
    let ng = run.skel.groups.len();
    let ck = checkpoint::load_net(ckpt)?;
    ck.check_skeleton(&run.skel, "this config")?;
    let net = ck.network()?;
    let ev = evaluate_net(&net, &run.paths.split(SPLIT_TARGET_EVAL), &run.skel)?;
    let row = ResultRow::from_pck(method, SPLIT_TARGET_EVAL, None, flags, &ev.pck, &run.skel);
    for sev in SEVERITIES {
        let dir = run.paths.split(&sweep_split(sev));
        if !dir.exists() {
            continue;
        }
        let r = match evaluate_net(&net, &dir, &run.skel) {
            Ok(e) => ResultRow::from_pck(method, "target_eval_sweep", Some(sev), flags, &e.pck, &run.skel),
            Err(e) => ResultRow::failed(method, "target_eval_sweep", Some(sev), flags, ng, &e.to_string()),
        };
        severity_rows.push(r);
    }
    Ok(row)
}

/// Source-only plus all three variants for one seed. Variants with a
/// finished run for this config are reused unless `force`.
pub fn ablate_seed(run: &Run, force: bool, log: Log) -> Result<SeedAblation> {
    require(&run.paths.pretrain_ckpt(), "pretrained checkpoint", "pretrain")?;
    let ng = run.skel.groups.len();
    let mut rows = Vec::new();
    let mut severity_rows = Vec::new();
    rows.push(model_rows(run, SOURCE_ONLY, variant_flags(None), &run.paths.pretrain_ckpt(), &mut severity_rows)?);
    for v in AdaptVariant::ALL {
        let flags = variant_flags(Some(v));
        let dir = run.paths.adapt(v);
        let done = !force && adapt_done(run, v);
        let res = if done {
            log(&format!("seed {}: reusing finished {} run", run.seed, v.as_str()));
            Ok(())
        } else {
            fsutil::prepare_out_dir(&dir, true).and_then(|_| adapt_stage(run, v, log).map(|_| ()))
        };
        let row = res.and_then(|_| model_rows(run, v.as_str(), flags, &dir.join("best.ckpt"), &mut severity_rows));
        rows.push(match row {
            Ok(r) => r,
            Err(e) => {
                log(&format!("seed {}: {} failed: {e}", run.seed, v.as_str()));
                for sev in SEVERITIES.iter().filter(|&&s| run.paths.split(&sweep_split(s)).exists()) {
                    severity_rows.push(ResultRow::failed(v.as_str(), "target_eval_sweep", Some(*sev), flags, ng, &e.to_string()));
                }
                ResultRow::failed(v.as_str(), SPLIT_TARGET_EVAL, None, flags, ng, &e.to_string())
            }
        });
    }
    let out = SeedAblation { rows, severity_rows };
    let mut t = ResultTable::new(&run.skel);
    t.rows = out.rows.clone();
    t.write(&run.paths.root, "ablation")?;
    if !out.severity_rows.is_empty() {
        t.rows = out.severity_rows.clone();
        t.write(&run.paths.root, "severity")?;
    }
    Ok(out)
}

/// Seed-aggregated tables (mean ± std per method).
pub fn aggregate_tables(skel: &SkeletonSpec, per_seed: &[SeedAblation]) -> Result<(ResultTable, ResultTable)> {
    let group = |pick: &dyn Fn(&SeedAblation) -> &Vec<ResultRow>| -> Result<ResultTable> {
        let mut t = ResultTable::new(skel);
        let Some(first) = per_seed.first() else { return Ok(t) };
        for (i, r0) in pick(first).iter().enumerate() {
            let rows: Vec<ResultRow> = per_seed.iter().filter_map(|s| pick(s).get(i).cloned()).filter(|r| r.method == r0.method && r.severity == r0.severity).collect();
            t.rows.push(ResultRow::aggregate(&rows)?);
        }
        Ok(t)
    };
    Ok((group(&|s| &s.rows)?, group(&|s| &s.severity_rows)?))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
    pub winners: Vec<(u8, String, f64)>,
}

fn seed_dirs(out: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(out)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-")))
        .collect();
    v.sort();
    v
}

/// Reads epoch CSV rows as `(epoch, gamma, role, mean)`.
fn read_epoch_means(path: &Path) -> Result<Vec<(usize, f64, String, Option<f64>)>> {
    let text = fsutil::read_string(path)?;
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| Error::format(path, e))?;
        let num = |i: usize| rec.get(i).unwrap_or("").parse::<f64>().ok();
        let epoch = rec.get(0).unwrap_or("").parse().map_err(|_| Error::format(path, "bad epoch"))?;
        out.push((epoch, num(1).unwrap_or(f64::NAN), rec.get(4).unwrap_or("").to_string(), num(5)));
    }
    Ok(out)
}

pub fn severity_chart(table: &ResultTable) -> LineChart {
    let mut methods: Vec<String> = Vec::new();
    for r in &table.rows {
        if r.severity.is_some() && !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let series = methods
        .iter()
        .map(|m| Series {
            name: m.clone(),
            points: table.rows.iter().filter(|r| &r.method == m).filter_map(|r| r.severity.map(|s| (s as f64, r.avg))).collect(),
        })
        .collect();
    LineChart {
        title: "PCK@0.05 vs occlusion severity".into(),
        x_label: "severity".into(),
        y_label: "Avg PCK (%)".into(),
        series,
        x_ticks: Some(SEVERITIES.map(f64::from).to_vec()),
    }
}

/// Schedule of the curriculum weight at epoch boundaries `0..=total`.
pub fn gamma_trace(total: usize) -> Result<Vec<(f64, f64)>> {
    (0..=total).map(|e| Ok((e as f64, orpose_core::adapt::curriculum_gamma(e, total)?))).collect()
}

/// Plots and a text summary from whatever finished runs exist under `out`.
pub fn report(out: &Path, log: Log) -> Result<ReportOutput> {
    let dir = out.join("report");
    let mut rep = ReportOutput::default();
    let mut warn = |rep: &mut ReportOutput, w: String| {
        log(&format!("warning: {w}"));
        rep.warnings.push(w);
    };
    let mut summary = String::new();
    let seeds = seed_dirs(out);
    if seeds.is_empty() {
        warn(&mut rep, format!("no seed-* run directories under {}", out.display()));
    }

    // PCK vs epoch: teacher mean per variant, averaged over seeds
    let mut pck_series = Vec::new();
    let mut gamma_epochs = None;
    for v in AdaptVariant::ALL {
        let mut per_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in &seeds {
            let p = s.join("adapt").join(v.as_str()).join("epochs.csv");
            match read_epoch_means(&p) {
                Ok(rows) => {
                    if v == AdaptVariant::Full && gamma_epochs.is_none() {
                        gamma_epochs = Some(rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1));
                    }
                    for (e, _, role, m) in rows {
                        if let (Some(m), "teacher") = (m, role.as_str()) {
                            per_epoch.entry(e).or_default().push(100.0 * m);
                        }
                    }
                }
                Err(e) => warn(&mut rep, format!("missing epoch log: {e}")),
            }
        }
        if !per_epoch.is_empty() {
            let points = per_epoch.into_iter().map(|(e, v)| (e as f64, v.iter().sum::<f64>() / v.len() as f64)).collect();
            pck_series.push(Series { name: v.as_str().into(), points });
        }
    }
    if !pck_series.is_empty() {
        let c = LineChart { title: "Teacher PCK@0.05 on target eval".into(), x_label: "epoch".into(), y_label: "Avg PCK (%)".into(), series: pck_series, x_ticks: None };
        let p = dir.join("pck_vs_epoch.svg");
        c.write(&p)?;
        rep.files.push(p);
    }

    // loss breakdown and gamma trace from the first seed's full run
    if let Some(s) = seeds.first() {
        let p = s.join("adapt").join("full").join("steps.csv");
        match read_csv::<StepRow>(&p) {
            Ok(rows) if !rows.is_empty() => {
                let series = [("src_ocl", 0), ("ant", 1), ("pred_vis", 2), ("pred", 3), ("total", 4)]
                    .iter()
                    .map(|&(name, k)| Series {
                        name: name.into(),
                        points: rows
                            .iter()
                            .enumerate()
                            .map(|(i, r)| (i as f64, [r.src_ocl, r.ant, r.pred_vis, r.pred, r.total][k]))
                            .collect(),
                    })
                    .collect();
                let c = LineChart { title: "Loss terms per step (full)".into(), x_label: "step".into(), y_label: "loss".into(), series, x_ticks: None };
                let p = dir.join("loss_breakdown.svg");
                c.write(&p)?;
                rep.files.push(p);
            }
            Ok(_) => warn(&mut rep, format!("{}: empty step log", p.display())),
            Err(e) => warn(&mut rep, format!("missing step log: {e}")),
        }
    }
    if let Some(total) = gamma_epochs.filter(|&t| t > 0) {
        let trace = gamma_trace(total)?;
        let c = LineChart { title: "Curriculum weight gamma".into(), x_label: "epoch".into(), y_label: "gamma".into(), series: vec![Series { name: "gamma".into(), points: trace }], x_ticks: None };
        let p = dir.join("gamma.svg");
        c.write(&p)?;
        rep.files.push(p);
    }

    match ResultTable::read_csv(&out.join("ablation.csv")) {
        Ok(t) => {
            summary.push_str("Ablation (target eval, mixed severities)\n");
            summary.push_str(&t.to_text());
            summary.push('\n');
        }
        Err(e) => warn(&mut rep, format!("missing ablation table: {e}")),
    }
    match ResultTable::read_csv(&out.join("severity.csv")) {
        Ok(t) => {
            let c = severity_chart(&t);
            let p = dir.join("pck_vs_severity.svg");
            c.write(&p)?;
            rep.files.push(p);
            rep.winners = winners_by_severity(&t);
            summary.push_str("Severity sweep\n");
            summary.push_str(&t.to_text());
            summary.push_str("\nWinner per severity\n");
            for (s, m, v) in &rep.winners {
                summary.push_str(&format!("severity {s}: {m} ({v:.1})\n"));
            }
        }
        Err(e) => warn(&mut rep, format!("missing severity table: {e}")),
    }
    if !rep.warnings.is_empty() {
        summary.push_str("\nWarnings\n");
        for w in &rep.warnings {
            summary.push_str(&format!("- {w}\n"));
        }
    }
    let p = dir.join("summary.txt");
    fsutil::write_bytes(&p, summary.as_bytes())?;
    rep.files.push(p);
    Ok(rep)
}

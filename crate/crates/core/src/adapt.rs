//! Mean-teacher adaptation with occlusion-aware objectives.
//!
//! Each step draws a target batch and an occluded source batch. The teacher
//! sees a weakly augmented target image and produces confidence-masked pseudo
//! labels; the student sees a strongly augmented copy and is pulled toward
//! them (optionally visibility-weighted), while also being supervised on the
//! occluded source images and regularized by the frozen anatomical prior.
//! After every optimizer step the teacher tracks the student by EMA.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentRanges;
use crate::error::{Error, Result};
use crate::heatmap::{argmax, nearest_cell, render_heatmap, splat_gaussian, Grid, Heatmap};
use crate::losses::{consistency_coefficients, heatmap_sq_error, heatmap_sq_error_grad, total_loss, ConsistencyMode, LossBreakdown, LossComponents, LossWeights};
use crate::metrics::PckResult;
use crate::nn::{prepare_input, PoseNet, Tensor, Workspace};
use crate::optim::{Adam, AdamConfig, StepSchedule};
use crate::pose::Pose;
use crate::prior::{anatomical_loss, PriorModel};
use crate::rng;
use crate::skeleton::SkeletonSpec;
use crate::synth::{occlude, Image, Mask, OcclusionSpec, SeverityMix};
use crate::train::{evaluate_pck, grid_of, pixels_per_input_cell, Labeled};

/// `teacher <- alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update(teacher: &mut [f32], student: &[f32], alpha: f64) -> Result<()> {
    if teacher.len() != student.len() {
        return Err(Error::shape("teacher and student parameter counts differ"));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("EMA alpha must lie in [0, 1]"));
    }
    let (a, b) = (alpha as f32, (1.0 - alpha) as f32);
    if alpha == 1.0 {
        return Ok(());
    }
    if alpha == 0.0 {
        teacher.copy_from_slice(student);
        return Ok(());
    }
    for (t, &s) in teacher.iter_mut().zip(student) {
        *t = a * *t + b * s;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherStudentPair {
    pub student: PoseNet<f32>,
    pub teacher: PoseNet<f32>,
    pub alpha: f64,
}

impl TeacherStudentPair {
    /// Both networks start as copies of the source model.
    pub fn from_source(source: &PoseNet<f32>, alpha: f64) -> Self {
        TeacherStudentPair { student: source.clone(), teacher: source.clone(), alpha }
    }

    pub fn ema_update(&mut self) -> Result<()> {
        ema_update(&mut self.teacher.params, &self.student.params, self.alpha)
    }
}

/// Epoch position of the visibility curriculum (epochs are 0-indexed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub current_epoch: usize,
    pub total_epochs: usize,
}

impl CurriculumState {
    pub fn gamma(&self) -> Result<f64> {
        curriculum_gamma(self.current_epoch, self.total_epochs)
    }
}

/// `exp(-epoch / total)`.
pub fn curriculum_gamma(epoch: usize, total: usize) -> Result<f64> {
    if total == 0 {
        return Err(Error::config("total epochs must be positive"));
    }
    Ok(crate::math::exp(-(epoch as f64) / total as f64))
}

/// Confidence-masked pseudo labels for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabels {
    /// Clean Gaussian per kept joint, zeros elsewhere.
    pub targets: Vec<f32>,
    pub mask: Vec<bool>,
    /// Argmax location per joint in image pixels.
    pub points: Vec<[f64; 2]>,
    pub peaks: Vec<f64>,
}

/// Keeps joints whose heatmap peak reaches `tau` and re-renders them as
/// Gaussians at the argmax cell.
pub fn pseudo_label(heatmaps: &[f32], joints: usize, grid: &Grid, sigma: f64, tau: f64) -> PseudoLabels {
    let cells = grid.cells();
    let mut out = PseudoLabels { targets: vec![0.0; joints * cells], mask: vec![false; joints], points: Vec::with_capacity(joints), peaks: Vec::with_capacity(joints) };
    for k in 0..joints {
        let ch = &heatmaps[k * cells..(k + 1) * cells];
        let (idx, peak) = argmax(ch);
        let (r, c) = (idx / grid.width, idx % grid.width);
        out.points.push([c as f64 * grid.scale, r as f64 * grid.scale]);
        out.peaks.push(peak as f64);
        if peak as f64 >= tau {
            out.mask[k] = true;
            splat_gaussian(&mut out.targets[k * cells..(k + 1) * cells], grid, r, c, sigma);
        }
    }
    out
}

/// Which terms of the objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptVariant {
    /// Occluded-source supervision and plain consistency only.
    MeanTeacher,
    /// Adds the anatomical prior.
    WithPrior,
    /// Adds the visibility-weighted curriculum.
    Full,
}

impl AdaptVariant {
    pub const ALL: [AdaptVariant; 3] = [AdaptVariant::MeanTeacher, AdaptVariant::WithPrior, AdaptVariant::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            AdaptVariant::MeanTeacher => "mean_teacher",
            AdaptVariant::WithPrior => "with_prior",
            AdaptVariant::Full => "full",
        }
    }

    pub fn uses_prior(self) -> bool {
        self != AdaptVariant::MeanTeacher
    }

    pub fn configure(self, cfg: &AdaptConfig) -> AdaptConfig {
        let mut c = cfg.clone();
        match self {
            AdaptVariant::MeanTeacher => {
                c.lambda_a = 0.0;
                c.curriculum = false;
            }
            AdaptVariant::WithPrior => c.curriculum = false,
            AdaptVariant::Full => c.curriculum = true,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub tau: f64,
    pub lambda_a: f64,
    pub lambda_v: f64,
    pub alpha: f64,
    pub epochs: usize,
    /// 0 means one pass over the target split per epoch.
    pub iterations_per_epoch: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub sigma: f64,
    /// Student-side (strong) augmentation.
    pub student_augment: AugmentRanges,
    /// Teacher-side (weak) augmentation.
    pub teacher_augment: AugmentRanges,
    /// Augmentation of the occluded source batch.
    pub source_augment: AugmentRanges,
    pub source_severity: SeverityMix,
    /// When false `gamma` is held at 0, i.e. only the unweighted consistency term.
    pub curriculum: bool,
    pub soft_argmax_temperature: f64,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            tau: 0.5,
            lambda_a: 1e-5,
            lambda_v: 1.0,
            alpha: 0.99,
            epochs: 6,
            iterations_per_epoch: 0,
            batch_size: 8,
            adam: AdamConfig { lr: 2e-4, ..AdamConfig::default() },
            sigma: 2.0,
            student_augment: AugmentRanges::strong(),
            teacher_augment: AugmentRanges::none(),
            source_augment: crate::train::PretrainConfig::default().augment,
            source_severity: SeverityMix::Uniform { min: 1, max: 5 },
            curriculum: true,
            soft_argmax_temperature: 0.1,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        // tau slightly above 1 is allowed: it switches the consistency term off
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau must be finite and non-negative"));
        }
        if !(self.lambda_a >= 0.0 && self.lambda_v >= 0.0) {
            return Err(Error::config("loss weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("alpha must lie in [0, 1]"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        Ok(())
    }
}

/// Labeled source scene kept at full resolution so it can be occluded on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceItem {
    pub image: Image,
    pub figure: Mask,
    pub pose: Pose,
}

/// Unlabeled target input with its visible-silhouette pixel count.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetItem {
    pub input: Tensor<f32>,
    pub visible: usize,
}

/// Labeled evaluation inputs, tagged with severity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub items: Vec<Labeled>,
    pub severities: Vec<u8>,
    /// Joints averaged into the mean (all when empty).
    pub joints: Vec<usize>,
}

impl EvalSet {
    pub fn evaluate(&self, net: &PoseNet<f32>) -> Result<EvalReport> {
        let all: Vec<&Labeled> = self.items.iter().collect();
        let overall = evaluate_pck(net, &all)?;
        let mut levels: Vec<u8> = self.severities.clone();
        levels.sort_unstable();
        levels.dedup();
        let mut by_severity = Vec::new();
        for s in levels {
            let subset: Vec<&Labeled> = self.items.iter().zip(&self.severities).filter(|(_, &v)| v == s).map(|(l, _)| l).collect();
            by_severity.push((s, self.mean(&evaluate_pck(net, &subset)?)));
        }
        let mean = self.mean(&overall);
        Ok(EvalReport { overall, mean, by_severity })
    }

    pub fn mean(&self, r: &PckResult) -> f64 {
        r.mean_over(if self.joints.is_empty() { None } else { Some(&self.joints) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: PckResult,
    pub mean: f64,
    pub by_severity: Vec<(u8, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Fraction of target joints that passed the confidence mask.
    pub kept_fraction: f64,
    pub ant_degenerate: usize,
    pub vis_degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub gamma: f64,
    pub lr: f64,
    pub mean_loss: f64,
    pub teacher: Option<EvalReport>,
    pub student: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
    /// Teacher parameters chosen as the final model.
    pub best_teacher: Vec<f32>,
    pub best_epoch: Option<usize>,
    pub warnings: Vec<String>,
    /// Student optimizer state after the last step.
    pub optimizer: Adam,
}

/// Everything `adapt` needs besides the networks.
pub struct AdaptInputs<'a> {
    pub source: &'a [SourceItem],
    pub target: &'a [TargetItem],
    pub prior: Option<&'a PriorModel>,
    pub skeleton: &'a SkeletonSpec,
    /// Labeled target split; used only for per-epoch PCK and model selection.
    pub eval: Option<&'a EvalSet>,
}

#[derive(Default)]
struct Scratch {
    ws: Workspace<f32>,
    tws: Workspace<f32>,
    gout: Vec<f32>,
}

/// Runs the adaptation loop; the pair's student and teacher are updated in place.
///
/// On a non-finite loss the step is not applied, so the pair keeps the last
/// good parameters, and the error names the offending term.
pub fn adapt(
    pair: &mut TeacherStudentPair,
    inputs: &AdaptInputs<'_>,
    cfg: &AdaptConfig,
    mut on_step: impl FnMut(&StepLog),
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<AdaptOutcome> {
    cfg.validate()?;
    if inputs.target.is_empty() || inputs.source.is_empty() {
        return Err(Error::config("adaptation needs non-empty source and target splits"));
    }
    if pair.student.param_count() != pair.teacher.param_count() {
        return Err(Error::shape("teacher and student architectures differ"));
    }
    if cfg.lambda_a > 0.0 && inputs.prior.is_none() {
        return Err(Error::config("lambda_a > 0 requires a trained prior"));
    }
    let net_joints = pair.student.arch.joints;
    if net_joints != inputs.skeleton.joint_count() {
        return Err(Error::config("network joint count does not match the skeleton"));
    }
    pair.alpha = cfg.alpha;
    let grid = grid_of(&pair.student);
    let cells = grid.cells();
    let k = net_joints;
    let image_size = pair.student.arch.image_size as f64;
    let ppc = pixels_per_input_cell(&pair.student);
    let pool = pair.student.arch.input_pool;
    let hside = grid.height;
    let ppc_heat = grid.scale;
    let weights = LossWeights { lambda_a: cfg.lambda_a, lambda_v: cfg.lambda_v };
    let iters = if cfg.iterations_per_epoch == 0 { inputs.target.len().div_ceil(cfg.batch_size) } else { cfg.iterations_per_epoch };
    let schedule = StepSchedule::proportional(cfg.adam.lr, cfg.epochs);
    let mut opt = Adam::new(cfg.adam.clone(), pair.student.param_count());
    let mut r = rng::derive(cfg.seed, 0xada7);
    let mut sc = Scratch::default();
    let mut grads = vec![0.0f32; pair.student.param_count()];
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, usize, Vec<f32>)> = None;
    let mut order: Vec<usize> = (0..inputs.target.len()).collect();
    let mut cursor = order.len();

    for epoch in 0..cfg.epochs {
        let gamma = if cfg.curriculum { curriculum_gamma(epoch, cfg.epochs)? } else { 0.0 };
        let lr = schedule.lr(epoch);
        let mut loss_acc = 0.0;
        for step in 0..iters {
            // target batch (reshuffled whenever a pass is exhausted)
            let mut batch = Vec::with_capacity(cfg.batch_size);
            while batch.len() < cfg.batch_size.min(inputs.target.len()) {
                if cursor == order.len() {
                    order.shuffle(&mut r);
                    cursor = 0;
                }
                batch.push(order[cursor]);
                cursor += 1;
            }
            let b = batch.len();
            let counts: Vec<usize> = batch.iter().map(|&i| inputs.target[i].visible).collect();
            let vis = crate::synth::visibility_from_counts(&counts);
            let plain = consistency_coefficients(ConsistencyMode::Plain, b, None).unwrap();
            let weighted = consistency_coefficients(ConsistencyMode::Weighted, b, Some(&vis));
            let vis_degenerate = weighted.is_none();
            let weighted = weighted.unwrap_or_else(|| vec![0.0; b]);

            grads.iter_mut().for_each(|g| *g = 0.0);
            let mut comp = LossComponents::default();
            let mut kept = 0usize;

            let mut ant_degenerate = 0usize;
            let all = vec![true; k];
            for (s, &i) in batch.iter().enumerate() {
                let x = &inputs.target[i].input;
                let a2 = cfg.teacher_augment.sample(&mut r, image_size);
                let a1 = cfg.student_augment.sample(&mut r, image_size);

                // teacher pseudo labels in the original frame
                pair.teacher.forward(&a2.apply_input(x, ppc), &mut sc.tws)?;
                let teacher_maps = if a2.forward.is_identity() {
                    sc.tws.output().data.clone()
                } else {
                    a2.inverse_warp(hside, hside, ppc_heat).apply(sc.tws.output()).data
                };
                let mut labels = pseudo_label(&teacher_maps, k, &grid, cfg.sigma, cfg.tau);
                // joints the student cannot see after its augmentation stay out of the loss
                for (j, p) in labels.points.iter().enumerate() {
                    let q = a1.forward.apply(*p);
                    if labels.mask[j] && nearest_cell(&grid, q[0], q[1]).is_none() {
                        labels.mask[j] = false;
                        labels.targets[j * cells..(j + 1) * cells].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
                kept += labels.mask.iter().filter(|&&m| m).count();

                // student prediction mapped back to the original frame
                pair.student.forward(&a1.apply_input(x, ppc), &mut sc.ws)?;
                let warp = a1.inverse_warp(hside, hside, ppc_heat);
                let warped = warp.apply(sc.ws.output()).data;
                let e = heatmap_sq_error(&warped, &labels.targets, &labels.mask, cells);
                comp.pred += plain[s] * e;
                comp.pred_vis += weighted[s] * e;

                let mut g = vec![0.0f32; k * cells];
                let coef = cfg.lambda_v * (gamma * weighted[s] + (1.0 - gamma) * plain[s]);
                if coef > 0.0 {
                    heatmap_sq_error_grad(&warped, &labels.targets, &labels.mask, cells, coef, &mut g);
                }
                if let Some(prior) = inputs.prior {
                    let a = anatomical_loss(prior, &[&warped[..]], k, &grid, inputs.skeleton, cfg.soft_argmax_temperature);
                    comp.ant += a.value / b as f64;
                    ant_degenerate += a.degenerate;
                    if cfg.lambda_a > 0.0 {
                        let la = (cfg.lambda_a / b as f64) as f32;
                        for (gv, &av) in g.iter_mut().zip(&a.grads[0]) {
                            *gv += la * av;
                        }
                    }
                }
                if g.iter().any(|&v| v != 0.0) {
                    let gin = warp.adjoint(&g, k);
                    pair.student.backward(&mut sc.ws, &gin, &mut grads);
                }
            }

            // occluded source batch, supervised against the unoccluded labels
            for _ in 0..b {
                let item = &inputs.source[r.gen_range(0..inputs.source.len())];
                let severity = cfg.source_severity.severity_for(r.gen(), 0);
                let (img, _) = occlude(&item.image, &item.figure, &OcclusionSpec::severity(severity), r.gen())?;
                let x = prepare_input::<f32>(&img.data, img.height, img.width, pool);
                let t = cfg.source_augment.sample(&mut r, image_size);
                let pose = t.apply_pose(&item.pose, image_size);
                let target: Heatmap<f32> = render_heatmap(&pose, cfg.sigma, grid)?;
                pair.student.forward(&t.apply_input(&x, ppc), &mut sc.ws)?;
                let pred = &sc.ws.output().data;
                comp.src_ocl += heatmap_sq_error(pred, &target.values, &all, cells) / b as f64;
                sc.gout.clear();
                sc.gout.resize(pred.len(), 0.0);
                heatmap_sq_error_grad(pred, &target.values, &all, cells, 1.0 / b as f64, &mut sc.gout);
                let gout = core::mem::take(&mut sc.gout);
                pair.student.backward(&mut sc.ws, &gout, &mut grads);
                sc.gout = gout;
            }

            // nothing has been applied yet, so an error here leaves the last good parameters
            let breakdown = total_loss(&comp, &weights, gamma).map_err(|e| Error::NonFinite(format!("{e} at epoch {epoch}, step {step}")))?;
            opt.update(&mut pair.student.params, &grads, lr)?;
            pair.ema_update()?;
            loss_acc += breakdown.total;
            let log = StepLog {
                epoch,
                step,
                lr,
                loss: breakdown,
                kept_fraction: kept as f64 / (b * k) as f64,
                ant_degenerate,
                vis_degenerate,
            };
            on_step(&log);
            steps.push(log);
        }
        let (teacher, student) = match inputs.eval {
            Some(e) => (Some(e.evaluate(&pair.teacher)?), Some(e.evaluate(&pair.student)?)),
            None => (None, None),
        };
        if let Some(t) = &teacher {
            let m = t.mean;
            if best.as_ref().is_none_or(|b| m > b.0) {
                best = Some((m, epoch, pair.teacher.params.clone()));
            }
        }
        let row = EpochLog { epoch, gamma, lr, mean_loss: loss_acc / iters as f64, teacher, student };
        on_epoch(&row);
        epochs.push(row);
    }
    if steps.iter().any(|s| s.vis_degenerate) {
        warnings.push("some batches had zero total visibility; their weighted term was set to 0".into());
    }
    let (best_teacher, best_epoch) = match best {
        Some((_, e, p)) => (p, Some(e)),
        None => (pair.teacher.params.clone(), None),
    };
    Ok(AdaptOutcome { steps, epochs, best_teacher, best_epoch, warnings, optimizer: opt })
}

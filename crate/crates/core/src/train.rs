//! Supervised source-domain pretraining and model evaluation helpers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentRanges;
use crate::error::{Error, Result};
use crate::heatmap::{decode_heatmap, render_heatmap, Grid, Heatmap};
use crate::losses::{heatmap_sq_error, heatmap_sq_error_grad};
use crate::metrics::{pck, PckResult};
use crate::nn::{PoseNet, Tensor, Workspace};
use crate::optim::{Adam, AdamConfig, StepSchedule};
use crate::pose::Pose;
use crate::rng;

/// PCK threshold as a fraction of the image side.
pub const PCK_ALPHA: f64 = 0.05;

/// A prepared network input with its ground-truth pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub input: Tensor<f32>,
    pub pose: Pose,
}

pub fn grid_of(net: &PoseNet<f32>) -> Grid {
    Grid::for_image(net.arch.image_size, net.arch.heatmap_side())
}

/// Pixels of the original image per cell of the prepared input.
pub fn pixels_per_input_cell(net: &PoseNet<f32>) -> f64 {
    net.arch.input_pool as f64
}

/// Hard-argmax decode of the network's (clamped) output.
pub fn predict_pose(net: &PoseNet<f32>, input: &Tensor<f32>, ws: &mut Workspace<f32>) -> Result<(Pose, Vec<f64>)> {
    net.forward(input, ws)?;
    let hm = Heatmap::from_raw(net.arch.joints, grid_of(net), &ws.output().data);
    Ok(decode_heatmap(&hm))
}

pub fn predict_poses(net: &PoseNet<f32>, inputs: &[&Tensor<f32>]) -> Result<Vec<Pose>> {
    let mut ws = Workspace::new();
    inputs.iter().map(|x| predict_pose(net, x, &mut ws).map(|p| p.0)).collect()
}

pub fn evaluate_pck(net: &PoseNet<f32>, data: &[&Labeled]) -> Result<PckResult> {
    let preds = predict_poses(net, &data.iter().map(|d| &d.input).collect::<Vec<_>>())?;
    let gts: Vec<Pose> = data.iter().map(|d| d.pose.clone()).collect();
    pck(&preds, &gts, PCK_ALPHA, net.arch.image_size as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Heatmap Gaussian width in cells.
    pub sigma: f64,
    pub holdout_fraction: f64,
    pub augment: AugmentRanges,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 8,
            batch_size: 16,
            adam: AdamConfig::default(),
            sigma: 2.0,
            holdout_fraction: 0.1,
            augment: AugmentRanges {
                rotation_deg: 15.0,
                translate_frac: 0.05,
                shear_deg: 0.0,
                scale: [0.9, 1.1],
                brightness: 0.05,
                contrast: [0.9, 1.1],
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub holdout_pck: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    pub log: Vec<PretrainEpoch>,
    pub best_epoch: usize,
    pub best_pck: f64,
    pub optimizer: Adam,
    /// Sampler state after the last epoch.
    pub rng: rng::SeededRng,
}

/// Mean supervised loss of `net` on `data` and, when `grads` is given, its
/// gradient accumulated there. Targets are rendered from each pose.
pub fn source_loss_and_grad(net: &PoseNet<f32>, data: &[&Labeled], sigma: f64, mut grads: Option<&mut [f32]>, ws: &mut Workspace<f32>) -> Result<f64> {
    let grid = grid_of(net);
    let cells = grid.cells();
    let b = data.len() as f64;
    let mut total = 0.0;
    let mut gout = Vec::new();
    for d in data {
        net.forward(&d.input, ws)?;
        let target: Heatmap<f32> = render_heatmap(&d.pose, sigma, grid)?;
        let mask = vec![true; net.arch.joints];
        let pred = &ws.output().data;
        total += heatmap_sq_error(pred, &target.values, &mask, cells) / b;
        if let Some(g) = grads.as_deref_mut() {
            gout.clear();
            gout.resize(pred.len(), 0.0f32);
            heatmap_sq_error_grad(pred, &target.values, &mask, cells, 1.0 / b, &mut gout);
            net.backward(ws, &gout, g);
        }
    }
    Ok(total)
}

/// Trains on labeled source inputs with mild augmentation and keeps the
/// parameters with the best held-out PCK. `on_epoch` sees each log row.
///
/// Held-out PCK averages over `eval_joints` (all joints when `None`).
pub fn pretrain_source(
    net: &mut PoseNet<f32>,
    data: &[Labeled],
    cfg: &PretrainConfig,
    eval_joints: Option<&[usize]>,
    mut on_epoch: impl FnMut(&PretrainEpoch),
) -> Result<PretrainOutcome> {
    if data.len() < 2 {
        return Err(Error::config("pretraining needs at least two samples"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("epochs and batch size must be positive"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut r = rng::derive(cfg.seed, 0x7072);
    order.shuffle(&mut r);
    let n_hold = ((data.len() as f64 * cfg.holdout_fraction) as usize).clamp(1, data.len() - 1);
    let holdout: Vec<&Labeled> = order[..n_hold].iter().map(|&i| &data[i]).collect();
    let mut train: Vec<usize> = order[n_hold..].to_vec();

    let grid = grid_of(net);
    let image_size = net.arch.image_size as f64;
    let ppc = pixels_per_input_cell(net);
    let schedule = StepSchedule::proportional(cfg.adam.lr, cfg.epochs);
    let mut opt = Adam::new(cfg.adam.clone(), net.param_count());
    let mut ws = Workspace::new();
    let mut grads = vec![0.0f32; net.param_count()];
    let mut gout = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, net.params.clone());
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut r);
        let lr = schedule.lr(epoch);
        let mut acc = 0.0;
        for (step, chunk) in train.chunks(cfg.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| *g = 0.0);
            let b = chunk.len() as f64;
            let mut batch_loss = 0.0;
            for &i in chunk {
                let t = cfg.augment.sample(&mut r, image_size);
                let x = t.apply_input(&data[i].input, ppc);
                let pose = t.apply_pose(&data[i].pose, image_size);
                let target: Heatmap<f32> = render_heatmap(&pose, cfg.sigma, grid)?;
                let mask = vec![true; net.arch.joints];
                net.forward(&x, &mut ws)?;
                let pred = &ws.output().data;
                batch_loss += heatmap_sq_error(pred, &target.values, &mask, grid.cells()) / b;
                gout.clear();
                gout.resize(pred.len(), 0.0f32);
                heatmap_sq_error_grad(pred, &target.values, &mask, grid.cells(), 1.0 / b, &mut gout);
                net.backward(&mut ws, &gout, &mut grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("source loss diverged at epoch {epoch}, step {step}")));
            }
            acc += batch_loss * b;
            opt.update(&mut net.params, &grads, lr)?;
        }
        let holdout_pck = evaluate_pck(net, &holdout)?.mean_over(eval_joints);
        let row = PretrainEpoch { epoch, loss: acc / train.len() as f64, lr, holdout_pck };
        on_epoch(&row);
        log.push(row);
        // ties go to the later, lower-loss epoch; a clean source holdout saturates
        if holdout_pck >= best.0 {
            best = (holdout_pck, epoch, net.params.clone());
        }
    }
    net.params = best.2;
    Ok(PretrainOutcome { log, best_epoch: best.1, best_pck: best.0, optimizer: opt, rng: r })
}

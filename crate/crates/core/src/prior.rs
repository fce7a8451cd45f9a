//! Learned anatomical prior: a non-negative distance from a bone vector set
//! to the manifold of plausible poses, its negative-sample generators, its
//! regression training, and the adaptation-time regularizer built on it.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bones::{angle_between, bone_vectors, bone_vectors_backward, mean_angular_deviation, BoneVectorSet};
use crate::error::{Error, Result};
use crate::heatmap::Grid;
use crate::math;
use crate::nn::{Activation, Dense};
use crate::optim::{Adam, AdamConfig, StepSchedule};
use crate::pose::Pose;
use crate::real::Real;
use crate::rng::{self, SeededRng};
use crate::skeleton::SkeletonSpec;
use crate::softargmax::{soft_argmax, soft_argmax_backward};
use crate::vonmises::VonMises;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorArch {
    /// Latent width of each bone's encoder feature.
    pub feature_dim: usize,
    /// Hidden widths of the decoder; a final width-1 layer is appended.
    pub decoder_hidden: Vec<usize>,
}

impl Default for PriorArch {
    fn default() -> Self {
        PriorArch { feature_dim: 16, decoder_hidden: vec![128, 128, 64, 32] }
    }
}

/// `G = decoder o encoder`.
///
/// The encoder gives every bone its own two-layer map from (own vector,
/// parent bone's feature) to a feature, evaluated root-outward so features
/// accumulate along the kinematic tree. The decoder maps the concatenated
/// features through five dense layers ending in a softplus, so the output is
/// non-negative for every input.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub arch: PriorArch,
    pub skeleton_fingerprint: u64,
    parent_bones: Vec<Option<usize>>,
    encoder: Vec<[Dense; 2]>,
    decoder: Vec<Dense>,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct Cache {
    batch: usize,
    enc_in: Vec<Vec<f64>>,
    enc_pre: Vec<[Vec<f64>; 2]>,
    enc_out: Vec<[Vec<f64>; 2]>,
    dec_in: Vec<f64>,
    dec_pre: Vec<Vec<f64>>,
    dec_out: Vec<Vec<f64>>,
}

impl PriorModel {
    pub fn new(skel: &SkeletonSpec, arch: PriorArch, seed: u64) -> Self {
        let m = skel.bone_count();
        let f = arch.feature_dim;
        let mut offset = 0;
        let mut layer = |i, o, a| {
            let d = Dense::new(i, o, a, offset);
            offset += d.param_count();
            d
        };
        let encoder: Vec<[Dense; 2]> = (0..m)
            .map(|_| [layer(2 + f, f, Activation::Relu), layer(f, f, Activation::Relu)])
            .collect();
        let mut decoder = Vec::new();
        let mut width = m * f;
        for &h in &arch.decoder_hidden {
            decoder.push(layer(width, h, Activation::Relu));
            width = h;
        }
        decoder.push(layer(width, 1, Activation::Softplus));
        let mut params = vec![0.0; offset];
        let mut r = rng::seeded(seed);
        for d in encoder.iter().flatten().chain(&decoder) {
            let std = math::sqrt(2.0 / d.fan_in as f64);
            for p in &mut params[d.weight_offset..d.bias_offset] {
                *p = std * rng::normal(&mut r);
            }
        }
        // start near zero output rather than softplus(0) = ln 2
        let last = decoder.last().unwrap();
        params[last.bias_offset] = -2.0;
        PriorModel {
            arch,
            skeleton_fingerprint: skel.fingerprint(),
            parent_bones: skel.parent_bones(),
            encoder,
            decoder,
            params,
        }
    }

    pub fn with_params(skel: &SkeletonSpec, arch: PriorArch, params: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(skel, arch, 0);
        if m.params.len() != params.len() {
            return Err(Error::shape("prior parameter count does not match architecture"));
        }
        m.params = params;
        Ok(m)
    }

    pub fn bone_count(&self) -> usize {
        self.encoder.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn forward_cached(&self, batch: usize, thetas: &[f64], cache: &mut Cache) {
        let m = self.bone_count();
        let f = self.arch.feature_dim;
        cache.batch = batch;
        cache.enc_in = vec![Vec::new(); m];
        cache.enc_pre = vec![[Vec::new(), Vec::new()]; m];
        cache.enc_out = vec![[Vec::new(), Vec::new()]; m];
        for b in 0..m {
            let mut input = Vec::with_capacity(batch * (2 + f));
            for s in 0..batch {
                input.push(thetas[s * 2 * m + 2 * b]);
                input.push(thetas[s * 2 * m + 2 * b + 1]);
                match self.parent_bones[b] {
                    Some(p) => input.extend_from_slice(&cache.enc_out[p][1][s * f..(s + 1) * f]),
                    None => input.extend(core::iter::repeat(0.0).take(f)),
                }
            }
            let [l1, l2] = &self.encoder[b];
            let (mut pre1, mut out1, mut pre2, mut out2) = (vec![], vec![], vec![], vec![]);
            l1.forward(&self.params, batch, &input, &mut pre1, &mut out1);
            l2.forward(&self.params, batch, &out1, &mut pre2, &mut out2);
            cache.enc_in[b] = input;
            cache.enc_pre[b] = [pre1, pre2];
            cache.enc_out[b] = [out1, out2];
        }
        let mut x = Vec::with_capacity(batch * m * f);
        for s in 0..batch {
            for b in 0..m {
                x.extend_from_slice(&cache.enc_out[b][1][s * f..(s + 1) * f]);
            }
        }
        cache.dec_in = x;
        cache.dec_pre.clear();
        cache.dec_out.clear();
        for (i, d) in self.decoder.iter().enumerate() {
            let (mut pre, mut out) = (vec![], vec![]);
            let input = if i == 0 { &cache.dec_in } else { &cache.dec_out[i - 1] };
            d.forward(&self.params, batch, input, &mut pre, &mut out);
            cache.dec_pre.push(pre);
            cache.dec_out.push(out);
        }
    }

    fn backward_cached(&self, cache: &Cache, gout: &[f64], grads: &mut [f64], want_input: bool) -> Option<Vec<f64>> {
        let batch = cache.batch;
        let m = self.bone_count();
        let f = self.arch.feature_dim;
        let mut scratch = Vec::new();
        let mut g = gout.to_vec();
        for i in (0..self.decoder.len()).rev() {
            let input = if i == 0 { &cache.dec_in } else { &cache.dec_out[i - 1] };
            let mut gin = Vec::new();
            self.decoder[i].backward(&self.params, batch, input, &cache.dec_pre[i], &g, grads, Some(&mut gin), &mut scratch);
            g = gin;
        }
        // g: [batch, m * f] -> per-bone feature gradients
        let mut gfeat: Vec<Vec<f64>> = (0..m)
            .map(|b| (0..batch).flat_map(|s| g[s * m * f + b * f..s * m * f + (b + 1) * f].iter().copied()).collect())
            .collect();
        let mut gtheta = if want_input { Some(vec![0.0; batch * 2 * m]) } else { None };
        for b in (0..m).rev() {
            let [l1, l2] = &self.encoder[b];
            let mut g1 = Vec::new();
            l2.backward(&self.params, batch, &cache.enc_out[b][0], &cache.enc_pre[b][1], &gfeat[b], grads, Some(&mut g1), &mut scratch);
            let mut g0 = Vec::new();
            l1.backward(&self.params, batch, &cache.enc_in[b], &cache.enc_pre[b][0], &g1, grads, Some(&mut g0), &mut scratch);
            for s in 0..batch {
                let row = &g0[s * (2 + f)..(s + 1) * (2 + f)];
                if let Some(gt) = gtheta.as_mut() {
                    gt[s * 2 * m + 2 * b] += row[0];
                    gt[s * 2 * m + 2 * b + 1] += row[1];
                }
                if let Some(p) = self.parent_bones[b] {
                    for (dst, &v) in gfeat[p][s * f..(s + 1) * f].iter_mut().zip(&row[2..]) {
                        *dst += v;
                    }
                }
            }
        }
        gtheta
    }

    /// Distances for a batch of flattened bone vector sets (`2 * M` values each).
    pub fn forward_batch(&self, thetas: &[f64]) -> Vec<f64> {
        let batch = thetas.len() / (2 * self.bone_count());
        let mut cache = Cache::default();
        self.forward_cached(batch, thetas, &mut cache);
        cache.dec_out.pop().unwrap()
    }

    /// Distance and its gradient w.r.t. the flattened bone vectors.
    pub fn distance_with_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let mut cache = Cache::default();
        self.forward_cached(1, theta, &mut cache);
        let d = cache.dec_out.last().unwrap()[0];
        let mut scratch = vec![0.0; self.params.len()];
        let g = self.backward_cached(&cache, &[1.0], &mut scratch, true).unwrap();
        (d, g)
    }
}

/// Non-negative implausibility distance of a bone vector set.
pub fn prior_distance(prior: &PriorModel, theta: &BoneVectorSet) -> Result<f64> {
    theta.check_finite()?;
    if theta.bone_count() != prior.bone_count() {
        return Err(Error::input("bone count does not match the prior"));
    }
    Ok(prior.forward_batch(&theta.flat())[0])
}

/// Anything that scores a flattened bone vector set and can differentiate the score.
pub trait PoseDistance {
    fn distance_with_grad(&self, theta: &[f64]) -> (f64, Vec<f64>);
}

impl PoseDistance for PriorModel {
    fn distance_with_grad(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        PriorModel::distance_with_grad(self, theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    OccludedPrediction,
    Vonmises,
}

/// One regression example: bone vectors and their target distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSample {
    pub theta: BoneVectorSet,
    pub d: f64,
    pub provenance: Provenance,
}

impl PriorSample {
    pub fn plausible(theta: BoneVectorSet) -> Self {
        PriorSample { theta, d: 0.0, provenance: Provenance::GroundTruth }
    }
}

fn rotate([x, y]: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = (math::sin(a), math::cos(a));
    [c * x - s * y, s * x + c * y]
}

/// Rotates the listed bones by the given angles, keeps every bone length and
/// every other bone's direction, rebuilds the pose down the tree and
/// re-expresses it as bone vectors. `d` is the mean absolute rotation over all
/// bones.
pub fn perturb_bones(pose: &Pose, skel: &SkeletonSpec, rotations: &[(usize, f64)]) -> Result<PriorSample> {
    let base = bone_vectors(pose, skel)?;
    let mut rotated = base.clone();
    let mut total = 0.0;
    for &(b, a) in rotations {
        if b >= rotated.bone_count() {
            return Err(Error::input("bone index out of range"));
        }
        rotated.vectors[b] = rotate(rotated.vectors[b], a);
        total += a.abs();
    }
    let coords = rotated.reconstruct(skel, pose.coords[skel.root]);
    let theta = bone_vectors(&Pose::new(coords), skel)?;
    let d = total / skel.bone_count() as f64;
    let provenance = if d == 0.0 { Provenance::GroundTruth } else { Provenance::Vonmises };
    Ok(PriorSample { theta, d, provenance })
}

/// Rotates each listed joint about its parent joint (its subtree stays put)
/// and scores the result by mean angular deviation of bone directions.
pub fn perturb_joints(pose: &Pose, skel: &SkeletonSpec, rotations: &[(usize, f64)]) -> Result<PriorSample> {
    let base = bone_vectors(pose, skel)?;
    let mut coords = pose.coords.clone();
    for &(j, a) in rotations {
        let b = skel.bone_into(j).ok_or_else(|| Error::input("cannot rotate the root joint"))?;
        let p = coords[skel.bones[b].0];
        let v = rotate([coords[j][0] - p[0], coords[j][1] - p[1]], a);
        coords[j] = [p[0] + v[0], p[1] + v[1]];
    }
    let theta = bone_vectors(&Pose::new(coords), skel)?;
    let d = mean_angular_deviation(&base, &theta);
    let provenance = if d == 0.0 { Provenance::GroundTruth } else { Provenance::Vonmises };
    Ok(PriorSample { theta, d, provenance })
}

/// Where von Mises noise is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Rotate bone directions, preserving lengths.
    #[default]
    BoneAngle,
    /// Rotate individual keypoints about their parent joint.
    JointPosition,
}

/// Implausible pose made by rotating a random subset of 1..=`max_perturbed`
/// bones (or joints) by von Mises(0, `kappa`) angles.
pub fn vonmises_negative<R: Rng + ?Sized>(
    pose: &Pose,
    skel: &SkeletonSpec,
    kappa: f64,
    max_perturbed: usize,
    mode: NoiseMode,
    rng: &mut R,
) -> Result<PriorSample> {
    let vm = VonMises::new(0.0, kappa)?;
    let m = skel.bone_count();
    let count = if max_perturbed == 0 { 0 } else { rng.gen_range(1..=max_perturbed.min(m)) };
    let mut bones: Vec<usize> = (0..m).collect();
    bones.shuffle(rng);
    let rotations: Vec<(usize, f64)> = bones[..count].iter().map(|&b| (b, vm.sample(rng))).collect();
    match mode {
        NoiseMode::BoneAngle => perturb_bones(pose, skel, &rotations),
        NoiseMode::JointPosition => {
            let joints: Vec<(usize, f64)> = rotations.iter().map(|&(b, a)| (skel.bones[b].1, a)).collect();
            perturb_joints(pose, skel, &joints)
        }
    }
}

/// Near-perfect predictions below this mean angular deviation (radians) are
/// relabelled as plausible.
pub const RELABEL_THRESHOLD: f64 = 0.02;

/// Negative sample from a model's prediction on an occluded image.
///
/// `d` is the mean angular deviation between predicted and ground-truth bone
/// directions. Returns `Ok(None)` when the predicted pose is degenerate.
pub fn prediction_negative(pred: &Pose, gt: &Pose, skel: &SkeletonSpec) -> Result<Option<PriorSample>> {
    let gt_theta = bone_vectors(gt, skel)?;
    let theta = match bone_vectors(pred, skel) {
        Ok(t) => t,
        Err(Error::InvalidInput(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let d = mean_angular_deviation(&gt_theta, &theta);
    Ok(Some(if d < RELABEL_THRESHOLD {
        PriorSample { theta, d: 0.0, provenance: Provenance::GroundTruth }
    } else {
        PriorSample { theta, d, provenance: Provenance::OccludedPrediction }
    }))
}

/// Recipe for von Mises negatives drawn around a set of plausible poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NegativeConfig {
    pub per_pose: usize,
    /// Concentrations, one chosen uniformly per negative.
    pub kappas: Vec<f64>,
    pub max_bones: usize,
    pub mode: NoiseMode,
    pub seed: u64,
}

impl Default for NegativeConfig {
    fn default() -> Self {
        NegativeConfig { per_pose: 2, kappas: vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0], max_bones: 12, mode: NoiseMode::BoneAngle, seed: 0 }
    }
}

pub fn vonmises_negatives(poses: &[Pose], skel: &SkeletonSpec, cfg: &NegativeConfig) -> Result<Vec<PriorSample>> {
    if cfg.kappas.is_empty() {
        return Err(Error::config("at least one von Mises concentration is required"));
    }
    let mut r = rng::derive(cfg.seed, 0x766d);
    let mut out = Vec::with_capacity(poses.len() * cfg.per_pose);
    for p in poses {
        for _ in 0..cfg.per_pose {
            let kappa = cfg.kappas[r.gen_range(0..cfg.kappas.len())];
            out.push(vonmises_negative(p, skel, kappa, cfg.max_bones, cfg.mode, &mut r)?);
        }
    }
    Ok(out)
}

/// Runs the source model on an occluded input and scores its prediction
/// against the ground truth; `None` when the prediction is degenerate.
pub fn model_prediction_negative(
    net: &crate::nn::PoseNet<f32>,
    input: &crate::nn::Tensor<f32>,
    gt: &Pose,
    skel: &SkeletonSpec,
    ws: &mut crate::nn::Workspace<f32>,
) -> Result<Option<PriorSample>> {
    let (pred, _) = crate::train::predict_pose(net, input, ws)?;
    prediction_negative(&pred, gt, skel)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for PriorTrainConfig {
    fn default() -> Self {
        PriorTrainConfig {
            epochs: 40,
            batch_size: 64,
            adam: AdamConfig { lr: 1e-3, ..AdamConfig::default() },
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorTrainReport {
    pub epochs: Vec<PriorEpoch>,
    pub initial_loss: f64,
    pub holdout_mse: f64,
    pub holdout_d_variance: f64,
    pub train_count: usize,
    pub holdout_count: usize,
}

/// Mean of `(G(theta) - d)^2` over the samples.
pub fn prior_regression_loss(prior: &PriorModel, samples: &[PriorSample]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let thetas: Vec<f64> = samples.iter().flat_map(|s| s.theta.flat()).collect();
    let out = prior.forward_batch(&thetas);
    out.iter().zip(samples).map(|(g, s)| math::powi(g - s.d, 2)).sum::<f64>() / samples.len() as f64
}

/// Regression loss and its gradient w.r.t. the prior parameters.
pub fn prior_regression_grad(prior: &PriorModel, samples: &[PriorSample]) -> (f64, Vec<f64>) {
    let thetas: Vec<f64> = samples.iter().flat_map(|s| s.theta.flat()).collect();
    let mut cache = Cache::default();
    prior.forward_cached(samples.len(), &thetas, &mut cache);
    let out = cache.dec_out.last().unwrap();
    let n = samples.len() as f64;
    let loss = out.iter().zip(samples).map(|(g, s)| math::powi(g - s.d, 2)).sum::<f64>() / n;
    let gout: Vec<f64> = out.iter().zip(samples).map(|(g, s)| 2.0 * (g - s.d) / n).collect();
    let mut grads = vec![0.0; prior.param_count()];
    prior.backward_cached(&cache, &gout, &mut grads, false);
    (loss, grads)
}

fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| math::powi(x - mean, 2)).sum::<f64>() / v.len() as f64
}

/// Fits `prior` to the samples by minimizing the squared distance error.
///
/// Requires at least 25% plausible (`d = 0`) and 25% implausible samples.
pub fn train_prior(prior: &mut PriorModel, samples: &[PriorSample], cfg: &PriorTrainConfig) -> Result<PriorTrainReport> {
    if samples.is_empty() {
        return Err(Error::config("no prior training samples"));
    }
    let zero = samples.iter().filter(|s| s.d == 0.0).count();
    let n = samples.len();
    if zero * 4 < n || (n - zero) * 4 < n {
        return Err(Error::config(alloc::format!(
            "prior training set needs >= 25% plausible and >= 25% implausible samples ({zero} of {n} plausible)"
        )));
    }
    if samples.iter().any(|s| !s.d.is_finite() || s.d < 0.0 || s.theta.check_finite().is_err()) {
        return Err(Error::input("prior samples must have finite non-negative targets"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut r: SeededRng = rng::derive(cfg.seed, 0x9121);
    order.shuffle(&mut r);
    let n_hold = ((n as f64 * cfg.holdout_fraction) as usize).min(n - 1);
    let holdout: Vec<PriorSample> = order[..n_hold].iter().map(|&i| samples[i].clone()).collect();
    let train: Vec<PriorSample> = order[n_hold..].iter().map(|&i| samples[i].clone()).collect();
    let schedule = StepSchedule::proportional(cfg.adam.lr, cfg.epochs);
    let mut opt = Adam::new(cfg.adam.clone(), prior.param_count());
    let initial_loss = prior_regression_loss(prior, &train);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        idx.shuffle(&mut r);
        let lr = schedule.lr(epoch);
        let mut acc = 0.0;
        for chunk in idx.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<PriorSample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = prior_regression_grad(prior, &batch);
            if !loss.is_finite() {
                return Err(Error::NonFinite("prior regression loss".into()));
            }
            acc += loss * batch.len() as f64;
            opt.update(&mut prior.params, &grads, lr)?;
        }
        let holdout_mse = prior_regression_loss(prior, &holdout);
        epochs.push(PriorEpoch { epoch, train_loss: acc / train.len() as f64, holdout_mse, lr });
    }
    let ds: Vec<f64> = holdout.iter().map(|s| s.d).collect();
    Ok(PriorTrainReport {
        holdout_mse: prior_regression_loss(prior, &holdout),
        holdout_d_variance: variance(&ds),
        initial_loss,
        epochs,
        train_count: train.len(),
        holdout_count: holdout.len(),
    })
}

/// Result of the anatomical regularizer on a batch of heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct AnatomicalLoss<T> {
    pub value: f64,
    pub distances: Vec<Option<f64>>,
    /// Gradient of `value` w.r.t. each input heatmap (zeros for degenerate samples).
    pub grads: Vec<Vec<T>>,
    pub degenerate: usize,
}

/// Mean prior distance of the soft-decoded poses of `heatmaps`.
///
/// Gradients reach the heatmaps through the soft-argmax decode; the prior
/// itself is read-only. Samples whose decode is degenerate contribute zero.
pub fn anatomical_loss<T: Real, P: PoseDistance + ?Sized>(
    prior: &P,
    heatmaps: &[&[T]],
    joints: usize,
    grid: &Grid,
    skel: &SkeletonSpec,
    temperature_fraction: f64,
) -> AnatomicalLoss<T> {
    let b = heatmaps.len();
    let cells = grid.cells();
    let mut out = AnatomicalLoss { value: 0.0, distances: vec![None; b], grads: vec![Vec::new(); b], degenerate: 0 };
    for (i, h) in heatmaps.iter().enumerate() {
        let mut g = vec![T::zero(); h.len()];
        let pts: Option<Vec<_>> = (0..joints)
            .map(|k| soft_argmax(&h[k * cells..(k + 1) * cells], grid, temperature_fraction))
            .collect();
        let Some(pts) = pts else {
            out.degenerate += 1;
            out.grads[i] = g;
            continue;
        };
        let coords: Vec<[f64; 2]> = pts.iter().map(|p| [p.x, p.y]).collect();
        let Ok(theta) = bone_vectors(&Pose::new(coords.clone()), skel) else {
            out.degenerate += 1;
            out.grads[i] = g;
            continue;
        };
        let (dist, gtheta) = prior.distance_with_grad(&theta.flat());
        out.value += dist / b as f64;
        out.distances[i] = Some(dist);
        let gvec: Vec<[f64; 2]> = gtheta.chunks(2).map(|c| [c[0] / b as f64, c[1] / b as f64]).collect();
        let gcoords = bone_vectors_backward(&coords, skel, &theta, &gvec);
        for (k, p) in pts.iter().enumerate() {
            let ch = &h[k * cells..(k + 1) * cells];
            soft_argmax_backward(ch, grid, p, temperature_fraction, gcoords[k][0], gcoords[k][1], &mut g[k * cells..(k + 1) * cells]);
        }
        out.grads[i] = g;
    }
    out
}

/// Mean absolute angle in radians between two directions, for reporting.
pub fn direction_error(a: [f64; 2], b: [f64; 2]) -> f64 {
    angle_between(a, b)
}

//! Percentage of correct keypoints.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::pose::Pose;

/// Per-joint PCK tallies over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PckResult {
    pub correct: Vec<usize>,
    pub evaluated: Vec<usize>,
    pub threshold: f64,
}

impl PckResult {
    /// Fraction correct per joint; `None` when no ground-truth instance was valid.
    pub fn fractions(&self) -> Vec<Option<f64>> {
        self.correct
            .iter()
            .zip(&self.evaluated)
            .map(|(&c, &n)| if n == 0 { None } else { Some(c as f64 / n as f64) })
            .collect()
    }

    /// Unweighted mean of the per-joint fractions over `joints` (all joints
    /// when `None`), skipping joints that were never evaluated.
    pub fn mean_over(&self, joints: Option<&[usize]>) -> f64 {
        let fr = self.fractions();
        let all: Vec<usize> = (0..fr.len()).collect();
        let idx = joints.unwrap_or(&all);
        let vals: Vec<f64> = idx.iter().filter_map(|&j| fr[j]).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    pub fn mean(&self) -> f64 {
        self.mean_over(None)
    }
}

/// Per-joint correctness flags for one prediction: `None` where the ground
/// truth joint is invalid.
pub fn joint_hits(pred: &Pose, gt: &Pose, threshold: f64) -> Result<Vec<Option<bool>>> {
    if pred.joint_count() != gt.joint_count() {
        return Err(Error::input(alloc::format!(
            "prediction has {} joints, ground truth {}",
            pred.joint_count(),
            gt.joint_count()
        )));
    }
    Ok(gt
        .valid
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            if !v {
                return None;
            }
            let [px, py] = pred.coords[j];
            let [gx, gy] = gt.coords[j];
            let err = math::hypot(px - gx, py - gy);
            Some(pred.valid[j] && err <= threshold)
        })
        .collect())
}

/// PCK@`alpha`: a joint is correct when its error is at most `alpha * image_size`.
pub fn pck(pred: &[Pose], gt: &[Pose], alpha: f64, image_size: f64) -> Result<PckResult> {
    if pred.len() != gt.len() {
        return Err(Error::input("prediction and ground-truth batches differ in length"));
    }
    if !(image_size > 0.0) {
        return Err(Error::input("image size must be positive"));
    }
    let k = gt.first().map_or(0, |p| p.joint_count());
    let threshold = alpha * image_size;
    let mut res = PckResult { correct: vec![0; k], evaluated: vec![0; k], threshold };
    for (p, g) in pred.iter().zip(gt) {
        if g.joint_count() != k {
            return Err(Error::input("ground-truth poses differ in joint count"));
        }
        for (j, hit) in joint_hits(p, g, threshold)?.into_iter().enumerate() {
            if let Some(h) = hit {
                res.evaluated[j] += 1;
                res.correct[j] += h as usize;
            }
        }
    }
    Ok(res)
}

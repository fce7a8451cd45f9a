//! Heatmap-space losses and their combination into the adaptation objective.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math;
use crate::error::{Error, Result};
use crate::real::Real;

/// Per-sample squared error `(1 / (K * cells)) * sum_k mask_k * ||pred_k - target_k||^2`.
///
/// Masked-out channels contribute nothing; the normalization is fixed so a
/// mask only removes terms.
pub fn heatmap_sq_error<T: Real>(pred: &[T], target: &[T], mask: &[bool], cells: usize) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let k = mask.len();
    let mut s = 0.0;
    for (j, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let (p, t) = (&pred[j * cells..(j + 1) * cells], &target[j * cells..(j + 1) * cells]);
        s += p.iter().zip(t).map(|(&a, &b)| math::powi((a - b).as_f64(), 2)).sum::<f64>();
    }
    s / (k * cells) as f64
}

/// Accumulates `coef * d heatmap_sq_error / d pred` into `out`.
pub fn heatmap_sq_error_grad<T: Real>(pred: &[T], target: &[T], mask: &[bool], cells: usize, coef: f64, out: &mut [T]) {
    let k = mask.len();
    let c = T::lit(2.0 * coef / (k * cells) as f64);
    for (j, &m) in mask.iter().enumerate() {
        if !m {
            continue;
        }
        let r = j * cells..(j + 1) * cells;
        for ((o, &a), &b) in out[r.clone()].iter_mut().zip(&pred[r.clone()]).zip(&target[r]) {
            *o += c * (a - b);
        }
    }
}

/// Supervised heatmap loss: mean over the batch of [`heatmap_sq_error`]
/// against rendered ground-truth targets.
pub fn source_loss<T: Real>(preds: &[&[T]], targets: &[&[T]], masks: &[Vec<bool>], cells: usize) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    let s: f64 = preds
        .iter()
        .zip(targets)
        .zip(masks)
        .map(|((p, t), m)| heatmap_sq_error(p, t, m, cells))
        .sum();
    s / preds.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyMode {
    /// `(1/|B|) * sum_i e_i`
    Plain,
    /// `(1/(|B| * sum v)) * sum_i v_i * e_i`
    Weighted,
}

/// Per-sample coefficients `c_i` with `loss = sum_i c_i * e_i`.
///
/// Returns `None` in weighted mode when the visibility weights sum to zero.
pub fn consistency_coefficients(mode: ConsistencyMode, batch: usize, visibility: Option<&[f64]>) -> Option<Vec<f64>> {
    let b = batch as f64;
    match mode {
        ConsistencyMode::Plain => Some(vec![1.0 / b; batch]),
        ConsistencyMode::Weighted => {
            let v = visibility.expect("weighted consistency needs visibility weights");
            assert_eq!(v.len(), batch);
            let sum: f64 = v.iter().sum();
            if sum <= 0.0 {
                None
            } else {
                Some(v.iter().map(|&vi| vi / (b * sum)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub coefficients: Vec<f64>,
    /// Set when weighted mode met an all-zero visibility batch (loss forced to 0).
    pub degenerate: bool,
}

/// Confidence-masked consistency between student maps (already warped back
/// to the original frame) and pseudo-label targets.
pub fn consistency_loss<T: Real>(
    student: &[&[T]],
    targets: &[&[T]],
    masks: &[Vec<bool>],
    visibility: Option<&[f64]>,
    mode: ConsistencyMode,
    cells: usize,
) -> ConsistencyLoss {
    let per_sample: Vec<f64> = student
        .iter()
        .zip(targets)
        .zip(masks)
        .map(|((s, t), m)| heatmap_sq_error(s, t, m, cells))
        .collect();
    match consistency_coefficients(mode, student.len(), visibility) {
        Some(coefficients) => {
            let value = per_sample.iter().zip(&coefficients).map(|(e, c)| e * c).sum();
            ConsistencyLoss { value, per_sample, coefficients, degenerate: false }
        }
        None => ConsistencyLoss { value: 0.0, coefficients: vec![0.0; per_sample.len()], per_sample, degenerate: true },
    }
}

/// Raw loss terms of one adaptation step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub src_ocl: f64,
    pub ant: f64,
    pub pred_vis: f64,
    pub pred: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_v: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub src_ocl: f64,
    pub ant: f64,
    pub pred_vis: f64,
    pub pred: f64,
    pub gamma: f64,
    /// `gamma * pred_vis + (1 - gamma) * pred`
    pub vis: f64,
    /// `src_ocl + lambda_a * ant + lambda_v * vis`
    pub total: f64,
}

/// Curriculum-mixed visibility loss and the full objective.
pub fn total_loss(c: &LossComponents, w: &LossWeights, gamma: f64) -> Result<LossBreakdown> {
    for (name, v) in [("src_ocl", c.src_ocl), ("ant", c.ant), ("pred_vis", c.pred_vis), ("pred", c.pred)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
    }
    let vis = gamma * c.pred_vis + (1.0 - gamma) * c.pred;
    let total = c.src_ocl + w.lambda_a * c.ant + w.lambda_v * vis;
    Ok(LossBreakdown { src_ocl: c.src_ocl, ant: c.ant, pred_vis: c.pred_vis, pred: c.pred, gamma, vis, total })
}

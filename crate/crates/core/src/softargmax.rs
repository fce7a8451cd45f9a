//! Differentiable keypoint decoding.
//!
//! Each channel becomes a softmax over cells at temperature
//! `temperature_fraction * peak`, and the keypoint is the probability-weighted
//! mean cell position. Hard argmax has zero gradient almost everywhere; this
//! decode lets pose-level losses reach the heatmaps.

use alloc::vec::Vec;

use crate::heatmap::{argmax, Grid};
use crate::math;
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct SoftPoint {
    /// Image-space coordinates.
    pub x: f64,
    pub y: f64,
    temperature: f64,
    peak_index: usize,
    probs: Vec<f64>,
}

/// `None` when the channel has no positive activation (temperature undefined).
pub fn soft_argmax<T: Real>(channel: &[T], grid: &Grid, temperature_fraction: f64) -> Option<SoftPoint> {
    let (peak_index, peak) = argmax(channel);
    let peak = peak.as_f64();
    if !(peak > 0.0) || !peak.is_finite() {
        return None;
    }
    let t = temperature_fraction * peak;
    let mut probs: Vec<f64> = channel.iter().map(|v| math::exp((v.as_f64() - peak) / t)).collect();
    let z: f64 = probs.iter().sum();
    let (mut x, mut y) = (0.0, 0.0);
    for (i, p) in probs.iter_mut().enumerate() {
        *p /= z;
        x += *p * (i % grid.width) as f64;
        y += *p * (i / grid.width) as f64;
    }
    Some(SoftPoint { x: x * grid.scale, y: y * grid.scale, temperature: t, peak_index, probs })
}

/// Accumulates `d loss / d channel` into `out`, given `d loss / d (x, y)`.
///
/// Includes the dependence of the temperature on the peak value.
pub fn soft_argmax_backward<T: Real>(channel: &[T], grid: &Grid, point: &SoftPoint, temperature_fraction: f64, gx: f64, gy: f64, out: &mut [T]) {
    let t = point.temperature;
    let (mx, my) = (point.x / grid.scale, point.y / grid.scale);
    // d/dh_j with temperature fixed: p_j * (pos_j - mean) / t
    let mut g_temp = 0.0;
    for (i, (&p, o)) in point.probs.iter().zip(out.iter_mut()).enumerate() {
        let dx = (i % grid.width) as f64 - mx;
        let dy = (i / grid.width) as f64 - my;
        let dot = gx * grid.scale * dx + gy * grid.scale * dy;
        *o += T::lit(p * dot / t);
        g_temp -= p * channel[i].as_f64() * dot / (t * t);
    }
    out[point.peak_index] += T::lit(g_temp * temperature_fraction);
}

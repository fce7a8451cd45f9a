//! Gaussian heatmap targets and argmax decoding.
//!
//! Cell `(row, col)` corresponds to image coordinates `(col * scale, row * scale)`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::pose::Pose;
use crate::real::Real;

/// Heatmap grid geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    /// Image pixels per heatmap cell.
    pub scale: f64,
}

impl Grid {
    /// 64x64 cells over a square image of side `image_size`.
    pub fn for_image(image_size: usize, cells: usize) -> Self {
        Grid { height: cells, width: cells, scale: image_size as f64 / cells as f64 }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }
}

/// `K` non-negative maps on a shared grid, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap<T = f32> {
    pub joints: usize,
    pub grid: Grid,
    pub values: Vec<T>,
}

impl<T: Real> Heatmap<T> {
    pub fn zeros(joints: usize, grid: Grid) -> Self {
        Heatmap { joints, grid, values: vec![T::zero(); joints * grid.cells()] }
    }

    /// Wraps raw network output, clamping negative activations to zero.
    pub fn from_raw(joints: usize, grid: Grid, raw: &[T]) -> Self {
        assert_eq!(raw.len(), joints * grid.cells());
        Heatmap { joints, grid, values: raw.iter().map(|&v| v.max(T::zero())).collect() }
    }

    pub fn channel(&self, k: usize) -> &[T] {
        let n = self.grid.cells();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [T] {
        let n = self.grid.cells();
        &mut self.values[k * n..(k + 1) * n]
    }
}

/// Nearest cell `(row, col)` to an image-space point, if inside the grid.
pub fn nearest_cell(grid: &Grid, x: f64, y: f64) -> Option<(usize, usize)> {
    let c = math::round(x / grid.scale);
    let r = math::round(y / grid.scale);
    if c < 0.0 || r < 0.0 || c >= grid.width as f64 || r >= grid.height as f64 {
        None
    } else {
        Some((r as usize, c as usize))
    }
}

/// Writes an unnormalized Gaussian with peak 1.0 centred on cell `(row, col)`.
pub fn splat_gaussian<T: Real>(out: &mut [T], grid: &Grid, row: usize, col: usize, sigma: f64) {
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gx: Vec<f64> = (0..grid.width).map(|j| math::exp(-math::powi(j as f64 - col as f64, 2) * inv)).collect();
    let gy: Vec<f64> = (0..grid.height).map(|i| math::exp(-math::powi(i as f64 - row as f64, 2) * inv)).collect();
    for (i, row_vals) in out.chunks_mut(grid.width).enumerate() {
        for (v, &x) in row_vals.iter_mut().zip(&gx) {
            *v = T::lit(gy[i] * x);
        }
    }
}

/// Renders one peak-normalized Gaussian channel per joint.
///
/// Invalid joints and joints whose nearest cell falls outside the grid get
/// an all-zero channel.
pub fn render_heatmap<T: Real>(pose: &Pose, sigma: f64, grid: Grid) -> Result<Heatmap<T>> {
    if grid.height < 8 || grid.width < 8 {
        return Err(Error::input("heatmap grid must be at least 8x8"));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::input("sigma must be positive"));
    }
    pose.check_finite()?;
    let mut hm = Heatmap::zeros(pose.joint_count(), grid);
    for (k, (&[x, y], &valid)) in pose.coords.iter().zip(&pose.valid).enumerate() {
        if !valid {
            continue;
        }
        if let Some((r, c)) = nearest_cell(&grid, x, y) {
            splat_gaussian(hm.channel_mut(k), &grid, r, c, sigma);
        }
    }
    Ok(hm)
}

/// Argmax cell of one channel (smallest row-major index on ties) and its value.
pub fn argmax<T: Real>(channel: &[T]) -> (usize, T) {
    let mut best = 0;
    let mut peak = channel[0];
    for (i, &v) in channel.iter().enumerate().skip(1) {
        if v > peak {
            best = i;
            peak = v;
        }
    }
    (best, peak)
}

/// Per channel: argmax cell mapped back to image coordinates, peak value as confidence.
pub fn decode_heatmap<T: Real>(h: &Heatmap<T>) -> (Pose, Vec<f64>) {
    let mut coords = Vec::with_capacity(h.joints);
    let mut conf = Vec::with_capacity(h.joints);
    for k in 0..h.joints {
        let (idx, peak) = argmax(h.channel(k));
        let (r, c) = (idx / h.grid.width, idx % h.grid.width);
        coords.push([c as f64 * h.grid.scale, r as f64 * h.grid.scale]);
        conf.push(peak.as_f64());
    }
    (Pose::new(coords), conf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid64() -> Grid {
        Grid::for_image(256, 64)
    }

    #[test]
    fn centre_joint_peaks_at_32_32() {
        let p = Pose::new(vec![[128.0, 128.0]]);
        let h: Heatmap<f64> = render_heatmap(&p, 2.0, grid64()).unwrap();
        let (idx, peak) = argmax(h.channel(0));
        assert_eq!((idx / 64, idx % 64), (32, 32));
        assert_eq!(peak, 1.0);
    }

    #[test]
    fn masked_joint_gives_zero_channel() {
        let p = Pose::with_mask(vec![[100.0, 100.0], [50.0, 50.0]], vec![true, false]).unwrap();
        let h: Heatmap<f64> = render_heatmap(&p, 2.0, grid64()).unwrap();
        assert_eq!(h.channel(1).iter().sum::<f64>(), 0.0);
        assert!(h.channel(0).iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn out_of_bounds_joint_gives_zero_channel() {
        let p = Pose::new(vec![[-40.0, 10.0], [10.0, 400.0]]);
        let h: Heatmap<f64> = render_heatmap(&p, 2.0, grid64()).unwrap();
        assert!(h.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Pose::new(vec![[f64::NAN, 1.0]]);
        assert!(render_heatmap::<f64>(&p, 2.0, grid64()).is_err());
        let p = Pose::new(vec![[1.0, 1.0]]);
        assert!(render_heatmap::<f64>(&p, 0.0, grid64()).is_err());
        assert!(render_heatmap::<f64>(&p, 2.0, Grid { height: 4, width: 64, scale: 4.0 }).is_err());
    }

    #[test]
    fn one_hot_decodes_to_cell() {
        let mut h = Heatmap::<f64>::zeros(1, grid64());
        h.channel_mut(0)[5 * 64 + 7] = 1.0;
        let (p, conf) = decode_heatmap(&h);
        assert_eq!(p.coords[0], [7.0 * 4.0, 5.0 * 4.0]);
        assert_eq!(conf[0], 1.0);
    }

    #[test]
    fn zero_channel_decodes_with_zero_confidence() {
        let h = Heatmap::<f64>::zeros(2, grid64());
        let (p, conf) = decode_heatmap(&h);
        assert_eq!(conf, vec![0.0, 0.0]);
        assert_eq!(p.coords[0], [0.0, 0.0]);
    }

    #[test]
    fn ties_break_to_smallest_index() {
        let mut h = Heatmap::<f64>::zeros(1, grid64());
        h.channel_mut(0)[100] = 0.5;
        h.channel_mut(0)[40] = 0.5;
        h.channel_mut(0)[3000] = 0.5;
        assert_eq!(argmax(h.channel(0)).0, 40);
    }

    #[test]
    fn off_grid_joint_decodes_within_half_cell() {
        let s = 4.0;
        let p = Pose::new(vec![[10.4 * s, 20.6 * s]]);
        let h: Heatmap<f64> = render_heatmap(&p, 2.0, grid64()).unwrap();
        // brute-force scan for the maximum
        let (mut bi, mut bv) = (0, f64::MIN);
        for (i, &v) in h.channel(0).iter().enumerate() {
            if v > bv {
                bv = v;
                bi = i;
            }
        }
        let (r, c) = ((bi / 64) as f64, (bi % 64) as f64);
        let (dp, _) = decode_heatmap(&h);
        assert_eq!(dp.coords[0], [c * s, r * s]);
        assert!((dp.coords[0][0] / s - 10.4).abs() <= 0.5);
        assert!((dp.coords[0][1] / s - 20.6).abs() <= 0.5);
    }
}

//! Geometric and photometric augmentations with exact geometric inverses.
//!
//! Affine maps act on image pixel coordinates. A tensor on a grid with
//! `scale` pixels per cell and cell offset `offset` places cell `(r, c)` at
//! pixel `(scale * (c + offset), scale * (r + offset))`: heatmaps use offset 0,
//! pooled network inputs use 0.5 (their cells are box-filter centres).

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::nn::Tensor;
use crate::pose::Pose;
use crate::real::Real;
use crate::rng;

/// 2x3 affine map in image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub m: [[f64; 3]; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Affine { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn apply(&self, [x, y]: [f64; 2]) -> [f64; 2] {
        let m = &self.m;
        [m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2]]
    }

    pub fn inverse(&self) -> Affine {
        let m = &self.m;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let a = m[1][1] / det;
        let b = -m[0][1] / det;
        let c = -m[1][0] / det;
        let d = m[0][0] / det;
        Affine {
            m: [[a, b, -(a * m[0][2] + b * m[1][2])], [c, d, -(c * m[0][2] + d * m[1][2])]],
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Affine::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: f64,
    /// Fraction of the image side.
    pub translate: [f64; 2],
    pub shear_deg: f64,
    pub scale: f64,
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams { rotation_deg: 0.0, translate: [0.0, 0.0], shear_deg: 0.0, scale: 1.0 }
    }

    /// Rotation, shear and scale about the image centre, then translation.
    pub fn to_affine(&self, image_size: f64) -> Affine {
        if *self == AffineParams::identity() {
            return Affine::identity();
        }
        let (s, c) = (math::sin(self.rotation_deg.to_radians()), math::cos(self.rotation_deg.to_radians()));
        let sh = math::tan(self.shear_deg.to_radians());
        // R * Shx * S
        let a = [[c * self.scale, (c * sh - s) * self.scale], [s * self.scale, (s * sh + c) * self.scale]];
        let ctr = image_size / 2.0;
        let tx = ctr + self.translate[0] * image_size - (a[0][0] * ctr + a[0][1] * ctr);
        let ty = ctr + self.translate[1] * image_size - (a[1][0] * ctr + a[1][1] * ctr);
        Affine { m: [[a[0][0], a[0][1], tx], [a[1][0], a[1][1], ty]] }
    }
}

/// Brightness offset and contrast gain in normalized input units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Photometric {
    pub brightness: f64,
    pub contrast: f64,
}

impl Photometric {
    pub fn identity() -> Self {
        Photometric { brightness: 0.0, contrast: 1.0 }
    }
}

/// One sampled augmentation: an invertible affine part plus a photometric
/// part that has no inverse and only touches images.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationTransform {
    pub params: AffineParams,
    /// Original pixel coordinates -> augmented pixel coordinates.
    pub forward: Affine,
    pub inverse: Affine,
    pub photometric: Photometric,
}

impl AugmentationTransform {
    pub fn identity() -> Self {
        AugmentationTransform {
            params: AffineParams::identity(),
            forward: Affine::identity(),
            inverse: Affine::identity(),
            photometric: Photometric::identity(),
        }
    }

    pub fn new(params: AffineParams, photometric: Photometric, image_size: f64) -> Self {
        let forward = params.to_affine(image_size);
        AugmentationTransform { params, forward, inverse: forward.inverse(), photometric }
    }

    /// Augmented input: geometric warp, then photometric adjustment.
    pub fn apply_input<T: Real>(&self, x: &Tensor<T>, pixels_per_cell: f64) -> Tensor<T> {
        let mut out = if self.forward.is_identity() {
            x.clone()
        } else {
            Warp::new(&self.inverse, x.h, x.w, pixels_per_cell, 0.5).apply(x)
        };
        let p = self.photometric;
        if p != Photometric::identity() {
            let (c, b) = (T::lit(p.contrast), T::lit(p.brightness));
            out.data.iter_mut().for_each(|v| *v = *v * c + b);
        }
        out
    }

    /// Warp taking maps predicted on the augmented input back to the original frame.
    pub fn inverse_warp(&self, h: usize, w: usize, pixels_per_cell: f64) -> Warp {
        Warp::new(&self.forward, h, w, pixels_per_cell, 0.0)
    }

    /// Warp taking original-frame maps into the augmented frame.
    pub fn forward_warp(&self, h: usize, w: usize, pixels_per_cell: f64) -> Warp {
        Warp::new(&self.inverse, h, w, pixels_per_cell, 0.0)
    }

    /// Moves pose joints into the augmented frame; joints landing outside
    /// `[0, image_size)` are marked invalid.
    pub fn apply_pose(&self, pose: &Pose, image_size: f64) -> Pose {
        let mut out = pose.clone();
        for (c, v) in out.coords.iter_mut().zip(out.valid.iter_mut()) {
            *c = self.forward.apply(*c);
            if !(c[0] >= 0.0 && c[1] >= 0.0 && c[0] < image_size && c[1] < image_size) {
                *v = false;
            }
        }
        out
    }
}

/// Sampling ranges; each affine component is drawn uniformly from `[-r, r]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub rotation_deg: f64,
    pub translate_frac: f64,
    pub shear_deg: f64,
    pub scale: [f64; 2],
    pub brightness: f64,
    pub contrast: [f64; 2],
}

impl AugmentRanges {
    pub fn none() -> Self {
        AugmentRanges { rotation_deg: 0.0, translate_frac: 0.0, shear_deg: 0.0, scale: [1.0, 1.0], brightness: 0.0, contrast: [1.0, 1.0] }
    }

    /// Student-side augmentation during adaptation.
    pub fn strong() -> Self {
        AugmentRanges {
            rotation_deg: 30.0,
            translate_frac: 0.05,
            shear_deg: 10.0,
            scale: [0.85, 1.15],
            brightness: 0.1,
            contrast: [0.7, 1.3],
        }
    }

    pub fn is_none(&self) -> bool {
        *self == AugmentRanges::none()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, image_size: f64) -> AugmentationTransform {
        if self.is_none() {
            return AugmentationTransform::identity();
        }
        let sym = |rng: &mut R, r: f64| rng::uniform(rng, -r, r);
        let params = AffineParams {
            rotation_deg: sym(rng, self.rotation_deg),
            translate: [sym(rng, self.translate_frac), sym(rng, self.translate_frac)],
            shear_deg: sym(rng, self.shear_deg),
            scale: rng::uniform(rng, self.scale[0], self.scale[1]),
        };
        let photometric = Photometric {
            brightness: sym(rng, self.brightness),
            contrast: rng::uniform(rng, self.contrast[0], self.contrast[1]),
        };
        AugmentationTransform::new(params, photometric, image_size)
    }
}

/// Precomputed bilinear resampling: `out(p) = src(map(p))` with zero padding.
#[derive(Debug, Clone)]
pub struct Warp {
    h: usize,
    w: usize,
    /// Per destination cell: four `(source index, weight)` taps.
    taps: Vec<[(u32, f32); 4]>,
}

impl Warp {
    pub fn new(map: &Affine, h: usize, w: usize, pixels_per_cell: f64, offset: f64) -> Self {
        let mut taps = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let p = [pixels_per_cell * (c as f64 + offset), pixels_per_cell * (r as f64 + offset)];
                let q = map.apply(p);
                let u = q[0] / pixels_per_cell - offset;
                let v = q[1] / pixels_per_cell - offset;
                let (u0, v0) = (math::floor(u), math::floor(v));
                let (fu, fv) = (u - u0, v - v0);
                let mut t = [(0u32, 0f32); 4];
                let corners = [(0.0, 0.0, (1.0 - fu) * (1.0 - fv)), (1.0, 0.0, fu * (1.0 - fv)), (0.0, 1.0, (1.0 - fu) * fv), (1.0, 1.0, fu * fv)];
                for (slot, (du, dv, wgt)) in t.iter_mut().zip(corners) {
                    let (x, y) = (u0 + du, v0 + dv);
                    if x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64 && wgt > 0.0 {
                        *slot = ((y as usize * w + x as usize) as u32, wgt as f32);
                    }
                }
                taps.push(t);
            }
        }
        Warp { h, w, taps }
    }

    pub fn apply<T: Real>(&self, src: &Tensor<T>) -> Tensor<T> {
        assert_eq!((src.h, src.w), (self.h, self.w));
        let mut out = Tensor::zeros(src.c, src.h, src.w);
        let n = self.h * self.w;
        for ch in 0..src.c {
            let s = &src.data[ch * n..(ch + 1) * n];
            let o = &mut out.data[ch * n..(ch + 1) * n];
            for (ov, t) in o.iter_mut().zip(&self.taps) {
                let mut acc = T::zero();
                for &(i, wgt) in t {
                    if wgt != 0.0 {
                        acc += s[i as usize] * T::lit(wgt as f64);
                    }
                }
                *ov = acc;
            }
        }
        out
    }

    /// Transpose of `apply`: scatters `gout` back onto the source grid.
    pub fn adjoint<T: Real>(&self, gout: &[T], channels: usize) -> Vec<T> {
        let n = self.h * self.w;
        let mut gin = alloc::vec![T::zero(); channels * n];
        for ch in 0..channels {
            let g = &gout[ch * n..(ch + 1) * n];
            let d = &mut gin[ch * n..(ch + 1) * n];
            for (&gv, t) in g.iter().zip(&self.taps) {
                if gv == T::zero() {
                    continue;
                }
                for &(i, wgt) in t {
                    if wgt != 0.0 {
                        d[i as usize] += gv * T::lit(wgt as f64);
                    }
                }
            }
        }
        gin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn inverse_composes_to_identity() {
        let t = AugmentationTransform::new(
            AffineParams { rotation_deg: 23.0, translate: [0.05, -0.03], shear_deg: 7.0, scale: 1.1 },
            Photometric::identity(),
            256.0,
        );
        for p in [[10.0, 20.0], [128.0, 128.0], [250.0, 3.0]] {
            let q = t.inverse.apply(t.forward.apply(p));
            assert!((q[0] - p[0]).abs() < 1e-9 && (q[1] - p[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let t = AffineParams { rotation_deg: 17.0, translate: [0.02, 0.01], shear_deg: 4.0, scale: 0.9 }.to_affine(32.0);
        let warp = Warp::new(&t, 8, 8, 4.0, 0.0);
        let x = Tensor::from_vec(1, 8, 8, (0..64).map(|i| (i as f64 * 0.3).sin()).collect::<Vec<f64>>());
        let y: Vec<f64> = (0..64).map(|i| (i as f64 * 0.11).cos()).collect();
        let ax = warp.apply(&x);
        let aty = warp.adjoint(&y, 1);
        let lhs: f64 = ax.data.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn identity_warp_copies() {
        let w = Warp::new(&Affine::identity(), 4, 4, 4.0, 0.5);
        let x = Tensor::from_vec(2, 4, 4, (0..32).map(|i| i as f64).collect::<Vec<f64>>());
        assert_eq!(w.apply(&x), x);
        let _ = vec![0];
    }
}

//! Minimal tensor machinery for the heatmap regressor and the prior MLP.
//!
//! Layers store their parameters in one flat buffer owned by the model, so
//! optimizers and the teacher EMA operate on plain slices.

mod conv;
mod dense;
mod posenet;

pub use conv::Conv2d;
pub use dense::{Activation, Dense};
pub use posenet::{ArchSpec, PoseNet, Workspace};

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Dense `channels x height x width` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Tensor { c, h, w, data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn plane(&self, ch: usize) -> &[T] {
        let n = self.h * self.w;
        &self.data[ch * n..(ch + 1) * n]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [T] {
        let n = self.h * self.w;
        &mut self.data[ch * n..(ch + 1) * n]
    }

    /// Resizes in place, zero-filling; keeps the allocation when possible.
    pub fn reset(&mut self, c: usize, h: usize, w: usize) {
        self.c = c;
        self.h = h;
        self.w = w;
        self.data.clear();
        self.data.resize(c * h * w, T::zero());
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Converts an interleaved 8-bit RGB image into the network's input tensor:
/// `factor x factor` box-averaged, channel-major, scaled to roughly [-0.5, 0.5].
pub fn prepare_input<T: Real>(rgb: &[u8], height: usize, width: usize, factor: usize) -> Tensor<T> {
    assert_eq!(rgb.len(), height * width * 3, "image buffer length");
    let (h, w) = (height / factor, width / factor);
    let mut acc = vec![0u32; 3 * h * w];
    for y in 0..h * factor {
        let row = &rgb[y * width * 3..(y + 1) * width * 3];
        let oy = y / factor;
        for x in 0..w * factor {
            let ox = x / factor;
            let px = &row[x * 3..x * 3 + 3];
            for c in 0..3 {
                acc[(c * h + oy) * w + ox] += px[c] as u32;
            }
        }
    }
    let norm = 1.0 / (255.0 * (factor * factor) as f64);
    let data = acc.iter().map(|&s| T::lit(s as f64 * norm - 0.5)).collect();
    Tensor { c: 3, h, w, data }
}

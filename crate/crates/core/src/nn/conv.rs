use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::real::Real;

/// Square-kernel 2D convolution with zero padding `ksize / 2`, optional fused ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub ksize: usize,
    pub stride: usize,
    pub relu: bool,
    /// Offset of the `[cout, cin * ksize * ksize]` weight block in the flat parameter buffer.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, ksize: usize, stride: usize, relu: bool, offset: usize) -> Self {
        Conv2d {
            cin,
            cout,
            ksize,
            stride,
            relu,
            weight_offset: offset,
            bias_offset: offset + cout * cin * ksize * ksize,
        }
    }

    pub fn param_count(&self) -> usize {
        self.cout * self.cin * self.ksize * self.ksize + self.cout
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.ksize * self.ksize
    }

    fn pad(&self) -> usize {
        self.ksize / 2
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let p = 2 * self.pad();
        ((h + p - self.ksize) / self.stride + 1, (w + p - self.ksize) / self.stride + 1)
    }

    fn im2col<T: Real>(&self, input: &Tensor<T>, col: &mut Vec<T>) {
        let (oh, ow) = self.out_hw(input.h, input.w);
        let k = self.ksize;
        let pad = self.pad() as isize;
        let n = oh * ow;
        col.clear();
        col.resize(self.fan_in() * n, T::zero());
        for c in 0..self.cin {
            let plane = input.plane(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut col[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= input.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * input.w..][..input.w];
                        let dst = &mut row[oy * ow..][..ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < input.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<T: Real>(&self, col: &[T], gin: &mut Tensor<T>) {
        let (oh, ow) = self.out_hw(gin.h, gin.w);
        let k = self.ksize;
        let pad = self.pad() as isize;
        let n = oh * ow;
        let (ih, iw) = (gin.h, gin.w);
        for c in 0..self.cin {
            let plane = gin.plane_mut(c);
            for ky in 0..k {
                for kx in 0..k {
                    let row = &col[((c * k + ky) * k + kx) * n..][..n];
                    for oy in 0..oh {
                        let iy = (oy * self.stride) as isize + ky as isize - pad;
                        if iy < 0 || iy >= ih as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * iw..][..iw];
                        let src = &row[oy * ow..][..ow];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * self.stride) as isize + kx as isize - pad;
                            if ix >= 0 && ix < iw as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Forward pass. `col` receives the unfolded input, kept for `backward`.
    pub fn forward<T: Real>(&self, params: &[T], input: &Tensor<T>, col: &mut Vec<T>, out: &mut Tensor<T>) {
        debug_assert_eq!(input.c, self.cin);
        let (oh, ow) = self.out_hw(input.h, input.w);
        let n = oh * ow;
        self.im2col(input, col);
        out.reset(self.cout, oh, ow);
        for (o, plane) in out.data.chunks_mut(n).enumerate() {
            let b = params[self.bias_offset + o];
            plane.iter_mut().for_each(|v| *v = b);
        }
        let w = &params[self.weight_offset..self.weight_offset + self.cout * self.fan_in()];
        T::gemm(self.cout, self.fan_in(), n, T::one(), w, false, col, false, T::one(), &mut out.data);
        if self.relu {
            out.data.iter_mut().for_each(|v| {
                if *v < T::zero() {
                    *v = T::zero()
                }
            });
        }
    }

    /// Backward pass. `out` is this layer's (post-activation) output, `gout`
    /// its gradient (modified in place by the ReLU mask). Parameter gradients
    /// accumulate into `grads`; the input gradient accumulates into `gin`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        col: &[T],
        out: &Tensor<T>,
        gout: &mut Tensor<T>,
        grads: &mut [T],
        gin: Option<&mut Tensor<T>>,
        dcol: &mut Vec<T>,
    ) {
        let n = out.h * out.w;
        if self.relu {
            for (g, &o) in gout.data.iter_mut().zip(&out.data) {
                if o <= T::zero() {
                    *g = T::zero();
                }
            }
        }
        for (o, plane) in gout.data.chunks(n).enumerate() {
            let s: T = plane.iter().copied().sum();
            grads[self.bias_offset + o] += s;
        }
        let fan = self.fan_in();
        let wlen = self.cout * fan;
        T::gemm(
            self.cout,
            n,
            fan,
            T::one(),
            &gout.data,
            false,
            col,
            true,
            T::one(),
            &mut grads[self.weight_offset..self.weight_offset + wlen],
        );
        if let Some(gin) = gin {
            dcol.clear();
            dcol.resize(fan * n, T::zero());
            let w = &params[self.weight_offset..self.weight_offset + wlen];
            T::gemm(fan, self.cout, n, T::one(), w, true, &gout.data, false, T::zero(), dcol);
            self.col2im(dcol, gin);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn direct_conv(conv: &Conv2d, params: &[f64], x: &Tensor<f64>) -> Tensor<f64> {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let pad = conv.ksize as isize / 2;
        let mut out = Tensor::zeros(conv.cout, oh, ow);
        for o in 0..conv.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = params[conv.bias_offset + o];
                    for c in 0..conv.cin {
                        for ky in 0..conv.ksize {
                            for kx in 0..conv.ksize {
                                let iy = (oy * conv.stride + ky) as isize - pad;
                                let ix = (ox * conv.stride + kx) as isize - pad;
                                if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                    continue;
                                }
                                let wi = ((o * conv.cin + c) * conv.ksize + ky) * conv.ksize + kx;
                                s += params[conv.weight_offset + wi] * x.data[(c * x.h + iy as usize) * x.w + ix as usize];
                            }
                        }
                    }
                    out.data[(o * oh + oy) * ow + ox] = if conv.relu && s < 0.0 { 0.0 } else { s };
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loop() {
        for (k, s, relu) in [(3, 1, false), (3, 2, true), (1, 1, false)] {
            let conv = Conv2d::new(2, 3, k, s, relu, 0);
            let params: Vec<f64> = (0..conv.param_count()).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect();
            let x = Tensor::from_vec(2, 7, 6, (0..84).map(|i| ((i * 13 % 17) as f64 - 8.0) * 0.05).collect());
            let mut col = vec![];
            let mut out = Tensor::zeros(0, 0, 0);
            conv.forward(&params, &x, &mut col, &mut out);
            let want = direct_conv(&conv, &params, &x);
            assert_eq!((out.c, out.h, out.w), (want.c, want.h, want.w));
            for (a, b) in out.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let conv = Conv2d::new(2, 2, 3, 2, false, 0);
        let mut params: Vec<f64> = (0..conv.param_count()).map(|i| ((i * 5 % 9) as f64 - 4.0) * 0.1).collect();
        let x = Tensor::from_vec(2, 5, 5, (0..50).map(|i| ((i * 3 % 7) as f64 - 3.0) * 0.2).collect());
        // loss = sum(out * r) for a fixed r
        let loss = |p: &[f64], x: &Tensor<f64>| -> f64 {
            let out = direct_conv(&conv, p, x);
            out.data.iter().enumerate().map(|(i, v)| v * (i as f64 * 0.37).sin()).sum()
        };
        let mut col = vec![];
        let mut out = Tensor::zeros(0, 0, 0);
        conv.forward(&params, &x, &mut col, &mut out);
        let mut gout = Tensor::from_vec(out.c, out.h, out.w, (0..out.len()).map(|i| (i as f64 * 0.37).sin()).collect());
        let mut grads = vec![0.0; params.len()];
        let mut gin = Tensor::zeros(2, 5, 5);
        let mut dcol = vec![];
        conv.backward(&params, &col, &out, &mut gout, &mut grads, Some(&mut gin), &mut dcol);
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let lp = loss(&params, &x);
            params[i] = orig - h;
            let lm = loss(&params, &x);
            params[i] = orig;
            assert!(((lp - lm) / (2.0 * h) - grads[i]).abs() < 1e-7, "param {i}");
        }
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp.data[i] = x.data[i] + h;
            let lp = loss(&params, &xp);
            xp.data[i] = x.data[i] - h;
            let lm = loss(&params, &xp);
            xp.data[i] = x.data[i];
            assert!(((lp - lm) / (2.0 * h) - gin.data[i]).abs() < 1e-7, "input {i}");
        }
    }
}

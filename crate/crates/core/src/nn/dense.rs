use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    /// `ln(1 + e^x)`, strictly non-negative.
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(T::zero()),
            Activation::Softplus => {
                // stable form: max(x, 0) + ln(1 + e^-|x|)
                x.max(T::zero()) + (-x.abs()).exp().ln_1p()
            }
        }
    }

    /// Derivative expressed through the pre-activation `x`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => T::one() / (T::one() + (-x).exp()),
        }
    }
}

/// Fully connected layer over row-major batches `[batch, fan_in] -> [batch, fan_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// `[fan_in, fan_out]` weight block, then `fan_out` biases.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl Dense {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation, offset: usize) -> Self {
        Dense {
            fan_in,
            fan_out,
            activation,
            weight_offset: offset,
            bias_offset: offset + fan_in * fan_out,
        }
    }

    pub fn param_count(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }

    /// Writes pre-activations to `pre` and activations to `out`.
    pub fn forward<T: Real>(&self, params: &[T], batch: usize, input: &[T], pre: &mut Vec<T>, out: &mut Vec<T>) {
        debug_assert_eq!(input.len(), batch * self.fan_in);
        pre.clear();
        let bias = &params[self.bias_offset..self.bias_offset + self.fan_out];
        for _ in 0..batch {
            pre.extend_from_slice(bias);
        }
        let w = &params[self.weight_offset..self.weight_offset + self.fan_in * self.fan_out];
        T::gemm(batch, self.fan_in, self.fan_out, T::one(), input, false, w, false, T::one(), pre);
        out.clear();
        out.extend(pre.iter().map(|&z| self.activation.apply(z)));
    }

    /// Given `gout` (gradient w.r.t. activations), accumulates parameter
    /// gradients and writes the input gradient into `gin` when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        batch: usize,
        input: &[T],
        pre: &[T],
        gout: &[T],
        grads: &mut [T],
        gin: Option<&mut Vec<T>>,
        scratch: &mut Vec<T>,
    ) {
        scratch.clear();
        scratch.extend(gout.iter().zip(pre).map(|(&g, &z)| g * self.activation.derivative(z)));
        for row in scratch.chunks(self.fan_out) {
            for (gb, &g) in grads[self.bias_offset..self.bias_offset + self.fan_out].iter_mut().zip(row) {
                *gb += g;
            }
        }
        let wlen = self.fan_in * self.fan_out;
        T::gemm(
            self.fan_in,
            batch,
            self.fan_out,
            T::one(),
            input,
            true,
            scratch,
            false,
            T::one(),
            &mut grads[self.weight_offset..self.weight_offset + wlen],
        );
        if let Some(gin) = gin {
            gin.clear();
            gin.resize(batch * self.fan_in, T::zero());
            let w = &params[self.weight_offset..self.weight_offset + wlen];
            T::gemm(batch, self.fan_out, self.fan_in, T::one(), scratch, false, w, true, T::zero(), gin);
        }
    }
}

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Conv2d, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng;

/// Architecture descriptor of the heatmap regressor.
///
/// Encoder: `widths.len()` stages, each a stride-2 3x3 convolution, stages
/// after the first followed by a stride-1 3x3 convolution. Decoder: one stage
/// per encoder skip, each a 3x3 convolution, nearest 2x upsampling, a
/// residual add of the matching encoder feature map and a ReLU, optionally
/// followed by a refining 3x3 convolution. Head: 1x1 convolution to
/// `joints * shuffle^2` channels rearranged by pixel shuffle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// Raw image side length (square RGB input).
    pub image_size: usize,
    /// Box-filter factor applied before the first convolution.
    pub input_pool: usize,
    pub widths: Vec<usize>,
    /// `refine[i]` adds a 3x3 convolution after decoder stage `i` (0 = finest).
    pub refine: Vec<bool>,
    pub joints: usize,
    pub shuffle: usize,
}

impl ArchSpec {
    pub fn default_for(joints: usize) -> Self {
        ArchSpec {
            image_size: 256,
            input_pool: 4,
            widths: vec![32, 32, 48, 64, 64],
            refine: vec![true, true, false, false],
            joints,
            shuffle: 2,
        }
    }

    /// Side length of the prepared (pooled) input.
    pub fn input_side(&self) -> usize {
        self.image_size / self.input_pool
    }

    /// Side length of the output heatmap grid.
    pub fn heatmap_side(&self) -> usize {
        (self.input_side() >> 1) * self.shuffle
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.widths.len();
        if n < 2 || self.refine.len() != n - 1 {
            return Err(Error::config("architecture needs >= 2 stages and one refine flag per decoder stage"));
        }
        if self.joints == 0 || self.shuffle == 0 || self.input_pool == 0 {
            return Err(Error::config("joints, shuffle and input_pool must be positive"));
        }
        if self.image_size % self.input_pool != 0 || self.input_side() % (1 << n) != 0 {
            return Err(Error::config("input side must be divisible by 2^stages after pooling"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
enum Node {
    Input,
    Conv { src: usize, layer: usize },
    Up2 { src: usize },
    AddRelu { a: usize, b: usize },
    Shuffle { src: usize, factor: usize },
}

/// Convolutional encoder-decoder mapping an image tensor to `joints` heatmaps.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseNet<T> {
    pub arch: ArchSpec,
    layers: Vec<Conv2d>,
    nodes: Vec<Node>,
    pub params: Vec<T>,
}

/// Per-sample activation and gradient buffers, reused across calls.
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    acts: Vec<Tensor<T>>,
    cols: Vec<Vec<T>>,
    grads: Vec<Tensor<T>>,
    dcol: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn new() -> Self {
        Workspace { acts: vec![], cols: vec![], grads: vec![], dcol: vec![] }
    }

    /// Output of the last forward pass.
    pub fn output(&self) -> &Tensor<T> {
        self.acts.last().expect("forward has not run")
    }
}

impl<T: Real> PoseNet<T> {
    /// Builds the graph and draws He-initialized weights from `seed`.
    pub fn new(arch: ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        let mut nodes = vec![Node::Input];
        let mut offset = 0;
        let mut conv = |layers: &mut Vec<Conv2d>, nodes: &mut Vec<Node>, src, cin, cout, k, s, relu| {
            let c = Conv2d::new(cin, cout, k, s, relu, offset);
            offset += c.param_count();
            layers.push(c);
            nodes.push(Node::Conv { src, layer: layers.len() - 1 });
            nodes.len() - 1
        };
        let w = &arch.widths;
        let mut skips = Vec::with_capacity(w.len());
        let mut cur = 0;
        let mut cin = 3;
        for (i, &c) in w.iter().enumerate() {
            cur = conv(&mut layers, &mut nodes, cur, cin, c, 3, 2, true);
            if i > 0 {
                cur = conv(&mut layers, &mut nodes, cur, c, c, 3, 1, true);
            }
            skips.push(cur);
            cin = c;
        }
        for i in (0..w.len() - 1).rev() {
            let z = conv(&mut layers, &mut nodes, cur, w[i + 1], w[i], 3, 1, false);
            nodes.push(Node::Up2 { src: z });
            let up = nodes.len() - 1;
            nodes.push(Node::AddRelu { a: up, b: skips[i] });
            cur = nodes.len() - 1;
            if arch.refine[i] {
                cur = conv(&mut layers, &mut nodes, cur, w[i], w[i], 3, 1, true);
            }
        }
        let f = arch.shuffle;
        let head = conv(&mut layers, &mut nodes, cur, w[0], arch.joints * f * f, 1, 1, false);
        nodes.push(Node::Shuffle { src: head, factor: f });

        let total: usize = layers.iter().map(|l| l.param_count()).sum();
        let mut params = vec![T::zero(); total];
        let mut r = rng::seeded(seed);
        let last = layers.len() - 1;
        for (li, l) in layers.iter().enumerate() {
            let gain = if li == last { 0.1 } else { 1.0 };
            let std = gain * crate::math::sqrt(2.0 / l.fan_in() as f64);
            for p in &mut params[l.weight_offset..l.bias_offset] {
                *p = T::lit(std * rng::normal(&mut r));
            }
        }
        Ok(PoseNet { arch, layers, nodes, params })
    }

    /// Same architecture, parameters replaced (e.g. from a checkpoint).
    pub fn with_params(arch: ArchSpec, params: Vec<T>) -> Result<Self> {
        let mut net = Self::new(arch, 0)?;
        if params.len() != net.params.len() {
            return Err(Error::shape(alloc::format!(
                "parameter count {} does not match architecture ({})",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layers(&self) -> &[Conv2d] {
        &self.layers
    }

    /// Human-readable one-line-per-layer description.
    pub fn describe(&self) -> String {
        let mut s = String::new();
        for l in &self.layers {
            s.push_str(&alloc::format!(
                "conv{}x{} s{} {}->{}{}\n",
                l.ksize,
                l.ksize,
                l.stride,
                l.cin,
                l.cout,
                if l.relu { " relu" } else { "" }
            ));
        }
        s
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let side = self.arch.input_side();
        if x.c != 3 || x.h != side || x.w != side {
            return Err(Error::shape(alloc::format!(
                "input tensor {}x{}x{} but network expects 3x{side}x{side}",
                x.c,
                x.h,
                x.w
            )));
        }
        Ok(())
    }

    /// Runs the network on a prepared input; the output (raw heatmaps,
    /// `joints x side x side`) is available as `ws.output()`.
    pub fn forward(&self, x: &Tensor<T>, ws: &mut Workspace<T>) -> Result<()> {
        self.check_input(x)?;
        let n = self.nodes.len();
        if ws.acts.len() != n {
            ws.acts = vec![Tensor::zeros(0, 0, 0); n];
            ws.grads = vec![Tensor::zeros(0, 0, 0); n];
        }
        if ws.cols.len() != self.layers.len() {
            ws.cols = vec![Vec::new(); self.layers.len()];
        }
        for i in 0..n {
            let (done, rest) = ws.acts.split_at_mut(i);
            let out = &mut rest[0];
            match self.nodes[i] {
                Node::Input => {
                    out.reset(x.c, x.h, x.w);
                    out.data.copy_from_slice(&x.data);
                }
                Node::Conv { src, layer } => {
                    self.layers[layer].forward(&self.params, &done[src], &mut ws.cols[layer], out);
                }
                Node::Up2 { src } => up2(&done[src], out),
                Node::AddRelu { a, b } => {
                    let (ta, tb) = (&done[a], &done[b]);
                    out.reset(ta.c, ta.h, ta.w);
                    for ((o, &va), &vb) in out.data.iter_mut().zip(&ta.data).zip(&tb.data) {
                        let s = va + vb;
                        *o = if s > T::zero() { s } else { T::zero() };
                    }
                }
                Node::Shuffle { src, factor } => shuffle(&done[src], factor, out),
            }
        }
        Ok(())
    }

    /// Convenience forward returning an owned output.
    pub fn predict(&self, x: &Tensor<T>, ws: &mut Workspace<T>) -> Result<Tensor<T>> {
        self.forward(x, ws)?;
        Ok(ws.output().clone())
    }

    /// Back-propagates `gout` (gradient w.r.t. the last forward's output) and
    /// accumulates parameter gradients into `grads`.
    pub fn backward(&self, ws: &mut Workspace<T>, gout: &[T], grads: &mut [T]) {
        assert_eq!(grads.len(), self.params.len());
        let n = self.nodes.len();
        for (g, a) in ws.grads.iter_mut().zip(&ws.acts) {
            g.reset(a.c, a.h, a.w);
        }
        ws.grads[n - 1].data.copy_from_slice(gout);
        for i in (1..n).rev() {
            let (lower, upper) = ws.grads.split_at_mut(i);
            let g = &mut upper[0];
            match self.nodes[i] {
                Node::Input => {}
                Node::Conv { src, layer } => {
                    let gin = if src == 0 { None } else { Some(&mut lower[src]) };
                    self.layers[layer].backward(&self.params, &ws.cols[layer], &ws.acts[i], g, grads, gin, &mut ws.dcol);
                }
                Node::Up2 { src } => up2_backward(g, &mut lower[src]),
                Node::AddRelu { a, b } => {
                    let out = &ws.acts[i];
                    for ((gv, &o), k) in g.data.iter().zip(&out.data).zip(0..) {
                        if o > T::zero() {
                            lower[a].data[k] += *gv;
                            lower[b].data[k] += *gv;
                        }
                    }
                }
                Node::Shuffle { src, factor } => shuffle_backward(g, factor, &mut lower[src]),
            }
        }
    }
}

fn up2<T: Real>(x: &Tensor<T>, out: &mut Tensor<T>) {
    out.reset(x.c, x.h * 2, x.w * 2);
    let ow = x.w * 2;
    for c in 0..x.c {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..x.h * 2 {
            let srow = &src[(y / 2) * x.w..][..x.w];
            let drow = &mut dst[y * ow..][..ow];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
}

fn up2_backward<T: Real>(g: &Tensor<T>, gin: &mut Tensor<T>) {
    for c in 0..gin.c {
        let src = g.plane(c);
        let w = gin.w;
        let dst = gin.plane_mut(c);
        for y in 0..g.h {
            for x in 0..g.w {
                dst[(y / 2) * w + x / 2] += src[y * g.w + x];
            }
        }
    }
}

fn shuffle<T: Real>(x: &Tensor<T>, f: usize, out: &mut Tensor<T>) {
    let c = x.c / (f * f);
    out.reset(c, x.h * f, x.w * f);
    let ow = x.w * f;
    for k in 0..c {
        for dy in 0..f {
            for dx in 0..f {
                let src = x.plane(k * f * f + dy * f + dx);
                let dst = out.plane_mut(k);
                for y in 0..x.h {
                    for xx in 0..x.w {
                        dst[(y * f + dy) * ow + xx * f + dx] = src[y * x.w + xx];
                    }
                }
            }
        }
    }
}

fn shuffle_backward<T: Real>(g: &Tensor<T>, f: usize, gin: &mut Tensor<T>) {
    let (h, w) = (gin.h, gin.w);
    for k in 0..g.c {
        for dy in 0..f {
            for dx in 0..f {
                let src = g.plane(k);
                let dst = gin.plane_mut(k * f * f + dy * f + dx);
                for y in 0..h {
                    for x in 0..w {
                        dst[y * w + x] += src[(y * f + dy) * g.w + x * f + dx];
                    }
                }
            }
        }
    }
}

//! Deterministic stick-figure scenes.
//!
//! A labeled "source" style (flat light backgrounds, clean thick limbs) and
//! an unlabeled "target" style (dark textured backgrounds, clutter, thinner
//! limbs, stronger photometric jitter), each optionally covered by
//! rectangular occluders whose size grows linearly with severity.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::pose::Pose;
use crate::rng::{self, SeededRng};
use crate::skeleton::joint::*;

/// Image side the renderer is designed for; all pixel constants refer to it.
pub const IMAGE_SIZE: usize = 256;

/// Interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// `(x0, y0, x1, y1)` inclusive bounds of the set pixels.
    pub fn bbox(&self) -> Option<[usize; 4]> {
        let mut b: Option<[usize; 4]> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    b = Some(match b {
                        None => [x, y, x, y],
                        Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x), y1.max(y)],
                    });
                }
            }
        }
        b
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&self, factor: usize) -> Mask {
        let (w, h) = (self.width * factor, self.height * factor);
        let mut out = Mask::empty(w, h);
        for y in 0..h {
            for x in 0..w {
                out.data[y * w + x] = self.get(x / factor, y / factor);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Appearance distribution of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainStyle {
    pub name: Domain,
    /// Per-channel lower and upper bounds of the two background gradient colours.
    pub background_palette: [[u8; 3]; 2],
    /// Limb radius range in pixels.
    pub limb_thickness: [f64; 2],
    /// Standard deviation of per-pixel noise (0..255 scale).
    pub texture_noise: f64,
    /// Number of soft background blobs.
    pub blobs: usize,
    /// Number of distractor strokes.
    pub clutter: usize,
    /// Per-image multiplicative jitter of limb colours.
    pub limb_color_jitter: f64,
    pub brightness: [f64; 2],
    pub contrast: [f64; 2],
}

impl DomainStyle {
    pub fn source() -> Self {
        DomainStyle {
            name: Domain::Source,
            background_palette: [[170, 170, 160], [235, 235, 225]],
            limb_thickness: [5.0, 7.0],
            texture_noise: 4.0,
            blobs: 0,
            clutter: 0,
            limb_color_jitter: 0.05,
            brightness: [-8.0, 8.0],
            contrast: [0.95, 1.05],
        }
    }

    pub fn target() -> Self {
        DomainStyle {
            name: Domain::Target,
            background_palette: [[50, 60, 60], [160, 165, 175]],
            limb_thickness: [4.0, 6.5],
            texture_noise: 15.0,
            blobs: 6,
            clutter: 2,
            limb_color_jitter: 0.2,
            brightness: [-20.0, 20.0],
            contrast: [0.8, 1.15],
        }
    }

    pub fn for_domain(d: Domain) -> Self {
        match d {
            Domain::Source => Self::source(),
            Domain::Target => Self::target(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OccluderFill {
    Solid,
    Textured,
    /// Solid or textured, chosen per patch.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionSpec {
    /// 0 means no occluder; 1..=5 scale the patch side from 48 to 96 px.
    pub severity: u8,
    pub patch_count: usize,
    pub fill: OccluderFill,
}

impl OcclusionSpec {
    pub fn none() -> Self {
        OcclusionSpec { severity: 0, patch_count: 1, fill: OccluderFill::Mixed }
    }

    pub fn severity(severity: u8) -> Self {
        OcclusionSpec { severity, ..Self::none() }
    }

    /// Patch side in pixels (for 256 x 256 images).
    pub fn patch_size(&self) -> usize {
        if self.severity == 0 {
            0
        } else {
            48 + 12 * (self.severity as usize - 1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub image: Image,
    pub pose: Pose,
    /// Visible figure pixels after occlusion.
    pub silhouette: Mask,
    pub domain: Domain,
    pub severity: u8,
    pub seed: u64,
}

/// Source of per-sample visible-figure masks.
pub trait Segmenter {
    fn segment(&self, sample: &Sample) -> Mask;
}

/// Returns the renderer's exact silhouette.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleSegmenter;

impl Segmenter for OracleSegmenter {
    fn segment(&self, sample: &Sample) -> Mask {
        sample.silhouette.clone()
    }
}

const SALT_POSE: u64 = 0x5053;
const SALT_STYLE: u64 = 0x5354;
const SALT_OCCLUDE: u64 = 0x4f43;

// limb palette: left side warm, right side cool
const TORSO: [u8; 3] = [150, 60, 170];
const HEAD: [u8; 3] = [235, 190, 150];
const L_ARM: [[u8; 3]; 2] = [[230, 40, 30], [250, 150, 20]];
const R_ARM: [[u8; 3]; 2] = [[30, 70, 230], [20, 200, 230]];
const L_LEG: [[u8; 3]; 2] = [[200, 30, 100], [240, 220, 30]];
const R_LEG: [[u8; 3]; 2] = [[20, 140, 60], [60, 230, 140]];

fn deg(d: f64) -> f64 {
    d * core::f64::consts::PI / 180.0
}

fn rot([x, y]: [f64; 2], a: f64) -> [f64; 2] {
    let (s, c) = (math::sin(a), math::cos(a));
    [c * x - s * y, s * x + c * y]
}

fn add(a: [f64; 2], b: [f64; 2], s: f64) -> [f64; 2] {
    [a[0] + s * b[0], a[1] + s * b[1]]
}

/// Joint layout of one figure plus the head, which is drawn but not labeled.
#[derive(Debug, Clone)]
struct Figure {
    joints: Vec<[f64; 2]>,
    neck: [f64; 2],
    head: [f64; 2],
    head_radius: f64,
}

/// Draws a figure with joint angles in bounded ranges. Angles are measured
/// from the torso's downward axis, positive away from the body midline, and
/// elbows and knees bend only one way.
fn sample_figure(r: &mut SeededRng) -> Figure {
    let height = rng::uniform(r, 150.0, 200.0);
    let jit = |r: &mut SeededRng, v: f64| v * height * rng::uniform(r, 0.92, 1.08);
    let torso = jit(r, 0.30);
    let upper_arm = jit(r, 0.17);
    let forearm = jit(r, 0.15);
    let thigh = jit(r, 0.24);
    let shin = jit(r, 0.22);
    let shoulder_w = jit(r, 0.10) * rng::uniform(r, 0.6, 1.0);
    let hip_w = jit(r, 0.06) * rng::uniform(r, 0.6, 1.0);
    let head_radius = jit(r, 0.065);

    let tilt = deg(rng::uniform(r, -15.0, 15.0));
    let up = rot([0.0, -1.0], tilt);
    let down = [-up[0], -up[1]];
    // image-right when the figure faces the viewer
    let side = rot([1.0, 0.0], tilt);

    let mut j = vec![[0.0; 2]; 13];
    let pelvis = [0.0, 0.0];
    let neck = add(pelvis, up, torso);
    let head = add(neck, rot(up, deg(rng::uniform(r, -15.0, 15.0))), 0.08 * height + head_radius * 0.6);
    j[PELVIS] = pelvis;
    for (s, sh, el, wr, hi, kn, an) in [(1.0, L_SHOULDER, L_ELBOW, L_WRIST, L_HIP, L_KNEE, L_ANKLE), (-1.0, R_SHOULDER, R_ELBOW, R_WRIST, R_HIP, R_KNEE, R_ANKLE)] {
        // rotating `down` by +a turns it toward image-right in image coordinates
        let out = |a: f64| rot(down, -s * a);
        j[sh] = add(neck, side, s * shoulder_w);
        let arm = deg(rng::uniform(r, -20.0, 120.0));
        j[el] = add(j[sh], out(arm), upper_arm);
        let elbow = deg(rng::uniform(r, 0.0, 130.0));
        j[wr] = add(j[el], out(arm + elbow), forearm);
        j[hi] = add(pelvis, side, s * hip_w);
        let leg = deg(rng::uniform(r, -10.0, 40.0));
        j[kn] = add(j[hi], out(leg), thigh);
        let knee = deg(rng::uniform(r, 0.0, 90.0));
        j[an] = add(j[kn], out(leg - knee), shin);
    }
    Figure { joints: j, neck, head, head_radius }
}

fn place_figure(r: &mut SeededRng, mut f: Figure, size: f64, margin: f64) -> Figure {
    let pts: Vec<[f64; 2]> = f.joints.iter().copied().chain([add(f.head, [0.0, -1.0], f.head_radius)]).collect();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &pts {
        x0 = x0.min(p[0] - f.head_radius);
        x1 = x1.max(p[0] + f.head_radius);
        y0 = y0.min(p[1] - f.head_radius);
        y1 = y1.max(p[1] + f.head_radius);
    }
    // shrink when the figure cannot fit
    let avail = size - 2.0 * margin;
    let s = (avail / (x1 - x0)).min(avail / (y1 - y0)).min(1.0);
    let (w, h) = ((x1 - x0) * s, (y1 - y0) * s);
    let ox = margin + rng::uniform(r, 0.0, avail - w) - x0 * s;
    let oy = margin + rng::uniform(r, 0.0, avail - h) - y0 * s;
    let tf = |p: [f64; 2]| [p[0] * s + ox, p[1] * s + oy];
    f.joints = f.joints.iter().map(|&p| tf(p)).collect();
    f.neck = tf(f.neck);
    f.head = tf(f.head);
    f.head_radius *= s;
    f
}

struct Canvas {
    size: usize,
    rgb: Vec<f64>,
    mask: Vec<bool>,
}

impl Canvas {
    fn paint<F: FnMut(f64, f64) -> bool>(&mut self, bounds: [f64; 4], color: [f64; 3], figure: bool, mut inside: F) {
        let lim = |v: f64| (v.max(0.0) as usize).min(self.size);
        let (x0, y0) = (lim(math::floor(bounds[0])), lim(math::floor(bounds[1])));
        let (x1, y1) = (lim(math::ceil(bounds[2]) + 1.0), lim(math::ceil(bounds[3]) + 1.0));
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = y * self.size + x;
                    self.rgb[3 * i..3 * i + 3].copy_from_slice(&color);
                    self.mask[i] = figure;
                }
            }
        }
    }

    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], radius: f64, color: [f64; 3], figure: bool) {
        let bounds = [a[0].min(b[0]) - radius, a[1].min(b[1]) - radius, a[0].max(b[0]) + radius, a[1].max(b[1]) + radius];
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        self.paint(bounds, color, figure, |x, y| {
            let t = if len2 > 0.0 { (((x - a[0]) * d[0] + (y - a[1]) * d[1]) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (px, py) = (a[0] + t * d[0] - x, a[1] + t * d[1] - y);
            px * px + py * py <= radius * radius
        });
    }

    fn disc(&mut self, c: [f64; 2], radius: f64, color: [f64; 3], figure: bool) {
        self.capsule(c, c, radius, color, figure);
    }
}

fn random_color(r: &mut SeededRng, lo: [u8; 3], hi: [u8; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for k in 0..3 {
        c[k] = rng::uniform(r, lo[k] as f64, hi[k] as f64 + 1.0);
    }
    c
}

/// Renders the clean (unoccluded) image and the full figure mask.
fn render(seed: u64, style: &DomainStyle) -> (Image, Mask, Pose) {
    let size = IMAGE_SIZE;
    let mut pr = rng::derive(seed, SALT_POSE);
    let fig = sample_figure(&mut pr);
    let fig = place_figure(&mut pr, fig, size as f64, 10.0);

    let mut sr = rng::derive(seed, SALT_STYLE ^ style.name as u64);
    let [lo, hi] = style.background_palette;
    let top = random_color(&mut sr, lo, hi);
    let bottom = random_color(&mut sr, lo, hi);
    let mut rgb = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        let t = y as f64 / (size - 1) as f64;
        for _ in 0..size {
            for k in 0..3 {
                rgb.push(top[k] * (1.0 - t) + bottom[k] * t);
            }
        }
    }
    let mut canvas = Canvas { size, rgb, mask: vec![false; size * size] };
    for _ in 0..style.blobs {
        let c = [rng::uniform(&mut sr, 0.0, size as f64), rng::uniform(&mut sr, 0.0, size as f64)];
        let rad = rng::uniform(&mut sr, 10.0, 40.0);
        let col = random_color(&mut sr, lo, hi);
        canvas.disc(c, rad, col, false);
    }
    for _ in 0..style.clutter {
        let a = [rng::uniform(&mut sr, 0.0, size as f64), rng::uniform(&mut sr, 0.0, size as f64)];
        let ang = rng::uniform(&mut sr, 0.0, 2.0 * core::f64::consts::PI);
        let len = rng::uniform(&mut sr, 20.0, 60.0);
        let b = add(a, [math::cos(ang), math::sin(ang)], len);
        let col = random_color(&mut sr, [40, 40, 40], [220, 220, 220]);
        canvas.capsule(a, b, rng::uniform(&mut sr, 2.0, 5.0), col, false);
    }

    let jit = style.limb_color_jitter;
    let gain: [f64; 3] = core::array::from_fn(|_| rng::uniform(&mut sr, 1.0 - jit, 1.0 + jit));
    let shade = |c: [u8; 3]| -> [f64; 3] { core::array::from_fn(|k| (c[k] as f64 * gain[k]).min(255.0)) };
    let [tl, th] = style.limb_thickness;
    let mut radius = || rng::uniform(&mut sr, tl, th);
    let j = &fig.joints;
    let limb = |canvas: &mut Canvas, a: usize, b: usize, c: [u8; 3], rad: f64| canvas.capsule(j[a], j[b], rad, shade(c), true);
    let rt = radius() * 1.3;
    let (rl, rr, ra, rb) = (radius(), radius(), radius(), radius());
    // far side first
    limb(&mut canvas, R_HIP, R_KNEE, R_LEG[0], rr);
    limb(&mut canvas, R_KNEE, R_ANKLE, R_LEG[1], rr);
    limb(&mut canvas, L_HIP, L_KNEE, L_LEG[0], rl);
    limb(&mut canvas, L_KNEE, L_ANKLE, L_LEG[1], rl);
    canvas.capsule(j[PELVIS], fig.neck, rt, shade(TORSO), true);
    canvas.capsule(j[L_HIP], j[R_HIP], rt * 0.8, shade(TORSO), true);
    canvas.capsule(j[L_SHOULDER], j[R_SHOULDER], rt * 0.8, shade(TORSO), true);
    canvas.disc(fig.head, fig.head_radius, shade(HEAD), true);
    limb(&mut canvas, R_SHOULDER, R_ELBOW, R_ARM[0], rb);
    limb(&mut canvas, R_ELBOW, R_WRIST, R_ARM[1], rb);
    limb(&mut canvas, L_SHOULDER, L_ELBOW, L_ARM[0], ra);
    limb(&mut canvas, L_ELBOW, L_WRIST, L_ARM[1], ra);

    let brightness = rng::uniform(&mut sr, style.brightness[0], style.brightness[1]);
    let contrast = rng::uniform(&mut sr, style.contrast[0], style.contrast[1]);
    let mut data = Vec::with_capacity(canvas.rgb.len());
    for px in canvas.rgb.chunks(3) {
        let n = style.texture_noise * rng::normal(&mut sr);
        for &v in px {
            let v = (v + n - 128.0) * contrast + 128.0 + brightness;
            data.push(v.clamp(0.0, 255.0) as u8);
        }
    }
    let image = Image { width: size, height: size, data };
    let mask = Mask { width: size, height: size, data: canvas.mask };
    (image, mask, Pose::new(fig.joints))
}

/// Composites the severity's patches over regions centred inside the figure's
/// bounding box; returns the occluded image and the visible silhouette.
pub fn occlude(img: &Image, figure_mask: &Mask, occ: &OcclusionSpec, seed: u64) -> Result<(Image, Mask)> {
    if img.width != figure_mask.width || img.height != figure_mask.height {
        return Err(Error::shape("mask dimensions do not match the image"));
    }
    let mut out = img.clone();
    let mut visible = figure_mask.clone();
    if occ.severity == 0 {
        return Ok((out, visible));
    }
    if occ.severity > 5 {
        return Err(Error::config("occlusion severity must be in 0..=5"));
    }
    let side = occ.patch_size();
    if side > img.width || side > img.height {
        return Err(Error::config("occluder patch is larger than the image"));
    }
    let [bx0, by0, bx1, by1] = figure_mask.bbox().unwrap_or([img.width / 2, img.height / 2, img.width / 2, img.height / 2]);
    let mut r = rng::derive(seed, SALT_OCCLUDE);
    for _ in 0..occ.patch_count {
        // centre and fill are drawn before the size is applied, so at a fixed
        // seed a larger severity covers a superset of the smaller one
        let cx = rng::uniform(&mut r, bx0 as f64, bx1 as f64 + 1.0);
        let cy = rng::uniform(&mut r, by0 as f64, by1 as f64 + 1.0);
        let a = random_color(&mut r, [0, 0, 0], [255, 255, 255]);
        let b = random_color(&mut r, [0, 0, 0], [255, 255, 255]);
        let period = r.gen_range(4..12usize);
        let textured = match occ.fill {
            OccluderFill::Solid => false,
            OccluderFill::Textured => true,
            OccluderFill::Mixed => r.gen_bool(0.5),
        };
        let half = side as f64 / 2.0;
        let x0 = math::round(cx - half).clamp(0.0, (img.width - side) as f64) as usize;
        let y0 = math::round(cy - half).clamp(0.0, (img.height - side) as f64) as usize;
        for y in y0..y0 + side {
            for x in x0..x0 + side {
                let c = if textured && ((x / period) + (y / period)) % 2 == 1 { b } else { a };
                out.set(x, y, [c[0] as u8, c[1] as u8, c[2] as u8]);
                visible.data[y * img.width + x] = false;
            }
        }
    }
    Ok((out, visible))
}

/// Renders one scene; pure in `(seed, style, occ)`.
pub fn generate_sample(seed: u64, style: &DomainStyle, occ: &OcclusionSpec) -> Result<Sample> {
    let (clean, mask, pose) = render(seed, style);
    let (image, silhouette) = occlude(&clean, &mask, occ, seed)?;
    Ok(Sample { image, pose, silhouette, domain: style.name, severity: occ.severity, seed })
}

/// `v_i = count_i / max_j count_j`; all ones when every count is zero.
pub fn visibility_from_counts(counts: &[usize]) -> Vec<f64> {
    let max = counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return vec![1.0; counts.len()];
    }
    counts.iter().map(|&c| c as f64 / max as f64).collect()
}

pub fn visibility_scores(batch: &[&Mask]) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::input("visibility scores need a non-empty batch"));
    }
    Ok(visibility_from_counts(&batch.iter().map(|m| m.count()).collect::<Vec<_>>()))
}

/// How severities are assigned across a split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SeverityMix {
    Fixed { severity: u8 },
    Uniform { min: u8, max: u8 },
}

impl SeverityMix {
    /// Severity of sample `index`; depends only on `(seed, index)`.
    pub fn severity_for(&self, seed: u64, index: usize) -> u8 {
        match *self {
            SeverityMix::Fixed { severity } => severity,
            SeverityMix::Uniform { min, max } => rng::derive(seed, 0x5345_0000 ^ index as u64).gen_range(min..=max),
        }
    }
}

/// A reproducible list of samples from one style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub domain: Domain,
    pub count: usize,
    pub severity: SeverityMix,
    pub seed: u64,
}

impl SplitSpec {
    pub fn sample_seed(&self, index: usize) -> u64 {
        rng::mix(self.seed, index as u64)
    }

    pub fn generate_one(&self, style: &DomainStyle, index: usize) -> Result<Sample> {
        let occ = OcclusionSpec::severity(self.severity.severity_for(self.seed, index));
        generate_sample(self.sample_seed(index), style, &occ)
    }

    pub fn generate(&self, style: &DomainStyle) -> Result<Vec<Sample>> {
        (0..self.count).map(|i| self.generate_one(style, i)).collect()
    }
}

//! Analytic gradients against f64 central differences.

use orpose_core::bones::bone_vectors;
use orpose_core::heatmap::{render_heatmap, Grid};
use orpose_core::losses::{consistency_loss, heatmap_sq_error_grad, source_loss, ConsistencyMode};
use orpose_core::pose::Pose;
use orpose_core::prior::{anatomical_loss, prior_regression_grad, prior_regression_loss, perturb_bones, PriorArch, PriorModel, PriorSample};
use orpose_core::rng;
use orpose_core::skeleton::SkeletonSpec;
use rand::Rng;

const H: f64 = 1e-4;
const REL: f64 = 1e-3;

fn check(name: &str, analytic: f64, numeric: f64) {
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        (analytic - numeric).abs() <= REL * scale + 1e-9,
        "{name}: analytic {analytic:e} vs numeric {numeric:e}"
    );
}

/// Central difference of `f` at `x[i]`.
fn numeric(x: &mut [f64], i: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + H;
    let up = f(x);
    x[i] = orig - H;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * H)
}

fn pose13() -> Pose {
    Pose::new(vec![
        [128.0, 40.0],
        [148.0, 90.0],
        [108.0, 90.0],
        [160.0, 120.0],
        [96.0, 120.0],
        [165.0, 150.0],
        [90.0, 150.0],
        [140.0, 145.0],
        [116.0, 145.0],
        [142.0, 190.0],
        [114.0, 190.0],
        [143.0, 235.0],
        [113.0, 235.0],
    ])
}

fn noisy_maps(seed: u64, joints: usize, cells: usize) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    (0..joints * cells).map(|_| r.gen_range(0.0..1.0)).collect()
}

fn probe_indices(seed: u64, n: usize, count: usize) -> Vec<usize> {
    let mut r = rng::seeded(seed);
    (0..count).map(|_| r.gen_range(0..n)).collect()
}

#[test]
fn source_loss_gradient() {
    let (k, cells) = (3, 64);
    let mut pred = noisy_maps(1, k, cells);
    let target = noisy_maps(2, k, cells);
    let mask = vec![true, false, true];
    let mut g = vec![0.0; pred.len()];
    heatmap_sq_error_grad(&pred, &target, &mask, cells, 1.0, &mut g);
    let f = |p: &[f64]| source_loss(&[p], &[&target[..]], &[mask.clone()], cells);
    for i in 0..pred.len() {
        check(&format!("source[{i}]"), g[i], numeric(&mut pred, i, &f));
    }
}

fn consistency_gradient(mode: ConsistencyMode) {
    let (k, cells, b) = (2, 64, 3);
    let mut student: Vec<f64> = (0..b as u64).flat_map(|s| noisy_maps(10 + s, k, cells)).collect();
    let targets: Vec<Vec<f64>> = (0..b as u64).map(|s| noisy_maps(20 + s, k, cells)).collect();
    let masks = vec![vec![true, true], vec![false, true], vec![true, false]];
    let vis = [0.2, 1.0, 0.5];
    let n = k * cells;
    let f = |s: &[f64]| {
        let parts: Vec<&[f64]> = s.chunks(n).collect();
        let t: Vec<&[f64]> = targets.iter().map(|v| &v[..]).collect();
        consistency_loss(&parts, &t, &masks, Some(&vis), mode, cells).value
    };
    let parts: Vec<&[f64]> = student.chunks(n).collect();
    let t: Vec<&[f64]> = targets.iter().map(|v| &v[..]).collect();
    let loss = consistency_loss(&parts, &t, &masks, Some(&vis), mode, cells);
    let mut g = vec![0.0; student.len()];
    for i in 0..b {
        heatmap_sq_error_grad(&student[i * n..(i + 1) * n], &targets[i], &masks[i], cells, loss.coefficients[i], &mut g[i * n..(i + 1) * n]);
    }
    for i in 0..student.len() {
        check(&format!("{mode:?}[{i}]"), g[i], numeric(&mut student, i, &f));
    }
}

#[test]
fn plain_consistency_gradient() {
    consistency_gradient(ConsistencyMode::Plain);
}

#[test]
fn weighted_consistency_gradient() {
    consistency_gradient(ConsistencyMode::Weighted);
}

#[test]
fn anatomical_loss_gradient() {
    let skel = SkeletonSpec::default13();
    let grid = Grid::for_image(256, 32);
    let prior = PriorModel::new(&skel, PriorArch { feature_dim: 6, decoder_hidden: vec![16, 8] }, 4);
    let base = render_heatmap::<f64>(&pose13(), 2.0, grid).unwrap().values;
    let noise = noisy_maps(7, 13, grid.cells());
    let mut h: Vec<f64> = base.iter().zip(&noise).map(|(a, n)| a + 0.05 * n).collect();
    let f = |x: &[f64]| anatomical_loss(&prior, &[x], 13, &grid, &skel, 0.1).value;
    let out = anatomical_loss(&prior, &[&h[..]], 13, &grid, &skel, 0.1);
    assert_eq!(out.degenerate, 0);
    assert!(out.value > 0.0);
    // every cell near a joint peak plus a random sample of the rest
    let mut probes: Vec<usize> = (0..13).map(|k| k * grid.cells() + orpose_core::heatmap::argmax(&h[k * grid.cells()..(k + 1) * grid.cells()]).0 + 1).collect();
    probes.extend(probe_indices(8, h.len(), 200));
    for i in probes {
        check(&format!("anatomical[{i}]"), out.grads[0][i], numeric(&mut h, i, &f));
    }
}

#[test]
fn prior_regression_gradient() {
    let skel = SkeletonSpec::default13();
    let prior = PriorModel::new(&skel, PriorArch { feature_dim: 4, decoder_hidden: vec![8, 8] }, 2);
    let p = pose13();
    let samples: Vec<PriorSample> = vec![
        PriorSample::plausible(bone_vectors(&p, &skel).unwrap()),
        perturb_bones(&p, &skel, &[(3, 0.7)]).unwrap(),
        perturb_bones(&p, &skel, &[(1, -1.2), (8, 0.4)]).unwrap(),
    ];
    let (loss, g) = prior_regression_grad(&prior, &samples);
    assert!((loss - prior_regression_loss(&prior, &samples)).abs() < 1e-12);
    let f = |params: &[f64]| {
        let m = PriorModel::with_params(&skel, prior.arch.clone(), params.to_vec()).unwrap();
        prior_regression_loss(&m, &samples)
    };
    let mut params = prior.params.clone();
    for i in 0..params.len() {
        check(&format!("prior[{i}]"), g[i], numeric(&mut params, i, &f));
    }
}

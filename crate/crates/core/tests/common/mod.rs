//! Reference implementations shared by the integration and acceptance tests.
//! Everything here is written as directly as possible, without the tiling,
//! memoization or parallelism of the library code paths.
#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, UnitQuaternion, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splatstream::imaging::RgbImage;
use splatstream::metrics::{BCE_EPS, LossWeights};
use splatstream::raster::{project_gaussian, ALPHA_MIN, TRANSMITTANCE_MIN};
use splatstream::redundancy::OrientedBoundingBox;
use splatstream::synth::{SyntheticSceneSpec, Trajectory};
use splatstream::{CameraModel, Gaussian, GaussianParams, Intrinsics};

pub fn camera_looking_down_z(width: u32, height: u32, f: f64) -> CameraModel {
    let k = Intrinsics { fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0 };
    CameraModel::new(k, Isometry3::identity(), width, height, 0.01, 100.0).unwrap()
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(
        rng.gen_range(-PI..PI),
        rng.gen_range(-1.5..1.5),
        rng.gen_range(-PI..PI),
    )
}

pub fn random_gaussian(rng: &mut ChaCha8Rng, center: Vector3<f64>, spread: f64, scale: [f64; 2]) -> GaussianParams {
    GaussianParams {
        mu: center + Vector3::from_fn(|_, _| rng.gen_range(-spread..spread)),
        scale: Vector3::from_fn(|_, _| rng.gen_range(scale[0]..scale[1])),
        rotation: random_rotation(rng),
        color: Vector3::from_fn(|_, _| rng.gen_range(0.0..1.0)),
        alpha: rng.gen_range(0.05..1.0),
    }
}

pub fn as_store_entries(params: Vec<GaussianParams>) -> Vec<Gaussian> {
    params.into_iter().enumerate().map(|(i, params)| Gaussian { id: i as u64, birth_frame: 0, params }).collect()
}

/// Front-to-back compositing, one pixel at a time, over every projected splat.
pub fn naive_render(camera: &CameraModel, gaussians: &[Gaussian], background: [f32; 3]) -> RgbImage {
    let mut splats: Vec<_> = gaussians.iter().filter_map(|g| project_gaussian(camera, g, 1.0)).collect();
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.source_id.cmp(&b.source_id)));
    let mut out = RgbImage::new(camera.width, camera.height);
    for py in 0..camera.height {
        for px in 0..camera.width {
            let mut color = [0.0f64; 3];
            let mut t = 1.0f64;
            for s in &splats {
                let a = s.pixel_alpha(px, py);
                if a <= ALPHA_MIN {
                    continue;
                }
                for c in 0..3 {
                    color[c] += s.color[c] * a * t;
                }
                t *= 1.0 - a;
                if t < TRANSMITTANCE_MIN {
                    break;
                }
            }
            let rgb = [0, 1, 2].map(|c| (color[c] + background[c] as f64 * t) as f32);
            out.set_pixel(px, py, rgb);
        }
    }
    out
}

pub fn max_abs_diff(a: &RgbImage, b: &RgbImage) -> f64 {
    assert!(a.same_shape(b));
    a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).abs()).fold(0.0, f64::max)
}

/// First index whose alpha exceeds `tau`, by scanning.
pub fn brute_nearest(alphas: &[f64], tau: f64) -> Option<usize> {
    for (i, a) in alphas.iter().enumerate() {
        if *a > tau {
            return Some(i);
        }
    }
    None
}

/// Recomputes each contributor's weight from scratch and keeps the first maximum.
pub fn brute_most_contributive(alphas: &[f64]) -> Option<usize> {
    let weights: Vec<f64> = (0..alphas.len())
        .map(|i| {
            let mut t = 1.0;
            for a in &alphas[..i] {
                t *= 1.0 - a;
            }
            alphas[i] * t
        })
        .collect();
    let mut best = None;
    for i in 0..weights.len() {
        match best {
            None => best = Some(i),
            Some(b) if weights[i] > weights[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Estimates `|a ∩ b|` with `n^3` jittered stratified samples over `a`.
pub fn monte_carlo_intersection(a: &OrientedBoundingBox, b: &OrientedBoundingBox, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let jitter: Vec<[f64; 3]> = (0..n * n * n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
    let mut hits = 0usize;
    let mut idx = 0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let r = jitter[idx];
                idx += 1;
                let u = [(i as f64 + r[0]) / n as f64, (j as f64 + r[1]) / n as f64, (k as f64 + r[2]) / n as f64];
                let mut p = a.center;
                for axis in 0..3 {
                    p += a.axes.column(axis) * (a.half_extents[axis] * (2.0 * u[axis] - 1.0));
                }
                let q = b.axes.transpose() * (p - b.center);
                if (0..3).all(|axis| q[axis].abs() <= b.half_extents[axis]) {
                    hits += 1;
                }
            }
        }
    }
    a.volume() * hits as f64 / (n * n * n) as f64
}

pub fn naive_l_rgb(rendered: &[RgbImage], targets: &[RgbImage]) -> f64 {
    let mut total = 0.0;
    for (r, t) in rendered.iter().zip(targets) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for y in 0..r.height {
            for x in 0..r.width {
                let (a, b) = (r.pixel(x, y), t.pixel(x, y));
                for c in 0..3 {
                    sum += (a[c] as f64 - b[c] as f64).abs();
                    count += 1;
                }
            }
        }
        total += sum / count as f64;
    }
    total
}

pub fn naive_l_xyz(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        sum += (pred[i].x - gt[i].x).abs() + (pred[i].y - gt[i].y).abs() + (pred[i].z - gt[i].z).abs();
    }
    sum / pred.len() as f64
}

pub fn naive_l_sigma(pred: &[[f64; 6]], gt: &[[f64; 6]]) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        for k in 0..6 {
            sum += (pred[i][k] - gt[i][k]).abs() / 6.0;
        }
    }
    sum / pred.len() as f64
}

pub fn naive_l_mask(pred: &[f64], gt: &[u8], w: &LossWeights) -> f64 {
    let mut sum = 0.0;
    for i in 0..pred.len() {
        let p = pred[i].max(BCE_EPS).min(1.0 - BCE_EPS);
        if gt[i] == 1 {
            sum += w.lambda_pos * -p.ln();
        } else {
            sum += w.lambda_neg * -(1.0 - p).ln();
        }
    }
    sum / pred.len() as f64
}

/// The streaming fixture: 2,000 base Gaussians, half of them duplicated, and a
/// 30-frame orbit with 5 held-out views. Small splats keep occlusion low, since
/// a history copy hidden behind another store Gaussian never reaches the id map.
pub fn stream_fixture_spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec {
        seed,
        gaussian_count: 2000,
        duplicate_fraction: 0.5,
        trajectory: Trajectory::Orbit { radius: 3.5, height: 1.0, arc_degrees: 360.0, frames: 30 },
        eval_views: 5,
        scale_range: [0.01, 0.03],
        width: 128,
        height: 128,
        ..SyntheticSceneSpec::default()
    }
}

pub fn look_at(eye: [f64; 3], width: u32, height: u32) -> CameraModel {
    let k = CameraModel::intrinsics_from_fov(width, height, 50.0);
    CameraModel::look_at(Point3::from(eye), Point3::origin(), Vector3::y(), k, width, height, 0.05, 100.0).unwrap()
}

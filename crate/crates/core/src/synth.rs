//! Seeded synthetic scenes with injected near-duplicates, a camera trajectory,
//! per-frame candidates and held-out evaluation views.
//!
//! Per-frame candidates are taken from a most-contributive GIR of the ground
//! truth: each selected Gaussian is emitted once, at the selected pixel nearest
//! its projected center.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Point3, UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gir::{build_gir, SelectionStrategy};
use crate::io::{self, IoError};
use crate::pipeline::{EvalView, FrameInput};
use crate::raster::render_gaussians;
use crate::scene::{CameraModel, Gaussian, GaussianParams, PixelGaussianMap};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic scene spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Cameras on a horizontal circle around the origin, looking at it.
    Orbit { radius: f64, height: f64, arc_degrees: f64, frames: usize },
    /// Cameras on a segment, all looking at `target`.
    Linear { start: [f64; 3], end: [f64; 3], target: [f64; 3], frames: usize },
}

impl Trajectory {
    pub fn frames(&self) -> usize {
        match *self {
            Trajectory::Orbit { frames, .. } | Trajectory::Linear { frames, .. } => frames,
        }
    }

    /// Camera position and look-at target at normalized time `t` in `[0, 1)`.
    fn pose(&self, t: f64) -> (Point3<f64>, Point3<f64>) {
        match *self {
            Trajectory::Orbit { radius, height, arc_degrees, .. } => {
                let theta = (arc_degrees * t).to_radians();
                (Point3::new(radius * theta.cos(), height, radius * theta.sin()), Point3::origin())
            }
            Trajectory::Linear { start, end, target, .. } => {
                let (s, e) = (Vector3::from(start), Vector3::from(end));
                (Point3::from(s + (e - s) * t), Point3::from(target))
            }
        }
    }

    /// Normalized time of frame `i`. Full orbits stop one step short of closing
    /// the loop; linear paths include both ends.
    fn frame_time(&self, i: usize) -> f64 {
        let n = self.frames();
        match *self {
            Trajectory::Orbit { arc_degrees, .. } if arc_degrees.abs() >= 360.0 => i as f64 / n as f64,
            _ if n <= 1 => 0.0,
            _ => i as f64 / (n - 1) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub gaussian_count: usize,
    /// Base centers are uniform in `[-extent, extent]^3`.
    pub extent: f64,
    pub duplicate_fraction: f64,
    pub duplicate_jitter: f64,
    pub scale_range: [f64; 2],
    pub alpha_range: [f64; 2],
    pub width: u32,
    pub height: u32,
    pub fov_x_degrees: f64,
    pub near: f64,
    pub far: f64,
    pub trajectory: Trajectory,
    pub eval_views: usize,
    pub background: [f32; 3],
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            gaussian_count: 2000,
            extent: 1.0,
            duplicate_fraction: 0.5,
            duplicate_jitter: 0.005,
            scale_range: [0.01, 0.03],
            alpha_range: [0.3, 0.9],
            width: 128,
            height: 128,
            fov_x_degrees: 50.0,
            near: 0.05,
            far: 100.0,
            trajectory: Trajectory::Orbit { radius: 3.5, height: 1.0, arc_degrees: 360.0, frames: 30 },
            eval_views: 5,
            background: [0.0; 3],
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.trajectory.frames() == 0 {
            return bad("trajectory has zero frames".into());
        }
        if !(0.0..=1.0).contains(&self.duplicate_fraction) {
            return bad(format!("duplicate_fraction {} outside [0,1]", self.duplicate_fraction));
        }
        if !(self.duplicate_jitter.is_finite() && self.duplicate_jitter >= 0.0) {
            return bad(format!("duplicate_jitter {} must be >= 0", self.duplicate_jitter));
        }
        if !(self.extent.is_finite() && self.extent > 0.0) {
            return bad(format!("extent {} must be > 0", self.extent));
        }
        let [s0, s1] = self.scale_range;
        if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            return bad(format!("scale_range {:?} must satisfy 0 < lo <= hi", self.scale_range));
        }
        let [a0, a1] = self.alpha_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return bad(format!("alpha_range {:?} must satisfy 0 < lo <= hi <= 1", self.alpha_range));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size is empty".into());
        }
        if !(self.fov_x_degrees > 0.0 && self.fov_x_degrees < 180.0) {
            return bad(format!("fov_x_degrees {} outside (0, 180)", self.fov_x_degrees));
        }
        if self.background.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return bad("background outside [0,1]".into());
        }
        Ok(())
    }

    pub fn duplicate_count(&self) -> usize {
        (self.duplicate_fraction * self.gaussian_count as f64).ceil() as usize
    }

    /// Minimum distance between base centers.
    pub fn min_separation(&self) -> f64 {
        3.0 * self.duplicate_jitter
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SyntheticSceneSpec,
    /// Base Gaussians first, then the injected duplicates.
    pub gaussians: Vec<GaussianParams>,
    /// For every duplicate, the index of the base Gaussian it copies.
    pub duplicate_of: Vec<usize>,
    pub frames: Vec<FrameInput>,
    /// Per frame, the scene index of each candidate in row-major pixel order.
    pub provenance: Vec<Vec<usize>>,
    pub eval: Vec<EvalView>,
}

impl SyntheticScene {
    pub fn base_count(&self) -> usize {
        self.spec.gaussian_count
    }

    pub fn is_duplicate(&self, scene_index: usize) -> bool {
        scene_index >= self.spec.gaussian_count
    }

    /// The scene as store entries whose ids equal scene indices.
    pub fn ground_truth(&self) -> Vec<Gaussian> {
        self.gaussians
            .iter()
            .enumerate()
            .map(|(i, g)| Gaussian { id: i as u64, birth_frame: 0, params: g.clone() })
            .collect()
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> UnitQuaternion<f64> {
    // Normalized 4D Gaussian samples are uniform on the unit 3-sphere.
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]);
        if let Some(u) = UnitQuaternion::try_new(q, 1e-9) {
            return u;
        }
    }
}

fn random_range(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn sample_base(spec: &SyntheticSceneSpec, rng: &mut ChaCha8Rng) -> Result<Vec<GaussianParams>, SynthError> {
    let min_sep = spec.min_separation();
    let cell = min_sep.max(1e-9);
    let mut grid: BTreeMap<[i64; 3], Vec<Vector3<f64>>> = BTreeMap::new();
    let key = |p: &Vector3<f64>| [0, 1, 2].map(|i| (p[i] / cell).floor() as i64);
    let max_attempts = 1000 * spec.gaussian_count.max(1);
    let mut attempts = 0;
    let mut out = Vec::with_capacity(spec.gaussian_count);
    while out.len() < spec.gaussian_count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::Spec(format!(
                "could not place {} centers {} apart inside the extent",
                spec.gaussian_count, min_sep
            )));
        }
        let mu = Vector3::from_fn(|_, _| rng.gen_range(-spec.extent..=spec.extent));
        if min_sep > 0.0 {
            let k = key(&mu);
            let crowded = (-1..=1).any(|dx| {
                (-1..=1).any(|dy| {
                    (-1..=1).any(|dz| {
                        grid.get(&[k[0] + dx, k[1] + dy, k[2] + dz])
                            .is_some_and(|pts| pts.iter().any(|p| (p - mu).norm() < min_sep))
                    })
                })
            });
            if crowded {
                continue;
            }
            grid.entry(k).or_default().push(mu);
        }
        let scale = Vector3::from_fn(|_, _| random_range(rng, spec.scale_range));
        let rotation = random_rotation(rng);
        let color = Vector3::from_fn(|_, _| rng.gen_range(0.05..0.95));
        let alpha = random_range(rng, spec.alpha_range);
        out.push(GaussianParams { mu, scale, rotation, color, alpha });
    }
    Ok(out)
}

fn camera_at(spec: &SyntheticSceneSpec, t: f64) -> Result<CameraModel, SynthError> {
    let (eye, target) = spec.trajectory.pose(t);
    let k = CameraModel::intrinsics_from_fov(spec.width, spec.height, spec.fov_x_degrees);
    CameraModel::look_at(eye, target, Vector3::y(), k, spec.width, spec.height, spec.near, spec.far)
        .map_err(|e| SynthError::Spec(e.to_string()))
}

/// One candidate per selected Gaussian, at its selected pixel nearest the
/// projected center. Ties go to the earlier pixel in row-major order.
fn candidates(truth: &[Gaussian], camera: &CameraModel) -> (PixelGaussianMap, Vec<usize>) {
    let gir = build_gir(truth, camera, SelectionStrategy::MostContributive, 0.0);
    let mut best: BTreeMap<u64, ((u32, u32), f64)> = BTreeMap::new();
    for (x, y, id) in gir.occupied() {
        let m = gir.mean2d_at(x, y);
        let (dx, dy) = (x as f64 + 0.5 - m.x as f64, y as f64 + 0.5 - m.y as f64);
        let d = dx * dx + dy * dy;
        match best.get(&id) {
            Some((_, prev)) if *prev <= d => {}
            _ => {
                best.insert(id, ((x, y), d));
            }
        }
    }
    let mut map = PixelGaussianMap::new(camera.width, camera.height);
    for (id, ((x, y), _)) in &best {
        map.set(*x, *y, truth[*id as usize].params.clone());
    }
    let mut by_pixel: Vec<((u32, u32), usize)> = best.iter().map(|(id, (p, _))| ((p.1, p.0), *id as usize)).collect();
    by_pixel.sort();
    (map, by_pixel.into_iter().map(|(_, id)| id).collect())
}

/// Generates a scene, its frames and eval views from `spec`, deterministically.
pub fn generate_synthetic(spec: &SyntheticSceneSpec) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut gaussians = sample_base(spec, &mut rng)?;

    let n_dup = spec.duplicate_count();
    let jitter = Normal::new(0.0, spec.duplicate_jitter).map_err(|e| SynthError::Spec(e.to_string()))?;
    let duplicate_of: Vec<usize> =
        if n_dup == 0 { Vec::new() } else { sample(&mut rng, spec.gaussian_count, n_dup).into_vec() };
    for &b in &duplicate_of {
        let offset = Vector3::from_fn(|_, _| jitter.sample(&mut rng));
        let base = &gaussians[b];
        gaussians.push(GaussianParams { mu: base.mu + offset, ..base.clone() });
    }

    let mut scene = SyntheticScene {
        spec: *spec,
        gaussians,
        duplicate_of,
        frames: Vec::new(),
        provenance: Vec::new(),
        eval: Vec::new(),
    };
    let truth = scene.ground_truth();
    let n_frames = spec.trajectory.frames();
    for i in 0..n_frames {
        let camera = camera_at(spec, spec.trajectory.frame_time(i))?;
        let (current, prov) = candidates(&truth, &camera);
        let image = Some(render_gaussians(&camera, &truth, spec.background).rgb);
        scene.frames.push(FrameInput { camera, image, current });
        scene.provenance.push(prov);
    }
    for j in 0..spec.eval_views {
        // Halfway between consecutive frames, spread evenly along the path.
        let slot = ((j as f64 + 0.5) * n_frames as f64 / spec.eval_views as f64).floor();
        let t = match spec.trajectory {
            Trajectory::Orbit { arc_degrees, .. } if arc_degrees.abs() >= 360.0 => (slot + 0.5) / n_frames as f64,
            _ if n_frames <= 1 => 0.5,
            _ => ((slot + 0.5) / (n_frames - 1) as f64).min(1.0),
        };
        let camera = camera_at(spec, t)?;
        let image = render_gaussians(&camera, &truth, spec.background).rgb;
        scene.eval.push(EvalView { camera, image });
    }
    Ok(scene)
}

#[derive(Serialize)]
struct ProvenanceDoc<'a> {
    base_count: usize,
    duplicate_of: &'a [usize],
    frames: &'a [Vec<usize>],
}

/// Writes the scene as a sequence directory: manifest, frames, eval views,
/// the ground-truth `scene.ply`, the spec and the candidate provenance.
pub fn write_synthetic(dir: &Path, scene: &SyntheticScene) -> Result<(), SynthError> {
    let mut config = toml::Table::new();
    let bg = scene.spec.background.iter().map(|c| toml::Value::Float(*c as f64)).collect();
    config.insert("background".into(), toml::Value::Array(bg));
    io::write_sequence(dir, &scene.frames, &scene.eval, config)?;
    io::save_scene(&dir.join("scene.ply"), &scene.gaussians)?;
    let spec = toml::to_string(&scene.spec).expect("spec serializes");
    write(dir.join("spec.toml"), spec.as_bytes())?;
    let doc = ProvenanceDoc { base_count: scene.base_count(), duplicate_of: &scene.duplicate_of, frames: &scene.provenance };
    write(dir.join("provenance.json"), serde_json::to_string(&doc).expect("provenance serializes").as_bytes())?;
    Ok(())
}

fn write(path: std::path::PathBuf, bytes: &[u8]) -> Result<(), SynthError> {
    std::fs::write(&path, bytes).map_err(|source| SynthError::Io(IoError::Io { path, source }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, d: f64) -> SyntheticSceneSpec {
        SyntheticSceneSpec {
            seed,
            gaussian_count: 100,
            duplicate_fraction: d,
            width: 32,
            height: 32,
            trajectory: Trajectory::Orbit { radius: 3.5, height: 1.0, arc_degrees: 90.0, frames: 3 },
            eval_views: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_frames_is_an_error() {
        let mut s = small(1, 0.0);
        s.trajectory = Trajectory::Orbit { radius: 3.0, height: 0.0, arc_degrees: 360.0, frames: 0 };
        assert!(matches!(generate_synthetic(&s), Err(SynthError::Spec(_))));
    }

    #[test]
    fn duplicate_count_by_id_range() {
        let scene = generate_synthetic(&small(3, 0.5)).unwrap();
        assert_eq!(scene.gaussians.len(), 150);
        assert_eq!(scene.duplicate_of.len(), 50);
        assert_eq!((100..150).filter(|i| scene.is_duplicate(*i)).count(), 50);
        let distinct: std::collections::BTreeSet<_> = scene.duplicate_of.iter().collect();
        assert_eq!(distinct.len(), 50);
        for (k, b) in scene.duplicate_of.iter().enumerate() {
            let (d, g) = (&scene.gaussians[100 + k], &scene.gaussians[*b]);
            assert_eq!((d.color, d.scale, d.alpha), (g.color, g.scale, g.alpha));
        }
    }

    #[test]
    fn no_duplicates_means_separated_centers() {
        let s = small(4, 0.0);
        let scene = generate_synthetic(&s).unwrap();
        for (i, a) in scene.gaussians.iter().enumerate() {
            for b in &scene.gaussians[i + 1..] {
                assert!((a.mu - b.mu).norm() >= s.duplicate_jitter);
            }
        }
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_synthetic(&small(9, 0.5)).unwrap();
        let b = generate_synthetic(&small(9, 0.5)).unwrap();
        assert_eq!(a.gaussians, b.gaussians);
        assert_eq!(a.provenance, b.provenance);
        assert_eq!(a.eval[1].image, b.eval[1].image);
        let c = generate_synthetic(&small(10, 0.5)).unwrap();
        assert_ne!(a.gaussians, c.gaussians);
    }

    #[test]
    fn candidates_are_unique_and_match_provenance() {
        let scene = generate_synthetic(&small(5, 0.5)).unwrap();
        for (f, prov) in scene.frames.iter().zip(&scene.provenance) {
            assert_eq!(f.current.len(), prov.len());
            let distinct: std::collections::BTreeSet<_> = prov.iter().collect();
            assert_eq!(distinct.len(), prov.len());
            for ((_, _, g), src) in f.current.iter().zip(prov) {
                assert_eq!(g, &scene.gaussians[*src]);
            }
        }
    }

    #[test]
    fn spec_toml_round_trip() {
        let s = small(2, 0.25);
        let text = toml::to_string(&s).unwrap();
        assert_eq!(toml::from_str::<SyntheticSceneSpec>(&text).unwrap(), s);
    }
}

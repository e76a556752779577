//! Oriented bounding boxes of Gaussian ellipsoids, their exact intersection
//! volume, and the view-asymmetric overlap score evaluated over a fixed pixel
//! window of the history GIR.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Isometry3, Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gir::{read_header, write_header, GaussianImage, GirFormatError, HEADER_LEN};
use crate::scene::{GaussianId, GaussianParams, GlobalGaussianStore, PixelGaussianMap};

/// Container tag used when a [`RedundancyReport`] is written in the GIR framing.
pub const REPORT_TAG: u8 = 2;
pub const REPORT_CHANNELS: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RedundancyError {
    #[error("dimension mismatch: history GIR is {gir_w}x{gir_h}, current map is {cur_w}x{cur_h}")]
    DimensionMismatch { gir_w: u32, gir_h: u32, cur_w: u32, cur_h: u32 },
    #[error("invalid redundancy config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientedBoundingBox {
    pub center: Vector3<f64>,
    /// Columns are the box axes.
    pub axes: Matrix3<f64>,
    pub half_extents: Vector3<f64>,
}

struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

impl OrientedBoundingBox {
    pub fn axis_aligned(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self { center, axes: Matrix3::identity(), half_extents }
    }

    pub fn volume(&self) -> f64 {
        8.0 * self.half_extents.product()
    }

    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        std::array::from_fn(|i| {
            let sign = |bit: usize| if i & (1 << bit) == 0 { -1.0 } else { 1.0 };
            self.center
                + self.axes.column(0) * (sign(0) * self.half_extents.x)
                + self.axes.column(1) * (sign(1) * self.half_extents.y)
                + self.axes.column(2) * (sign(2) * self.half_extents.z)
        })
    }

    /// Local coordinates of a world point.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.axes.transpose() * (p - self.center)
    }

    pub fn contains(&self, p: &Vector3<f64>, tol: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|k| l[k].abs() <= self.half_extents[k] + tol)
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let r = iso.rotation.to_rotation_matrix().into_inner();
        Self {
            center: iso.transform_point(&self.center.into()).coords,
            axes: r * self.axes,
            half_extents: self.half_extents,
        }
    }

    fn circumradius(&self) -> f64 {
        self.half_extents.norm()
    }

    fn planes(&self) -> impl Iterator<Item = Plane> + '_ {
        (0..3).flat_map(move |k| {
            let n: Vector3<f64> = self.axes.column(k).into_owned();
            let c = n.dot(&self.center);
            let h = self.half_extents[k];
            [Plane { normal: n, offset: c + h }, Plane { normal: -n, offset: -c + h }]
        })
    }
}

/// Minimal box enclosing the `k_sigma` level set of the Gaussian.
pub fn obb_from_gaussian(g: &GaussianParams, k_sigma: f64) -> OrientedBoundingBox {
    OrientedBoundingBox {
        center: g.mu,
        axes: g.rotation.to_rotation_matrix().into_inner(),
        half_extents: g.scale * k_sigma,
    }
}

/// Exact volume of `a ∩ b`.
///
/// The intersection is the convex polytope bounded by the twelve face planes.
/// Its vertices are found as feasible triple-plane intersections, each face is
/// the vertex set lying on one supporting plane, and the volume follows from
/// summing face pyramids over an interior point.
pub fn obb_intersection_volume(a: &OrientedBoundingBox, b: &OrientedBoundingBox) -> f64 {
    if (a.center - b.center).norm() > a.circumradius() + b.circumradius() {
        return 0.0;
    }
    let scale = a.half_extents.max().max(b.half_extents.max());
    let tol = 1e-9 * scale;
    if a.vertices().iter().all(|v| b.contains(v, tol)) {
        return a.volume();
    }
    if b.vertices().iter().all(|v| a.contains(v, tol)) {
        return b.volume();
    }

    let mut planes: Vec<Plane> = Vec::with_capacity(12);
    for p in a.planes().chain(b.planes()) {
        let duplicate = planes.iter().any(|q| {
            (q.normal - p.normal).norm() < 1e-7 && (q.offset - p.offset).abs() < 1e-7 * scale
        });
        if !duplicate {
            planes.push(p);
        }
    }

    let mut verts: Vec<Vector3<f64>> = Vec::new();
    let n = planes.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let m = Matrix3::from_rows(&[
                    planes[i].normal.transpose(),
                    planes[j].normal.transpose(),
                    planes[k].normal.transpose(),
                ]);
                if m.determinant().abs() < 1e-9 {
                    continue;
                }
                let Some(inv) = m.try_inverse() else { continue };
                let x = inv * Vector3::new(planes[i].offset, planes[j].offset, planes[k].offset);
                if planes.iter().all(|p| p.signed_distance(&x) <= tol)
                    && !verts.iter().any(|v| (v - x).norm() <= 10.0 * tol)
                {
                    verts.push(x);
                }
            }
        }
    }
    if verts.len() < 4 {
        return 0.0;
    }

    let interior = verts.iter().sum::<Vector3<f64>>() / verts.len() as f64;
    let mut volume = 0.0;
    let mut face: Vec<Vector3<f64>> = Vec::new();
    for p in &planes {
        face.clear();
        face.extend(verts.iter().filter(|v| p.signed_distance(v).abs() <= 10.0 * tol));
        if face.len() < 3 {
            continue;
        }
        let height = p.offset - p.normal.dot(&interior);
        volume += polygon_area(&face, &p.normal) * height / 3.0;
    }
    volume.clamp(0.0, a.volume().min(b.volume()))
}

/// Area of a convex planar polygon given as an unordered vertex set.
fn polygon_area(points: &[Vector3<f64>], normal: &Vector3<f64>) -> f64 {
    let centroid = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let u = normal.cross(&helper).normalize();
    let v = normal.cross(&u);
    let mut planar: Vec<(f64, f64)> = points
        .iter()
        .map(|p| {
            let d = p - centroid;
            (d.dot(&u), d.dot(&v))
        })
        .collect();
    planar.sort_by(|a, b| a.1.atan2(a.0).total_cmp(&b.1.atan2(b.0)));
    let twice: f64 = (0..planar.len())
        .map(|i| {
            let (x0, y0) = planar[i];
            let (x1, y1) = planar[(i + 1) % planar.len()];
            x0 * y1 - x1 * y0
        })
        .sum();
    0.5 * twice.abs()
}

/// `max_q |p ∩ q| / |p|` over the neighbor set; 0 when it is empty.
pub fn asymmetric_iou<'a, I>(p: &OrientedBoundingBox, neighbors: I) -> f64
where
    I: IntoIterator<Item = &'a OrientedBoundingBox>,
{
    let vol = p.volume();
    let mut best = 0.0f64;
    for q in neighbors {
        best = best.max(obb_intersection_volume(p, q) / vol);
        if best >= 1.0 {
            break;
        }
    }
    best.clamp(0.0, 1.0)
}

/// Which Gaussians count as neighbors of a history pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborSet {
    /// Current-frame candidates only.
    #[default]
    CurrentFrame,
    /// Current-frame candidates plus other history Gaussians in the window.
    CurrentAndHistory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RedundancyConfig {
    pub k_sigma: f64,
    pub window_radius: u32,
    pub theta_red: f64,
    pub neighbors: NeighborSet,
}

impl Default for RedundancyConfig {
    fn default() -> Self {
        Self { k_sigma: 3.0, window_radius: 2, theta_red: 0.7, neighbors: NeighborSet::CurrentFrame }
    }
}

impl RedundancyConfig {
    pub fn validate(&self) -> Result<(), RedundancyError> {
        if !(self.k_sigma.is_finite() && self.k_sigma > 0.0) {
            return Err(RedundancyError::InvalidConfig(format!("k_sigma {} must be > 0", self.k_sigma)));
        }
        if !(0.0..=1.0).contains(&self.theta_red) {
            return Err(RedundancyError::InvalidConfig(format!("theta_red {} outside [0,1]", self.theta_red)));
        }
        Ok(())
    }
}

/// Per-pixel overlap scores and redundancy labels for a history GIR.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyReport {
    pub width: u32,
    pub height: u32,
    pub iou: Vec<f64>,
    /// 1 where the history Gaussian is redundant.
    pub gt_mask: Vec<u8>,
    pub window_radius: u32,
    pub k_sigma: f64,
    pub theta_red: f64,
}

impl RedundancyReport {
    pub fn empty(width: u32, height: u32, config: &RedundancyConfig) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            iou: vec![0.0; n],
            gt_mask: vec![0; n],
            window_radius: config.window_radius,
            k_sigma: config.k_sigma,
            theta_red: config.theta_red,
        }
    }
}

/// Scores every non-sentinel pixel of `history` against the Gaussians found
/// within `window_radius` pixels (Chebyshev distance).
pub fn compute_redundancy(
    history: &GaussianImage,
    current: &PixelGaussianMap,
    store: &GlobalGaussianStore,
    config: &RedundancyConfig,
) -> Result<RedundancyReport, RedundancyError> {
    config.validate()?;
    if history.width != current.width || history.height != current.height {
        return Err(RedundancyError::DimensionMismatch {
            gir_w: history.width,
            gir_h: history.height,
            cur_w: current.width,
            cur_h: current.height,
        });
    }
    let (w, h) = (history.width, history.height);
    let k = config.k_sigma;
    let current_boxes: Vec<Option<OrientedBoundingBox>> = current
        .cells()
        .iter()
        .map(|c| c.as_ref().map(|g| obb_from_gaussian(g, k)))
        .collect();
    let mut history_boxes: HashMap<GaussianId, OrientedBoundingBox> = HashMap::new();
    let mut pixels_by_id: BTreeMap<GaussianId, Vec<(u32, u32)>> = BTreeMap::new();
    for (x, y, id) in history.occupied() {
        let Some(g) = store.get(id) else { continue };
        history_boxes.entry(id).or_insert_with(|| obb_from_gaussian(&g.params, k));
        pixels_by_id.entry(id).or_default().push((x, y));
    }

    let r = config.window_radius as i64;
    let window = |x: u32, y: u32| {
        let (x, y) = (x as i64, y as i64);
        let xs = (x - r).max(0)..=(x + r).min(w as i64 - 1);
        let ys = (y - r).max(0)..=(y + r).min(h as i64 - 1);
        ys.flat_map(move |yy| xs.clone().map(move |xx| (xx as u32, yy as u32)))
    };

    // Each history Gaussian usually covers several pixels with overlapping
    // windows, so overlaps are memoized per (history id, neighbor cell).
    let scored: Vec<Vec<(usize, f64)>> = pixels_by_id
        .par_iter()
        .map(|(id, pixels)| {
            let p_box = &history_boxes[id];
            let p_vol = p_box.volume();
            let mut memo: HashMap<(bool, usize), f64> = HashMap::new();
            let mut score = |from_history: bool, cell: usize, q: &OrientedBoundingBox| {
                *memo
                    .entry((from_history, cell))
                    .or_insert_with(|| (obb_intersection_volume(p_box, q) / p_vol).clamp(0.0, 1.0))
            };
            pixels
                .iter()
                .map(|&(x, y)| {
                    let mut best = 0.0f64;
                    for (nx, ny) in window(x, y) {
                        let cell = ny as usize * w as usize + nx as usize;
                        if let Some(q) = &current_boxes[cell] {
                            best = best.max(score(false, cell, q));
                        }
                        if config.neighbors == NeighborSet::CurrentAndHistory {
                            let other = history.id_map[cell];
                            if other >= 0 && other as GaussianId != *id {
                                if let Some(q) = history_boxes.get(&(other as GaussianId)) {
                                    best = best.max(score(true, cell, q));
                                }
                            }
                        }
                    }
                    (y as usize * w as usize + x as usize, best)
                })
                .collect()
        })
        .collect();

    let mut report = RedundancyReport::empty(w, h, config);
    for (index, iou) in scored.into_iter().flatten() {
        report.iou[index] = iou;
        report.gt_mask[index] = u8::from(iou >= config.theta_red);
    }
    Ok(report)
}

/// Writes the report as a two-channel `(iou, gt_mask)` float image in the GIR
/// container framing, tagged [`REPORT_TAG`] with `theta_red` in the tau slot.
pub fn serialize_report(report: &RedundancyReport) -> Vec<u8> {
    let n = report.iou.len();
    let mut buf = Vec::with_capacity(HEADER_LEN + n * 8);
    write_header(&mut buf, report.width, report.height, REPORT_CHANNELS, REPORT_TAG, report.theta_red as f32);
    for (iou, m) in report.iou.iter().zip(&report.gt_mask) {
        buf.extend_from_slice(&(*iou as f32).to_le_bytes());
        buf.extend_from_slice(&(*m as f32).to_le_bytes());
    }
    buf
}

/// Reads back `(width, height, theta_red, iou, gt_mask)` from [`serialize_report`] output.
pub fn deserialize_report(bytes: &[u8]) -> Result<(u32, u32, f32, Vec<f32>, Vec<u8>), GirFormatError> {
    let h = read_header(bytes)?;
    if h.channels != REPORT_CHANNELS {
        return Err(GirFormatError { offset: 12, reason: format!("channel count {} (expected 2)", h.channels) });
    }
    if h.tag != REPORT_TAG {
        return Err(GirFormatError { offset: 16, reason: format!("tag {} is not a redundancy report", h.tag) });
    }
    let n = h.width as usize * h.height as usize;
    let end = HEADER_LEN + n * 8;
    if bytes.len() != end {
        return Err(GirFormatError { offset: bytes.len().min(end), reason: format!("expected {end} bytes") });
    }
    let mut iou = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for px in bytes[HEADER_LEN..].chunks_exact(8) {
        iou.push(f32::from_le_bytes(px[0..4].try_into().unwrap()));
        mask.push(f32::from_le_bytes(px[4..8].try_into().unwrap()) as u8);
    }
    Ok((h.width, h.height, h.tau, iou, mask))
}

//! Forward splatting: EWA projection of 3D Gaussians and tile-parallel
//! front-to-back alpha compositing.
//!
//! Per pixel, a splat contributes `alpha * exp(-0.5 d^T C^-1 d)` where `C` is its
//! screen covariance dilated by [`COV2D_DILATION`]. Contributions at or below
//! [`ALPHA_MIN`] are skipped, contributors are ordered by `(depth, source_id)`,
//! and a ray stops once its transmittance falls below [`TRANSMITTANCE_MIN`].

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};
use rayon::prelude::*;

use crate::imaging::RgbImage;
use crate::scene::{CameraModel, Gaussian, GaussianId};

pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Added to every screen covariance (pixels^2) before inversion.
pub const COV2D_DILATION: f64 = 0.3;
pub const TILE_SIZE: u32 = 16;

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub source_id: GaussianId,
    pub mean2d: Vector2<f64>,
    /// Projected covariance before dilation.
    pub cov2d: Matrix2<f64>,
    pub depth: f64,
    pub color: Vector3<f64>,
    pub alpha: f64,
    conic: [f64; 3],
}

impl Splat2D {
    pub fn new(
        source_id: GaussianId,
        mean2d: Vector2<f64>,
        cov2d: Matrix2<f64>,
        depth: f64,
        color: Vector3<f64>,
        alpha: f64,
    ) -> Self {
        let a = cov2d[(0, 0)] + COV2D_DILATION;
        let b = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
        let c = cov2d[(1, 1)] + COV2D_DILATION;
        let det = (a * c - b * b).max(f64::MIN_POSITIVE);
        Self {
            source_id,
            mean2d,
            cov2d,
            depth,
            color,
            alpha,
            conic: [c / det, -b / det, a / det],
        }
    }

    /// The dilated covariance actually used for evaluation.
    pub fn dilated_cov(&self) -> Matrix2<f64> {
        self.cov2d + Matrix2::identity() * COV2D_DILATION
    }

    /// Gaussian-weighted opacity at a continuous image position.
    pub fn alpha_at(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.mean2d.x;
        let dy = y - self.mean2d.y;
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        self.alpha * power.min(0.0).exp()
    }

    /// Gaussian-weighted opacity sampled at the center of pixel `(px, py)`.
    pub fn pixel_alpha(&self, px: u32, py: u32) -> f64 {
        self.alpha_at(px as f64 + 0.5, py as f64 + 0.5)
    }

    /// Half-widths of the axis-aligned box outside of which the weighted
    /// opacity is at most [`ALPHA_MIN`]. `None` if it never exceeds it.
    fn visibility_extent(&self) -> Option<(f64, f64)> {
        if self.alpha <= ALPHA_MIN {
            return None;
        }
        let k = 2.0 * (self.alpha / ALPHA_MIN).ln();
        let cov = self.dilated_cov();
        Some(((k * cov[(0, 0)]).sqrt(), (k * cov[(1, 1)]).sqrt()))
    }

    fn depth_order(&self, other: &Self) -> Ordering {
        self.depth
            .total_cmp(&other.depth)
            .then(self.source_id.cmp(&other.source_id))
    }
}

/// Projects a Gaussian with its opacity scaled by `opacity_scale`.
///
/// Returns `None` when the center is not strictly between the clip planes or
/// the 3-sigma footprint does not touch the image rectangle.
pub fn project_gaussian(camera: &CameraModel, g: &Gaussian, opacity_scale: f64) -> Option<Splat2D> {
    let q = camera.to_camera(&g.params.mu);
    if q.z <= camera.near || q.z > camera.far {
        return None;
    }
    let k = &camera.intrinsics;
    let (z, z2) = (q.z, q.z * q.z);
    let jac = Matrix2x3::new(
        k.fx / z, 0.0, -k.fx * q.x / z2,
        0.0, k.fy / z, -k.fy * q.y / z2,
    );
    let w = camera.rotation_matrix();
    let cov_cam = w * g.params.covariance() * w.transpose();
    let cov2d = jac * cov_cam * jac.transpose();
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let mean2d = Vector2::new(k.fx * q.x / z + k.cx, k.fy * q.y / z + k.cy);

    let rx = 3.0 * (cov2d[(0, 0)] + COV2D_DILATION).sqrt();
    let ry = 3.0 * (cov2d[(1, 1)] + COV2D_DILATION).sqrt();
    let (w_px, h_px) = (camera.width as f64, camera.height as f64);
    if mean2d.x + rx < 0.0 || mean2d.x - rx > w_px || mean2d.y + ry < 0.0 || mean2d.y - ry > h_px {
        return None;
    }
    Some(Splat2D::new(
        g.id,
        mean2d,
        cov2d,
        z,
        g.params.color,
        opacity_scale.clamp(0.0, 1.0) * g.params.alpha,
    ))
}

/// Projects every Gaussian, scaling opacity by `opacity_scale(g)`.
pub fn project_all<'a, I, F>(camera: &CameraModel, gaussians: I, opacity_scale: F) -> Vec<Splat2D>
where
    I: IntoIterator<Item = &'a Gaussian>,
    F: Fn(&Gaussian) -> f64 + Sync,
{
    let gaussians: Vec<&Gaussian> = gaussians.into_iter().collect();
    gaussians
        .par_iter()
        .filter_map(|g| project_gaussian(camera, g, opacity_scale(g)))
        .collect()
}

/// One term of the compositing sum at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor {
    pub source_id: GaussianId,
    /// Index into the splat slice the contributor came from.
    pub splat_index: usize,
    pub depth: f64,
    /// Gaussian-weighted opacity at the pixel.
    pub alpha: f64,
    /// `alpha * prod_{j<i} (1 - alpha_j)`.
    pub weight: f64,
}

/// Splats binned into 16x16 tiles, each tile list in depth order.
pub struct TiledSplats<'a> {
    splats: &'a [Splat2D],
    width: u32,
    height: u32,
    tiles_x: u32,
    bins: Vec<Vec<u32>>,
}

impl<'a> TiledSplats<'a> {
    pub fn new(splats: &'a [Splat2D], width: u32, height: u32) -> Self {
        let tiles_x = width.div_ceil(TILE_SIZE);
        let tiles_y = height.div_ceil(TILE_SIZE);
        let mut order: Vec<u32> = (0..splats.len() as u32).collect();
        order.sort_by(|&a, &b| splats[a as usize].depth_order(&splats[b as usize]));

        let mut bins = vec![Vec::new(); (tiles_x * tiles_y) as usize];
        let tile = TILE_SIZE as f64;
        for idx in order {
            let s = &splats[idx as usize];
            let Some((rx, ry)) = s.visibility_extent() else { continue };
            // One pixel of slack around the analytic bound.
            let x0 = ((s.mean2d.x - rx - 1.0) / tile).floor().max(0.0);
            let x1 = ((s.mean2d.x + rx + 1.0) / tile).floor().min(tiles_x as f64 - 1.0);
            let y0 = ((s.mean2d.y - ry - 1.0) / tile).floor().max(0.0);
            let y1 = ((s.mean2d.y + ry + 1.0) / tile).floor().min(tiles_y as f64 - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                continue;
            }
            for ty in y0 as u32..=y1 as u32 {
                for tx in x0 as u32..=x1 as u32 {
                    bins[(ty * tiles_x + tx) as usize].push(idx);
                }
            }
        }
        Self { splats, width, height, tiles_x, bins }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn splats(&self) -> &'a [Splat2D] {
        self.splats
    }

    fn tile_list(&self, px: u32, py: u32) -> &[u32] {
        &self.bins[((py / TILE_SIZE) * self.tiles_x + px / TILE_SIZE) as usize]
    }

    /// Depth-ordered contributors of pixel `(px, py)`, written into `out`.
    pub fn contributors_into(&self, px: u32, py: u32, out: &mut Vec<Contributor>) {
        out.clear();
        let mut transmittance = 1.0f64;
        for &idx in self.tile_list(px, py) {
            let s = &self.splats[idx as usize];
            let alpha = s.pixel_alpha(px, py);
            if alpha <= ALPHA_MIN {
                continue;
            }
            out.push(Contributor {
                source_id: s.source_id,
                splat_index: idx as usize,
                depth: s.depth,
                alpha,
                weight: alpha * transmittance,
            });
            transmittance *= 1.0 - alpha;
            if transmittance < TRANSMITTANCE_MIN {
                break;
            }
        }
    }

    /// Composites one pixel. Accumulation runs in `f64` so the cutoff and
    /// termination decisions match [`contributors_into`](Self::contributors_into).
    /// Returns the color and the final transmittance.
    fn shade(&self, px: u32, py: u32, background: [f32; 3]) -> ([f32; 3], f32) {
        let mut rgb = [0.0f64; 3];
        let mut transmittance = 1.0f64;
        for &idx in self.tile_list(px, py) {
            let s = &self.splats[idx as usize];
            let alpha = s.pixel_alpha(px, py);
            if alpha <= ALPHA_MIN {
                continue;
            }
            let w = alpha * transmittance;
            for c in 0..3 {
                rgb[c] += s.color[c] * w;
            }
            transmittance *= 1.0 - alpha;
            if transmittance < TRANSMITTANCE_MIN {
                break;
            }
        }
        let out = std::array::from_fn(|c| (rgb[c] + background[c] as f64 * transmittance) as f32);
        (out, transmittance as f32)
    }
}

/// Output of [`render`].
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub rgb: RgbImage,
    /// `1 - final transmittance` per pixel, row-major.
    pub accumulated_alpha: Vec<f32>,
}

impl RenderedImage {
    pub fn width(&self) -> u32 {
        self.rgb.width
    }

    pub fn height(&self) -> u32 {
        self.rgb.height
    }
}

/// Renders splats projected for `camera` over a solid background.
pub fn render(camera: &CameraModel, splats: &[Splat2D], background: [f32; 3]) -> RenderedImage {
    let (width, height) = (camera.width, camera.height);
    let tiled = TiledSplats::new(splats, width, height);
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);

    let blocks: Vec<(u32, u32, Vec<([f32; 3], f32)>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|t| {
            let (tx, ty) = (t % tiles_x, t / tiles_x);
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            let mut block = Vec::with_capacity((TILE_SIZE * TILE_SIZE) as usize);
            for py in y0..(y0 + TILE_SIZE).min(height) {
                for px in x0..(x0 + TILE_SIZE).min(width) {
                    block.push(tiled.shade(px, py, background));
                }
            }
            (x0, y0, block)
        })
        .collect();

    let mut rgb = RgbImage::new(width, height);
    let mut accumulated_alpha = vec![0.0f32; width as usize * height as usize];
    for (x0, y0, block) in blocks {
        let bw = (x0 + TILE_SIZE).min(width) - x0;
        for (i, (color, transmittance)) in block.into_iter().enumerate() {
            let px = x0 + i as u32 % bw;
            let py = y0 + i as u32 / bw;
            rgb.set_pixel(px, py, color);
            accumulated_alpha[py as usize * width as usize + px as usize] = 1.0 - transmittance;
        }
    }
    RenderedImage { rgb, accumulated_alpha }
}

/// Projects and renders a set of Gaussians at full opacity.
pub fn render_gaussians<'a, I>(camera: &CameraModel, gaussians: I, background: [f32; 3]) -> RenderedImage
where
    I: IntoIterator<Item = &'a Gaussian>,
{
    let splats = project_all(camera, gaussians, |_| 1.0);
    render(camera, &splats, background)
}

/// Depth-sorted contributors of a single pixel, found by scanning every splat.
pub fn per_pixel_contributors(
    camera: &CameraModel,
    splats: &[Splat2D],
    pixel: (u32, u32),
) -> Vec<Contributor> {
    let (px, py) = pixel;
    if px >= camera.width || py >= camera.height {
        return Vec::new();
    }
    let mut hits: Vec<(usize, f64)> = splats
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.pixel_alpha(px, py)))
        .filter(|(_, a)| *a > ALPHA_MIN)
        .collect();
    hits.sort_by(|a, b| splats[a.0].depth_order(&splats[b.0]));

    let mut out = Vec::with_capacity(hits.len());
    let mut transmittance = 1.0f64;
    for (i, alpha) in hits {
        out.push(Contributor {
            source_id: splats[i].source_id,
            splat_index: i,
            depth: splats[i].depth,
            alpha,
            weight: alpha * transmittance,
        });
        transmittance *= 1.0 - alpha;
        if transmittance < TRANSMITTANCE_MIN {
            break;
        }
    }
    out
}

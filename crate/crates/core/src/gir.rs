//! Gaussian-image representation: one dominant Gaussian per pixel, encoded as
//! ten channels `[u, v, vech(cov) x6, alpha, id]` plus an exact integer id map.
//!
//! Binary layout (little endian):
//!
//! | field    | type            |
//! |----------|-----------------|
//! | magic    | `b"GIR1"`       |
//! | width    | `u32`           |
//! | height   | `u32`           |
//! | channels | `u32` (= 10)    |
//! | strategy | `u8`            |
//! | tau      | `f32`           |
//! | channels | `H*W*10 x f32`  |
//! | id map   | `H*W x i64`     |

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{project_gaussian, Contributor, Splat2D, TiledSplats};
use crate::scene::{CameraModel, Gaussian, GaussianId, GlobalGaussianStore};

pub const GIR_MAGIC: &[u8; 4] = b"GIR1";
pub const GIR_CHANNELS: usize = 10;
pub const SENTINEL_ID: i64 = -1;
pub(crate) const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1 + 4;

pub const CH_U: usize = 0;
pub const CH_V: usize = 1;
pub const CH_VECH: usize = 2;
pub const CH_ALPHA: usize = 8;
pub const CH_ID: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("GIR format error at byte {offset}: {reason}")]
pub struct GirFormatError {
    pub offset: usize,
    pub reason: String,
}

/// Per-pixel selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// First depth-ordered contributor whose opacity exceeds `tau`.
    Nearest,
    /// Contributor with the largest transmittance-weighted opacity.
    MostContributive,
}

impl SelectionStrategy {
    pub fn tag(self) -> u8 {
        match self {
            SelectionStrategy::Nearest => 0,
            SelectionStrategy::MostContributive => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(SelectionStrategy::Nearest),
            1 => Some(SelectionStrategy::MostContributive),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Nearest => "nearest",
            SelectionStrategy::MostContributive => "most_contributive",
        }
    }
}

impl std::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nearest" => Ok(SelectionStrategy::Nearest),
            "most_contributive" | "most-contributive" => Ok(SelectionStrategy::MostContributive),
            other => Err(format!("unknown strategy {other:?} (expected nearest or most_contributive)")),
        }
    }
}

/// Index of the first alpha strictly above `tau`.
pub fn select_nearest(alphas: &[f64], tau: f64) -> Option<usize> {
    alphas.iter().position(|a| *a > tau)
}

/// Index maximizing `alpha_i * prod_{j<i} (1 - alpha_j)`; the earliest index wins ties.
pub fn select_most_contributive(alphas: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut transmittance = 1.0f64;
    for (i, a) in alphas.iter().enumerate() {
        let w = a * transmittance;
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((i, w));
        }
        transmittance *= 1.0 - a;
    }
    best.map(|(i, _)| i)
}

/// Upper triangle `(xx, xy, xz, yy, yz, zz)` of a symmetric 3x3 matrix.
pub fn vech(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

pub fn unvech(v: &[f64; 6]) -> Matrix3<f64> {
    Matrix3::new(v[0], v[1], v[2], v[1], v[3], v[4], v[2], v[4], v[5])
}

/// `H x W x 10` view-aligned encoding of one selected Gaussian per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianImage {
    pub width: u32,
    pub height: u32,
    pub channels: Vec<f32>,
    pub id_map: Vec<i64>,
    pub strategy: SelectionStrategy,
    pub tau: f32,
}

impl GaussianImage {
    /// All-background image.
    pub fn empty(width: u32, height: u32, strategy: SelectionStrategy, tau: f32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            channels: vec![0.0; n * GIR_CHANNELS],
            id_map: vec![SENTINEL_ID; n],
            strategy,
            tau,
        }
    }

    pub fn pixel_index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[f32] {
        let o = self.pixel_index(x, y) * GIR_CHANNELS;
        &self.channels[o..o + GIR_CHANNELS]
    }

    pub fn id_at(&self, x: u32, y: u32) -> Option<GaussianId> {
        let id = self.id_map[self.pixel_index(x, y)];
        (id >= 0).then_some(id as GaussianId)
    }

    pub fn alpha_at(&self, x: u32, y: u32) -> f32 {
        self.pixel(x, y)[CH_ALPHA]
    }

    pub fn mean2d_at(&self, x: u32, y: u32) -> Vector2<f32> {
        let p = self.pixel(x, y);
        Vector2::new(p[CH_U], p[CH_V])
    }

    pub fn vech_at(&self, x: u32, y: u32) -> [f64; 6] {
        let p = self.pixel(x, y);
        std::array::from_fn(|i| p[CH_VECH + i] as f64)
    }

    /// Non-sentinel pixels as `(x, y, id)` in row-major order.
    pub fn occupied(&self) -> impl Iterator<Item = (u32, u32, GaussianId)> + '_ {
        self.id_map.iter().enumerate().filter(|(_, id)| **id >= 0).map(|(i, id)| {
            ((i % self.width as usize) as u32, (i / self.width as usize) as u32, *id as GaussianId)
        })
    }

    /// Distinct ids referenced by the image.
    pub fn referenced_ids(&self) -> BTreeSet<GaussianId> {
        self.id_map.iter().filter(|id| **id >= 0).map(|id| *id as GaussianId).collect()
    }

    fn write_pixel(&mut self, index: usize, g: &Gaussian, splat: &Splat2D, alpha: f64, camera: &CameraModel) {
        let w = camera.rotation_matrix();
        let cov_cam = w * g.params.covariance() * w.transpose();
        let v = vech(&cov_cam);
        let px = &mut self.channels[index * GIR_CHANNELS..(index + 1) * GIR_CHANNELS];
        px[CH_U] = splat.mean2d.x as f32;
        px[CH_V] = splat.mean2d.y as f32;
        for (i, e) in v.iter().enumerate() {
            px[CH_VECH + i] = *e as f32;
        }
        px[CH_ALPHA] = alpha as f32;
        px[CH_ID] = g.id as f32;
        self.id_map[index] = g.id as i64;
    }
}

/// Builds a GIR of `gaussians` as seen from `camera`.
///
/// `tau` only affects [`SelectionStrategy::Nearest`]; it is recorded either way.
pub fn build_gir<'a, I>(gaussians: I, camera: &CameraModel, strategy: SelectionStrategy, tau: f64) -> GaussianImage
where
    I: IntoIterator<Item = &'a Gaussian>,
{
    let gaussians: Vec<&Gaussian> = gaussians.into_iter().collect();
    let (origin, splats): (Vec<usize>, Vec<Splat2D>) = gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| project_gaussian(camera, g, 1.0).map(|s| (i, s)))
        .unzip();
    let tiled = TiledSplats::new(&splats, camera.width, camera.height);

    let (width, height) = (camera.width, camera.height);
    let selections: Vec<Option<(usize, f64)>> = (0..height)
        .into_par_iter()
        .flat_map_iter(|py| {
            let mut buf: Vec<Contributor> = Vec::new();
            let mut alphas: Vec<f64> = Vec::new();
            let tiled = &tiled;
            (0..width)
                .map(move |px| {
                    tiled.contributors_into(px, py, &mut buf);
                    alphas.clear();
                    alphas.extend(buf.iter().map(|c| c.alpha));
                    let k = match strategy {
                        SelectionStrategy::Nearest => select_nearest(&alphas, tau),
                        SelectionStrategy::MostContributive => select_most_contributive(&alphas),
                    };
                    k.map(|k| (buf[k].splat_index, buf[k].alpha))
                })
                .collect::<Vec<_>>()
        })
        .collect();

    let mut gir = GaussianImage::empty(width, height, strategy, tau as f32);
    for (index, sel) in selections.into_iter().enumerate() {
        if let Some((splat_index, alpha)) = sel {
            let g = gaussians[origin[splat_index]];
            gir.write_pixel(index, g, &splats[splat_index], alpha, camera);
        }
    }
    gir
}

pub fn build_gir_nearest(store: &GlobalGaussianStore, camera: &CameraModel, tau: f64) -> GaussianImage {
    build_gir(store.iter(), camera, SelectionStrategy::Nearest, tau)
}

pub fn build_gir_most_contributive(store: &GlobalGaussianStore, camera: &CameraModel) -> GaussianImage {
    build_gir(store.iter(), camera, SelectionStrategy::MostContributive, 0.0)
}

/// Result of mapping GIR pixels back into a store.
#[derive(Debug, Clone, Default)]
pub struct IdResolution<'a> {
    pub resolved: BTreeMap<(u32, u32), &'a Gaussian>,
    pub stale_pixels: Vec<(u32, u32)>,
    pub stale_ids: BTreeSet<GaussianId>,
}

/// Resolves every non-sentinel pixel to a live Gaussian, collecting pixels whose
/// id no longer exists separately.
pub fn resolve_ids<'a>(gir: &GaussianImage, store: &'a GlobalGaussianStore) -> IdResolution<'a> {
    let mut out = IdResolution::default();
    for (x, y, id) in gir.occupied() {
        match store.get(id) {
            Some(g) => {
                out.resolved.insert((x, y), g);
            }
            None => {
                out.stale_pixels.push((x, y));
                out.stale_ids.insert(id);
            }
        }
    }
    out
}

pub(crate) fn write_header(buf: &mut Vec<u8>, width: u32, height: u32, channels: u32, tag: u8, tau: f32) {
    buf.extend_from_slice(GIR_MAGIC);
    buf.extend_from_slice(&width.to_le_bytes());
    buf.extend_from_slice(&height.to_le_bytes());
    buf.extend_from_slice(&channels.to_le_bytes());
    buf.push(tag);
    buf.extend_from_slice(&tau.to_le_bytes());
}

pub(crate) struct Header {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub tag: u8,
    pub tau: f32,
}

pub(crate) fn read_header(bytes: &[u8]) -> Result<Header, GirFormatError> {
    if bytes.len() < HEADER_LEN {
        return Err(GirFormatError { offset: bytes.len(), reason: "truncated header".into() });
    }
    if &bytes[0..4] != GIR_MAGIC {
        return Err(GirFormatError { offset: 0, reason: "bad magic, expected GIR1".into() });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    Ok(Header {
        width: u32_at(4),
        height: u32_at(8),
        channels: u32_at(12),
        tag: bytes[16],
        tau: f32::from_le_bytes(bytes[17..21].try_into().unwrap()),
    })
}

pub fn serialize_gir(gir: &GaussianImage) -> Vec<u8> {
    let n = gir.width as usize * gir.height as usize;
    let mut buf = Vec::with_capacity(HEADER_LEN + n * (GIR_CHANNELS * 4 + 8));
    write_header(&mut buf, gir.width, gir.height, GIR_CHANNELS as u32, gir.strategy.tag(), gir.tau);
    for v in &gir.channels {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for id in &gir.id_map {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    buf
}

pub fn deserialize_gir(bytes: &[u8]) -> Result<GaussianImage, GirFormatError> {
    let h = read_header(bytes)?;
    if h.channels as usize != GIR_CHANNELS {
        return Err(GirFormatError {
            offset: 12,
            reason: format!("channel count {} (expected {GIR_CHANNELS})", h.channels),
        });
    }
    let strategy = SelectionStrategy::from_tag(h.tag)
        .ok_or_else(|| GirFormatError { offset: 16, reason: format!("unknown strategy tag {}", h.tag) })?;
    let n = (h.width as usize)
        .checked_mul(h.height as usize)
        .ok_or_else(|| GirFormatError { offset: 4, reason: "image dimensions overflow".into() })?;
    let channel_end = HEADER_LEN + n * GIR_CHANNELS * 4;
    let end = channel_end + n * 8;
    if bytes.len() < end {
        return Err(GirFormatError {
            offset: bytes.len(),
            reason: format!("truncated stream, expected {end} bytes"),
        });
    }
    if bytes.len() > end {
        return Err(GirFormatError { offset: end, reason: "trailing bytes after id map".into() });
    }
    let channels = bytes[HEADER_LEN..channel_end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let id_map = bytes[channel_end..end]
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(GaussianImage { width: h.width, height: h.height, channels, id_map, strategy, tau: h.tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{GaussianParams, Intrinsics};
    use nalgebra::{Isometry3, Vector3};
    use proptest::prelude::*;

    fn camera() -> CameraModel {
        CameraModel::new(
            Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0 },
            Isometry3::identity(),
            32,
            32,
            0.01,
            100.0,
        )
        .unwrap()
    }

    fn big(mu: [f64; 3], alpha: f64) -> GaussianParams {
        GaussianParams::isotropic(Vector3::from(mu), 0.2, Vector3::new(0.3, 0.6, 0.9), alpha)
    }

    #[test]
    fn empty_store_is_all_sentinel() {
        let gir = build_gir_most_contributive(&GlobalGaussianStore::new(), &camera());
        assert!(gir.id_map.iter().all(|id| *id == SENTINEL_ID));
        assert!(gir.channels.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn opaque_gaussian_is_selected() {
        let mut store = GlobalGaussianStore::new();
        store.insert(vec![big([0.0, 0.0, 2.0], 1.0)], 0).unwrap();
        let gir = build_gir_nearest(&store, &camera(), 0.5);
        assert_eq!(gir.id_at(16, 16), Some(0));
        // Pixel center (15.5, 15.5) sits 0.5 px off the mean on both axes; the
        // dilated footprint variance is (40 * 0.2 / 2)^2 + 0.3.
        let expected = (-0.5 * 0.5 / 16.3f64).exp();
        assert!((gir.alpha_at(15, 15) as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn selection_rule_examples() {
        assert_eq!(select_nearest(&[0.4, 0.9], 0.5), Some(1));
        assert_eq!(select_nearest(&[0.4, 0.3], 0.5), None);
        assert_eq!(select_most_contributive(&[0.3, 0.9]), Some(1));
        assert_eq!(select_most_contributive(&[0.9, 0.9]), Some(0));
        assert_eq!(select_most_contributive(&[0.2]), Some(0));
        assert_eq!(select_most_contributive(&[]), None);
    }

    #[test]
    fn nearest_skips_faint_front_gaussian() {
        let mut store = GlobalGaussianStore::new();
        store.insert(vec![big([0.0, 0.0, 1.5], 0.4), big([0.0, 0.0, 3.0], 0.9)], 0).unwrap();
        let cam = camera();
        assert_eq!(build_gir_nearest(&store, &cam, 0.5).id_at(16, 16), Some(1));
        // Most contributive: 0.4 vs 0.9 * 0.6 = 0.54 at the center.
        assert_eq!(build_gir_most_contributive(&store, &cam).id_at(16, 16), Some(1));
    }

    #[test]
    fn stale_ids_after_removal() {
        let mut store = GlobalGaussianStore::new();
        store.insert(vec![big([-0.3, 0.0, 2.0], 0.9), big([0.3, 0.0, 2.0], 0.9)], 0).unwrap();
        let gir = build_gir_most_contributive(&store, &camera());
        assert!(resolve_ids(&gir, &store).stale_pixels.is_empty());
        let carrying = gir.id_map.iter().filter(|id| **id == 1).count();
        assert!(carrying > 0);
        store.remove([1]);
        let res = resolve_ids(&gir, &store);
        assert_eq!(res.stale_pixels.len(), carrying);
        assert_eq!(res.stale_ids.into_iter().collect::<Vec<_>>(), vec![1]);

        let empty = GaussianImage::empty(4, 4, SelectionStrategy::Nearest, 0.5);
        assert!(resolve_ids(&empty, &store).resolved.is_empty());
    }

    #[test]
    fn format_errors() {
        let gir = GaussianImage::empty(3, 2, SelectionStrategy::Nearest, 0.25);
        let bytes = serialize_gir(&gir);
        let err = deserialize_gir(&bytes[..bytes.len() - 5]).unwrap_err();
        assert_eq!(err.offset, bytes.len() - 5);
        assert!(deserialize_gir(&bytes[..10]).is_err());

        let mut nine = bytes.clone();
        nine[12..16].copy_from_slice(&9u32.to_le_bytes());
        let err = deserialize_gir(&nine).unwrap_err();
        assert!(err.to_string().contains("channel count"), "{err}");

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert_eq!(deserialize_gir(&magic).unwrap_err().offset, 0);
    }

    #[test]
    fn channels_reconstruct_camera_covariance() {
        let mut store = GlobalGaussianStore::new();
        let mut g = big([0.1, -0.1, 2.0], 0.8);
        g.scale = Vector3::new(0.3, 0.1, 0.05);
        g.rotation = nalgebra::UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1);
        store.insert(vec![g.clone()], 0).unwrap();
        let cam = CameraModel::look_at(
            nalgebra::Point3::new(0.5, 0.2, -1.0),
            nalgebra::Point3::new(0.1, -0.1, 2.0),
            -Vector3::y(),
            Intrinsics { fx: 40.0, fy: 40.0, cx: 16.0, cy: 16.0 },
            32,
            32,
            0.01,
            100.0,
        )
        .unwrap();
        let gir = build_gir_most_contributive(&store, &cam);
        let w = cam.rotation_matrix();
        let expected = w * g.covariance() * w.transpose();
        let (x, y, _) = gir.occupied().next().unwrap();
        let got = unvech(&gir.vech_at(x, y));
        assert!((got - expected).abs().max() < 1e-6);
    }

    proptest! {
        #[test]
        fn serialization_round_trip_is_bit_identical(
            w in 1u32..6, h in 1u32..6, seed in any::<u64>(), tau in 0.0f32..1.0, nearest in any::<bool>(),
        ) {
            let strategy = if nearest { SelectionStrategy::Nearest } else { SelectionStrategy::MostContributive };
            let mut gir = GaussianImage::empty(w, h, strategy, tau);
            let mut s = seed;
            for v in gir.channels.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = f32::from_bits((s >> 32) as u32);
            }
            for id in gir.id_map.iter_mut() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *id = (s as i64) >> 3;
            }
            let back = deserialize_gir(&serialize_gir(&gir)).unwrap();
            prop_assert_eq!(serialize_gir(&back), serialize_gir(&gir));
            prop_assert_eq!(back.id_map, gir.id_map);
        }
    }
}

//! On-disk formats: PLY point clouds, camera and manifest TOML documents, and
//! sequence directories.
//!
//! PLY files use the usual splatting attribute layout: `x y z`, `f_dc_0..2`
//! (degree-0 spherical harmonics), `opacity` as a logit, `scale_0..2` as
//! natural logs, and `rot_0..3` as an unnormalized `(w, x, y, z)` quaternion.
//! Per-frame candidate files may also carry integer `pixel_x` / `pixel_y`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::{read_float_image, write_float_image, ImageError, RgbImage};
use crate::pipeline::{EvalView, FrameInput, StreamConfig};
use crate::scene::{CameraModel, GaussianParams, Intrinsics, PixelGaussianMap, SceneError};

/// Degree-0 real spherical harmonic constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Opacities are clamped this far inside `(0, 1)` before taking the logit.
pub const LOGIT_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("{}: {source}", path.display())]
    Ply { path: PathBuf, source: PlyError },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("{}: {source}", path.display())]
    Image { path: PathBuf, source: ImageError },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    fn format(path: &Path, reason: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), reason: reason.into() }
    }

    /// Path of the offending file.
    pub fn path(&self) -> &Path {
        match self {
            IoError::Io { path, .. }
            | IoError::Ply { path, .. }
            | IoError::Format { path, .. }
            | IoError::Image { path, .. } => path,
            IoError::MissingFile(path) => path,
        }
    }
}

/// PLY parse failure, optionally tied to a 0-based vertex record.
#[derive(Debug, Clone, PartialEq, Error)]
pub struct PlyError {
    pub record: Option<usize>,
    pub reason: String,
}

impl fmt::Display for PlyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.record {
            Some(r) => write!(f, "record {r}: {}", self.reason),
            None => write!(f, "{}", self.reason),
        }
    }
}

impl PlyError {
    fn header(reason: impl Into<String>) -> Self {
        Self { record: None, reason: reason.into() }
    }

    fn at(record: usize, reason: impl Into<String>) -> Self {
        Self { record: Some(record), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(a) } else { <$t>::from_be_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

/// The vertex element of a PLY file, every value widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlyTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }
}

/// Parses a PLY document and returns its `vertex` element. Other elements are
/// skipped; list properties are rejected.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyTable, PlyError> {
    if bytes.is_empty() {
        return Err(PlyError::header("empty file"));
    }
    let mut pos = 0;
    let mut next_line = || -> Option<&[u8]> {
        if pos >= bytes.len() {
            return None;
        }
        let end = bytes[pos..].iter().position(|b| *b == b'\n').map_or(bytes.len(), |i| pos + i);
        let line = &bytes[pos..end];
        pos = (end + 1).min(bytes.len());
        Some(line.strip_suffix(b"\r").unwrap_or(line))
    };
    let mut header_line = || -> Result<String, PlyError> {
        let line = next_line().ok_or_else(|| PlyError::header("header is missing end_header"))?;
        std::str::from_utf8(line).map(str::to_string).map_err(|_| PlyError::header("header is not ASCII"))
    };
    if header_line()? != "ply" {
        return Err(PlyError::header("missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = header_line()?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    "binary_big_endian" => PlyEncoding::BinaryBigEndian,
                    other => return Err(PlyError::header(format!("unknown format `{other}`"))),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| PlyError::header(format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ..] => return Err(PlyError::header("list properties are not supported")),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| PlyError::header(format!("unknown property type `{ty}`")))?;
                let el = elements.last_mut().ok_or_else(|| PlyError::header("property before any element"))?;
                el.props.push((name.to_string(), ty));
            }
            _ => return Err(PlyError::header(format!("malformed header line `{line}`"))),
        }
    }
    let encoding = encoding.ok_or_else(|| PlyError::header("missing format line"))?;
    let vertex_index = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::header("no vertex element"))?;
    let body = &bytes[pos..];

    let mut table = PlyTable {
        properties: elements[vertex_index].props.iter().map(|(n, _)| n.clone()).collect(),
        rows: Vec::with_capacity(elements[vertex_index].count),
    };
    match encoding {
        PlyEncoding::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| PlyError::header("ASCII body is not UTF-8"))?;
            let mut tokens = text.split_ascii_whitespace();
            for (ei, el) in elements.iter().enumerate().take(vertex_index + 1) {
                for r in 0..el.count {
                    let mut row = Vec::with_capacity(el.props.len());
                    for (name, _) in &el.props {
                        let tok = tokens.next().ok_or_else(|| PlyError::at(r, "unexpected end of data"))?;
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| PlyError::at(r, format!("bad value `{tok}` for `{name}`")))?;
                        row.push(v);
                    }
                    if ei == vertex_index {
                        table.rows.push(row);
                    }
                }
            }
        }
        PlyEncoding::BinaryLittleEndian | PlyEncoding::BinaryBigEndian => {
            let little = encoding == PlyEncoding::BinaryLittleEndian;
            let mut offset = 0usize;
            for (ei, el) in elements.iter().enumerate().take(vertex_index + 1) {
                let stride: usize = el.props.iter().map(|(_, t)| t.size()).sum();
                for r in 0..el.count {
                    let rec = body
                        .get(offset..offset + stride)
                        .ok_or_else(|| PlyError::at(r, "truncated binary record"))?;
                    offset += stride;
                    if ei != vertex_index {
                        continue;
                    }
                    let mut at = 0;
                    let row = el
                        .props
                        .iter()
                        .map(|(_, t)| {
                            let v = t.decode(&rec[at..], little);
                            at += t.size();
                            v
                        })
                        .collect();
                    table.rows.push(row);
                }
            }
        }
    }
    Ok(table)
}

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "f_dc_0",
    "f_dc_1", "f_dc_2",
];

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
    (p / (1.0 - p)).ln()
}

/// A decoded PLY with optional pixel assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecords {
    pub gaussians: Vec<GaussianParams>,
    pub pixels: Option<Vec<(i64, i64)>>,
}

/// Converts vertex rows to activated Gaussian parameters.
pub fn decode_gaussians(table: &PlyTable) -> Result<SceneRecords, PlyError> {
    let mut cols = [0usize; 14];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = table.column(name).ok_or_else(|| PlyError::header(format!("missing property `{name}`")))?;
    }
    let pixel_cols = match (table.column("pixel_x"), table.column("pixel_y")) {
        (Some(x), Some(y)) => Some((x, y)),
        (None, None) => None,
        _ => return Err(PlyError::header("pixel_x and pixel_y must appear together")),
    };
    let mut gaussians = Vec::with_capacity(table.rows.len());
    let mut pixels = pixel_cols.map(|_| Vec::with_capacity(table.rows.len()));
    for (r, row) in table.rows.iter().enumerate() {
        let v: [f64; 14] = std::array::from_fn(|i| row[cols[i]]);
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(PlyError::at(r, format!("non-finite `{}`", REQUIRED[i])));
        }
        let q = Quaternion::new(v[6], v[7], v[8], v[9]);
        let rotation = UnitQuaternion::try_new(q, 1e-12).ok_or_else(|| PlyError::at(r, "zero rotation quaternion"))?;
        let color = Vector3::new(v[11], v[12], v[13]).map(|c| (0.5 + SH_C0 * c).clamp(0.0, 1.0));
        let g = GaussianParams {
            mu: Vector3::new(v[0], v[1], v[2]),
            scale: Vector3::new(v[3].exp(), v[4].exp(), v[5].exp()),
            rotation,
            color,
            alpha: sigmoid(v[10]),
        };
        g.validate().map_err(|reason| PlyError::at(r, reason))?;
        gaussians.push(g);
        if let (Some(px), Some((cx, cy))) = (pixels.as_mut(), pixel_cols) {
            px.push((row[cx] as i64, row[cy] as i64));
        }
    }
    Ok(SceneRecords { gaussians, pixels })
}

/// Encodes Gaussians as PLY. With `pixels`, adds `pixel_x` / `pixel_y`.
pub fn encode_ply(gaussians: &[GaussianParams], pixels: Option<&[(u32, u32)]>, encoding: PlyEncoding) -> Vec<u8> {
    assert!(pixels.is_none_or(|p| p.len() == gaussians.len()), "one pixel per Gaussian");
    let mut out = Vec::new();
    let fmt = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLittleEndian => "binary_little_endian",
        PlyEncoding::BinaryBigEndian => "binary_big_endian",
    };
    let mut header = format!("ply\nformat {fmt} 1.0\nelement vertex {}\n", gaussians.len());
    for name in [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
        "rot_2", "rot_3",
    ] {
        header.push_str(&format!("property float {name}\n"));
    }
    if pixels.is_some() {
        header.push_str("property int pixel_x\nproperty int pixel_y\n");
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());

    for (i, g) in gaussians.iter().enumerate() {
        let q = g.rotation.quaternion();
        let floats = [
            g.mu.x,
            g.mu.y,
            g.mu.z,
            (g.color.x - 0.5) / SH_C0,
            (g.color.y - 0.5) / SH_C0,
            (g.color.z - 0.5) / SH_C0,
            logit(g.alpha),
            g.scale.x.ln(),
            g.scale.y.ln(),
            g.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ]
        .map(|v| v as f32);
        let ints = pixels.map(|p| [p[i].0 as i32, p[i].1 as i32]);
        match encoding {
            PlyEncoding::Ascii => {
                let mut line: Vec<String> = floats.iter().map(f32::to_string).collect();
                if let Some(ints) = ints {
                    line.extend(ints.iter().map(i32::to_string));
                }
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
            PlyEncoding::BinaryLittleEndian => {
                floats.iter().for_each(|f| out.extend_from_slice(&f.to_le_bytes()));
                ints.iter().flatten().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
            }
            PlyEncoding::BinaryBigEndian => {
                floats.iter().for_each(|f| out.extend_from_slice(&f.to_be_bytes()));
                ints.iter().flatten().for_each(|v| out.extend_from_slice(&v.to_be_bytes()));
            }
        }
    }
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            IoError::MissingFile(path.to_path_buf())
        } else {
            IoError::io(path, e)
        }
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| IoError::io(path, e))
}

/// Reads a PLY scene.
pub fn load_scene(path: &Path) -> Result<Vec<GaussianParams>, IoError> {
    Ok(load_scene_records(path)?.gaussians)
}

pub fn load_scene_records(path: &Path) -> Result<SceneRecords, IoError> {
    let bytes = read_file(path)?;
    parse_ply(&bytes)
        .and_then(|t| decode_gaussians(&t))
        .map_err(|source| IoError::Ply { path: path.to_path_buf(), source })
}

/// Writes a binary little-endian PLY scene.
pub fn save_scene(path: &Path, gaussians: &[GaussianParams]) -> Result<(), IoError> {
    write_file(path, &encode_ply(gaussians, None, PlyEncoding::BinaryLittleEndian))
}

/// Reads a per-frame candidate file and places each Gaussian at its pixel.
/// Without `pixel_x` / `pixel_y`, the pixel containing the projected center is used.
pub fn load_candidates(path: &Path, camera: &CameraModel) -> Result<PixelGaussianMap, IoError> {
    let records = load_scene_records(path)?;
    let mut map = PixelGaussianMap::new(camera.width, camera.height);
    for (r, g) in records.gaussians.into_iter().enumerate() {
        let (px, py) = match &records.pixels {
            Some(p) => p[r],
            None => match camera.project_point(&g.mu) {
                Some(pp) => (pp.u.floor() as i64, pp.v.floor() as i64),
                None => return Err(IoError::format(path, format!("record {r}: candidate is behind the camera"))),
            },
        };
        if px < 0 || py < 0 || px >= camera.width as i64 || py >= camera.height as i64 {
            return Err(IoError::format(path, format!("record {r}: pixel ({px}, {py}) outside the image")));
        }
        if map.set(px as u32, py as u32, g).is_some() {
            return Err(IoError::format(path, format!("record {r}: pixel ({px}, {py}) already has a candidate")));
        }
    }
    Ok(map)
}

pub fn save_candidates(path: &Path, map: &PixelGaussianMap) -> Result<(), IoError> {
    let (pixels, gaussians): (Vec<(u32, u32)>, Vec<GaussianParams>) =
        map.iter().map(|(x, y, g)| ((x, y), g.clone())).unzip();
    write_file(path, &encode_ply(&gaussians, Some(&pixels), PlyEncoding::BinaryLittleEndian))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Extrinsics {
    /// World-to-camera rotation as `(w, x, y, z)`.
    rotation: [f64; 4],
    translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraDoc {
    width: u32,
    height: u32,
    near: f64,
    far: f64,
    intrinsics: Intrinsics,
    extrinsics: Extrinsics,
}

pub fn camera_to_toml(camera: &CameraModel) -> String {
    let iso = camera.world_to_camera();
    let q = iso.rotation.quaternion();
    let t = iso.translation.vector;
    let doc = CameraDoc {
        width: camera.width,
        height: camera.height,
        near: camera.near,
        far: camera.far,
        intrinsics: camera.intrinsics,
        extrinsics: Extrinsics { rotation: [q.w, q.i, q.j, q.k], translation: [t.x, t.y, t.z] },
    };
    toml::to_string(&doc).expect("camera serializes")
}

pub fn camera_from_toml(text: &str) -> Result<CameraModel, String> {
    let doc: CameraDoc = toml::from_str(text).map_err(|e| e.to_string())?;
    let [w, x, y, z] = doc.extrinsics.rotation;
    let q = Quaternion::new(w, x, y, z);
    let norm = q.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
        return Err(format!("rotation quaternion norm {norm} is not 1"));
    }
    let [tx, ty, tz] = doc.extrinsics.translation;
    let iso = Isometry3::from_parts(Translation3::new(tx, ty, tz), UnitQuaternion::from_quaternion(q));
    CameraModel::new(doc.intrinsics, iso, doc.width, doc.height, doc.near, doc.far).map_err(|e: SceneError| e.to_string())
}

pub fn load_camera(path: &Path) -> Result<CameraModel, IoError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| IoError::format(path, "camera file is not UTF-8"))?;
    camera_from_toml(&text).map_err(|e| IoError::format(path, e))
}

pub fn save_camera(path: &Path, camera: &CameraModel) -> Result<(), IoError> {
    write_file(path, camera_to_toml(camera).as_bytes())
}

/// Loads `.png` (8-bit) or `.fim` (lossless float) images.
pub fn load_image(path: &Path) -> Result<RgbImage, IoError> {
    let wrap = |source| IoError::Image { path: path.to_path_buf(), source };
    if is_fim(path) {
        let bytes = read_file(path)?;
        let (w, h, c, data) = read_float_image(&bytes[..]).map_err(wrap)?;
        if c != 3 {
            return Err(IoError::format(path, format!("expected 3 channels, found {c}")));
        }
        RgbImage::from_data(w, h, data).map_err(wrap)
    } else {
        if !path.exists() {
            return Err(IoError::MissingFile(path.to_path_buf()));
        }
        RgbImage::load_png(path).map_err(wrap)
    }
}

pub fn save_image(path: &Path, image: &RgbImage) -> Result<(), IoError> {
    let wrap = |source| IoError::Image { path: path.to_path_buf(), source };
    let bytes = if is_fim(path) {
        let mut buf = Vec::new();
        write_float_image(&mut buf, image.width, image.height, 3, &image.data).map_err(wrap)?;
        buf
    } else {
        image.png_bytes().map_err(wrap)?
    };
    write_file(path, &bytes)
}

fn is_fim(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "fim")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub camera: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussians: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalEntry {
    pub camera: PathBuf,
    pub image: PathBuf,
}

/// Sequence description. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceManifest {
    /// Stream configuration overrides.
    #[serde(default, skip_serializing_if = "toml::Table::is_empty")]
    pub config: toml::Table,
    pub frames: Vec<FrameEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval: Vec<EvalEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

impl SequenceManifest {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| IoError::format(path, "manifest is not UTF-8"))?;
        let m: SequenceManifest = toml::from_str(&text).map_err(|e| IoError::format(path, e.to_string()))?;
        if m.frames.is_empty() {
            return Err(IoError::format(path, "manifest lists no frames"));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        write_file(path, toml::to_string(self).expect("manifest serializes").as_bytes())
    }

    /// Every referenced path, resolved against `base`, in manifest order.
    pub fn referenced_files(&self, base: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for f in &self.frames {
            out.push(base.join(&f.camera));
            out.extend(f.image.iter().map(|p| base.join(p)));
            out.extend(f.gaussians.iter().map(|p| base.join(p)));
        }
        for e in &self.eval {
            out.push(base.join(&e.camera));
            out.push(base.join(&e.image));
        }
        out
    }
}

/// Deserializes a stream configuration from layered tables; later layers win.
pub fn merge_config(layers: &[&toml::Table]) -> Result<StreamConfig, String> {
    let mut merged = toml::Table::new();
    for layer in layers {
        for (k, v) in layer.iter() {
            merged.insert(k.clone(), v.clone());
        }
    }
    toml::Value::Table(merged).try_into().map_err(|e: toml::de::Error| e.to_string())
}

pub fn load_config_table(path: &Path) -> Result<toml::Table, IoError> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| IoError::format(path, "config is not UTF-8"))?;
    text.parse::<toml::Table>().map_err(|e| IoError::format(path, e.to_string()))
}

/// A fully loaded sequence.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub manifest: SequenceManifest,
    pub frames: Vec<FrameInput>,
    pub eval: Vec<EvalView>,
}

/// Resolves the manifest path: either the file itself or a directory holding `manifest.toml`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

/// Loads a manifest and every file it references. Missing files are reported
/// before anything is parsed.
pub fn load_sequence(path: &Path) -> Result<LoadedSequence, IoError> {
    let mpath = manifest_path(path);
    let manifest = SequenceManifest::load(&mpath)?;
    let base = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
    if let Some(missing) = manifest.referenced_files(&base).into_iter().find(|p| !p.is_file()) {
        return Err(IoError::MissingFile(missing));
    }

    let frames: Vec<FrameInput> = manifest
        .frames
        .par_iter()
        .map(|entry| -> Result<FrameInput, IoError> {
            let camera = load_camera(&base.join(&entry.camera))?;
            let image = entry.image.as_ref().map(|p| load_image(&base.join(p))).transpose()?;
            if let (Some(img), Some(p)) = (&image, &entry.image) {
                if (img.width, img.height) != (camera.width, camera.height) {
                    return Err(IoError::format(
                        &base.join(p),
                        format!("image is {}x{} but its camera is {}x{}", img.width, img.height, camera.width, camera.height),
                    ));
                }
            }
            let current = match &entry.gaussians {
                Some(p) => load_candidates(&base.join(p), &camera)?,
                None => PixelGaussianMap::new(camera.width, camera.height),
            };
            Ok(FrameInput { camera, image, current })
        })
        .collect::<Result<_, _>>()?;
    let first = (frames[0].camera.width, frames[0].camera.height);
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| (f.camera.width, f.camera.height) != first) {
        return Err(IoError::format(
            &base.join(&manifest.frames[i].camera),
            format!("frame {i} is {}x{} but frame 0 is {}x{}", f.camera.width, f.camera.height, first.0, first.1),
        ));
    }

    let eval = manifest
        .eval
        .par_iter()
        .map(|entry| -> Result<EvalView, IoError> {
            let camera = load_camera(&base.join(&entry.camera))?;
            let image = load_image(&base.join(&entry.image))?;
            if (image.width, image.height) != (camera.width, camera.height) {
                return Err(IoError::format(&base.join(&entry.image), "image and camera sizes differ"));
            }
            Ok(EvalView { camera, image })
        })
        .collect::<Result<_, _>>()?;
    Ok(LoadedSequence { manifest, frames, eval })
}

/// Writes frames and eval views under `dir` along with a manifest.
/// Reference images are stored losslessly as `.fim` with a `.png` preview.
pub fn write_sequence(
    dir: &Path,
    frames: &[FrameInput],
    eval: &[EvalView],
    config: toml::Table,
) -> Result<SequenceManifest, IoError> {
    let mut manifest = SequenceManifest { config, frames: Vec::new(), eval: Vec::new() };
    for (i, f) in frames.iter().enumerate() {
        let stem = PathBuf::from("frames").join(format!("{i:04}"));
        let camera = stem.join("camera.toml");
        save_camera(&dir.join(&camera), &f.camera)?;
        let image = match &f.image {
            Some(img) => {
                let p = stem.join("image.fim");
                save_image(&dir.join(&p), img)?;
                save_image(&dir.join(stem.join("image.png")), img)?;
                Some(p)
            }
            None => None,
        };
        let gaussians = stem.join("gaussians.ply");
        save_candidates(&dir.join(&gaussians), &f.current)?;
        manifest.frames.push(FrameEntry { camera, image, gaussians: Some(gaussians) });
    }
    for (i, e) in eval.iter().enumerate() {
        let stem = PathBuf::from("eval").join(format!("{i:02}"));
        let camera = stem.join("camera.toml");
        let image = stem.join("image.fim");
        save_camera(&dir.join(&camera), &e.camera)?;
        save_image(&dir.join(&image), &e.image)?;
        save_image(&dir.join(stem.join("image.png")), &e.image)?;
        manifest.eval.push(EvalEntry { camera, image });
    }
    manifest.save(&dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn sample() -> Vec<GaussianParams> {
        (0..5)
            .map(|i| {
                let f = i as f64;
                GaussianParams {
                    mu: Vector3::new(f * 0.3 - 1.0, 0.2 * f, 1.5 - f),
                    scale: Vector3::new(0.01 + 0.01 * f, 0.05, 0.2),
                    rotation: UnitQuaternion::from_euler_angles(0.1 * f, -0.4, 0.7 * f),
                    color: Vector3::new(0.1 * f, 0.5, 1.0 - 0.2 * f),
                    alpha: 0.1 + 0.2 * f,
                }
            })
            .collect()
    }

    fn close(a: &GaussianParams, b: &GaussianParams) -> bool {
        let tol = |x: f64, y: f64| (x - y).abs() <= 1e-6 * x.abs().max(1.0);
        a.mu.iter().zip(b.mu.iter()).all(|(x, y)| tol(*x, *y))
            && a.scale.iter().zip(b.scale.iter()).all(|(x, y)| tol(*x, *y))
            && a.color.iter().zip(b.color.iter()).all(|(x, y)| tol(*x, *y))
            && tol(a.alpha, b.alpha)
            && a.rotation.angle_to(&b.rotation) < 1e-6
    }

    #[test]
    fn round_trip_all_encodings() {
        let g = sample();
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian, PlyEncoding::BinaryBigEndian] {
            let bytes = encode_ply(&g, None, enc);
            let back = decode_gaussians(&parse_ply(&bytes).unwrap()).unwrap();
            assert!(back.pixels.is_none());
            assert!(g.iter().zip(&back.gaussians).all(|(a, b)| close(a, b)), "{enc:?}");
        }
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(parse_ply(b"").is_err());
    }

    #[test]
    fn nan_opacity_names_record() {
        let mut g = sample();
        g.extend(sample());
        let mut text = String::from_utf8(encode_ply(&g, None, PlyEncoding::Ascii)).unwrap();
        let lines: Vec<String> = text.lines().map(str::to_string).collect();
        let header_len = lines.iter().position(|l| l == "end_header").unwrap() + 1;
        let mut rec: Vec<String> = lines[header_len + 7].split(' ').map(str::to_string).collect();
        rec[6] = "nan".into();
        let mut patched = lines.clone();
        patched[header_len + 7] = rec.join(" ");
        text = patched.join("\n");
        let err = decode_gaussians(&parse_ply(text.as_bytes()).unwrap()).unwrap_err();
        assert_eq!(err.record, Some(7));
        assert!(err.to_string().contains("record 7") && err.to_string().contains("opacity"));
    }

    #[test]
    fn missing_attribute_and_bad_header() {
        let doc = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n1\n";
        assert!(decode_gaussians(&parse_ply(doc.as_bytes()).unwrap()).unwrap_err().reason.contains("missing"));
        assert!(parse_ply(b"ply\nformat ascii 1.0\nelement vertex 1\n").is_err());
        assert!(parse_ply(b"plx\n").is_err());
        let full = encode_ply(&sample(), None, PlyEncoding::BinaryLittleEndian);
        assert_eq!(parse_ply(&full[..full.len() - 10]).unwrap_err().record, Some(4));
    }

    #[test]
    fn skips_other_elements_and_unknown_properties() {
        let doc = "ply\nformat ascii 1.0\ncomment hi\nelement face 1\nproperty uchar k\n\
                   element vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty float nx\n\
                   property float f_dc_0\nproperty float f_dc_1\nproperty float f_dc_2\nproperty float opacity\n\
                   property float scale_0\nproperty float scale_1\nproperty float scale_2\n\
                   property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\nend_header\n\
                   9\n1 2 3 0 0 0 0 0 0 0 0 2 0 0 0\n";
        let s = decode_gaussians(&parse_ply(doc.as_bytes()).unwrap()).unwrap();
        let g = &s.gaussians[0];
        assert_eq!(g.mu, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(g.alpha, 0.5);
        assert_eq!(g.color, Vector3::repeat(0.5));
        assert_eq!(g.scale, Vector3::repeat(1.0));
        assert_eq!(g.rotation, UnitQuaternion::identity());
    }

    #[test]
    fn camera_round_trip() {
        let k = CameraModel::intrinsics_from_fov(64, 48, 60.0);
        let c = CameraModel::look_at(
            Point3::new(3.0, 1.0, -2.0),
            Point3::origin(),
            -Vector3::y(),
            k,
            64,
            48,
            0.05,
            50.0,
        )
        .unwrap();
        let text = camera_to_toml(&c);
        assert!(text.contains("[intrinsics]") && text.contains("[extrinsics]"));
        let back = camera_from_toml(&text).unwrap();
        assert_eq!((back.width, back.height, back.near, back.far, back.intrinsics), (64, 48, 0.05, 50.0, c.intrinsics));
        assert!(back.world_to_camera().rotation.angle_to(&c.world_to_camera().rotation) < 1e-12);
        assert_eq!(back.world_to_camera().translation, c.world_to_camera().translation);
        assert!(camera_from_toml("width = 1").is_err());
    }

    #[test]
    fn config_layers() {
        let a: toml::Table = "tau_mask = 0.3\ntheta_red = 0.6".parse().unwrap();
        let b: toml::Table = "tau_mask = 0.1".parse().unwrap();
        let c = merge_config(&[&a, &b]).unwrap();
        assert_eq!((c.tau_mask, c.theta_red), (0.1, 0.6));
        let bad: toml::Table = "bogus = 1".parse().unwrap();
        assert!(merge_config(&[&bad]).is_err());
    }
}

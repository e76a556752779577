//! C ABI over the splatstream engine.
//!
//! Every object crosses the boundary as an opaque handle created by a `*_new`
//! or `*_load` function and released by the matching `*_free`. Fallible calls
//! return [`SsStatus`]; on failure the message is kept per thread and can be
//! read with [`ss_last_error_message`]. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion, Vector3};
use splatstream::gir::{build_gir, serialize_gir};
use splatstream::pipeline::{FrameInput, PredictorKind};
use splatstream::raster::render_gaussians;
use splatstream::redundancy::{obb_from_gaussian, obb_intersection_volume};
use splatstream::scene::PixelGaussianMap;
use splatstream::{
    CameraModel, GaussianImage, GaussianParams, GlobalGaussianStore, Intrinsics, OrientedBoundingBox,
    SelectionStrategy, StreamConfig, StreamState,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    Io = 4,
    Pipeline = 5,
    Panic = 6,
}

/// GIR selection rule.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStrategy {
    Nearest = 0,
    MostContributive = 1,
}

/// Mask predictor kind; `Constant` uses `SsStreamConfig::predictor_value`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsPredictor {
    GtOracle = 0,
    IouHeuristic = 1,
    Constant = 2,
}

/// One Gaussian in activated form: `opacity` in (0, 1], `scale` as standard
/// deviations, `rotation` as a unit `(w, x, y, z)` quaternion.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsGaussian {
    pub position: [f64; 3],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Pinhole camera with a world-to-camera rotation `(w, x, y, z)` and translation.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsCameraDesc {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// Oriented box; `axes` holds the three unit axes one after another.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsObb {
    pub center: [f64; 3],
    pub axes: [f64; 9],
    pub half_extents: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsStreamConfig {
    pub tau_mask: f64,
    pub k_sigma: f64,
    pub window_radius: u32,
    pub theta_red: f64,
    pub predictor: SsPredictor,
    pub predictor_value: f64,
    pub strategy: SsStrategy,
    pub gir_tau: f64,
    pub background: [f32; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SsFrameStats {
    pub frame: u64,
    pub inserted: usize,
    pub removed: usize,
    pub live_count: usize,
    pub c_ratio: f64,
}

pub struct SsStore(GlobalGaussianStore);
pub struct SsCamera(CameraModel);
pub struct SsGir(GaussianImage);
/// Per-pixel candidates of one incoming frame.
pub struct SsFrame(PixelGaussianMap);
pub struct SsStream(StreamState);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(SsStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: SsStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, records any failure for [`ss_last_error_message`] and maps it to a status.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> SsStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(Failure(SsStatus::Panic, msg))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            SsStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure(SsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    Ok(std::slice::from_raw_parts(as_ref(p, what)?, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    Ok(std::slice::from_raw_parts_mut(as_mut(p, what)?, len))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    let s = CStr::from_ptr(as_ref(p, "path")?);
    match s.to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(SsStatus::InvalidArgument, "path is not UTF-8"),
    }
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    let out = as_mut(out, "output handle")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free_handle<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

fn to_params(g: &SsGaussian) -> FfiResult<GaussianParams> {
    GaussianParams::new(
        Vector3::from(g.position),
        Vector3::from(g.scale),
        g.rotation,
        Vector3::from(g.color),
        g.opacity,
    )
    .map_err(|e| Failure(SsStatus::InvalidArgument, e.to_string()))
}

fn from_params(g: &GaussianParams) -> SsGaussian {
    let q = g.rotation.quaternion();
    SsGaussian {
        position: g.mu.into(),
        scale: g.scale.into(),
        rotation: [q.w, q.i, q.j, q.k],
        color: g.color.into(),
        opacity: g.alpha,
    }
}

fn strategy(s: SsStrategy) -> SelectionStrategy {
    match s {
        SsStrategy::Nearest => SelectionStrategy::Nearest,
        SsStrategy::MostContributive => SelectionStrategy::MostContributive,
    }
}

fn predictor(kind: SsPredictor, value: f64) -> PredictorKind {
    match kind {
        SsPredictor::GtOracle => PredictorKind::GtOracle,
        SsPredictor::IouHeuristic => PredictorKind::IouHeuristic,
        SsPredictor::Constant => PredictorKind::Constant(value),
    }
}

/// Writes the last failure message of this thread, NUL-terminated and truncated
/// to `capacity`, and returns the full message length excluding the NUL.
/// Pass a null buffer to query the length.
///
/// # Safety
/// `buffer` must be null or valid for `capacity` bytes.
#[no_mangle]
pub unsafe extern "C" fn ss_last_error_message(buffer: *mut c_char, capacity: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buffer.is_null() && capacity > 0 {
            let n = msg.len().min(capacity - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buffer.cast::<u8>(), n);
            *buffer.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ss_store_new() -> *mut SsStore {
    Box::into_raw(Box::new(SsStore(GlobalGaussianStore::new())))
}

/// Loads a PLY scene into a new store; ids follow file order from 0.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_store_load(path: *const c_char, out: *mut *mut SsStore) -> SsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let params = splatstream::io::load_scene(&path).map_err(|e| Failure(SsStatus::Io, e.to_string()))?;
        let mut store = GlobalGaussianStore::new();
        store.insert(params, 0).map_err(|e| Failure(SsStatus::InvalidArgument, e.to_string()))?;
        write_handle(out, SsStore(store))
    })
}

/// # Safety
/// `store` must be null or a handle from this library that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_store_free(store: *mut SsStore) {
    free_handle(store)
}

/// Inserts `count` Gaussians and writes their new ids to `out_ids` (which may be
/// null). The batch is rejected as a whole if any Gaussian is invalid.
///
/// # Safety
/// `gaussians` must hold `count` elements and `out_ids` must be null or hold `count` slots.
#[no_mangle]
pub unsafe extern "C" fn ss_store_insert(
    store: *mut SsStore,
    gaussians: *const SsGaussian,
    count: usize,
    birth_frame: u64,
    out_ids: *mut u64,
) -> SsStatus {
    guard(|| {
        let store = as_mut(store, "store")?;
        let params = slice(gaussians, count, "gaussians")?
            .iter()
            .enumerate()
            .map(|(i, g)| to_params(g).map_err(|Failure(s, m)| Failure(s, format!("gaussian {i}: {m}"))))
            .collect::<FfiResult<Vec<_>>>()?;
        let ids = store.0.insert(params, birth_frame).map_err(|e| Failure(SsStatus::InvalidArgument, e.to_string()))?;
        if !out_ids.is_null() {
            slice_mut(out_ids, count, "out_ids")?.copy_from_slice(&ids);
        }
        Ok(())
    })
}

/// Removes the listed ids; unknown ids are ignored. `out_removed` may be null.
///
/// # Safety
/// `ids` must hold `count` elements.
#[no_mangle]
pub unsafe extern "C" fn ss_store_remove(
    store: *mut SsStore,
    ids: *const u64,
    count: usize,
    out_removed: *mut usize,
) -> SsStatus {
    guard(|| {
        let store = as_mut(store, "store")?;
        let removed = store.0.remove(slice(ids, count, "ids")?.iter().copied());
        if let Some(out) = out_removed.as_mut() {
            *out = removed;
        }
        Ok(())
    })
}

/// Number of live Gaussians, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_store_len(store: *const SsStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the Gaussian with `id` into `out`; `InvalidArgument` if it is not live.
///
/// # Safety
/// `store` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_store_get(store: *const SsStore, id: u64, out: *mut SsGaussian) -> SsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let out = as_mut(out, "out")?;
        match store.0.get(id) {
            Some(g) => {
                *out = from_params(&g.params);
                Ok(())
            }
            None => fail(SsStatus::InvalidArgument, format!("id {id} is not in the store")),
        }
    })
}

/// # Safety
/// `desc` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ss_camera_new(desc: *const SsCameraDesc, out: *mut *mut SsCamera) -> SsStatus {
    guard(|| {
        let d = as_ref(desc, "camera description")?;
        let [w, x, y, z] = d.rotation;
        let q = Quaternion::new(w, x, y, z);
        if !q.norm().is_finite() || (q.norm() - 1.0).abs() > 1e-6 {
            return fail(SsStatus::InvalidArgument, format!("rotation quaternion norm {} is not 1", q.norm()));
        }
        let iso = Isometry3::from_parts(Translation3::from(Vector3::from(d.translation)), UnitQuaternion::from_quaternion(q));
        let k = Intrinsics { fx: d.fx, fy: d.fy, cx: d.cx, cy: d.cy };
        let camera = CameraModel::new(k, iso, d.width, d.height, d.near, d.far)
            .map_err(|e| Failure(SsStatus::InvalidArgument, e.to_string()))?;
        write_handle(out, SsCamera(camera))
    })
}

/// Loads a camera TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_camera_load(path: *const c_char, out: *mut *mut SsCamera) -> SsStatus {
    guard(|| {
        let path = path_arg(path)?;
        let camera = splatstream::io::load_camera(&path).map_err(|e| Failure(SsStatus::Io, e.to_string()))?;
        write_handle(out, SsCamera(camera))
    })
}

/// # Safety
/// `camera` must be null or a handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_camera_free(camera: *mut SsCamera) {
    free_handle(camera)
}

/// Renders `store` into `out_rgb`, row-major interleaved RGB, which must hold
/// `3 * width * height` floats.
///
/// # Safety
/// `background` must hold 3 floats and `out_rgb` `capacity` floats.
#[no_mangle]
pub unsafe extern "C" fn ss_render(
    store: *const SsStore,
    camera: *const SsCamera,
    background: *const f32,
    out_rgb: *mut f32,
    capacity: usize,
) -> SsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let camera = as_ref(camera, "camera")?;
        let bg: [f32; 3] = slice(background, 3, "background")?.try_into().unwrap();
        let needed = 3 * camera.0.pixel_count();
        if capacity < needed {
            return fail(SsStatus::BufferTooSmall, format!("render needs {needed} floats, got {capacity}"));
        }
        let img = render_gaussians(&camera.0, store.0.iter(), bg);
        slice_mut(out_rgb, needed, "out_rgb")?.copy_from_slice(&img.rgb.data);
        Ok(())
    })
}

/// Builds a Gaussian image of `store`; `tau` is only used by the nearest rule.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_gir_build(
    store: *const SsStore,
    camera: *const SsCamera,
    rule: SsStrategy,
    tau: f64,
    out: *mut *mut SsGir,
) -> SsStatus {
    guard(|| {
        let store = as_ref(store, "store")?;
        let camera = as_ref(camera, "camera")?;
        if !(tau > 0.0 && tau < 1.0) && rule == SsStrategy::Nearest {
            return fail(SsStatus::InvalidArgument, format!("tau {tau} outside (0,1)"));
        }
        let gir = build_gir(store.0.iter(), &camera.0, strategy(rule), tau);
        write_handle(out, SsGir(gir))
    })
}

/// # Safety
/// `gir` must be null or a handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_gir_free(gir: *mut SsGir) {
    free_handle(gir)
}

/// Copies the id map (row-major, `-1` for background) into `out_ids`, which
/// must hold `width * height` entries.
///
/// # Safety
/// `out_ids` must hold `capacity` elements.
#[no_mangle]
pub unsafe extern "C" fn ss_gir_id_map(gir: *const SsGir, out_ids: *mut i64, capacity: usize) -> SsStatus {
    guard(|| {
        let gir = as_ref(gir, "gir")?;
        let needed = gir.0.id_map.len();
        if capacity < needed {
            return fail(SsStatus::BufferTooSmall, format!("id map needs {needed} entries, got {capacity}"));
        }
        slice_mut(out_ids, needed, "out_ids")?.copy_from_slice(&gir.0.id_map);
        Ok(())
    })
}

/// Writes the binary GIR container. `out_len` always receives the required
/// size; pass a null buffer to query it.
///
/// # Safety
/// `buffer` must be null or hold `capacity` bytes; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_gir_serialize(
    gir: *const SsGir,
    buffer: *mut u8,
    capacity: usize,
    out_len: *mut usize,
) -> SsStatus {
    guard(|| {
        let gir = as_ref(gir, "gir")?;
        let out_len = as_mut(out_len, "out_len")?;
        let bytes = serialize_gir(&gir.0);
        *out_len = bytes.len();
        if buffer.is_null() {
            return Ok(());
        }
        if capacity < bytes.len() {
            return fail(SsStatus::BufferTooSmall, format!("GIR needs {} bytes, got {capacity}", bytes.len()));
        }
        slice_mut(buffer, bytes.len(), "buffer")?.copy_from_slice(&bytes);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn ss_frame_new(width: u32, height: u32) -> *mut SsFrame {
    Box::into_raw(Box::new(SsFrame(PixelGaussianMap::new(width, height))))
}

/// Places a candidate at pixel `(x, y)`, replacing any earlier one.
///
/// # Safety
/// `frame` must be a live handle and `gaussian` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_frame_set(frame: *mut SsFrame, x: u32, y: u32, gaussian: *const SsGaussian) -> SsStatus {
    guard(|| {
        let frame = as_mut(frame, "frame")?;
        let g = to_params(as_ref(gaussian, "gaussian")?)?;
        if x >= frame.0.width || y >= frame.0.height {
            return fail(SsStatus::InvalidArgument, format!("pixel ({x}, {y}) outside the frame"));
        }
        frame.0.set(x, y, g);
        Ok(())
    })
}

/// # Safety
/// `frame` must be null or a handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_frame_free(frame: *mut SsFrame) {
    free_handle(frame)
}

/// Fills `out` with the default stream configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_config_default(out: *mut SsStreamConfig) -> SsStatus {
    guard(|| {
        let d = StreamConfig::default();
        *as_mut(out, "out")? = SsStreamConfig {
            tau_mask: d.tau_mask,
            k_sigma: d.k_sigma,
            window_radius: d.window_radius,
            theta_red: d.theta_red,
            predictor: SsPredictor::GtOracle,
            predictor_value: 1.0,
            strategy: SsStrategy::MostContributive,
            gir_tau: d.gir_tau,
            background: d.background,
        };
        Ok(())
    })
}

/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_new(config: *const SsStreamConfig, out: *mut *mut SsStream) -> SsStatus {
    guard(|| {
        let c = as_ref(config, "config")?;
        let config = StreamConfig {
            tau_mask: c.tau_mask,
            k_sigma: c.k_sigma,
            window_radius: c.window_radius,
            theta_red: c.theta_red,
            predictor: predictor(c.predictor, c.predictor_value),
            strategy: strategy(c.strategy),
            gir_tau: c.gir_tau,
            background: c.background,
            ..StreamConfig::default()
        };
        let state = StreamState::new(config).map_err(|e| Failure(SsStatus::InvalidArgument, e.to_string()))?;
        write_handle(out, SsStream(state))
    })
}

/// Runs one streaming update. The frame is only read. `out_stats` may be null.
///
/// # Safety
/// Handles must be live; `out_stats` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_step(
    stream: *mut SsStream,
    camera: *const SsCamera,
    frame: *const SsFrame,
    out_stats: *mut SsFrameStats,
) -> SsStatus {
    guard(|| {
        let stream = as_mut(stream, "stream")?;
        let camera = as_ref(camera, "camera")?;
        let frame = as_ref(frame, "frame")?;
        let input = FrameInput { camera: camera.0.clone(), image: None, current: frame.0.clone() };
        let report = stream.0.step(&input).map_err(|e| Failure(SsStatus::Pipeline, e.to_string()))?;
        if let Some(out) = out_stats.as_mut() {
            let s = report.stats;
            *out = SsFrameStats {
                frame: s.frame,
                inserted: s.inserted,
                removed: s.removed,
                live_count: s.live_count,
                c_ratio: s.c_ratio,
            };
        }
        Ok(())
    })
}

/// Live Gaussians in the stream's store, or 0 for a null handle.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_live_count(stream: *const SsStream) -> usize {
    stream.as_ref().map_or(0, |s| s.0.store.len())
}

/// Removed over inserted Gaussians across every step so far.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_c_ratio(stream: *const SsStream) -> f64 {
    stream.as_ref().map_or(0.0, |s| s.0.cumulative_c_ratio())
}

/// Copies the stream's current store into a new, independent store handle.
///
/// # Safety
/// `stream` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_snapshot(stream: *const SsStream, out: *mut *mut SsStore) -> SsStatus {
    guard(|| {
        let stream = as_ref(stream, "stream")?;
        write_handle(out, SsStore(stream.0.store.clone()))
    })
}

/// # Safety
/// `stream` must be null or a handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ss_stream_free(stream: *mut SsStream) {
    free_handle(stream)
}

/// Box enclosing the `k_sigma` level set of a Gaussian.
///
/// # Safety
/// `gaussian` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ss_gaussian_obb(gaussian: *const SsGaussian, k_sigma: f64, out: *mut SsObb) -> SsStatus {
    guard(|| {
        let g = to_params(as_ref(gaussian, "gaussian")?)?;
        if !(k_sigma.is_finite() && k_sigma > 0.0) {
            return fail(SsStatus::InvalidArgument, format!("k_sigma {k_sigma} must be > 0"));
        }
        let b = obb_from_gaussian(&g, k_sigma);
        *as_mut(out, "out")? = SsObb {
            center: b.center.into(),
            axes: b.axes.as_slice().try_into().unwrap(),
            half_extents: b.half_extents.into(),
        };
        Ok(())
    })
}

fn obb(b: &SsObb) -> FfiResult<OrientedBoundingBox> {
    if b.half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
        return fail(SsStatus::InvalidArgument, "half extents must be positive");
    }
    let axes = Matrix3::from_column_slice(&b.axes);
    if (axes.transpose() * axes - Matrix3::identity()).amax() > 1e-6 {
        return fail(SsStatus::InvalidArgument, "box axes are not orthonormal");
    }
    Ok(OrientedBoundingBox { center: Vector3::from(b.center), axes, half_extents: Vector3::from(b.half_extents) })
}

/// Exact volume of the intersection of two oriented boxes.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_obb_intersection_volume(a: *const SsObb, b: *const SsObb, out: *mut f64) -> SsStatus {
    guard(|| {
        let (a, b) = (obb(as_ref(a, "a")?)?, obb(as_ref(b, "b")?)?);
        *as_mut(out, "out")? = obb_intersection_volume(&a, &b);
        Ok(())
    })
}

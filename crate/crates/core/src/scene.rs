//! Gaussian data model, the identity-indexed global store and pinhole camera geometry.

use std::collections::BTreeMap;

use nalgebra::{Isometry3, Matrix3, Point3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stable identity of a Gaussian inside a [`GlobalGaussianStore`]. Never reused.
pub type GaussianId = u64;

const UNIT_QUAT_TOL: f64 = 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid gaussian at index {index}: {reason}")]
    InvalidGaussian { index: usize, reason: String },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
}

/// The attributes of one anisotropic splat, without identity.
///
/// Covariance is kept factored as `scale` (per-axis standard deviation) and
/// `rotation`, which keeps it positive definite for any valid parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub color: Vector3<f64>,
    pub alpha: f64,
}

impl GaussianParams {
    /// Builds a parameter set from a raw `(w, x, y, z)` quaternion, which must
    /// already be unit length within 1e-6.
    pub fn new(
        mu: Vector3<f64>,
        scale: Vector3<f64>,
        rotation_wxyz: [f64; 4],
        color: Vector3<f64>,
        alpha: f64,
    ) -> Result<Self, SceneError> {
        let [w, x, y, z] = rotation_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(SceneError::InvalidGaussian {
                index: 0,
                reason: format!("rotation quaternion norm {norm} is not 1"),
            });
        }
        let params = Self {
            mu,
            scale,
            rotation: UnitQuaternion::from_quaternion(q),
            color,
            alpha,
        };
        params.validate().map_err(|reason| SceneError::InvalidGaussian { index: 0, reason })?;
        Ok(params)
    }

    /// Isotropic splat with identity rotation.
    pub fn isotropic(mu: Vector3<f64>, sigma: f64, color: Vector3<f64>, alpha: f64) -> Self {
        Self {
            mu,
            scale: Vector3::repeat(sigma),
            rotation: UnitQuaternion::identity(),
            color,
            alpha,
        }
    }

    /// Checks every invariant, returning a human readable reason on failure.
    pub fn validate(&self) -> Result<(), String> {
        if !self.mu.iter().all(|v| v.is_finite()) {
            return Err("position is not finite".into());
        }
        if !self.scale.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(format!("scale {:?} must be finite and > 0", self.scale.as_slice()));
        }
        let qn = self.rotation.quaternion().norm();
        if !qn.is_finite() || (qn - 1.0).abs() > UNIT_QUAT_TOL {
            return Err(format!("rotation norm {qn} is not 1"));
        }
        if !self.color.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)) {
            return Err(format!("color {:?} outside [0,1]", self.color.as_slice()));
        }
        if !(self.alpha.is_finite() && (0.0..=1.0).contains(&self.alpha)) {
            return Err(format!("alpha {} outside [0,1]", self.alpha));
        }
        Ok(())
    }

    /// World-space covariance `R diag(scale^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let rs = Matrix3::from_columns(&[
            r.column(0) * self.scale.x,
            r.column(1) * self.scale.y,
            r.column(2) * self.scale.z,
        ]);
        let cov = rs * rs.transpose();
        // Exact symmetry; the product is symmetric only up to rounding.
        (cov + cov.transpose()) * 0.5
    }

    /// Applies a rigid rotation about the origin followed by no translation.
    pub fn rotated(&self, q: &UnitQuaternion<f64>) -> Self {
        Self {
            mu: q * self.mu,
            rotation: q * self.rotation,
            ..self.clone()
        }
    }
}

/// A splat living in a store, carrying its identity and the frame that created it.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub id: GaussianId,
    pub birth_frame: u64,
    pub params: GaussianParams,
}

pub fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    g.params.covariance()
}

/// Identity-indexed mutable set of Gaussians with a monotone id counter.
#[derive(Debug, Clone, Default)]
pub struct GlobalGaussianStore {
    gaussians: BTreeMap<GaussianId, Gaussian>,
    next_id: GaussianId,
    frame_index: u64,
}

impl GlobalGaussianStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores every candidate under a fresh id. The batch is validated first and
    /// rejected as a whole if any candidate is invalid.
    pub fn insert(
        &mut self,
        candidates: Vec<GaussianParams>,
        birth_frame: u64,
    ) -> Result<Vec<GaussianId>, SceneError> {
        for (index, c) in candidates.iter().enumerate() {
            c.validate().map_err(|reason| SceneError::InvalidGaussian { index, reason })?;
        }
        let ids = candidates
            .into_iter()
            .map(|params| {
                let id = self.next_id;
                self.next_id += 1;
                self.gaussians.insert(id, Gaussian { id, birth_frame, params });
                id
            })
            .collect();
        Ok(ids)
    }

    /// Removes the listed ids, ignoring ones that are not present.
    pub fn remove<I: IntoIterator<Item = GaussianId>>(&mut self, ids: I) -> usize {
        ids.into_iter()
            .filter(|id| self.gaussians.remove(id).is_some())
            .count()
    }

    pub fn get(&self, id: GaussianId) -> Option<&Gaussian> {
        self.gaussians.get(&id)
    }

    pub fn contains(&self, id: GaussianId) -> bool {
        self.gaussians.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Iterates in ascending id order.
    pub fn iter(&self) -> impl Iterator<Item = &Gaussian> + '_ {
        self.gaussians.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = GaussianId> + '_ {
        self.gaussians.keys().copied()
    }

    pub fn next_id(&self) -> GaussianId {
        self.next_id
    }

    pub fn frame_index(&self) -> u64 {
        self.frame_index
    }

    pub fn set_frame_index(&mut self, frame: u64) {
        self.frame_index = frame;
    }
}

/// Per-pixel Gaussian candidates for one view, at most one per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGaussianMap {
    pub width: u32,
    pub height: u32,
    cells: Vec<Option<GaussianParams>>,
}

impl PixelGaussianMap {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height, cells: vec![None; width as usize * height as usize] }
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn get(&self, x: u32, y: u32) -> Option<&GaussianParams> {
        self.cells[self.index(x, y)].as_ref()
    }

    /// Places a candidate, returning the one it displaced.
    pub fn set(&mut self, x: u32, y: u32, g: GaussianParams) -> Option<GaussianParams> {
        let i = self.index(x, y);
        self.cells[i].replace(g)
    }

    pub fn len(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.iter().all(|c| c.is_none())
    }

    /// Occupied cells as `(x, y, candidate)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, &GaussianParams)> + '_ {
        let w = self.width as usize;
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|g| ((i % w) as u32, (i / w) as u32, g)))
    }

    pub fn cells(&self) -> &[Option<GaussianParams>] {
        &self.cells
    }
}

/// Pinhole intrinsics in pixels, zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Pixel coordinates plus camera-space depth of a projected point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Pinhole camera in the OpenCV convention: +z forward, +x right, +y down.
/// Pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    world_to_camera: Isometry3<f64>,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

impl CameraModel {
    pub fn new(
        intrinsics: Intrinsics,
        world_to_camera: Isometry3<f64>,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, SceneError> {
        let Intrinsics { fx, fy, cx, cy } = intrinsics;
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(SceneError::InvalidCamera(format!("focal lengths ({fx}, {fy}) must be > 0")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(SceneError::InvalidCamera("principal point is not finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidCamera(format!("image size {width}x{height} is empty")));
        }
        if !(near.is_finite() && far.is_finite() && near > 0.0 && near < far) {
            return Err(SceneError::InvalidCamera(format!("need 0 < near < far, got {near}, {far}")));
        }
        if !world_to_camera.translation.vector.iter().all(|t| t.is_finite()) {
            return Err(SceneError::InvalidCamera("translation is not finite".into()));
        }
        let r = world_to_camera.rotation.to_rotation_matrix().into_inner();
        check_rotation(&r)?;
        Ok(Self { intrinsics, world_to_camera, width, height, near, far })
    }

    /// Builds the camera from an explicit world-to-camera rotation matrix,
    /// which must be orthonormal with determinant +1 within 1e-6.
    pub fn from_rotation_matrix(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, SceneError> {
        check_rotation(&rotation)?;
        let rot = UnitQuaternion::from_matrix(&rotation);
        Self::new(
            intrinsics,
            Isometry3::from_parts(Translation3::from(translation), rot),
            width,
            height,
            near,
            far,
        )
    }

    /// A camera at `eye` looking at `target`. `up` is the world direction that
    /// should appear upward in the image.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        intrinsics: Intrinsics,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Result<Self, SceneError> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| {
            SceneError::InvalidCamera("eye and target coincide".into())
        })?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| SceneError::InvalidCamera("up is parallel to view direction".into()))?;
        let down = forward.cross(&right);
        // Rows are the camera axes expressed in world coordinates.
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self::from_rotation_matrix(intrinsics, rotation, translation, width, height, near, far)
    }

    /// Intrinsics from a horizontal field of view with the principal point at the image center.
    pub fn intrinsics_from_fov(width: u32, height: u32, fov_x_degrees: f64) -> Intrinsics {
        let fx = width as f64 / (2.0 * (fov_x_degrees.to_radians() * 0.5).tan());
        Intrinsics { fx, fy: fx, cx: width as f64 * 0.5, cy: height as f64 * 0.5 }
    }

    pub fn world_to_camera(&self) -> &Isometry3<f64> {
        &self.world_to_camera
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.world_to_camera.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.world_to_camera.transform_point(&Point3::from(*p)).coords
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.world_to_camera.inverse_transform_point(&Point3::origin()).coords
    }

    /// Projects a world point. Returns `None` when the point lies at or in front
    /// of the near plane (`q_z <= near`).
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<ProjectedPoint> {
        let q = self.to_camera(p);
        if q.z <= self.near {
            return None;
        }
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        Some(ProjectedPoint { u: fx * q.x / q.z + cx, v: fy * q.y / q.z + cy, depth: q.z })
    }

    /// Inverse of [`project_point`](Self::project_point).
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vector3<f64> {
        let Intrinsics { fx, fy, cx, cy } = self.intrinsics;
        let q = Point3::new((u - cx) / fx * depth, (v - cy) / fy * depth, depth);
        self.world_to_camera.inverse_transform_point(&q).coords
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }
}

fn check_rotation(r: &Matrix3<f64>) -> Result<(), SceneError> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(SceneError::InvalidCamera("rotation is not finite".into()));
    }
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if err > ORTHONORMAL_TOL {
        return Err(SceneError::InvalidCamera(format!("rotation is not orthonormal (error {err:e})")));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMAL_TOL {
        return Err(SceneError::InvalidCamera(format!("rotation determinant {det} is not +1")));
    }
    Ok(())
}

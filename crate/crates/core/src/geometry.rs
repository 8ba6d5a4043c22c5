//! Pinhole cameras and rigid transforms.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::raster::DepthMap;

/// Maximum per-entry deviation of `R^T R` from identity (and of `det R`
/// from 1) accepted as-is.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Rotations within this deviation are snapped to the nearest rotation by
/// polar decomposition; anything further off is rejected.
pub const REORTHONORMALIZE_TOL: f64 = 1e-6;

/// Pinhole intrinsics `K = [[fx, 0, cx], [0, fy, cy], [0, 0, 1]]` plus the
/// raster size they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        for (name, v) in [("fx", fx), ("fy", fy)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(name, format!("focal length {v} must be > 0")));
            }
        }
        for (name, v) in [("cx", cx), ("cy", cy)] {
            if !v.is_finite() {
                return Err(Error::validation(name, "principal point must be finite"));
            }
        }
        if width < 2 {
            return Err(Error::validation("width", format!("{width} < 2")));
        }
        if height < 2 {
            return Err(Error::validation("height", format!("{height} < 2")));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fy(&self) -> f64 {
        self.fy
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Perspective projection of a camera-frame point to pixel coordinates.
    pub fn project(&self, point: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(point.z > 0.0) {
            return Err(Error::NonProjectable { z: point.z });
        }
        Ok(Vector2::new(
            self.fx * point.x / point.z + self.cx,
            self.fy * point.y / point.z + self.cy,
        ))
    }

    /// Back-projects pixel `u` at `depth` meters: `depth * K^-1 * (u, 1)`.
    pub fn unproject(&self, u: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>> {
        if !(depth.is_finite() && depth > 0.0) {
            return Err(Error::InvalidDepth { depth });
        }
        Ok(Vector3::new(
            depth * (u.x - self.cx) / self.fx,
            depth * (u.y - self.cy) / self.fy,
            depth,
        ))
    }

    /// Unprojects every valid pixel of `depth`, in row-major order.
    pub fn unproject_depth_map(&self, depth: &DepthMap) -> Vec<Vector3<f64>> {
        let mut points = Vec::with_capacity(depth.valid_count());
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                if depth.is_valid(x, y) {
                    let u = Vector2::new(x as f64, y as f64);
                    if let Ok(p) = self.unproject(&u, depth.at(x, y)) {
                        points.push(p);
                    }
                }
            }
        }
        points
    }
}

/// Rigid motion `p -> R p + t` mapping reference-camera coordinates into the
/// target camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    /// Validates `rotation`. Matrices within [`ORTHONORMAL_TOL`] are kept
    /// bit-for-bit; those within [`REORTHONORMALIZE_TOL`] are replaced by
    /// their polar factor; everything else (including reflections) is
    /// rejected.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::validation("rotation", "non-finite entry"));
        }
        let det = rotation.determinant();
        if det <= 0.0 {
            return Err(Error::validation(
                "rotation",
                format!("determinant {det} is not positive (reflection or singular)"),
            ));
        }
        let dev = orthonormality_error(&rotation).max((det - 1.0).abs());
        let rotation = if dev <= ORTHONORMAL_TOL {
            rotation
        } else if dev <= REORTHONORMALIZE_TOL {
            polar_rotation(&rotation)?
        } else {
            return Err(Error::validation(
                "rotation",
                format!("deviation {dev:e} from a rotation exceeds {REORTHONORMALIZE_TOL:e}"),
            ));
        };
        Ok(RigidTransform {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation of `angle` radians about `axis` followed by `translation`.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle);
        RigidTransform {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }
}

fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).abs().max()
}

fn polar_rotation(r: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = r.svd(true, true);
    match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => {
            let q = u * v_t;
            if q.determinant() <= 0.0 {
                return Err(Error::validation("rotation", "polar factor is a reflection"));
            }
            Ok(q)
        }
        _ => Err(Error::validation("rotation", "SVD failed")),
    }
}

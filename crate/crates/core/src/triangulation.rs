//! Per-pixel depth from optical flow and a known relative pose.
//!
//! With `u = (x, y, 1)` in the reference view and `u' = u + flow` in the
//! target view, the target-side reprojection of depth `d` is
//! `K (R d K^-1 u + t) = d M u + K t` with `M = K R K^-1`. Crossing with `u'`
//! gives a residual linear in `d`:
//!
//! ```text
//! r(d) = a d + b,   a = u' x (M u),   b = u' x (K t)
//! ```
//!
//! whose least-squares minimizer is `d* = -(a . b) / (a . a)`.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::raster::{ensure_same_dims, DepthMap, FlowField, Raster};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulationConfig {
    /// Lower bound on `|a|^2 / |K|_F^2`; smaller values mean the ray and the
    /// epipolar constraint are (nearly) parallel.
    pub min_denominator: f64,
    pub min_depth: f64,
    pub max_depth: f64,
}

impl Default for TriangulationConfig {
    fn default() -> Self {
        TriangulationConfig {
            min_denominator: 1e-12,
            min_depth: 0.1,
            max_depth: 500.0,
        }
    }
}

impl TriangulationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_denominator > 0.0) {
            return Err(Error::InvalidConfig("min_denominator must be > 0".into()));
        }
        if !(self.min_depth > 0.0 && self.min_depth < self.max_depth) {
            return Err(Error::InvalidConfig(format!(
                "depth range [{}, {}] must satisfy 0 < min < max",
                self.min_depth, self.max_depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelDepth {
    pub depth: f64,
    pub valid: bool,
}

/// Precomputed `K R K^-1` and `K t` for one camera pair.
#[derive(Debug, Clone)]
pub struct Triangulator {
    homography: Matrix3<f64>,
    kt: Vector3<f64>,
    inv_k_norm_sq: f64,
    cfg: TriangulationConfig,
}

impl Triangulator {
    pub fn new(k: &CameraIntrinsics, t: &RigidTransform, cfg: TriangulationConfig) -> Result<Self> {
        cfg.validate()?;
        let km = k.matrix();
        Ok(Triangulator {
            homography: km * t.rotation() * k.inverse_matrix(),
            kt: km * t.translation(),
            inv_k_norm_sq: 1.0 / km.norm_squared(),
            cfg,
        })
    }

    /// Linear residual coefficients `(a, b)` of pixel `u` with `flow`.
    pub fn residual_coefficients(&self, u: Vector2<f64>, flow: Vector2<f64>) -> (Vector3<f64>, Vector3<f64>) {
        let ur = Vector3::new(u.x, u.y, 1.0);
        let ut = Vector3::new(u.x + flow.x, u.y + flow.y, 1.0);
        (ut.cross(&(self.homography * ur)), ut.cross(&self.kt))
    }

    pub fn triangulate(&self, u: Vector2<f64>, flow: Vector2<f64>) -> PixelDepth {
        let (a, b) = self.residual_coefficients(u, flow);
        let aa = a.dot(&a);
        let depth = -a.dot(&b) / aa;
        let valid = aa * self.inv_k_norm_sq >= self.cfg.min_denominator
            && depth.is_finite()
            && depth >= self.cfg.min_depth
            && depth <= self.cfg.max_depth;
        PixelDepth { depth, valid }
    }
}

/// Closed-form depth of pixel `u` matched to `u + flow` in the target view.
pub fn triangulate_pixel(
    u: Vector2<f64>,
    flow: Vector2<f64>,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    cfg: &TriangulationConfig,
) -> Result<PixelDepth> {
    Ok(Triangulator::new(k, t, *cfg)?.triangulate(u, flow))
}

/// Triangulates every pixel of `flow`; degenerate pixels are marked invalid
/// and stored as depth 0.
pub fn flow_depth_map(
    flow: &FlowField,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    cfg: &TriangulationConfig,
) -> Result<DepthMap> {
    ensure_same_dims("flow field", k.dims(), flow.dims())?;
    let tri = Triangulator::new(k, t, *cfg)?;
    let (w, h) = flow.dims();
    let mut values = Raster::zeros(w, h, 1);
    let mut valid = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(x, y);
            let pd = tri.triangulate(Vector2::new(x as f64, y as f64), Vector2::new(fx, fy));
            if pd.valid {
                values.set(x, y, 0, pd.depth);
                valid[y * w + x] = true;
            }
        }
    }
    Ok(DepthMap::from_parts_unchecked(values, valid))
}

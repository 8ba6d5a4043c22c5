//! Seeded two-view synthetic scenes with analytic ground truth, plus the two
//! baseline occlusion masks used for comparison.
//!
//! Camera 1 sits at the world origin looking down +z. Camera 2 has the same
//! orientation and is moved by `baseline` along +x, so a point at depth `z`
//! appears `fx * baseline / z` pixels further left in view 2. Surfaces are
//! fronto-parallel planes: a background plane filling the frame and an
//! optional nearer rectangle. Image and feature values are functions of the
//! 3D surface point, so both views observe the same descriptors.

use std::f64::consts::TAU;

use nalgebra::{Vector2, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::FittingSample;
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::occlusion::warp_pixel;
use crate::raster::{
    ensure_same_dims, AsRaster, BinaryMask, DepthMap, FeatureMap, FlowField, ImageRaster,
    ProbabilityMap, Raster,
};

/// Sinusoids summed per texture channel.
pub const WAVES_PER_CHANNEL: usize = 8;
/// Tolerance of the two-view depth test, in meters.
pub const Z_TEST_TOL: f64 = 1e-6;
const MIN_FREQUENCY: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels (`fx = fy`); the principal point is the
    /// raster center.
    pub focal: f64,
    /// Background plane depth in meters.
    pub plane_depth: f64,
    /// Lateral offset of camera 2 in meters.
    pub baseline: f64,
    /// Highest texture frequency in cycles per pixel, measured in the view
    /// that observes the surface.
    pub max_frequency: f64,
    /// Feature channels: one surface code channel plus `C - 1` texture
    /// channels.
    pub feature_channels: usize,
    /// Magnitude of the surface code channel.
    pub code_magnitude: f64,
    /// Norm of the texture part of every feature vector.
    pub texture_norm: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 48,
            focal: 100.0,
            plane_depth: 2.0,
            baseline: 0.1,
            max_frequency: 0.15,
            feature_channels: 16,
            code_magnitude: 30.0,
            texture_norm: 20.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::validation("width", "scene must be at least 2x2"));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(Error::validation("focal", "must be positive"));
        }
        if !(self.plane_depth.is_finite() && self.plane_depth > 0.0) {
            return Err(Error::validation("plane_depth", "must be positive"));
        }
        if !(self.baseline.is_finite() && self.baseline >= 0.0) {
            return Err(Error::validation("baseline", "must be >= 0"));
        }
        if !(self.max_frequency > MIN_FREQUENCY && self.max_frequency <= 0.5) {
            return Err(Error::validation("max_frequency", "must lie in (0.02, 0.5]"));
        }
        if self.feature_channels < 2 {
            return Err(Error::validation("feature_channels", "must be >= 2"));
        }
        if !(self.code_magnitude.is_finite() && self.texture_norm.is_finite())
            || self.code_magnitude < 0.0
            || self.texture_norm <= 0.0
        {
            return Err(Error::validation("texture_norm", "feature magnitudes must be finite and positive"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }

    /// Maps camera-1 coordinates to camera-2 coordinates.
    pub fn transform_12(&self) -> RigidTransform {
        RigidTransform::from_translation(Vector3::new(-self.baseline, 0.0, 0.0))
    }
}

/// A nearer fronto-parallel rectangle, given by its extent in view-1 pixel
/// coordinates (edges at half-integers keep pixel centers off the border).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub depth: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccluderConfig {
    pub scene: SceneConfig,
    pub occluder: Occluder,
}

impl Default for OccluderConfig {
    fn default() -> Self {
        OccluderConfig {
            scene: SceneConfig::default(),
            occluder: Occluder {
                depth: 1.0,
                x_min: 24.5,
                x_max: 44.5,
                y_min: 12.5,
                y_max: 34.5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub images: [ImageRaster; 2],
    pub features: [FeatureMap; 2],
    pub depth_gt: [DepthMap; 2],
    pub k: CameraIntrinsics,
    pub t_12: RigidTransform,
    /// View 1 to view 2.
    pub flow_gt: FlowField,
    /// View 2 to view 1.
    pub flow_bwd: FlowField,
    /// View-1 pixels whose surface point is visible in view 2.
    pub occlusion_gt: BinaryMask,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// Band-limited texture defined in plane coordinates (meters).
#[derive(Debug, Clone)]
struct Texture {
    channels: Vec<[Wave; WAVES_PER_CHANNEL]>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, channels: usize, cycles_per_meter: f64, max_frequency: f64) -> Self {
        let channels = (0..channels)
            .map(|_| {
                std::array::from_fn(|_| {
                    let f = rng.random_range(MIN_FREQUENCY..max_frequency) * cycles_per_meter;
                    let theta = rng.random_range(0.0..TAU);
                    Wave {
                        kx: f * theta.cos(),
                        ky: f * theta.sin(),
                        phase: rng.random_range(0.0..TAU),
                    }
                })
            })
            .collect();
        Texture { channels }
    }

    /// Channel value in `[-1, 1]`.
    fn eval(&self, c: usize, x: f64, y: f64) -> f64 {
        self.channels[c]
            .iter()
            .map(|w| (TAU * (w.kx * x + w.ky * y) + w.phase).sin())
            .sum::<f64>()
            / WAVES_PER_CHANNEL as f64
    }
}

struct Surface {
    depth: f64,
    /// World-space `(x_min, x_max, y_min, y_max)`; `None` is unbounded.
    extent: Option<[f64; 4]>,
    code: f64,
    texture: Texture,
}

impl Surface {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        match self.extent {
            None => true,
            Some([x0, x1, y0, y1]) => p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1,
        }
    }
}

struct World {
    cfg: SceneConfig,
    k: CameraIntrinsics,
    surfaces: Vec<Surface>,
}

struct Hit {
    surface: usize,
    point: Vector3<f64>,
}

impl World {
    /// World-frame center of the given camera.
    fn center(&self, view: usize) -> Vector3<f64> {
        Vector3::new(if view == 0 { 0.0 } else { self.cfg.baseline }, 0.0, 0.0)
    }

    fn cast(&self, view: usize, u: &Vector2<f64>) -> Option<Hit> {
        let c = self.center(view);
        let mut best: Option<Hit> = None;
        for (i, s) in self.surfaces.iter().enumerate() {
            let p = c + self.k.unproject(u, s.depth).ok()?;
            if s.contains(&p) && best.as_ref().is_none_or(|b| s.depth < b.point.z) {
                best = Some(Hit { surface: i, point: p });
            }
        }
        best
    }

    fn in_frame(&self, u: &Vector2<f64>) -> bool {
        let (w, h) = self.k.dims();
        u.x >= 0.0 && u.y >= 0.0 && u.x <= (w - 1) as f64 && u.y <= (h - 1) as f64
    }

    fn render(&self, view: usize) -> Result<RenderedView> {
        let (w, h) = (self.cfg.width, self.cfg.height);
        let c = self.cfg.feature_channels;
        let other = 1 - view;
        let mut image = Raster::zeros(w, h, 3);
        let mut features = Raster::zeros(w, h, c);
        let mut depth = vec![0.0; w * h];
        let mut flow = Raster::zeros(w, h, 2);
        let mut visible = vec![false; w * h];
        let mut texture = vec![0.0; c - 1];
        for y in 0..h {
            for x in 0..w {
                let u = Vector2::new(x as f64, y as f64);
                let hit = self
                    .cast(view, &u)
                    .ok_or_else(|| Error::DegenerateScene(format!("pixel ({x}, {y}) sees no surface")))?;
                let s = &self.surfaces[hit.surface];
                let (px, py) = (hit.point.x, hit.point.y);
                for ch in 0..3 {
                    image.set(x, y, ch, 0.5 + 0.45 * s.texture.eval(ch, px, py));
                }
                for (t, v) in texture.iter_mut().enumerate() {
                    *v = s.texture.eval(3 + t, px, py);
                }
                let norm = texture.iter().map(|v| v * v).sum::<f64>().sqrt();
                let f = features.pixel_mut(x, y);
                f[0] = s.code;
                for (dst, v) in f[1..].iter_mut().zip(&texture) {
                    *dst = if norm > 0.0 { self.cfg.texture_norm * v / norm } else { 0.0 };
                }
                depth[y * w + x] = hit.point.z;

                // Both cameras share orientation and differ by an x shift, so
                // the reprojection reduces to the stereo disparity.
                let shift = self.center(other).x - self.center(view).x;
                let disparity = -self.k.fx() * shift / hit.point.z;
                let target = Vector2::new(u.x + disparity, u.y);
                flow.set(x, y, 0, disparity);
                visible[y * w + x] = self.in_frame(&target)
                    && self
                        .cast(other, &target)
                        .is_some_and(|h2| h2.point.z >= hit.point.z - Z_TEST_TOL);
            }
        }
        Ok(RenderedView {
            image: ImageRaster::new(image)?,
            features: FeatureMap::new(features)?,
            depth: DepthMap::from_values(w, h, depth)?,
            flow: FlowField::new(flow)?,
            visible: BinaryMask::new(w, h, visible)?,
        })
    }
}

struct RenderedView {
    image: ImageRaster,
    features: FeatureMap,
    depth: DepthMap,
    flow: FlowField,
    visible: BinaryMask,
}

fn build_scene(cfg: &SceneConfig, occluder: Option<&Occluder>) -> Result<SyntheticScene> {
    cfg.validate()?;
    let k = cfg.intrinsics()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let channels = 3 + cfg.feature_channels - 1;
    let background = Surface {
        depth: cfg.plane_depth,
        extent: None,
        code: cfg.code_magnitude,
        texture: Texture::random(&mut rng, channels, cfg.focal / cfg.plane_depth, cfg.max_frequency),
    };
    let mut surfaces = vec![background];
    if let Some(o) = occluder {
        if !(o.depth.is_finite() && o.depth > 0.0 && o.depth < cfg.plane_depth) {
            return Err(Error::validation(
                "occluder.depth",
                format!("must lie in (0, {}), got {}", cfg.plane_depth, o.depth),
            ));
        }
        if !(o.x_min <= o.x_max && o.y_min <= o.y_max) {
            return Err(Error::validation("occluder", "extent must satisfy min <= max"));
        }
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        if o.x_min <= 0.0 && o.y_min <= 0.0 && o.x_max >= w - 1.0 && o.y_max >= h - 1.0 {
            return Err(Error::DegenerateScene("foreground covers the entire frame".into()));
        }
        let corner = |px: f64, py: f64| k.unproject(&Vector2::new(px, py), o.depth);
        let lo = corner(o.x_min, o.y_min)?;
        let hi = corner(o.x_max, o.y_max)?;
        surfaces.push(Surface {
            depth: o.depth,
            extent: Some([lo.x, hi.x, lo.y, hi.y]),
            code: -cfg.code_magnitude,
            texture: Texture::random(&mut rng, channels, cfg.focal / o.depth, cfg.max_frequency),
        });
    }
    let world = World { cfg: *cfg, k, surfaces };
    let v1 = world.render(0)?;
    let v2 = world.render(1)?;
    Ok(SyntheticScene {
        images: [v1.image, v2.image],
        features: [v1.features, v2.features],
        depth_gt: [v1.depth, v2.depth],
        k,
        t_12: cfg.transform_12(),
        flow_gt: v1.flow,
        flow_bwd: v2.flow,
        occlusion_gt: v1.visible,
        seed: cfg.seed,
    })
}

/// A single textured background plane.
///
/// ```
/// use flowdepth::synth::{make_plane_scene, SceneConfig};
///
/// let scene = make_plane_scene(&SceneConfig::default()).unwrap();
/// // fx * baseline / depth = 100 * 0.1 / 2
/// assert!((scene.flow_gt.at(30, 20).0 + 5.0).abs() < 1e-9);
/// ```
pub fn make_plane_scene(cfg: &SceneConfig) -> Result<SyntheticScene> {
    build_scene(cfg, None)
}

/// Background plane plus a nearer rectangle.
pub fn make_occluder_scene(cfg: &OccluderConfig) -> Result<SyntheticScene> {
    build_scene(&cfg.scene, Some(&cfg.occluder))
}

/// Forward-backward consistency mask: pixel `u` is kept iff
/// `|f(u) + b(u + f(u))|^2 < alpha1 (|f(u)|^2 + |b(u + f(u))|^2) + alpha2`,
/// where `b` is sampled bilinearly. Samples leaving the frame are dropped.
pub fn baseline_fb_consistency_mask(
    flow_fwd: &FlowField,
    flow_bwd: &FlowField,
    alpha1: f64,
    alpha2: f64,
) -> Result<BinaryMask> {
    ensure_same_dims("backward flow", flow_fwd.dims(), flow_bwd.dims())?;
    let (w, h) = flow_fwd.dims();
    let mut mask = BinaryMask::filled(w, h, false);
    let mut b = [0.0; 2];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow_fwd.at(x, y);
            if !flow_bwd.raster().sample_into(x as f64 + fx, y as f64 + fy, &mut b) {
                continue;
            }
            let (sx, sy) = (fx + b[0], fy + b[1]);
            let lhs = sx * sx + sy * sy;
            let rhs = alpha1 * (fx * fx + fy * fy + b[0] * b[0] + b[1] * b[1]) + alpha2;
            mask.set(x, y, lhs < rhs);
        }
    }
    Ok(mask)
}

pub const FB_ALPHA1: f64 = 0.01;
pub const FB_ALPHA2: f64 = 0.5;
pub const DEPTHFLOW_THRESHOLD: f64 = 1.0;

/// Depth-flow consistency mask: the rigid flow induced by `d` under
/// `(k, t)` is compared with `flow`; a pixel is kept iff the two differ by at
/// most `threshold` pixels. Invalid depths and points behind the second
/// camera are dropped.
pub fn baseline_depthflow_mask(
    d: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
    flow: &FlowField,
    threshold: f64,
) -> Result<BinaryMask> {
    ensure_same_dims("flow", d.dims(), flow.dims())?;
    ensure_same_dims("camera raster", d.dims(), k.dims())?;
    let (w, h) = d.dims();
    let mut mask = BinaryMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !d.is_valid(x, y) {
                continue;
            }
            let Some(target) = warp_pixel(x, y, d.at(x, y), k, t) else {
                continue;
            };
            let (fx, fy) = flow.at(x, y);
            let dx = target.x - x as f64 - fx;
            let dy = target.y - y as f64 - fy;
            mask.set(x, y, (dx * dx + dy * dy).sqrt() <= threshold);
        }
    }
    Ok(mask)
}

/// Smooth multiplicative error field in `[-1, 1]`.
fn error_field(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let f = rng.random_range(0.01..0.06);
            let theta = rng.random_range(0.0..TAU);
            (f * theta.cos(), f * theta.sin(), rng.random_range(0.0..TAU))
        })
        .collect();
    (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            waves
                .iter()
                .map(|(kx, ky, p)| (TAU * (kx * x + ky * y) + p).sin())
                .sum::<f64>()
                / 3.0
        })
        .collect()
}

/// Stand-in for a monocular/multi-view hybrid depth: ground truth times
/// `1 + amplitude * e(x, y)` with a smooth, seeded error field `e`.
/// Invalid ground-truth pixels stay invalid.
pub fn structured_hybrid_depth(depth_gt: &DepthMap, amplitude: f64, seed: u64) -> Result<DepthMap> {
    if !(0.0..1.0).contains(&amplitude) {
        return Err(Error::validation("amplitude", "must lie in [0, 1)"));
    }
    let (w, h) = depth_gt.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = error_field(w, h, &mut rng);
    let values = depth_gt
        .values()
        .iter()
        .zip(&e)
        .map(|(d, e)| d * (1.0 + amplitude * e))
        .collect();
    DepthMap::new(w, h, values, depth_gt.validity().to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkConfig {
    pub width: usize,
    pub height: usize,
    pub samples: usize,
    /// Relative amplitude of the hybrid-depth error.
    pub hybrid_error: f64,
    /// Unreliable blocks per sample, where flow depth is garbage and the
    /// flow probability is 0.
    pub blocks: usize,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            width: 24,
            height: 24,
            samples: 4,
            hybrid_error: 0.1,
            blocks: 2,
            block_size: 6,
            seed: 0,
        }
    }
}

/// Structured-error dataset for fitting the refiner.
///
/// Ground truth is a slanted, gently curved surface. The hybrid depth
/// carries a smooth relative error; the flow depth equals ground truth with
/// probability in `[0.9, 1]`, except inside random blocks where it is off by
/// up to 50% and its probability is 0.
pub fn fusion_benchmark(cfg: &BenchmarkConfig) -> Result<Vec<FittingSample>> {
    let (w, h) = (cfg.width, cfg.height);
    if w < 3 || h < 3 || cfg.samples == 0 || cfg.block_size == 0 || cfg.block_size > w.min(h) {
        return Err(Error::InvalidConfig(format!("degenerate benchmark config {cfg:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.samples);
    for _ in 0..cfg.samples {
        let base = rng.random_range(1.5..4.0);
        let (gx, gy) = (rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02));
        let bump = rng.random_range(0.0..0.3);
        let phase = rng.random_range(0.0..TAU);
        let gt: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                base * (1.0 + gx * x + gy * y) + bump * (TAU * x / w as f64 + phase).sin()
            })
            .collect();
        let d_gt = DepthMap::from_values(w, h, gt.clone())?;
        let e = error_field(w, h, &mut rng);
        let hyb: Vec<f64> = gt.iter().zip(&e).map(|(d, e)| d * (1.0 + cfg.hybrid_error * e)).collect();

        let mut flow = gt.clone();
        let mut prob: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.9..1.0)).collect();
        for _ in 0..cfg.blocks {
            let bx = rng.random_range(0..=w - cfg.block_size);
            let by = rng.random_range(0..=h - cfg.block_size);
            for y in by..by + cfg.block_size {
                for x in bx..bx + cfg.block_size {
                    let i = y * w + x;
                    flow[i] = gt[i] * rng.random_range(0.5..1.5);
                    prob[i] = 0.0;
                }
            }
        }
        out.push(FittingSample {
            d_hyb: DepthMap::from_values(w, h, hyb)?,
            d_flow: DepthMap::from_values(w, h, flow)?,
            m_flow: ProbabilityMap::new(Raster::from_vec(w, h, 1, prob)?)?,
            d_gt,
        });
    }
    Ok(out)
}

/// Mean absolute error over pixels valid in both maps.
pub fn mean_abs_error(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    ensure_same_dims("predicted depth", gt.dims(), pred.dims())?;
    let (mut sum, mut n) = (0.0, 0usize);
    for ((p, g), (&vp, &vg)) in pred
        .values()
        .iter()
        .zip(gt.values())
        .zip(pred.validity().iter().zip(gt.validity()))
    {
        if vp && vg {
            sum += (p - g).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(sum / n as f64)
}

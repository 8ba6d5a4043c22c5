//! Depth-adaptive windowed feature matching.
//!
//! For every reference pixel the hybrid depth is normalized to `[0, 1)`,
//! mapped to a search radius between `r_min` and `r_max`, and the target
//! features inside that square window are correlated with the reference
//! feature by a `1/sqrt(C)`-scaled dot product. A softmax over the window
//! gives a matching distribution whose maximum is the per-pixel confidence
//! and whose mean is the expected displacement (the flow).
//!
//! All windows are carved out of one pre-generated `(2 r_max + 1)^2` grid of
//! offsets, visited row by row (`dy` outer, `dx` inner). Every reduction
//! follows that fixed order, so results do not depend on how pixels are
//! scheduled.

use crate::error::{Error, Result};
use crate::raster::{
    ensure_same_dims, AsRaster, DepthMap, FeatureMap, FlowField, ProbabilityMap, Raster,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingConfig {
    pub r_min: usize,
    pub r_max: usize,
    /// Stabilizer added to the depth range during normalization.
    pub epsilon: f64,
}

impl Default for MatchingConfig {
    fn default() -> Self {
        MatchingConfig {
            r_min: 1,
            r_max: 8,
            epsilon: 1e-6,
        }
    }
}

impl MatchingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_min > self.r_max {
            return Err(Error::InvalidConfig(format!(
                "r_min ({}) must not exceed r_max ({})",
                self.r_min, self.r_max
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon ({}) must be > 0",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Min-max normalizes the valid depths to `[0, 1)`; invalid pixels map to 0.
pub fn normalize_depth(depth: &DepthMap, epsilon: f64) -> Result<Raster> {
    let (lo, hi) = depth
        .values()
        .iter()
        .zip(depth.validity())
        .filter(|(_, &ok)| ok)
        .fold(None, |acc: Option<(f64, f64)>, (&d, _)| match acc {
            None => Some((d, d)),
            Some((lo, hi)) => Some((lo.min(d), hi.max(d))),
        })
        .ok_or(Error::EmptyInput("depth map has no valid pixel"))?;
    let denom = hi - lo + epsilon;
    let data = depth
        .values()
        .iter()
        .zip(depth.validity())
        .map(|(&d, &ok)| if ok { (d - lo) / denom } else { 0.0 })
        .collect();
    Raster::from_vec(depth.width(), depth.height(), 1, data)
}

/// `floor(r_min + d_norm (r_max - r_min))`, clamped to `[r_min, r_max]`.
pub fn adaptive_radius(d_norm: f64, cfg: &MatchingConfig) -> usize {
    let span = (cfg.r_max - cfg.r_min) as f64;
    let r = (cfg.r_min as f64 + d_norm.clamp(0.0, 1.0) * span).floor() as usize;
    r.clamp(cfg.r_min, cfg.r_max)
}

/// Square window of radius `radius` inside the pre-generated window of
/// radius `r_max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub r_max: usize,
    pub radius: usize,
    /// All `(2 r_max + 1)^2` offsets `(dx, dy)`, `dy` outer.
    pub offsets: Vec<(i64, i64)>,
    /// `true` where `max(|dx|, |dy|) <= radius`.
    pub active: Vec<bool>,
}

impl Window {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn active_offsets(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        self.offsets
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(&o, _)| o)
    }
}

fn full_window(r_max: usize) -> Vec<(i64, i64)> {
    let r = r_max as i64;
    (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .collect()
}

#[inline]
fn in_window((dx, dy): (i64, i64), radius: usize) -> bool {
    dx.unsigned_abs().max(dy.unsigned_abs()) as usize <= radius
}

/// Masks the full `(2 r_max + 1)^2` window down to radius `r`.
pub fn window_offsets(r: usize, r_max: usize) -> Window {
    let radius = r.min(r_max);
    let offsets = full_window(r_max);
    let active = offsets.iter().map(|&o| in_window(o, radius)).collect();
    Window {
        r_max,
        radius,
        offsets,
        active,
    }
}

/// Scaled dot products `<Fa(u), Fb(u + d)> / sqrt(C)` for every active
/// offset of `window`. Inactive and out-of-frame offsets yield `None`.
pub fn match_scores(
    fa: &FeatureMap,
    fb: &FeatureMap,
    u: (usize, usize),
    window: &Window,
) -> Result<Vec<Option<f64>>> {
    check_pair(fa, fb)?;
    let mut scores = vec![None; window.offsets.len()];
    let mut buf = vec![0.0; fa.channels()];
    fill_scores(fa, fb, u, &window.offsets, &window.active, &mut buf, &mut scores);
    Ok(scores)
}

fn check_pair(fa: &FeatureMap, fb: &FeatureMap) -> Result<()> {
    ensure_same_dims("target features", fa.dims(), fb.dims())?;
    if fa.channels() != fb.channels() {
        return Err(Error::InvalidRaster(format!(
            "feature channel counts differ: {} vs {}",
            fa.channels(),
            fb.channels()
        )));
    }
    Ok(())
}

fn fill_scores(
    fa: &FeatureMap,
    fb: &FeatureMap,
    (x, y): (usize, usize),
    offsets: &[(i64, i64)],
    active: &[bool],
    buf: &mut [f64],
    scores: &mut [Option<f64>],
) {
    let reference = fa.feature(x, y);
    let scale = (fa.channels() as f64).sqrt();
    let target = fb.raster();
    for ((score, &(dx, dy)), &on) in scores.iter_mut().zip(offsets).zip(active) {
        *score = None;
        if !on {
            continue;
        }
        let (sx, sy) = (x as f64 + dx as f64, y as f64 + dy as f64);
        if target.sample_into(sx, sy, buf) {
            let dot: f64 = reference.iter().zip(buf.iter()).map(|(a, b)| a * b).sum();
            *score = Some(dot / scale);
        }
    }
}

/// Softmax matching distribution at one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchDistribution {
    /// One entry per offset; excluded offsets hold exactly 0.
    pub probabilities: Vec<f64>,
    /// Maximum probability.
    pub confidence: f64,
    /// Probability-weighted mean offset `(dx, dy)`.
    pub displacement: (f64, f64),
}

/// Softmax (with max subtraction) over the non-excluded scores.
///
/// Fails with [`Error::IsolatedPixel`] when every score is excluded; the
/// reported coordinates are `(0, 0)` since the caller owns the pixel index.
pub fn matching_distribution(
    scores: &[Option<f64>],
    offsets: &[(i64, i64)],
) -> Result<MatchDistribution> {
    let mut probabilities = vec![0.0; scores.len()];
    let (confidence, displacement) = softmax_into(scores, offsets, &mut probabilities)
        .ok_or(Error::IsolatedPixel { x: 0, y: 0 })?;
    Ok(MatchDistribution {
        probabilities,
        confidence,
        displacement,
    })
}

fn softmax_into(
    scores: &[Option<f64>],
    offsets: &[(i64, i64)],
    probs: &mut [f64],
) -> Option<(f64, (f64, f64))> {
    let max = scores
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut sum = 0.0;
    for (p, s) in probs.iter_mut().zip(scores) {
        *p = match s {
            Some(s) => (s - max).exp(),
            None => 0.0,
        };
        sum += *p;
    }
    let mut confidence = 0.0f64;
    let (mut fx, mut fy) = (0.0, 0.0);
    for ((p, s), &(dx, dy)) in probs.iter_mut().zip(scores).zip(offsets) {
        if s.is_none() {
            continue;
        }
        *p /= sum;
        confidence = confidence.max(*p);
        fx += *p * dx as f64;
        fy += *p * dy as f64;
    }
    Some((confidence, (fx, fy)))
}

/// Output of [`compute_matching`].
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    pub flow: FlowField,
    /// Per-pixel maximum matching probability.
    pub confidence: ProbabilityMap,
    width: usize,
    radius: Vec<usize>,
}

impl MatchingResult {
    pub fn radius_at(&self, x: usize, y: usize) -> usize {
        self.radius[y * self.width + x]
    }

    /// Row-major radius raster.
    pub fn radius_map(&self) -> &[usize] {
        &self.radius
    }
}

/// Runs depth-adaptive matching from `fa` (reference) to `fb` (target)
/// over every pixel, guided by the reference-view hybrid depth.
pub fn compute_matching(
    fa: &FeatureMap,
    fb: &FeatureMap,
    d_hyb: &DepthMap,
    cfg: &MatchingConfig,
) -> Result<MatchingResult> {
    cfg.validate()?;
    check_pair(fa, fb)?;
    ensure_same_dims("hybrid depth", fa.dims(), d_hyb.dims())?;
    let (w, h) = fa.dims();
    let d_norm = normalize_depth(d_hyb, cfg.epsilon)?;

    let offsets = full_window(cfg.r_max);
    let n = offsets.len();
    let mut active = vec![false; n];
    let mut scores = vec![None; n];
    let mut probs = vec![0.0; n];
    let mut buf = vec![0.0; fa.channels()];

    let mut flow = Raster::zeros(w, h, 2);
    let mut confidence = Raster::zeros(w, h, 1);
    let mut radius = Vec::with_capacity(w * h);
    let mut current_radius = usize::MAX;

    for y in 0..h {
        for x in 0..w {
            let r = adaptive_radius(d_norm.get(x, y, 0), cfg);
            if r != current_radius {
                for (a, &o) in active.iter_mut().zip(&offsets) {
                    *a = in_window(o, r);
                }
                current_radius = r;
            }
            fill_scores(fa, fb, (x, y), &offsets, &active, &mut buf, &mut scores);
            let (conf, (fx, fy)) = softmax_into(&scores, &offsets, &mut probs)
                .ok_or(Error::IsolatedPixel { x, y })?;
            flow.set(x, y, 0, fx);
            flow.set(x, y, 1, fy);
            confidence.set(x, y, 0, conf);
            radius.push(r);
        }
    }

    Ok(MatchingResult {
        flow: FlowField::from_raster_unchecked(flow),
        confidence: ProbabilityMap::from_raster_unchecked(confidence),
        width: w,
        radius,
    })
}

//! Depth-guided feature warping and the occlusion / flow-probability masks.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::raster::{
    ensure_same_dims, AsRaster, BinaryMask, DepthMap, FeatureMap, ProbabilityMap, Raster,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    /// Visibility threshold on the sigmoid of the correlation score.
    pub tau: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig { tau: 0.5 }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "tau ({}) must lie in (0, 1)",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Target features pulled back into the reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedFeatures {
    pub features: FeatureMap,
    /// `false` where the warp left the frame, went behind the camera or hit
    /// an invalid depth.
    pub in_bounds: BinaryMask,
}

/// Warps `fb` into the reference view: each reference pixel is lifted with
/// its hybrid depth, moved by `t` and projected into the target raster.
pub fn warp_features(
    fb: &FeatureMap,
    d_hyb: &DepthMap,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Result<WarpedFeatures> {
    ensure_same_dims("hybrid depth", fb.dims(), d_hyb.dims())?;
    let (w, h) = fb.dims();
    let c = fb.channels();
    let mut out = Raster::zeros(w, h, c);
    let mut in_bounds = BinaryMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !d_hyb.is_valid(x, y) {
                continue;
            }
            let Some(target) = warp_pixel(x, y, d_hyb.at(x, y), k, t) else {
                continue;
            };
            let ok = fb.raster().sample_into(target.x, target.y, out.pixel_mut(x, y));
            in_bounds.set(x, y, ok);
        }
    }
    Ok(WarpedFeatures {
        features: FeatureMap::from_raster_unchecked(out),
        in_bounds,
    })
}

/// Target-view pixel of reference pixel `(x, y)` at `depth`, or `None` when
/// the moved point is not in front of the target camera.
pub(crate) fn warp_pixel(
    x: usize,
    y: usize,
    depth: f64,
    k: &CameraIntrinsics,
    t: &RigidTransform,
) -> Option<Vector2<f64>> {
    let p = k.unproject(&Vector2::new(x as f64, y as f64), depth).ok()?;
    k.project(&t.transform_point(&p)).ok()
}

pub fn sigmoid(s: f64) -> f64 {
    1.0 / (1.0 + (-s).exp())
}

/// Binary visibility: 1 iff the warp stayed in frame and
/// `sigmoid(<Fa, F~b> / sqrt(C)) > tau` (strictly).
pub fn occlusion_mask(
    fa: &FeatureMap,
    fb_warped: &FeatureMap,
    in_bounds: &BinaryMask,
    cfg: &OcclusionConfig,
) -> Result<BinaryMask> {
    cfg.validate()?;
    ensure_same_dims("warped features", fa.dims(), fb_warped.dims())?;
    ensure_same_dims("in-bounds mask", fa.dims(), in_bounds.dims())?;
    if fa.channels() != fb_warped.channels() {
        return Err(Error::InvalidRaster(format!(
            "feature channel counts differ: {} vs {}",
            fa.channels(),
            fb_warped.channels()
        )));
    }
    let scale = (fa.channels() as f64).sqrt();
    let (w, h) = fa.dims();
    let mut mask = BinaryMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            if !in_bounds.get(x, y) {
                continue;
            }
            let dot: f64 = fa
                .feature(x, y)
                .iter()
                .zip(fb_warped.feature(x, y))
                .map(|(a, b)| a * b)
                .sum();
            mask.set(x, y, sigmoid(dot / scale) > cfg.tau);
        }
    }
    Ok(mask)
}

/// Element-wise product of the occlusion mask and the matching confidence.
pub fn flow_probability_mask(m_occ: &BinaryMask, f_c: &ProbabilityMap) -> Result<ProbabilityMap> {
    ensure_same_dims("flow confidence", m_occ.dims(), f_c.dims())?;
    let data = m_occ
        .as_slice()
        .iter()
        .zip(f_c.values())
        .map(|(&m, &p)| if m { p } else { 0.0 })
        .collect();
    Ok(ProbabilityMap::from_raster_unchecked(Raster::from_vec(
        m_occ.width(),
        m_occ.height(),
        1,
        data,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam(w: usize, h: usize) -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, (w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0, w, h).unwrap()
    }

    fn random_features(w: usize, h: usize, c: usize, seed: u64) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::new(Raster::from_fn(w, h, c, |_, _, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_target() {
        let f = random_features(10, 8, 3, 1);
        let d = DepthMap::constant(10, 8, 3.0).unwrap();
        let warped = warp_features(&f, &d, &cam(10, 8), &RigidTransform::identity()).unwrap();
        assert_eq!(warped.in_bounds.count_ones(), 80);
        for y in 0..8 {
            for x in 0..10 {
                for (a, b) in warped.features.feature(x, y).iter().zip(f.feature(x, y)) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lateral_translation_shifts_by_disparity() {
        // Camera moved by +b along x: target = reference shifted by -fx b / z.
        let (w, h) = (24, 6);
        let f = random_features(w, h, 2, 5);
        let d = DepthMap::constant(w, h, 2.0).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(-0.1, 0.0, 0.0));
        let warped = warp_features(&f, &d, &cam(w, h), &t).unwrap();
        for y in 0..h {
            for x in 0..w {
                let expect_in = x >= 5;
                assert_eq!(warped.in_bounds.get(x, y), expect_in);
                if expect_in {
                    for (a, b) in warped.features.feature(x, y).iter().zip(f.feature(x - 5, y)) {
                        assert!((a - b).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn points_behind_camera_are_out_of_bounds() {
        let f = random_features(6, 6, 2, 2);
        let d = DepthMap::constant(6, 6, 1.0).unwrap();
        let t = RigidTransform::from_translation(Vector3::new(0.0, 0.0, -2.0));
        let warped = warp_features(&f, &d, &cam(6, 6), &t).unwrap();
        assert_eq!(warped.in_bounds.count_ones(), 0);
    }

    #[test]
    fn invalid_depth_is_out_of_bounds() {
        let f = random_features(3, 2, 2, 2);
        let d = DepthMap::from_values(3, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, -1.0]).unwrap();
        let warped = warp_features(&f, &d, &cam(3, 2), &RigidTransform::identity()).unwrap();
        assert!(!warped.in_bounds.get(1, 0));
        assert!(!warped.in_bounds.get(2, 1));
        assert_eq!(warped.in_bounds.count_ones(), 4);
    }

    #[test]
    fn mask_threshold_examples() {
        let one = FeatureMap::new(Raster::filled(2, 2, 1, 1.0)).unwrap();
        let all = BinaryMask::filled(2, 2, true);
        let cfg = OcclusionConfig::default();
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-15);
        assert_eq!(occlusion_mask(&one, &one, &all, &cfg).unwrap().count_ones(), 4);

        let a = FeatureMap::new(Raster::from_fn(2, 2, 2, |_, _, c| (c == 0) as u8 as f64)).unwrap();
        let b = FeatureMap::new(Raster::from_fn(2, 2, 2, |_, _, c| (c == 1) as u8 as f64)).unwrap();
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(occlusion_mask(&a, &b, &all, &cfg).unwrap().count_ones(), 0);

        let none = BinaryMask::filled(2, 2, false);
        assert_eq!(occlusion_mask(&one, &one, &none, &cfg).unwrap().count_ones(), 0);
        assert!(occlusion_mask(&one, &one, &all, &OcclusionConfig { tau: 1.0 }).is_err());
    }

    #[test]
    fn self_warp_is_visible() {
        let f = random_features(9, 9, 4, 3);
        let d = DepthMap::constant(9, 9, 1.5).unwrap();
        let warped = warp_features(&f, &d, &cam(9, 9), &RigidTransform::identity()).unwrap();
        let m = occlusion_mask(&f, &warped.features, &warped.in_bounds, &OcclusionConfig::default()).unwrap();
        // Self-similarity is a squared norm, positive for any non-zero feature.
        assert_eq!(m.count_ones(), 81);
    }

    #[test]
    fn flow_probability_examples() {
        let mut m = BinaryMask::filled(2, 1, true);
        m.set(0, 0, false);
        let f = ProbabilityMap::filled(2, 1, 0.7).unwrap();
        let p = flow_probability_mask(&m, &f).unwrap();
        assert_eq!(p.values(), &[0.0, 0.7]);
    }

    #[test]
    fn flow_probability_is_elementwise_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let bits: Vec<bool> = (0..64).map(|_| rng.random_bool(0.5)).collect();
            let probs: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..=1.0)).collect();
            let m = BinaryMask::new(8, 8, bits.clone()).unwrap();
            let f = ProbabilityMap::new(Raster::from_vec(8, 8, 1, probs.clone()).unwrap()).unwrap();
            let p = flow_probability_mask(&m, &f).unwrap();
            for i in 0..64 {
                let expect = f64::from(u8::from(bits[i])) * probs[i];
                assert_eq!(p.values()[i], expect);
                assert!(p.values()[i] <= probs[i]);
                assert_eq!(p.values()[i] == 0.0, !bits[i]);
            }
        }
    }
}

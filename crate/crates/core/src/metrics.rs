//! Image and depth evaluation metrics.

use crate::error::{Error, Result};
use crate::io::KvValue;
use crate::raster::{ensure_same_dims, AsRaster, DepthMap, ImageRaster};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DELTA1_THRESHOLD: f64 = 1.25;

/// Peak signal-to-noise ratio in dB. Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageRaster, b: &ImageRaster, peak: f64) -> Result<f64> {
    ensure_same_dims("image", a.dims(), b.dims())?;
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::validation("peak", format!("must be positive, got {peak}")));
    }
    let (da, db) = (a.raster().data(), b.raster().data());
    let mse = da.iter().zip(db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / da.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5) evaluated at
/// every position where the window fits, averaged over channels and then
/// positions. Intensities are assumed to lie in `[0, peak]` with `peak = 1`.
pub fn ssim(a: &ImageRaster, b: &ImageRaster) -> Result<f64> {
    ensure_same_dims("image", a.dims(), b.dims())?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let peak = 1.0;
    let c1 = (0.01 * peak) * (0.01f64 * peak);
    let c2 = (0.03 * peak) * (0.03f64 * peak);
    let g = gaussian_window();
    let (ra, rb) = (a.raster(), b.raster());
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let mut per_pixel = 0.0;
            for c in 0..3 {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (j, gy) in g.iter().enumerate() {
                    for (i, gx) in g.iter().enumerate() {
                        let wgt = gy * gx;
                        let va = ra.get(x + i, y + j, c);
                        let vb = rb.get(x + i, y + j, c);
                        ma += wgt * va;
                        mb += wgt * vb;
                        saa += wgt * va * va;
                        sbb += wgt * vb * vb;
                        sab += wgt * va * vb;
                    }
                }
                let var_a = saa - ma * ma;
                let var_b = sbb - mb * mb;
                let cov = sab - ma * mb;
                per_pixel += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            }
            total += per_pixel / 3.0;
        }
    }
    Ok(total / (ow * oh) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthMetricReport {
    pub abs_rel: f64,
    pub delta1: f64,
    pub pixel_count: usize,
}

impl DepthMetricReport {
    /// Report entries; `percent` scales `abs_rel` and `delta1` by 100, the
    /// convention of published depth tables.
    pub fn entries(&self, percent: bool) -> [(&'static str, KvValue); 3] {
        let scale = if percent { 100.0 } else { 1.0 };
        [
            ("abs_rel", (self.abs_rel * scale).into()),
            ("delta1", (self.delta1 * scale).into()),
            ("pixel_count", self.pixel_count.into()),
        ]
    }
}

/// Abs Rel and the `< 1.25` accuracy over pixels valid in both maps.
///
/// ```
/// use flowdepth::metrics::depth_metrics;
/// use flowdepth::raster::DepthMap;
///
/// let gt = DepthMap::constant(4, 4, 1.0).unwrap();
/// let pred = DepthMap::constant(4, 4, 1.2).unwrap();
/// let m = depth_metrics(&pred, &gt).unwrap();
/// assert!((m.abs_rel - 0.2).abs() < 1e-12);
/// assert_eq!(m.delta1, 1.0);
/// ```
pub fn depth_metrics(pred: &DepthMap, gt: &DepthMap) -> Result<DepthMetricReport> {
    ensure_same_dims("predicted depth", gt.dims(), pred.dims())?;
    let (w, h) = gt.dims();
    let (mut sum_rel, mut good, mut n) = (0.0, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !(pred.is_valid(x, y) && gt.is_valid(x, y)) {
                continue;
            }
            let (p, g) = (pred.at(x, y), gt.at(x, y));
            sum_rel += (p - g).abs() / g;
            if (p / g).max(g / p) < DELTA1_THRESHOLD {
                good += 1;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOverlap);
    }
    Ok(DepthMetricReport {
        abs_rel: sum_rel / n as f64,
        delta1: good as f64 / n as f64,
        pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Raster;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ImageRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageRaster::new(Raster::from_fn(w, h, 3, |_, _, _| rng.random_range(0.0..1.0))).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = ImageRaster::constant(5, 5, 0.5).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = ImageRaster::constant(5, 5, 0.4).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_elementwise_recomputation() {
        let a = random_image(13, 7, 1);
        let b = random_image(13, 7, 2);
        let mut se = 0.0;
        for y in 0..7 {
            for x in 0..13 {
                for c in 0..3 {
                    let d = a.pixel(x, y)[c] - b.pixel(x, y)[c];
                    se += d * d;
                }
            }
        }
        let expect = -10.0 * (se / (13.0 * 7.0 * 3.0)).log10();
        assert!((psnr(&a, &b, 1.0).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let a = random_image(16, 16, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let noisy = |amp: f64| {
            let data = a.raster().data().iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
            ImageRaster::from_raster_unchecked(Raster::from_vec(16, 16, 3, data).unwrap())
        };
        let p: Vec<f64> = [0.01, 0.05, 0.2].iter().map(|&s| psnr(&a, &noisy(s), 1.0).unwrap()).collect();
        assert!(p[0] > p[1] && p[1] > p[2]);
    }

    #[test]
    fn ssim_examples() {
        let a = random_image(16, 14, 5);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);

        let zero = ImageRaster::constant(12, 12, 0.0).unwrap();
        let one = ImageRaster::constant(12, 12, 1.0).unwrap();
        let s = ssim(&zero, &one).unwrap();
        // Closed form for two constants: (c1) / (1 + c1).
        let c1 = 1e-4;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!(s < 0.05);

        let b = random_image(16, 14, 6);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageRaster::constant(10, 20, 0.0).unwrap();
        assert!(matches!(ssim(&a, &a), Err(Error::TooSmall { .. })));
    }

    #[test]
    fn depth_metric_examples() {
        let gt = DepthMap::from_values(3, 3, (1..=9).map(f64::from).collect()).unwrap();
        let m = depth_metrics(&gt, &gt).unwrap();
        assert_eq!((m.abs_rel, m.delta1, m.pixel_count), (0.0, 1.0, 9));

        let scaled = DepthMap::from_values(3, 3, (1..=9).map(|v| 1.25 * f64::from(v)).collect()).unwrap();
        assert_eq!(depth_metrics(&scaled, &gt).unwrap().delta1, 0.0);
    }

    #[test]
    fn depth_metrics_are_scale_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gt: Vec<f64> = (0..64).map(|_| rng.random_range(1.0..10.0)).collect();
        let pred: Vec<f64> = gt.iter().map(|g| g * rng.random_range(0.7..1.4)).collect();
        let m0 = depth_metrics(
            &DepthMap::from_values(8, 8, pred.clone()).unwrap(),
            &DepthMap::from_values(8, 8, gt.clone()).unwrap(),
        )
        .unwrap();
        // Power-of-two scaling keeps every ratio bit-identical.
        let s = 4.0;
        let m1 = depth_metrics(
            &DepthMap::from_values(8, 8, pred.iter().map(|v| v * s).collect()).unwrap(),
            &DepthMap::from_values(8, 8, gt.iter().map(|v| v * s).collect()).unwrap(),
        )
        .unwrap();
        assert_eq!(m0, m1);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = DepthMap::from_values(2, 1, vec![1.0, 0.0]).unwrap();
        let b = DepthMap::from_values(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(matches!(depth_metrics(&a, &b), Err(Error::EmptyOverlap)));
    }
}

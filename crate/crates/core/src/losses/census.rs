use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, BinaryMask, ImageRaster, Raster, LUMA};

/// Half-width of the 7x7 census patch.
pub const CENSUS_RADIUS: usize = 3;
/// Soft-sign stabilizer: `d / sqrt(d^2 + 0.81)`.
pub const SOFT_SIGN_EPS: f64 = 0.81;
/// Soft Hamming distance `z^2 / (0.1 + z^2)` per neighbor.
pub const HAMMING_EPS: f64 = 0.1;
/// Charbonnier penalty `sqrt(x^2 + 1e-6)`.
pub const CHARBONNIER_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CensusOutput {
    pub loss: f64,
    /// dL/d(reference image), 3 channels.
    pub grad_reference: Raster,
    /// dL/d(warped target image), 3 channels.
    pub grad_warped: Raster,
}

fn soft_sign(d: f64) -> (f64, f64) {
    let q = d * d + SOFT_SIGN_EPS;
    let s = q.sqrt();
    (d / s, SOFT_SIGN_EPS / (q * s))
}

/// Soft census loss between a reference image and a warped target image.
///
/// Each pixel is described by the soft signs of `center - neighbor` over its
/// 7x7 patch (neighbors outside the frame are skipped). The per-pixel soft
/// Hamming distance between the two descriptors goes through a Charbonnier
/// penalty and is averaged over `valid` pixels. The loss only depends on
/// intensity differences, so adding a constant to both images leaves it
/// unchanged.
pub fn census_loss(
    reference: &ImageRaster,
    warped: &ImageRaster,
    valid: &BinaryMask,
) -> Result<CensusOutput> {
    ensure_same_dims("warped image", reference.dims(), warped.dims())?;
    ensure_same_dims("valid mask", reference.dims(), valid.dims())?;
    let count = valid.count_ones();
    if count == 0 {
        return Err(Error::EmptyMask("census loss"));
    }
    let (w, h) = reference.dims();
    let ga = reference.luminance();
    let gb = warped.luminance();
    let mut grad_a = vec![0.0; w * h];
    let mut grad_b = vec![0.0; w * h];
    let inv = 1.0 / count as f64;
    let r = CENSUS_RADIUS as isize;
    let mut loss = 0.0;

    // (neighbor index, dz/dda * ..., dz/ddb * ...) for the current pixel.
    let mut terms: Vec<(usize, f64, f64, f64)> = Vec::with_capacity(48);
    for y in 0..h {
        for x in 0..w {
            if !valid.get(x, y) {
                continue;
            }
            let center = y * w + x;
            let (ca, cb) = (ga.data()[center], gb.data()[center]);
            let mut hamming = 0.0;
            terms.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    let (ta, dta) = soft_sign(ca - ga.data()[ni]);
                    let (tb, dtb) = soft_sign(cb - gb.data()[ni]);
                    let z = ta - tb;
                    let den = HAMMING_EPS + z * z;
                    hamming += z * z / den;
                    let dh_dz = 2.0 * HAMMING_EPS * z / (den * den);
                    terms.push((ni, dh_dz, dta, dtb));
                }
            }
            let pen = (hamming * hamming + CHARBONNIER_EPS).sqrt();
            loss += pen * inv;
            let dpen = hamming / pen * inv;
            for &(ni, dh_dz, dta, dtb) in &terms {
                let ga_d = dpen * dh_dz * dta;
                let gb_d = -dpen * dh_dz * dtb;
                grad_a[center] += ga_d;
                grad_a[ni] -= ga_d;
                grad_b[center] += gb_d;
                grad_b[ni] -= gb_d;
            }
        }
    }

    let to_rgb = |g: &[f64]| Raster::from_fn(w, h, 3, |x, y, c| LUMA[c] * g[y * w + x]);
    Ok(CensusOutput {
        loss,
        grad_reference: to_rgb(&grad_a),
        grad_warped: to_rgb(&grad_b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::AsRaster;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64, lo: f64, hi: f64) -> ImageRaster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageRaster::new(Raster::from_fn(w, h, 3, |_, _, _| rng.random_range(lo..hi))).unwrap()
    }

    fn shifted(img: &ImageRaster, c: f64) -> ImageRaster {
        let r = img.raster();
        ImageRaster::new(Raster::from_fn(r.width(), r.height(), 3, |x, y, k| r.get(x, y, k) + c)).unwrap()
    }

    #[test]
    fn identical_images_hit_the_floor() {
        let a = random_image(9, 9, 1, 0.0, 1.0);
        let all = BinaryMask::filled(9, 9, true);
        let out = census_loss(&a, &a, &all).unwrap();
        assert!((out.loss - 1e-3).abs() < 1e-15);
        assert!(out.grad_reference.data().iter().all(|&g| g == 0.0));
        assert!(out.grad_warped.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn additive_brightness_invariance() {
        let a = random_image(12, 10, 2, 0.15, 0.85);
        let all = BinaryMask::filled(12, 10, true);
        let base = census_loss(&a, &a, &all).unwrap().loss;
        let out = census_loss(&a, &shifted(&a, 0.1), &all).unwrap().loss;
        assert!((out - base).abs() < 1e-6);

        let b = random_image(12, 10, 3, 0.15, 0.85);
        let l0 = census_loss(&a, &b, &all).unwrap().loss;
        let l1 = census_loss(&shifted(&a, -0.1), &shifted(&b, -0.1), &all).unwrap().loss;
        assert!((l0 - l1).abs() < 1e-6);
        assert!(l0 > base);
    }

    #[test]
    fn empty_mask_is_an_error() {
        let a = random_image(4, 4, 1, 0.0, 1.0);
        assert!(matches!(
            census_loss(&a, &a, &BinaryMask::filled(4, 4, false)),
            Err(Error::EmptyMask(_))
        ));
    }
}

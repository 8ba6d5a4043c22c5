use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, AsRaster, ImageRaster, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct RenderingOutput {
    pub loss: f64,
    /// dL/d(render_m) for every view.
    pub grad_renders: Vec<Raster>,
}

/// `sum_m MSE(render_m, target_m) + lambda * perceptual_m`.
///
/// No perceptual network is available, so the perceptual term is 0 and
/// `lambda` only scales that zero; the slot exists so a perceptual distance
/// can be added without changing callers.
pub fn rendering_loss(
    renders: &[ImageRaster],
    targets: &[ImageRaster],
    lambda: f64,
) -> Result<RenderingOutput> {
    if renders.is_empty() || targets.is_empty() {
        return Err(Error::EmptyInput("rendering loss needs at least one view"));
    }
    if renders.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            what: "rendered view count",
            expected: (targets.len(), 1),
            found: (renders.len(), 1),
        });
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(renders.len());
    for (r, t) in renders.iter().zip(targets) {
        ensure_same_dims("rendered view", t.dims(), r.dims())?;
        let (a, b) = (r.raster().data(), t.raster().data());
        let inv = 1.0 / a.len() as f64;
        let mse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * inv;
        let perceptual = 0.0;
        loss += mse + lambda * perceptual;
        let g = a.iter().zip(b).map(|(x, y)| 2.0 * (x - y) * inv).collect();
        grads.push(Raster::from_vec(r.width(), r.height(), 3, g)?);
    }
    Ok(RenderingOutput {
        loss,
        grad_renders: grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_views_cost_nothing() {
        let a = ImageRaster::constant(4, 3, 0.4).unwrap();
        assert_eq!(rendering_loss(std::slice::from_ref(&a), std::slice::from_ref(&a), 0.05).unwrap().loss, 0.0);
    }

    #[test]
    fn uniform_difference() {
        let a = ImageRaster::constant(4, 3, 0.5).unwrap();
        let b = ImageRaster::constant(4, 3, 0.4).unwrap();
        let out = rendering_loss(&[a], &[b], 0.05).unwrap();
        assert!((out.loss - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sums_over_views() {
        let a = ImageRaster::new(Raster::from_fn(3, 3, 3, |x, y, c| ((x + 2 * y + c) % 5) as f64 / 4.0)).unwrap();
        let b = ImageRaster::constant(3, 3, 0.3).unwrap();
        let c = ImageRaster::constant(3, 3, 0.9).unwrap();
        let out = rendering_loss(&[a.clone(), c.clone()], &[b.clone(), a.clone()], 0.05).unwrap();
        let mse = |p: &ImageRaster, q: &ImageRaster| {
            let mut s = 0.0;
            for y in 0..3 {
                for x in 0..3 {
                    for k in 0..3 {
                        let d = p.pixel(x, y)[k] - q.pixel(x, y)[k];
                        s += d * d;
                    }
                }
            }
            s / 27.0
        };
        assert!((out.loss - (mse(&a, &b) + mse(&c, &a))).abs() < 1e-15);
    }

    #[test]
    fn rejects_empty_and_mismatched() {
        assert!(matches!(rendering_loss(&[], &[], 0.05), Err(Error::EmptyInput(_))));
        let a = ImageRaster::constant(2, 2, 0.0).unwrap();
        assert!(rendering_loss(&[a.clone(), a.clone()], &[a], 0.05).is_err());
    }
}

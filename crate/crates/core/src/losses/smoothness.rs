use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, AsRaster, FlowField, ImageRaster, Raster};

/// Edge sensitivity of the smoothness weights on `[0, 1]` intensities.
pub const DEFAULT_EDGE_WEIGHT: f64 = 150.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothnessOrder {
    First,
    Second,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessOutput {
    pub loss: f64,
    /// dL/d(flow), 2 channels.
    pub grad_flow: Raster,
}

/// Edge-aware flow smoothness.
///
/// For each axis, the L1 norm of the flow derivative (forward difference for
/// the first order, central second difference for the second order) is
/// weighted by `exp(-edge_weight * mean_c |dI|)` and averaged over the
/// positions where the stencil fits. The two axis terms are summed. The
/// image gradient paired with a second difference at `x` spans `x-1..x+1`
/// and is halved.
pub fn smoothness_loss(
    flow: &FlowField,
    image: &ImageRaster,
    order: SmoothnessOrder,
    edge_weight: f64,
) -> Result<SmoothnessOutput> {
    ensure_same_dims("image", flow.dims(), image.dims())?;
    let (w, h) = flow.dims();
    if w < 3 || h < 3 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let f = flow.raster();
    let img = image.raster();
    let mut grad = Raster::zeros(w, h, 2);
    let mut loss = 0.0;

    for (ax, ay) in [(1usize, 0usize), (0, 1)] {
        // Stencil start positions for this axis.
        let (x_end, y_end, span) = match order {
            SmoothnessOrder::First => (w - ax, h - ay, 1),
            SmoothnessOrder::Second => (w - 2 * ax, h - 2 * ay, 2),
        };
        let n = (x_end * y_end) as f64;
        for y in 0..y_end {
            for x in 0..x_end {
                let (x1, y1) = (x + ax, y + ay);
                let (x2, y2) = (x + span * ax, y + span * ay);
                let di: f64 = (0..3)
                    .map(|c| (img.get(x2, y2, c) - img.get(x, y, c)).abs())
                    .sum::<f64>()
                    / 3.0
                    / span as f64;
                let weight = (-edge_weight * di).exp() / n;
                for k in 0..2 {
                    let (d, taps): (f64, &[(usize, usize, f64)]) = match order {
                        SmoothnessOrder::First => (
                            f.get(x1, y1, k) - f.get(x, y, k),
                            &[(x1, y1, 1.0), (x, y, -1.0)],
                        ),
                        SmoothnessOrder::Second => (
                            f.get(x2, y2, k) - 2.0 * f.get(x1, y1, k) + f.get(x, y, k),
                            &[(x2, y2, 1.0), (x1, y1, -2.0), (x, y, 1.0)],
                        ),
                    };
                    loss += weight * d.abs();
                    let s = if d == 0.0 { 0.0 } else { weight * d.signum() };
                    for &(tx, ty, coef) in taps {
                        let g = grad.get(tx, ty, k) + s * coef;
                        grad.set(tx, ty, k, g);
                    }
                }
            }
        }
    }
    Ok(SmoothnessOutput {
        loss,
        grad_flow: grad,
    })
}

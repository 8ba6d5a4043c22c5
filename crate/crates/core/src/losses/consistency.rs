use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, AsRaster, DepthMap, FlowField, ProbabilityMap, Raster};

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyOutput {
    pub loss: f64,
    /// Number of pixels whose warped sample stayed in frame.
    pub in_bounds: usize,
    /// Per-pixel weighted term `m_flow |d_ref - warped|` (0 out of frame).
    pub per_pixel: Raster,
    pub grad_reference: Raster,
    pub grad_target: Raster,
    /// 2 channels.
    pub grad_flow: Raster,
    pub grad_mask: Raster,
}

/// Mask-reweighted multi-view depth consistency.
///
/// The target depth is pulled back to the reference view by bilinear
/// sampling at `u + flow(u)`; the loss is the mean of
/// `m_flow(u) |d_ref(u) - d_tgt(u + flow(u))|` over pixels whose sample is
/// in frame. Depth validity is not consulted: invalid entries take part
/// with their stored value (0).
pub fn multiview_consistency_loss(
    d_ref: &DepthMap,
    d_tgt: &DepthMap,
    flow: &FlowField,
    m_flow: &ProbabilityMap,
) -> Result<ConsistencyOutput> {
    let dims = d_ref.dims();
    ensure_same_dims("target depth", dims, d_tgt.dims())?;
    ensure_same_dims("flow field", dims, flow.dims())?;
    ensure_same_dims("flow probability", dims, m_flow.dims())?;
    let (w, h) = dims;
    let tgt = d_tgt.raster();

    struct Term {
        x: usize,
        y: usize,
        diff: f64,
        cell: crate::raster::BilinearCell,
    }
    let mut terms = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(x, y);
            if let Some(cell) = tgt.bilinear_cell(x as f64 + fx, y as f64 + fy) {
                let mut s = [0.0];
                tgt.sample_into(x as f64 + fx, y as f64 + fy, &mut s);
                terms.push(Term {
                    x,
                    y,
                    diff: d_ref.at(x, y) - s[0],
                    cell,
                });
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::EmptyMask("multi-view consistency loss"));
    }

    let inv = 1.0 / terms.len() as f64;
    let mut per_pixel = Raster::zeros(w, h, 1);
    let mut grad_ref = Raster::zeros(w, h, 1);
    let mut grad_tgt = Raster::zeros(w, h, 1);
    let mut grad_flow = Raster::zeros(w, h, 2);
    let mut grad_mask = Raster::zeros(w, h, 1);
    let mut loss = 0.0;
    for t in &terms {
        let m = m_flow.at(t.x, t.y);
        let value = m * t.diff.abs();
        per_pixel.set(t.x, t.y, 0, value);
        loss += value * inv;
        grad_mask.set(t.x, t.y, 0, t.diff.abs() * inv);

        let sign = if t.diff == 0.0 { 0.0 } else { t.diff.signum() };
        let g = m * sign * inv;
        grad_ref.set(t.x, t.y, 0, g);

        // d(sample)/d(target node) are the bilinear weights; the sample
        // enters with a minus sign.
        let c = t.cell;
        let (ax, ay) = (1.0 - c.fx, 1.0 - c.fy);
        for (nx, ny, wgt) in [
            (c.x0, c.y0, ax * ay),
            (c.x1, c.y0, c.fx * ay),
            (c.x0, c.y1, ax * c.fy),
            (c.x1, c.y1, c.fx * c.fy),
        ] {
            let v = grad_tgt.get(nx, ny, 0) - g * wgt;
            grad_tgt.set(nx, ny, 0, v);
        }
        let v00 = tgt.get(c.x0, c.y0, 0);
        let v10 = tgt.get(c.x1, c.y0, 0);
        let v01 = tgt.get(c.x0, c.y1, 0);
        let v11 = tgt.get(c.x1, c.y1, 0);
        let ds_dx = ay * (v10 - v00) + c.fy * (v11 - v01);
        let ds_dy = ax * (v01 - v00) + c.fx * (v11 - v10);
        grad_flow.set(t.x, t.y, 0, -g * ds_dx);
        grad_flow.set(t.x, t.y, 1, -g * ds_dy);
    }

    Ok(ConsistencyOutput {
        loss,
        in_bounds: terms.len(),
        per_pixel,
        grad_reference: grad_ref,
        grad_target: grad_tgt,
        grad_flow,
        grad_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_consistency() {
        let d = DepthMap::from_values(5, 4, (0..20).map(|i| 1.0 + i as f64 * 0.1).collect()).unwrap();
        let out = multiview_consistency_loss(&d, &d, &FlowField::zeros(5, 4), &ProbabilityMap::filled(5, 4, 1.0).unwrap()).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.in_bounds, 20);
    }

    #[test]
    fn constant_offset_half_mask() {
        let d = DepthMap::constant(6, 6, 2.0).unwrap();
        let t = DepthMap::constant(6, 6, 3.0).unwrap();
        let out = multiview_consistency_loss(&d, &t, &FlowField::zeros(6, 6), &ProbabilityMap::filled(6, 6, 0.5).unwrap()).unwrap();
        assert!((out.loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn out_of_frame_samples_are_excluded() {
        let d = DepthMap::constant(4, 4, 2.0).unwrap();
        let t = DepthMap::constant(4, 4, 3.0).unwrap();
        let flow = FlowField::constant(4, 4, 2.0, 0.0);
        let m = ProbabilityMap::filled(4, 4, 1.0).unwrap();
        let out = multiview_consistency_loss(&d, &t, &flow, &m).unwrap();
        assert_eq!(out.in_bounds, 8);
        assert!((out.loss - 1.0).abs() < 1e-15);

        let far = FlowField::constant(4, 4, 10.0, 0.0);
        assert!(matches!(
            multiview_consistency_loss(&d, &t, &far, &m),
            Err(Error::EmptyMask(_))
        ));
    }

    #[test]
    fn zero_mask_pixels_contribute_nothing() {
        let d = DepthMap::constant(4, 3, 2.0).unwrap();
        let t = DepthMap::from_values(4, 3, (0..12).map(|i| 1.0 + i as f64).collect()).unwrap();
        let m = ProbabilityMap::new(Raster::from_fn(4, 3, 1, |x, _, _| if x < 2 { 0.0 } else { 1.0 })).unwrap();
        let out = multiview_consistency_loss(&d, &t, &FlowField::zeros(4, 3), &m).unwrap();
        for y in 0..3 {
            for x in 0..2 {
                assert_eq!(out.per_pixel.get(x, y, 0), 0.0);
                assert_eq!(out.grad_reference.get(x, y, 0), 0.0);
            }
        }
    }
}

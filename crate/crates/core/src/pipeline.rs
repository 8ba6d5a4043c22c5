//! The depth pipeline: matching, occlusion and flow-probability masks,
//! flow triangulation, residual refinement and unprojection to Gaussian
//! centers.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::fusion::{refine_depth, RefinerInputs, ResidualRefiner};
use crate::geometry::{CameraIntrinsics, RigidTransform};
use crate::io;
use crate::losses::{
    census_loss, smoothness_loss, total_loss, LossReport, LossTerms, LossWeights, SmoothnessOrder,
    DEFAULT_EDGE_WEIGHT,
};
use crate::matching::{compute_matching, MatchingConfig, MatchingResult};
use crate::occlusion::{flow_probability_mask, occlusion_mask, warp_features, OcclusionConfig};
use crate::raster::{
    ensure_same_dims, AsRaster, BinaryMask, DepthMap, FeatureMap, FlowField, ImageRaster,
    ProbabilityMap, Raster,
};
use crate::synth::SyntheticScene;
use crate::triangulation::{flow_depth_map, TriangulationConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PipelineConfig {
    pub matching: MatchingConfig,
    pub occlusion: OcclusionConfig,
    pub triangulation: TriangulationConfig,
    pub weights: LossWeights,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.matching.validate()?;
        self.occlusion.validate()?;
        self.triangulation.validate()?;
        self.weights.validate()
    }
}

#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub images: [ImageRaster; 2],
    pub features: [FeatureMap; 2],
    /// Reference-view hybrid depth.
    pub d_hyb: DepthMap,
    pub k: CameraIntrinsics,
    /// Reference camera to target camera.
    pub t: RigidTransform,
    /// Replaces the matched flow for triangulation and the losses; matching
    /// still supplies the confidence.
    pub flow: Option<FlowField>,
}

impl PipelineInputs {
    fn check(&self) -> Result<()> {
        let dims = self.d_hyb.dims();
        ensure_same_dims("reference image", dims, self.images[0].dims())?;
        ensure_same_dims("target image", dims, self.images[1].dims())?;
        ensure_same_dims("reference features", dims, self.features[0].dims())?;
        ensure_same_dims("target features", dims, self.features[1].dims())?;
        ensure_same_dims("camera raster", dims, self.k.dims())?;
        if let Some(f) = &self.flow {
            ensure_same_dims("flow", dims, f.dims())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub matching: MatchingResult,
    /// Flow used downstream: the override if given, else the matched flow.
    pub flow: FlowField,
    pub in_bounds: BinaryMask,
    pub m_occ: BinaryMask,
    pub m_flow: ProbabilityMap,
    pub d_flow: DepthMap,
    pub d_refine: DepthMap,
    pub gaussian_centers: Vec<Vector3<f64>>,
    pub losses: LossReport,
}

/// Reference image resampled at `u + flow(u)` in the target image, with the
/// mask of in-frame samples.
pub fn warp_image(target: &ImageRaster, flow: &FlowField) -> Result<(ImageRaster, BinaryMask)> {
    ensure_same_dims("flow", target.dims(), flow.dims())?;
    let (w, h) = target.dims();
    let mut out = Raster::zeros(w, h, 3);
    let mut valid = BinaryMask::filled(w, h, false);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(x, y);
            let ok = target
                .raster()
                .sample_into(x as f64 + fx, y as f64 + fy, out.pixel_mut(x, y));
            valid.set(x, y, ok);
        }
    }
    // Convex combinations of [0, 1] values stay in [0, 1] up to rounding.
    out.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok((ImageRaster::new(out)?, valid))
}

/// Self-supervised loss terms available from a single view pair: census on
/// the flow-warped target image and both smoothness orders. Multi-view
/// consistency needs the target view's depth and rendering needs rendered
/// views, so both are 0 here, as is the external `gcc` term.
pub fn pair_losses(
    images: &[ImageRaster; 2],
    flow: &FlowField,
    weights: &LossWeights,
) -> Result<LossReport> {
    let (warped, valid) = warp_image(&images[1], flow)?;
    let census = if valid.count_ones() > 0 {
        census_loss(&images[0], &warped, &valid)?.loss
    } else {
        0.0
    };
    let (w, h) = flow.dims();
    let (smooth1, smooth2) = if w >= 3 && h >= 3 {
        (
            smoothness_loss(flow, &images[0], SmoothnessOrder::First, DEFAULT_EDGE_WEIGHT)?.loss,
            smoothness_loss(flow, &images[0], SmoothnessOrder::Second, DEFAULT_EDGE_WEIGHT)?.loss,
        )
    } else {
        (0.0, 0.0)
    };
    total_loss(
        &LossTerms {
            census,
            smooth1,
            smooth2,
            ..Default::default()
        },
        weights,
    )
}

pub fn run_pipeline(
    inputs: &PipelineInputs,
    cfg: &PipelineConfig,
    refiner: &ResidualRefiner,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    inputs.check()?;
    if inputs.d_hyb.valid_count() == 0 {
        return Err(Error::EmptyInput("hybrid depth has no valid pixel"));
    }
    let [fa, fb] = &inputs.features;
    let matching = compute_matching(fa, fb, &inputs.d_hyb, &cfg.matching)?;
    let warped = warp_features(fb, &inputs.d_hyb, &inputs.k, &inputs.t)?;
    let m_occ = occlusion_mask(fa, &warped.features, &warped.in_bounds, &cfg.occlusion)?;
    let m_flow = flow_probability_mask(&m_occ, &matching.confidence)?;
    let flow = inputs.flow.clone().unwrap_or_else(|| matching.flow.clone());
    let d_flow = flow_depth_map(&flow, &inputs.k, &inputs.t, &cfg.triangulation)?;
    let d_refine = refine_depth(
        refiner,
        RefinerInputs {
            d_hyb: &inputs.d_hyb,
            d_flow: &d_flow,
            m_flow: &m_flow,
        },
    )?;
    let gaussian_centers = inputs.k.unproject_depth_map(&d_refine);
    let losses = pair_losses(&inputs.images, &flow, &cfg.weights)?;
    Ok(PipelineOutput {
        matching,
        flow,
        in_bounds: warped.in_bounds,
        m_occ,
        m_flow,
        d_flow,
        d_refine,
        gaussian_centers,
        losses,
    })
}

/// File names used by [`write_outputs`].
pub mod outputs {
    pub const D_FLOW: &str = "d_flow.pfm";
    pub const D_FLOW_VALID: &str = "d_flow_valid.pfm";
    pub const M_OCC: &str = "m_occ.pfm";
    pub const F_C: &str = "f_c.pfm";
    pub const M_FLOW: &str = "m_flow.pfm";
    pub const D_REFINE: &str = "d_refine.pfm";
    pub const FLOW: &str = "flow.pfm";
    pub const CENTERS: &str = "gaussian_centers.txt";
    pub const LOSSES: &str = "losses.txt";
}

pub fn write_outputs(dir: impl AsRef<Path>, out: &PipelineOutput) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::write_depth(dir.join(outputs::D_FLOW), &out.d_flow)?;
    io::write_mask(dir.join(outputs::D_FLOW_VALID), &out.d_flow.validity_mask())?;
    io::write_mask(dir.join(outputs::M_OCC), &out.m_occ)?;
    io::write_probability(dir.join(outputs::F_C), &out.matching.confidence)?;
    io::write_probability(dir.join(outputs::M_FLOW), &out.m_flow)?;
    io::write_depth(dir.join(outputs::D_REFINE), &out.d_refine)?;
    io::write_flow(dir.join(outputs::FLOW), &out.flow)?;
    std::fs::write(dir.join(outputs::CENTERS), io::format_points(&out.gaussian_centers))?;
    let mut kv = io::format_kv(out.losses.entries());
    kv.push('\n');
    std::fs::write(dir.join(outputs::LOSSES), kv)?;
    Ok(())
}

/// File names used by [`write_scene`].
pub mod scene_files {
    pub const IMAGE_1: &str = "image1.ppm";
    pub const IMAGE_2: &str = "image2.ppm";
    pub const FEATURES_1: &str = "features1.pfm";
    pub const FEATURES_2: &str = "features2.pfm";
    pub const DEPTH_HYBRID: &str = "depth_hybrid.pfm";
    pub const DEPTH_GT: &str = "depth_gt.pfm";
    pub const DEPTH_GT_2: &str = "depth_gt2.pfm";
    pub const FLOW_GT: &str = "flow_gt.pfm";
    pub const FLOW_BWD: &str = "flow_bwd.pfm";
    pub const OCCLUSION_GT: &str = "occlusion_gt.pfm";
    pub const CAMERA: &str = "camera.txt";
}

/// Exports a synthetic scene and a hybrid depth for view 1 in the formats
/// the `pipeline` command reads.
pub fn write_scene(dir: impl AsRef<Path>, scene: &SyntheticScene, d_hyb: &DepthMap) -> Result<()> {
    use scene_files::*;
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    io::write_ppm(dir.join(IMAGE_1), &scene.images[0])?;
    io::write_ppm(dir.join(IMAGE_2), &scene.images[1])?;
    io::write_features(dir.join(FEATURES_1), &scene.features[0])?;
    io::write_features(dir.join(FEATURES_2), &scene.features[1])?;
    io::write_depth(dir.join(DEPTH_HYBRID), d_hyb)?;
    io::write_depth(dir.join(DEPTH_GT), &scene.depth_gt[0])?;
    io::write_depth(dir.join(DEPTH_GT_2), &scene.depth_gt[1])?;
    io::write_flow(dir.join(FLOW_GT), &scene.flow_gt)?;
    io::write_flow(dir.join(FLOW_BWD), &scene.flow_bwd)?;
    io::write_mask(dir.join(OCCLUSION_GT), &scene.occlusion_gt)?;
    io::write_camera(dir.join(CAMERA), &scene.k, &scene.t_12)?;
    Ok(())
}

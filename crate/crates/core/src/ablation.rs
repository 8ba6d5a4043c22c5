//! Occlusion-mask ablation on a synthetic occluder scene: the
//! feature-correlation mask against forward-backward flow consistency and
//! depth-flow agreement, scored against analytic occlusion.

use crate::error::{Error, Result};
use crate::matching::{compute_matching, MatchingConfig};
use crate::occlusion::{occlusion_mask, warp_features, OcclusionConfig};
use crate::raster::{ensure_same_dims, BinaryMask, DepthMap, FlowField};
use crate::synth::{
    baseline_depthflow_mask, baseline_fb_consistency_mask, make_occluder_scene,
    structured_hybrid_depth, OccluderConfig, SyntheticScene, DEPTHFLOW_THRESHOLD, FB_ALPHA1,
    FB_ALPHA2,
};

/// Where the baselines take their flows from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FlowSource {
    /// Soft-argmax flows from depth-guided matching in both directions.
    #[default]
    Matched,
    /// Analytic forward and backward flows.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationConfig {
    pub scene: OccluderConfig,
    pub flow_source: FlowSource,
    /// Relative amplitude of the structured error in the hybrid depths.
    pub hybrid_error: f64,
    pub matching: MatchingConfig,
    pub occlusion: OcclusionConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            scene: OccluderConfig::default(),
            flow_source: FlowSource::default(),
            hybrid_error: 0.1,
            matching: MatchingConfig::default(),
            occlusion: OcclusionConfig::default(),
        }
    }
}

/// Scores with "occluded" as the positive class. Precision is NaN when the
/// mask flags no pixel as occluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskScore {
    pub precision: f64,
    pub recall: f64,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub method: &'static str,
    pub score: MaskScore,
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub occluded_pixels: usize,
    pub total_pixels: usize,
}

/// Compares a visibility mask (true = visible) with the reference.
pub fn score_mask(predicted: &BinaryMask, truth: &BinaryMask) -> Result<MaskScore> {
    ensure_same_dims("predicted mask", truth.dims(), predicted.dims())?;
    let (mut tp, mut fp, mut fneg, mut agree) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in predicted.as_slice().iter().zip(truth.as_slice()) {
        match (!p, !t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
        if p == t {
            agree += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
    Ok(MaskScore {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        agreement: agree as f64 / truth.as_slice().len() as f64,
    })
}

fn scene_flows(
    scene: &SyntheticScene,
    hybrid: &[DepthMap; 2],
    cfg: &AblationConfig,
) -> Result<(FlowField, FlowField)> {
    match cfg.flow_source {
        FlowSource::GroundTruth => Ok((scene.flow_gt.clone(), scene.flow_bwd.clone())),
        FlowSource::Matched => {
            let [f1, f2] = &scene.features;
            let fwd = compute_matching(f1, f2, &hybrid[0], &cfg.matching)?;
            let bwd = compute_matching(f2, f1, &hybrid[1], &cfg.matching)?;
            Ok((fwd.flow, bwd.flow))
        }
    }
}

pub fn run_ablation(cfg: &AblationConfig) -> Result<AblationTable> {
    if !(cfg.hybrid_error.is_finite() && (0.0..1.0).contains(&cfg.hybrid_error)) {
        return Err(Error::validation("hybrid_error", "must lie in [0, 1)"));
    }
    cfg.matching.validate()?;
    cfg.occlusion.validate()?;
    let scene = make_occluder_scene(&cfg.scene)?;
    let seed = cfg.scene.scene.seed;
    let hybrid = [
        structured_hybrid_depth(&scene.depth_gt[0], cfg.hybrid_error, seed)?,
        structured_hybrid_depth(&scene.depth_gt[1], cfg.hybrid_error, seed.wrapping_add(1))?,
    ];
    let (fwd, bwd) = scene_flows(&scene, &hybrid, cfg)?;

    let warped = warp_features(&scene.features[1], &hybrid[0], &scene.k, &scene.t_12)?;
    let correlation = occlusion_mask(&scene.features[0], &warped.features, &warped.in_bounds, &cfg.occlusion)?;
    let fb = baseline_fb_consistency_mask(&fwd, &bwd, FB_ALPHA1, FB_ALPHA2)?;
    let depthflow = baseline_depthflow_mask(&hybrid[0], &scene.k, &scene.t_12, &fwd, DEPTHFLOW_THRESHOLD)?;

    let truth = &scene.occlusion_gt;
    let rows = vec![
        AblationRow {
            method: "feature_correlation",
            score: score_mask(&correlation, truth)?,
        },
        AblationRow {
            method: "fb_consistency",
            score: score_mask(&fb, truth)?,
        },
        AblationRow {
            method: "depth_flow",
            score: score_mask(&depthflow, truth)?,
        },
    ];
    let total_pixels = truth.as_slice().len();
    Ok(AblationTable {
        rows,
        occluded_pixels: total_pixels - truth.count_ones(),
        total_pixels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let truth = BinaryMask::new(4, 1, vec![true, true, false, false]).unwrap();
        let pred = BinaryMask::new(4, 1, vec![true, false, false, true]).unwrap();
        let s = score_mask(&pred, &truth).unwrap();
        assert_eq!((s.precision, s.recall, s.agreement), (0.5, 0.5, 0.5));
        let s = score_mask(&truth, &truth).unwrap();
        assert_eq!((s.precision, s.recall, s.agreement), (1.0, 1.0, 1.0));
        let all_visible = BinaryMask::filled(4, 1, true);
        assert!(score_mask(&all_visible, &truth).unwrap().precision.is_nan());
    }

    #[test]
    fn correlation_mask_tracks_occlusion() {
        let table = run_ablation(&AblationConfig::default()).unwrap();
        assert!(table.occluded_pixels > 0);
        let corr = &table.rows[0];
        assert_eq!(corr.method, "feature_correlation");
        assert!(corr.score.agreement >= 0.95, "{:?}", corr.score);
    }

    #[test]
    fn ground_truth_flows_make_fb_baseline_recall_occlusion() {
        let cfg = AblationConfig {
            flow_source: FlowSource::GroundTruth,
            ..Default::default()
        };
        let table = run_ablation(&cfg).unwrap();
        assert!(table.rows[1].score.recall >= 0.8, "{:?}", table.rows[1]);
    }
}

//! Module chains checked against the analytic synthetic scenes.

use flowdepth::fusion::ResidualRefiner;
use flowdepth::losses::multiview_consistency_loss;
use flowdepth::matching::{compute_matching, MatchingConfig};
use flowdepth::occlusion::{occlusion_mask, warp_features, OcclusionConfig};
use flowdepth::pipeline::{run_pipeline, PipelineConfig, PipelineInputs};
use flowdepth::raster::{DepthMap, ProbabilityMap};
use flowdepth::synth::{make_occluder_scene, make_plane_scene, OccluderConfig, SceneConfig};

#[test]
fn correlation_mask_with_exact_depth_equals_analytic_occlusion() {
    for seed in 0..5 {
        let mut cfg = OccluderConfig::default();
        cfg.scene.seed = seed;
        let s = make_occluder_scene(&cfg).unwrap();
        let warped = warp_features(&s.features[1], &s.depth_gt[0], &s.k, &s.t_12).unwrap();
        let mask = occlusion_mask(&s.features[0], &warped.features, &warped.in_bounds, &OcclusionConfig::default()).unwrap();
        assert_eq!(mask, s.occlusion_gt, "seed {seed}");
    }
}

#[test]
fn matched_flow_is_accurate_where_the_window_covers_it() {
    let s = make_plane_scene(&SceneConfig::default()).unwrap();
    // Uneven depth guidance so radii span the whole range.
    let (w, h) = s.depth_gt[0].dims();
    let guide = DepthMap::from_values(w, h, (0..w * h).map(|i| 1.0 + (i % w) as f64 / w as f64).collect()).unwrap();
    let cfg = MatchingConfig::default();
    let m = compute_matching(&s.features[0], &s.features[1], &guide, &cfg).unwrap();
    let (mut covered, mut good) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = s.flow_gt.at(x, y);
            let r = m.radius_at(x, y) as f64;
            if gx.abs().max(gy.abs()) > r || x as f64 + gx < 0.0 {
                continue;
            }
            covered += 1;
            let (fx, fy) = m.flow.at(x, y);
            if (fx - gx).abs() <= 0.5 && (fy - gy).abs() <= 0.5 {
                good += 1;
            }
        }
    }
    assert!(covered > 500);
    assert!(good as f64 >= 0.9 * covered as f64, "{good}/{covered}");
}

#[test]
fn consistency_vanishes_on_visible_points() {
    let s = make_occluder_scene(&OccluderConfig::default()).unwrap();
    let (w, h) = s.depth_gt[0].dims();
    let m = ProbabilityMap::new(s.occlusion_gt.to_raster()).unwrap();
    let out = multiview_consistency_loss(&s.depth_gt[0], &s.depth_gt[1], &s.flow_gt, &m).unwrap();
    assert!(out.loss < 1e-6);
    let all = ProbabilityMap::filled(w, h, 1.0).unwrap();
    let out = multiview_consistency_loss(&s.depth_gt[0], &s.depth_gt[1], &s.flow_gt, &all).unwrap();
    // Each in-frame occluded background point (depth 2) lands on the
    // occluder (depth 1) in view 2.
    let mut hidden = 0;
    for y in 0..h {
        for x in 0..w {
            let (fx, _) = s.flow_gt.at(x, y);
            if !s.occlusion_gt.get(x, y) && x as f64 + fx >= 0.0 {
                hidden += 1;
            }
        }
    }
    assert!(hidden > 0);
    assert!((out.loss * out.in_bounds as f64 - hidden as f64).abs() < 1e-6);
}

#[test]
fn pipeline_recovers_depth_from_exact_flow() {
    let s = make_occluder_scene(&OccluderConfig::default()).unwrap();
    let inputs = PipelineInputs {
        images: s.images.clone(),
        features: s.features.clone(),
        d_hyb: s.depth_gt[0].clone(),
        k: s.k,
        t: s.t_12,
        flow: Some(s.flow_gt.clone()),
    };
    let out = run_pipeline(&inputs, &PipelineConfig::default(), &ResidualRefiner::zeros(4)).unwrap();
    assert_eq!(out.d_flow.valid_count(), s.depth_gt[0].valid_count());
    for (d, g) in out.d_flow.values().iter().zip(s.depth_gt[0].values()) {
        assert!(((d - g) / g).abs() < 1e-9);
    }
    assert_eq!(out.m_occ, s.occlusion_gt);
    for (p, c) in out.gaussian_centers.iter().zip(s.depth_gt[0].values()) {
        assert!((p.z - c).abs() < 1e-12);
    }
}

//! Flow-guided depth refinement for two calibrated views.
//!
//! A coarse hybrid depth map guides feature matching with a depth-dependent
//! search radius. The matched flow is checked for occlusion through feature
//! correlation, triangulated into depth, and fused with the hybrid depth by
//! a small residual CNN. Refined depths unproject to Gaussian centers.
//!
//! ```
//! use flowdepth::fusion::ResidualRefiner;
//! use flowdepth::pipeline::{run_pipeline, PipelineConfig, PipelineInputs};
//! use flowdepth::synth::{make_plane_scene, structured_hybrid_depth, SceneConfig};
//!
//! let scene = make_plane_scene(&SceneConfig::default()).unwrap();
//! let inputs = PipelineInputs {
//!     images: scene.images.clone(),
//!     features: scene.features.clone(),
//!     d_hyb: structured_hybrid_depth(&scene.depth_gt[0], 0.1, 0).unwrap(),
//!     k: scene.k,
//!     t: scene.t_12,
//!     flow: Some(scene.flow_gt.clone()),
//! };
//! let out = run_pipeline(&inputs, &PipelineConfig::default(), &ResidualRefiner::zeros(8)).unwrap();
//! assert_eq!(out.d_flow.valid_count(), 64 * 48);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablation;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod triangulation;

pub use error::{Error, Result};

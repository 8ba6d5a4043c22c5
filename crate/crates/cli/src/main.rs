use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use flowdepth::ablation::{run_ablation, AblationConfig, FlowSource};
use flowdepth::fusion::{fit_refiner, FitConfig, ResidualRefiner, DEFAULT_HIDDEN_CHANNELS};
use flowdepth::gradcheck::{run_gradchecks, GradTerm, GradcheckConfig};
use flowdepth::io::{self, format_kv, KvValue};
use flowdepth::losses::LossWeights;
use flowdepth::matching::MatchingConfig;
use flowdepth::metrics::{depth_metrics, psnr, ssim};
use flowdepth::occlusion::OcclusionConfig;
use flowdepth::pipeline::{run_pipeline, write_outputs, write_scene, PipelineConfig, PipelineInputs};
use flowdepth::synth::{
    fusion_benchmark, make_occluder_scene, make_plane_scene, mean_abs_error,
    structured_hybrid_depth, BenchmarkConfig, OccluderConfig, SceneConfig,
};
use flowdepth::triangulation::TriangulationConfig;

const EXIT_USAGE: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_CHECK: u8 = 3;

#[derive(Parser)]
#[command(name = "flowdepth", version, about = "Flow-guided depth refinement toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Pipeline(PipelineArgs),
    Eval(EvalArgs),
    AblateMasks(AblateArgs),
    Gradcheck(GradcheckArgs),
    Synth(SynthArgs),
    FitRefiner(FitArgs),
}

/// Runs matching, occlusion and flow-probability masks, flow triangulation,
/// residual refinement and unprojection on one reference/target view pair.
///
/// Writes d_flow.pfm with its validity raster d_flow_valid.pfm, m_occ.pfm,
/// f_c.pfm, m_flow.pfm, d_refine.pfm, flow.pfm, gaussian_centers.txt (one
/// "x y z" line per valid refined pixel) and losses.txt.
///
/// Only Gaussian centers are produced. Opacity, covariance and color of the
/// Gaussians are not predicted by this tool.
#[derive(Args)]
struct PipelineArgs {
    /// Reference image (P6 PPM).
    #[arg(long)]
    image1: PathBuf,
    /// Target image (P6 PPM).
    #[arg(long)]
    image2: PathBuf,
    /// Reference features (PFM, channels stacked vertically).
    #[arg(long)]
    features1: PathBuf,
    #[arg(long)]
    features2: PathBuf,
    /// Reference-view hybrid depth (single-channel PFM, 0 = invalid).
    #[arg(long)]
    depth: PathBuf,
    /// Camera file: intrinsics line then the 3x4 reference-to-target pose.
    #[arg(long)]
    camera: PathBuf,
    /// Flow field (PF) used instead of the matched flow for triangulation
    /// and losses.
    #[arg(long)]
    flow: Option<PathBuf>,
    /// Refiner parameter file; without it the refiner is zero and the
    /// refined depth equals the hybrid depth.
    #[arg(long)]
    refiner: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    matching: MatchingArgs,
    #[arg(long, default_value_t = OcclusionConfig::default().tau)]
    tau: f64,
    #[arg(long, default_value_t = TriangulationConfig::default().min_depth)]
    min_depth: f64,
    #[arg(long, default_value_t = TriangulationConfig::default().max_depth)]
    max_depth: f64,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Args)]
struct MatchingArgs {
    #[arg(long, default_value_t = MatchingConfig::default().r_min)]
    r_min: usize,
    #[arg(long, default_value_t = MatchingConfig::default().r_max)]
    r_max: usize,
    #[arg(long, default_value_t = MatchingConfig::default().epsilon)]
    epsilon: f64,
}

impl MatchingArgs {
    fn config(&self) -> MatchingConfig {
        MatchingConfig {
            r_min: self.r_min,
            r_max: self.r_max,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    #[arg(long, default_value_t = LossWeights::default().lambda_s1)]
    lambda_s1: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_s2)]
    lambda_s2: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_c)]
    lambda_c: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_g)]
    lambda_g: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_m)]
    lambda_m: f64,
    #[arg(long, default_value_t = LossWeights::default().lambda_lpips_surrogate)]
    lambda_lpips: f64,
}

/// Prints psnr/ssim for two .ppm images or abs_rel/delta1 for two .pfm
/// depth maps as one key=value line.
#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Report abs_rel and delta1 in percent.
    #[arg(long)]
    percent: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowSourceArg {
    Matched,
    Gt,
}

/// Scores the feature-correlation occlusion mask and two flow-based
/// baselines against analytic occlusion on a synthetic occluder scene.
#[derive(Args)]
struct AblateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flows given to the forward-backward and depth-flow baselines.
    #[arg(long, value_enum, default_value_t = FlowSourceArg::Matched)]
    flow_source: FlowSourceArg,
    #[arg(long, default_value_t = 0.1)]
    hybrid_error: f64,
    #[arg(long, default_value_t = OcclusionConfig::default().tau)]
    tau: f64,
    #[command(flatten)]
    matching: MatchingArgs,
}

/// Compares every analytic gradient with central finite differences.
#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = flowdepth::gradcheck::DEFAULT_INSTANCES)]
    instances: usize,
    /// Perturb one term's analytic gradient (harness self-test).
    #[arg(long, value_parser = parse_term)]
    corrupt: Option<GradTerm>,
}

fn parse_term(s: &str) -> Result<GradTerm, String> {
    GradTerm::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = GradTerm::ALL.iter().map(|t| t.name()).collect();
        format!("unknown term `{s}` (expected one of {})", names.join(", "))
    })
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneKind {
    Plane,
    Occluder,
}

/// Exports a synthetic scene with a structured-error hybrid depth in the
/// formats `pipeline` reads.
#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SceneKind::Plane)]
    scene: SceneKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SceneConfig::default().baseline)]
    baseline: f64,
    /// Relative amplitude of the hybrid-depth error.
    #[arg(long, default_value_t = 0.1)]
    hybrid_error: f64,
    #[arg(long, short)]
    out: PathBuf,
}

/// Fits a residual refiner on the structured-error benchmark and writes
/// its parameters.
#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = FitConfig::default().steps)]
    steps: usize,
    #[arg(long, default_value_t = FitConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = DEFAULT_HIDDEN_CHANNELS)]
    hidden: usize,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use flowdepth::Error as E;
    if err.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_CHECK;
    }
    match err.downcast_ref::<E>() {
        Some(
            E::Validation { .. }
            | E::InvalidConfig(_)
            | E::InvalidModel(_)
            | E::Divergence { .. }
            | E::InvalidTerm(_)
            | E::DegenerateScene(_),
        ) => EXIT_CHECK,
        _ => EXIT_INPUT,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Pipeline(a) => pipeline(a),
        Command::Eval(a) => eval(a),
        Command::AblateMasks(a) => ablate(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
        Command::FitRefiner(a) => fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn pipeline(a: PipelineArgs) -> anyhow::Result<()> {
    let cfg = PipelineConfig {
        matching: a.matching.config(),
        occlusion: OcclusionConfig { tau: a.tau },
        triangulation: TriangulationConfig {
            min_depth: a.min_depth,
            max_depth: a.max_depth,
            ..Default::default()
        },
        weights: LossWeights {
            lambda_s1: a.weights.lambda_s1,
            lambda_s2: a.weights.lambda_s2,
            lambda_c: a.weights.lambda_c,
            lambda_g: a.weights.lambda_g,
            lambda_m: a.weights.lambda_m,
            lambda_lpips_surrogate: a.weights.lambda_lpips,
        },
    };
    let read = |p: &Path| p.display().to_string();
    let image1 = io::read_ppm(&a.image1).with_context(|| read(&a.image1))?;
    let image2 = io::read_ppm(&a.image2).with_context(|| read(&a.image2))?;
    let height = image1.height();
    let features1 = io::read_features(&a.features1, height).with_context(|| read(&a.features1))?;
    let features2 = io::read_features(&a.features2, height).with_context(|| read(&a.features2))?;
    let d_hyb = io::read_depth(&a.depth).with_context(|| read(&a.depth))?;
    let (k, t) = io::read_camera(&a.camera).with_context(|| read(&a.camera))?;
    let flow = match &a.flow {
        Some(p) => Some(io::read_flow(p).with_context(|| read(p))?),
        None => None,
    };
    let refiner = match &a.refiner {
        Some(p) => io::read_refiner(p).with_context(|| read(p))?,
        None => ResidualRefiner::zeros(DEFAULT_HIDDEN_CHANNELS),
    };
    let inputs = PipelineInputs {
        images: [image1, image2],
        features: [features1, features2],
        d_hyb,
        k,
        t,
        flow,
    };
    let out = run_pipeline(&inputs, &cfg, &refiner)?;
    write_outputs(&a.out, &out).with_context(|| read(&a.out))?;
    println!(
        "{}",
        format_kv([
            ("pixels", KvValue::from(out.d_refine.values().len())),
            ("flow_valid", out.d_flow.valid_count().into()),
            ("visible", out.m_occ.count_ones().into()),
            ("centers", out.gaussian_centers.len().into()),
        ])
    );
    println!("{}", format_kv(out.losses.entries()));
    Ok(())
}

fn has_extension(p: &Path, ext: &str) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case(ext))
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let line = if has_extension(&a.pred, "ppm") && has_extension(&a.gt, "ppm") {
        let pred = io::read_ppm(&a.pred)?;
        let gt = io::read_ppm(&a.gt)?;
        format_kv([("psnr", psnr(&pred, &gt, 1.0)?), ("ssim", ssim(&pred, &gt)?)])
    } else if has_extension(&a.pred, "pfm") && has_extension(&a.gt, "pfm") {
        let pred = io::read_depth(&a.pred)?;
        let gt = io::read_depth(&a.gt)?;
        format_kv(depth_metrics(&pred, &gt)?.entries(a.percent))
    } else {
        bail!(flowdepth::Error::InvalidRaster(
            "eval expects two .ppm images or two .pfm depth maps".into()
        ));
    };
    println!("{line}");
    Ok(())
}

fn ablate(a: AblateArgs) -> anyhow::Result<()> {
    let mut scene = OccluderConfig::default();
    scene.scene.seed = a.seed;
    let cfg = AblationConfig {
        scene,
        flow_source: match a.flow_source {
            FlowSourceArg::Matched => FlowSource::Matched,
            FlowSourceArg::Gt => FlowSource::GroundTruth,
        },
        hybrid_error: a.hybrid_error,
        matching: a.matching.config(),
        occlusion: OcclusionConfig { tau: a.tau },
    };
    let table = run_ablation(&cfg)?;
    println!(
        "occluded_pixels={} total_pixels={}",
        table.occluded_pixels, table.total_pixels
    );
    println!("{:<20} {:>9} {:>9} {:>9}", "method", "precision", "recall", "agreement");
    for row in &table.rows {
        println!(
            "{:<20} {:>9.4} {:>9.4} {:>9.4}",
            row.method, row.score.precision, row.score.recall, row.score.agreement
        );
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let report = run_gradchecks(&GradcheckConfig {
        seed: a.seed,
        instances: a.instances,
        corrupt: a.corrupt,
    })?;
    let mut failed = Vec::new();
    for t in &report.terms {
        let status = if t.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<12} {status} max_rel_dev={:.3e} max_abs_dev={:.3e} entries={} failures={}",
            t.term.name(),
            t.max_rel_deviation,
            t.max_abs_deviation,
            t.entries,
            t.failures
        );
        if !t.passed() {
            failed.push(format!("{} (max relative deviation {:.3e})", t.term, t.max_rel_deviation));
        }
    }
    if !failed.is_empty() {
        return Err(CheckFailed(format!("gradient check failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let scene_cfg = SceneConfig {
        seed: a.seed,
        baseline: a.baseline,
        ..Default::default()
    };
    let scene = match a.scene {
        SceneKind::Plane => make_plane_scene(&scene_cfg)?,
        SceneKind::Occluder => make_occluder_scene(&OccluderConfig {
            scene: scene_cfg,
            ..Default::default()
        })?,
    };
    let d_hyb = structured_hybrid_depth(&scene.depth_gt[0], a.hybrid_error, a.seed)?;
    write_scene(&a.out, &scene, &d_hyb).with_context(|| a.out.display().to_string())?;
    println!("wrote scene to {}", a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> anyhow::Result<()> {
    let data = fusion_benchmark(&BenchmarkConfig {
        seed: a.seed,
        ..Default::default()
    })?;
    let result = fit_refiner(
        &data,
        &FitConfig {
            steps: a.steps,
            learning_rate: a.learning_rate,
            hidden_channels: a.hidden,
            seed: a.seed,
        },
    )?;
    let (mut before, mut after) = (0.0, 0.0);
    for s in &data {
        before += mean_abs_error(&s.d_hyb, &s.d_gt)?;
        let refined = flowdepth::fusion::refine_depth(&result.refiner, s.inputs())?;
        after += mean_abs_error(&refined, &s.d_gt)?;
    }
    let n = data.len() as f64;
    io::write_refiner(&a.out, &result.refiner).with_context(|| a.out.display().to_string())?;
    println!(
        "{}",
        format_kv([
            ("mae_hybrid", before / n),
            ("mae_refined", after / n),
            ("improvement", 1.0 - after / before),
            ("final_mse", *result.losses.last().unwrap_or(&f64::NAN)),
        ])
    );
    Ok(())
}

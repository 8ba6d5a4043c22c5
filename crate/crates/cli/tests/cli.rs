use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use flowdepth::io;
use flowdepth::raster::{DepthMap, ImageRaster};

struct TempDir(PathBuf);

impl TempDir {
    fn new(name: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("flowdepth-cli-{}-{name}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn flowdepth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowdepth")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn synth(dir: &TempDir, extra: &[&str]) -> PathBuf {
    let scene = dir.path("scene");
    let mut args = vec!["synth", "--out"];
    let out = s(&scene);
    args.push(&out);
    args.extend_from_slice(extra);
    let o = flowdepth(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    scene
}

fn pipeline_args(scene: &Path, out: &Path) -> Vec<String> {
    let p = |f: &str| s(&scene.join(f));
    vec![
        "pipeline".into(),
        "--image1".into(), p("image1.ppm"),
        "--image2".into(), p("image2.ppm"),
        "--features1".into(), p("features1.pfm"),
        "--features2".into(), p("features2.pfm"),
        "--depth".into(), p("depth_hybrid.pfm"),
        "--camera".into(), p("camera.txt"),
        "--out".into(), s(out),
    ]
}

fn run(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    flowdepth(&refs)
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(flowdepth(&[]).status.code(), Some(1));
    assert_eq!(flowdepth(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(flowdepth(&["eval", "--pred"]).status.code(), Some(1));
    assert_eq!(flowdepth(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_help_documents_missing_gaussian_attributes() {
    let o = flowdepth(&["pipeline", "--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("Only Gaussian centers are produced"), "{text}");
    assert!(text.contains("Opacity, covariance and color"), "{text}");
}

#[test]
fn eval_reports_image_and_depth_metrics() {
    let dir = TempDir::new("eval");
    let img = ImageRaster::constant(16, 16, 0.25).unwrap();
    io::write_ppm(dir.path("a.ppm"), &img).unwrap();
    io::write_ppm(dir.path("b.ppm"), &img).unwrap();
    let o = flowdepth(&["eval", "--pred", &s(&dir.path("a.ppm")), "--gt", &s(&dir.path("b.ppm"))]);
    assert_eq!(stdout(&o).trim(), "psnr=inf ssim=1.0");

    io::write_depth(dir.path("gt.pfm"), &DepthMap::constant(8, 8, 1.0).unwrap()).unwrap();
    io::write_depth(dir.path("pred.pfm"), &DepthMap::constant(8, 8, 1.2).unwrap()).unwrap();
    let (pred, gt) = (s(&dir.path("pred.pfm")), s(&dir.path("gt.pfm")));
    let o = flowdepth(&["eval", "--pred", &pred, "--gt", &gt]);
    assert!(stdout(&o).starts_with("abs_rel=0.2 delta1=1.0 pixel_count=64"), "{}", stdout(&o));
    let o = flowdepth(&["eval", "--pred", &pred, "--gt", &gt, "--percent"]);
    assert!(stdout(&o).starts_with("abs_rel=20.0 delta1=100.0"), "{}", stdout(&o));
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new("input");
    let missing = s(&dir.path("missing.pfm"));
    assert_eq!(flowdepth(&["eval", "--pred", &missing, "--gt", &missing]).status.code(), Some(2));

    io::write_depth(dir.path("a.pfm"), &DepthMap::constant(8, 8, 1.0).unwrap()).unwrap();
    io::write_depth(dir.path("b.pfm"), &DepthMap::constant(4, 8, 1.0).unwrap()).unwrap();
    let o = flowdepth(&["eval", "--pred", &s(&dir.path("a.pfm")), "--gt", &s(&dir.path("b.pfm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape mismatch"));

    std::fs::write(dir.path("bad.pfm"), b"Pf\n2 1\n-1.0\n\0\0").unwrap();
    let bad = s(&dir.path("bad.pfm"));
    let o = flowdepth(&["eval", "--pred", &bad, "--gt", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte"));
}

#[test]
fn validation_errors_exit_3() {
    let dir = TempDir::new("validation");
    let scene = synth(&dir, &[]);
    let mut args = pipeline_args(&scene, &dir.path("out"));
    args.extend(["--tau".into(), "1.5".into()]);
    assert_eq!(run(&args).status.code(), Some(3));

    std::fs::write(scene.join("camera.txt"), "100 100 31.5 23.5 64 48\n-1 0 0 0\n0 1 0 0\n0 0 1 0\n").unwrap();
    let o = run(&pipeline_args(&scene, &dir.path("out")));
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rotation"));
}

#[test]
fn zero_baseline_pipeline_passes_hybrid_depth_through() {
    let dir = TempDir::new("zero-baseline");
    let scene = synth(&dir, &["--baseline", "0"]);
    let out = dir.path("out");
    let o = run(&pipeline_args(&scene, &out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d_flow = io::read_depth(out.join("d_flow.pfm")).unwrap();
    assert_eq!(d_flow.valid_count(), 0);
    let valid = io::read_mask(out.join("d_flow_valid.pfm")).unwrap();
    assert_eq!(valid.count_ones(), 0);
    let refined = io::read_depth(out.join("d_refine.pfm")).unwrap();
    let hybrid = io::read_depth(scene.join("depth_hybrid.pfm")).unwrap();
    assert_eq!(refined, hybrid);
    let centers = std::fs::read_to_string(out.join("gaussian_centers.txt")).unwrap();
    let points = io::parse_points(&centers).unwrap();
    assert_eq!(points.len(), 64 * 48);
}

#[test]
fn pipeline_reruns_are_bitwise_identical() {
    let dir = TempDir::new("rerun");
    let scene = synth(&dir, &["--scene", "occluder", "--seed", "4"]);
    let (a, b) = (dir.path("a"), dir.path("b"));
    assert!(run(&pipeline_args(&scene, &a)).status.success());
    assert!(run(&pipeline_args(&scene, &b)).status.success());
    for f in ["d_flow.pfm", "m_occ.pfm", "f_c.pfm", "m_flow.pfm", "d_refine.pfm", "gaussian_centers.txt", "losses.txt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let losses = std::fs::read_to_string(a.join("losses.txt")).unwrap();
    assert!(losses.starts_with("census="), "{losses}");
    assert!(losses.contains(" gcc=0.0 "), "{losses}");
}

#[test]
fn ablate_masks_is_deterministic_and_lists_every_method() {
    let a = flowdepth(&["ablate-masks", "--seed", "3"]);
    let b = flowdepth(&["ablate-masks", "--seed", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for m in ["feature_correlation", "fb_consistency", "depth_flow"] {
        assert!(text.contains(m), "{text}");
    }
    let agreement: f64 = text
        .lines()
        .find(|l| l.starts_with("feature_correlation"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert!(agreement >= 0.95);
}

#[test]
fn gradcheck_passes_and_names_corrupted_terms() {
    let o = flowdepth(&["gradcheck"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.contains(" pass ")).count(), 6, "{text}");
    assert!(text.contains("max_rel_dev="));

    let o = flowdepth(&["gradcheck", "--corrupt", "refiner", "--instances", "1"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("refiner (max relative deviation"), "{err}");
}

#[test]
fn fit_refiner_reproduces_the_fixture() {
    let dir = TempDir::new("fit");
    let out = dir.path("refiner.bin");
    let o = flowdepth(&["fit-refiner", "--seed", "0", "--out", &s(&out)]);
    assert!(o.status.success());
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/refiner.bin");
    assert_eq!(std::fs::read(out).unwrap(), std::fs::read(fixture).unwrap());
    let text = stdout(&o);
    let improvement: f64 = text
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("improvement="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(improvement >= 0.3, "{text}");
}

//! Central finite-difference checks of every analytic gradient on small
//! seeded instances.

use std::fmt;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{refine_depth, refiner_gradients, RefinerInputs, ResidualRefiner};
use crate::losses::{
    census_loss, multiview_consistency_loss, rendering_loss, smoothness_loss, SmoothnessOrder,
    DEFAULT_EDGE_WEIGHT,
};
use crate::raster::{BinaryMask, DepthMap, FlowField, ImageRaster, ProbabilityMap, Raster};

pub const INSTANCE_SIZE: usize = 9;
pub const DEFAULT_INSTANCES: usize = 5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-8;
pub const STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTerm {
    Census,
    Smooth1,
    Smooth2,
    Consistency,
    Rendering,
    Refiner,
}

impl GradTerm {
    pub const ALL: [GradTerm; 6] = [
        GradTerm::Census,
        GradTerm::Smooth1,
        GradTerm::Smooth2,
        GradTerm::Consistency,
        GradTerm::Rendering,
        GradTerm::Refiner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradTerm::Census => "census",
            GradTerm::Smooth1 => "smooth1",
            GradTerm::Smooth2 => "smooth2",
            GradTerm::Consistency => "consistency",
            GradTerm::Rendering => "rendering",
            GradTerm::Refiner => "refiner",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for GradTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermCheck {
    pub term: GradTerm,
    /// Largest `|a - n| / max(|a|, |n|)` over entries with `max(|a|, |n|)`
    /// above [`ABS_TOL`]. An entry fails when it exceeds [`REL_TOL`] and the
    /// absolute deviation exceeds [`ABS_TOL`].
    pub max_rel_deviation: f64,
    pub max_abs_deviation: f64,
    pub entries: usize,
    pub failures: usize,
}

impl TermCheck {
    fn new(term: GradTerm) -> Self {
        Self {
            term,
            max_rel_deviation: 0.0,
            max_abs_deviation: 0.0,
            entries: 0,
            failures: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.entries += 1;
        let abs = (analytic - numeric).abs();
        self.max_abs_deviation = self.max_abs_deviation.max(abs);
        if abs.is_nan() {
            self.failures += 1;
            self.max_rel_deviation = f64::NAN;
            return;
        }
        let scale = analytic.abs().max(numeric.abs());
        if scale <= ABS_TOL {
            return;
        }
        let rel = abs / scale;
        self.max_rel_deviation = self.max_rel_deviation.max(rel);
        if abs > ABS_TOL && rel > REL_TOL {
            self.failures += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub terms: Vec<TermCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.terms.iter().all(TermCheck::passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    pub instances: usize,
    /// Scales the analytic gradient of one term by 1.01 before comparison, to
    /// show the check detects a wrong gradient.
    pub corrupt: Option<GradTerm>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: DEFAULT_INSTANCES,
            corrupt: None,
        }
    }
}

/// Compares `analytic` against central differences of `f` around `x0`.
fn compare(
    check: &mut TermCheck,
    x0: &[f64],
    analytic: &[f64],
    corrupt: bool,
    f: impl Fn(&[f64]) -> Result<f64>,
) -> Result<()> {
    let mut x = x0.to_vec();
    for i in 0..x0.len() {
        x[i] = x0[i] + STEP;
        let plus = f(&x)?;
        x[i] = x0[i] - STEP;
        let minus = f(&x)?;
        x[i] = x0[i];
        let numeric = (plus - minus) / (2.0 * STEP);
        let a = if corrupt { analytic[i] * 1.01 } else { analytic[i] };
        check.record(a, numeric);
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

fn image(data: &[f64]) -> Result<ImageRaster> {
    ImageRaster::new(Raster::from_vec(INSTANCE_SIZE, INSTANCE_SIZE, 3, data.to_vec())?)
}

fn flow(data: &[f64]) -> Result<FlowField> {
    FlowField::new(Raster::from_vec(INSTANCE_SIZE, INSTANCE_SIZE, 2, data.to_vec())?)
}

fn depth(data: &[f64]) -> Result<DepthMap> {
    DepthMap::from_values(INSTANCE_SIZE, INSTANCE_SIZE, data.to_vec())
}

fn probability(data: &[f64]) -> Result<ProbabilityMap> {
    ProbabilityMap::new(Raster::from_vec(INSTANCE_SIZE, INSTANCE_SIZE, 1, data.to_vec())?)
}

fn check_instance(rng: &mut ChaCha8Rng, checks: &mut [TermCheck], corrupt: Option<GradTerm>) -> Result<()> {
    let n = INSTANCE_SIZE * INSTANCE_SIZE;
    let is = |t: GradTerm| corrupt == Some(t);
    let slot = |t: GradTerm| GradTerm::ALL.iter().position(|&a| a == t).unwrap_or(0);

    // Census: gradient with respect to both images.
    let a0 = uniform(rng, 3 * n, 0.1, 0.9);
    let b0 = uniform(rng, 3 * n, 0.1, 0.9);
    let valid = BinaryMask::filled(INSTANCE_SIZE, INSTANCE_SIZE, true);
    let out = census_loss(&image(&a0)?, &image(&b0)?, &valid)?;
    let c = &mut checks[slot(GradTerm::Census)];
    let bi = image(&b0)?;
    compare(c, &a0, out.grad_reference.data(), is(GradTerm::Census), |a| {
        Ok(census_loss(&image(a)?, &bi, &valid)?.loss)
    })?;
    let ai = image(&a0)?;
    compare(c, &b0, out.grad_warped.data(), is(GradTerm::Census), |b| {
        Ok(census_loss(&ai, &image(b)?, &valid)?.loss)
    })?;

    // Smoothness, both orders, with respect to the flow.
    let img = image(&uniform(rng, 3 * n, 0.0, 1.0))?;
    let f0 = uniform(rng, 2 * n, -2.0, 2.0);
    for (term, order) in [
        (GradTerm::Smooth1, SmoothnessOrder::First),
        (GradTerm::Smooth2, SmoothnessOrder::Second),
    ] {
        let out = smoothness_loss(&flow(&f0)?, &img, order, DEFAULT_EDGE_WEIGHT)?;
        compare(&mut checks[slot(term)], &f0, out.grad_flow.data(), is(term), |f| {
            Ok(smoothness_loss(&flow(f)?, &img, order, DEFAULT_EDGE_WEIGHT)?.loss)
        })?;
    }

    // Consistency with respect to both depths, the flow and the mask.
    let dr = uniform(rng, n, 1.0, 5.0);
    let dt = uniform(rng, n, 1.0, 5.0);
    let fl = uniform(rng, 2 * n, -1.5, 1.5);
    let m = uniform(rng, n, 0.1, 0.9);
    let out = multiview_consistency_loss(&depth(&dr)?, &depth(&dt)?, &flow(&fl)?, &probability(&m)?)?;
    let c = &mut checks[slot(GradTerm::Consistency)];
    let t = is(GradTerm::Consistency);
    let (drm, dtm, flm, mm) = (depth(&dr)?, depth(&dt)?, flow(&fl)?, probability(&m)?);
    compare(c, &dr, out.grad_reference.data(), t, |v| {
        Ok(multiview_consistency_loss(&depth(v)?, &dtm, &flm, &mm)?.loss)
    })?;
    compare(c, &dt, out.grad_target.data(), t, |v| {
        Ok(multiview_consistency_loss(&drm, &depth(v)?, &flm, &mm)?.loss)
    })?;
    compare(c, &fl, out.grad_flow.data(), t, |v| {
        Ok(multiview_consistency_loss(&drm, &dtm, &flow(v)?, &mm)?.loss)
    })?;
    compare(c, &m, out.grad_mask.data(), t, |v| {
        Ok(multiview_consistency_loss(&drm, &dtm, &flm, &probability(v)?)?.loss)
    })?;

    // Rendering over two views.
    let r0 = uniform(rng, 6 * n, 0.1, 0.9);
    let targets = [
        image(&uniform(rng, 3 * n, 0.0, 1.0))?,
        image(&uniform(rng, 3 * n, 0.0, 1.0))?,
    ];
    let renders = |v: &[f64]| -> Result<Vec<ImageRaster>> {
        Ok(vec![image(&v[..3 * n])?, image(&v[3 * n..])?])
    };
    let out = rendering_loss(&renders(&r0)?, &targets, 0.05)?;
    let analytic: Vec<f64> = out.grad_renders.iter().flat_map(|g| g.data().iter().copied()).collect();
    compare(
        &mut checks[slot(GradTerm::Rendering)],
        &r0,
        &analytic,
        is(GradTerm::Rendering),
        |v| Ok(rendering_loss(&renders(v)?, &targets, 0.05)?.loss),
    )?;

    // Refiner parameters under L = 0.5 * sum (refined - target)^2.
    let hidden = 4;
    let refiner = ResidualRefiner::seeded(hidden, rng.random_range(0..u64::MAX));
    let d_hyb = depth(&uniform(rng, n, 1.0, 3.0))?;
    let d_flow = depth(&uniform(rng, n, 1.0, 3.0))?;
    let m_flow = probability(&uniform(rng, n, 0.0, 1.0))?;
    let target = uniform(rng, n, 1.0, 3.0);
    let inputs = RefinerInputs {
        d_hyb: &d_hyb,
        d_flow: &d_flow,
        m_flow: &m_flow,
    };
    let loss_of = |r: &ResidualRefiner| -> Result<(f64, Vec<f64>)> {
        let d = refine_depth(r, inputs)?;
        let resid: Vec<f64> = d.values().iter().zip(&target).map(|(a, b)| a - b).collect();
        Ok((0.5 * resid.iter().map(|e| e * e).sum::<f64>(), resid))
    };
    let (_, resid) = loss_of(&refiner)?;
    let analytic = refiner_gradients(&refiner, inputs, &resid)?;
    compare(
        &mut checks[slot(GradTerm::Refiner)],
        &refiner.parameters(),
        &analytic,
        is(GradTerm::Refiner),
        |p| Ok(loss_of(&ResidualRefiner::from_parameters(hidden, p)?)?.0),
    )?;
    Ok(())
}

/// Runs every check on `cfg.instances` seeded 9x9 instances.
pub fn run_gradchecks(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.instances == 0 {
        return Err(Error::validation("instances", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks: Vec<TermCheck> = GradTerm::ALL.iter().map(|&t| TermCheck::new(t)).collect();
    for _ in 0..cfg.instances {
        check_instance(&mut rng, &mut checks, cfg.corrupt)?;
    }
    Ok(GradcheckReport { terms: checks })
}

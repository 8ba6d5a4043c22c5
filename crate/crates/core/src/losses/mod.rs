//! Supervision terms with analytic gradients, and their weighted total.

mod census;
mod consistency;
mod rendering;
mod smoothness;

pub use census::{
    census_loss, CensusOutput, CENSUS_RADIUS, CHARBONNIER_EPS, HAMMING_EPS, SOFT_SIGN_EPS,
};
pub use consistency::{multiview_consistency_loss, ConsistencyOutput};
pub use rendering::{rendering_loss, RenderingOutput};
pub use smoothness::{smoothness_loss, SmoothnessOrder, SmoothnessOutput, DEFAULT_EDGE_WEIGHT};

use crate::error::{Error, Result};

/// Weights of the total loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_s1: f64,
    pub lambda_s2: f64,
    pub lambda_c: f64,
    pub lambda_g: f64,
    pub lambda_m: f64,
    /// Weight of the perceptual slot inside the rendering loss.
    pub lambda_lpips_surrogate: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_s1: 0.0025,
            lambda_s2: 0.0025,
            lambda_c: 0.1,
            lambda_g: 0.1,
            lambda_m: 0.1,
            lambda_lpips_surrogate: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_s1", self.lambda_s1),
            ("lambda_s2", self.lambda_s2),
            ("lambda_c", self.lambda_c),
            ("lambda_g", self.lambda_g),
            ("lambda_m", self.lambda_m),
            ("lambda_lpips_surrogate", self.lambda_lpips_surrogate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted term values fed to [`total_loss`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub census: f64,
    pub smooth1: f64,
    pub smooth2: f64,
    pub consistency: f64,
    /// Externally supplied term; 0 when absent.
    pub gcc: f64,
    pub rendering: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub census: f64,
    pub smooth1: f64,
    pub smooth2: f64,
    pub consistency: f64,
    pub gcc: f64,
    pub rendering: f64,
    pub total: f64,
}

impl LossReport {
    /// Ordered `(key, value)` pairs for the key=value text format.
    pub fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("census", self.census),
            ("smooth1", self.smooth1),
            ("smooth2", self.smooth2),
            ("consistency", self.consistency),
            ("gcc", self.gcc),
            ("rendering", self.rendering),
            ("total", self.total),
        ]
    }
}

/// Weighted sum of the supervision terms. The rendering term enters with
/// weight 1.
///
/// ```
/// use flowdepth::losses::{total_loss, LossTerms, LossWeights};
///
/// let terms = LossTerms { census: 1.0, ..Default::default() };
/// let report = total_loss(&terms, &LossWeights::default()).unwrap();
/// assert!((report.total - 0.1).abs() < 1e-15);
/// ```
pub fn total_loss(terms: &LossTerms, w: &LossWeights) -> Result<LossReport> {
    w.validate()?;
    for (name, v) in [
        ("census", terms.census),
        ("smooth1", terms.smooth1),
        ("smooth2", terms.smooth2),
        ("consistency", terms.consistency),
        ("gcc", terms.gcc),
        ("rendering", terms.rendering),
    ] {
        if !v.is_finite() {
            return Err(Error::InvalidTerm(name));
        }
    }
    let total = w.lambda_s1 * terms.smooth1
        + w.lambda_s2 * terms.smooth2
        + w.lambda_c * terms.census
        + w.lambda_g * terms.gcc
        + w.lambda_m * terms.consistency
        + terms.rendering;
    Ok(LossReport {
        census: terms.census,
        smooth1: terms.smooth1,
        smooth2: terms.smooth2,
        consistency: terms.consistency,
        gcc: terms.gcc,
        rendering: terms.rendering,
        total,
    })
}

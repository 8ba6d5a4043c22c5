//! Residual depth refinement.
//!
//! The refiner sees three channels per pixel built from hybrid depth, flow
//! depth and flow probability. Depths are divided by the median hybrid depth
//! `m`, and the flow depth enters as its offset from the hybrid depth, so
//! the network works on scale-free, centered inputs:
//!
//! ```text
//! x         = [d_hyb / m - 1, (d_flow - d_hyb) / m, m_flow]
//! delta     = m * conv2(relu(conv1(x)))
//! d_refined = d_hyb + delta
//! ```
//!
//! Both convolutions are 3x3 with zero padding of one pixel, so the output
//! has the input's size. Pixels with invalid flow depth enter with a zero
//! flow offset and probability 0.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{ensure_same_dims, DepthMap, ProbabilityMap, Raster};

/// Input channels of the first convolution.
pub const INPUT_CHANNELS: usize = 3;
const TAPS: usize = 9;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Default hidden width.
pub const DEFAULT_HIDDEN_CHANNELS: usize = 8;

/// Two-layer 3x3 convolutional residual predictor.
///
/// Weight layouts are `conv1[h][c][ky][kx]` and `conv2[h][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRefiner {
    hidden: usize,
    conv1_weights: Vec<f64>,
    conv1_bias: Vec<f64>,
    conv2_weights: Vec<f64>,
    conv2_bias: f64,
}

impl ResidualRefiner {
    /// All-zero parameters; the refiner is then the identity on hybrid depth.
    pub fn zeros(hidden: usize) -> Self {
        ResidualRefiner {
            hidden,
            conv1_weights: vec![0.0; hidden * INPUT_CHANNELS * TAPS],
            conv1_bias: vec![0.0; hidden],
            conv2_weights: vec![0.0; hidden * TAPS],
            conv2_bias: 0.0,
        }
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(9 C_in), 1/sqrt(9 C_in))`
    /// per layer, drawn from `seed`.
    pub fn seeded(hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / ((TAPS * INPUT_CHANNELS) as f64).sqrt();
        let b2 = 1.0 / ((TAPS * hidden) as f64).sqrt();
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let conv1_weights = draw(hidden * INPUT_CHANNELS * TAPS, b1);
        let conv1_bias = draw(hidden, b1);
        let conv2_weights = draw(hidden * TAPS, b2);
        let conv2_bias = draw(1, b2)[0];
        ResidualRefiner {
            hidden,
            conv1_weights,
            conv1_bias,
            conv2_weights,
            conv2_bias,
        }
    }

    /// [`ResidualRefiner::seeded`] with the second layer zeroed, so the
    /// refiner starts as the identity on hybrid depth while the first layer
    /// keeps its random features.
    pub fn seeded_identity(hidden: usize, seed: u64) -> Self {
        let mut r = Self::seeded(hidden, seed);
        r.conv2_weights.iter_mut().for_each(|w| *w = 0.0);
        r.conv2_bias = 0.0;
        r
    }

    /// Rebuilds a refiner from [`ResidualRefiner::parameters`] order.
    pub fn from_parameters(hidden: usize, params: &[f64]) -> Result<Self> {
        let expected = Self::parameter_count(hidden);
        if hidden == 0 || params.len() != expected {
            return Err(Error::InvalidModel(format!(
                "hidden width {hidden} needs {expected} parameters, got {}",
                params.len()
            )));
        }
        let n1 = hidden * INPUT_CHANNELS * TAPS;
        let (w1, rest) = params.split_at(n1);
        let (b1, rest) = rest.split_at(hidden);
        let (w2, b2) = rest.split_at(hidden * TAPS);
        Ok(ResidualRefiner {
            hidden,
            conv1_weights: w1.to_vec(),
            conv1_bias: b1.to_vec(),
            conv2_weights: w2.to_vec(),
            conv2_bias: b2[0],
        })
    }

    pub fn parameter_count(hidden: usize) -> usize {
        hidden * INPUT_CHANNELS * TAPS + hidden + hidden * TAPS + 1
    }

    /// Flat parameter vector: conv1 weights, conv1 bias, conv2 weights,
    /// conv2 bias.
    pub fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(Self::parameter_count(self.hidden));
        p.extend_from_slice(&self.conv1_weights);
        p.extend_from_slice(&self.conv1_bias);
        p.extend_from_slice(&self.conv2_weights);
        p.push(self.conv2_bias);
        p
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.conv1_weights
            .iter_mut()
            .chain(self.conv1_bias.iter_mut())
            .chain(self.conv2_weights.iter_mut())
            .chain(std::iter::once(&mut self.conv2_bias))
    }

    pub fn hidden_channels(&self) -> usize {
        self.hidden
    }

    pub fn conv1_weights(&self) -> &[f64] {
        &self.conv1_weights
    }

    pub fn conv1_bias(&self) -> &[f64] {
        &self.conv1_bias
    }

    pub fn conv1_bias_mut(&mut self) -> &mut [f64] {
        &mut self.conv1_bias
    }

    pub fn conv2_weights(&self) -> &[f64] {
        &self.conv2_weights
    }

    pub fn conv2_bias(&self) -> f64 {
        self.conv2_bias
    }

    pub fn set_conv2_bias(&mut self, bias: f64) {
        self.conv2_bias = bias;
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidModel("hidden width must be >= 1".into()));
        }
        if let Some(i) = self.parameters().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("parameter {i} is not finite")));
        }
        Ok(())
    }
}

/// The three rasters the refiner consumes.
#[derive(Debug, Clone, Copy)]
pub struct RefinerInputs<'a> {
    pub d_hyb: &'a DepthMap,
    pub d_flow: &'a DepthMap,
    pub m_flow: &'a ProbabilityMap,
}

impl RefinerInputs<'_> {
    fn check(&self) -> Result<()> {
        ensure_same_dims("flow depth", self.d_hyb.dims(), self.d_flow.dims())?;
        ensure_same_dims("flow probability", self.d_hyb.dims(), self.m_flow.dims())?;
        Ok(())
    }
}

/// Normalized refiner input plus the scale used to normalize it.
struct Normalized {
    width: usize,
    height: usize,
    scale: f64,
    /// Planar `[c][y][x]`.
    planes: Vec<f64>,
}

fn normalize_inputs(inputs: &RefinerInputs<'_>) -> Result<Normalized> {
    inputs.check()?;
    let scale = inputs
        .d_hyb
        .median_valid()
        .ok_or(Error::EmptyInput("hybrid depth has no valid pixel"))?;
    let (w, h) = inputs.d_hyb.dims();
    let n = w * h;
    let mut planes = vec![0.0; INPUT_CHANNELS * n];
    for i in 0..n {
        let (x, y) = (i % w, i / w);
        if !inputs.d_hyb.is_valid(x, y) {
            continue;
        }
        let hyb = inputs.d_hyb.at(x, y);
        planes[i] = hyb / scale - 1.0;
        if inputs.d_flow.is_valid(x, y) {
            planes[n + i] = (inputs.d_flow.at(x, y) - hyb) / scale;
            planes[2 * n + i] = inputs.m_flow.at(x, y);
        }
    }
    Ok(Normalized {
        width: w,
        height: h,
        scale,
        planes,
    })
}

/// Forward activations kept for the backward pass.
struct Forward {
    /// Planar `[h][y][x]` pre-activations of the first layer.
    pre: Vec<f64>,
    /// Network output before rescaling, `[y][x]`.
    out: Vec<f64>,
}

/// 3x3 zero-padded convolution of `input` (planar, `c_in` planes) into
/// `c_out` planes. `weights` is `[o][c][ky][kx]`.
fn conv3x3(
    input: &[f64],
    c_in: usize,
    w: usize,
    h: usize,
    weights: &[f64],
    bias: &[f64],
    output: &mut [f64],
) {
    let n = w * h;
    for (o, b) in bias.iter().enumerate() {
        let plane = &mut output[o * n..(o + 1) * n];
        plane.fill(*b);
        for c in 0..c_in {
            let src = &input[c * n..(c + 1) * n];
            let kern = &weights[(o * c_in + c) * TAPS..(o * c_in + c + 1) * TAPS];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = x + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            acc += kern[ky * 3 + kx] * src[(sy - 1) * w + (sx - 1)];
                        }
                    }
                    plane[y * w + x] += acc;
                }
            }
        }
    }
}

/// Adjoint of [`conv3x3`]: accumulates the input gradient and the weight
/// gradient from the output gradient `g_out` (planar `c_out` planes).
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    input: &[f64],
    c_in: usize,
    w: usize,
    h: usize,
    weights: &[f64],
    g_out: &[f64],
    c_out: usize,
    g_weights: &mut [f64],
    g_bias: &mut [f64],
    mut g_input: Option<&mut [f64]>,
) {
    let n = w * h;
    for o in 0..c_out {
        let go = &g_out[o * n..(o + 1) * n];
        g_bias[o] += go.iter().sum::<f64>();
        for c in 0..c_in {
            let src = &input[c * n..(c + 1) * n];
            let base = (o * c_in + c) * TAPS;
            for y in 0..h {
                for x in 0..w {
                    let g = go[y * w + x];
                    if g == 0.0 {
                        continue;
                    }
                    for ky in 0..3 {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        for kx in 0..3 {
                            let sx = x + kx;
                            if sx < 1 || sx > w {
                                continue;
                            }
                            let si = (sy - 1) * w + (sx - 1);
                            g_weights[base + ky * 3 + kx] += g * src[si];
                            if let Some(gi) = g_input.as_deref_mut() {
                                gi[c * n + si] += g * weights[base + ky * 3 + kx];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward(refiner: &ResidualRefiner, x: &Normalized) -> Forward {
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let mut pre = vec![0.0; refiner.hidden * n];
    conv3x3(
        &x.planes,
        INPUT_CHANNELS,
        w,
        h,
        &refiner.conv1_weights,
        &refiner.conv1_bias,
        &mut pre,
    );
    let act: Vec<f64> = pre.iter().map(|v| v.max(0.0)).collect();
    let mut out = vec![0.0; n];
    conv3x3(
        &act,
        refiner.hidden,
        w,
        h,
        &refiner.conv2_weights,
        &[refiner.conv2_bias],
        &mut out,
    );
    Forward { pre, out }
}

fn assemble(d_hyb: &DepthMap, scale: f64, out: &[f64]) -> DepthMap {
    let (w, h) = d_hyb.dims();
    let values = Raster::from_fn(w, h, 1, |x, y, _| {
        if d_hyb.is_valid(x, y) {
            d_hyb.at(x, y) + scale * out[y * w + x]
        } else {
            0.0
        }
    });
    DepthMap::from_parts_unchecked(values, d_hyb.validity().to_vec())
}

/// Refined depth `d_hyb + delta`. Output validity equals hybrid validity.
pub fn refine_depth(refiner: &ResidualRefiner, inputs: RefinerInputs<'_>) -> Result<DepthMap> {
    refiner.validate()?;
    let x = normalize_inputs(&inputs)?;
    let fwd = forward(refiner, &x);
    Ok(assemble(inputs.d_hyb, x.scale, &fwd.out))
}

/// Gradient of a scalar loss with respect to every refiner parameter, in
/// [`ResidualRefiner::parameters`] order, given `loss_grad` = dL/d(refined
/// depth) per pixel (row-major). Invalid hybrid pixels must carry zero
/// gradient.
pub fn refiner_gradients(
    refiner: &ResidualRefiner,
    inputs: RefinerInputs<'_>,
    loss_grad: &[f64],
) -> Result<Vec<f64>> {
    refiner.validate()?;
    let x = normalize_inputs(&inputs)?;
    if loss_grad.len() != x.width * x.height {
        return Err(Error::ShapeMismatch {
            what: "loss gradient",
            expected: (x.width, x.height),
            found: (loss_grad.len(), 1),
        });
    }
    let fwd = forward(refiner, &x);
    Ok(backward(refiner, &x, &fwd, loss_grad))
}

fn backward(refiner: &ResidualRefiner, x: &Normalized, fwd: &Forward, loss_grad: &[f64]) -> Vec<f64> {
    let (w, h) = (x.width, x.height);
    let n = w * h;
    let hidden = refiner.hidden;
    let g_out: Vec<f64> = loss_grad.iter().map(|g| g * x.scale).collect();

    let act: Vec<f64> = fwd.pre.iter().map(|v| v.max(0.0)).collect();
    let mut g_w2 = vec![0.0; hidden * TAPS];
    let mut g_b2 = [0.0];
    let mut g_act = vec![0.0; hidden * n];
    conv3x3_backward(
        &act,
        hidden,
        w,
        h,
        &refiner.conv2_weights,
        &g_out,
        1,
        &mut g_w2,
        &mut g_b2,
        Some(&mut g_act),
    );
    for (g, &p) in g_act.iter_mut().zip(&fwd.pre) {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    let mut g_w1 = vec![0.0; hidden * INPUT_CHANNELS * TAPS];
    let mut g_b1 = vec![0.0; hidden];
    conv3x3_backward(
        &x.planes,
        INPUT_CHANNELS,
        w,
        h,
        &refiner.conv1_weights,
        &g_act,
        hidden,
        &mut g_w1,
        &mut g_b1,
        None,
    );

    let mut grads = g_w1;
    grads.extend_from_slice(&g_b1);
    grads.extend_from_slice(&g_w2);
    grads.push(g_b2[0]);
    grads
}

#[derive(Debug, Clone)]
struct AdamState {
    m1: Vec<f64>,
    m2: Vec<f64>,
    t: i32,
}

impl AdamState {
    fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut f64>, grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m1).zip(&mut self.m2) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        }
    }
}

/// One training example for [`fit_refiner`].
#[derive(Debug, Clone)]
pub struct FittingSample {
    pub d_hyb: DepthMap,
    pub d_flow: DepthMap,
    pub m_flow: ProbabilityMap,
    pub d_gt: DepthMap,
}

impl FittingSample {
    pub fn inputs(&self) -> RefinerInputs<'_> {
        RefinerInputs {
            d_hyb: &self.d_hyb,
            d_flow: &self.d_flow,
            m_flow: &self.m_flow,
        }
    }

    /// Pixels valid in both the hybrid and ground-truth depth.
    fn supervised(&self, x: usize, y: usize) -> bool {
        self.d_hyb.is_valid(x, y) && self.d_gt.is_valid(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub hidden_channels: usize,
    /// Seeds the initial parameters in [`fit_refiner`].
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            learning_rate: 0.005,
            hidden_channels: DEFAULT_HIDDEN_CHANNELS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub refiner: ResidualRefiner,
    /// Mean squared depth error before each step, then once more after the
    /// last step (`steps + 1` entries).
    pub losses: Vec<f64>,
}

/// Fits a refiner starting from [`ResidualRefiner::seeded_identity`]; see
/// [`fit_refiner_from`].
pub fn fit_refiner(dataset: &[FittingSample], cfg: &FitConfig) -> Result<FitResult> {
    let init = ResidualRefiner::seeded_identity(cfg.hidden_channels, cfg.seed);
    fit_refiner_from(init, dataset, cfg)
}

/// Full-batch gradient descent with Adam step sizes (beta1 0.9, beta2
/// 0.999) on the mean squared error between refined and ground-truth depth
/// over every supervised pixel of `dataset`. An update that raises the loss
/// is undone and retried with half the step size (the step size then grows
/// back by 10% per accepted update), so the recorded loss trace never
/// increases. Single-threaded with a fixed summation order, so identical inputs give
/// bitwise-identical parameter trajectories.
pub fn fit_refiner_from(
    mut refiner: ResidualRefiner,
    dataset: &[FittingSample],
    cfg: &FitConfig,
) -> Result<FitResult> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("steps must be >= 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("fitting dataset is empty"));
    }
    refiner.validate()?;
    let normalized = dataset
        .iter()
        .map(|s| {
            ensure_same_dims("ground-truth depth", s.d_hyb.dims(), s.d_gt.dims())?;
            normalize_inputs(&s.inputs())
        })
        .collect::<Result<Vec<_>>>()?;
    let count: usize = dataset
        .iter()
        .map(|s| {
            (0..s.d_hyb.height())
                .flat_map(|y| (0..s.d_hyb.width()).map(move |x| (x, y)))
                .filter(|&(x, y)| s.supervised(x, y))
                .count()
        })
        .sum();
    if count == 0 {
        return Err(Error::EmptyMask("refiner fitting"));
    }
    let inv_count = 1.0 / count as f64;

    let n_params = ResidualRefiner::parameter_count(refiner.hidden);
    let mut adam = AdamState {
        m1: vec![0.0; n_params],
        m2: vec![0.0; n_params],
        t: 0,
    };
    let mut learning_rate = cfg.learning_rate;
    // State before the last update, restored when that update raised the loss.
    let mut previous: Option<(ResidualRefiner, AdamState, Vec<f64>, f64)> = None;
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let mut loss = 0.0;
        let mut upstream = Vec::with_capacity(dataset.len());
        for (sample, x) in dataset.iter().zip(&normalized) {
            let fwd = forward(&refiner, x);
            let (w, h) = sample.d_hyb.dims();
            let mut g = vec![0.0; w * h];
            for y in 0..h {
                for xx in 0..w {
                    if !sample.supervised(xx, y) {
                        continue;
                    }
                    let i = y * w + xx;
                    let refined = sample.d_hyb.at(xx, y) + x.scale * fwd.out[i];
                    let err = refined - sample.d_gt.at(xx, y);
                    loss += err * err * inv_count;
                    g[i] = 2.0 * err * inv_count;
                }
            }
            upstream.push((fwd, g));
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }

        let grads = match previous.take() {
            Some((p_refiner, p_adam, p_grads, p_loss)) if loss > p_loss => {
                refiner = p_refiner;
                adam = p_adam;
                learning_rate *= 0.5;
                loss = p_loss;
                p_grads
            }
            _ => {
                learning_rate = (learning_rate * 1.1).min(cfg.learning_rate);
                let mut grads = vec![0.0; n_params];
                if step < cfg.steps {
                    for (x, (fwd, g)) in normalized.iter().zip(&upstream) {
                        for (acc, v) in grads.iter_mut().zip(backward(&refiner, x, fwd, g)) {
                            *acc += v;
                        }
                    }
                }
                grads
            }
        };
        losses.push(loss);
        if step == cfg.steps {
            break;
        }
        previous = Some((refiner.clone(), adam.clone(), grads.clone(), loss));
        adam.step(refiner.parameters_mut(), &grads, learning_rate);
    }
    Ok(FitResult { refiner, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_inputs(w: usize, h: usize, seed: u64) -> (DepthMap, DepthMap, ProbabilityMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hyb: Vec<f64> = (0..w * h).map(|_| rng.random_range(1.0..3.0)).collect();
        let flow: Vec<f64> = (0..w * h)
            .map(|_| if rng.random_bool(0.8) { rng.random_range(1.0..3.0) } else { 0.0 })
            .collect();
        let m: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        (
            DepthMap::from_values(w, h, hyb).unwrap(),
            DepthMap::from_values(w, h, flow).unwrap(),
            ProbabilityMap::new(Raster::from_vec(w, h, 1, m).unwrap()).unwrap(),
        )
    }

    #[test]
    fn zero_refiner_is_identity() {
        let (d, f, m) = random_inputs(6, 5, 1);
        let out = refine_depth(&ResidualRefiner::zeros(4), RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn constant_bias_network() {
        let (d, f, m) = random_inputs(5, 5, 2);
        let mut r = ResidualRefiner::zeros(3);
        r.set_conv2_bias(0.25);
        let scale = d.median_valid().unwrap();
        let out = refine_depth(&r, RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }).unwrap();
        for (o, h) in out.values().iter().zip(d.values()) {
            assert!((o - (h + 0.25 * scale)).abs() < 1e-12);
        }
    }

    #[test]
    fn output_keeps_size_for_small_rasters() {
        let (d, f, m) = random_inputs(3, 3, 3);
        let out = refine_depth(&ResidualRefiner::seeded(2, 1), RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }).unwrap();
        assert_eq!(out.dims(), (3, 3));
    }

    #[test]
    fn non_finite_model_is_rejected() {
        let (d, f, m) = random_inputs(4, 4, 3);
        let mut r = ResidualRefiner::zeros(2);
        r.set_conv2_bias(f64::NAN);
        assert!(matches!(
            refine_depth(&r, RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient() {
        let (d, f, m) = random_inputs(6, 6, 4);
        let g = refiner_gradients(&ResidualRefiner::seeded(4, 9), RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }, &[0.0; 36]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dead_units_have_zero_conv1_gradient() {
        let (d, f, m) = random_inputs(6, 6, 5);
        let mut r = ResidualRefiner::seeded(3, 2);
        r.conv1_bias_mut()[1] = -1e3;
        let grad = vec![1.0; 36];
        let g = refiner_gradients(&r, RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }, &grad).unwrap();
        let unit = &g[INPUT_CHANNELS * TAPS..2 * INPUT_CHANNELS * TAPS];
        assert!(unit.iter().all(|&v| v == 0.0));
        assert_eq!(g[3 * INPUT_CHANNELS * TAPS + 1], 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..3 {
            let (d, f, m) = random_inputs(8, 8, 10 + seed);
            let inputs = RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m };
            let refiner = ResidualRefiner::seeded(4, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
            // L = sum_i w_i * refined_i, so dL/d(refined) = w.
            let loss = |r: &ResidualRefiner| -> f64 {
                let out = refine_depth(r, inputs).unwrap();
                out.values().iter().zip(&weights).map(|(a, b)| a * b).sum()
            };
            let analytic = refiner_gradients(&refiner, inputs, &weights).unwrap();
            let params = refiner.parameters();
            let h = 1e-4;
            for i in 0..params.len() {
                let mut p = params.clone();
                p[i] += h;
                let up = loss(&ResidualRefiner::from_parameters(4, &p).unwrap());
                p[i] -= 2.0 * h;
                let down = loss(&ResidualRefiner::from_parameters(4, &p).unwrap());
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[i];
                if a.abs().max(numeric.abs()) < 1e-8 {
                    assert!((a - numeric).abs() < 1e-8);
                } else {
                    let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                    assert!(rel < 1e-4, "param {i}: analytic {a} numeric {numeric}");
                }
            }
        }
    }

    fn offset_dataset(offset: f64) -> Vec<FittingSample> {
        (0..2)
            .map(|s| {
                let (d, f, m) = random_inputs(8, 8, 40 + s);
                let gt = DepthMap::from_values(8, 8, d.values().iter().map(|v| v + offset).collect()).unwrap();
                FittingSample { d_hyb: d, d_flow: f, m_flow: m, d_gt: gt }
            })
            .collect()
    }

    #[test]
    fn already_optimal_dataset_stays_at_zero() {
        let data = offset_dataset(0.0);
        let cfg = FitConfig { steps: 20, ..Default::default() };
        let fit = fit_refiner_from(ResidualRefiner::zeros(4), &data, &cfg).unwrap();
        assert!(fit.losses.iter().all(|&l| l == 0.0));
        assert_eq!(fit.refiner, ResidualRefiner::zeros(4));
    }

    #[test]
    fn learns_constant_offset() {
        let data = offset_dataset(1.0);
        let cfg = FitConfig { hidden_channels: 4, seed: 3, ..Default::default() };
        let fit = fit_refiner(&data, &cfg).unwrap();
        let mut err = 0.0;
        let mut n = 0.0;
        for s in &data {
            let out = refine_depth(&fit.refiner, s.inputs()).unwrap();
            for (o, g) in out.values().iter().zip(s.d_gt.values()) {
                err += (o - g).abs();
                n += 1.0;
            }
        }
        assert!(err / n < 0.05, "mean error {}", err / n);
    }

    #[test]
    fn fitting_is_deterministic() {
        let data = offset_dataset(0.5);
        let cfg = FitConfig { steps: 30, hidden_channels: 3, seed: 5, ..Default::default() };
        let a = fit_refiner(&data, &cfg).unwrap();
        let b = fit_refiner(&data, &cfg).unwrap();
        assert_eq!(a.refiner.parameters(), b.refiner.parameters());
        assert_eq!(a.losses, b.losses);
    }

    #[test]
    fn divergence_is_reported() {
        let data = offset_dataset(1.0);
        let cfg = FitConfig { steps: 500, learning_rate: 1e300, hidden_channels: 3, seed: 1 };
        assert!(matches!(fit_refiner(&data, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn translation_equivariance() {
        // A circular roll keeps the median (and so the normalization) fixed;
        // away from the seam and the zero-padded border the output must roll
        // with the input.
        let (w, h, ox, oy) = (12usize, 10usize, 2usize, 1usize);
        let (d, f, m) = random_inputs(w, h, 8);
        let roll = |x: usize, y: usize| ((x + w - ox) % w, (y + h - oy) % h);
        let roll_depth = |src: &DepthMap| {
            DepthMap::from_values(w, h, (0..w * h).map(|i| {
                let (sx, sy) = roll(i % w, i / w);
                src.at(sx, sy)
            }).collect()).unwrap()
        };
        let (dr, fr) = (roll_depth(&d), roll_depth(&f));
        let mr = ProbabilityMap::new(Raster::from_fn(w, h, 1, |x, y, _| {
            let (sx, sy) = roll(x, y);
            m.at(sx, sy)
        })).unwrap();
        let r = ResidualRefiner::seeded(3, 4);
        let a = refine_depth(&r, RefinerInputs { d_hyb: &d, d_flow: &f, m_flow: &m }).unwrap();
        let b = refine_depth(&r, RefinerInputs { d_hyb: &dr, d_flow: &fr, m_flow: &mr }).unwrap();
        for y in oy + 2..h - 2 {
            for x in ox + 2..w - 2 {
                assert_eq!(b.at(x, y), a.at(x - ox, y - oy));
            }
        }
    }
}

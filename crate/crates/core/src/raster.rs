//! Dense rasters and bilinear sampling.
//!
//! Every raster is row-major with the origin at the top-left corner, `x`
//! growing rightward and `y` growing downward. Integer coordinates land on
//! pixel centers, so pixel `(x, y)` is sampled exactly at `(x as f64, y as f64)`.

use crate::error::{Error, Result};

/// A row-major `height x width x channels` grid of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    /// Creates a raster filled with `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Raster {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    /// Wraps an existing buffer. The buffer length must equal
    /// `width * height * channels` and every dimension must be non-zero.
    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidRaster(format!(
                "dimensions must be non-zero, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidRaster(format!(
                "buffer holds {} values, {width}x{height}x{channels} needs {}",
                data.len(),
                width * height * channels
            )));
        }
        Ok(Raster {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a raster by evaluating `f(x, y, c)` in row-major order.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Raster {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[self.offset(x, y) + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f64) {
        let i = self.offset(x, y) + c;
        self.data[i] = value;
    }

    /// All channels of pixel `(x, y)`.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = self.offset(x, y);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = self.offset(x, y);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// True when `(x, y)` lies inside `[0, W-1] x [0, H-1]`, i.e. all four
    /// bilinear neighbors exist.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Bilinearly samples all channels at `(x, y)` into `out`.
    ///
    /// Returns `false` (and fills `out` with zeros) when the sample needs a
    /// neighbor outside the raster. Samples on the last row or column are
    /// exact node values.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.channels);
        match self.bilinear_cell(x, y) {
            Some(cell) => {
                let p00 = self.pixel(cell.x0, cell.y0);
                let p10 = self.pixel(cell.x1, cell.y0);
                let p01 = self.pixel(cell.x0, cell.y1);
                let p11 = self.pixel(cell.x1, cell.y1);
                let (ax, ay) = (1.0 - cell.fx, 1.0 - cell.fy);
                for c in 0..self.channels {
                    let top = ax * p00[c] + cell.fx * p10[c];
                    let bottom = ax * p01[c] + cell.fx * p11[c];
                    out[c] = ay * top + cell.fy * bottom;
                }
                true
            }
            None => {
                out.fill(0.0);
                false
            }
        }
    }

    /// Convenience wrapper around [`Raster::sample_into`].
    pub fn sample(&self, x: f64, y: f64) -> Sample {
        let mut value = vec![0.0; self.channels];
        let in_bounds = self.sample_into(x, y, &mut value);
        Sample { value, in_bounds }
    }

    /// Locates the interpolation cell of `(x, y)`.
    pub(crate) fn bilinear_cell(&self, x: f64, y: f64) -> Option<BilinearCell> {
        if !self.contains(x, y) {
            return None;
        }
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        Some(BilinearCell {
            x0,
            y0,
            x1: (x0 + 1).min(self.width - 1),
            y1: (y0 + 1).min(self.height - 1),
            fx: x - x0 as f64,
            fy: y - y0 as f64,
        })
    }
}

/// Four-neighbor interpolation cell; `fx`/`fy` are the weights of the
/// `x1`/`y1` neighbors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearCell {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub fx: f64,
    pub fy: f64,
}

/// Result of a bilinear lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub value: Vec<f64>,
    pub in_bounds: bool,
}

/// Types backed by a [`Raster`].
pub trait AsRaster {
    fn raster(&self) -> &Raster;
}

impl AsRaster for Raster {
    fn raster(&self) -> &Raster {
        self
    }
}

/// Bilinear sample of any raster-backed value at continuous pixel
/// coordinates `(x, y)`.
pub fn bilinear_sample<R: AsRaster + ?Sized>(raster: &R, x: f64, y: f64) -> Sample {
    raster.raster().sample(x, y)
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidRaster(format!(
            "{what} has a non-finite entry at index {i}"
        ))),
        None => Ok(()),
    }
}

fn expect_channels(raster: &Raster, channels: usize, what: &str) -> Result<()> {
    if raster.channels != channels {
        return Err(Error::InvalidRaster(format!(
            "{what} needs {channels} channel(s), got {}",
            raster.channels
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(
    what: &'static str,
    expected: (usize, usize),
    found: (usize, usize),
) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}

macro_rules! raster_newtype {
    ($name:ident) => {
        impl AsRaster for $name {
            fn raster(&self) -> &Raster {
                &self.0
            }
        }

        impl $name {
            pub fn width(&self) -> usize {
                self.0.width()
            }

            pub fn height(&self) -> usize {
                self.0.height()
            }

            pub fn dims(&self) -> (usize, usize) {
                self.0.dims()
            }

            pub fn into_raster(self) -> Raster {
                self.0
            }
        }
    };
}

/// `H x W x C` descriptor raster.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Raster);
raster_newtype!(FeatureMap);

impl FeatureMap {
    pub fn new(raster: Raster) -> Result<Self> {
        check_finite(raster.data(), "feature map")?;
        Ok(FeatureMap(raster))
    }

    pub fn channels(&self) -> usize {
        self.0.channels()
    }

    pub fn feature(&self, x: usize, y: usize) -> &[f64] {
        self.0.pixel(x, y)
    }

    pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
        FeatureMap(raster)
    }
}

/// Per-pixel `(dx, dy)` displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Raster);
raster_newtype!(FlowField);

impl FlowField {
    pub fn new(raster: Raster) -> Result<Self> {
        expect_channels(&raster, 2, "flow field")?;
        check_finite(raster.data(), "flow field")?;
        Ok(FlowField(raster))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField(Raster::zeros(width, height, 2))
    }

    /// Constant displacement everywhere.
    pub fn constant(width: usize, height: usize, dx: f64, dy: f64) -> Self {
        FlowField(Raster::from_fn(width, height, 2, |_, _, c| {
            if c == 0 {
                dx
            } else {
                dy
            }
        }))
    }

    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let p = self.0.pixel(x, y);
        (p[0], p[1])
    }

    pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
        FlowField(raster)
    }
}

/// Color image with three channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRaster(Raster);
raster_newtype!(ImageRaster);

impl ImageRaster {
    pub fn new(raster: Raster) -> Result<Self> {
        expect_channels(&raster, 3, "image")?;
        if let Some(i) = raster
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidRaster(format!(
                "image entry {i} = {} is outside [0, 1]",
                raster.data()[i]
            )));
        }
        Ok(ImageRaster(raster))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(width, height, 3, value))
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        self.0.pixel(x, y)
    }

    /// Luminance `0.299 R + 0.587 G + 0.114 B`.
    pub fn luminance(&self) -> Raster {
        let r = &self.0;
        Raster::from_fn(r.width(), r.height(), 1, |x, y, _| {
            let p = r.pixel(x, y);
            LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
        })
    }

    #[cfg(test)]
    pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
        ImageRaster(raster)
    }
}

pub(crate) const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Single-channel raster with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap(Raster);
raster_newtype!(ProbabilityMap);

impl ProbabilityMap {
    pub fn new(raster: Raster) -> Result<Self> {
        expect_channels(&raster, 1, "probability map")?;
        if let Some(i) = raster
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidRaster(format!(
                "probability entry {i} = {} is outside [0, 1]",
                raster.data()[i]
            )));
        }
        Ok(ProbabilityMap(raster))
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(Raster::filled(width, height, 1, value))
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y, 0)
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }

    pub(crate) fn from_raster_unchecked(raster: Raster) -> Self {
        ProbabilityMap(raster)
    }
}

/// `{0, 1}` raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "mask buffer of {} entries does not fit {width}x{height}",
                data.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BinaryMask {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    /// Interprets a single-channel raster holding exactly 0 or 1.
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        expect_channels(raster, 1, "binary mask")?;
        let data = raster
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                v => Err(Error::InvalidRaster(format!(
                    "mask entry {i} = {v} is neither 0 nor 1"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(raster.width(), raster.height(), data)
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.iter().map(|&b| f64::from(u8::from(b))).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel depth in meters with an explicit validity raster.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    values: Raster,
    valid: Vec<bool>,
}

impl AsRaster for DepthMap {
    fn raster(&self) -> &Raster {
        &self.values
    }
}

impl DepthMap {
    /// Every valid entry must be finite and strictly positive. Invalid
    /// entries may hold anything finite.
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        let values = Raster::from_vec(width, height, 1, values)?;
        if valid.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "validity buffer of {} entries does not fit {width}x{height}",
                valid.len()
            )));
        }
        for (i, (&v, &ok)) in values.data().iter().zip(&valid).enumerate() {
            if ok && !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidRaster(format!(
                    "valid depth entry {i} = {v} is not finite and positive"
                )));
            }
        }
        Ok(DepthMap { values, valid })
    }

    /// Builds a depth map where a pixel is valid iff its value is finite and
    /// positive. Invalid entries are stored as 0.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let values = Raster::from_vec(width, height, 1, values)?;
        Ok(Self::from_raster_lenient(values))
    }

    pub(crate) fn from_raster_lenient(mut values: Raster) -> Self {
        let valid: Vec<bool> = values
            .data()
            .iter()
            .map(|v| v.is_finite() && *v > 0.0)
            .collect();
        for (v, ok) in values.data_mut().iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        DepthMap { values, valid }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![depth; width * height],
            vec![true; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.values.width()
    }

    pub fn height(&self) -> usize {
        self.values.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values.get(x, y, 0)
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.values.width() + x]
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    pub fn validity_mask(&self) -> BinaryMask {
        BinaryMask {
            width: self.width(),
            height: self.height(),
            data: self.valid.clone(),
        }
    }

    /// Depth values with invalid pixels set to 0.
    pub fn to_raster(&self) -> Raster {
        let mut r = self.values.clone();
        for (v, &ok) in r.data_mut().iter_mut().zip(&self.valid) {
            if !ok {
                *v = 0.0;
            }
        }
        r
    }

    /// Median of the valid depths, `None` when nothing is valid.
    pub fn median_valid(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .values
            .data()
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&d, _)| d)
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        })
    }

    pub(crate) fn from_parts_unchecked(values: Raster, valid: Vec<bool>) -> Self {
        DepthMap { values, valid }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(width: usize, height: usize, a: f64, b: f64, c: f64) -> Raster {
        Raster::from_fn(width, height, 1, |x, y, _| a * x as f64 + b * y as f64 + c)
    }

    #[test]
    fn sample_on_node_is_exact() {
        let r = Raster::from_fn(4, 3, 2, |x, y, c| (x * 10 + y * 100 + c) as f64 + 0.25);
        for y in 0..3 {
            for x in 0..4 {
                let s = r.sample(x as f64, y as f64);
                assert!(s.in_bounds);
                assert_eq!(s.value, r.pixel(x, y));
            }
        }
    }

    #[test]
    fn sample_midpoint_is_average() {
        let r = Raster::from_vec(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let s = r.sample(0.5, 0.0);
        assert!(s.in_bounds);
        assert_eq!(s.value, vec![0.5]);
    }

    #[test]
    fn sample_outside_is_flagged() {
        let r = Raster::zeros(5, 5, 1);
        assert!(!r.sample(-0.5, 0.0).in_bounds);
        assert!(!r.sample(0.0, 4.0001).in_bounds);
        assert!(!r.sample(f64::NAN, 1.0).in_bounds);
        assert!(r.sample(4.0, 4.0).in_bounds);
    }

    #[test]
    fn sample_is_exact_on_affine_rasters() {
        let r = ramp(7, 5, 0.7, -1.3, 2.0);
        for &(x, y) in &[(0.3, 0.9), (5.99, 3.5), (6.0, 4.0), (2.25, 0.0)] {
            let s = r.sample(x, y);
            assert!(s.in_bounds);
            assert!((s.value[0] - (0.7 * x - 1.3 * y + 2.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn depth_map_rejects_bad_valid_entries() {
        assert!(DepthMap::new(2, 1, vec![1.0, -1.0], vec![true, true]).is_err());
        assert!(DepthMap::new(2, 1, vec![1.0, -1.0], vec![true, false]).is_ok());
        let d = DepthMap::from_values(3, 1, vec![1.0, f64::NAN, 0.0]).unwrap();
        assert_eq!(d.validity(), &[true, false, false]);
        assert_eq!(d.values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn median_of_valid_depths() {
        let d = DepthMap::from_values(4, 1, vec![4.0, 1.0, 0.0, 2.0]).unwrap();
        assert_eq!(d.median_valid(), Some(2.0));
        let d = DepthMap::from_values(4, 1, vec![4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(d.median_valid(), Some(2.5));
    }

    #[test]
    fn probability_and_mask_invariants() {
        assert!(ProbabilityMap::filled(2, 2, 1.5).is_err());
        assert!(ImageRaster::constant(2, 2, -0.1).is_err());
        let r = Raster::from_vec(2, 1, 1, vec![0.0, 0.5]).unwrap();
        assert!(BinaryMask::from_raster(&r).is_err());
    }

    proptest::proptest! {
        #[test]
        fn affine_rasters_interpolate_exactly(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64,
            x in 0.0..9.0f64, y in 0.0..6.0f64,
        ) {
            let r = ramp(10, 7, a, b, c);
            let s = r.sample(x, y);
            proptest::prop_assert!(s.in_bounds);
            proptest::prop_assert!((s.value[0] - (a * x + b * y + c)).abs() < 1e-9);
        }
    }
}

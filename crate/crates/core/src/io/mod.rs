//! File formats: PFM float rasters, PPM images, camera text files, the
//! refiner parameter stream, key=value reports and point lists.
//!
//! Typed rasters map onto PFM as follows:
//!
//! | raster | PFM layout |
//! |---|---|
//! | depth | `Pf`, invalid pixels stored as 0 |
//! | mask / probability | `Pf`, values 0/1 or in `[0, 1]` |
//! | flow | `PF`, channels `(dx, dy, 0)` |
//! | features (`C` channels) | `Pf` of height `C * H`, channel planes stacked top to bottom |

mod camera;
mod header;
mod kv;
mod pfm;
mod ppm;
mod refiner;

pub use camera::{format_camera, parse_camera, read_camera, write_camera};
pub use kv::{format_kv, format_value, KvValue};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ppm::{decode_ppm, encode_ppm, quantize, read_ppm, write_ppm};
pub use refiner::{decode_refiner, encode_refiner, read_refiner, write_refiner};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::raster::{AsRaster, BinaryMask, DepthMap, FeatureMap, FlowField, ProbabilityMap, Raster};

fn expect_single(r: &Raster, what: &str) -> Result<()> {
    if r.channels() != 1 {
        return Err(Error::InvalidRaster(format!("{what} file must be single-channel (Pf)")));
    }
    Ok(())
}

pub fn write_depth(path: impl AsRef<Path>, d: &DepthMap) -> Result<()> {
    write_pfm(path, &d.to_raster())
}

/// Pixels are valid iff finite and positive.
pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    let r = read_pfm(path)?;
    expect_single(&r, "depth")?;
    let (w, h) = r.dims();
    DepthMap::from_values(w, h, r.into_vec())
}

pub fn write_mask(path: impl AsRef<Path>, m: &BinaryMask) -> Result<()> {
    write_pfm(path, &m.to_raster())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let r = read_pfm(path)?;
    expect_single(&r, "mask")?;
    BinaryMask::from_raster(&r)
}

pub fn write_probability(path: impl AsRef<Path>, p: &ProbabilityMap) -> Result<()> {
    write_pfm(path, p.raster())
}

pub fn read_probability(path: impl AsRef<Path>) -> Result<ProbabilityMap> {
    let r = read_pfm(path)?;
    expect_single(&r, "probability")?;
    ProbabilityMap::new(r)
}

pub fn flow_to_raster(f: &FlowField) -> Raster {
    let r = f.raster();
    Raster::from_fn(r.width(), r.height(), 3, |x, y, c| if c < 2 { r.get(x, y, c) } else { 0.0 })
}

pub fn write_flow(path: impl AsRef<Path>, f: &FlowField) -> Result<()> {
    write_pfm(path, &flow_to_raster(f))
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let r = read_pfm(path)?;
    if r.channels() != 3 {
        return Err(Error::InvalidRaster("flow file must be three-channel (PF)".into()));
    }
    FlowField::new(Raster::from_fn(r.width(), r.height(), 2, |x, y, c| r.get(x, y, c)))
}

/// Stacks the channel planes of `f` vertically into one single-channel
/// raster of height `C * H`.
pub fn stack_features(f: &FeatureMap) -> Raster {
    let (w, h, c) = (f.width(), f.height(), f.channels());
    Raster::from_fn(w, h * c, 1, |x, y, _| f.feature(x, y % h)[y / h])
}

/// Inverse of [`stack_features`] for rasters of height `height`.
pub fn unstack_features(stacked: &Raster, height: usize) -> Result<FeatureMap> {
    expect_single(stacked, "feature")?;
    if height == 0 || !stacked.height().is_multiple_of(height) {
        return Err(Error::ShapeMismatch {
            what: "feature stack height",
            expected: (stacked.width(), height),
            found: stacked.dims(),
        });
    }
    let c = stacked.height() / height;
    FeatureMap::new(Raster::from_fn(stacked.width(), height, c, |x, y, ch| {
        stacked.get(x, ch * height + y, 0)
    }))
}

pub fn write_features(path: impl AsRef<Path>, f: &FeatureMap) -> Result<()> {
    write_pfm(path, &stack_features(f))
}

pub fn read_features(path: impl AsRef<Path>, height: usize) -> Result<FeatureMap> {
    unstack_features(&read_pfm(path)?, height)
}

/// One `x y z` line per point.
pub fn format_points(points: &[Vector3<f64>]) -> String {
    let mut s = String::with_capacity(points.len() * 32);
    for p in points {
        let _ = writeln!(s, "{} {} {}", p.x, p.y, p.z);
    }
    s
}

pub fn parse_points(text: &str) -> Result<Vec<Vector3<f64>>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if !toks.is_empty() {
            let v: Vec<f64> = toks
                .iter()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::format(offset, "point coordinates must be numbers"))?;
            if v.len() != 3 {
                return Err(Error::format(offset, format!("expected 3 coordinates, found {}", v.len())));
            }
            out.push(Vector3::new(v[0], v[1], v[2]));
        }
        offset += line.len();
    }
    Ok(out)
}

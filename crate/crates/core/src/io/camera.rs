//! Camera text files.
//!
//! ```text
//! # fx fy cx cy width height
//! 100 100 31.5 23.5 64 48
//! # [R | t], row-major, maps camera-1 to camera-2 coordinates
//! 1 0 0 -0.1
//! 0 1 0 0
//! 0 0 1 0
//! ```
//!
//! Blank lines and anything after `#` are ignored. Numbers are written in
//! shortest round-trip form, so a write-read cycle is lossless.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform};

pub fn parse_camera(text: &str) -> Result<(CameraIntrinsics, RigidTransform)> {
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::with_capacity(4);
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if !tokens.is_empty() {
            rows.push((offset, tokens));
        }
        offset += line.len();
    }
    if rows.len() != 4 {
        return Err(Error::format(offset, format!("expected 4 data lines, found {}", rows.len())));
    }
    let numbers = |(at, toks): &(usize, Vec<&str>), n: usize| -> Result<Vec<f64>> {
        if toks.len() != n {
            return Err(Error::format(*at, format!("expected {n} numbers, found {}", toks.len())));
        }
        toks.iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::format(*at, format!("not a number: {t:?}")))
            })
            .collect()
    };
    let intr = numbers(&rows[0], 6)?;
    let dim = |v: f64, field: &str| -> Result<usize> {
        if v.fract() == 0.0 && v >= 0.0 && v <= u32::MAX as f64 {
            Ok(v as usize)
        } else {
            Err(Error::validation(field, format!("must be a non-negative integer, got {v}")))
        }
    };
    let k = CameraIntrinsics::new(
        intr[0],
        intr[1],
        intr[2],
        intr[3],
        dim(intr[4], "width")?,
        dim(intr[5], "height")?,
    )?;
    let mut r = Matrix3::zeros();
    let mut t = Vector3::zeros();
    for i in 0..3 {
        let row = numbers(&rows[i + 1], 4)?;
        for j in 0..3 {
            r[(i, j)] = row[j];
        }
        t[i] = row[3];
    }
    Ok((k, RigidTransform::new(r, t)?))
}

pub fn format_camera(k: &CameraIntrinsics, t: &RigidTransform) -> String {
    let mut s = format!(
        "{} {} {} {} {} {}\n",
        k.fx(),
        k.fy(),
        k.cx(),
        k.cy(),
        k.width(),
        k.height()
    );
    let (r, tr) = (t.rotation(), t.translation());
    for i in 0..3 {
        s.push_str(&format!("{} {} {} {}\n", r[(i, 0)], r[(i, 1)], r[(i, 2)], tr[i]));
    }
    s
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<(CameraIntrinsics, RigidTransform)> {
    parse_camera(&std::fs::read_to_string(path)?)
}

pub fn write_camera(path: impl AsRef<Path>, k: &CameraIntrinsics, t: &RigidTransform) -> Result<()> {
    std::fs::write(path, format_camera(k, t))?;
    Ok(())
}

//! Refiner parameter stream: the ASCII line `refiner v1 <hidden>\n`
//! followed by every parameter as a little-endian `f32`, in
//! [`ResidualRefiner::parameters`] order. Round trips are exact for
//! parameters representable in single precision.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::ResidualRefiner;

pub fn encode_refiner(refiner: &ResidualRefiner) -> Result<Vec<u8>> {
    let params = refiner.parameters();
    let mut out = format!("refiner v1 {}\n", refiner.hidden_channels()).into_bytes();
    for v in params {
        if !v.is_finite() {
            return Err(Error::format(out.len(), format!("non-finite parameter {v}")));
        }
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_refiner(bytes: &[u8]) -> Result<ResidualRefiner> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(0, "missing header line"))?;
    let line = std::str::from_utf8(&bytes[..nl]).map_err(|_| Error::format(0, "header is not ASCII"))?;
    let mut parts = line.split(' ');
    if parts.next() != Some("refiner") || parts.next() != Some("v1") {
        return Err(Error::format(0, format!("expected \"refiner v1 <hidden>\", got {line:?}")));
    }
    let hidden = match (parts.next().map(str::parse::<usize>), parts.next()) {
        (Some(Ok(h)), None) if h >= 1 => h,
        _ => return Err(Error::format(11, format!("bad hidden channel count in {line:?}"))),
    };
    let count = ResidualRefiner::parameter_count(hidden);
    let payload = &bytes[nl + 1..];
    if payload.len() != 4 * count {
        return Err(Error::format(
            nl + 1 + payload.len().min(4 * count),
            format!("expected {} parameter bytes, found {}", 4 * count, payload.len()),
        ));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    ResidualRefiner::from_parameters(hidden, &params)
}

pub fn write_refiner(path: impl AsRef<Path>, refiner: &ResidualRefiner) -> Result<()> {
    std::fs::write(path, encode_refiner(refiner)?)?;
    Ok(())
}

pub fn read_refiner(path: impl AsRef<Path>) -> Result<ResidualRefiner> {
    decode_refiner(&std::fs::read(path)?)
}

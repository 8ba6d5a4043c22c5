//! Portable Float Map: `Pf` (1 channel) or `PF` (3 channels), a text
//! header `type\nwidth height\nscale\n` and raw 32-bit floats with rows
//! stored bottom to top. A negative scale marks little-endian data. Files
//! are always written little-endian with scale `-1.0`; both byte orders are
//! read. Values are stored as `f32`, so round trips are exact for values
//! representable in single precision.

use std::path::Path;

use super::header::HeaderReader;
use crate::error::{Error, Result};
use crate::raster::Raster;

pub fn encode_pfm(raster: &Raster) -> Result<Vec<u8>> {
    let tag = match raster.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::InvalidRaster(format!(
                "PFM stores 1 or 3 channels, got {c}"
            )))
        }
    };
    let (w, h) = raster.dims();
    let header = format!("{tag}\n{w} {h}\n-1.0\n");
    let mut out = Vec::with_capacity(header.len() + 4 * raster.data().len());
    out.extend_from_slice(header.as_bytes());
    let row_len = w * raster.channels();
    for y in (0..h).rev() {
        for &v in &raster.data()[y * row_len..(y + 1) * row_len] {
            if !v.is_finite() {
                return Err(Error::format(out.len(), format!("non-finite value {v}")));
            }
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster> {
    let mut hdr = HeaderReader::new(bytes, false);
    let (_, tag) = hdr.token("PFM type")?;
    let channels = match tag {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::format(0, format!("expected Pf or PF, got {other:?}"))),
    };
    let w = hdr.dimension("width")?;
    let h = hdr.dimension("height")?;
    let (at, tok) = hdr.token("scale")?;
    let scale: f64 = tok
        .parse()
        .map_err(|_| Error::format(at, format!("scale is not a number: {tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(at, "scale must be finite and non-zero"));
    }
    let little = scale < 0.0;
    let start = hdr.end_of_header()?;
    let row_len = w * channels;
    let need = row_len
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(at, "dimensions overflow"))?;
    let payload = &bytes[start..];
    if payload.len() < need {
        return Err(Error::format(
            bytes.len(),
            format!("truncated payload: expected {need} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > need {
        return Err(Error::format(start + need, "trailing bytes after payload"));
    }
    let mut data = vec![0.0; row_len * h];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (file_row, col) = (i / row_len, i % row_len);
        data[(h - 1 - file_row) * row_len + col] = f64::from(v);
    }
    Raster::from_vec(w, h, channels, data)
}

pub fn write_pfm(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    std::fs::write(path, encode_pfm(raster)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Raster> {
    decode_pfm(&std::fs::read(path)?)
}

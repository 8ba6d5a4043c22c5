//! Binary PPM (`P6`, maxval 255). Reading maps bytes to `[0, 1]` by `/255`;
//! writing quantizes with `floor(255 v + 0.5)` (round half up), so 8-bit
//! content survives a round trip unchanged.

use std::path::Path;

use super::header::HeaderReader;
use crate::error::{Error, Result};
use crate::raster::{AsRaster, ImageRaster, Raster};

pub fn quantize(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_ppm(image: &ImageRaster) -> Vec<u8> {
    let (w, h) = image.dims();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(image.raster().data().iter().map(|&v| quantize(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<ImageRaster> {
    let mut hdr = HeaderReader::new(bytes, true);
    let (_, tag) = hdr.token("PPM magic")?;
    if tag != "P6" {
        return Err(Error::format(0, format!("expected P6, got {tag:?}")));
    }
    let w = hdr.dimension("width")?;
    let h = hdr.dimension("height")?;
    let at = hdr.position();
    if hdr.dimension("maxval")? != 255 {
        return Err(Error::format(at, "only maxval 255 is supported"));
    }
    let start = hdr.end_of_header()?;
    let need = 3 * w * h;
    let payload = &bytes[start..];
    if payload.len() != need {
        return Err(Error::format(
            start + payload.len().min(need),
            format!("expected {need} payload bytes, found {}", payload.len()),
        ));
    }
    let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    ImageRaster::new(Raster::from_vec(w, h, 3, data)?)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &ImageRaster) -> Result<()> {
    std::fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<ImageRaster> {
    decode_ppm(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_rounds_up() {
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn black_and_white_payloads() {
        for (v, byte) in [(0.0, 0x00u8), (1.0, 0xff)] {
            let bytes = encode_ppm(&ImageRaster::constant(3, 2, v).unwrap());
            assert!(bytes[bytes.len() - 18..].iter().all(|&b| b == byte));
        }
    }

    #[test]
    fn eight_bit_round_trip() {
        let mut bytes = b"P6\n4 3\n255\n".to_vec();
        bytes.extend((0..36u8).map(|i| i.wrapping_mul(37)));
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(encode_ppm(&img), bytes);
    }

    #[test]
    fn comments_in_header() {
        let mut bytes = b"P6 # made by hand\n1 1\n# maxval next\n255\n".to_vec();
        bytes.extend([10, 20, 30]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.pixel(0, 0), &[10.0 / 255.0, 20.0 / 255.0, 30.0 / 255.0]);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_ppm(b"P5\n1 1\n255\n\0"), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0"), Err(Error::Format { .. })));
        assert!(matches!(decode_ppm(b"P6\n2 1\n255\n\0\0\0"), Err(Error::Format { .. })));
    }
}

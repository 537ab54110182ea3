//! Image dumps: 8-bit binary PPM and lossless `IMGF32 v1`.

use std::io::{Read, Write};

use super::Image;
use crate::error::{Error, Result};

/// Binary PPM (P6, maxval 255). Channels are clamped to [0, 1] and rounded
/// half-up.
pub fn write_ppm<W: Write>(img: &Image, mut out: W) -> Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img
        .pixels
        .iter()
        .flat_map(|p| p.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8))
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// `IMGF32 v1 <width> <height>\n` followed by little-endian f32 RGB triples,
/// row-major.
pub fn write_imgf32<W: Write>(img: &Image, mut out: W) -> Result<()> {
    write!(out, "IMGF32 v1 {} {}\n", img.width, img.height)?;
    let mut bytes = Vec::with_capacity(img.pixels.len() * 12);
    for p in &img.pixels {
        for &v in p {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_imgf32<R: Read>(mut input: R) -> Result<Image> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    let nl = buf
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::invalid("IMGF32 header missing"))?;
    let header = std::str::from_utf8(&buf[..nl]).map_err(|_| Error::invalid("IMGF32 header is not UTF-8"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dims = match fields.as_slice() {
        ["IMGF32", "v1", w, h] => w.parse::<usize>().ok().zip(h.parse::<usize>().ok()),
        _ => None,
    };
    let (w, h) = dims.ok_or_else(|| Error::invalid(format!("bad IMGF32 header '{header}'")))?;
    let body = &buf[nl + 1..];
    if body.len() != w * h * 12 {
        return Err(Error::invalid(format!(
            "IMGF32 body has {} bytes, expected {}",
            body.len(),
            w * h * 12
        )));
    }
    let pixels = body
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes([c[i], c[i + 1], c[i + 2], c[i + 3]]) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    Image::from_pixels(w, h, pixels)
}

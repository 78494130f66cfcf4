//! Binary (P5) 8-bit PGM images.

use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// `round(255 v)` with halves rounded up, after clamping `v` to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0) + 0.5).floor() as u8
}

pub fn encode(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height || width == 0 || height == 0 {
        return Err(Error::Shape(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    std::fs::write(path, encode(width, height, pixels)?).with_path(path)
}

/// Quantize `[0, 1]` values and write them.
pub fn write_unit(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    let px: Vec<u8> = values.iter().map(|&v| quantize(v)).collect();
    write(path, width, height, &px)
}

/// Parse a P5 image with maxval 255. Returns `(width, height, pixels)`.
pub fn decode(buf: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::Image(format!("bad PGM: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < buf.len() && (buf[pos].is_ascii_whitespace() || buf[pos] == b'#') {
            if buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("magic is not P5"));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| bad("non-numeric header field"))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 || w == 0 || h == 0 {
        return Err(bad("only non-empty 8-bit images are supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = buf.get(pos..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != w * h {
        return Err(bad("raster size does not match header"));
    }
    Ok((w, h, data.to_vec()))
}

pub fn read(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode(&std::fs::read(path).with_path(path)?)
}

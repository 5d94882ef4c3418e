//! Binary 8-bit PGM (P5) import/export for slice fixtures and image previews.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Grey image with row-major `u8` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<()> {
    if img.pixels.len() != img.width * img.height {
        return Err(Error::Data("pgm pixel count does not match dimensions".into()));
    }
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

/// Quantize `[0, 1]` values to 8 bits, clamping anything outside.
pub fn from_unit(width: usize, height: usize, values: &[f64]) -> Pgm {
    let pixels = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    Pgm { width, height, pixels }
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

fn parse_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedInput("truncated pgm header".into()));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).unwrap_or("").to_string());
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if tokens[0] != "P5" {
        return Err(Error::MalformedInput(format!("unsupported pgm magic `{}`", tokens[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::MalformedInput(format!("bad pgm field `{s}`")));
    let (width, height, maxval) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::MalformedInput(format!("only 8-bit pgm supported, maxval {maxval}")));
    }
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != width * height {
        return Err(Error::MalformedInput(format!(
            "pgm raster has {} bytes, expected {}",
            raster.len(),
            width * height
        )));
    }
    Ok(Pgm { width, height, pixels: raster.to_vec() })
}

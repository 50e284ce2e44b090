//! 8-bit binary PGM (P5) images with values in `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid2D;

/// Encodes `round(255 * clamp(v, 0, 1))` per pixel.
pub fn encode_pgm(img: &Grid2D) -> Vec<u8> {
    let (h, w) = img.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.as_slice().iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8));
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pgm("truncated header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn parse_num(tok: &[u8]) -> Result<usize> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Pgm(format!("bad header field `{}`", String::from_utf8_lossy(tok))))
}

/// Decodes a P5 image with maxval 255 into values `q / 255`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Grid2D> {
    let mut pos = 0;
    if next_token(bytes, &mut pos)? != b"P5" {
        return Err(Error::Pgm("not a binary PGM".into()));
    }
    let w = parse_num(next_token(bytes, &mut pos)?)?;
    let h = parse_num(next_token(bytes, &mut pos)?)?;
    if parse_num(next_token(bytes, &mut pos)?)? != 255 {
        return Err(Error::Pgm("only maxval 255 is supported".into()));
    }
    let data = &bytes[(pos + 1).min(bytes.len())..];
    if data.len() != w * h {
        return Err(Error::Pgm(format!("expected {} pixels, found {}", w * h, data.len())));
    }
    Grid2D::new(h, w, data.iter().map(|&q| q as f64 / 255.0).collect())
}

pub fn write_pgm(img: &Grid2D, path: &Path) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Grid2D> {
    decode_pgm(&std::fs::read(path)?)
}

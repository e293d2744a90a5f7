//! Binary PPM (P6) / PGM (P5) image files.
//!
//! Frames are `[3, h, w]` tensors with values in [0, 1], quantized to
//! 8 bits on write. Score-map dumps go out as min-max normalized PGM.

use crate::tensor::Tensor;
use crate::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

pub fn write_ppm(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Shape {
            op: "write_ppm",
            detail: format!("frame must be [3, h, w], got {:?}", s),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = Vec::with_capacity(32 + 3 * h * w);
    write!(&mut buf, "P6\n{w} {h}\n255\n")?;
    let d = frame.data();
    for i in 0..h * w {
        for c in 0..3 {
            buf.push(quantize(d[c * h * w + i]));
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path)?;
    let (magic, w, h, maxval, data) = parse_header(path, &bytes)?;
    if magic != "P6" {
        return Err(parse_err(path, 1, format!("expected P6, got {magic}")));
    }
    if data.len() < 3 * w * h {
        return Err(parse_err(path, 3, format!("truncated pixel data: {} < {}", data.len(), 3 * w * h)));
    }
    let scale = 1.0 / maxval as f32;
    let mut out = Tensor::zeros(&[3, h, w]);
    let o = out.data_mut();
    for i in 0..h * w {
        for c in 0..3 {
            o[c * h * w + i] = data[i * 3 + c] as f32 * scale;
        }
    }
    Ok(out)
}

/// Min-max normalized 8-bit grayscale dump of a 2-D map.
pub fn write_pgm_normalized(path: &Path, values: &[f32], h: usize, w: usize) -> Result<()> {
    if values.len() != h * w {
        return Err(Error::Shape {
            op: "write_pgm",
            detail: format!("{} values for {h}x{w}", values.len()),
        });
    }
    let (mut lo, mut hi) = (f32::MAX, f32::MIN);
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut buf = Vec::with_capacity(32 + h * w);
    write!(&mut buf, "P5\n{w} {h}\n255\n")?;
    for &v in values {
        buf.push(quantize((v - lo) / span));
    }
    fs::write(path, buf)?;
    Ok(())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn parse_err(path: &Path, line: usize, detail: String) -> Error {
    Error::Parse { path: path.display().to_string(), line, detail }
}

/// Parses "magic\nW H\nMAX\n" allowing arbitrary whitespace, returning
/// the remaining raster bytes.
fn parse_header<'a>(path: &Path, bytes: &'a [u8]) -> Result<(String, usize, usize, u32, &'a [u8])> {
    let mut pos = 0usize;
    let token = |pos: &mut usize| -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(parse_err(path, 1, "unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let magic = token(&mut pos)?;
    let w: usize = token(&mut pos)?
        .parse()
        .map_err(|e| parse_err(path, 2, format!("bad width: {e}")))?;
    let h: usize = token(&mut pos)?
        .parse()
        .map_err(|e| parse_err(path, 2, format!("bad height: {e}")))?;
    let maxval: u32 = token(&mut pos)?
        .parse()
        .map_err(|e| parse_err(path, 3, format!("bad maxval: {e}")))?;
    if maxval == 0 || maxval > 255 {
        return Err(parse_err(path, 3, format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates header and raster
    pos += 1;
    if pos > bytes.len() {
        return Err(parse_err(path, 3, "missing raster".into()));
    }
    Ok((magic, w, h, maxval, &bytes[pos..]))
}

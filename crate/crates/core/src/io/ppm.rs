//! Binary 8-bit PPM (`P6`). Channels are clamped to `[0, 1]` and rounded.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::image::RgbImage;

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    for px in img.pixels() {
        out.extend(px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

pub fn decode_ppm(bytes: &[u8], origin: &Path) -> Result<RgbImage> {
    let bad = |reason: &str| Error::Format {
        path: origin.to_path_buf(),
        reason: reason.to_string(),
    };
    // header: magic, width, height, maxval, separated by whitespace
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if bytes.get(pos) == Some(&b'#') {
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
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("not a binary PPM"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only 8-bit PPM is supported"));
    }
    let payload = &bytes[pos + 1..];
    if payload.len() != w * h * 3 {
        return Err(bad("payload size does not match header"));
    }
    let pixels = payload
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]].map(|v| f64::from(v) / 255.0))
        .collect();
    RgbImage::from_pixels(w, h, pixels).map_err(|e| bad(&e.to_string()))
}

pub fn write_ppm(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ppm(img))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    decode_ppm(&read_bytes(path)?, path)
}

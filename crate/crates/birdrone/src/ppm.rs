//! Binary PGM (P5) and PPM (P6) images with maxval 255.

use std::fs;
use std::path::Path;

use birdrone_core::{Shape, Tensor};

use crate::error::{Error, Result};

/// `(1, C, H, W)` image in `[0, 1]` to P5 (C = 1) or P6 (C = 3) bytes.
pub fn encode(image: &Tensor<f32>) -> std::result::Result<Vec<u8>, String> {
    let s = image.shape();
    let magic = match s.c {
        1 => "P5",
        3 => "P6",
        c => return Err(format!("cannot store {c}-channel images")),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", s.w, s.h).into_bytes();
    let plane = s.plane();
    let data = &image.data()[..s.c * plane];
    for p in 0..plane {
        for c in 0..s.c {
            out.push((data[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn header_tokens(buf: &[u8]) -> std::result::Result<(Vec<String>, usize), String> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < 4 {
        while i < buf.len() && buf[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < buf.len() && buf[i] == b'#' {
            while i < buf.len() && buf[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < buf.len() && !buf[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err("truncated header".into());
        }
        tokens.push(String::from_utf8_lossy(&buf[start..i]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    Ok((tokens, i + 1))
}

pub fn decode(buf: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let (t, offset) = header_tokens(buf)?;
    let c = match t[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported magic {m:?}, expected P5 or P6")),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
    let (w, h, maxval) = (num(&t[1])?, num(&t[2])?, num(&t[3])?);
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported, expected 255"));
    }
    let plane = w * h;
    let raster = buf.get(offset..offset + plane * c).ok_or("truncated raster")?;
    let mut data = vec![0.0f32; c * plane];
    for p in 0..plane {
        for k in 0..c {
            data[k * plane + p] = raster[p * c + k] as f32 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, c, h, w), data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let bytes = encode(image).map_err(|r| Error::format(path, r))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&buf).map_err(|r| Error::format(path, r))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_gray_and_color() {
        for c in [1, 3] {
            let t = Tensor::from_fn(Shape::new(1, c, 3, 5), |_, k, y, x| ((k * 15 + y * 5 + x) * 37 % 256) as f32 / 255.0);
            let back = decode(&encode(&t).unwrap()).unwrap();
            assert_eq!(back, t);
        }
    }

    #[test]
    fn header_comments() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[0, 255]);
        let t = decode(&buf).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
    }
}

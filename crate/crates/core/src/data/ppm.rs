use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Decodes a binary (P6, maxval 255) PPM into a (1, 3, H, W) tensor in [0, 1].
pub fn decode_ppm<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Image("truncated header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        if fields.len() == 1 && fields[0] != "P6" {
            return Err(Error::Image("bad magic (expected P6)".into()));
        }
    }
    // Exactly one whitespace byte separates the header from the pixels.
    pos += 1;
    let num = |s: &str, what: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad {what} `{s}`")));
    let (w, h, max) = (num(&fields[1], "width")?, num(&fields[2], "height")?, num(&fields[3], "maxval")?);
    if max != 255 {
        return Err(Error::Image(format!("maxval {max} unsupported (expected 255)")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Image("zero image dimension".into()));
    }
    let need = w * h * 3;
    let pixels = bytes.get(pos..pos + need).ok_or_else(|| {
        Error::Image(format!("truncated pixel data: need {need} bytes, have {}", bytes.len().saturating_sub(pos)))
    })?;
    let scale = T::lit(1.0 / 255.0);
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        T::from_count(pixels[(y * w + x) * 3 + c] as usize) * scale
    }))
}

/// Encodes channels 0..3 of batch item 0, clamping to [0, 1].
pub fn encode_ppm<T: Scalar>(image: &Tensor<T>) -> Result<Vec<u8>> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("encode_ppm", format!("need 3 channels, got {s}")));
    }
    let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
    out.reserve(s.w * s.h * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                let v = image.at(0, c, y, x).as_f64().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn load_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Image(m) => Error::Image(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_ppm<T: Scalar>(image: &Tensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

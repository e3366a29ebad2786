//! Binary PPM (P6, 8-bit) image I/O. Images are `[3, H, W]` tensors with
//! values in [0, 1]; writing quantizes with round(255 * v).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Error::Shape(format!(
            "ppm image must be [3, H, W], got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = image.at3(c, y, x).clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let mut fields = Vec::new();
    // Header: "P6", width, height, maxval; '#' starts a comment.
    while fields.len() < 4 {
        match bytes.get(pos) {
            None => return Err(Error::Data("ppm: truncated header".into())),
            Some(b'#') => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            Some(_) => {
                let start = pos;
                while pos < bytes.len()
                    && !bytes[pos].is_ascii_whitespace()
                    && bytes[pos] != b'#'
                {
                    pos += 1;
                }
                fields.push(
                    std::str::from_utf8(&bytes[start..pos])
                        .map_err(|_| Error::Data("ppm: non-utf8 header".into()))?
                        .to_string(),
                );
            }
        }
    }
    if fields[0] != "P6" {
        return Err(Error::Data(format!("ppm: expected P6, got '{}'", fields[0])));
    }
    let w: usize = fields[1]
        .parse()
        .map_err(|_| Error::Data(format!("ppm: bad width '{}'", fields[1])))?;
    let h: usize = fields[2]
        .parse()
        .map_err(|_| Error::Data(format!("ppm: bad height '{}'", fields[2])))?;
    if fields[3] != "255" {
        return Err(Error::Data(format!("ppm: expected maxval 255, got '{}'", fields[3])));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() < pos + need {
        return Err(Error::Data(format!(
            "ppm: raster truncated ({} of {need} bytes)",
            bytes.len().saturating_sub(pos)
        )));
    }
    let raster = &bytes[pos..pos + need];
    let mut image = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let byte = raster[(y * w + x) * 3 + c];
                let idx = image.idx3(c, y, x);
                image.data_mut()[idx] = byte as f64 / 255.0;
            }
        }
    }
    Ok(image)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Data(format!("missing image file {}: {e}", path.display())))?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_within_quantization() {
        let img = Tensor::from_fn(&[3, 5, 4], |i| ((i * 29) % 97) as f64 / 96.0);
        let decoded = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        // half-ulp of 8-bit quantization
        assert!(img.max_abs_diff(&decoded) <= 1.0 / 510.0 + 1e-12);
    }

    #[test]
    fn decoding_twice_is_exact() {
        let img = Tensor::from_fn(&[3, 4, 4], |i| (i % 11) as f64 / 10.0);
        let once = decode_ppm(&encode_ppm(&img).unwrap()).unwrap();
        let twice = decode_ppm(&encode_ppm(&once).unwrap()).unwrap();
        assert!(once.bits_eq(&twice));
    }

    #[test]
    fn rejects_bad_magic() {
        assert!(decode_ppm(b"P5\n2 2\n255\n0000").is_err());
    }
}

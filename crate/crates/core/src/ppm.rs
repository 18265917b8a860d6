//! Binary PPM (P6) reading and writing, 8- and 16-bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::RgbImage;

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(format!("ppm: {}", msg.into()))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err(format!("missing or invalid {what}")))
    }
}

/// Decodes a P6 image, scaling samples by `1 / maxval`.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(parse_err("not a binary PPM (expected P6 magic)"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if !(1..=65535).contains(&maxval) {
        return Err(parse_err(format!("maxval {maxval} outside 1..=65535")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if h.pos >= bytes.len() || !bytes[h.pos].is_ascii_whitespace() {
        return Err(parse_err("truncated header"));
    }
    let raster = &bytes[h.pos + 1..];
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * 3 * sample_bytes;
    if raster.len() < expected {
        return Err(parse_err(format!(
            "raster has {} bytes, expected {expected}",
            raster.len()
        )));
    }
    let scale = maxval as f64;
    let sample = |i: usize| -> f64 {
        let v = if sample_bytes == 1 {
            u32::from(raster[i])
        } else {
            u32::from(u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]))
        };
        v as f64 / scale
    };
    let data = (0..width * height)
        .map(|p| [sample(3 * p), sample(3 * p + 1), sample(3 * p + 2)])
        .collect();
    RgbImage::new(width, height, data)
}

/// Encodes with the given `maxval`; values are rounded to the nearest level.
pub fn encode_ppm(image: &RgbImage, maxval: u16) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::Validation("maxval must be positive".into()));
    }
    let mut out = format!("P6\n{} {}\n{maxval}\n", image.width, image.height).into_bytes();
    for v in image.data.iter().flatten() {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Validation(format!("pixel value {v} outside [0, 1]")));
        }
        let level = (v * f64::from(maxval)).round() as u16;
        if maxval < 256 {
            out.push(level as u8);
        } else {
            out.extend_from_slice(&level.to_be_bytes());
        }
    }
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_ppm(path: impl AsRef<Path>, image: &RgbImage, maxval: u16) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image, maxval)?)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_8_and_16_bit() {
        let img = RgbImage::new(2, 1, vec![[0.0, 1.0, 0.2], [1.0, 0.6, 0.4]]).unwrap();
        let back = decode_ppm(&encode_ppm(&img, 255).unwrap()).unwrap();
        assert_eq!(back.data[0], [0.0, 1.0, 51.0 / 255.0]);
        let back16 = decode_ppm(&encode_ppm(&img, 65535).unwrap()).unwrap();
        for (a, b) in img.data.iter().flatten().zip(back16.data.iter().flatten()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn header_comments() {
        let mut bytes = b"P6 # made by hand\n1 1\n# max\n255\n".to_vec();
        bytes.extend([255, 0, 0]);
        let img = decode_ppm(&bytes).unwrap();
        assert_eq!(img.data, vec![[1.0, 0.0, 0.0]]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(decode_ppm(b"P3\n1 1\n255\n0 0 0").is_err());
        assert!(decode_ppm(b"P6\n2 2\n255\n\x00\x00").is_err());
        assert!(decode_ppm(b"P6\n1 1\n0\n\x00\x00\x00").is_err());
    }
}

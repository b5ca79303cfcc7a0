//! Binary netpbm decoding/encoding: 8-bit P5 (grayscale) and P6 (RGB).

use crate::error::{Error, Result};
use crate::tensor::{elem, Element, Tensor};
use std::fs;
use std::path::Path;

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_int(&mut self) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Decode("expected integer in netpbm header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Decode("bad integer in netpbm header".into()))
    }
}

fn decode_bytes<E: Element>(raw: &[u8]) -> Result<Tensor<E>> {
    if raw.len() < 2 {
        return Err(Error::Decode("file too short".into()));
    }
    let channels = match &raw[0..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        _ => return Err(Error::Decode("bad magic, expected P5 or P6".into())),
    };
    let mut p = HeaderParser { bytes: raw, pos: 2 };
    let w = p.next_int()?;
    let h = p.next_int()?;
    let maxval = p.next_int()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Decode(format!("unsupported maxval {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Decode("zero image dimension".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if p.pos >= raw.len() || !raw[p.pos].is_ascii_whitespace() {
        return Err(Error::Decode("missing raster separator".into()));
    }
    p.pos += 1;
    let need = w * h * channels;
    let raster = &raw[p.pos..];
    if raster.len() < need {
        return Err(Error::Decode(format!(
            "truncated raster: need {need} bytes, have {}",
            raster.len()
        )));
    }
    // Interleaved raster -> planar [C,H,W], scaled to [0,1].
    let scale = 1.0 / maxval as f64;
    let mut data = vec![E::zero(); need];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let v = raster[(y * w + x) * channels + c] as f64 * scale;
                data[c * h * w + y * w + x] = elem(v);
            }
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Decode a P5/P6 file into a [C,H,W] tensor of reals in [0,1].
pub fn decode_image<E: Element>(path: &Path) -> Result<Tensor<E>> {
    let raw = fs::read(path)?;
    decode_bytes(&raw)
}

/// Encode a [1,H,W] or [3,H,W] tensor of reals in [0,1] as P5/P6 with
/// maxval 255. Values are clamped then rounded.
pub fn encode_image<E: Element>(img: &Tensor<E>, path: &Path) -> Result<()> {
    if img.rank() != 3 {
        return Err(Error::Shape(format!(
            "encode_image expects [C,H,W], got {:?}",
            img.shape()
        )));
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => {
            return Err(Error::Shape(format!(
                "encode_image supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.data()[ch * h * w + y * w + x].to_f64().clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_tiny_p5() {
        let raw = b"P5\n2 2\n255\n\x00\xff\x00\xff";
        let t = decode_bytes::<f32>(raw).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn decodes_all_white_p6() {
        let mut raw = b"P6\n2 1\n255\n".to_vec();
        raw.extend_from_slice(&[255u8; 6]);
        let t = decode_bytes::<f32>(&raw).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode_bytes::<f32>(b"P3\n1 1\n255\n0").is_err());
        assert!(decode_bytes::<f32>(b"P5\n4 4\n255\n\x00\x01").is_err());
    }

    #[test]
    fn handles_comments_in_header() {
        let raw = b"P5\n# a comment\n1 1\n255\n\x80";
        let t = decode_bytes::<f32>(raw).unwrap();
        assert!((t.data()[0] - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn round_trip_is_exact_after_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let mut rng = crate::rng::SeededRng::new(61);
        // Start from values already on the 1/255 grid.
        let img = Tensor::<f32>::from_fn(&[3, 5, 4], |_| {
            (rng.next_index(256) as f32) / 255.0
        })
        .unwrap();
        encode_image(&img, &path).unwrap();
        let back = decode_image::<f32>(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

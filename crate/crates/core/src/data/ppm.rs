//! Binary PPM (P6, 8-bit) reading and writing.

use thiserror::Error;

use crate::data::resize::bilinear_resize;
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("not a binary P6 file (magic {0:?})")]
    NotP6(String),
    #[error("malformed header: {0}")]
    MalformedHeader(&'static str),
    #[error("unsupported depth: maxval {0} needs more than 8 bits")]
    UnsupportedDepth(u32),
    #[error("pixel data truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub maxval: u32,
    /// Interleaved RGB, row-major.
    pub pixels: Vec<u8>,
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<u32, PpmError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(PpmError::MalformedHeader(what));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(PpmError::MalformedHeader(what))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, PpmError> {
    if bytes.len() < 2 {
        return Err(PpmError::MalformedHeader("missing magic"));
    }
    if &bytes[..2] != b"P6" {
        return Err(PpmError::NotP6(String::from_utf8_lossy(&bytes[..2]).into_owned()));
    }
    let mut h = Header { bytes, pos: 2 };
    if !h.bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(PpmError::MalformedHeader("magic not followed by whitespace"));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(PpmError::MalformedHeader("zero extent"));
    }
    if maxval == 0 {
        return Err(PpmError::MalformedHeader("maxval is zero"));
    }
    if maxval > 255 {
        return Err(PpmError::UnsupportedDepth(maxval));
    }
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PpmError::MalformedHeader("no whitespace before pixel data"));
    }
    let start = h.pos + 1;
    let needed = width * height * 3;
    let have = bytes.len() - start;
    if have < needed {
        return Err(PpmError::Truncated { needed, have });
    }
    Ok(RgbImage {
        width,
        height,
        maxval,
        pixels: bytes[start..start + needed].to_vec(),
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

impl RgbImage {
    /// `[H, W, 3]` tensor with values scaled into `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let scale = self.maxval as f64;
        Tensor::new(
            vec![self.height, self.width, 3],
            self.pixels.iter().map(|&b| b as f64 / scale).collect(),
        )
        .expect("pixel count matches extents")
    }

    /// Quantizes a `[H, W, 3]` tensor in `[0, 1]` to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (h, w) = match *t.shape() {
            [h, w, 3] => (h, w),
            _ => {
                return Err(crate::error::Error::InvalidArgument(format!(
                    "expected [H, W, 3] image, got {:?}",
                    t.shape()
                )))
            }
        };
        Ok(RgbImage {
            width: w,
            height: h,
            maxval: 255,
            pixels: t.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        })
    }
}

/// Decodes a P6 payload, scales channels by `1/maxval` and bilinearly
/// resizes to `size × size`.
pub fn decode_resize(bytes: &[u8], size: usize) -> Result<Tensor> {
    let img = decode_ppm(bytes)?;
    let t = img.to_tensor();
    if img.width == size && img.height == size {
        return Ok(t);
    }
    bilinear_resize(&t, size, size)
}

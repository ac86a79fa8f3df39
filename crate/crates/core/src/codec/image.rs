use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Single-component 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::Image(format!(
                "{}x{} image needs {} samples, got {}",
                width,
                height,
                width * height,
                samples.len()
            )));
        }
        Ok(Image8 {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Image8 {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.samples[y * self.width + x] = v;
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Image8> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Image(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut samples = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            samples.extend_from_slice(&self.samples[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Image8 {
            width: w,
            height: h,
            samples,
        })
    }

    /// Pads right/bottom by edge replication to the next multiple of `m`.
    pub fn pad_to_multiple(&self, m: usize) -> Image8 {
        let w = self.width.div_ceil(m) * m;
        let h = self.height.div_ceil(m) * m;
        let mut samples = Vec::with_capacity(w * h);
        for y in 0..h {
            let sy = y.min(self.height - 1);
            for x in 0..w {
                samples.push(self.get(x.min(self.width - 1), sy));
            }
        }
        Image8 {
            width: w,
            height: h,
            samples,
        }
    }

    /// `[1, 1, h, w]` tensor with samples scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.samples.iter().map(|&v| v as f32 / 255.0).collect();
        Tensor::from_vec([1, 1, self.height, self.width], data).expect("image tensor shape")
    }

    /// Inverse of [`Image8::to_tensor`]: clamps to `[0, 1]`, scales, rounds.
    pub fn from_tensor(t: &Tensor) -> Result<Image8> {
        if t.n() != 1 || t.c() != 1 {
            return Err(Error::Image(format!(
                "expected a [1, 1, h, w] tensor, got {:?}",
                t.shape()
            )));
        }
        let samples = t
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Image8::new(t.w(), t.h(), samples)
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> Result<Image8> {
        let bad = |msg: &str| Error::Image(format!("PGM: {msg}"));
        if bytes.len() < 2 || &bytes[..2] != b"P5" {
            return Err(bad("missing P5 signature"));
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in fields.iter_mut() {
            loop {
                match bytes.get(pos) {
                    Some(b'#') => {
                        while pos < bytes.len() && bytes[pos] != b'\n' {
                            pos += 1;
                        }
                    }
                    Some(c) if c.is_ascii_whitespace() => pos += 1,
                    Some(_) => break,
                    None => return Err(bad("truncated header")),
                }
            }
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("bad header number"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(bad(&format!("only maxval 255 supported, got {maxval}")));
        }
        match bytes.get(pos) {
            Some(c) if c.is_ascii_whitespace() => pos += 1,
            _ => return Err(bad("missing header terminator")),
        }
        let data = &bytes[pos..];
        if data.len() != width * height {
            return Err(bad(&format!(
                "expected {} samples, found {}",
                width * height,
                data.len()
            )));
        }
        Image8::new(width, height, data.to_vec())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image8> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Image8::decode_pgm(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode_pgm()).map_err(|e| Error::io(path, e))
    }
}

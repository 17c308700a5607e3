//! RGB images in `[0, 1]` and binary PPM (P6, maxval 255) I/O.

use std::fs;
use std::io::ErrorKind;
use std::path::Path;

use crate::error::{ensure, Error, Result};
use crate::tensor::{Element, Tensor};

/// Row-major `H x W x 3` pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        ensure!(
            width > 0 && height > 0 && pixels.len() == width * height * 3,
            "image {}x{} needs {} values, got {}",
            width,
            height,
            width * height * 3,
            pixels.len()
        );
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![v; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.pixels[(y * self.width + x) * 3 + c] = v;
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Clamp to `[0, 1]` and quantize with round-half-up.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| quantize(v)).collect()
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let (w, h) = (self.width, self.height);
        let mut data = vec![T::zero(); 3 * w * h];
        for c in 0..3 {
            for i in 0..w * h {
                data[c * w * h + i] = T::from_f64(self.pixels[i * 3 + c] as f64);
            }
        }
        Tensor::from_vec(&[1, 3, h, w], data).expect("sized above")
    }

    /// Image `n` of a `[N, 3, H, W]` tensor. Values are not clamped.
    pub fn from_tensor<T: Element>(t: &Tensor<T>, n: usize) -> Result<Self> {
        let s = t.shape();
        ensure!(
            s.len() == 4 && s[1] == 3 && n < s[0],
            "expected [N, 3, H, W] with N > {}, got {:?}",
            n,
            s
        );
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let base = n * 3 * plane;
        let d = t.data();
        let mut pixels = vec![0.0f32; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                pixels[i * 3 + c] = d[base + c * plane + i].as_f64() as f32;
            }
        }
        Self::new(w, h, pixels)
    }

    pub fn clamped(&self) -> Self {
        Self {
            pixels: self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            ..self.clone()
        }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Parse P6 bytes.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::format(0, "missing P6 magic"));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            let what = ["width", "height", "maxval"][i];
            return Err(Error::format(pos as u64, format!("expected {what}")));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(start as u64, "header number out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::format(pos as u64, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format(pos as u64, "zero image extent"));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(pos as u64, "expected whitespace after maxval")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(3))
        .ok_or_else(|| Error::format(pos as u64, "image too large"))?;
    if bytes.len() - pos < need {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated pixel data: need {need} bytes, have {}", bytes.len() - pos),
        ));
    }
    Image::from_bytes(width, height, &bytes[pos..pos + need])
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_bytes());
    out
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_ppm(&bytes)
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(img))?;
    Ok(())
}

//! Single-channel rasters and binary PGM (`P5`) I/O.
//!
//! Intensities are held as `f64` in `[0, 1]`, obtained from 8-bit samples as
//! `value / 255`. Writing back rounds `value * 255`, which reproduces the
//! original bytes exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Near-infrared intensity raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NirImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl NirImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "image {width}x{height} needs {} intensities, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Returns a copy with every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.width,
            self.height,
            self.data.iter().map(|v| v * factor).collect(),
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (width, height, bytes) = read_pgm(path)?;
        Self::from_bytes(width, height, &bytes)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        write_pgm(path.as_ref(), self.width, self.height, &self.to_bytes())
    }
}

/// Boolean raster; `true` marks a usable iris pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "mask {width}x{height} needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Loads a mask PGM; samples `>= 128` are usable.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let (width, height, bytes) = read_pgm(path.as_ref())?;
        Self::new(width, height, bytes.iter().map(|&b| b >= 128).collect())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path.as_ref(), self.width, self.height, &bytes)
    }
}

/// Reads an 8-bit binary PGM, returning `(width, height, samples)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&raw).map_err(|msg| Error::parse(path, 1, msg))
}

fn parse_pgm(raw: &[u8]) -> std::result::Result<(usize, usize, Vec<u8>), String> {
    let mut pos = 0;
    let mut fields = [0usize; 3];

    if raw.len() < 2 || &raw[..2] != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    pos += 2;

    for field in fields.iter_mut() {
        // whitespace and `#` comments may separate header fields
        loop {
            match raw.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while raw.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while raw.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err("truncated PGM header".into());
        }
        *field = std::str::from_utf8(&raw[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PGM header field")?;
    }

    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(format!(
            "unsupported maxval {maxval}; only 8-bit PGM is accepted"
        ));
    }
    if width == 0 || height == 0 {
        return Err(format!("empty raster {width}x{height}"));
    }
    // exactly one whitespace byte ends the header
    if !raw.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("missing whitespace after PGM header".into());
    }
    pos += 1;

    let n = width * height;
    let body = &raw[pos..];
    if body.len() < n {
        return Err(format!(
            "raster truncated: expected {n} samples, found {}",
            body.len()
        ));
    }
    Ok((width, height, body[..n].to_vec()))
}

pub fn write_pgm(path: &Path, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(bytes.len() + 20);
    write!(out, "P5\n{width} {height}\n255\n").expect("writing to a Vec cannot fail");
    out.extend_from_slice(bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

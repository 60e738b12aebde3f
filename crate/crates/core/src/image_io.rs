//! Planar RGB images, depth maps with missing-value masks, and their file
//! formats (PNG, PFM, 16-bit PNG depth with a JSON scale sidecar).

use std::io::{BufRead, BufReader, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Three-channel image stored channel-planar, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    data: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl RgbImage {
    pub fn new(height: usize, width: usize) -> Self {
        Self::filled(height, width, [0.0; 3])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let n = height * width;
        let mut data = Vec::with_capacity(3 * n);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, n));
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// `data` is channel-planar: `data[(c * height + y) * width + x]`.
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Mean absolute difference per value.
    pub fn mean_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        s / self.data.len() as f64
    }

    /// Copy of the window starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::DimensionMismatch(
                "crop window exceeds the image".into(),
            ));
        }
        let mut out = Self::new(height, width);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        Ok(out)
    }

    fn from_dynamic(img: DynamicImage) -> (Self, BitDepth) {
        let depth = match img.color().bytes_per_pixel() / img.color().channel_count().max(1) {
            1 => BitDepth::Eight,
            _ => BitDepth::Sixteen,
        };
        let (width, height) = (img.width() as usize, img.height() as usize);
        let mut out = Self::new(height, width);
        match depth {
            BitDepth::Eight => {
                let rgb = img.to_rgb8();
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        out.set(c, y as usize, x as usize, p[c] as f32 / 255.0);
                    }
                }
            }
            BitDepth::Sixteen => {
                let rgb = img.to_rgb16();
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        out.set(c, y as usize, x as usize, p[c] as f32 / 65535.0);
                    }
                }
            }
        }
        (out, depth)
    }

    /// Decodes a PNG, reporting its bit depth.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<(Self, BitDepth)> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Ok(Self::from_dynamic(img))
    }

    pub fn load_png(path: &Path) -> Result<(Self, BitDepth)> {
        let bytes = std::fs::read(path)?;
        Self::from_png_bytes(&bytes).map_err(|e| match e {
            Error::Image(err) => Error::format(path, err.to_string()),
            other => other,
        })
    }

    pub fn to_png_bytes(&self, depth: BitDepth) -> Result<Vec<u8>> {
        let (w, h) = (self.width as u32, self.height as u32);
        let mut out = Cursor::new(Vec::new());
        match depth {
            BitDepth::Eight => {
                let buf = ImageBuffer::from_fn(w, h, |x, y| {
                    Rgb(std::array::from_fn(|c| {
                        quantize(self.get(c, y as usize, x as usize), 255.0) as u8
                    }))
                });
                DynamicImage::ImageRgb8(buf).write_to(&mut out, ImageFormat::Png)?;
            }
            BitDepth::Sixteen => {
                let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| {
                    Rgb(std::array::from_fn(|c| {
                        quantize(self.get(c, y as usize, x as usize), 65535.0) as u16
                    }))
                });
                DynamicImage::ImageRgb16(buf).write_to(&mut out, ImageFormat::Png)?;
            }
        }
        Ok(out.into_inner())
    }

    pub fn save_png(&self, path: &Path, depth: BitDepth) -> Result<()> {
        std::fs::write(path, self.to_png_bytes(depth)?)?;
        Ok(())
    }
}

fn quantize(v: f32, max: f32) -> f32 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Per-pixel depth in metres with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn constant(height: usize, width: usize, d_m: f64) -> Self {
        Self {
            height,
            width,
            values: vec![d_m; height * width],
            valid: vec![true; height * width],
        }
    }

    /// Builds a map from raw values; NaN and non-positive entries are marked
    /// missing, `+inf` is kept as a valid far depth.
    pub fn from_values(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} depth values for a {height}x{width} map",
                values.len()
            )));
        }
        let valid: Vec<bool> = values.iter().map(|&v| v > 0.0 && !v.is_nan()).collect();
        let values = values
            .iter()
            .zip(&valid)
            .map(|(&v, &ok)| if ok { v } else { 0.0 })
            .collect();
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    pub fn get(&self, y: usize, x: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set_missing(&mut self, y: usize, x: usize) {
        let i = y * self.width + x;
        self.valid[i] = false;
        self.values[i] = 0.0;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn hole_fraction(&self) -> f64 {
        1.0 - self.valid_count() as f64 / self.valid.len().max(1) as f64
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Result<Self> {
        if y0 + height > self.height || x0 + width > self.width {
            return Err(Error::DimensionMismatch(
                "crop window exceeds the depth map".into(),
            ));
        }
        let mut values = Vec::with_capacity(height * width);
        let mut valid = Vec::with_capacity(height * width);
        for y in y0..y0 + height {
            let row = y * self.width;
            values.extend_from_slice(&self.values[row + x0..row + x0 + width]);
            valid.extend_from_slice(&self.valid[row + x0..row + x0 + width]);
        }
        Ok(Self {
            height,
            width,
            values,
            valid,
        })
    }

    /// Reads a single-channel PFM (`Pf`). Missing pixels are stored as zero,
    /// negative or NaN.
    pub fn from_pfm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BufReader::new(bytes);
        let mut token = || -> Result<String> {
            let mut s = String::new();
            loop {
                let buf = r.fill_buf()?;
                if buf.is_empty() {
                    break;
                }
                let ch = buf[0];
                r.consume(1);
                if ch.is_ascii_whitespace() {
                    if s.is_empty() {
                        continue;
                    }
                    break;
                }
                s.push(ch as char);
            }
            Ok(s)
        };
        let bad = |m: &str| Error::InvalidArgument(format!("PFM: {m}"));
        let magic = token()?;
        if magic != "Pf" {
            return Err(bad("expected single-channel 'Pf' header"));
        }
        let width: usize = token()?.parse().map_err(|_| bad("bad width"))?;
        let height: usize = token()?.parse().map_err(|_| bad("bad height"))?;
        let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
        if width == 0 || height == 0 || scale == 0.0 {
            return Err(bad("zero dimension or scale"));
        }
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != width * height * 4 {
            return Err(bad(&format!(
                "expected {} bytes of samples, found {}",
                width * height * 4,
                raw.len()
            )));
        }
        let little = scale < 0.0;
        let mut values = vec![0.0; width * height];
        for (i, c) in raw.chunks_exact(4).enumerate() {
            let b: [u8; 4] = c.try_into().expect("4 bytes");
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            // rows are stored bottom to top
            let (row, col) = (i / width, i % width);
            values[(height - 1 - row) * width + col] = v as f64;
        }
        Self::from_values(height, width, values)
    }

    pub fn to_pfm_bytes(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for row in (0..self.height).rev() {
            for col in 0..self.width {
                let v = self.get(row, col).map_or(0.0, |v| v as f32);
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Decodes a 16-bit grayscale PNG where each unit is `scale_mm`
    /// millimetres and 0 marks a missing pixel.
    pub fn from_png16_bytes(bytes: &[u8], scale_mm: f64) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        if img.color().channel_count() != 1 || img.color().bytes_per_pixel() != 2 {
            return Err(Error::InvalidArgument(
                "depth PNG must be 16-bit grayscale".into(),
            ));
        }
        let gray = img.to_luma16();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let values = gray
            .pixels()
            .map(|p| {
                if p[0] == 0 {
                    0.0
                } else {
                    p[0] as f64 * scale_mm / 1000.0
                }
            })
            .collect();
        Self::from_values(h, w, values)
    }

    pub fn to_png16_bytes(&self, scale_mm: f64) -> Result<Vec<u8>> {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_fn(self.width as u32, self.height as u32, |x, y| {
                let v = self
                    .get(y as usize, x as usize)
                    .map_or(0.0, |d| (d * 1e3 / scale_mm).round().clamp(1.0, 65535.0));
                Luma([v as u16])
            });
        let mut out = Cursor::new(Vec::new());
        DynamicImage::ImageLuma16(buf).write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Loads `.pfm` directly, or a 16-bit `.png` with its scale sidecar (see
    /// [`sidecar_path`]); without a sidecar one unit is one millimetre.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let wrap = |e: Error| Error::format(path, e.to_string());
        match extension(path).as_str() {
            "pfm" => Self::from_pfm_bytes(&bytes).map_err(wrap),
            "png" => {
                let side = sidecar_path(path);
                let scale = if side.exists() {
                    DepthScale::load(&side)?.scale_mm
                } else {
                    1.0
                };
                Self::from_png16_bytes(&bytes, scale).map_err(wrap)
            }
            other => Err(Error::format(
                path,
                format!("unsupported depth format {other:?}"),
            )),
        }
    }

    /// Writes `.pfm`, or a 16-bit `.png` plus its sidecar.
    pub fn save(&self, path: &Path, scale_mm: f64) -> Result<()> {
        match extension(path).as_str() {
            "pfm" => {
                let mut f = std::fs::File::create(path)?;
                f.write_all(&self.to_pfm_bytes())?;
            }
            "png" => {
                std::fs::write(path, self.to_png16_bytes(scale_mm)?)?;
                DepthScale { scale_mm }.save(&sidecar_path(path))?;
            }
            other => {
                return Err(Error::format(
                    path,
                    format!("unsupported depth format {other:?}"),
                ))
            }
        }
        Ok(())
    }

    /// Sniffs PFM vs PNG from the leading bytes.
    pub fn from_bytes(bytes: &[u8], png_scale_mm: f64) -> Result<Self> {
        if bytes.starts_with(b"Pf") {
            Self::from_pfm_bytes(bytes)
        } else {
            Self::from_png16_bytes(bytes, png_scale_mm)
        }
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

/// `depth.png` -> `depth.json`.
pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Sidecar for 16-bit PNG depth maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthScale {
    /// Millimetres per PNG unit.
    pub scale_mm: f64,
}

impl DepthScale {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Self =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if !(s.scale_mm > 0.0) {
            return Err(Error::format(path, "scale_mm must be positive"));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plain struct");
        std::fs::write(path, text)?;
        Ok(())
    }
}

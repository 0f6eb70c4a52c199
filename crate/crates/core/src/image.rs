//! Planar float images, PNG/PGM IO and bilinear resampling.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with intensities in `[0,1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// Three-channel image stored channel-planar (`[3,H,W]`) with values in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "gray image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.width + col] = v;
    }

    pub fn to_rgb(&self) -> RgbImage {
        let mut data = Vec::with_capacity(3 * self.data.len());
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        RgbImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn resize(&self, height: usize, width: usize) -> GrayImage {
        GrayImage {
            height,
            width,
            data: resize_plane(&self.data, self.height, self.width, height, width),
        }
    }
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Format(format!(
                "rgb image {height}x{width} needs {} values, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format(format!("intensity {v} outside [0,1]")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an RGB image from a flat buffer with `channels` interleaved values per pixel.
    /// Only 3-channel input is accepted.
    pub fn from_interleaved(height: usize, width: usize, channels: usize, pixels: &[f64]) -> Result<Self> {
        if channels != 3 {
            return Err(Error::Format(format!("expected 3 channels, got {channels}")));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Format("pixel buffer length mismatch".into()));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (i, px) in pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c];
            }
        }
        Self::new(height, width, data)
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// ITU-R 601 luma: `0.299R + 0.587G + 0.114B`.
    pub fn to_grayscale(&self) -> GrayImage {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        let data = (0..self.height * self.width)
            .map(|i| (0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).clamp(0.0, 1.0))
            .collect();
        GrayImage {
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn resize(&self, height: usize, width: usize) -> RgbImage {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            data.extend(resize_plane(self.plane(c), self.height, self.width, height, width));
        }
        RgbImage {
            height,
            width,
            data,
        }
    }

    pub fn scaled(&self, factor: f64) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| (v * factor).clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_plane(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    let sy = sh as f64 / dh as f64;
    let sx = sw as f64 / dw as f64;
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f64;
        for x in 0..dw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f64;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out.push((top * (1.0 - wy) + bot * wy).clamp(0.0, 1.0));
        }
    }
    out
}

/// Samples a plane at fractional coordinates with bilinear weights and replicate borders.
pub fn sample_bilinear(src: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let (wy, wx) = (y - y0 as f64, x - x0 as f64);
    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
    top * (1.0 - wy) + bot * wy
}

/// Decodes a PNG (gray, gray+alpha, RGB or RGBA; 8 or 16 bit) into an RGB image.
/// Alpha is dropped.
pub fn read_png(path: &Path) -> Result<RgbImage> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let samples: Vec<f64> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()]
            .iter()
            .map(|&v| v as f64 / 255.0)
            .collect(),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported bit depth {other:?}",
                path.display()
            )))
        }
    };
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        let px = &samples[i * channels..(i + 1) * channels];
        let rgb = match channels {
            1 | 2 => [px[0]; 3],
            3 | 4 => [px[0], px[1], px[2]],
            n => return Err(Error::Format(format!("unsupported channel count {n}"))),
        };
        for c in 0..3 {
            data[c * plane + i] = rgb[c];
        }
    }
    RgbImage::new(h, w, data)
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let plane = img.width * img.height;
    let mut bytes = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            bytes.push(to_u8(img.data[c * plane + i]));
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{width} {height}\n255\n").map_err(|e| Error::io(path, e))?;
    w.write_all(pixels).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn luma_weights() {
        let px = |r, g, b| RgbImage::new(1, 1, vec![r, g, b]).unwrap().to_grayscale().data[0];
        assert!((px(1.0, 1.0, 1.0) - 1.0).abs() < 1e-15);
        assert_eq!(px(0.0, 0.0, 0.0), 0.0);
        assert!((px(1.0, 0.0, 0.0) - 0.299).abs() < 1e-15);
    }

    #[test]
    fn wrong_channel_count_is_format_error() {
        let r = RgbImage::from_interleaved(1, 1, 4, &[0.0; 4]);
        assert!(matches!(r, Err(Error::Format(_))));
    }

    #[test]
    fn half_resize_of_linear_ramp() {
        // horizontal ramp v(x) = x/255 on 64x256; bilinear reproduces linear functions exactly
        let (h, w) = (64, 256);
        let src: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 / 255.0).collect();
        let out = resize_plane(&src, h, w, 32, 128);
        assert_eq!(out.len(), 32 * 128);
        for y in 0..32 {
            for x in 0..128 {
                let expect = (2.0 * x as f64 + 0.5) / 255.0;
                let v = out[y * 128 + x];
                assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let data: Vec<f64> = (0..3 * 4 * 5).map(|i| (i % 256) as f64 / 255.0).collect();
        let img = RgbImage::new(4, 5, data).unwrap();
        write_png(&p, &img).unwrap();
        let back = read_png(&p).unwrap();
        assert_eq!((back.height, back.width), (4, 5));
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

//! Synthetic word renderer built on the embedded bitmap font.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::font::{glyph, GLYPH_H, GLYPH_W};
use crate::error::{Error, Result};
use crate::image::{sample_bilinear, RgbImage};

pub const RENDER_H: usize = 32;
pub const RENDER_W: usize = 128;

/// Font cells between glyph origins (glyph width plus one blank column).
const ADVANCE: f64 = (GLYPH_W + 1) as f64;
const MARGIN: f64 = 2.0;
const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    /// Pixels per font cell, sampled uniformly per word.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Maximum per-character offset in pixels along each axis.
    pub char_jitter: f64,
    pub max_rotation_deg: f64,
    /// Maximum stroke dilation in pixels (0 or 1).
    pub max_dilation: usize,
    /// Maximum number of low-contrast background rectangles.
    pub max_clutter: usize,
    /// Minimum foreground/background intensity gap.
    pub min_contrast: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            scale_min: 2.0,
            scale_max: 3.5,
            char_jitter: 1.5,
            max_rotation_deg: 15.0,
            max_dilation: 1,
            max_clutter: 3,
            min_contrast: 0.4,
        }
    }
}

impl RenderStyle {
    /// Fixed scale, no jitter, rotation, dilation or clutter.
    pub fn plain(scale: f64) -> Self {
        Self {
            scale_min: scale,
            scale_max: scale,
            char_jitter: 0.0,
            max_rotation_deg: 0.0,
            max_dilation: 0,
            max_clutter: 0,
            min_contrast: 0.6,
        }
    }
}

/// Ink coverage in `[0,1]` for `text` laid out centered on a `RENDER_H × RENDER_W` canvas.
pub fn text_coverage(text: &str, style: &RenderStyle, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let glyphs = text
        .chars()
        .map(|c| glyph(c).ok_or_else(|| Error::Data(format!("no glyph for {c:?} in {text:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = (RENDER_H, RENDER_W);
    let mut cov = vec![0.0; h * w];
    if glyphs.is_empty() {
        return Ok(cov);
    }
    let n = glyphs.len() as f64;
    let cells_w = ADVANCE * n - 1.0;
    let mut scale = if style.scale_max > style.scale_min {
        rng.random_range(style.scale_min..style.scale_max)
    } else {
        style.scale_min
    };
    scale = scale
        .min((w as f64 - 2.0 * MARGIN) / cells_w)
        .min((h as f64 - 2.0 * MARGIN) / GLYPH_H as f64);
    let x0 = (w as f64 - cells_w * scale) / 2.0;
    let y0 = (h as f64 - GLYPH_H as f64 * scale) / 2.0;
    let offsets: Vec<(f64, f64)> = glyphs
        .iter()
        .map(|_| {
            if style.char_jitter > 0.0 {
                (
                    rng.random_range(-style.char_jitter..=style.char_jitter),
                    rng.random_range(-style.char_jitter..=style.char_jitter),
                )
            } else {
                (0.0, 0.0)
            }
        })
        .collect();

    let sub = 1.0 / SUPERSAMPLE as f64;
    let weight = sub * sub;
    for (i, (g, (dx, dy))) in glyphs.iter().zip(&offsets).enumerate() {
        let gx = x0 + i as f64 * ADVANCE * scale + dx;
        let gy = y0 + dy;
        let c_lo = gx.floor().max(0.0) as usize;
        let c_hi = ((gx + GLYPH_W as f64 * scale).ceil() as usize).min(w);
        let r_lo = gy.floor().max(0.0) as usize;
        let r_hi = ((gy + GLYPH_H as f64 * scale).ceil() as usize).min(h);
        for r in r_lo..r_hi {
            for c in c_lo..c_hi {
                let mut hits = 0.0;
                for sy in 0..SUPERSAMPLE {
                    let py = r as f64 + (sy as f64 + 0.5) * sub;
                    let v = (py - gy) / scale;
                    if v < 0.0 || v >= GLYPH_H as f64 {
                        continue;
                    }
                    for sx in 0..SUPERSAMPLE {
                        let px = c as f64 + (sx as f64 + 0.5) * sub;
                        let u = (px - gx) / scale;
                        if u >= 0.0 && u < GLYPH_W as f64 && g[v as usize][u as usize] {
                            hits += weight;
                        }
                    }
                }
                let k = r * w + c;
                cov[k] = (cov[k] + hits).min(1.0);
            }
        }
    }
    Ok(cov)
}

fn dilate(cov: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut m: f64 = 0.0;
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    m = m.max(cov[rr * w + cc]);
                }
            }
            out[r * w + c] = m;
        }
    }
    out
}

/// Rotates a plane about its center by `deg` degrees with bilinear resampling.
pub fn rotate_plane(src: &[f64], h: usize, w: usize, deg: f64) -> Vec<f64> {
    if deg == 0.0 {
        return src.to_vec();
    }
    let (s, c) = deg.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            let (y, x) = (r as f64 - cy, col as f64 - cx);
            // inverse map: rotate the destination point by -deg
            let sx = c * x + s * y + cx;
            let sy = -s * x + c * y + cy;
            out.push(sample_bilinear(src, h, w, sy, sx));
        }
    }
    out
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Renders `text` into a `RENDER_H × RENDER_W` RGB image.
pub fn render_text(text: &str, style: &RenderStyle, rng: &mut impl Rng) -> Result<RgbImage> {
    let (h, w) = (RENDER_H, RENDER_W);
    let mut cov = text_coverage(text, style, rng)?;
    if style.max_dilation > 0 && rng.random_range(0..=style.max_dilation) > 0 {
        cov = dilate(&cov, h, w);
    }
    if style.max_rotation_deg > 0.0 {
        let deg = rng.random_range(-style.max_rotation_deg..=style.max_rotation_deg);
        cov = rotate_plane(&cov, h, w, deg);
    }

    let bg_level: f64 = rng.random();
    let contrast = style.min_contrast.min(0.95);
    let fg_level = if bg_level > 0.5 {
        uniform(rng, 0.0, (bg_level - contrast).max(0.0))
    } else {
        uniform(rng, (bg_level + contrast).min(1.0), 1.0)
    };
    let tint = |rng: &mut _, level: f64| -> [f64; 3] {
        std::array::from_fn(|_| (level + uniform(rng, -0.08, 0.08)).clamp(0.0, 1.0))
    };
    let bg = tint(rng, bg_level);
    let fg = tint(rng, fg_level);

    let plane = h * w;
    let mut background = vec![0.0; 3 * plane];
    for ch in 0..3 {
        background[ch * plane..(ch + 1) * plane].fill(bg[ch]);
    }
    let clutter = if style.max_clutter > 0 {
        rng.random_range(0..=style.max_clutter)
    } else {
        0
    };
    for _ in 0..clutter {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, cw) = (rng.random_range(2..h / 2), rng.random_range(4..w / 3));
        let shift = uniform(rng, 0.05, 0.2) * if bg_level > 0.5 { -1.0 } else { 1.0 };
        for ch in 0..3 {
            let v = (bg[ch] + shift).clamp(0.0, 1.0);
            for r in r0..(r0 + rh).min(h) {
                for c in c0..(c0 + cw).min(w) {
                    background[ch * plane + r * w + c] = v;
                }
            }
        }
    }
    let mut data = vec![0.0; 3 * plane];
    for ch in 0..3 {
        for i in 0..plane {
            let a = cov[i];
            data[ch * plane + i] = (background[ch * plane + i] * (1.0 - a) + fg[ch] * a).clamp(0.0, 1.0);
        }
    }
    RgbImage::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn same_seed_same_pixels() {
        let style = RenderStyle::default();
        let a = render_text("hello", &style, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = render_text("hello", &style, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn single_glyph_is_centered() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cov = text_coverage("O", &RenderStyle::plain(3.0), &mut rng).unwrap();
        let cols: Vec<usize> = (0..RENDER_W)
            .filter(|&c| (0..RENDER_H).any(|r| cov[r * RENDER_W + c] > 0.0))
            .collect();
        let rows: Vec<usize> = (0..RENDER_H)
            .filter(|&r| (0..RENDER_W).any(|c| cov[r * RENDER_W + c] > 0.0))
            .collect();
        // glyph is 15×21 px at scale 3, origin at ((128-15)/2, (32-21)/2)
        let x0 = (RENDER_W as f64 - 15.0) / 2.0;
        let y0 = (RENDER_H as f64 - 21.0) / 2.0;
        assert_eq!(*cols.first().unwrap(), x0.floor() as usize);
        assert_eq!(*cols.last().unwrap(), (x0 + 15.0).ceil() as usize - 1);
        assert_eq!(*rows.first().unwrap(), y0.floor() as usize);
        let center = (cols[0] + cols[cols.len() - 1] + 1) as f64 / 2.0;
        assert!((center - RENDER_W as f64 / 2.0).abs() <= 0.5);
    }

    #[test]
    fn unknown_glyph_is_data_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            render_text("a#b", &RenderStyle::default(), &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let src: Vec<f64> = (0..20).map(|v| v as f64 / 20.0).collect();
        assert_eq!(rotate_plane(&src, 4, 5, 0.0), src);
    }
}

//! Corner maps from the minimum-eigenvalue (Shi-Tomasi) or Harris response of the
//! image structure tensor.
//!
//! Pipeline: grayscale → 3×3 Sobel gradients → box-window structure tensor →
//! per-pixel response → relative threshold with greedy non-maximum suppression.
//! All border handling uses replicate padding. Window sums run in raster order so
//! results are reproducible bit-for-bit by a direct per-pixel evaluation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    ShiTomasi,
    Harris,
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectorKind::ShiTomasi => "shi_tomasi",
            DetectorKind::Harris => "harris",
        })
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shi_tomasi" | "shi-tomasi" => Ok(DetectorKind::ShiTomasi),
            "harris" => Ok(DetectorKind::Harris),
            other => Err(Error::Config(format!("unknown detector {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    pub kind: DetectorKind,
    /// Odd side length of the box window accumulating gradient products.
    pub window: usize,
    pub harris_k: f64,
    /// Fraction of the maximum response a pixel must exceed.
    pub quality_level: f64,
    /// Minimum Chebyshev distance between accepted corners; 0 disables suppression.
    pub min_distance: usize,
    pub max_corners: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            kind: DetectorKind::ShiTomasi,
            window: 3,
            harris_k: 0.04,
            quality_level: 0.01,
            min_distance: 3,
            max_corners: 512,
        }
    }
}

impl DetectorParams {
    pub fn harris() -> Self {
        Self {
            kind: DetectorKind::Harris,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Param(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.quality_level > 0.0 && self.quality_level < 1.0) {
            return Err(Error::Param(format!(
                "quality_level must lie in (0,1), got {}",
                self.quality_level
            )));
        }
        if !(self.harris_k > 0.0 && self.harris_k < 0.25) {
            return Err(Error::Param(format!(
                "harris_k must lie in (0,0.25), got {}",
                self.harris_k
            )));
        }
        Ok(())
    }
}

/// Horizontal and vertical derivative fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub height: usize,
    pub width: usize,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
}

/// Per-pixel window sums `(Sxx, Sxy, Syy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureTensorField {
    pub height: usize,
    pub width: usize,
    pub sxx: Vec<f64>,
    pub sxy: Vec<f64>,
    pub syy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub row: usize,
    pub col: usize,
    pub response: f64,
}

/// Binary corner mask plus the accepted corners in descending-response order.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerMap {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u8>,
    pub corners: Vec<Corner>,
}

impl CornerMap {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mask: vec![0; height * width],
            corners: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.corners.len()
    }

    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.width + col] == 1
    }

    /// The mask as `{0.0, 1.0}` floats, row-major.
    pub fn as_f64(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| m as f64).collect()
    }

    /// PGM pixel bytes: corner = 255, background = 0.
    pub fn pgm_bytes(&self) -> Vec<u8> {
        self.mask.iter().map(|&m| if m == 1 { 255 } else { 0 }).collect()
    }

    /// `row col response` lines sorted by descending response.
    pub fn corner_list(&self) -> String {
        let mut out = String::new();
        for c in &self.corners {
            out.push_str(&format!("{} {} {}\n", c.row, c.col, c.response));
        }
        out
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// 3×3 Sobel derivatives, `Ix` positive to the right and `Iy` positive downwards.
pub fn sobel_gradients(g: &GrayImage) -> Result<Gradients> {
    let (h, w) = (g.height, g.width);
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "sobel needs at least 3x3 pixels, got {h}x{w}"
        )));
    }
    let mut ix = vec![0.0; h * w];
    let mut iy = vec![0.0; h * w];
    for r in 0..h {
        let up = clamp_index(r as isize - 1, h);
        let down = clamp_index(r as isize + 1, h);
        for c in 0..w {
            let left = clamp_index(c as isize - 1, w);
            let right = clamp_index(c as isize + 1, w);
            let p = |rr: usize, cc: usize| g.get(rr, cc);
            // positive taps minus negative taps, so flat regions cancel exactly
            let gx = (p(up, right) + 2.0 * p(r, right) + p(down, right))
                - (p(up, left) + 2.0 * p(r, left) + p(down, left));
            let gy = (p(down, left) + 2.0 * p(down, c) + p(down, right))
                - (p(up, left) + 2.0 * p(up, c) + p(up, right));
            ix[r * w + c] = gx;
            iy[r * w + c] = gy;
        }
    }
    Ok(Gradients {
        height: h,
        width: w,
        ix,
        iy,
    })
}

pub fn structure_tensor(grad: &Gradients, window: usize) -> Result<StructureTensorField> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Param(format!(
            "structure tensor window must be odd and >= 3, got {window}"
        )));
    }
    let (h, w) = (grad.height, grad.width);
    let half = (window / 2) as isize;
    let mut sxx = vec![0.0; h * w];
    let mut sxy = vec![0.0; h * w];
    let mut syy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
            for dy in -half..=half {
                let rr = clamp_index(r as isize + dy, h);
                for dx in -half..=half {
                    let cc = clamp_index(c as isize + dx, w);
                    let gx = grad.ix[rr * w + cc];
                    let gy = grad.iy[rr * w + cc];
                    a += gx * gx;
                    b += gx * gy;
                    d += gy * gy;
                }
            }
            sxx[r * w + c] = a;
            sxy[r * w + c] = b;
            syy[r * w + c] = d;
        }
    }
    Ok(StructureTensorField {
        height: h,
        width: w,
        sxx,
        sxy,
        syy,
    })
}

/// Smaller eigenvalue of `[[a, b], [b, c]]`.
#[inline]
pub fn min_eigenvalue(a: f64, b: f64, c: f64) -> f64 {
    let mean = (a + c) / 2.0;
    let half_diff = (a - c) / 2.0;
    mean - (half_diff * half_diff + b * b).sqrt()
}

#[inline]
pub fn harris_score(a: f64, b: f64, c: f64, k: f64) -> f64 {
    let trace = a + c;
    (a * c - b * b) - k * trace * trace
}

pub fn min_eigen_response(s: &StructureTensorField) -> ResponseField {
    let values = (0..s.sxx.len())
        .map(|i| min_eigenvalue(s.sxx[i], s.sxy[i], s.syy[i]))
        .collect();
    ResponseField {
        height: s.height,
        width: s.width,
        values,
    }
}

pub fn harris_response(s: &StructureTensorField, k: f64) -> Result<ResponseField> {
    if !(k > 0.0 && k < 0.25) {
        return Err(Error::Param(format!("harris k must lie in (0,0.25), got {k}")));
    }
    let values = (0..s.sxx.len())
        .map(|i| harris_score(s.sxx[i], s.sxy[i], s.syy[i], k))
        .collect();
    Ok(ResponseField {
        height: s.height,
        width: s.width,
        values,
    })
}

/// Accepts pixels with `R > quality_level · max(R)` greedily in descending response
/// order (ties by row, then column), skipping any closer than `min_distance` to an
/// already accepted corner, until `max_corners` are taken.
pub fn threshold_nms(resp: &ResponseField, params: &DetectorParams) -> Result<CornerMap> {
    let (h, w) = (resp.height, resp.width);
    if resp.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("corner response contains non-finite values".into()));
    }
    let max = resp.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut map = CornerMap::empty(h, w);
    if max <= 0.0 || params.max_corners == 0 {
        return Ok(map);
    }
    let threshold = params.quality_level * max;
    let mut candidates: Vec<usize> = (0..h * w).filter(|&i| resp.values[i] > threshold).collect();
    candidates.sort_by(|&i, &j| resp.values[j].total_cmp(&resp.values[i]).then(i.cmp(&j)));

    let md = params.min_distance as isize;
    for i in candidates {
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        if md > 1 {
            let mut blocked = false;
            'scan: for rr in (r - md + 1).max(0)..=(r + md - 1).min(h as isize - 1) {
                for cc in (c - md + 1).max(0)..=(c + md - 1).min(w as isize - 1) {
                    if map.mask[rr as usize * w + cc as usize] == 1 {
                        blocked = true;
                        break 'scan;
                    }
                }
            }
            if blocked {
                continue;
            }
        }
        map.mask[i] = 1;
        map.corners.push(Corner {
            row: r as usize,
            col: c as usize,
            response: resp.values[i],
        });
        if map.corners.len() >= params.max_corners {
            break;
        }
    }
    Ok(map)
}

pub fn response_for(gray: &GrayImage, params: &DetectorParams) -> Result<ResponseField> {
    params.validate()?;
    let grad = sobel_gradients(gray)?;
    let s = structure_tensor(&grad, params.window)?;
    match params.kind {
        DetectorKind::ShiTomasi => Ok(min_eigen_response(&s)),
        DetectorKind::Harris => harris_response(&s, params.harris_k),
    }
}

pub fn detect_corners_gray(gray: &GrayImage, params: &DetectorParams) -> Result<CornerMap> {
    let resp = response_for(gray, params)?;
    threshold_nms(&resp, params)
}

pub fn detect_corners(image: &RgbImage, params: &DetectorParams) -> Result<CornerMap> {
    detect_corners_gray(&image.to_grayscale(), params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(a: f64, b: f64, c: f64) -> StructureTensorField {
        StructureTensorField {
            height: 1,
            width: 1,
            sxx: vec![a],
            sxy: vec![b],
            syy: vec![c],
        }
    }

    #[test]
    fn eigen_readoffs() {
        assert_eq!(min_eigen_response(&field(2.0, 0.0, 2.0)).values[0], 2.0);
        assert_eq!(min_eigen_response(&field(3.0, 0.0, 1.0)).values[0], 1.0);
    }

    #[test]
    fn harris_substitution() {
        assert_eq!(harris_response(&field(0.0, 0.0, 0.0), 0.04).unwrap().values[0], 0.0);
        let r = harris_response(&field(1.0, 0.0, 1.0), 0.04).unwrap().values[0];
        assert!((r - 0.84).abs() < 1e-12);
        assert!(harris_response(&field(1.0, 0.0, 1.0), 0.3).is_err());
    }

    #[test]
    fn flat_field_has_zero_gradient() {
        let g = GrayImage::filled(5, 7, 0.4);
        let grad = sobel_gradients(&g).unwrap();
        assert!(grad.ix.iter().chain(&grad.iy).all(|v| *v == 0.0));
        assert!(sobel_gradients(&GrayImage::filled(2, 9, 0.0)).is_err());
    }

    #[test]
    fn vertical_step_edge() {
        let (h, w) = (6, 8);
        let data = (0..h * w).map(|i| if i % w >= 4 { 1.0 } else { 0.0 }).collect();
        let g = GrayImage::new(h, w, data).unwrap();
        let grad = sobel_gradients(&g).unwrap();
        let max = grad.ix.iter().cloned().fold(0.0, f64::max);
        for r in 0..h {
            // the step sits between columns 3 and 4
            assert_eq!(grad.ix[r * w + 3], max);
            assert_eq!(grad.ix[r * w + 4], max);
            for c in 0..w {
                assert_eq!(grad.iy[r * w + c], 0.0);
            }
        }
    }

    #[test]
    fn unit_gradient_window_counts() {
        let grad = Gradients {
            height: 4,
            width: 4,
            ix: vec![1.0; 16],
            iy: vec![0.0; 16],
        };
        let s = structure_tensor(&grad, 3).unwrap();
        assert!(s.sxx.iter().all(|v| *v == 9.0));
        assert!(s.sxy.iter().chain(&s.syy).all(|v| *v == 0.0));
        assert!(matches!(structure_tensor(&grad, 4), Err(Error::Param(_))));
    }

    #[test]
    fn nms_disabled_equals_plain_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..32 * 32).map(|_| rng.random::<f64>()).collect();
        let g = GrayImage::new(32, 32, data).unwrap();
        let params = DetectorParams {
            min_distance: 0,
            max_corners: usize::MAX,
            quality_level: 0.3,
            ..DetectorParams::default()
        };
        let resp = response_for(&g, &params).unwrap();
        let map = threshold_nms(&resp, &params).unwrap();
        let max = resp.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (i, v) in resp.values.iter().enumerate() {
            assert_eq!(map.mask[i] == 1, *v > 0.3 * max);
        }
    }

    #[test]
    fn uniform_and_black_images_have_no_corners() {
        let p = DetectorParams::default();
        assert_eq!(detect_corners_gray(&GrayImage::filled(32, 32, 0.7), &p).unwrap().count(), 0);
        assert_eq!(detect_corners(&GrayImage::filled(32, 128, 0.0).to_rgb(), &p).unwrap().count(), 0);
    }

    #[test]
    fn invalid_params() {
        let p = DetectorParams {
            window: 4,
            ..DetectorParams::default()
        };
        assert!(p.validate().is_err());
        let p = DetectorParams {
            quality_level: 1.0,
            ..DetectorParams::default()
        };
        assert!(p.validate().is_err());
    }
}

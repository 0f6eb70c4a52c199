#![allow(dead_code)]

use cornerstr::corners::{DetectorKind, DetectorParams};
use cornerstr::data::AugmentPolicy;
use cornerstr::image::{GrayImage, RgbImage};
use cornerstr::model::ModelConfig;
use cornerstr::train::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod corner_oracle {
    //! Direct per-pixel evaluation: every pixel recomputes its own window of
    //! Sobel derivatives from raw intensities, with no shared intermediate fields.
    use super::*;

    pub fn luma(img: &RgbImage) -> GrayImage {
        let n = img.height * img.width;
        let d = &img.data;
        let data = (0..n)
            .map(|i| (0.299 * d[i] + 0.587 * d[n + i] + 0.114 * d[2 * n + i]).clamp(0.0, 1.0))
            .collect();
        GrayImage::new(img.height, img.width, data).unwrap()
    }

    fn px(img: &GrayImage, r: isize, c: isize) -> f64 {
        let rr = r.clamp(0, img.height as isize - 1) as usize;
        let cc = c.clamp(0, img.width as isize - 1) as usize;
        img.data[rr * img.width + cc]
    }

    fn sobel_at(img: &GrayImage, r: isize, c: isize) -> (f64, f64) {
        let r = r.clamp(0, img.height as isize - 1);
        let c = c.clamp(0, img.width as isize - 1);
        let p = |dr: isize, dc: isize| px(img, r + dr, c + dc);
        let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        (gx, gy)
    }

    pub fn response(img: &GrayImage, params: &DetectorParams) -> Vec<f64> {
        let half = (params.window / 2) as isize;
        let mut out = Vec::with_capacity(img.height * img.width);
        for r in 0..img.height as isize {
            for c in 0..img.width as isize {
                let (mut a, mut b, mut d) = (0.0, 0.0, 0.0);
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (gx, gy) = sobel_at(img, r + dy, c + dx);
                        a += gx * gx;
                        b += gx * gy;
                        d += gy * gy;
                    }
                }
                out.push(match params.kind {
                    DetectorKind::ShiTomasi => (a + d) / 2.0 - (((a - d) / 2.0).powi(2) + b * b).sqrt(),
                    DetectorKind::Harris => (a * d - b * b) - params.harris_k * (a + d) * (a + d),
                });
            }
        }
        out
    }

    /// Greedy selection by scanning the full accepted list for every candidate.
    pub fn detect(img: &GrayImage, params: &DetectorParams) -> Vec<u8> {
        let resp = response(img, params);
        let w = img.width;
        let max = resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut mask = vec![0u8; resp.len()];
        if max <= 0.0 {
            return mask;
        }
        let thr = params.quality_level * max;
        let mut cand: Vec<(f64, usize, usize)> = resp
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > thr)
            .map(|(i, v)| (*v, i / w, i % w))
            .collect();
        cand.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then((x.1, x.2).cmp(&(y.1, y.2))));
        let mut accepted: Vec<(usize, usize)> = Vec::new();
        for (_, r, c) in cand {
            if accepted.len() >= params.max_corners {
                break;
            }
            let ok = accepted.iter().all(|&(ar, ac)| {
                let d = (ar as isize - r as isize).abs().max((ac as isize - c as isize).abs());
                d as usize >= params.min_distance
            });
            if ok {
                accepted.push((r, c));
                mask[r * w + c] = 1;
            }
        }
        mask
    }
}

/// Blocky grayscale content so that corners exist and ties are rare.
pub fn random_gray(rng: &mut ChaCha8Rng, h: usize, w: usize) -> GrayImage {
    let mut img = GrayImage::filled(h, w, 0.0);
    for _ in 0..12 {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, cw) = (rng.random_range(2..10), rng.random_range(2..20));
        let v: f64 = rng.random();
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                img.set(r, c, v);
            }
        }
    }
    for v in img.data.iter_mut() {
        *v = (*v + rng.random_range(0.0..0.05)).min(1.0);
    }
    img
}

/// Colored rectangles over noise.
pub fn random_rgb(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
    let n = h * w;
    let mut data: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.0..0.05)).collect();
    for _ in 0..12 {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (rh, cw) = (rng.random_range(2..10), rng.random_range(2..20));
        let color: [f64; 3] = std::array::from_fn(|_| rng.random());
        for r in r0..(r0 + rh).min(h) {
            for c in c0..(c0 + cw).min(w) {
                for (ch, v) in color.iter().enumerate() {
                    data[ch * n + r * w + c] = (v + data[ch * n + r * w + c]).min(1.0);
                }
            }
        }
    }
    RgbImage::new(h, w, data).unwrap()
}

pub fn square_image() -> GrayImage {
    let mut img = GrayImage::filled(32, 32, 0.0);
    for r in 12..20 {
        for c in 12..20 {
            img.set(r, c, 1.0);
        }
    }
    img
}

pub mod align_oracle {
    //! Alignment by explicit search over edit sequences, with no dynamic-programming table.

    #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
    enum Op {
        Match,
        Sub,
        Del,
        Ins,
    }

    fn moves(p: &[char], g: &[char], i: usize, j: usize) -> Vec<(Op, usize, usize, usize)> {
        let mut out = Vec::new();
        if i > 0 && j > 0 {
            if g[i - 1] == p[j - 1] {
                out.push((Op::Match, i - 1, j - 1, 0));
            } else {
                out.push((Op::Sub, i - 1, j - 1, 1));
            }
        }
        if i > 0 {
            out.push((Op::Del, i - 1, j, 1));
        }
        if j > 0 {
            out.push((Op::Ins, i, j - 1, 1));
        }
        out
    }

    fn min_cost(p: &[char], g: &[char], i: usize, j: usize, spent: usize, best: &mut usize) {
        if spent + i.abs_diff(j) >= *best {
            return;
        }
        if i == 0 && j == 0 {
            *best = spent;
            return;
        }
        for (_, ni, nj, c) in moves(p, g, i, j) {
            min_cost(p, g, ni, nj, spent + c, best);
        }
    }

    /// Walks from the string ends trying ops in preference order; the first
    /// complete edit sequence of optimal cost is returned as its match count.
    fn first_optimal(p: &[char], g: &[char], i: usize, j: usize, budget: usize, matches: usize) -> Option<usize> {
        if i.abs_diff(j) > budget {
            return None;
        }
        if i == 0 && j == 0 {
            return Some(matches);
        }
        for (op, ni, nj, c) in moves(p, g, i, j) {
            if c > budget {
                continue;
            }
            if let Some(m) = first_optimal(p, g, ni, nj, budget - c, matches + usize::from(op == Op::Match)) {
                return Some(m);
            }
        }
        None
    }

    /// Matched characters of the preferred minimum-cost alignment of `pred` against `gt`.
    pub fn matches(pred: &str, gt: &str) -> usize {
        let p: Vec<char> = pred.chars().collect();
        let g: Vec<char> = gt.chars().collect();
        let mut best = p.len() + g.len() + 1;
        min_cost(&p, &g, g.len(), p.len(), 0, &mut best);
        first_optimal(&p, &g, g.len(), p.len(), best, 0).expect("an optimal alignment exists")
    }

    /// Recall and precision of one pair, with the empty-side conventions.
    pub fn prf(pred: &str, gt: &str) -> (f64, f64) {
        let m = matches(pred, gt) as f64;
        let (g, p) = (gt.chars().count(), pred.chars().count());
        let ratio = |den: usize, other: usize| match (den, other) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => m / den as f64,
        };
        (ratio(g, p), ratio(p, g))
    }
}

/// All strings over `alphabet` with length at most `max_len`.
pub fn all_strings(alphabet: &[char], max_len: usize) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut frontier = vec![String::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &c in alphabet {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Small model used by the training-based tests.
pub fn overfit_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        n_heads: 2,
        n_enc_blocks: 2,
        n_dec_blocks: 1,
        ffn_dim: 64,
        proj_hidden: 32,
        proj_out: 32,
        image_h: 16,
        image_w: 64,
        max_len: 12,
        ..ModelConfig::toy()
    }
}

pub fn overfit_train_config(max_steps: usize, lambda: f64) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 16,
        epochs: 1000,
        decay_epoch: 1000,
        max_steps: Some(max_steps),
        lambda,
        augment: AugmentPolicy::disabled(),
        seed: 7,
        ..TrainConfig::default()
    }
}

/// A model small enough for many forward passes in a test.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_enc_blocks: 1,
        n_dec_blocks: 1,
        ffn_dim: 32,
        proj_hidden: 16,
        proj_out: 16,
        image_h: 16,
        image_w: 64,
        max_len: 12,
        ..ModelConfig::toy()
    }
}

pub fn tiny_train_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        epochs,
        decay_epoch: epochs,
        augment: AugmentPolicy::disabled(),
        ..TrainConfig::default()
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn near(map: &cornerstr::corners::CornerMap, row: f64, col: f64, tol: f64) -> bool {
    map.corners
        .iter()
        .any(|c| ((c.row as f64 - row).powi(2) + (c.col as f64 - col).powi(2)).sqrt() <= tol)
}

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::render::rotate_plane;
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentPolicy {
    pub rotation: bool,
    pub gaussian_noise: bool,
    pub max_rotation_deg: f64,
    pub max_noise_sigma: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotation: true,
            gaussian_noise: true,
            max_rotation_deg: 10.0,
            max_noise_sigma: 0.05,
        }
    }
}

impl AugmentPolicy {
    pub fn disabled() -> Self {
        Self {
            rotation: false,
            gaussian_noise: false,
            ..Self::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.rotation || self.gaussian_noise
    }
}

pub fn rotate(img: &RgbImage, deg: f64) -> RgbImage {
    let mut data = Vec::with_capacity(img.data.len());
    for c in 0..3 {
        data.extend(rotate_plane(img.plane(c), img.height, img.width, deg));
    }
    RgbImage {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Adds zero-mean Gaussian noise of standard deviation `sigma`, clamped to `[0,1]`.
pub fn add_noise(img: &RgbImage, sigma: f64, rng: &mut impl Rng) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    RgbImage {
        height: img.height,
        width: img.width,
        data: img
            .data
            .iter()
            .map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
            .collect(),
    }
}

/// Random rotation in `±max_rotation_deg` and/or noise with σ uniform in `[0, max_noise_sigma]`.
pub fn augment(img: &RgbImage, rng: &mut impl Rng, policy: &AugmentPolicy) -> RgbImage {
    let mut out = img.clone();
    if policy.rotation && policy.max_rotation_deg > 0.0 {
        let deg = rng.random_range(-policy.max_rotation_deg..=policy.max_rotation_deg);
        out = rotate(&out, deg);
    }
    if policy.gaussian_noise && policy.max_noise_sigma > 0.0 {
        let sigma = rng.random_range(0.0..=policy.max_noise_sigma);
        out = add_noise(&out, sigma, rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img() -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        RgbImage::new(8, 16, (0..3 * 128).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn disabled_policy_is_bitwise_noop() {
        let src = img();
        let out = augment(&src, &mut ChaCha8Rng::seed_from_u64(0), &AugmentPolicy::disabled());
        assert_eq!(out, src);
    }

    #[test]
    fn identity_transforms() {
        let src = img();
        let r = rotate(&src, 0.0);
        let n = add_noise(&r, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        for (a, b) in n.data.iter().zip(&src.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn output_stays_in_unit_range() {
        let src = img();
        let policy = AugmentPolicy {
            max_noise_sigma: 0.5,
            ..AugmentPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let out = augment(&src, &mut rng, &policy);
            assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

//! Value rescaling and stochastic corruption of tiles.

use ndarray::{Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Blur kernel radius in pixels (a 5x5 truncated Gaussian).
pub const BLUR_RADIUS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueTransform {
    #[default]
    None,
    /// `(v - min) / (max - min)`; a constant image maps to zeros.
    Normalize01,
    /// Zero mean, unit (population) standard deviation.
    Standardize,
    /// `2 (v - min) / (max - min) - 1`; a constant image maps to zeros.
    Symmetric,
    /// `v / 255`.
    Div255,
}

pub fn apply_value_transform(img: &Array2<f64>, t: ValueTransform) -> Result<Array2<f64>> {
    if img.is_empty() {
        return Err(Error::Empty("image"));
    }
    let (lo, hi) = img.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    Ok(match t {
        ValueTransform::None => img.clone(),
        ValueTransform::Div255 => img / 255.0,
        ValueTransform::Normalize01 if span > 0.0 => img.mapv(|v| (v - lo) / span),
        ValueTransform::Symmetric if span > 0.0 => img.mapv(|v| 2.0 * (v - lo) / span - 1.0),
        ValueTransform::Normalize01 | ValueTransform::Symmetric => Array2::zeros(img.dim()),
        ValueTransform::Standardize => {
            let n = img.len() as f64;
            let mean = img.sum() / n;
            let var = img.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var <= 0.0 {
                return Err(Error::ConstantImage);
            }
            let sd = var.sqrt();
            img.mapv(|v| (v - mean) / sd)
        }
    })
}

/// Magnitude limits for the tile corruptions. A maximum of zero disables
/// that corruption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSpec {
    pub blur_sigma_max: f64,
    /// Gray levels.
    pub noise_sigma_max: f64,
    pub brightness_max: f64,
    pub flip_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        Self { blur_sigma_max: 0.0, noise_sigma_max: 0.0, brightness_max: 0.0, flip_prob: 0.5, seed: 0 }
    }
}

impl CorruptionSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.blur_sigma_max) && ok(self.noise_sigma_max) && ok(self.brightness_max)) {
            return Err(Error::Config("corruption maxima must be finite and >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob)));
        }
        Ok(())
    }
}

fn gaussian_kernel(sigma: f64) -> [f64; 2 * BLUR_RADIUS + 1] {
    let mut k = [0.0; 2 * BLUR_RADIUS + 1];
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - BLUR_RADIUS as f64;
        *w = (-x * x / (2.0 * sigma * sigma)).exp();
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= total);
    k
}

fn convolve_axis(img: &Array2<f64>, kernel: &[f64], axis: Axis) -> Array2<f64> {
    let mut out = Array2::zeros(img.dim());
    let len = img.len_of(axis) as isize;
    for (src, mut dst) in img.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        for i in 0..len {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                // Edge pixels are replicated.
                let j = (i + k as isize - BLUR_RADIUS as isize).clamp(0, len - 1);
                acc += w * src[j as usize];
            }
            dst[i as usize] = acc;
        }
    }
    out
}

/// Separable Gaussian blur with a fixed radius-2 kernel. `sigma <= 0` is a
/// no-op.
pub fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 1e-12 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    convolve_axis(&convolve_axis(img, &k, Axis(1)), &k, Axis(0))
}

pub fn add_noise<R: Rng + ?Sized>(img: &Array2<f64>, sd: f64, rng: &mut R) -> Array2<f64> {
    if sd <= 0.0 {
        return img.clone();
    }
    let normal = Normal::new(0.0, sd).expect("finite sd");
    img.mapv(|v| v + normal.sample(rng))
}

pub fn adjust_brightness(img: &Array2<f64>, factor: f64) -> Array2<f64> {
    img.mapv(|v| v * factor)
}

pub fn clip_gray(img: &Array2<f64>) -> Array2<f64> {
    img.mapv(|v| v.clamp(0.0, 255.0))
}

/// Blur, then noise, then brightness, each with a magnitude drawn uniformly
/// from `[0, max)`, and finally clipping to `[0, 255]`. Disabled corruptions
/// consume no random numbers.
pub fn corrupt<R: Rng + ?Sized>(tile: &Array2<f64>, spec: &CorruptionSpec, rng: &mut R) -> Array2<f64> {
    let mut out = tile.clone();
    if spec.blur_sigma_max > 0.0 {
        let sigma = rng.random_range(0.0..spec.blur_sigma_max);
        out = gaussian_blur(&out, sigma);
    }
    if spec.noise_sigma_max > 0.0 {
        let sd = rng.random_range(0.0..spec.noise_sigma_max);
        out = add_noise(&out, sd, rng);
    }
    if spec.brightness_max > 0.0 {
        let factor = rng.random_range(0.0..spec.brightness_max);
        out = adjust_brightness(&out, factor);
    }
    clip_gray(&out)
}

/// Flips tile and mask together along x and along y, each independently
/// with probability `prob`.
pub fn random_flip<R: Rng + ?Sized, T: Clone, M: Clone>(
    tile: &Array2<T>,
    mask: &Array2<M>,
    prob: f64,
    rng: &mut R,
) -> Result<(Array2<T>, Array2<M>)> {
    if tile.dim() != mask.dim() {
        return Err(Error::Dimensions {
            expected_nx: tile.ncols(),
            expected_ny: tile.nrows(),
            nx: mask.ncols(),
            ny: mask.nrows(),
        });
    }
    let flip_x = rng.random_bool(prob);
    let flip_y = rng.random_bool(prob);
    Ok((flip(tile, flip_x, flip_y), flip(mask, flip_x, flip_y)))
}

pub fn flip<T: Clone>(a: &Array2<T>, flip_x: bool, flip_y: bool) -> Array2<T> {
    let mut v = a.view();
    if flip_x {
        v.invert_axis(Axis(1));
    }
    if flip_y {
        v.invert_axis(Axis(0));
    }
    v.to_owned()
}

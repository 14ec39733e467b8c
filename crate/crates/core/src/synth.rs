//! Deterministic synthetic test images: smooth backgrounds with Gaussian
//! features of roughly 10 to 40 px scale, normalized into `[0.1, 0.9]`.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scalar::Scalar;

const LO: f64 = 0.1;
const HI: f64 = 0.9;

pub fn synthetic_image<T: Scalar>(height: usize, width: usize, seed: u64) -> Result<Image<T>> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("synthetic image needs a non-zero size"));
    }
    let mut rng = rng_from_seed(seed);
    let (hf, wf) = (height as f64, width as f64);
    let n_blobs = ((hf * wf / 900.0).round() as usize).clamp(4, 400);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let r = rng.random_range(0.0..hf);
            let c = rng.random_range(0.0..wf);
            let sigma = rng.random_range(5.0..20.0);
            let amp = rng.random_range(-1.0..1.0);
            (r, c, sigma, amp)
        })
        .collect();
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let period = rng.random_range(60.0..200.0);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = rng.random_range(0.1..0.4);
            (std::f64::consts::TAU / period, angle, phase, amp)
        })
        .collect();
    let raw = Image::from_fn(height, width, |r, c| {
        let (y, x) = (r as f64, c as f64);
        let mut v = 0.0;
        for &(k, angle, phase, amp) in &waves {
            v += amp * (k * (x * angle.cos() + y * angle.sin()) + phase).sin();
        }
        for &(br, bc, sigma, amp) in &blobs {
            let d2 = (y - br).powi(2) + (x - bc).powi(2);
            if d2 < 16.0 * sigma * sigma {
                v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
        v
    });
    let (lo, hi) = raw.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    Ok(Image::from_fn(height, width, |r, c| {
        T::of(LO + (HI - LO) * (raw.get(r, c) - lo) / span)
    }))
}

/// `n` images, the `i`-th seeded from `derive_seed(seed, [i])`.
pub fn synthetic_corpus<T: Scalar>(n: usize, height: usize, width: usize, seed: u64) -> Result<Vec<Image<T>>> {
    (0..n)
        .map(|i| synthetic_image(height, width, derive_seed(seed, &[i as u64])))
        .collect()
}

//! Evaluation statistics: MSE, masked RMSE, SSIM, accumulated error maps,
//! Laplacian variance, histograms and Scott's-rule kernel density estimates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_pgm, BitDepth, Image};
use crate::scalar::Scalar;
use crate::scan_path::BinaryMask;

pub fn mse<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    Ok(T::of(sum / a.len() as f64))
}

/// Root-mean-square difference over scanned (`over_unscanned = false`) or
/// unscanned (`true`) pixels of `mask`.
pub fn masked_rmse<T: Scalar>(
    a: &Image<T>,
    b: &Image<T>,
    mask: &BinaryMask,
    over_unscanned: bool,
) -> Result<T> {
    a.same_shape(b)?;
    if mask.height() != a.height() || mask.width() != a.width() {
        return Err(Error::DimensionMismatch(
            a.height(),
            a.width(),
            mask.height(),
            mask.width(),
        ));
    }
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for ((x, y), &bit) in a.data().iter().zip(b.data()).zip(mask.bits()) {
        if bit != over_unscanned {
            let d = x.as_f64() - y.as_f64();
            sum += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptySelection);
    }
    Ok(T::of((sum / n as f64).sqrt()))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" correlation; output is `(h - k + 1) × (w - k + 1)`.
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all fully-contained 11×11 Gaussian (σ = 1.5) windows, dynamic range 1.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<T> {
    a.same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            needed: SSIM_WINDOW,
        });
    }
    let x: Vec<f64> = a.data().iter().map(|v| v.as_f64()).collect();
    let y: Vec<f64> = b.data().iter().map(|v| v.as_f64()).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let [mx, my, mxx, myy, mxy] =
        [&x, &y, &xx, &yy, &xy].map(|d| filter_valid(d, h, w, &taps));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(T::of(total / n as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Absolute,
    Squared,
}

/// Per-pixel error sums across many instances. Stores sums, so partial maps
/// from independent workers merge by addition.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap<T = f64> {
    height: usize,
    width: usize,
    sum: Vec<T>,
    sum_sq: Vec<T>,
    n: usize,
}

impl<T: Scalar> ErrorMap<T> {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sum: vec![T::zero(); height * width],
            sum_sq: vec![T::zero(); height * width],
            n: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        if h != self.height || w != self.width {
            return Err(Error::DimensionMismatch(self.height, self.width, h, w));
        }
        Ok(())
    }

    pub fn accumulate(&mut self, a: &Image<T>, b: &Image<T>, kind: ErrorKind) -> Result<()> {
        a.same_shape(b)?;
        self.check(a.height(), a.width())?;
        for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
            let d = x - y;
            let e = match kind {
                ErrorKind::Absolute => d.abs(),
                ErrorKind::Squared => d * d,
            };
            self.sum[i] = self.sum[i] + e;
            self.sum_sq[i] = self.sum_sq[i] + e * e;
        }
        self.n += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        self.check(other.height, other.width)?;
        for (s, o) in self.sum.iter_mut().zip(&other.sum) {
            *s = *s + *o;
        }
        for (s, o) in self.sum_sq.iter_mut().zip(&other.sum_sq) {
            *s = *s + *o;
        }
        self.n += other.n;
        Ok(())
    }

    pub fn mean(&self) -> Result<Image<T>> {
        if self.n == 0 {
            return Err(Error::invalid("error map has no accumulations"));
        }
        let n = T::of(self.n as f64);
        Image::new(self.height, self.width, self.sum.iter().map(|&s| s / n).collect())
    }

    /// Population standard deviation per pixel.
    pub fn std(&self) -> Result<Image<T>> {
        if self.n == 0 {
            return Err(Error::invalid("error map has no accumulations"));
        }
        let n = T::of(self.n as f64);
        let data = self
            .sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(&s, &q)| {
                let m = s / n;
                (q / n - m * m).max(T::zero()).sqrt()
            })
            .collect();
        Image::new(self.height, self.width, data)
    }
}

/// Affine range mapping recorded next to an exported 16-bit map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeMapping {
    pub lo: f64,
    pub hi: f64,
    pub maxval: u32,
}

/// Writes `img` as a 16-bit PGM after mapping `[min, max]` onto `[0, 65535]`,
/// plus a JSON sidecar (`<path>.json`) with the mapping.
pub fn export_map<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<RangeMapping> {
    let path = path.as_ref();
    let (lo, hi) = img.min_max();
    let (lo, hi) = (lo.as_f64(), hi.as_f64());
    let span = hi - lo;
    let scaled: Image<f64> = img.cast::<f64>().map(|v| if span > 0.0 { (v - lo) / span } else { 0.0 });
    save_pgm(&scaled, path, BitDepth::Sixteen)?;
    let mapping = RangeMapping {
        lo,
        hi,
        maxval: BitDepth::Sixteen.max_value(),
    };
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    let json = serde_json::to_string_pretty(&mapping).expect("mapping serializes");
    std::fs::write(&sidecar, json).map_err(|e| Error::io(std::path::PathBuf::from(&sidecar), e))?;
    Ok(mapping)
}

pub fn laplacian_variance<T: Scalar>(map: &ErrorMap<T>) -> Result<T> {
    if map.n < 2 {
        return Err(Error::invalid("laplacian variance needs at least 2 accumulations"));
    }
    laplacian_variance_of(&map.mean()?)
}

/// Standardizes `img` to zero mean and unit variance, applies the 5-point
/// Laplacian with reflection at the borders, and returns the variance.
pub fn laplacian_variance_of<T: Scalar>(img: &Image<T>) -> Result<T> {
    let f = img.cast::<f64>();
    let n = f.len() as f64;
    let mean = f.data().iter().sum::<f64>() / n;
    let var = f.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::DegenerateSamples("constant mean map"));
    }
    let (lo, hi) = f.min_max();
    if lo == hi {
        return Err(Error::DegenerateSamples("constant mean map"));
    }
    let sd = var.sqrt();
    let z = f.map(|v| (v - mean) / sd);
    let mut lap = Vec::with_capacity(z.len());
    for r in 0..z.height() as isize {
        for c in 0..z.width() as isize {
            let v = z.get_reflect(r - 1, c)
                + z.get_reflect(r + 1, c)
                + z.get_reflect(r, c - 1)
                + z.get_reflect(r, c + 1)
                - 4.0 * z.get_reflect(r, c);
            lap.push(v);
        }
    }
    let lm = lap.iter().sum::<f64>() / n;
    Ok(T::of(lap.iter().map(|v| (v - lm).powi(2)).sum::<f64>() / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub bins: Vec<u64>,
    pub below: u64,
    pub above: u64,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.bins.len() as f64;
        (self.lo + i as f64 * width, self.lo + (i + 1) as f64 * width)
    }

    /// CSV rows `kind,lo,hi,count`; `kind` is `bin`, `below` or `above`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,lo,hi,count\n");
        s.push_str(&format!("below,,{},{}\n", self.lo, self.below));
        for (i, &c) in self.bins.iter().enumerate() {
            let (a, b) = self.bin_edges(i);
            s.push_str(&format!("bin,{a},{b},{c}\n"));
        }
        s.push_str(&format!("above,{},,{}\n", self.hi, self.above));
        s
    }
}

/// Equispaced bins, left-closed and right-open except the last, which is closed.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, n_bins: usize) -> Result<Histogram> {
    if !(hi > lo) || n_bins == 0 {
        return Err(Error::invalid(format!("histogram range [{lo}, {hi}] with {n_bins} bins")));
    }
    let mut h = Histogram {
        lo,
        hi,
        bins: vec![0; n_bins],
        below: 0,
        above: 0,
    };
    let scale = n_bins as f64 / (hi - lo);
    for &x in samples {
        if x < lo || x.is_nan() {
            h.below += 1;
        } else if x > hi {
            h.above += 1;
        } else {
            let i = (((x - lo) * scale).floor() as usize).min(n_bins - 1);
            h.bins[i] += 1;
        }
    }
    Ok(h)
}

/// Scott's rule bandwidth `σ̂·n^(-1/5)` with the sample standard deviation.
pub fn scott_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::DegenerateSamples("fewer than two samples"));
    }
    if samples.iter().all(|&s| s == samples[0]) {
        return Err(Error::DegenerateSamples("zero spread"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::DegenerateSamples("zero spread"));
    }
    Ok(var.sqrt() * n.powf(-0.2))
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde_scott(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    let h = scott_bandwidth(samples)?;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            samples
                .iter()
                .map(|&s| {
                    let u = (g - s) / h;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

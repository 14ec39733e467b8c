//! Classical denoisers and a benchmark harness for Poisson-corrupted images.
//!
//! All filters work in `f64` internally, pad by half-sample reflection and clamp
//! their output to `[0, 1]`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{apply_poisson, DoseModel};
use crate::error::{Error, Result};
use crate::image::{reflect_index, Image};
use crate::metrics::{gaussian_taps, mse, ssim};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum DenoiserSpec {
    Gaussian { size: usize, sigma: f64 },
    /// `radiometric` is on the 0–255 intensity scale, `spatial` in pixels.
    Bilateral { size: usize, radiometric: f64, spatial: f64 },
    Median { size: usize },
    Wiener { window: usize },
    /// `None` picks `floor(log2(min(h, w))) - 2` levels.
    WaveletBayes { levels: Option<usize> },
    TvChambolle { weight: f64, frac_tol: f64, max_iter: usize },
}

impl DenoiserSpec {
    pub fn gaussian() -> Self {
        DenoiserSpec::Gaussian { size: 3, sigma: 0.8 }
    }

    pub fn bilateral() -> Self {
        DenoiserSpec::Bilateral {
            size: 9,
            radiometric: 75.0,
            spatial: 75.0,
        }
    }

    pub fn median() -> Self {
        DenoiserSpec::Median { size: 3 }
    }

    pub fn wiener() -> Self {
        DenoiserSpec::Wiener { window: 3 }
    }

    pub fn wavelet_bayes() -> Self {
        DenoiserSpec::WaveletBayes { levels: None }
    }

    pub fn tv_chambolle() -> Self {
        DenoiserSpec::TvChambolle {
            weight: 0.1,
            frac_tol: 2.0e-4,
            max_iter: 200,
        }
    }

    /// The six methods with their default parameters.
    pub fn all() -> Vec<Self> {
        vec![
            Self::gaussian(),
            Self::bilateral(),
            Self::median(),
            Self::wiener(),
            Self::wavelet_bayes(),
            Self::tv_chambolle(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            DenoiserSpec::Gaussian { .. } => "gaussian",
            DenoiserSpec::Bilateral { .. } => "bilateral",
            DenoiserSpec::Median { .. } => "median",
            DenoiserSpec::Wiener { .. } => "wiener",
            DenoiserSpec::WaveletBayes { .. } => "wavelet_bayes",
            DenoiserSpec::TvChambolle { .. } => "tv_chambolle",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let odd = |k: usize| k % 2 == 1;
        let ok = match *self {
            DenoiserSpec::Gaussian { size, sigma } => odd(size) && sigma > 0.0,
            DenoiserSpec::Bilateral {
                size,
                radiometric,
                spatial,
            } => odd(size) && radiometric > 0.0 && spatial > 0.0,
            DenoiserSpec::Median { size } => odd(size),
            DenoiserSpec::Wiener { window } => odd(window),
            DenoiserSpec::WaveletBayes { levels } => levels != Some(0),
            DenoiserSpec::TvChambolle {
                weight,
                frac_tol,
                max_iter,
            } => weight > 0.0 && frac_tol > 0.0 && max_iter > 0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid denoiser parameters {self:?}")))
        }
    }

    fn support(&self) -> usize {
        match *self {
            DenoiserSpec::Gaussian { size, .. }
            | DenoiserSpec::Bilateral { size, .. }
            | DenoiserSpec::Median { size } => size,
            DenoiserSpec::Wiener { window } => window,
            DenoiserSpec::WaveletBayes { levels } => 1 << levels.unwrap_or(1),
            DenoiserSpec::TvChambolle { .. } => 2,
        }
    }
}

/// Method name with default parameters.
impl FromStr for DenoiserSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DenoiserSpec::all()
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown denoiser {s:?}")))
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn denoise<T: Scalar>(img: &Image<T>, spec: DenoiserSpec) -> Result<Image<T>> {
    spec.validate()?;
    if !img.is_finite() {
        return Err(Error::NonFinite);
    }
    let (h, w) = (img.height(), img.width());
    let need = spec.support();
    if h < need || w < need {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            needed: need,
        });
    }
    let x: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
    let out = match spec {
        DenoiserSpec::Gaussian { size, sigma } => gaussian(&x, h, w, size, sigma),
        DenoiserSpec::Bilateral {
            size,
            radiometric,
            spatial,
        } => bilateral(&x, h, w, size, radiometric / 255.0, spatial),
        DenoiserSpec::Median { size } => median(&x, h, w, size),
        DenoiserSpec::Wiener { window } => wiener(&x, h, w, window),
        DenoiserSpec::WaveletBayes { levels } => {
            let levels = match levels {
                Some(l) => l,
                None => default_levels(h, w)?,
            };
            wavelet_shrink(&x, h, w, levels, None)
        }
        DenoiserSpec::TvChambolle {
            weight,
            frac_tol,
            max_iter,
        } => tv_chambolle(&x, h, w, weight, frac_tol, max_iter),
    };
    Image::new(h, w, out.into_iter().map(|v| T::of(v.clamp(0.0, 1.0))).collect())
}

fn default_levels(h: usize, w: usize) -> Result<usize> {
    let m = h.min(w);
    let levels = (usize::BITS - 1 - m.leading_zeros()) as usize;
    if levels < 3 {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            needed: 8,
        });
    }
    Ok(levels - 2)
}

#[inline]
fn at(x: &[f64], h: usize, w: usize, r: isize, c: isize) -> f64 {
    x[reflect_index(r, h) * w + reflect_index(c, w)]
}

fn gaussian(x: &[f64], h: usize, w: usize, size: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(size, sigma);
    let half = (size / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            tmp[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * at(x, h, w, r as isize, c as isize + i as isize - half))
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * at(&tmp, h, w, r as isize + i as isize - half, c as isize))
                .sum();
        }
    }
    out
}

fn bilateral(x: &[f64], h: usize, w: usize, size: usize, sigma_r: f64, sigma_s: f64) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut spatial = Vec::with_capacity(size * size);
    for dr in -half..=half {
        for dc in -half..=half {
            let d2 = (dr * dr + dc * dc) as f64;
            spatial.push((dr, dc, (-d2 / (2.0 * sigma_s * sigma_s)).exp()));
        }
    }
    let inv = -1.0 / (2.0 * sigma_r * sigma_r);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let centre = x[r * w + c];
            let (mut num, mut den) = (0.0, 0.0);
            for &(dr, dc, ws) in &spatial {
                let v = at(x, h, w, r as isize + dr, c as isize + dc);
                let d = v - centre;
                let wt = ws * (inv * d * d).exp();
                num += wt * v;
                den += wt;
            }
            out[r * w + c] = num / den;
        }
    }
    out
}

fn median(x: &[f64], h: usize, w: usize, size: usize) -> Vec<f64> {
    let half = (size / 2) as isize;
    let mut win = Vec::with_capacity(size * size);
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            win.clear();
            for dr in -half..=half {
                for dc in -half..=half {
                    win.push(at(x, h, w, r as isize + dr, c as isize + dc));
                }
            }
            let mid = win.len() / 2;
            let (_, m, _) = win.select_nth_unstable_by(mid, f64::total_cmp);
            out[r * w + c] = *m;
        }
    }
    out
}

/// Local-statistics adaptive filter; noise power is the mean local variance.
fn wiener(x: &[f64], h: usize, w: usize, window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    let n = (window * window) as f64;
    let mut mean = vec![0.0; h * w];
    let mut var = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (mut s, mut s2) = (0.0, 0.0);
            for dr in -half..=half {
                for dc in -half..=half {
                    let v = at(x, h, w, r as isize + dr, c as isize + dc);
                    s += v;
                    s2 += v * v;
                }
            }
            let m = s / n;
            mean[r * w + c] = m;
            var[r * w + c] = (s2 / n - m * m).max(0.0);
        }
    }
    let noise = var.iter().sum::<f64>() / (h * w) as f64;
    (0..h * w)
        .map(|i| {
            if var[i] <= noise {
                mean[i]
            } else {
                mean[i] + (1.0 - noise / var[i]) * (x[i] - mean[i])
            }
        })
        .collect()
}

/// One orthonormal Haar analysis step along rows and columns of the top-left
/// `hh × ww` block (both even).
fn haar_step(buf: &mut [f64], stride: usize, hh: usize, ww: usize, tmp: &mut Vec<f64>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for r in 0..hh {
        let row = &mut buf[r * stride..r * stride + ww];
        tmp.clear();
        tmp.extend((0..ww / 2).map(|i| (row[2 * i] + row[2 * i + 1]) * s));
        tmp.extend((0..ww / 2).map(|i| (row[2 * i] - row[2 * i + 1]) * s));
        row.copy_from_slice(tmp);
    }
    for c in 0..ww {
        tmp.clear();
        tmp.extend((0..hh / 2).map(|i| (buf[2 * i * stride + c] + buf[(2 * i + 1) * stride + c]) * s));
        tmp.extend((0..hh / 2).map(|i| (buf[2 * i * stride + c] - buf[(2 * i + 1) * stride + c]) * s));
        for (r, v) in tmp.iter().enumerate() {
            buf[r * stride + c] = *v;
        }
    }
}

fn haar_unstep(buf: &mut [f64], stride: usize, hh: usize, ww: usize, tmp: &mut Vec<f64>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for c in 0..ww {
        tmp.clear();
        tmp.resize(hh, 0.0);
        for i in 0..hh / 2 {
            let a = buf[i * stride + c];
            let d = buf[(i + hh / 2) * stride + c];
            tmp[2 * i] = (a + d) * s;
            tmp[2 * i + 1] = (a - d) * s;
        }
        for (r, v) in tmp.iter().enumerate() {
            buf[r * stride + c] = *v;
        }
    }
    for r in 0..hh {
        let row = &mut buf[r * stride..r * stride + ww];
        tmp.clear();
        tmp.resize(ww, 0.0);
        for i in 0..ww / 2 {
            let (a, d) = (row[i], row[i + ww / 2]);
            tmp[2 * i] = (a + d) * s;
            tmp[2 * i + 1] = (a - d) * s;
        }
        row.copy_from_slice(tmp);
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn median_of(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    v.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Haar BayesShrink. `sigma` overrides the noise estimate taken from the finest
/// diagonal band. Sizes that are not multiples of `2^levels` are reflection-padded.
pub fn wavelet_shrink(x: &[f64], h: usize, w: usize, levels: usize, sigma: Option<f64>) -> Vec<f64> {
    let block = 1usize << levels;
    let (ph, pw) = (h.div_ceil(block) * block, w.div_ceil(block) * block);
    let mut buf = vec![0.0; ph * pw];
    for r in 0..ph {
        for c in 0..pw {
            buf[r * pw + c] = at(x, h, w, r as isize, c as isize);
        }
    }
    let mut tmp = Vec::new();
    let (mut hh, mut ww) = (ph, pw);
    for _ in 0..levels {
        haar_step(&mut buf, pw, hh, ww, &mut tmp);
        hh /= 2;
        ww /= 2;
    }
    let band = |r0: usize, c0: usize, bh: usize, bw: usize| -> Vec<usize> {
        (r0..r0 + bh).flat_map(|r| (c0..c0 + bw).map(move |c| r * pw + c)).collect()
    };
    let sigma = sigma.unwrap_or_else(|| {
        let finest = band(ph / 2, pw / 2, ph / 2, pw / 2);
        median_of(finest.iter().map(|&i| buf[i].abs()).collect()) / 0.6745
    });
    let var = sigma * sigma;
    let (mut bh, mut bw) = (ph / 2, pw / 2);
    for _ in 0..levels {
        for (r0, c0) in [(0, bw), (bh, 0), (bh, bw)] {
            let idx = band(r0, c0, bh, bw);
            let dvar = idx.iter().map(|&i| buf[i] * buf[i]).sum::<f64>() / idx.len() as f64;
            let t = var / (dvar - var).max(f64::EPSILON).sqrt();
            for i in idx {
                buf[i] = soft(buf[i], t);
            }
        }
        bh /= 2;
        bw /= 2;
    }
    for _ in 0..levels {
        hh *= 2;
        ww *= 2;
        haar_unstep(&mut buf, pw, hh, ww, &mut tmp);
    }
    (0..h).flat_map(|r| buf[r * pw..r * pw + w].to_vec()).collect()
}

/// Chambolle's dual projection for the ROF model. Stops when the per-pixel
/// energy changes by less than `frac_tol` times its initial value.
fn tv_chambolle(x: &[f64], h: usize, w: usize, weight: f64, frac_tol: f64, max_iter: usize) -> Vec<f64> {
    let n = h * w;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    let mut out = x.to_vec();
    let mut d = vec![0.0; n];
    let tau = 0.25;
    let (mut e_init, mut e_prev) = (0.0, 0.0);
    for i in 0..max_iter {
        if i > 0 {
            for r in 0..h {
                for c in 0..w {
                    let k = r * w + c;
                    let mut v = -px[k] - py[k];
                    if r > 0 {
                        v += py[k - w];
                    }
                    if c > 0 {
                        v += px[k - 1];
                    }
                    d[k] = v;
                    out[k] = x[k] + v;
                }
            }
        }
        let mut e: f64 = d.iter().map(|v| v * v).sum();
        for r in 0..h {
            for c in 0..w {
                let k = r * w + c;
                let gy = if r + 1 < h { out[k + w] - out[k] } else { 0.0 };
                let gx = if c + 1 < w { out[k + 1] - out[k] } else { 0.0 };
                let norm = (gx * gx + gy * gy).sqrt();
                e += weight * norm;
                let scale = 1.0 + norm * tau / weight;
                px[k] = (px[k] - tau * gx) / scale;
                py[k] = (py[k] - tau * gy) / scale;
            }
        }
        e /= n as f64;
        if i == 0 {
            e_init = e;
            e_prev = e;
        } else if (e_prev - e).abs() < frac_tol * e_init {
            break;
        } else {
            e_prev = e;
        }
    }
    out
}

/// Isotropic total variation with forward differences.
pub fn total_variation<T: Scalar>(img: &Image<T>) -> f64 {
    let (h, w) = (img.height(), img.width());
    let mut tv = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c).as_f64();
            let gy = if r + 1 < h { img.get(r + 1, c).as_f64() - v } else { 0.0 };
            let gx = if c + 1 < w { img.get(r, c + 1).as_f64() - v } else { 0.0 };
            tv += (gx * gx + gy * gy).sqrt();
        }
    }
    tv
}

pub const NOISY_ROW: &str = "noisy";
pub const BENCH_CSV_HEADER: &str = "method,mean_mse,se_mse,mean_ssim,se_ssim,time_per_1000_s";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub mean_mse: f64,
    pub se_mse: f64,
    pub mean_ssim: f64,
    pub se_ssim: f64,
    pub time_per_1000_s: f64,
    pub n: usize,
    /// Mean MSE above the noisy-input row.
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = format!("{BENCH_CSV_HEADER}\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method, r.mean_mse, r.se_mse, r.mean_ssim, r.se_ssim, r.time_per_1000_s
            ));
        }
        s
    }

    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Noise seed of benchmark trial `t`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    derive_seed(seed, &[t as u64])
}

/// Trial `t` corrupts corpus image `t mod len` with its own Poisson draw and
/// scores every spec on it. Rows come back as the noisy input first, then `specs`
/// in order.
pub fn benchmark_denoisers<T: Scalar>(
    corpus: &[Image<T>],
    dose: DoseModel,
    specs: &[DenoiserSpec],
    trials: usize,
    seed: u64,
) -> Result<BenchReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if trials == 0 {
        return Err(Error::invalid("trials must be >= 1"));
    }
    for s in specs {
        s.validate()?;
    }
    type Trial = Vec<(f64, f64, f64)>;
    let results: Vec<Result<Trial>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let clean = &corpus[t % corpus.len()];
            let noisy = apply_poisson(clean, dose, trial_seed(seed, t))?;
            let mut row = Vec::with_capacity(specs.len() + 1);
            row.push((mse(&noisy, clean)?.as_f64(), ssim(&noisy, clean)?.as_f64(), 0.0));
            for &spec in specs {
                let start = Instant::now();
                let out = denoise(&noisy, spec)?;
                let secs = start.elapsed().as_secs_f64();
                row.push((mse(&out, clean)?.as_f64(), ssim(&out, clean)?.as_f64(), secs));
            }
            Ok(row)
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let names = std::iter::once(NOISY_ROW).chain(specs.iter().map(|s| s.name()));
    let mut rows: Vec<BenchRow> = names
        .enumerate()
        .map(|(j, name)| {
            let mses: Vec<f64> = results.iter().map(|r| r[j].0).collect();
            let ssims: Vec<f64> = results.iter().map(|r| r[j].1).collect();
            let secs: f64 = results.iter().map(|r| r[j].2).sum();
            let (mean_mse, se_mse) = mean_se(&mses);
            let (mean_ssim, se_ssim) = mean_se(&ssims);
            BenchRow {
                method: name.to_string(),
                mean_mse,
                se_mse,
                mean_ssim,
                se_ssim,
                time_per_1000_s: secs / trials as f64 * 1000.0,
                n: trials,
                flagged: false,
            }
        })
        .collect();
    let noisy = rows[0].mean_mse;
    for r in rows.iter_mut().skip(1) {
        r.flagged = r.mean_mse > noisy;
    }
    Ok(BenchReport { rows })
}

//! Classical partial-scan completion baselines and coverage sweeps.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{infill_nearest, sample_scan, DoseModel, PartialScan};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{masked_rmse, mse, ErrorKind, ErrorMap};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::scan_path::{BinaryMask, PathFamily};
use crate::spatial::SiteIndex;

pub const DEFAULT_IDW_POWER: f64 = 2.0;
pub const DEFAULT_IDW_K: usize = 8;
pub const DEFAULT_DIFFUSION_ITERATIONS: usize = 10_000;
pub const DEFAULT_DIFFUSION_TOL: f64 = 1e-6;

/// Over-relaxation factor for the diffusion solver.
const SOR_OMEGA: f64 = 1.8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CompletionMethod {
    Nearest,
    Idw { power: f64, k: usize },
    Diffusion { iterations: usize, tol: f64 },
}

impl CompletionMethod {
    pub fn idw() -> Self {
        CompletionMethod::Idw {
            power: DEFAULT_IDW_POWER,
            k: DEFAULT_IDW_K,
        }
    }

    pub fn diffusion() -> Self {
        CompletionMethod::Diffusion {
            iterations: DEFAULT_DIFFUSION_ITERATIONS,
            tol: DEFAULT_DIFFUSION_TOL,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CompletionMethod::Nearest => "nearest",
            CompletionMethod::Idw { .. } => "idw",
            CompletionMethod::Diffusion { .. } => "diffusion",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            CompletionMethod::Idw { power, k } if !(power > 0.0) || k == 0 => {
                Err(Error::invalid(format!("idw power {power} and k {k} must be positive")))
            }
            CompletionMethod::Diffusion { iterations, tol } if iterations == 0 || !(tol >= 0.0) => {
                Err(Error::invalid(format!("diffusion iterations {iterations}, tol {tol}")))
            }
            _ => Ok(()),
        }
    }
}

/// `nearest`, `idw[:power[:k]]` or `diffusion[:iterations[:tol]]`.
impl FromStr for CompletionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let bad = || Error::invalid(format!("bad completion method {s:?}"));
        let method = match parts.next().unwrap_or_default() {
            "nearest" => CompletionMethod::Nearest,
            "idw" => {
                let power = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
                let k = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
                CompletionMethod::Idw {
                    power: power.unwrap_or(DEFAULT_IDW_POWER),
                    k: k.unwrap_or(DEFAULT_IDW_K),
                }
            }
            "diffusion" => {
                let iterations = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
                let tol = parts.next().map(str::parse).transpose().map_err(|_| bad())?;
                CompletionMethod::Diffusion {
                    iterations: iterations.unwrap_or(DEFAULT_DIFFUSION_ITERATIONS),
                    tol: tol.unwrap_or(DEFAULT_DIFFUSION_TOL),
                }
            }
            _ => return Err(bad()),
        };
        if parts.next().is_some() {
            return Err(bad());
        }
        method.validate()?;
        Ok(method)
    }
}

impl fmt::Display for CompletionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompletionMethod::Nearest => write!(f, "nearest"),
            CompletionMethod::Idw { power, k } => write!(f, "idw:{power}:{k}"),
            CompletionMethod::Diffusion { iterations, tol } => write!(f, "diffusion:{iterations}:{tol:e}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion<T = f64> {
    pub image: Image<T>,
    /// Relaxation sweeps performed (0 for direct methods).
    pub iterations: usize,
    /// False when diffusion stopped at its iteration cap above tolerance.
    pub converged: bool,
}

/// Fills unscanned pixels; scanned pixels are returned bit-exact.
pub fn complete<T: Scalar>(scan: &PartialScan<T>, method: CompletionMethod) -> Result<Completion<T>> {
    method.validate()?;
    let sites = scan.mask.sites();
    if sites.is_empty() {
        return Err(Error::EmptyMask);
    }
    match method {
        CompletionMethod::Nearest => Ok(Completion {
            image: infill_nearest(scan)?,
            iterations: 0,
            converged: true,
        }),
        CompletionMethod::Idw { power, k } => Ok(Completion {
            image: idw(scan, &sites, power, k),
            iterations: 0,
            converged: true,
        }),
        CompletionMethod::Diffusion { iterations, tol } => diffuse(scan, &sites, iterations, tol),
    }
}

fn idw<T: Scalar>(scan: &PartialScan<T>, sites: &[(usize, usize)], power: f64, k: usize) -> Image<T> {
    let (h, w) = (scan.mask.height(), scan.mask.width());
    let index = SiteIndex::new(sites, h, w);
    let mut out = scan.values.clone();
    let mut nbrs = Vec::with_capacity(k);
    for r in 0..h {
        for c in 0..w {
            if scan.mask.get(r, c) {
                continue;
            }
            index.k_nearest(r, c, k, &mut nbrs);
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for n in &nbrs {
                let wt = (n.dist2 as f64).powf(-0.5 * power);
                num += wt * scan.values.get(n.row as usize, n.col as usize).as_f64();
                den += wt;
            }
            out.set(r, c, T::of(num / den));
        }
    }
    out
}

/// Laplace relaxation with scanned pixels as Dirichlet data and reflecting
/// image borders, solved by successive over-relaxation from a nearest-neighbour start.
fn diffuse<T: Scalar>(
    scan: &PartialScan<T>,
    sites: &[(usize, usize)],
    max_iter: usize,
    tol: f64,
) -> Result<Completion<T>> {
    let (h, w) = (scan.mask.height(), scan.mask.width());
    let start = infill_nearest(scan)?;
    let mut u: Vec<f64> = start.data().iter().map(|v| v.as_f64()).collect();
    let free: Vec<usize> = (0..h * w).filter(|&i| !scan.mask.bits()[i]).collect();
    let (lo, hi) = sites.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(r, c)| {
        let v = scan.values.get(r, c).as_f64();
        (a.min(v), b.max(v))
    });
    let mut iterations = 0;
    let mut converged = free.is_empty();
    while !converged && iterations < max_iter {
        iterations += 1;
        let mut max_update = 0.0f64;
        for &i in &free {
            let (r, c) = (i / w, i % w);
            let mut sum = 0.0;
            let mut n = 0.0;
            if r > 0 {
                sum += u[i - w];
                n += 1.0;
            }
            if r + 1 < h {
                sum += u[i + w];
                n += 1.0;
            }
            if c > 0 {
                sum += u[i - 1];
                n += 1.0;
            }
            if c + 1 < w {
                sum += u[i + 1];
                n += 1.0;
            }
            let delta = sum / n - u[i];
            max_update = max_update.max(delta.abs());
            u[i] += SOR_OMEGA * delta;
        }
        converged = max_update < tol;
    }
    let mut image = scan.values.clone();
    for &i in &free {
        image.data_mut()[i] = T::of(u[i].clamp(lo, hi));
    }
    Ok(Completion {
        image,
        iterations,
        converged,
    })
}

/// Pixels scored by a sweep's RMSE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    All,
    Scanned,
    Unscanned,
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Region::All),
            "scanned" => Ok(Region::Scanned),
            "unscanned" => Ok(Region::Unscanned),
            _ => Err(Error::invalid(format!("unknown region {s:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub family: PathFamily,
    pub coverages: Vec<f64>,
    pub method: CompletionMethod,
    pub dose: DoseModel,
    pub seed: u64,
    pub region: Region,
    pub error_kind: ErrorKind,
}

#[derive(Clone, Debug)]
pub struct SweepRow<T = f64> {
    pub coverage: f64,
    pub achieved_coverage: f64,
    pub method: CompletionMethod,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub rmses: Vec<f64>,
    pub error_map: ErrorMap<T>,
    pub mask: BinaryMask,
    pub unconverged: usize,
}

impl<T> SweepRow<T> {
    pub fn n_images(&self) -> usize {
        self.rmses.len()
    }
}

pub const SWEEP_CSV_HEADER: &str = "coverage,method,mean_rmse,std_rmse,n_images";

pub fn sweep_csv<T>(rows: &[SweepRow<T>]) -> String {
    let mut s = format!("{SWEEP_CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.coverage,
            r.method.name(),
            r.mean_rmse,
            r.std_rmse,
            r.n_images()
        ));
    }
    s
}

/// Seed of the acquisition noise for corpus image `index`.
pub fn image_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[1, index as u64])
}

/// Mask seed for the `index`-th coverage of a sweep.
pub fn mask_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[0, index as u64])
}

/// Per-coverage RMSE statistics of `method` over `corpus`. Images are processed
/// in parallel with per-image seeds, and aggregation runs in corpus order, so
/// results do not depend on the worker count.
pub fn coverage_sweep<T: Scalar>(corpus: &[Image<T>], cfg: &SweepConfig) -> Result<Vec<SweepRow<T>>> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let (h, w) = (first.height(), first.width());
    for img in corpus {
        img.same_shape(first)?;
    }
    if cfg.coverages.windows(2).any(|p| p[1] < p[0]) {
        return Err(Error::invalid("coverages must be sorted ascending"));
    }
    cfg.method.validate()?;
    let mut rows = Vec::with_capacity(cfg.coverages.len());
    for (ci, &coverage) in cfg.coverages.iter().enumerate() {
        let mask = if coverage >= 1.0 {
            BinaryMask::full(h, w)
        } else {
            cfg.family.generate(h, w, coverage, mask_seed(cfg.seed, ci))?.1
        };
        let per_image: Vec<Result<(f64, Completion<T>)>> = corpus
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let scan = sample_scan(img, &mask, cfg.dose, image_seed(cfg.seed, i))?;
                let done = complete(&scan, cfg.method)?;
                let rmse = match cfg.region {
                    Region::All => mse(&done.image, img)?.as_f64().sqrt(),
                    Region::Scanned => masked_rmse(&done.image, img, &mask, false)?.as_f64(),
                    Region::Unscanned => masked_rmse(&done.image, img, &mask, true)?.as_f64(),
                };
                Ok((rmse, done))
            })
            .collect();
        let mut rmses = Vec::with_capacity(corpus.len());
        let mut error_map = ErrorMap::new(h, w);
        let mut unconverged = 0;
        for (res, img) in per_image.into_iter().zip(corpus) {
            let (rmse, done) = res?;
            error_map.accumulate(&done.image, img, cfg.error_kind)?;
            unconverged += usize::from(!done.converged);
            rmses.push(rmse);
        }
        let n = rmses.len() as f64;
        let mean = rmses.iter().sum::<f64>() / n;
        let std = if rmses.len() > 1 {
            (rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(SweepRow {
            coverage,
            achieved_coverage: mask.coverage(),
            method: cfg.method,
            mean_rmse: mean,
            std_rmse: std,
            rmses,
            error_map,
            mask,
            unconverged,
        });
    }
    Ok(rows)
}

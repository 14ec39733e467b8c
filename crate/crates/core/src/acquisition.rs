//! Sparse acquisition: mask selection, Poisson dose noise, extra noise on
//! low-duration path segments, and nearest-neighbour infilling.

use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{load_image, save_pgm, BitDepth, Image};
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::Scalar;
use crate::scan_path::{rasterize, visit_counts, BinaryMask, ScanPath};
use crate::spatial::SiteIndex;

/// Value held by unscanned pixels until they are infilled.
pub const SENTINEL: f64 = -1.0;

/// Mean electron counts per pixel at unit intensity. Infinite dose is noiseless.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseModel {
    #[serde(with = "crate::serde_ext::real")]
    pub counts_per_pixel: f64,
}

impl DoseModel {
    pub fn new(counts_per_pixel: f64) -> Result<Self> {
        if !(counts_per_pixel > 0.0) {
            return Err(Error::invalid(format!("dose {counts_per_pixel} must be > 0")));
        }
        Ok(Self { counts_per_pixel })
    }

    pub fn noiseless() -> Self {
        Self {
            counts_per_pixel: f64::INFINITY,
        }
    }
}

/// Poisson draw: sequential inversion for small means, `rand_distr`'s
/// exact sampler otherwise.
pub fn sample_poisson(lambda: f64, rng: &mut Rng) -> f64 {
    if !(lambda > 0.0) {
        return 0.0;
    }
    if lambda < 10.0 {
        let u: f64 = rng.random();
        let mut p = (-lambda).exp();
        let mut cdf = p;
        let mut k = 0u64;
        while u > cdf && k < 200 {
            k += 1;
            p *= lambda / k as f64;
            cdf += p;
        }
        return k as f64;
    }
    match Poisson::new(lambda) {
        Ok(dist) => dist.sample(rng),
        Err(_) => lambda.round(),
    }
}

/// Per pixel `k ~ Poisson(dose·intensity)`, output `k / dose`.
pub fn apply_poisson<T: Scalar>(img: &Image<T>, dose: DoseModel, seed: u64) -> Result<Image<T>> {
    if !img.is_finite() {
        return Err(Error::NonFinite);
    }
    let d = dose.counts_per_pixel;
    if d.is_infinite() {
        return Ok(img.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let lambda = d * v.as_f64().clamp(0.0, 1.0);
        *v = T::of(sample_poisson(lambda, &mut rng) / d);
    }
    Ok(out)
}

/// Noisy partial acquisition; unscanned pixels hold [`SENTINEL`].
#[derive(Clone, Debug, PartialEq)]
pub struct PartialScan<T = f64> {
    pub values: Image<T>,
    pub mask: BinaryMask,
    pub dose: DoseModel,
    pub seed: u64,
    pub kind: String,
}

pub fn sample_scan<T: Scalar>(
    img: &Image<T>,
    mask: &BinaryMask,
    dose: DoseModel,
    seed: u64,
) -> Result<PartialScan<T>> {
    if mask.height() != img.height() || mask.width() != img.width() {
        return Err(Error::DimensionMismatch(
            img.height(),
            img.width(),
            mask.height(),
            mask.width(),
        ));
    }
    let mut values = apply_poisson(img, dose, seed)?;
    let sentinel = T::of(SENTINEL);
    for (v, &bit) in values.data_mut().iter_mut().zip(mask.bits()) {
        if !bit {
            *v = sentinel;
        }
    }
    Ok(PartialScan {
        values,
        mask: mask.clone(),
        dose,
        seed,
        kind: "mask".into(),
    })
}

/// Adds zero-mean Gaussian noise with std `boost / sqrt(dose)` to pixels the
/// path visits exactly once.
pub fn segment_duration_noise<T: Scalar>(
    scan: &PartialScan<T>,
    path: &ScanPath,
    boost: f64,
    seed: u64,
) -> Result<PartialScan<T>> {
    if !(boost >= 0.0) {
        return Err(Error::invalid(format!("noise boost {boost} must be >= 0")));
    }
    let (h, w) = (scan.mask.height(), scan.mask.width());
    if rasterize(path, h, w) != scan.mask {
        return Err(Error::PathMaskMismatch);
    }
    let mut out = scan.clone();
    if boost == 0.0 || scan.dose.counts_per_pixel.is_infinite() {
        return Ok(out);
    }
    let sd = boost / scan.dose.counts_per_pixel.sqrt();
    let counts = visit_counts(path, h, w);
    let mut rng = rng_from_seed(seed);
    for (v, &c) in out.values.data_mut().iter_mut().zip(&counts) {
        if c == 1 {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = *v + T::of(sd * z);
        }
    }
    Ok(out)
}

/// Every unscanned pixel takes the value of its Euclidean-nearest scanned pixel;
/// ties go to the smaller row, then the smaller column.
pub fn infill_nearest<T: Scalar>(scan: &PartialScan<T>) -> Result<Image<T>> {
    let sites = scan.mask.sites();
    if sites.is_empty() {
        return Err(Error::EmptyMask);
    }
    let (h, w) = (scan.mask.height(), scan.mask.width());
    let index = SiteIndex::new(&sites, h, w);
    let mut out = scan.values.clone();
    for r in 0..h {
        for c in 0..w {
            if !scan.mask.get(r, c) {
                let n = index.nearest(r, c).expect("non-empty index");
                let v = scan.values.get(n.row as usize, n.col as usize);
                out.set(r, c, v);
            }
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    #[serde(with = "crate::serde_ext::real")]
    dose: f64,
    seed: u64,
    kind: String,
}

impl<T: Scalar> PartialScan<T> {
    /// Writes `<stem>_values.pgm` (16-bit, unscanned pixels as 0),
    /// `<stem>_mask.pgm` and the `<stem>.json` sidecar.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let values = self.values.map(|v| if v < T::zero() { T::zero() } else { v });
        save_pgm(&values, dir.join(format!("{stem}_values.pgm")), BitDepth::Sixteen)?;
        self.mask.save_pgm(dir.join(format!("{stem}_mask.pgm")))?;
        let sidecar = Sidecar {
            dose: self.dose.counts_per_pixel,
            seed: self.seed,
            kind: self.kind.clone(),
        };
        let path = dir.join(format!("{stem}.json"));
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let mask = BinaryMask::load(dir.join(format!("{stem}_mask.pgm")))?;
        let mut values: Image<T> = load_image(dir.join(format!("{stem}_values.pgm")))?;
        values.same_shape(&mask.to_image())?;
        let sentinel = T::of(SENTINEL);
        for (v, &bit) in values.data_mut().iter_mut().zip(mask.bits()) {
            if !bit {
                *v = sentinel;
            }
        }
        let path = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            values,
            mask,
            dose: DoseModel::new(sidecar.dose)?,
            seed: sidecar.seed,
            kind: sidecar.kind,
        })
    }
}

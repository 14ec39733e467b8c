//! Sparse scan paths, their rasterized masks, and coverage tuning.
//!
//! Positions are `(x, y)` in pixel units with pixel centres on integer
//! coordinates; `x` indexes columns and `y` rows.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{encode_pgm, load_image, BitDepth, Image};
use crate::rng::{derive_seed, rng_from_seed};
use crate::spatial::SiteIndex;

/// Maximum arc-length step between consecutive samples of a continuous trace.
pub const MAX_ARC_STEP: f64 = 0.5;

/// Default relative coverage tolerance.
pub const COVERAGE_TOL: f64 = 0.02;

/// Jitter half-width as a fraction of row spacing.
pub const JITTER_FRACTION: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Spiral,
    JitteredGrid,
    UniformGrid,
    RandomGrid,
    Segment,
}

impl fmt::Display for PathKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PathKind::Spiral => "spiral",
            PathKind::JitteredGrid => "jittered_grid",
            PathKind::UniformGrid => "uniform_grid",
            PathKind::RandomGrid => "random_grid",
            PathKind::Segment => "segment",
        })
    }
}

impl FromStr for PathKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "spiral" => PathKind::Spiral,
            "jittered_grid" | "jittered" => PathKind::JitteredGrid,
            "uniform_grid" | "uniform" => PathKind::UniformGrid,
            "random_grid" | "random" => PathKind::RandomGrid,
            "segment" => PathKind::Segment,
            other => return Err(Error::invalid(format!("unknown path kind {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanPath {
    pub positions: Vec<(f64, f64)>,
    pub kind: PathKind,
}

impl ScanPath {
    /// Sum of distances between consecutive positions.
    pub fn arc_length(&self) -> f64 {
        self.positions
            .windows(2)
            .map(|p| (p[1].0 - p[0].0).hypot(p[1].1 - p[0].1))
            .sum()
    }

    /// CSV with a `# kind=<kind> seed=<seed>` header line followed by `x,y` rows.
    pub fn to_csv(&self, seed: u64) -> String {
        let mut s = format!("# kind={} seed={}\n", self.kind, seed);
        for (x, y) in &self.positions {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }

    /// Parses [`ScanPath::to_csv`] output, returning the path and its seed.
    pub fn from_csv(text: &str) -> Result<(Self, u64)> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::invalid("empty path CSV"))?;
        let mut kind = None;
        let mut seed = None;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some(k) = tok.strip_prefix("kind=") {
                kind = Some(k.parse::<PathKind>()?);
            } else if let Some(s) = tok.strip_prefix("seed=") {
                seed = s.parse::<u64>().ok();
            }
        }
        let (kind, seed) = kind
            .zip(seed)
            .ok_or_else(|| Error::invalid(format!("bad path header {header:?}")))?;
        let mut positions = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| Error::invalid(format!("bad path row {line:?}")))?;
            let x: f64 = x.trim().parse().map_err(|_| Error::invalid(format!("bad x in {line:?}")))?;
            let y: f64 = y.trim().parse().map_err(|_| Error::invalid(format!("bad y in {line:?}")))?;
            positions.push((x, y));
        }
        Ok((ScanPath { positions, kind }, seed))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::invalid("mask bit count does not match dimensions"));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.bits[row * self.width + col] = on;
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.popcount() as f64 / (self.height * self.width) as f64
    }

    /// `(row, col)` of every set pixel in row-major order.
    pub fn sites(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.width, i % self.width))
            .collect()
    }

    pub fn to_image(&self) -> Image {
        Image::new(
            self.height,
            self.width,
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask dimensions are consistent")
    }

    /// PGM P5 with 0/255 samples.
    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.to_image(), BitDepth::Eight)
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img: Image = load_image(path)?;
        let bits = img.data().iter().map(|&v| v >= 0.5).collect();
        Self::from_bits(img.height(), img.width(), bits)
    }

    /// Euclidean distance from every pixel to the nearest set pixel.
    pub fn distance_map(&self) -> Result<Vec<f64>> {
        let sites = self.sites();
        if sites.is_empty() {
            return Err(Error::EmptyMask);
        }
        let index = SiteIndex::new(&sites, self.height, self.width);
        let mut out = Vec::with_capacity(self.bits.len());
        for r in 0..self.height {
            for c in 0..self.width {
                let n = index.nearest(r, c).expect("non-empty index");
                out.push((n.dist2 as f64).sqrt());
            }
        }
        Ok(out)
    }
}

/// A path together with the parameter that produced it and its achieved coverage.
#[derive(Clone, Debug)]
pub struct TunedPath {
    pub path: ScanPath,
    pub mask: BinaryMask,
    pub parameter: f64,
    pub coverage: f64,
}

#[inline]
fn pixel_of(x: f64, y: f64, height: usize, width: usize) -> (usize, usize) {
    let col = x.round().clamp(0.0, (width - 1) as f64) as usize;
    let row = y.round().clamp(0.0, (height - 1) as f64) as usize;
    (row, col)
}

/// Nearest-pixel rasterization; out-of-bounds positions clamp to the border.
pub fn rasterize(path: &ScanPath, height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::new(height, width);
    for &(x, y) in &path.positions {
        let (r, c) = pixel_of(x, y, height, width);
        mask.set(r, c, true);
    }
    mask
}

/// Number of path positions landing on each pixel, row-major.
pub fn visit_counts(path: &ScanPath, height: usize, width: usize) -> Vec<u32> {
    let mut counts = vec![0u32; height * width];
    for &(x, y) in &path.positions {
        let (r, c) = pixel_of(x, y, height, width);
        counts[r * width + c] += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tuned {
    pub parameter: f64,
    pub coverage: f64,
    pub iterations: usize,
}

/// Bisects a coverage-monotone parameter until the relative error is within `tol`
/// or 64 iterations elapse; returns the best parameter seen.
pub fn tune_coverage(
    mut coverage_at: impl FnMut(f64) -> Result<f64>,
    bracket: (f64, f64),
    target: f64,
    tol: f64,
) -> Result<Tuned> {
    let (mut lo, mut hi) = bracket;
    let cov_lo = coverage_at(lo)?;
    let cov_hi = coverage_at(hi)?;
    let rel = |c: f64| (c - target).abs() / target;
    let mut best = if rel(cov_lo) <= rel(cov_hi) {
        Tuned { parameter: lo, coverage: cov_lo, iterations: 0 }
    } else {
        Tuned { parameter: hi, coverage: cov_hi, iterations: 0 }
    };
    if rel(best.coverage) <= tol {
        return Ok(best);
    }
    if (cov_lo - target).signum() == (cov_hi - target).signum() {
        return Err(Error::Bracket { lo, hi, cov_lo, cov_hi, target });
    }
    let lo_above = cov_lo > target;
    for it in 1..=64 {
        let mid = 0.5 * (lo + hi);
        let cov = coverage_at(mid)?;
        if rel(cov) < rel(best.coverage) {
            best = Tuned { parameter: mid, coverage: cov, iterations: it };
        }
        best.iterations = it;
        if rel(cov) <= tol {
            best = Tuned { parameter: mid, coverage: cov, iterations: it };
            break;
        }
        if (cov > target) == lo_above {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

fn check_target(height: usize, width: usize, target: f64) -> Result<()> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("coverage {target} outside (0, 1]")));
    }
    if height < 16 || width < 16 {
        return Err(Error::invalid(format!("image {height}x{width} below 16x16")));
    }
    Ok(())
}

/// Archimedes spiral `r = a·θ` about the image centre, sampled at constant arc
/// steps out to the corner radius; samples outside the frame are not probed.
pub fn spiral_with_pitch(height: usize, width: usize, pitch: f64) -> ScanPath {
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let r_max = (cx + 0.5).hypot(cy + 0.5);
    let theta_max = r_max / pitch;
    let mut positions = Vec::new();
    let mut theta = 0.0f64;
    let inside = |x: f64, y: f64| {
        x >= -0.5 && x < width as f64 - 0.5 && y >= -0.5 && y < height as f64 - 0.5
    };
    while theta <= theta_max {
        let r = pitch * theta;
        let (x, y) = (cx + r * theta.cos(), cy + r * theta.sin());
        if inside(x, y) {
            positions.push((x, y));
        }
        // midpoint estimate of dθ for an arc step of MAX_ARC_STEP
        let half = 0.5 * MAX_ARC_STEP / (pitch * (1.0 + theta * theta).sqrt());
        let mid = theta + half;
        theta += MAX_ARC_STEP / (pitch * (1.0 + mid * mid).sqrt());
    }
    ScanPath {
        positions,
        kind: PathKind::Spiral,
    }
}

pub fn archimedes_spiral(height: usize, width: usize, target: f64) -> Result<TunedPath> {
    archimedes_spiral_tol(height, width, target, COVERAGE_TOL)
}

pub fn archimedes_spiral_tol(height: usize, width: usize, target: f64, tol: f64) -> Result<TunedPath> {
    check_target(height, width, target)?;
    let r_max = (width as f64 / 2.0).hypot(height as f64 / 2.0);
    // Adjacent turns one pixel apart at the dense end; two full turns at the sparse end.
    let bracket = (1.0 / (2.0 * PI), r_max / (4.0 * PI));
    let tuned = tune_coverage(
        |a| Ok(rasterize(&spiral_with_pitch(height, width, a), height, width).coverage()),
        bracket,
        target,
        tol,
    )
    .map_err(|e| unreachable_from(e, target))?;
    finish(tuned, target, tol, |a| spiral_with_pitch(height, width, a), height, width)
}

fn unreachable_from(e: Error, target: f64) -> Error {
    match e {
        Error::Bracket { cov_lo, cov_hi, .. } => Error::UnreachableCoverage {
            target,
            reason: format!(
                "generator spans coverages [{:.6}, {:.6}]",
                cov_lo.min(cov_hi),
                cov_lo.max(cov_hi)
            ),
        },
        other => other,
    }
}

fn finish(
    tuned: Tuned,
    target: f64,
    tol: f64,
    build: impl Fn(f64) -> ScanPath,
    height: usize,
    width: usize,
) -> Result<TunedPath> {
    let path = build(tuned.parameter);
    let mask = rasterize(&path, height, width);
    let coverage = mask.coverage();
    if (coverage - target).abs() / target > tol {
        return Err(Error::UnreachableCoverage {
            target,
            reason: format!("best coverage found {coverage:.6} is outside tolerance {tol}"),
        });
    }
    Ok(TunedPath {
        path,
        mask,
        parameter: tuned.parameter,
        coverage,
    })
}

/// Horizontal rows at spacing `height / rows`, each following a piecewise-linear
/// trace through knots every `knot_spacing` px whose vertical offsets are
/// uniform in `±jitter·spacing`.
pub fn jittered_grid_with(
    height: usize,
    width: usize,
    rows: usize,
    knot_spacing: f64,
    jitter: f64,
    seed: u64,
) -> ScanPath {
    let spacing = height as f64 / rows as f64;
    let amp = jitter * spacing;
    let last_x = width as f64 - 1.0;
    let n_knots = (last_x / knot_spacing).ceil() as usize + 1;
    let mut positions = Vec::new();
    for i in 0..rows {
        let base = (i as f64 + 0.5) * spacing - 0.5;
        let mut rng = rng_from_seed(derive_seed(seed, &[i as u64]));
        let offsets: Vec<f64> = (0..n_knots)
            .map(|_| {
                let u: f64 = rng.random::<f64>();
                if amp > 0.0 {
                    (2.0 * u - 1.0) * amp
                } else {
                    0.0
                }
            })
            .collect();
        for j in 0..n_knots - 1 {
            let (x0, y0) = (j as f64 * knot_spacing, base + offsets[j]);
            let x1 = ((j + 1) as f64 * knot_spacing).min(last_x);
            let y1 = base + offsets[j + 1];
            let len = (x1 - x0).hypot(y1 - y0);
            let steps = ((len / MAX_ARC_STEP).ceil() as usize).max(1);
            let start = if j == 0 { 0 } else { 1 };
            for s in start..=steps {
                let t = s as f64 / steps as f64;
                let y = (y0 + t * (y1 - y0)).clamp(-0.5, height as f64 - 0.5);
                positions.push((x0 + t * (x1 - x0), y));
            }
        }
    }
    ScanPath {
        positions,
        kind: PathKind::JitteredGrid,
    }
}

/// Jittered gridlike raster tuned to `target` coverage. The row count is chosen
/// from the target and the knot spacing is bisected to absorb the remainder.
pub fn jittered_grid_path(height: usize, width: usize, target: f64, seed: u64) -> Result<TunedPath> {
    check_target(height, width, target)?;
    let base = ((target * height as f64) / 1.2).round().max(1.0) as i64;
    let mut last_err = None;
    for delta in [0i64, -1, 1, -2, 2, -3, 3] {
        let rows = base + delta;
        if rows < 1 || rows as usize > height {
            continue;
        }
        let rows = rows as usize;
        let spacing = height as f64 / rows as f64;
        let build = |k: f64| jittered_grid_with(height, width, rows, k, JITTER_FRACTION, seed);
        let attempt = tune_coverage(
            |k| Ok(rasterize(&build(k), height, width).coverage()),
            ((spacing / 2.0).max(1.0), 4.0 * width as f64),
            target,
            COVERAGE_TOL,
        )
        .map_err(|e| unreachable_from(e, target))
        .and_then(|t| finish(t, target, COVERAGE_TOL, build, height, width));
        match attempt {
            Ok(t) => return Ok(t),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::UnreachableCoverage {
        target,
        reason: "no admissible row count".into(),
    }))
}

/// Pixels at `(i·stride, j·stride)` from the origin.
pub fn uniform_grid_mask(height: usize, width: usize, stride: usize) -> Result<BinaryMask> {
    if stride == 0 || stride > height.min(width) {
        return Err(Error::invalid(format!("stride {stride} outside [1, {}]", height.min(width))));
    }
    let mut mask = BinaryMask::new(height, width);
    for r in (0..height).step_by(stride) {
        for c in (0..width).step_by(stride) {
            mask.set(r, c, true);
        }
    }
    Ok(mask)
}

/// Exactly `round(target·h·w)` distinct pixels drawn uniformly without replacement.
pub fn random_grid_mask(height: usize, width: usize, target: f64, seed: u64) -> Result<BinaryMask> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::invalid(format!("coverage {target} outside (0, 1]")));
    }
    let n = height * width;
    let count = ((target * n as f64).round() as usize).min(n);
    let mut rng = rng_from_seed(seed);
    let mut mask = BinaryMask::new(height, width);
    for i in rand::seq::index::sample(&mut rng, n, count) {
        mask.bits[i] = true;
    }
    Ok(mask)
}

/// Straight-segment path geometry: `segments` runs of `points_per_segment`
/// probing positions `spacing` px apart, each run starting where the last ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    pub segments: usize,
    pub points_per_segment: usize,
    pub spacing: f64,
    pub start: (f64, f64),
    pub headings: Vec<f64>,
}

pub fn segment_path(params: &SegmentParams) -> Result<ScanPath> {
    let SegmentParams {
        segments,
        points_per_segment,
        spacing,
        start,
        ref headings,
    } = *params;
    if segments < 1 || points_per_segment < 1 || !(spacing > 0.0) || headings.len() != segments {
        return Err(Error::invalid(format!(
            "segment params T={segments} m={points_per_segment} d={spacing} with {} headings",
            headings.len()
        )));
    }
    let mut positions = Vec::with_capacity(segments * points_per_segment);
    let mut origin = start;
    for &heading in headings {
        let (dx, dy) = (spacing * heading.cos(), spacing * heading.sin());
        for j in 0..points_per_segment {
            positions.push((origin.0 + j as f64 * dx, origin.1 + j as f64 * dy));
        }
        origin = *positions.last().expect("points_per_segment >= 1");
    }
    Ok(ScanPath {
        positions,
        kind: PathKind::Segment,
    })
}

/// Generator families accepted by coverage sweeps and the CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathFamily {
    Spiral,
    JitteredGrid,
    RandomGrid,
}

impl PathFamily {
    pub fn kind(self) -> PathKind {
        match self {
            PathFamily::Spiral => PathKind::Spiral,
            PathFamily::JitteredGrid => PathKind::JitteredGrid,
            PathFamily::RandomGrid => PathKind::RandomGrid,
        }
    }

    /// Path (when the family has one) and mask at `target` coverage.
    pub fn generate(
        self,
        height: usize,
        width: usize,
        target: f64,
        seed: u64,
    ) -> Result<(Option<ScanPath>, BinaryMask)> {
        match self {
            PathFamily::Spiral => {
                let t = archimedes_spiral(height, width, target)?;
                Ok((Some(t.path), t.mask))
            }
            PathFamily::JitteredGrid => {
                let t = jittered_grid_path(height, width, target, seed)?;
                Ok((Some(t.path), t.mask))
            }
            PathFamily::RandomGrid => Ok((None, random_grid_mask(height, width, target, seed)?)),
        }
    }
}

impl FromStr for PathFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<PathKind>()? {
            PathKind::Spiral => Ok(PathFamily::Spiral),
            PathKind::JitteredGrid => Ok(PathFamily::JitteredGrid),
            PathKind::RandomGrid => Ok(PathFamily::RandomGrid),
            other => Err(Error::invalid(format!("{other} is not a tunable coverage family"))),
        }
    }
}

impl fmt::Display for PathFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind().fmt(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn within(cov: f64, target: f64, tol: f64) -> bool {
        (cov - target).abs() / target <= tol
    }

    /// Set pixels with no set 8-neighbour.
    fn isolated(mask: &BinaryMask) -> usize {
        let (h, w) = (mask.height() as isize, mask.width() as isize);
        mask.sites()
            .into_iter()
            .filter(|&(r, c)| {
                !(-1..=1).any(|dr| {
                    (-1..=1).any(|dc| {
                        let (rr, cc) = (r as isize + dr, c as isize + dc);
                        (dr, dc) != (0, 0)
                            && rr >= 0
                            && cc >= 0
                            && rr < h
                            && cc < w
                            && mask.get(rr as usize, cc as usize)
                    })
                })
            })
            .count()
    }

    #[test]
    fn spiral_hits_targets() {
        let t = archimedes_spiral(512, 512, 1.0 / 20.0).unwrap();
        assert!((0.049..=0.051).contains(&t.coverage), "{}", t.coverage);
        let t = archimedes_spiral(512, 512, 1.0 / 17.9).unwrap();
        assert!((0.0548..=0.0570).contains(&t.coverage), "{}", t.coverage);
        assert_eq!(t.coverage, t.mask.popcount() as f64 / (512.0 * 512.0));
    }

    #[test]
    fn spiral_trace_is_connected() {
        for target in [1.0 / 10.0, 1.0 / 40.0, 1.0 / 100.0] {
            let t = archimedes_spiral(512, 512, target).unwrap();
            assert!(isolated(&t.mask) <= 2, "target {target}: {} isolated", isolated(&t.mask));
        }
    }

    #[test]
    fn spiral_rejects_unreachable() {
        // two turns on a 64x64 frame already cover ~5% of pixels
        assert!(matches!(
            archimedes_spiral(64, 64, 0.01),
            Err(Error::UnreachableCoverage { .. })
        ));
        // one-pixel turn spacing is effectively space-filling
        assert!(archimedes_spiral(64, 64, 1.0).unwrap().coverage > 0.98);
        assert!(archimedes_spiral(8, 8, 0.1).is_err());
    }

    #[test]
    fn spiral_23_04() {
        let t = archimedes_spiral(512, 512, 1.0 / 23.04).unwrap();
        assert!((0.04254..=0.04427).contains(&t.coverage), "{}", t.coverage);
    }

    #[test]
    fn jittered_grid_hits_target_deterministically() {
        let a = jittered_grid_path(512, 512, 1.0 / 20.0, 0).unwrap();
        assert!((0.049..=0.051).contains(&a.coverage), "{}", a.coverage);
        let b = jittered_grid_path(512, 512, 1.0 / 20.0, 0).unwrap();
        assert_eq!(a.path, b.path);
        for target in [1.0 / 10.0, 1.0 / 40.0, 1.0 / 100.0] {
            let t = jittered_grid_path(512, 512, target, 3).unwrap();
            assert!(within(t.coverage, target, COVERAGE_TOL));
        }
    }

    #[test]
    fn zero_jitter_gives_flat_rows() {
        let p = jittered_grid_with(64, 64, 8, 10.0, 0.0, 9);
        let mut ys: Vec<f64> = p.positions.iter().map(|p| p.1).collect();
        ys.dedup();
        assert_eq!(ys.len(), 8);
        let mask = rasterize(&p, 64, 64);
        assert_eq!(mask.popcount(), 8 * 64);
    }

    #[test]
    fn uniform_grid_counts() {
        let m = uniform_grid_mask(512, 512, 4).unwrap();
        assert_eq!(m.popcount(), 128 * 128);
        assert_eq!(m.coverage(), 1.0 / 16.0);

        let m = uniform_grid_mask(512, 512, 5).unwrap();
        // brute-force count of (i, j) with i, j multiples of 5 below 512
        let per_axis = (0..512).filter(|i| i % 5 == 0).count();
        assert_eq!(per_axis, 103);
        assert_eq!(m.popcount(), 10609);

        assert_eq!(uniform_grid_mask(16, 16, 1).unwrap().coverage(), 1.0);
        assert!(uniform_grid_mask(16, 16, 0).is_err());
        assert!(uniform_grid_mask(16, 16, 17).is_err());
    }

    #[test]
    fn random_grid_counts() {
        let m = random_grid_mask(512, 512, 1.0 / 20.0, 7).unwrap();
        assert_eq!(m.popcount(), 13107);
        assert_eq!(random_grid_mask(32, 32, 1.0, 1).unwrap().popcount(), 1024);
        let other = random_grid_mask(512, 512, 1.0 / 20.0, 8).unwrap();
        assert_ne!(m, other);
        assert_eq!(m, random_grid_mask(512, 512, 1.0 / 20.0, 7).unwrap());
    }

    #[test]
    fn segment_examples() {
        let p = segment_path(&SegmentParams {
            segments: 5,
            points_per_segment: 3,
            spacing: 2f64.sqrt(),
            start: (1.0, 1.0),
            headings: vec![0.785398, 1.2, -0.4, 2.9, 0.0],
        })
        .unwrap();
        assert_eq!(p.positions.len(), 15);
        for seg in p.positions.chunks(3) {
            for w in seg.windows(2) {
                let d = (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
                assert!((d - 2f64.sqrt()).abs() < 1e-9);
            }
        }
        assert!((p.arc_length() - 5.0 * 2.0 * 2f64.sqrt()).abs() < 1e-9);

        let line = segment_path(&SegmentParams {
            segments: 1,
            points_per_segment: 4,
            spacing: 1.0,
            start: (0.0, 0.0),
            headings: vec![0.0],
        })
        .unwrap();
        assert_eq!(line.positions, vec![(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)]);

        assert!(segment_path(&SegmentParams {
            segments: 0,
            points_per_segment: 4,
            spacing: 1.0,
            start: (0.0, 0.0),
            headings: vec![],
        })
        .is_err());
    }

    #[test]
    fn rasterize_rounds_and_clamps() {
        let p = ScanPath { positions: vec![(3.4, 7.6)], kind: PathKind::Segment };
        let m = rasterize(&p, 16, 16);
        assert!(m.get(8, 3));
        assert_eq!(m.popcount(), 1);
        let p = ScanPath { positions: vec![(-2.0, 5.0), (-2.0, 5.0)], kind: PathKind::Segment };
        let m = rasterize(&p, 8, 8);
        assert!(m.get(5, 0));
        assert_eq!(m.popcount(), 1);
    }

    #[test]
    fn tune_uniform_family_in_log_steps() {
        let cov = |s: f64| {
            let stride = s.round().max(1.0) as usize;
            Ok(uniform_grid_mask(512, 512, stride)?.coverage())
        };
        let bracket = (1.0, 64.0);
        let t = tune_coverage(cov, bracket, 1.0 / 16.0, 0.0).unwrap();
        assert_eq!(t.coverage, 1.0 / 16.0);
        assert!(t.iterations as f64 <= (bracket.1 - bracket.0).log2().ceil());
        let err = tune_coverage(cov, (4.0, 64.0), 0.5, 0.02).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
    }

    #[test]
    fn path_csv_roundtrip() {
        let p = spiral_with_pitch(32, 32, 1.3);
        let (back, seed) = ScanPath::from_csv(&p.to_csv(11)).unwrap();
        assert_eq!(seed, 11);
        assert_eq!(back, p);
        assert!(p.to_csv(11).starts_with("# kind=spiral seed=11\n"));
    }

    #[test]
    fn distance_map_small() {
        let mut m = BinaryMask::new(4, 4);
        m.set(0, 0, true);
        let d = m.distance_map().unwrap();
        assert_eq!(d[0], 0.0);
        assert!((d[15] - 18f64.sqrt()).abs() < 1e-12);
        assert!(BinaryMask::new(2, 2).distance_map().is_err());
    }

    proptest! {
        #[test]
        fn random_grid_popcount_exact(h in 1usize..64, w in 1usize..64, t in 0.001f64..=1.0, seed in any::<u64>()) {
            let m = random_grid_mask(h, w, t, seed).unwrap();
            prop_assert_eq!(m.popcount(), (t * (h * w) as f64).round() as usize);
            prop_assert_eq!(m.coverage(), m.popcount() as f64 / (h * w) as f64);
        }

        #[test]
        fn integer_segment_popcount_is_distinct_positions(
            start in (0i32..8, 0i32..8),
            dirs in proptest::collection::vec(0usize..4, 1..6),
            m in 1usize..5,
        ) {
            let headings: Vec<f64> = dirs.iter().map(|&d| d as f64 * std::f64::consts::FRAC_PI_2).collect();
            let p = segment_path(&SegmentParams {
                segments: headings.len(),
                points_per_segment: m,
                spacing: 1.0,
                start: (start.0 as f64, start.1 as f64),
                headings,
            }).unwrap();
            let distinct: HashSet<(i64, i64)> = p.positions.iter()
                .map(|&(x, y)| (x.round() as i64, y.round() as i64))
                .filter(|&(x, y)| (0..64).contains(&x) && (0..64).contains(&y))
                .collect();
            let all_inside = p.positions.iter().all(|&(x, y)| x.round() >= 0.0 && y.round() >= 0.0 && x.round() < 64.0 && y.round() < 64.0);
            prop_assume!(all_inside);
            prop_assert_eq!(rasterize(&p, 64, 64).popcount(), distinct.len());
        }
    }
}

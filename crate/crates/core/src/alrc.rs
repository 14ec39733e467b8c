//! Adaptive learning rate clipping, Huberized losses, and a small optimizer
//! harness on heavy-tailed linear regression for studying them.

use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_DECAY: f64 = 0.999;
pub const DEFAULT_WARMUP: usize = 10;
pub const BOXCAR_WINDOW: usize = 500;
pub const FINAL_WINDOW: usize = 5000;

/// Running loss statistics and clipping multipliers for one training stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlrcState<T = f64> {
    mu1: T,
    mu2: T,
    n_up: T,
    n_down: T,
    decay: T,
    warmup_min: usize,
    count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord<T = f64> {
    pub raw: T,
    pub transformed: T,
    pub multiplier: T,
    pub clipped_above: bool,
    pub clipped_below: bool,
}

impl<T: Scalar> LossRecord<T> {
    fn unclipped(raw: T) -> Self {
        LossRecord {
            raw,
            transformed: raw,
            multiplier: T::one(),
            clipped_above: false,
            clipped_below: false,
        }
    }
}

fn check_n<T: Scalar>(n: T) -> Result<()> {
    if n > T::zero() && !n.is_nan() {
        Ok(())
    } else {
        Err(Error::invalid(format!("clip multiplier {n} must be > 0")))
    }
}

impl<T: Scalar> AlrcState<T> {
    /// Fresh state with the default decay and warmup; pass infinity to disable a side.
    pub fn new(n_up: T, n_down: T) -> Result<Self> {
        check_n(n_up)?;
        check_n(n_down)?;
        Ok(AlrcState {
            mu1: T::zero(),
            mu2: T::zero(),
            n_up,
            n_down,
            decay: T::of(DEFAULT_DECAY),
            warmup_min: DEFAULT_WARMUP,
            count: 0,
        })
    }

    /// Clips above only.
    pub fn upper(n_up: T) -> Result<Self> {
        Self::new(n_up, T::infinity())
    }

    pub fn with_decay(mut self, decay: T) -> Result<Self> {
        if !(decay > T::zero() && decay < T::one()) {
            return Err(Error::invalid(format!("decay {decay} must lie in (0, 1)")));
        }
        self.decay = decay;
        Ok(self)
    }

    pub fn with_warmup(mut self, warmup_min: usize) -> Self {
        self.warmup_min = warmup_min;
        self
    }

    /// Post-warmup state with given running moments.
    pub fn from_moments(mu1: T, mu2: T, n_up: T, n_down: T) -> Result<Self> {
        let mut s = Self::new(n_up, n_down)?;
        s.mu1 = mu1;
        s.mu2 = mu2;
        s.count = s.warmup_min;
        Ok(s)
    }

    pub fn mu1(&self) -> T {
        self.mu1
    }

    pub fn mu2(&self) -> T {
        self.mu2
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn warmed_up(&self) -> bool {
        self.count >= self.warmup_min
    }

    pub fn sigma(&self) -> T {
        (self.mu2 - self.mu1 * self.mu1).max(T::zero()).sqrt()
    }

    fn bound(&self, n: T, sign: T) -> T {
        if n.is_infinite() {
            sign * T::infinity()
        } else {
            self.mu1 + sign * n * self.sigma()
        }
    }

    /// Upper clip threshold `mu1 + n_up·σ`.
    pub fn upper_bound(&self) -> T {
        self.bound(self.n_up, T::one())
    }

    /// Lower clip threshold `mu1 - n_down·σ`.
    pub fn lower_bound(&self) -> T {
        self.bound(self.n_down, -T::one())
    }

    /// Clips `loss` against the current statistics, then folds the raw loss into them.
    pub fn transform(&mut self, loss: T) -> Result<LossRecord<T>> {
        if !loss.is_finite() || loss < T::zero() {
            return Err(Error::InvalidLoss(loss.as_f64()));
        }
        let mut rec = LossRecord::unclipped(loss);
        if self.warmed_up() {
            let upper = self.upper_bound();
            let lower = self.lower_bound();
            if loss > upper {
                rec.multiplier = upper / loss;
                rec.transformed = upper;
                rec.clipped_above = true;
            } else if lower > T::zero() && loss < lower && loss > T::zero() {
                rec.multiplier = lower / loss;
                rec.transformed = lower;
                rec.clipped_below = true;
            }
        }
        self.update(loss);
        Ok(rec)
    }

    fn update(&mut self, loss: T) {
        self.count += 1;
        if self.count <= self.warmup_min {
            let k = T::of(self.count as f64);
            self.mu1 = self.mu1 + (loss - self.mu1) / k;
            self.mu2 = self.mu2 + (loss * loss - self.mu2) / k;
        } else {
            let a = T::one() - self.decay;
            self.mu1 = self.decay * self.mu1 + a * loss;
            self.mu2 = self.decay * self.mu2 + a * loss * loss;
        }
    }
}

/// `min(L, sqrt(λL))`.
pub fn huber_transform<T: Scalar>(loss: T, lambda: T) -> Result<T> {
    if !(loss >= T::zero()) {
        return Err(Error::InvalidLoss(loss.as_f64()));
    }
    if !(lambda > T::zero()) {
        return Err(Error::invalid(format!("huber lambda {lambda} must be > 0")));
    }
    Ok(loss.min((lambda * loss).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd { lr: f64, momentum: f64, nesterov: bool },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerSpec {
    pub fn sgd(lr: f64) -> Self {
        OptimizerSpec::Sgd {
            lr,
            momentum: 0.9,
            nesterov: false,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerSpec::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |m: f64| (0.0..1.0).contains(&m);
        let ok = match *self {
            OptimizerSpec::Sgd { lr, momentum, .. } => lr > 0.0 && unit(momentum),
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => lr > 0.0 && unit(beta1) && unit(beta2) && eps > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid optimizer {self:?}")))
        }
    }
}

/// Two-parameter optimizer state.
struct Optimizer {
    spec: OptimizerSpec,
    m: [f64; 2],
    v: [f64; 2],
    t: i32,
}

impl Optimizer {
    fn new(spec: OptimizerSpec) -> Self {
        Optimizer {
            spec,
            m: [0.0; 2],
            v: [0.0; 2],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64; 2], grad: [f64; 2]) {
        self.t += 1;
        match self.spec {
            OptimizerSpec::Sgd { lr, momentum, nesterov } => {
                for i in 0..2 {
                    self.m[i] = momentum * self.m[i] + grad[i];
                    let d = if nesterov { grad[i] + momentum * self.m[i] } else { self.m[i] };
                    params[i] -= lr * d;
                }
            }
            OptimizerSpec::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                for i in 0..2 {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Clip {
    None,
    Alrc {
        #[serde(with = "crate::serde_ext::real")]
        n_up: f64,
        #[serde(with = "crate::serde_ext::real")]
        n_down: f64,
        decay: f64,
        warmup: usize,
    },
    Huber { lambda: f64 },
}

impl Clip {
    /// Upper-only clipping with default decay and warmup.
    pub fn alrc(n_up: f64) -> Self {
        Clip::Alrc {
            n_up,
            n_down: f64::INFINITY,
            decay: DEFAULT_DECAY,
            warmup: DEFAULT_WARMUP,
        }
    }
}

/// Least-pth-power fit of `y = w·x + b` where `x ~ N(0, 1)` and
/// `y = w_true·x + b_true + noise_scale·t₃`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTask {
    pub w_true: f64,
    pub b_true: f64,
    pub noise_scale: f64,
    pub p: u32,
}

impl RegressionTask {
    pub fn new(p: u32) -> Self {
        RegressionTask {
            w_true: 1.0,
            b_true: 0.5,
            noise_scale: 1.0,
            p,
        }
    }

    /// Infinite `(x, y)` stream; training consumes it in order, `batch` samples per step.
    pub fn stream(&self, seed: u64) -> Samples {
        Samples {
            task: *self,
            rng: rng_from_seed(derive_seed(seed, &[0])),
            t3: StudentT::new(3.0).expect("valid dof"),
        }
    }

    pub fn loss(&self, err: f64) -> f64 {
        err.abs().powi(self.p as i32)
    }

    /// d loss / d err.
    fn dloss(&self, err: f64) -> f64 {
        let p = self.p as i32;
        p as f64 * err.abs().powi(p - 1) * err.signum()
    }
}

pub struct Samples {
    task: RegressionTask,
    rng: Rng,
    t3: StudentT<f64>,
}

impl Iterator for Samples {
    type Item = (f64, f64);

    fn next(&mut self) -> Option<(f64, f64)> {
        let x: f64 = StandardNormal.sample(&mut self.rng);
        let e = self.t3.sample(&mut self.rng);
        let t = &self.task;
        Some((x, t.w_true * x + t.b_true + t.noise_scale * e))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRun {
    pub raw: Vec<f64>,
    pub transformed: Vec<f64>,
    pub multiplier: Vec<f64>,
    /// `[w, b]` after the last completed step.
    pub params: [f64; 2],
    /// First step whose loss or parameters were non-finite.
    pub diverged_at: Option<usize>,
}

impl TrainingRun {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Mean of the last `FINAL_WINDOW` raw losses; infinite for diverged runs.
    pub fn final_mean(&self) -> f64 {
        if self.diverged() {
            return f64::INFINITY;
        }
        let k = self.raw.len().min(FINAL_WINDOW);
        self.raw[self.raw.len() - k..].iter().sum::<f64>() / k as f64
    }

    /// `step,raw_loss,transformed_loss,multiplier`, boxcar-averaged over `window`
    /// steps and reported once per window (at its last step).
    pub fn curve_csv(&self, window: usize) -> String {
        let mut s = String::from("step,raw_loss,transformed_loss,multiplier\n");
        let window = window.max(1);
        let [raw, tr, mu] = [&self.raw, &self.transformed, &self.multiplier].map(|v| boxcar(v, window));
        for i in (0..raw.len()).step_by(window) {
            s.push_str(&format!("{},{},{},{}\n", i + window - 1, raw[i], tr[i], mu[i]));
        }
        s
    }
}

/// Sliding-window mean; output `i` averages `values[i..i + window]`.
pub fn boxcar(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    for chunk in values.windows(window) {
        out.push(chunk.iter().sum::<f64>() / window as f64);
    }
    out
}

/// Trains `(w, b)` from zero. The batch-mean raw loss passes through `clip`;
/// the gradient is scaled by the derivative of that transform (the ALRC
/// multiplier is held constant). Divergence ends the run early.
pub fn run_synthetic_training(
    task: &RegressionTask,
    opt: OptimizerSpec,
    clip: Clip,
    steps: usize,
    batch: usize,
    seed: u64,
) -> Result<TrainingRun> {
    if steps == 0 || batch == 0 {
        return Err(Error::invalid("steps and batch must be >= 1"));
    }
    if task.p == 0 {
        return Err(Error::invalid("loss power must be >= 1"));
    }
    opt.validate()?;
    let mut alrc = match clip {
        Clip::Alrc {
            n_up,
            n_down,
            decay,
            warmup,
        } => Some(AlrcState::new(n_up, n_down)?.with_decay(decay)?.with_warmup(warmup)),
        Clip::Huber { lambda } if !(lambda > 0.0) => {
            return Err(Error::invalid(format!("huber lambda {lambda} must be > 0")))
        }
        _ => None,
    };
    let mut data = task.stream(seed);
    let mut optim = Optimizer::new(opt);
    let mut params = [0.0f64; 2];
    let mut run = TrainingRun {
        raw: Vec::with_capacity(steps),
        transformed: Vec::with_capacity(steps),
        multiplier: Vec::with_capacity(steps),
        params,
        diverged_at: None,
    };
    let inv = 1.0 / batch as f64;
    for step in 0..steps {
        let (mut loss, mut gw, mut gb) = (0.0, 0.0, 0.0);
        for (x, y) in data.by_ref().take(batch) {
            let err = params[0] * x + params[1] - y;
            loss += task.loss(err);
            let d = task.dloss(err);
            gw += d * x;
            gb += d;
        }
        loss *= inv;
        if !loss.is_finite() {
            run.diverged_at = Some(step);
            break;
        }
        let (transformed, multiplier, scale) = match (&mut alrc, clip) {
            (Some(state), _) => {
                let rec = state.transform(loss)?;
                (rec.transformed, rec.multiplier, rec.multiplier)
            }
            (None, Clip::Huber { lambda }) => {
                let t = huber_transform(loss, lambda)?;
                let grad_scale = if loss <= lambda { 1.0 } else { 0.5 * (lambda / loss).sqrt() };
                (t, if loss > 0.0 { t / loss } else { 1.0 }, grad_scale)
            }
            _ => (loss, 1.0, 1.0),
        };
        run.raw.push(loss);
        run.transformed.push(transformed);
        run.multiplier.push(multiplier);
        optim.step(&mut params, [scale * gw * inv, scale * gb * inv]);
        if !params.iter().all(|p| p.is_finite()) {
            run.diverged_at = Some(step);
            break;
        }
        run.params = params;
    }
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    /// Upper clip multiplier; infinity means unclipped.
    #[serde(with = "crate::serde_ext::real")]
    pub n: f64,
    pub batch: usize,
    #[serde(with = "crate::serde_ext::real_vec")]
    pub final_means: Vec<f64>,
    pub diverged: usize,
}

impl GridCell {
    /// Mean and sample std of the per-repeat final means, each ×100; both
    /// infinite if any repeat diverged.
    pub fn summary_x100(&self) -> (f64, f64) {
        let v = &self.final_means;
        let n = v.len() as f64;
        if v.iter().any(|x| !x.is_finite()) {
            return (f64::INFINITY, f64::INFINITY);
        }
        let m = v.iter().sum::<f64>() / n;
        let s = if v.len() > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        (100.0 * m, 100.0 * s)
    }
}

/// Seed of a repeat; shared across clip settings so columns see the same data.
pub fn repeat_seed(seed: u64, batch: usize, repeat: usize) -> u64 {
    derive_seed(seed, &[batch as u64, repeat as u64])
}

pub struct GridSpec {
    pub task: RegressionTask,
    pub opt: OptimizerSpec,
    pub ns: Vec<f64>,
    pub batches: Vec<usize>,
    pub repeats: usize,
    pub steps: usize,
    pub seed: u64,
}

/// Runs every (n, batch, repeat) in parallel; cells come back n-major.
pub fn alrc_grid(spec: &GridSpec) -> Result<Vec<GridCell>> {
    if spec.repeats == 0 || spec.ns.is_empty() || spec.batches.is_empty() {
        return Err(Error::invalid("grid needs at least one n, batch and repeat"));
    }
    let units: Vec<(f64, usize, usize)> = spec
        .ns
        .iter()
        .flat_map(|&n| spec.batches.iter().flat_map(move |&b| (0..spec.repeats).map(move |r| (n, b, r))))
        .collect();
    let finals: Vec<Result<TrainingRun>> = units
        .par_iter()
        .map(|&(n, b, r)| {
            let clip = if n.is_infinite() { Clip::None } else { Clip::alrc(n) };
            run_synthetic_training(&spec.task, spec.opt, clip, spec.steps, b, repeat_seed(spec.seed, b, r))
        })
        .collect();
    let mut cells = Vec::new();
    for (chunk, unit) in finals.chunks(spec.repeats).zip(units.chunks(spec.repeats)) {
        let mut cell = GridCell {
            n: unit[0].0,
            batch: unit[0].1,
            final_means: Vec::with_capacity(spec.repeats),
            diverged: 0,
        };
        for run in chunk {
            let run = run.as_ref().map_err(|e| Error::invalid(e.to_string()))?;
            cell.diverged += usize::from(run.diverged());
            cell.final_means.push(run.final_mean());
        }
        cells.push(cell);
    }
    Ok(cells)
}

pub const GRID_CSV_HEADER: &str = "n,batch,mean_x100,std_x100,repeats,diverged";

pub fn grid_csv(cells: &[GridCell]) -> String {
    let mut s = format!("{GRID_CSV_HEADER}\n");
    for c in cells {
        let (m, sd) = c.summary_x100();
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            crate::serde_ext::format_real(c.n),
            c.batch,
            m,
            sd,
            c.final_means.len(),
            c.diverged
        ));
    }
    s
}

impl FromStr for OptimizerSpec {
    type Err = Error;

    /// `sgd:<lr>`, `nesterov:<lr>` or `adam:<lr>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, lr) = s.split_once(':').ok_or_else(|| Error::invalid(format!("bad optimizer {s:?}")))?;
        let lr: f64 = lr.parse().map_err(|_| Error::invalid(format!("bad learning rate in {s:?}")))?;
        let spec = match kind {
            "sgd" => OptimizerSpec::sgd(lr),
            "nesterov" => OptimizerSpec::Sgd {
                lr,
                momentum: 0.9,
                nesterov: true,
            },
            "adam" => OptimizerSpec::adam(lr),
            _ => return Err(Error::invalid(format!("unknown optimizer {kind:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

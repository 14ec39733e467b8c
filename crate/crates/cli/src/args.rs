use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use stemscan_core::serde_ext::{self, parse_real};

#[derive(Parser, Debug)]
#[command(name = "stemscan", version, about = "Compressed-sensing STEM simulation and benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic image corpus.
    Synth(SynthArgs),
    /// Generate scan paths and masks at target coverages.
    Paths(PathsArgs),
    /// Simulate one noisy partial acquisition and optionally complete it.
    Acquire(AcquireArgs),
    /// Completion error against coverage over a corpus.
    Sweep(SweepArgs),
    /// Benchmark classical denoisers on Poisson-corrupted images.
    DenoiseBench(DenoiseArgs),
    /// Loss-clipping grid on synthetic heavy-tailed regression.
    Alrc(AlrcArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Paths(_) => "paths",
            Command::Acquire(_) => "acquire",
            Command::Sweep(_) => "sweep",
            Command::DenoiseBench(_) => "denoise-bench",
            Command::Alrc(_) => "alrc",
            Command::Replay(_) => "replay",
        }
    }
}

/// Flags that do not affect results and are left out of manifests.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Output directory [default: out/<command>/<timestamp>]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: $STEMSCAN_THREADS or all cores]
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// A fraction written as a decimal (`0.05`) or a ratio (`1/20`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fraction(pub f64);

impl FromStr for Fraction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let v = match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
                let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
                a / b
            }
            None => s.parse().map_err(|_| format!("bad fraction {s:?}"))?,
        };
        if v > 0.0 && v <= 1.0 {
            Ok(Fraction(v))
        } else {
            Err(format!("fraction {s:?} must lie in (0, 1]"))
        }
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Fraction)
    }
}

/// A positive real that may be `inf`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Real(pub f64);

impl FromStr for Real {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match parse_real(s) {
            Some(v) if v > 0.0 => Ok(Real(v)),
            _ => Err(format!("expected a positive number or inf, got {s:?}")),
        }
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_ext::format_real(self.0))
    }
}

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        serde_ext::real::serialize(&self.0, s)
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        serde_ext::real::deserialize(d).map(Real)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub count: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train/validation/test ratios for the split file.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "0.8,0.1,0.1")]
    pub split: Vec<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct PathsArgs {
    /// spiral, jittered_grid, random_grid or uniform_grid
    #[arg(long, default_value = "spiral")]
    pub kind: String,
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    /// Coverage targets (ignored for uniform grids).
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "1/10,1/20,1/40,1/100")]
    pub coverages: Vec<Fraction>,
    /// Uniform-grid stride.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct AcquireArgs {
    /// Clean input image (PGM or PNG).
    #[arg(long)]
    pub image: PathBuf,
    /// Mask PGM to use instead of generating one.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value = "spiral")]
    pub kind: String,
    #[arg(long, default_value = "1/20")]
    pub coverage: Fraction,
    /// Counts per pixel at unit intensity, or inf.
    #[arg(long, default_value = "300")]
    pub dose: Real,
    /// Extra noise on singly-visited path pixels, in units of 1/sqrt(dose).
    #[arg(long, default_value_t = 0.0)]
    pub boost: f64,
    /// Completion method for the unscanned pixels.
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct SweepArgs {
    /// Directory of PGM/PNG images.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "spiral")]
    pub kind: String,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "1/87,1/50,1/20")]
    pub coverages: Vec<Fraction>,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "idw")]
    pub methods: Vec<String>,
    #[arg(long, default_value = "300")]
    pub dose: Real,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixels scored by RMSE: all, scanned or unscanned.
    #[arg(long, default_value = "all")]
    pub region: String,
    /// Error-map accumulation: squared or absolute.
    #[arg(long, default_value = "squared")]
    pub error_kind: String,
    #[arg(long, default_value_t = 100)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.224)]
    pub hist_max: f64,
    /// Min-max normalize each image on load.
    #[arg(long, default_value_t = false)]
    pub normalize: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "300")]
    pub dose: Real,
    /// Denoiser names, or `all`.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "all")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = false)]
    pub normalize: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[command(args_override_self = true)]
pub struct AlrcArgs {
    /// Loss power.
    #[arg(long, default_value_t = 4)]
    pub p: u32,
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "1,4,16,64")]
    pub batches: Vec<usize>,
    /// Upper clip multipliers; inf disables clipping.
    #[arg(long, action = ArgAction::Set, value_delimiter = ',', default_value = "2,3,4,inf")]
    pub n: Vec<Real>,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, default_value_t = 50_000)]
    pub steps: usize,
    /// sgd:<lr>, nesterov:<lr> or adam:<lr>
    #[arg(long, default_value = "sgd:2e-5")]
    pub optimizer: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Boxcar window for curve files.
    #[arg(long, default_value_t = 500)]
    pub window: usize,
    /// Skip the per-cell learning curves.
    #[arg(long, default_value_t = false)]
    pub no_curves: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fractions() {
        assert_eq!("1/20".parse::<Fraction>().unwrap(), Fraction(0.05));
        assert_eq!("0.25".parse::<Fraction>().unwrap(), Fraction(0.25));
        assert!((" 1 / 17.9 ".parse::<Fraction>().unwrap().0 - 1.0 / 17.9).abs() < 1e-15);
        assert!("0".parse::<Fraction>().is_err());
        assert!("3/2".parse::<Fraction>().is_err());
        assert!("x".parse::<Fraction>().is_err());
    }

    #[test]
    fn reals() {
        assert_eq!("inf".parse::<Real>().unwrap().0, f64::INFINITY);
        assert_eq!("3".parse::<Real>().unwrap().0, 3.0);
        assert!("-1".parse::<Real>().is_err());
        assert_eq!(serde_json::to_string(&vec![Real(2.0), Real(f64::INFINITY)]).unwrap(), r#"[2.0,"inf"]"#);
    }

    #[test]
    fn later_flags_win() {
        let cli = Cli::try_parse_from(["stemscan", "paths", "--coverages", "1/10", "--seed", "1", "--coverages", "1/20,1/40", "--seed", "2"]).unwrap();
        let Command::Paths(a) = cli.command else { panic!() };
        assert_eq!(a.coverages, vec![Fraction(0.05), Fraction(0.025)]);
        assert_eq!(a.seed, 2);
    }
}

//! Command implementations behind the `stemscan` binary.

pub mod args;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use stemscan_core::acquisition::{sample_scan, segment_duration_noise, DoseModel};
use stemscan_core::alrc::{alrc_grid, grid_csv, repeat_seed, run_synthetic_training, Clip, GridSpec, OptimizerSpec, RegressionTask};
use stemscan_core::completion::{complete, coverage_sweep, mask_seed, sweep_csv, CompletionMethod, Region, SweepConfig};
use stemscan_core::denoise::{benchmark_denoisers, DenoiserSpec};
use stemscan_core::image::{load_image, save_pgm, split_dataset, BitDepth, Image};
use stemscan_core::metrics::{export_map, histogram, ErrorKind};
use stemscan_core::scan_path::{rasterize, uniform_grid_mask, BinaryMask, PathFamily, PathKind};
use stemscan_core::serde_ext::format_real;
use stemscan_core::synth::synthetic_image;
use stemscan_core::rng::derive_seed;

use args::{AcquireArgs, AlrcArgs, Command, Common, DenoiseArgs, PathsArgs, SweepArgs, SynthArgs};

pub const MANIFEST: &str = "manifest.json";
pub const TOOL: &str = "stemscan";

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Wall-clock creation time; not part of the reproducible output.
    pub created: String,
    pub config: serde_json::Value,
    /// Output files relative to the run directory.
    pub outputs: Vec<String>,
    /// `file:column` entries holding timings rather than results.
    #[serde(default)]
    pub timing_fields: Vec<String>,
}

/// Files written by one command plus items that failed.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    failures: Vec<String>,
    timing_fields: Vec<String>,
}

impl Outputs {
    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }
}

/// Configures the global worker pool: `--threads`, then `STEMSCAN_THREADS`, then all cores.
pub fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("STEMSCAN_THREADS") {
            Ok(v) => Some(v.trim().parse().with_context(|| format!("STEMSCAN_THREADS={v:?}"))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n.filter(|&n| n > 0) {
        // A pool may already exist when called twice in one process; keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn resolve_out(common: &Common, command: &str) -> Result<PathBuf> {
    if let Some(dir) = &common.out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        return Ok(dir.clone());
    }
    let base = Path::new("out").join(command);
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S%.3f").to_string();
    let dir = base.join(&stamp);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(base.join("latest"), format!("{stamp}\n")).context("writing latest pointer")?;
    Ok(dir)
}

/// Runs a parsed command and returns its output directory.
pub fn run(command: Command) -> Result<PathBuf> {
    match command {
        Command::Replay(r) => {
            let text = fs::read_to_string(&r.manifest).with_context(|| format!("reading {}", r.manifest.display()))?;
            let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", r.manifest.display()))?;
            if m.tool != TOOL {
                bail!("{} was not written by {TOOL}", r.manifest.display());
            }
            let cmd = command_from_manifest(&m.command, m.config, r.common)?;
            run(cmd)
        }
        cmd => {
            let name = cmd.name();
            let (config, common) = match &cmd {
                Command::Synth(a) => (serde_json::to_value(a)?, &a.common),
                Command::Paths(a) => (serde_json::to_value(a)?, &a.common),
                Command::Acquire(a) => (serde_json::to_value(a)?, &a.common),
                Command::Sweep(a) => (serde_json::to_value(a)?, &a.common),
                Command::DenoiseBench(a) => (serde_json::to_value(a)?, &a.common),
                Command::Alrc(a) => (serde_json::to_value(a)?, &a.common),
                Command::Replay(_) => unreachable!(),
            };
            init_threads(common.threads)?;
            let dir = resolve_out(common, name)?;
            let mut out = Outputs::default();
            match &cmd {
                Command::Synth(a) => cmd_synth(a, &dir, &mut out)?,
                Command::Paths(a) => cmd_paths(a, &dir, &mut out)?,
                Command::Acquire(a) => cmd_acquire(a, &dir, &mut out)?,
                Command::Sweep(a) => cmd_sweep(a, &dir, &mut out)?,
                Command::DenoiseBench(a) => cmd_denoise_bench(a, &dir, &mut out)?,
                Command::Alrc(a) => cmd_alrc(a, &dir, &mut out)?,
                Command::Replay(_) => unreachable!(),
            }
            let mut outputs: Vec<String> = out
                .files
                .iter()
                .filter_map(|p| p.strip_prefix(&dir).ok())
                .map(|p| p.to_string_lossy().into_owned())
                .collect();
            outputs.sort();
            let manifest = Manifest {
                tool: TOOL.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                command: name.into(),
                created: chrono::Local::now().to_rfc3339(),
                config,
                outputs,
                timing_fields: out.timing_fields,
            };
            fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?).context("writing manifest")?;
            if !out.failures.is_empty() {
                for f in &out.failures {
                    eprintln!("failed: {f}");
                }
                bail!("{} of the requested outputs failed", out.failures.len());
            }
            Ok(dir)
        }
    }
}

fn command_from_manifest(name: &str, config: serde_json::Value, common: Common) -> Result<Command> {
    fn with<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
        serde_json::from_value(v).context("manifest config does not match the command")
    }
    Ok(match name {
        "synth" => Command::Synth(SynthArgs { common, ..with(config)? }),
        "paths" => Command::Paths(PathsArgs { common, ..with(config)? }),
        "acquire" => Command::Acquire(AcquireArgs { common, ..with(config)? }),
        "sweep" => Command::Sweep(SweepArgs { common, ..with(config)? }),
        "denoise-bench" => Command::DenoiseBench(DenoiseArgs { common, ..with(config)? }),
        "alrc" => Command::Alrc(AlrcArgs { common, ..with(config)? }),
        other => bail!("unknown command {other:?} in manifest"),
    })
}

fn dose_model(d: f64) -> Result<DoseModel> {
    if d.is_infinite() {
        Ok(DoseModel::noiseless())
    } else {
        Ok(DoseModel::new(d)?)
    }
}

/// PGM/PNG files of `dir` in name order.
pub fn load_corpus(dir: &Path, normalize: bool) -> Result<(Vec<Image>, Vec<String>)> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading corpus {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("pgm" | "png")
            )
        })
        .collect();
    names.sort();
    if names.is_empty() {
        bail!("corpus {} has no PGM or PNG images", dir.display());
    }
    let mut images = Vec::with_capacity(names.len());
    for p in &names {
        let img: Image = load_image(p)?;
        images.push(if normalize { img.normalize() } else { img });
    }
    let ids = names
        .iter()
        .map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    Ok((images, ids))
}

fn cmd_synth(a: &SynthArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    if a.count == 0 {
        bail!("--count must be >= 1");
    }
    let ratios: [f64; 3] = a
        .split
        .as_slice()
        .try_into()
        .map_err(|_| anyhow!("--split needs three ratios"))?;
    let mut ids = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let img: Image = synthetic_image(a.size, a.size, derive_seed(a.seed, &[i as u64]))?;
        let name = format!("img_{i:04}.pgm");
        let path = dir.join(&name);
        save_pgm(&img, &path, BitDepth::Sixteen)?;
        out.files.push(path);
        ids.push(name);
    }
    let split = split_dataset(&ids, ratios, a.seed)?;
    out.write(dir.join("split.tsv"), split.to_text())
}

fn family(kind: &str) -> Result<PathFamily> {
    kind.parse::<PathFamily>().map_err(|e| anyhow!("{e}"))
}

fn cmd_paths(a: &PathsArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    let kind: PathKind = a.kind.parse()?;
    let mut report = String::from("kind,target,achieved,status\n");
    if kind == PathKind::UniformGrid {
        let stride = a.stride.context("uniform grids need --stride")?;
        let mask = uniform_grid_mask(a.size, a.size, stride)?;
        let path = dir.join(format!("uniform_s{stride}_mask.pgm"));
        mask.save_pgm(&path)?;
        out.files.push(path);
        let target = 1.0 / (stride * stride) as f64;
        report.push_str(&format!("uniform_grid,{target},{},ok\n", mask.coverage()));
        return out.write(dir.join("coverage.csv"), report);
    }
    let fam = family(&a.kind)?;
    for (i, cov) in a.coverages.iter().enumerate() {
        let stem = format!("{fam}_c{i:02}");
        match fam.generate(a.size, a.size, cov.0, mask_seed(a.seed, i)) {
            Ok((path, mask)) => {
                let mp = dir.join(format!("{stem}_mask.pgm"));
                mask.save_pgm(&mp)?;
                out.files.push(mp);
                if let Some(path) = path {
                    out.write(dir.join(format!("{stem}_path.csv")), path.to_csv(a.seed))?;
                }
                let rel = (mask.coverage() - cov.0) / cov.0;
                report.push_str(&format!("{fam},{},{},ok\n", cov.0, mask.coverage()));
                eprintln!("{stem}: target {:.6} achieved {:.6} ({:+.2}%)", cov.0, mask.coverage(), 100.0 * rel);
            }
            Err(e) => {
                report.push_str(&format!("{fam},{},,failed\n", cov.0));
                out.failures.push(format!("{stem} (coverage {}): {e}", cov.0));
            }
        }
    }
    out.write(dir.join("coverage.csv"), report)
}

fn cmd_acquire(a: &AcquireArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    let img: Image = load_image(&a.image)?;
    let dose = dose_model(a.dose.0)?;
    let (path, mask) = match &a.mask {
        Some(m) => (None, BinaryMask::load(m)?),
        None => family(&a.kind)?.generate(img.height(), img.width(), a.coverage.0, mask_seed(a.seed, 0))?,
    };
    let mut scan = sample_scan(&img, &mask, dose, derive_seed(a.seed, &[1]))?;
    if let Some(p) = &path {
        debug_assert_eq!(rasterize(p, img.height(), img.width()), mask);
        scan = segment_duration_noise(&scan, p, a.boost, derive_seed(a.seed, &[2]))?;
        out.write(dir.join("path.csv"), p.to_csv(a.seed))?;
    } else if a.boost != 0.0 {
        bail!("--boost needs a generated path, not a mask file");
    }
    scan.save(dir, "scan")?;
    for f in ["scan_values.pgm", "scan_mask.pgm", "scan.json"] {
        out.files.push(dir.join(f));
    }
    if let Some(m) = &a.method {
        let method: CompletionMethod = m.parse()?;
        let done = complete(&scan, method)?;
        if !done.converged {
            eprintln!("warning: {method} stopped after {} iterations above tolerance", done.iterations);
        }
        let p = dir.join("completed.pgm");
        save_pgm(&done.image.map(|v| v.clamp(0.0, 1.0)), &p, BitDepth::Sixteen)?;
        out.files.push(p);
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    let (corpus, _) = load_corpus(&a.corpus, a.normalize)?;
    let fam = family(&a.kind)?;
    let region: Region = a.region.parse()?;
    let error_kind = match a.error_kind.as_str() {
        "squared" => ErrorKind::Squared,
        "absolute" => ErrorKind::Absolute,
        other => bail!("unknown error kind {other:?}"),
    };
    let dose = dose_model(a.dose.0)?;
    let mut coverages: Vec<f64> = a.coverages.iter().map(|c| c.0).collect();
    coverages.sort_by(f64::total_cmp);
    let mut csv = String::new();
    for (mi, m) in a.methods.iter().enumerate() {
        let method: CompletionMethod = m.parse()?;
        let cfg = SweepConfig {
            family: fam,
            coverages: coverages.clone(),
            method,
            dose,
            seed: a.seed,
            region,
            error_kind,
        };
        let rows = coverage_sweep(&corpus, &cfg)?;
        let block = sweep_csv(&rows);
        csv.push_str(if mi == 0 { &block } else { block.split_once('\n').map_or("", |(_, b)| b) });
        let mut per_image = String::from("coverage,image,rmse\n");
        for (ci, row) in rows.iter().enumerate() {
            for (ii, r) in row.rmses.iter().enumerate() {
                per_image.push_str(&format!("{},{ii},{r}\n", row.coverage));
            }
            let stem = format!("{}_c{ci:02}", method.name());
            let hist = histogram(&row.rmses, 0.0, a.hist_max, a.bins)?;
            out.write(dir.join(format!("{stem}_hist.csv")), hist.to_csv())?;
            for (suffix, map) in [("mean", row.error_map.mean()?), ("std", row.error_map.std()?)] {
                let p = dir.join(format!("{stem}_error_{suffix}.pgm"));
                export_map(&map, &p)?;
                out.files.push(p.clone());
                let mut side = p.into_os_string();
                side.push(".json");
                out.files.push(side.into());
            }
            if mi == 0 {
                let p = dir.join(format!("mask_c{ci:02}.pgm"));
                row.mask.save_pgm(&p)?;
                out.files.push(p);
            }
            if row.unconverged > 0 {
                eprintln!("warning: {stem}: {} completions hit the iteration cap", row.unconverged);
            }
        }
        out.write(dir.join(format!("{}_rmse.csv", method.name())), per_image)?;
    }
    out.write(dir.join("sweep.csv"), csv)
}

fn cmd_denoise_bench(a: &DenoiseArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    let (corpus, _) = load_corpus(&a.corpus, a.normalize)?;
    let specs: Vec<DenoiserSpec> = if a.methods.iter().any(|m| m == "all") {
        DenoiserSpec::all()
    } else {
        a.methods.iter().map(|m| m.parse()).collect::<Result<_, _>>()?
    };
    let report = benchmark_denoisers(&corpus, dose_model(a.dose.0)?, &specs, a.trials, a.seed)?;
    for r in report.rows.iter().filter(|r| r.flagged) {
        eprintln!("flagged: {} mean MSE {} exceeds the noisy input", r.method, r.mean_mse);
    }
    out.timing_fields.push("bench.csv:time_per_1000_s".into());
    out.write(dir.join("bench.csv"), report.to_csv())
}

fn cmd_alrc(a: &AlrcArgs, dir: &Path, out: &mut Outputs) -> Result<()> {
    let opt: OptimizerSpec = a.optimizer.parse()?;
    let task = RegressionTask::new(a.p);
    let spec = GridSpec {
        task,
        opt,
        ns: a.n.iter().map(|n| n.0).collect(),
        batches: a.batches.clone(),
        repeats: a.repeats,
        steps: a.steps,
        seed: a.seed,
    };
    let cells = alrc_grid(&spec)?;
    for c in cells.iter().filter(|c| c.diverged > 0) {
        eprintln!("diverged: n={} batch={} in {} of {} repeats", format_real(c.n), c.batch, c.diverged, c.final_means.len());
    }
    out.write(dir.join("grid.csv"), grid_csv(&cells))?;
    if !a.no_curves {
        let curves = dir.join("curves");
        fs::create_dir_all(&curves)?;
        for c in &cells {
            let clip = if c.n.is_infinite() { Clip::None } else { Clip::alrc(c.n) };
            let run = run_synthetic_training(&task, opt, clip, a.steps, c.batch, repeat_seed(a.seed, c.batch, 0))?;
            let name = format!("n{}_b{}.csv", format_real(c.n), c.batch);
            out.write(curves.join(name), run.curve_csv(a.window))?;
        }
    }
    Ok(())
}

//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use stemscan_core::acquisition::{apply_poisson, sample_scan, DoseModel};
use stemscan_core::alrc::{huber_transform, repeat_seed, run_synthetic_training, AlrcState, Clip, OptimizerSpec, RegressionTask};
use stemscan_core::completion::{complete, coverage_sweep, CompletionMethod, Region, SweepConfig};
use stemscan_core::denoise::{benchmark_denoisers, DenoiserSpec, BENCH_CSV_HEADER};
use stemscan_core::image::Image;
use stemscan_core::metrics::{ssim, ErrorKind};
use stemscan_core::rng::rng_from_seed;
use stemscan_core::scan_path::{archimedes_spiral, random_grid_mask, BinaryMask, PathFamily};
use stemscan_core::synth::synthetic_corpus;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn coverage_fidelity() -> Outcome {
    let targets = [
        10.0, 20.0, 40.0, 100.0, 17.9, 27.3, 38.2, 50.0, 60.5, 73.7, 87.0, 23.04,
    ];
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    for d in targets {
        let target = 1.0 / d;
        match archimedes_spiral(512, 512, target) {
            Ok(t) => {
                let rel = (t.mask.coverage() - target).abs() / target;
                worst = worst.max(rel);
                if rel > 0.02 {
                    misses.push(format!("1/{d}: {:.4}", t.mask.coverage()));
                }
            }
            Err(e) => misses.push(format!("1/{d}: {e}")),
        }
    }
    let el = start.elapsed();
    check(
        misses.is_empty() && within(el, 10.0),
        format!("12 spiral targets on 512x512, worst relative error {:.2}%, {:.2} s {misses:?}", 100.0 * worst, el.as_secs_f64()),
    )
}

fn coverage_monotonicity() -> Outcome {
    let start = Instant::now();
    let corpus: Vec<Image> = synthetic_corpus(20, 512, 512, 11).map_err(|e| e.to_string())?;
    let cfg = SweepConfig {
        family: PathFamily::Spiral,
        coverages: vec![1.0 / 87.0, 1.0 / 50.0, 1.0 / 20.0],
        method: CompletionMethod::idw(),
        dose: DoseModel::new(300.0).unwrap(),
        seed: 2,
        region: Region::Unscanned,
        error_kind: ErrorKind::Squared,
    };
    let rows = coverage_sweep(&corpus, &cfg).map_err(|e| e.to_string())?;
    let means: Vec<f64> = rows.iter().map(|r| r.mean_rmse).collect();
    let el = start.elapsed();
    let decreasing = means.windows(2).all(|p| p[1] < p[0]);
    check(
        decreasing && within(el, 120.0),
        format!("idw unscanned RMSE over 20 images at dose 300: {means:.5?}, {:.1} s", el.as_secs_f64()),
    )
}

fn error_map_structure() -> Outcome {
    let corpus: Vec<Image> = synthetic_corpus(200, 128, 128, 12).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for method in [CompletionMethod::Nearest, CompletionMethod::idw()] {
        let cfg = SweepConfig {
            family: PathFamily::Spiral,
            coverages: vec![1.0 / 20.0],
            method,
            dose: DoseModel::new(300.0).unwrap(),
            seed: 3,
            region: Region::All,
            error_kind: ErrorKind::Absolute,
        };
        let rows = coverage_sweep(&corpus, &cfg).map_err(|e| e.to_string())?;
        let row = &rows[0];
        let mean = row.error_map.mean().map_err(|e| e.to_string())?;
        let dist = row.mask.distance_map().map_err(|e| e.to_string())?;
        let (mut far, mut nf, mut near, mut nn) = (0.0, 0usize, 0.0, 0usize);
        for (&d, &e) in dist.iter().zip(mean.data()) {
            if d > 5.0 {
                far += e;
                nf += 1;
            } else if d <= 1.0 {
                near += e;
                nn += 1;
            }
        }
        let ratio = (far / nf as f64) / (near / nn as f64);
        ok &= row.error_map.count() >= 200 && nf > 0 && ratio >= 1.2;
        details.push(format!("{} far/near {ratio:.2} ({nf} far px)", method.name()));
    }
    check(ok, format!("{} over 200 instances", details.join(", ")))
}

fn denoiser_improvement() -> Outcome {
    let start = Instant::now();
    let corpus: Vec<Image> = synthetic_corpus(20, 128, 128, 13).map_err(|e| e.to_string())?;
    let report = benchmark_denoisers(&corpus, DoseModel::new(300.0).unwrap(), &DenoiserSpec::all(), 200, 4)
        .map_err(|e| e.to_string())?;
    let el = start.elapsed();
    let csv = report.to_csv();
    let schema = csv.lines().next() == Some("method,mean_mse,se_mse,mean_ssim,se_ssim,time_per_1000_s")
        && BENCH_CSV_HEADER == "method,mean_mse,se_mse,mean_ssim,se_ssim,time_per_1000_s"
        && csv.lines().count() == 8
        && csv.lines().skip(1).all(|l| l.split(',').count() == 6);
    let noisy = report.rows[0].mean_mse;
    let worse: Vec<&str> = report.rows[1..].iter().filter(|r| r.mean_mse > noisy).map(|r| r.method.as_str()).collect();
    let worst = report.rows[1..].iter().map(|r| r.mean_mse / noisy).fold(0.0, f64::max);
    check(
        schema && worse.is_empty() && within(el, 300.0),
        format!(
            "6 denoisers x 200 trials at dose 300: worst MSE ratio to noisy {worst:.3}, schema {}, {:.1} s {worse:?}",
            if schema { "ok" } else { "mismatch" },
            el.as_secs_f64()
        ),
    )
}

/// Direct per-window evaluation with a 2-D Gaussian kernel built independently.
fn ssim_brute(a: &Image, b: &Image) -> f64 {
    let k = 11usize;
    let mut wts = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            wts[i * k + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let total: f64 = wts.iter().sum();
    wts.iter_mut().for_each(|w| *w /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut n = 0;
    for r in 0..=a.height() - k {
        for c in 0..=a.width() - k {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let w = wts[i * k + j];
                    let (x, y) = (a.get(r + i, c + j), b.get(r + i, c + j));
                    mx += w * x;
                    my += w * y;
                }
            }
            for i in 0..k {
                for j in 0..k {
                    let w = wts[i * k + j];
                    let (x, y) = (a.get(r + i, c + j) - mx, b.get(r + i, c + j) - my);
                    sxx += w * x * x;
                    syy += w * y * y;
                    sxy += w * x * y;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
            n += 1;
        }
    }
    acc / n as f64
}

fn ssim_correctness() -> Outcome {
    let mut rng = rng_from_seed(5);
    let mut worst_id: f64 = 0.0;
    for _ in 0..100 {
        let (h, w) = (rng.random_range(11..48), rng.random_range(11..48));
        let scale = rng.random_range(0.01..1.0);
        let img: Image = Image::from_fn(h, w, |_, _| scale * rng.random::<f64>());
        worst_id = worst_id.max((ssim(&img, &img).map_err(|e| e.to_string())? - 1.0).abs());
    }
    let mut worst_bf: f64 = 0.0;
    for _ in 0..16 {
        let a: Image = Image::from_fn(32, 32, |_, _| rng.random::<f64>());
        let noise = rng.random_range(0.0..0.5);
        let b: Image = Image::from_fn(32, 32, |r, c| (a.get(r, c) + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
        worst_bf = worst_bf.max((ssim(&a, &b).map_err(|e| e.to_string())? - ssim_brute(&a, &b)).abs());
    }
    check(
        worst_id <= 1e-9 && worst_bf <= 1e-9,
        format!("identity max dev {worst_id:.1e} (100 images), brute-force max dev {worst_bf:.1e} (16 of 32x32)"),
    )
}

fn mean_var(img: &Image) -> (f64, f64) {
    let n = img.len() as f64;
    let m = img.data().iter().sum::<f64>() / n;
    (m, img.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn poisson_statistics() -> Outcome {
    let flat: Image = Image::filled(512, 512, 0.5);
    let hi = apply_poisson(&flat, DoseModel::new(2500.0).unwrap(), 6).map_err(|e| e.to_string())?;
    let lo = apply_poisson(&flat, DoseModel::new(200.0).unwrap(), 7).map_err(|e| e.to_string())?;
    let (m_hi, v_hi) = mean_var(&hi);
    let (_, v_lo) = mean_var(&lo);
    let band = 3.0 * (0.5f64 / 2500.0).sqrt() / 512.0;
    let ratio = v_lo / v_hi;
    check(
        (m_hi - 0.5).abs() <= band && (ratio - 12.5).abs() <= 1.25,
        format!("dose 2500 mean {m_hi:.6} (3 sigma band {band:.1e}), variance ratio 200/2500 = {ratio:.3}"),
    )
}

fn alrc_hard_bound() -> Outcome {
    let task = RegressionTask::new(4);
    let steps = 1_000_000;
    let run = run_synthetic_training(&task, OptimizerSpec::sgd(5e-6), Clip::alrc(3.0), steps, 1, 8)
        .map_err(|e| e.to_string())?;
    if run.raw.len() != steps {
        return Err(format!("ALRC run stopped at step {:?}", run.diverged_at));
    }
    let mut state = AlrcState::upper(3.0).unwrap();
    let mut violations = 0usize;
    let mut mismatched = 0usize;
    let mut clipped = 0usize;
    for (i, &l) in run.raw.iter().enumerate() {
        let bound = state.mu1() + 3.0 * state.sigma();
        let warm = state.warmed_up();
        let rec = state.transform(l).unwrap();
        if warm && rec.transformed > bound + 1e-9 {
            violations += 1;
        }
        if rec.transformed.to_bits() != run.transformed[i].to_bits() {
            mismatched += 1;
        }
        clipped += usize::from(rec.clipped_above);
    }
    let opt = OptimizerSpec::sgd(2e-5);
    let a = run_synthetic_training(&task, opt, Clip::None, 200_000, 1, 9).map_err(|e| e.to_string())?;
    let b = run_synthetic_training(&task, opt, Clip::alrc(f64::INFINITY), 200_000, 1, 9).map_err(|e| e.to_string())?;
    let identical = a.raw.len() == b.raw.len()
        && a.raw.iter().zip(&b.raw).all(|(x, y)| x.to_bits() == y.to_bits())
        && a.params.map(f64::to_bits) == b.params.map(f64::to_bits)
        && a.diverged_at == b.diverged_at;
    check(
        violations == 0 && mismatched == 0 && identical,
        format!(
            "10^6 losses, {clipped} clipped, {violations} above bound; n=inf vs unclipped bit-identical: {identical} ({} steps)",
            a.raw.len()
        ),
    )
}

fn alrc_stabilization() -> Outcome {
    let start = Instant::now();
    let task = RegressionTask::new(4);
    let opt = OptimizerSpec::sgd(2e-5);
    let mut passes = 0;
    let mut notes = Vec::new();
    for r in 0..10 {
        let seed = repeat_seed(0, 1, r);
        let plain = run_synthetic_training(&task, opt, Clip::None, 50_000, 1, seed).map_err(|e| e.to_string())?;
        let clip = run_synthetic_training(&task, opt, Clip::alrc(3.0), 50_000, 1, seed).map_err(|e| e.to_string())?;
        let pass = !clip.diverged() && (plain.diverged() || plain.final_mean() >= 10.0 * clip.final_mean());
        passes += usize::from(pass);
        notes.push(match (plain.diverged_at, clip.diverged_at) {
            (_, Some(s)) => format!("alrc diverged@{s}"),
            (Some(s), None) => format!("plain diverged@{s}"),
            (None, None) => format!("ratio {:.1}", plain.final_mean() / clip.final_mean()),
        });
    }
    let el = start.elapsed();
    check(
        passes >= 8 && within(el, 300.0),
        format!("p=4 batch 1 sgd lr 2e-5, {passes}/10 repeats stabilized, {:.1} s [{}]", el.as_secs_f64(), notes.join("; ")),
    )
}

fn huber_exactness() -> Outcome {
    let mut rng = rng_from_seed(10);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let lambda = 10f64.powf(rng.random_range(-3.0..2.0));
        let loss = if rng.random_bool(0.05) { 0.0 } else { 10f64.powf(rng.random_range(-4.0..2.0)) };
        let want = loss.min((lambda * loss).sqrt());
        worst = worst.max((huber_transform(loss, lambda).unwrap() - want).abs());
    }
    let mut jump: f64 = 0.0;
    for lambda in [1e-3, 0.5, 1.0, 7.0, 100.0] {
        let at: f64 = huber_transform(lambda, lambda).unwrap();
        let below: f64 = huber_transform(lambda * (1.0 - 1e-9), lambda).unwrap();
        let above: f64 = huber_transform(lambda * (1.0 + 1e-9), lambda).unwrap();
        jump = jump.max((at - lambda).abs()).max((above - below).abs() / lambda);
    }
    check(
        worst <= 1e-12 && jump <= 1e-8,
        format!("10^5 pairs max dev {worst:.1e}; crossover max relative jump {jump:.1e}"),
    )
}

/// Dense Gaussian elimination for the 5-point graph Laplacian with scanned
/// pixels as Dirichlet data and only in-frame neighbours coupled.
fn harmonic_oracle(values: &Image, mask: &BinaryMask) -> Vec<f64> {
    let (h, w) = (values.height(), values.width());
    let free: Vec<usize> = (0..h * w).filter(|&i| !mask.bits()[i]).collect();
    let mut slot = vec![usize::MAX; h * w];
    for (k, &i) in free.iter().enumerate() {
        slot[i] = k;
    }
    let n = free.len();
    let mut a = vec![vec![0.0f64; n + 1]; n];
    for (k, &i) in free.iter().enumerate() {
        let (r, c) = (i / w, i % w);
        let mut nbrs = Vec::new();
        if r > 0 {
            nbrs.push(i - w);
        }
        if r + 1 < h {
            nbrs.push(i + w);
        }
        if c > 0 {
            nbrs.push(i - 1);
        }
        if c + 1 < w {
            nbrs.push(i + 1);
        }
        a[k][k] = nbrs.len() as f64;
        for j in nbrs {
            if mask.bits()[j] {
                a[k][n] += values.data()[j];
            } else {
                a[k][slot[j]] -= 1.0;
            }
        }
    }
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs())).unwrap();
        a.swap(col, piv);
        let pivot_row = a[col].clone();
        for row in a.iter_mut().skip(col + 1) {
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for k in col..=n {
                    row[k] -= f * pivot_row[k];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (a[row][n] - s) / a[row][row];
    }
    let mut out = values.data().to_vec();
    for (k, &i) in free.iter().enumerate() {
        out[i] = x[k];
    }
    out
}

fn harmonic_extension() -> Outcome {
    let mut rng = rng_from_seed(11);
    let mut cases: Vec<(Image, BinaryMask)> = Vec::new();
    for (h, w) in [(16, 16), (24, 32), (32, 32)] {
        let mut ring = BinaryMask::new(h, w);
        for r in 0..h {
            for c in 0..w {
                if r == 0 || c == 0 || r == h - 1 || c == w - 1 {
                    ring.set(r, c, true);
                }
            }
        }
        let xy = Image::from_fn(h, w, |r, c| (r * c) as f64 / ((h - 1) * (w - 1)) as f64);
        cases.push((xy, ring.clone()));
        cases.push((Image::from_fn(h, w, |_, _| rng.random::<f64>()), ring));
    }
    for (h, w, cov) in [(32, 32, 0.1), (32, 32, 0.02), (20, 28, 0.3)] {
        let mask = random_grid_mask(h, w, cov, rng.random()).unwrap();
        cases.push((Image::from_fn(h, w, |_, _| rng.random::<f64>()), mask));
    }
    let mut worst: f64 = 0.0;
    for (img, mask) in &cases {
        let scan = sample_scan(img, mask, DoseModel::noiseless(), 0).map_err(|e| e.to_string())?;
        let done = complete(&scan, CompletionMethod::Diffusion { iterations: 10_000, tol: 1e-8 }).map_err(|e| e.to_string())?;
        if !done.converged {
            return Err(format!("diffusion hit its cap on a {}x{} case", img.height(), img.width()));
        }
        let oracle = harmonic_oracle(img, mask);
        for (a, b) in done.image.data().iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    check(worst <= 1e-4, format!("{} instances up to 32x32, max error {worst:.1e}", cases.len()))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_stemscan")
}

fn stemscan(args: &[&str], cwd: &Path) -> Result<(), String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

/// Output files of a run, with timing columns blanked.
fn run_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let m: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let timing: Vec<(String, String)> = m["timing_fields"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|v| v.as_str()?.split_once(':').map(|(f, c)| (f.to_string(), c.to_string())))
        .collect();
    let mut files = BTreeMap::new();
    for name in m["outputs"].as_array().ok_or("manifest lists no outputs")? {
        let name = name.as_str().ok_or("bad output entry")?.to_string();
        let mut bytes = std::fs::read(dir.join(&name)).map_err(|e| format!("{name}: {e}"))?;
        if let Some((_, col)) = timing.iter().find(|(f, _)| *f == name) {
            let text = String::from_utf8(bytes).map_err(|e| e.to_string())?;
            let mut lines = text.lines();
            let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
            let idx = header.iter().position(|h| h == col).ok_or(format!("{name} lacks {col}"))?;
            let stripped: Vec<String> = std::iter::once(header.join(","))
                .chain(lines.map(|l| {
                    let mut f: Vec<&str> = l.split(',').collect();
                    f[idx] = "";
                    f.join(",")
                }))
                .collect();
            bytes = stripped.join("\n").into_bytes();
        }
        files.insert(name, bytes);
    }
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    stemscan(&["synth", "--count", "3", "--size", "48", "--seed", "4", "--out", "corpus"], root)?;
    let image = "corpus/img_0000.pgm";
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--count", "2", "--size", "32", "--seed", "9"]),
        ("paths", vec!["paths", "--kind", "spiral", "--size", "96", "--coverages", "1/10,1/20"]),
        ("jittered", vec!["paths", "--kind", "jittered_grid", "--size", "64", "--coverages", "0.1", "--seed", "3"]),
        ("acquire", vec!["acquire", "--image", image, "--coverage", "1/8", "--boost", "0.5", "--method", "idw", "--seed", "2"]),
        ("sweep", vec!["sweep", "--corpus", "corpus", "--coverages", "1/10,1/5", "--methods", "idw,nearest,diffusion", "--seed", "1"]),
        ("denoise", vec!["denoise-bench", "--corpus", "corpus", "--trials", "4", "--seed", "5"]),
        ("alrc", vec!["alrc", "--batches", "1,4", "--n", "3,inf", "--repeats", "2", "--steps", "3000"]),
    ];
    let mut compared = 0;
    for (tag, args) in runs {
        let first = format!("run_{tag}");
        let mut a = args.clone();
        a.extend(["--out", &first]);
        stemscan(&a, root)?;
        let second = format!("replay_{tag}");
        let manifest = format!("{first}/manifest.json");
        stemscan(&["replay", &manifest, "--out", &second, "--threads", "2"], root)?;
        let x = run_outputs(&root.join(&first))?;
        let y = run_outputs(&root.join(&second))?;
        if x.is_empty() || x != y {
            return Err(format!("{tag}: replay differs"));
        }
        compared += x.len();
    }
    check(true, format!("7 runs replayed from manifests, {compared} output files bit-identical"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("coverage fidelity", coverage_fidelity),
        ("coverage-error monotonicity", coverage_monotonicity),
        ("error-map spatial structure", error_map_structure),
        ("denoiser improvement", denoiser_improvement),
        ("SSIM correctness", ssim_correctness),
        ("Poisson statistics", poisson_statistics),
        ("ALRC hard bound", alrc_hard_bound),
        ("ALRC stabilization", alrc_stabilization),
        ("Huber exactness", huber_exactness),
        ("harmonic extension", harmonic_extension),
        ("CLI determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let (tag, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

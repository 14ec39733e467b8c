use stemscan_core::acquisition::{sample_scan, DoseModel, PartialScan, SENTINEL};
use stemscan_core::alrc::{AlrcState, Clip, OptimizerSpec, RegressionTask, run_synthetic_training};
use stemscan_core::completion::{complete, CompletionMethod};
use stemscan_core::denoise::{denoise, DenoiserSpec};
use stemscan_core::metrics::{masked_rmse, mse, ssim};
use stemscan_core::scan_path::{archimedes_spiral, PathFamily};
use stemscan_core::synth::synthetic_image;
use stemscan_core::{ImageF32, ImageF64};

#[test]
fn spiral_scan_complete_and_score() {
    let clean: ImageF64 = synthetic_image(96, 96, 1).unwrap();
    let tuned = archimedes_spiral(96, 96, 0.1).unwrap();
    let scan = sample_scan(&clean, &tuned.mask, DoseModel::new(300.0).unwrap(), 2).unwrap();
    for (v, &bit) in scan.values.data().iter().zip(tuned.mask.bits()) {
        assert_eq!(!bit, *v == SENTINEL);
    }
    let mut last = f64::INFINITY;
    for method in [CompletionMethod::Nearest, CompletionMethod::idw(), CompletionMethod::diffusion()] {
        let done = complete(&scan, method).unwrap();
        assert!(done.converged, "{method}");
        let rmse = masked_rmse(&clean, &done.image, &tuned.mask, true).unwrap();
        assert!(rmse < 0.1, "{method}: {rmse}");
        last = last.min(rmse);
    }
    assert!(last.is_finite());
}

#[test]
fn f32_and_f64_pipelines_agree() {
    let clean64: ImageF64 = synthetic_image(64, 64, 5).unwrap();
    let clean32: ImageF32 = synthetic_image(64, 64, 5).unwrap();
    let (_, mask) = PathFamily::RandomGrid.generate(64, 64, 0.2, 3).unwrap();
    let dose = DoseModel::noiseless();
    let s64: PartialScan<f64> = sample_scan(&clean64, &mask, dose, 0).unwrap();
    let s32: PartialScan<f32> = sample_scan(&clean32, &mask, dose, 0).unwrap();
    let c64 = complete(&s64, CompletionMethod::idw()).unwrap().image;
    let c32 = complete(&s32, CompletionMethod::idw()).unwrap().image;
    for (a, b) in c64.data().iter().zip(c32.data()) {
        assert!((a - f64::from(*b)).abs() < 1e-5);
    }
    let d64 = denoise(&c64, DenoiserSpec::Median { size: 3 }).unwrap();
    let d32 = denoise(&c32, DenoiserSpec::Median { size: 3 }).unwrap();
    let (m64, m32) = (mse(&clean64, &d64).unwrap(), mse(&clean32, &d32).unwrap());
    assert!((m64 - f64::from(m32)).abs() < 1e-6);
    let (q64, q32) = (ssim(&clean64, &d64).unwrap(), ssim(&clean32, &d32).unwrap());
    assert!((q64 - f64::from(q32)).abs() < 1e-4);
}

#[test]
fn denoising_a_noisy_acquisition_helps() {
    let clean: ImageF64 = synthetic_image(64, 64, 8).unwrap();
    let full = stemscan_core::scan_path::BinaryMask::full(64, 64);
    let noisy = sample_scan(&clean, &full, DoseModel::new(100.0).unwrap(), 4).unwrap().values;
    let before = mse(&clean, &noisy).unwrap();
    for spec in DenoiserSpec::all() {
        let after = mse(&clean, &denoise(&noisy, spec).unwrap()).unwrap();
        assert!(after < before, "{spec}: {after} vs {before}");
    }
}

#[test]
fn alrc_state_in_single_precision() {
    let mut state = AlrcState::<f32>::upper(3.0).unwrap();
    for i in 0..200 {
        let loss = if i % 50 == 49 { 1e3 } else { 1.0 + (i % 7) as f32 * 0.1 };
        let rec = state.transform(loss).unwrap();
        assert!(rec.transformed.is_finite() && rec.transformed <= loss);
    }
    let run = run_synthetic_training(&RegressionTask::new(2), OptimizerSpec::adam(1e-3), Clip::alrc(3.0), 2000, 4, 0).unwrap();
    assert!(!run.diverged());
}

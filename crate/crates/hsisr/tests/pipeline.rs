mod common;

use hsisr::artifacts::{read_json, Registry, WorkDirLock};
use hsisr::commands::{self, CorpusManifest, EvaluationReport, UnmixSummary};
use hsisr::{Pipeline, PipelineConfig};
use hsisr_core::degrade;
use hsisr_core::metrics;
use hsisr_core::tensor::{encode_tensor, load_abundances, load_cube, load_endmembers, save_tensor};
use hsisr_core::unmix::{self, UnmixConfig};
use hsisr_core::{AbundanceMaps, Cube, HsiCube, Tensor};

fn run_front(cfg: &PipelineConfig) -> Pipeline {
    let p = Pipeline::new(cfg.clone()).unwrap();
    p.cmd_degrade().unwrap();
    p.cmd_unmix().unwrap();
    p
}

#[test]
fn full_flow_with_oracle_abundances() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    let p = run_front(&cfg);
    let work = cfg.work_dir.clone();

    let lr = load_cube(work.join(commands::HSI_LR)).unwrap();
    assert_eq!(lr.as_cube().shape(), [16, 8, 8]);
    let summary: UnmixSummary = read_json(&work.join("unmix_summary.json")).unwrap();
    assert_eq!(summary.endmembers_shape, vec![16, 3]);
    assert_eq!(summary.abundances_shape, vec![3, 8, 8]);
    assert!(summary.max_abs_residual < 1e-6, "{summary:?}");

    let manifest = p.cmd_synth().unwrap();
    assert_eq!(manifest.files.len(), 8);
    assert_eq!(manifest.hr_shape, vec![3, 32, 32]);
    assert_eq!(manifest.lr_shape, vec![3, 8, 8]);
    let on_disk: CorpusManifest = read_json(&work.join("corpus").join(commands::CORPUS_MANIFEST)).unwrap();
    assert_eq!(on_disk, manifest);
    for e in &manifest.files {
        let hr = load_abundances(work.join("corpus").join(&e.hr)).unwrap();
        let lr_bytes = std::fs::read(work.join("corpus").join(&e.lr)).unwrap();
        let again = degrade::degrade(&hr, &cfg.psf).unwrap();
        assert_eq!(encode_tensor(&again.into()), lr_bytes, "{}", e.lr);
    }

    let baseline = p.cmd_baseline().unwrap();
    assert_eq!(baseline.patches.patches.len(), 16);
    let csv = std::fs::read_to_string(work.join("baseline_patches.csv")).unwrap();
    assert_eq!(csv.lines().count(), 17);
    assert!(csv.starts_with("patch,row,col,mpsnr,msam,mergas"));
    let back: EvaluationReport = read_json(&work.join("baseline_report.json")).unwrap();
    assert_eq!(back, baseline);

    // oracle A_SR: least-squares abundances of the reference itself
    let reference = load_cube(cfg.hr_cube.as_ref().unwrap()).unwrap().normalize_global().unwrap();
    let s = load_endmembers(work.join(commands::ENDMEMBERS)).unwrap();
    let a_sr = unmix::estimate_abundances(&reference, &s, &UnmixConfig::new(3)).unwrap();
    let a_path = dir.path().join("a_sr.npy");
    save_tensor(&a_sr.clone().into(), &a_path).unwrap();
    cfg.a_sr = Some(a_path);
    let rec = Pipeline::new(cfg.clone()).unwrap().cmd_reconstruct().unwrap();
    assert!(!rec.cropped);
    let report = rec.report.unwrap();

    // same numbers as scoring the stored reconstruction directly
    let stored = load_cube(work.join(commands::HSI_SR)).unwrap();
    let direct = metrics::evaluate_patches(&reference, &stored, &cfg.eval, 4.0).unwrap();
    assert_eq!(report.patches, direct);
    assert!(report.patches.mpsnr > 60.0, "{}", report.patches.mpsnr);
    assert!(report.patches.mpsnr > baseline.patches.mpsnr);

    let eval = Pipeline::new(cfg).unwrap().cmd_eval().unwrap();
    assert_eq!(eval.patches, report.patches);
    assert!(eval.whole_image.is_some());

    let reg = Registry::load(&work).unwrap();
    for name in ["hsi_lr.npy", "S.npy", "a_lr.npy", "hsi_sr.npy"] {
        assert!(reg.artifacts.contains_key(name), "{name}");
    }
}

#[test]
fn closed_loop_tracks_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::smoke_config(dir.path());
    let p = run_front(&cfg);
    let baseline = p.cmd_baseline().unwrap();
    let rec = p.cmd_reconstruct().unwrap();
    assert_eq!(rec.a_sr_source, "bicubic(a_lr.npy)");
    let closed = rec.report.unwrap();
    assert!(
        (closed.patches.mpsnr - baseline.patches.mpsnr).abs() < 0.5,
        "{} vs {}",
        closed.patches.mpsnr,
        baseline.patches.mpsnr
    );
}

#[test]
fn one_hot_abundances_give_endmember_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    run_front(&cfg);
    let one_hot = AbundanceMaps::new(Cube::from_fn(3, 12, 12, |k, i, j| ((i + j) % 3 == k) as u8 as f64).unwrap());
    let a_path = dir.path().join("one_hot.npy");
    save_tensor(&one_hot.into(), &a_path).unwrap();
    cfg.a_sr = Some(a_path);
    cfg.hr_cube = None;
    let rec = Pipeline::new(cfg.clone()).unwrap().cmd_reconstruct().unwrap();
    assert!(rec.report.is_none());
    let s = load_endmembers(cfg.work_dir.join(commands::ENDMEMBERS)).unwrap();
    let sr = load_cube(cfg.work_dir.join(commands::HSI_SR)).unwrap();
    for (i, j) in [(0, 0), (5, 7), (11, 2)] {
        let k = (i + j) % 3;
        for l in 0..16 {
            assert_eq!(sr.get(l, i, j) as f32, s.get(l, k) as f32);
        }
    }
}

#[test]
fn oversized_sr_grid_is_cropped_top_left() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    run_front(&cfg);
    let a = AbundanceMaps::new(Cube::from_fn(3, 35, 34, |k, i, j| (k + i * 35 + j) as f64 / 1e3).unwrap());
    let a_path = dir.path().join("big.npy");
    save_tensor(&a.into(), &a_path).unwrap();
    cfg.a_sr = Some(a_path);
    let rec = Pipeline::new(cfg.clone()).unwrap().cmd_reconstruct().unwrap();
    assert!(rec.cropped);
    assert_eq!(rec.a_sr_shape, vec![3, 35, 34]);
    assert_eq!(rec.output_shape, vec![16, 32, 32]);
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());

    // nothing unmixed yet
    let err = Pipeline::new(cfg.clone()).unwrap().cmd_synth().unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    run_front(&cfg);

    // A_SR with the wrong number of materials
    let bad = AbundanceMaps::new(Cube::zeros(2, 32, 32).unwrap());
    let bad_path = dir.path().join("bad.npy");
    save_tensor(&bad.into(), &bad_path).unwrap();
    let mut c = cfg.clone();
    c.a_sr = Some(bad_path);
    let err = Pipeline::new(c).unwrap().cmd_reconstruct().unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // A_SR on a grid the crop convention cannot map
    let small = AbundanceMaps::new(Cube::zeros(3, 31, 32).unwrap());
    let small_path = dir.path().join("small.npy");
    save_tensor(&small.into(), &small_path).unwrap();
    let mut c = cfg.clone();
    c.a_sr = Some(small_path);
    let err = Pipeline::new(c).unwrap().cmd_reconstruct().unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // a work-dir artifact replaced behind the registry's back
    let a_lr = cfg.work_dir.join(commands::A_LR);
    let tampered = AbundanceMaps::new(Cube::zeros(3, 8, 8).unwrap());
    save_tensor(&tampered.into(), &a_lr).unwrap();
    let err = Pipeline::new(cfg.clone()).unwrap().cmd_synth().unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("hash mismatch"), "{err}");

    // estimate with the wrong shape
    let est = dir.path().join("est.npy");
    save_tensor(&Tensor::Cube(Cube::zeros(16, 30, 32).unwrap()), &est).unwrap();
    cfg.estimate = Some(est);
    let err = Pipeline::new(cfg.clone()).unwrap().cmd_eval().unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");

    // a held lock
    let _lock = WorkDirLock::acquire(&cfg.work_dir).unwrap();
    let err = Pipeline::new(cfg).unwrap().cmd_baseline().unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn rank_deficient_input_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let lr = dir.path().join("flat.npy");
    let flat = HsiCube::new(Cube::from_fn(8, 6, 6, |l, _, _| 0.2 + l as f64 * 0.01).unwrap());
    save_tensor(&flat.into(), &lr).unwrap();
    let mut cfg = PipelineConfig::new(dir.path().join("work"), 3);
    cfg.lr_cube = Some(lr);
    let err = Pipeline::new(cfg).unwrap().cmd_unmix().unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[test]
fn identical_estimate_scores_infinite_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    cfg.normalize = false;
    cfg.estimate = cfg.hr_cube.clone();
    let report = Pipeline::new(cfg.clone()).unwrap().cmd_eval().unwrap();
    assert_eq!(report.patches.mpsnr, f64::INFINITY);
    assert_eq!(report.patches.msam, 0.0);
    assert_eq!(report.patches.mergas, 0.0);
    let text = std::fs::read_to_string(cfg.work_dir.join("eval_report.json")).unwrap();
    assert!(text.contains("\"mpsnr\": \"inf\""));
    let back: EvaluationReport = read_json(&cfg.work_dir.join("eval_report.json")).unwrap();
    assert_eq!(back, report);
}

//! Synthetic scenes and configs shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hsisr::PipelineConfig;
use hsisr_core::deadleaves::{self, DeadLeavesConfig, ValuePool};
use hsisr_core::metrics::PatchGrid;
use hsisr_core::tensor::save_tensor;
use hsisr_core::unmix;
use hsisr_core::{AbundanceMaps, EndmemberMatrix, HsiCube};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMaps,
    pub cube: HsiCube,
}

/// Positive, well separated spectra: column `k` peaks on bands `l ≡ k mod n`.
pub fn endmembers(seed: u64, bands: usize, n: usize) -> EndmemberMatrix {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cols: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..bands)
                .map(|l| 0.1 + 0.3 * r.random::<f64>() + if l % n == k { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    EndmemberMatrix::from_columns(&cols).unwrap()
}

/// Piecewise-constant abundances: a dead-leaves map over pure vectors and a
/// few mixtures.
pub fn scene(seed: u64, bands: usize, n: usize, side: usize) -> Scene {
    let s = endmembers(seed, bands, n);
    let mut vectors: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for _ in 0..n {
        let w: Vec<f64> = (0..n).map(|_| 0.05 + r.random::<f64>()).collect();
        let t: f64 = w.iter().sum();
        vectors.push(w.iter().map(|x| x / t).collect());
    }
    let pool = ValuePool::from_vectors(&vectors).unwrap();
    let cfg = DeadLeavesConfig {
        out_rows: side,
        out_cols: side,
        n_materials: n,
        size_min: 3.0,
        size_max: side as f64 / 2.0,
        rng_seed: seed,
        ..Default::default()
    };
    let a = deadleaves::generate_map(&cfg, &pool).unwrap();
    let cube = unmix::reconstruct(&s, &a).unwrap();
    Scene {
        endmembers: s,
        abundances: a,
        cube,
    }
}

/// Writes the 32×32, L=16, N=3 smoke scene and returns a config around it.
pub fn smoke_config(dir: &Path) -> PipelineConfig {
    let sc = scene(7, 16, 3, 32);
    let hr = dir.join("hr.npy");
    save_tensor(&sc.cube.clone().into_cube().into(), &hr).unwrap();
    let mut cfg = PipelineConfig::new(dir.join("work"), 3);
    cfg.hr_cube = Some(hr);
    cfg.deadleaves.out_rows = 32;
    cfg.deadleaves.out_cols = 32;
    cfg.deadleaves.size_max = 16.0;
    cfg.corpus_count = 8;
    cfg.eval = PatchGrid { patch: 8, grid: 4 };
    cfg.whole_image = true;
    cfg.base_seed = 11;
    cfg
}

pub fn write_config(cfg: &PipelineConfig, path: &Path) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path.to_path_buf()
}

/// Every file under `dir`, relative path → bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

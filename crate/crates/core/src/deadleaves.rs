//! Dead-leaves synthesis of abundance maps.
//!
//! Rectangular leaves with random size, orientation and position are dropped
//! *beneath* the ones already placed (perfect simulation): a leaf only paints
//! pixels that are still uncovered, and drawing stops once every pixel is
//! covered. Each leaf carries a whole abundance vector sampled from a real
//! low-resolution abundance map and paints it into all material channels at
//! once, so every channel shares the same leaf partition.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{AbundanceMaps, Cube};

/// One rectangular leaf.
///
/// `value` indexes the [`ValuePool`] vector painted by the leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct Leaf {
    /// Side length along the leaf's own first axis, in pixels.
    pub a: f64,
    pub b: f64,
    /// Rotation in `[0, π)`.
    pub theta: f64,
    pub value: usize,
    /// Centre column, continuous coordinates (pixel `c` spans `[c, c+1)`).
    pub x: f64,
    /// Centre row.
    pub y: f64,
}

impl Leaf {
    /// Whether the centre of pixel `(row, col)` lies inside the rectangle.
    #[inline]
    pub fn covers(&self, row: usize, col: usize) -> bool {
        let (sin, cos) = self.theta.sin_cos();
        self.covers_with(row, col, sin, cos)
    }

    #[inline]
    fn covers_with(&self, row: usize, col: usize, sin: f64, cos: f64) -> bool {
        let dx = col as f64 + 0.5 - self.x;
        let dy = row as f64 + 0.5 - self.y;
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        u.abs() <= self.a / 2.0 && v.abs() <= self.b / 2.0
    }

    /// Calls `f(row, col)` for every covered pixel inside a `rows × cols` grid.
    pub fn for_each_pixel(&self, rows: usize, cols: usize, mut f: impl FnMut(usize, usize)) {
        let (sin, cos) = self.theta.sin_cos();
        let half_x = 0.5 * (self.a * cos.abs() + self.b * sin.abs());
        let half_y = 0.5 * (self.a * sin.abs() + self.b * cos.abs());
        let span = |centre: f64, half: f64, len: usize| {
            // pixel centres c + 0.5 within [centre - half, centre + half]
            let lo = (centre - half - 0.5).ceil().max(0.0);
            let hi = (centre + half - 0.5).floor().min(len as f64 - 1.0);
            (lo as isize, hi as isize)
        };
        let (r0, r1) = span(self.y, half_y, rows);
        let (c0, c1) = span(self.x, half_x, cols);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let (r, c) = (r as usize, c as usize);
                if self.covers_with(r, c, sin, cos) {
                    f(r, c);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeadLeavesConfig {
    pub out_rows: usize,
    pub out_cols: usize,
    pub n_materials: usize,
    pub size_min: f64,
    pub size_max: f64,
    /// Exponent α of the side-length density `∝ s^(−α)`.
    pub size_exponent: f64,
    pub rng_seed: u64,
    pub max_leaves: usize,
}

impl Default for DeadLeavesConfig {
    fn default() -> Self {
        Self {
            out_rows: 307,
            out_cols: 307,
            n_materials: 6,
            size_min: 4.0,
            size_max: 150.0,
            size_exponent: 3.0,
            rng_seed: 0,
            max_leaves: 1_000_000,
        }
    }
}

impl DeadLeavesConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.out_rows == 0 || self.out_cols == 0 {
            return bad(format!("output grid {}x{} is empty", self.out_rows, self.out_cols));
        }
        if self.n_materials == 0 {
            return bad("n_materials must be positive".into());
        }
        let longest = self.out_rows.max(self.out_cols) as f64;
        if !(self.size_min > 0.0 && self.size_min <= self.size_max && self.size_max <= longest) {
            return bad(format!(
                "need 0 < size_min <= size_max <= {longest}, got [{}, {}]",
                self.size_min, self.size_max
            ));
        }
        if !(self.size_exponent >= 0.0 && self.size_exponent.is_finite()) {
            return bad(format!("size_exponent must be >= 0, got {}", self.size_exponent));
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be positive".into());
        }
        Ok(())
    }

    /// Inverse-CDF sample of the truncated power law on `[size_min, size_max]`.
    pub fn side_length(&self, u: f64) -> f64 {
        let (lo, hi, alpha) = (self.size_min, self.size_max, self.size_exponent);
        if lo == hi {
            return lo;
        }
        let s = if (alpha - 1.0).abs() < 1e-12 {
            lo * (hi / lo).powf(u)
        } else {
            let e = 1.0 - alpha;
            let (l, h) = (lo.powf(e), hi.powf(e));
            (l + u * (h - l)).powf(1.0 / e)
        };
        s.clamp(lo, hi)
    }
}

/// Abundance vectors available as leaf values, one per source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuePool {
    materials: usize,
    /// Pixel-major, `len() * materials` values.
    vectors: Vec<f64>,
    source_shape: [usize; 3],
}

impl ValuePool {
    /// Pools the pixel vectors of `a_lr`, each clipped to `[0, 1]`.
    pub fn from_abundances(a_lr: &AbundanceMaps) -> Result<Self> {
        let cube = a_lr.as_cube();
        let n = cube.depth();
        let plane = cube.plane_len();
        if plane == 0 {
            return Err(Error::DegenerateInput("abundance map has no pixels".into()));
        }
        let mut vectors = vec![0.0; plane * n];
        par::for_each_chunk_mut(&mut vectors, n, |p, v| {
            for (k, x) in v.iter_mut().enumerate() {
                *x = cube.plane(k)[p].clamp(0.0, 1.0);
            }
        });
        Ok(Self {
            materials: n,
            vectors,
            source_shape: cube.shape(),
        })
    }

    /// A pool from explicit vectors (values clipped to `[0, 1]`).
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let n = vectors.first().map_or(0, Vec::len);
        if vectors.is_empty() || n == 0 {
            return Err(Error::DegenerateInput("value pool is empty".into()));
        }
        if vectors.iter().any(|v| v.len() != n) {
            return Err(Error::Shape("pool vectors differ in length".into()));
        }
        if vectors.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::Data("pool vectors must be finite".into()));
        }
        Ok(Self {
            materials: n,
            vectors: vectors.iter().flatten().map(|x| x.clamp(0.0, 1.0)).collect(),
            source_shape: [n, 1, vectors.len()],
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len() / self.materials
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn materials(&self) -> usize {
        self.materials
    }

    pub fn source_shape(&self) -> [usize; 3] {
        self.source_shape
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.materials..(i + 1) * self.materials]
    }
}

/// A generated map together with how it was built.
#[derive(Debug, Clone, PartialEq)]
pub struct DeadLeavesSample {
    pub maps: AbundanceMaps,
    /// Pool index painted at each pixel, row-major.
    pub labels: Vec<usize>,
    /// Leaves in drawing order; earlier leaves lie on top.
    pub leaves: Vec<Leaf>,
}

fn draw_leaf(rng: &mut ChaCha8Rng, cfg: &DeadLeavesConfig, pool_len: usize) -> Leaf {
    let a = cfg.side_length(rng.random());
    let b = cfg.side_length(rng.random());
    let theta = rng.random::<f64>() * std::f64::consts::PI;
    let x = rng.random::<f64>() * cfg.out_cols as f64;
    let y = rng.random::<f64>() * cfg.out_rows as f64;
    let value = rng.random_range(0..pool_len);
    Leaf {
        a,
        b,
        theta,
        value,
        x,
        y,
    }
}

/// Generates one map and keeps the leaf sequence and label image.
pub fn generate_traced(cfg: &DeadLeavesConfig, pool: &ValuePool) -> Result<DeadLeavesSample> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::DegenerateInput("value pool is empty".into()));
    }
    if pool.materials() != cfg.n_materials {
        return Err(Error::Shape(format!(
            "pool vectors have {} materials, config asks for {}",
            pool.materials(),
            cfg.n_materials
        )));
    }
    let (rows, cols) = (cfg.out_rows, cfg.out_cols);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut labels = vec![usize::MAX; rows * cols];
    let mut uncovered = rows * cols;
    let mut leaves = Vec::new();

    while uncovered > 0 {
        if leaves.len() == cfg.max_leaves {
            return Err(Error::Coverage {
                uncovered,
                leaves: leaves.len(),
                map_index: None,
            });
        }
        let leaf = draw_leaf(&mut rng, cfg, pool.len());
        leaf.for_each_pixel(rows, cols, |r, c| {
            let slot = &mut labels[r * cols + c];
            if *slot == usize::MAX {
                *slot = leaf.value;
                uncovered -= 1;
            }
        });
        leaves.push(leaf);
    }

    let n = cfg.n_materials;
    let plane = rows * cols;
    let mut data = vec![0.0; n * plane];
    par::for_each_chunk_mut(&mut data, plane, |k, channel| {
        for (x, &label) in channel.iter_mut().zip(&labels) {
            *x = pool.vector(label)[k];
        }
    });
    Ok(DeadLeavesSample {
        maps: AbundanceMaps::new(Cube::new(n, rows, cols, data)?),
        labels,
        leaves,
    })
}

/// One synthetic high-resolution abundance map.
pub fn generate_map(cfg: &DeadLeavesConfig, pool: &ValuePool) -> Result<AbundanceMaps> {
    generate_traced(cfg, pool).map(|s| s.maps)
}

/// SplitMix64 output for state `k`.
pub fn splitmix64(k: u64) -> u64 {
    let mut z = k.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of map `k` in a corpus: `base_seed ⊕ splitmix64(k)`.
pub fn corpus_seed(base_seed: u64, k: usize) -> u64 {
    base_seed ^ splitmix64(k as u64)
}

fn map_config(cfg: &DeadLeavesConfig, base_seed: u64, k: usize) -> DeadLeavesConfig {
    DeadLeavesConfig {
        rng_seed: corpus_seed(base_seed, k),
        ..cfg.clone()
    }
}

fn tag_index(e: Error, k: usize) -> Error {
    match e {
        Error::Coverage {
            uncovered, leaves, ..
        } => Error::Coverage {
            uncovered,
            leaves,
            map_index: Some(k),
        },
        other => other,
    }
}

/// Lazily generates `count` maps in index order.
pub fn generate_corpus<'a>(
    cfg: &'a DeadLeavesConfig,
    pool: &'a ValuePool,
    count: usize,
    base_seed: u64,
) -> impl Iterator<Item = Result<AbundanceMaps>> + 'a {
    (0..count).map(move |k| generate_map(&map_config(cfg, base_seed, k), pool).map_err(|e| tag_index(e, k)))
}

/// Generates `count` maps in parallel, handing each to `sink(k, map)`.
///
/// Maps are independent, so the set of `(k, map)` pairs does not depend on
/// scheduling. The first failure by index is returned.
pub fn for_each_corpus_map<F>(
    cfg: &DeadLeavesConfig,
    pool: &ValuePool,
    count: usize,
    base_seed: u64,
    sink: F,
) -> Result<()>
where
    F: Fn(usize, AbundanceMaps) -> Result<()> + Sync + Send,
{
    if count == 0 {
        return Err(Error::Config("corpus count must be at least 1".into()));
    }
    par::try_for_each_indexed(count, |k| {
        let map = generate_map(&map_config(cfg, base_seed, k), pool).map_err(|e| tag_index(e, k))?;
        sink(k, map)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(n: usize, seed: u64) -> DeadLeavesConfig {
        DeadLeavesConfig {
            out_rows: 24,
            out_cols: 20,
            n_materials: n,
            size_min: 2.0,
            size_max: 12.0,
            rng_seed: seed,
            ..Default::default()
        }
    }

    #[test]
    fn pool_from_single_pixel() {
        let a = AbundanceMaps::from_vec(2, 1, 1, vec![0.3, 0.7]).unwrap();
        let pool = ValuePool::from_abundances(&a).unwrap();
        assert_eq!(pool.len(), 1);
        assert_eq!(pool.vector(0), &[0.3, 0.7]);
        assert_eq!(pool.source_shape(), [2, 1, 1]);
    }

    #[test]
    fn pool_clips_to_unit_interval() {
        let a = AbundanceMaps::from_vec(2, 1, 2, vec![1.2, 0.5, -0.1, 0.4]).unwrap();
        let pool = ValuePool::from_abundances(&a).unwrap();
        assert_eq!(pool.vector(0), &[1.0, 0.0]);
        assert_eq!(pool.vector(1), &[0.5, 0.4]);
    }

    #[test]
    fn pool_size_on_degraded_urban_grid() {
        let a = AbundanceMaps::from_vec(6, 77, 77, vec![0.1; 6 * 77 * 77]).unwrap();
        assert_eq!(ValuePool::from_abundances(&a).unwrap().len(), 5929);
    }

    #[test]
    fn empty_pool_rejected() {
        assert!(matches!(ValuePool::from_vectors(&[]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn single_vector_pool_gives_constant_map() {
        let pool = ValuePool::from_vectors(&[vec![0.2, 0.5, 0.3]]).unwrap();
        for seed in [0, 1, 99] {
            let m = generate_map(&small_cfg(3, seed), &pool).unwrap();
            for k in 0..3 {
                assert!(m.as_cube().plane(k).iter().all(|&v| v == pool.vector(0)[k]));
            }
        }
    }

    #[test]
    fn coverage_error_when_capped() {
        let pool = ValuePool::from_vectors(&[vec![0.5], vec![0.1]]).unwrap();
        let cfg = DeadLeavesConfig {
            max_leaves: 1,
            ..small_cfg(1, 3)
        };
        match generate_map(&cfg, &pool) {
            Err(Error::Coverage { uncovered, leaves: 1, map_index: None }) => assert!(uncovered > 0),
            other => panic!("unexpected {other:?}"),
        }
        let err = generate_corpus(&cfg, &pool, 3, 0).nth(2).unwrap().unwrap_err();
        assert!(matches!(err, Error::Coverage { map_index: Some(2), .. }));
    }

    #[test]
    fn pool_width_must_match_config() {
        let pool = ValuePool::from_vectors(&[vec![0.5, 0.5]]).unwrap();
        assert!(matches!(generate_map(&small_cfg(3, 0), &pool), Err(Error::Shape(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg(1, 0);
        cfg.size_max = 30.0;
        assert!(cfg.validate().is_err());
        cfg = small_cfg(1, 0);
        cfg.size_min = 0.0;
        assert!(cfg.validate().is_err());
        cfg = small_cfg(1, 0);
        cfg.size_exponent = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn side_lengths_stay_in_range() {
        for alpha in [0.0, 1.0, 3.0] {
            let cfg = DeadLeavesConfig {
                size_exponent: alpha,
                ..Default::default()
            };
            assert_eq!(cfg.side_length(0.0), 4.0);
            assert!((cfg.side_length(1.0) - 150.0).abs() < 1e-9);
            let mid = cfg.side_length(0.5);
            assert!(mid > 4.0 && mid < 150.0);
        }
        // α = 0 is uniform
        let uni = DeadLeavesConfig {
            size_exponent: 0.0,
            ..Default::default()
        };
        assert!((uni.side_length(0.5) - 77.0).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_leaf_footprint() {
        let leaf = Leaf {
            a: 4.0,
            b: 2.0,
            theta: 0.0,
            value: 0,
            x: 5.0,
            y: 5.0,
        };
        let mut px = Vec::new();
        leaf.for_each_pixel(10, 10, |r, c| px.push((r, c)));
        // centres 3.5..6.5 horizontally, 4.5..5.5 vertically
        let expect: Vec<(usize, usize)> = (4..=5).flat_map(|r| (3..=6).map(move |c| (r, c))).collect();
        assert_eq!(px, expect);
    }

    #[test]
    fn footprint_scan_matches_full_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = small_cfg(1, 0);
        for _ in 0..200 {
            let leaf = draw_leaf(&mut rng, &cfg, 1);
            let mut fast = Vec::new();
            leaf.for_each_pixel(24, 20, |r, c| fast.push((r, c)));
            let slow: Vec<(usize, usize)> = (0..24)
                .flat_map(|r| (0..20).map(move |c| (r, c)))
                .filter(|&(r, c)| leaf.covers(r, c))
                .collect();
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn corpus_seeds_follow_splitmix() {
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(corpus_seed(7, 0), 7 ^ 0xE220_A839_7B1D_CDAF);
        let pool = ValuePool::from_vectors(&[vec![0.1, 0.9], vec![0.6, 0.4], vec![1.0, 0.0]]).unwrap();
        let cfg = small_cfg(2, 0);
        let first = generate_corpus(&cfg, &pool, 1, 42).next().unwrap().unwrap();
        let direct = generate_map(
            &DeadLeavesConfig {
                rng_seed: corpus_seed(42, 0),
                ..cfg.clone()
            },
            &pool,
        )
        .unwrap();
        assert_eq!(first, direct);
    }

    #[test]
    fn parallel_corpus_matches_lazy_stream() {
        let pool = ValuePool::from_vectors(&[vec![0.1, 0.9], vec![0.6, 0.4], vec![1.0, 0.0]]).unwrap();
        let cfg = small_cfg(2, 0);
        let lazy: Vec<AbundanceMaps> = generate_corpus(&cfg, &pool, 6, 5).map(Result::unwrap).collect();
        let collected = std::sync::Mutex::new(vec![None; 6]);
        for_each_corpus_map(&cfg, &pool, 6, 5, |k, m| {
            collected.lock().unwrap()[k] = Some(m);
            Ok(())
        })
        .unwrap();
        let collected: Vec<AbundanceMaps> =
            collected.into_inner().unwrap().into_iter().map(Option::unwrap).collect();
        assert_eq!(lazy, collected);
        assert!(for_each_corpus_map(&cfg, &pool, 0, 5, |_, _| Ok(())).is_err());
    }
}

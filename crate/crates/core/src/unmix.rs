//! Linear unmixing: `cube(l, i, j) = Σₙ S(l, n) · A(n, i, j)`.
//!
//! Endmembers are picked by successive projections (pure-pixel selection):
//! the pixel with the largest residual norm is taken, and every residual is
//! projected onto the orthogonal complement of it. Abundances are then the
//! per-pixel unconstrained least-squares solution against S.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{AbundanceMaps, Cube, EndmemberMatrix, HsiCube};

/// Residual norm below which no new independent spectrum can be found.
pub const RESIDUAL_FLOOR: f64 = 1e-12;
/// Largest accepted condition number of S in the least-squares solve.
pub const MAX_CONDITION: f64 = 1e10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnmixConfig {
    pub n_materials: usize,
    /// Zero out negative abundances after the solve.
    #[serde(default)]
    pub nonneg_clip: bool,
}

impl UnmixConfig {
    pub fn new(n_materials: usize) -> Self {
        Self {
            n_materials,
            nonneg_clip: false,
        }
    }

    pub fn validate(&self, bands: usize) -> Result<()> {
        if self.n_materials == 0 || self.n_materials > bands {
            return Err(Error::Config(format!(
                "n_materials must be in 1..={bands}, got {}",
                self.n_materials
            )));
        }
        Ok(())
    }
}

/// Selected endmembers together with the flat pixel index each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub endmembers: EndmemberMatrix,
    pub pixels: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Pixel-major copy of the cube: `out[p * bands + l] = cube(l, p)`.
fn pixel_major(cube: &Cube) -> Vec<f64> {
    let bands = cube.depth();
    let data = cube.data();
    let plane = cube.plane_len();
    let mut out = vec![0.0; data.len()];
    par::for_each_chunk_mut(&mut out, bands, |p, spectrum| {
        for (l, v) in spectrum.iter_mut().enumerate() {
            *v = data[l * plane + p];
        }
    });
    out
}

/// Successive projection algorithm.
///
/// Ties in the residual-norm argmax go to the lowest pixel index.
pub fn extract_with_indices(cube: &HsiCube, cfg: &UnmixConfig) -> Result<Extraction> {
    let bands = cube.bands();
    cfg.validate(bands)?;
    let pixels = cube.as_cube().plane_len();
    let mut residual = pixel_major(cube.as_cube());
    let mut selected = Vec::with_capacity(cfg.n_materials);

    for found in 0..cfg.n_materials {
        let norms = par::map_indexed(pixels, |p| {
            let r = &residual[p * bands..(p + 1) * bands];
            dot(r, r)
        });
        let mut best = 0;
        for (p, &n) in norms.iter().enumerate().skip(1) {
            if n > norms[best] {
                best = p;
            }
        }
        let norm = norms[best].sqrt();
        if norm < RESIDUAL_FLOOR {
            return Err(Error::RankDeficient {
                found,
                requested: cfg.n_materials,
            });
        }
        let u: Vec<f64> = residual[best * bands..(best + 1) * bands]
            .iter()
            .map(|v| v / norm)
            .collect();
        par::for_each_chunk_mut(&mut residual, bands, |_, r| {
            let d = dot(&u, r);
            r.iter_mut().zip(&u).for_each(|(x, ui)| *x -= d * ui);
        });
        selected.push(best);
    }

    let columns: Vec<Vec<f64>> = selected.iter().map(|&p| cube.as_cube().pixel(p)).collect();
    Ok(Extraction {
        endmembers: EndmemberMatrix::from_columns(&columns)?,
        pixels: selected,
    })
}

/// Endmember matrix S, one original pixel spectrum per column.
pub fn extract_endmembers(cube: &HsiCube, cfg: &UnmixConfig) -> Result<EndmemberMatrix> {
    extract_with_indices(cube, cfg).map(|e| e.endmembers)
}

fn to_dmatrix(s: &EndmemberMatrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(s.bands(), s.materials(), s.data())
}

/// Ratio of extreme singular values of S.
pub fn condition_number(s: &EndmemberMatrix) -> f64 {
    let sv = to_dmatrix(s).singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Per-pixel ordinary least squares `min ‖m_p − S a_p‖₂` through a thin QR
/// factorization of S.
pub fn estimate_abundances(
    cube: &HsiCube,
    s: &EndmemberMatrix,
    cfg: &UnmixConfig,
) -> Result<AbundanceMaps> {
    let bands = s.bands();
    let n = s.materials();
    if cube.bands() != bands {
        return Err(Error::Shape(format!(
            "cube has {} bands, endmembers have {bands}",
            cube.bands()
        )));
    }
    if n > bands {
        return Err(Error::SingularSystem(format!(
            "{n} endmembers cannot be independent in {bands} bands"
        )));
    }
    let cond = condition_number(s);
    if cond.is_nan() || cond >= MAX_CONDITION {
        return Err(Error::SingularSystem(format!(
            "endmember matrix condition number {cond:e} exceeds {MAX_CONDITION:e}"
        )));
    }

    let qr = to_dmatrix(s).qr();
    let q = qr.q();
    let r = qr.r();
    // row-major Qᵀ and R for tight per-pixel loops
    let qt: Vec<f64> = (0..n)
        .flat_map(|k| (0..bands).map(move |l| (k, l)))
        .map(|(k, l)| q[(l, k)])
        .collect();
    let r_rows: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| r[(i, j)])
        .collect();

    let plane = cube.as_cube().plane_len();
    let data = cube.as_cube().data();
    let mut solved = vec![0.0; plane * n];
    par::for_each_chunk_mut(&mut solved, n, |p, a| {
        let m: Vec<f64> = (0..bands).map(|l| data[l * plane + p]).collect();
        for (k, ak) in a.iter_mut().enumerate() {
            *ak = dot(&qt[k * bands..(k + 1) * bands], &m);
        }
        for i in (0..n).rev() {
            let tail: f64 = (i + 1..n).map(|j| r_rows[i * n + j] * a[j]).sum();
            a[i] = (a[i] - tail) / r_rows[i * n + i];
        }
    });

    let mut out = vec![0.0; n * plane];
    par::for_each_chunk_mut(&mut out, plane, |k, material| {
        for (p, v) in material.iter_mut().enumerate() {
            let a = solved[p * n + k];
            *v = if cfg.nonneg_clip { a.max(0.0) } else { a };
        }
    });
    AbundanceMaps::from_vec(n, cube.rows(), cube.cols(), out)
}

/// Mixes abundances back into a spectral cube.
pub fn reconstruct(s: &EndmemberMatrix, a: &AbundanceMaps) -> Result<HsiCube> {
    if s.materials() != a.materials() {
        return Err(Error::Shape(format!(
            "endmembers have {} materials, abundances have {}",
            s.materials(),
            a.materials()
        )));
    }
    let plane = a.as_cube().plane_len();
    let bands = s.bands();
    let mut out = vec![0.0; bands * plane];
    par::for_each_chunk_mut(&mut out, plane, |l, band| {
        for k in 0..s.materials() {
            let w = s.get(l, k);
            let src = a.as_cube().plane(k);
            band.iter_mut().zip(src).for_each(|(o, &x)| *o += w * x);
        }
    });
    HsiCube::from_vec(bands, a.rows(), a.cols(), out)
}

/// Maximum absolute and root-mean-square difference between two cubes.
pub fn reconstruction_error(reference: &HsiCube, estimate: &HsiCube) -> Result<(f64, f64)> {
    if reference.as_cube().shape() != estimate.as_cube().shape() {
        return Err(Error::Shape(format!(
            "shapes differ: {:?} vs {:?}",
            reference.as_cube().shape(),
            estimate.as_cube().shape()
        )));
    }
    let diffs: Vec<f64> = reference
        .as_cube()
        .data()
        .iter()
        .zip(estimate.as_cube().data())
        .map(|(a, b)| a - b)
        .collect();
    let max = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    let rms = (par::pairwise_sum(&sq) / sq.len() as f64).sqrt();
    Ok((max, rms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_scene() -> HsiCube {
        // 3 pure pixels (out of order) plus convex mixtures
        let pixels: Vec<[f64; 3]> = vec![
            [0.2, 0.3, 0.5],
            [0.0, 1.0, 0.0],
            [0.6, 0.2, 0.2],
            [1.0, 0.0, 0.0],
            [0.1, 0.1, 0.8],
            [0.0, 0.0, 1.0],
        ];
        let mut data = vec![0.0; 3 * pixels.len()];
        for (p, px) in pixels.iter().enumerate() {
            for l in 0..3 {
                data[l * pixels.len() + p] = px[l];
            }
        }
        HsiCube::from_vec(3, 2, 3, data).unwrap()
    }

    #[test]
    fn pure_basis_pixels_are_selected() {
        let e = extract_with_indices(&basis_scene(), &UnmixConfig::new(3)).unwrap();
        let mut cols: Vec<Vec<f64>> = (0..3).map(|k| e.endmembers.column(k)).collect();
        cols.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(
            cols,
            vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]
        );
        let mut idx = e.pixels.clone();
        idx.sort();
        assert_eq!(idx, vec![1, 3, 5]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        // all pixels share the same norm
        let cube = HsiCube::from_vec(2, 1, 3, vec![1.0, 0.0, 0.6, 0.0, 1.0, 0.8]).unwrap();
        let e = extract_with_indices(&cube, &UnmixConfig::new(1)).unwrap();
        assert_eq!(e.pixels, vec![0]);
    }

    #[test]
    fn rank_deficient_cube_is_reported() {
        // every pixel is a multiple of one spectrum
        let cube = HsiCube::from_vec(2, 1, 3, vec![1.0, 2.0, 3.0, 2.0, 4.0, 6.0]).unwrap();
        let err = extract_endmembers(&cube, &UnmixConfig::new(2)).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { found: 1, requested: 2 }));
    }

    #[test]
    fn config_bounds() {
        assert!(UnmixConfig::new(0).validate(3).is_err());
        assert!(UnmixConfig::new(4).validate(3).is_err());
        assert!(UnmixConfig::new(3).validate(3).is_ok());
    }

    #[test]
    fn identity_endmembers_return_cube_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f64> = (0..4 * 3 * 3).map(|_| rng.random::<f64>()).collect();
        let cube = HsiCube::from_vec(4, 3, 3, data.clone()).unwrap();
        let id = EndmemberMatrix::new(
            4,
            4,
            (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let a = estimate_abundances(&cube, &id, &UnmixConfig::new(4)).unwrap();
        for (x, y) in a.as_cube().data().iter().zip(&data) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn singular_endmembers_rejected() {
        let s = EndmemberMatrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]).unwrap();
        let cube = HsiCube::from_vec(3, 1, 1, vec![1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            estimate_abundances(&cube, &s, &UnmixConfig::new(2)),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn nonneg_clip_zeroes_negatives() {
        let s = EndmemberMatrix::from_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let cube = HsiCube::from_vec(2, 1, 1, vec![-0.5, 0.7]).unwrap();
        let mut cfg = UnmixConfig::new(2);
        let raw = estimate_abundances(&cube, &s, &cfg).unwrap();
        assert!((raw.get(0, 0, 0) + 0.5).abs() < 1e-15);
        cfg.nonneg_clip = true;
        let clipped = estimate_abundances(&cube, &s, &cfg).unwrap();
        assert_eq!(clipped.get(0, 0, 0), 0.0);
        assert!((clipped.get(1, 0, 0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn one_hot_reconstructs_columns() {
        let s = EndmemberMatrix::from_columns(&[vec![1.0, 2.0, 3.0], vec![0.5, 0.1, 0.0]])
            .unwrap();
        let a = AbundanceMaps::from_vec(2, 2, 2, vec![0., 0., 0., 0., 1., 1., 1., 1.]).unwrap();
        let c = reconstruct(&s, &a).unwrap();
        for p in 0..4 {
            assert_eq!(c.as_cube().pixel(p), s.column(1));
        }
        let wrong = AbundanceMaps::from_vec(3, 1, 1, vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(reconstruct(&s, &wrong), Err(Error::Shape(_))));
    }
}

//! PSNR, SAM and ERGAS between a reference cube and an estimate.
//!
//! Conventions: PSNR uses a peak of 1.0 (data normalised to `[0, 1]`); SAM is
//! the per-pixel spectral angle in degrees averaged over pixels with non-zero
//! spectra; ERGAS is `100/scale · sqrt(mean_l (RMSE_l / μ_l)²)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, pairwise_sum};
use crate::tensor::HsiCube;

pub const PSNR_PEAK: f64 = 1.0;
/// Spectra with a smaller norm are skipped by SAM.
pub const SAM_NORM_FLOOR: f64 = 1e-12;
/// Reference bands with a smaller absolute mean make ERGAS undefined.
pub const ERGAS_MEAN_FLOOR: f64 = 1e-12;

fn check_shapes(reference: &HsiCube, estimate: &HsiCube) -> Result<()> {
    if reference.as_cube().shape() != estimate.as_cube().shape() {
        return Err(Error::Shape(format!(
            "reference {:?} and estimate {:?} differ in shape",
            reference.as_cube().shape(),
            estimate.as_cube().shape()
        )));
    }
    Ok(())
}

/// Mean squared error of every band.
fn band_mse(reference: &HsiCube, estimate: &HsiCube) -> Vec<f64> {
    let (r, e) = (reference.as_cube(), estimate.as_cube());
    par::map_indexed(r.depth(), |l| {
        let sq: Vec<f64> = r
            .plane(l)
            .iter()
            .zip(e.plane(l))
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        pairwise_sum(&sq) / sq.len() as f64
    })
}

/// Mean of the finite entries; `+∞` when there are none.
fn mean_finite(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::INFINITY
    } else {
        pairwise_sum(&finite) / finite.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Psnr {
    /// `+∞` for bands reproduced exactly.
    pub per_band: Vec<f64>,
    /// Mean over bands with finite PSNR; `+∞` only if every band is exact.
    pub mean: f64,
}

pub fn psnr(reference: &HsiCube, estimate: &HsiCube) -> Result<Psnr> {
    check_shapes(reference, estimate)?;
    let per_band: Vec<f64> = band_mse(reference, estimate)
        .into_iter()
        .map(|mse| {
            if mse == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (PSNR_PEAK * PSNR_PEAK / mse).log10()
            }
        })
        .collect();
    let mean = mean_finite(&per_band);
    Ok(Psnr { per_band, mean })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sam {
    /// Mean spectral angle in degrees.
    pub degrees: f64,
    pub skipped: usize,
}

/// Angle between two spectra in degrees, `None` if either is (near) zero.
///
/// Evaluated as `2·atan2(‖r̂ − ê‖, ‖r̂ + ê‖)` on the unit vectors, which stays
/// accurate near 0° and 180° where `acos` of the cosine loses half the digits
/// and can see arguments just outside `[−1, 1]`.
pub fn spectral_angle(r: &[f64], e: &[f64]) -> Option<f64> {
    let nr = r.iter().map(|a| a * a).sum::<f64>().sqrt();
    let ne = e.iter().map(|b| b * b).sum::<f64>().sqrt();
    if nr < SAM_NORM_FLOOR || ne < SAM_NORM_FLOOR {
        return None;
    }
    let (mut diff, mut sum) = (0.0, 0.0);
    for (a, b) in r.iter().zip(e) {
        let (u, v) = (a / nr, b / ne);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some((2.0 * diff.sqrt().atan2(sum.sqrt())).to_degrees())
}

pub fn sam(reference: &HsiCube, estimate: &HsiCube) -> Result<Sam> {
    check_shapes(reference, estimate)?;
    let (r, e) = (reference.as_cube(), estimate.as_cube());
    let angles = par::map_indexed(r.plane_len(), |p| spectral_angle(&r.pixel(p), &e.pixel(p)));
    let kept: Vec<f64> = angles.iter().flatten().copied().collect();
    let skipped = angles.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::DegenerateInput(
            "every pixel has a zero spectrum; SAM is undefined".into(),
        ));
    }
    Ok(Sam {
        degrees: pairwise_sum(&kept) / kept.len() as f64,
        skipped,
    })
}

pub fn ergas(reference: &HsiCube, estimate: &HsiCube, scale: f64) -> Result<f64> {
    check_shapes(reference, estimate)?;
    if scale.is_nan() || scale <= 0.0 {
        return Err(Error::Config(format!("ERGAS scale must be positive, got {scale}")));
    }
    let r = reference.as_cube();
    let means: Vec<f64> =
        par::map_indexed(r.depth(), |l| pairwise_sum(r.plane(l)) / r.plane_len() as f64);
    if let Some(l) = means.iter().position(|m| m.abs() <= ERGAS_MEAN_FLOOR) {
        return Err(Error::DegenerateInput(format!(
            "reference band {l} has mean {:e}; ERGAS is undefined",
            means[l]
        )));
    }
    let ratios: Vec<f64> = band_mse(reference, estimate)
        .iter()
        .zip(&means)
        .map(|(mse, mu)| mse / (mu * mu))
        .collect();
    Ok(100.0 / scale * (pairwise_sum(&ratios) / ratios.len() as f64).sqrt())
}

/// All three metrics for one (reference, estimate) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(with = "float_or_inf")]
    pub mpsnr: f64,
    pub msam: f64,
    pub mergas: f64,
    #[serde(with = "float_or_inf::vec")]
    pub per_band_psnr: Vec<f64>,
    pub n_pixels_skipped_sam: usize,
}

pub fn evaluate(reference: &HsiCube, estimate: &HsiCube, scale: f64) -> Result<MetricsReport> {
    let p = psnr(reference, estimate)?;
    let s = sam(reference, estimate)?;
    let e = ergas(reference, estimate, scale)?;
    Ok(MetricsReport {
        mpsnr: p.mean,
        msam: s.degrees,
        mergas: e,
        per_band_psnr: p.per_band,
        n_pixels_skipped_sam: s.skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PatchGrid {
    /// Side of each square patch, in pixels.
    pub patch: usize,
    /// Patches per axis.
    pub grid: usize,
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self { patch: 76, grid: 4 }
    }
}

impl PatchGrid {
    /// Top-left corners, row-major. Rows/cols past `patch · grid` are unused.
    pub fn offsets(&self, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
        let span = self.patch * self.grid;
        if self.patch == 0 || self.grid == 0 || span > rows || span > cols {
            return Err(Error::Shape(format!(
                "{0}x{0} grid of {1}-pixel patches does not fit {rows}x{cols}",
                self.grid, self.patch
            )));
        }
        Ok((0..self.grid)
            .flat_map(|i| (0..self.grid).map(move |j| (i * self.patch, j * self.patch)))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub row: usize,
    pub col: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchEvaluation {
    pub patches: Vec<PatchReport>,
    #[serde(with = "float_or_inf")]
    pub mpsnr: f64,
    pub msam: f64,
    pub mergas: f64,
}

/// Scores every patch of the grid and averages the per-patch metrics.
pub fn evaluate_patches(
    reference: &HsiCube,
    estimate: &HsiCube,
    grid: &PatchGrid,
    scale: f64,
) -> Result<PatchEvaluation> {
    check_shapes(reference, estimate)?;
    let offsets = grid.offsets(reference.rows(), reference.cols())?;
    let reports = par::map_indexed(offsets.len(), |i| {
        let (row, col) = offsets[i];
        let crop = |c: &HsiCube| {
            c.as_cube()
                .crop(row, col, grid.patch, grid.patch)
                .map(HsiCube::new)
        };
        let report = evaluate(&crop(reference)?, &crop(estimate)?, scale)?;
        Ok(PatchReport { row, col, report })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let n = reports.len() as f64;
    let collect = |f: fn(&MetricsReport) -> f64| reports.iter().map(|p| f(&p.report)).collect::<Vec<_>>();
    Ok(PatchEvaluation {
        mpsnr: mean_finite(&collect(|r| r.mpsnr)),
        msam: pairwise_sum(&collect(|r| r.msam)) / n,
        mergas: pairwise_sum(&collect(|r| r.mergas)) / n,
        patches: reports,
    })
}

/// Serialises `+∞` as the string `"inf"` so reports stay valid JSON.
pub mod float_or_inf {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn decode<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(E::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        decode(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;
        use serde::ser::SerializeSeq;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if *x == f64::INFINITY {
                    seq.serialize_element("inf")?;
                } else {
                    seq.serialize_element(x)?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(decode).collect()
        }
    }
}

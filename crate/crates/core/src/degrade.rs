//! Simulated acquisition: Gaussian PSF blur followed by bicubic decimation,
//! and the bicubic upsampling baseline.
//!
//! Sampling convention: output pixel `i` of a resampling by factor `s` sits
//! at input coordinate `(i + 0.5)·s − 0.5` when shrinking and
//! `(i + 0.5)/s − 0.5` when enlarging (pixel centres aligned). Bicubic
//! weights use the Keys kernel with `a = −0.5`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Cube, Planes};

pub const KEYS_A: f64 = -0.5;

/// How samples outside the image are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Half-sample symmetric mirror, edge sample repeated: `… b a | a b c …`.
    #[default]
    Reflect,
    /// Clamp to the nearest edge sample.
    Replicate,
}

impl Boundary {
    /// Maps any integer coordinate into `0..len`.
    #[inline]
    pub fn resolve(self, i: isize, len: usize) -> usize {
        let n = len as isize;
        match self {
            Boundary::Replicate => i.clamp(0, n - 1) as usize,
            Boundary::Reflect => {
                let period = 2 * n;
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - 1 - m }) as usize
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfConfig {
    /// Gaussian standard deviation in high-resolution pixels.
    pub sigma: f64,
    /// Kernel half-width in units of sigma (3 → total support ≈ 6σ).
    pub truncation_radius_sigmas: f64,
    pub scale: usize,
    pub boundary: Boundary,
}

impl Default for PsfConfig {
    fn default() -> Self {
        Self {
            sigma: 4.0,
            truncation_radius_sigmas: 3.0,
            scale: 4,
            boundary: Boundary::Reflect,
        }
    }
}

impl PsfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.truncation_radius_sigmas > 0.0 && self.truncation_radius_sigmas.is_finite()) {
            return Err(Error::Config(format!(
                "truncation_radius_sigmas must be positive, got {}",
                self.truncation_radius_sigmas
            )));
        }
        if self.scale < 2 {
            return Err(Error::Config(format!("scale must be at least 2, got {}", self.scale)));
        }
        Ok(())
    }

    /// `⌈truncation_radius_sigmas · sigma⌉`.
    pub fn half_width(&self) -> usize {
        (self.truncation_radius_sigmas * self.sigma).ceil() as usize
    }

    /// Normalised 1-D Gaussian taps, length `2·half_width + 1`.
    pub fn kernel(&self) -> Vec<f64> {
        let h = self.half_width() as isize;
        let denom = 2.0 * self.sigma * self.sigma;
        let raw: Vec<f64> = (-h..=h).map(|k| (-((k * k) as f64) / denom).exp()).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

/// Keys cubic convolution kernel.
#[inline]
pub fn keys(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// 1-D resampling plan: four (index, weight) taps per output sample.
struct Taps {
    taps: Vec<[(usize, f64); 4]>,
}

impl Taps {
    fn new(out_len: usize, in_len: usize, position: impl Fn(usize) -> f64, boundary: Boundary) -> Self {
        let taps = (0..out_len)
            .map(|o| {
                let x = position(o);
                let base = x.floor();
                let t = x - base;
                let base = base as isize;
                let mut row = [(0usize, 0.0f64); 4];
                for (k, slot) in row.iter_mut().enumerate() {
                    let offset = k as isize - 1;
                    *slot = (
                        boundary.resolve(base + offset, in_len),
                        keys(t - offset as f64),
                    );
                }
                row
            })
            .collect();
        Self { taps }
    }
}

/// Weighted sum of `values` written as `anchor + Σ w·(x − anchor)`.
///
/// The weights sum to one, so this equals `Σ w·x` up to rounding, and a
/// constant input comes back bit-for-bit.
#[inline]
fn anchored(anchor: f64, terms: impl Iterator<Item = (f64, f64)>) -> f64 {
    anchor + terms.map(|(w, x)| w * (x - anchor)).sum::<f64>()
}

/// `line = anchor_row + Σ w·(row − anchor_row)` over the given source rows.
fn anchored_rows<'a>(line: &mut [f64], anchor: &[f64], rows: impl Iterator<Item = (f64, &'a [f64])>) {
    line.iter_mut().for_each(|x| *x = 0.0);
    for (w, row) in rows {
        line.iter_mut()
            .zip(row.iter().zip(anchor))
            .for_each(|(x, (&s, &a))| *x += w * (s - a));
    }
    line.iter_mut().zip(anchor).for_each(|(x, &a)| *x += a);
}

/// Resamples every plane separably: rows first, then columns.
fn resample<T: Planes>(t: &T, row_taps: &Taps, col_taps: &Taps) -> Result<T> {
    let cube = t.cube();
    let cols = cube.cols();
    let (out_rows, out_cols) = (row_taps.taps.len(), col_taps.taps.len());
    let mut out = vec![0.0; cube.depth() * out_rows * out_cols];
    par::for_each_chunk_mut(&mut out, out_rows * out_cols, |d, dst| {
        let src = cube.plane(d);
        // vertical pass: out_rows × cols
        let mut tmp = vec![0.0; out_rows * cols];
        let row = |r: usize| &src[r * cols..(r + 1) * cols];
        for (o, taps) in row_taps.taps.iter().enumerate() {
            let line = &mut tmp[o * cols..(o + 1) * cols];
            anchored_rows(line, row(taps[1].0), taps.iter().map(|&(r, w)| (w, row(r))));
        }
        // horizontal pass
        for r in 0..out_rows {
            let line = &tmp[r * cols..(r + 1) * cols];
            for (o, taps) in col_taps.taps.iter().enumerate() {
                dst[r * out_cols + o] = anchored(line[taps[1].0], taps.iter().map(|&(c, w)| (w, line[c])));
            }
        }
    });
    t.with_cube(Cube::new(cube.depth(), out_rows, out_cols, out)?)
}

/// Separable Gaussian blur of every plane; shape unchanged.
pub fn gaussian_blur<T: Planes>(t: &T, cfg: &PsfConfig) -> Result<T> {
    cfg.validate()?;
    let cube = t.cube();
    let kernel = cfg.kernel();
    let extent = cube.rows().min(cube.cols());
    if kernel.len() > 2 * extent {
        return Err(Error::KernelTooLarge {
            width: kernel.len(),
            extent,
        });
    }
    let h = cfg.half_width() as isize;
    let (rows, cols) = (cube.rows(), cube.cols());
    let mut out = vec![0.0; cube.depth() * rows * cols];
    par::for_each_chunk_mut(&mut out, rows * cols, |d, dst| {
        let src = cube.plane(d);
        let mut tmp = vec![0.0; rows * cols];
        let row = |r: usize| &src[r * cols..(r + 1) * cols];
        for r in 0..rows {
            let taps = kernel.iter().enumerate().map(|(k, &w)| {
                (w, row(cfg.boundary.resolve(r as isize + k as isize - h, rows)))
            });
            anchored_rows(&mut tmp[r * cols..(r + 1) * cols], row(r), taps);
        }
        let mut padded = vec![0.0; cols + 2 * h as usize];
        for r in 0..rows {
            let line = &tmp[r * cols..(r + 1) * cols];
            for (i, x) in padded.iter_mut().enumerate() {
                *x = line[cfg.boundary.resolve(i as isize - h, cols)];
            }
            for (c, out) in dst[r * cols..(r + 1) * cols].iter_mut().enumerate() {
                let window = &padded[c..c + kernel.len()];
                *out = anchored(window[h as usize], kernel.iter().copied().zip(window.iter().copied()));
            }
        }
    });
    t.with_cube(Cube::new(cube.depth(), rows, cols, out)?)
}

/// Bicubic decimation by `cfg.scale`; output is `⌈rows/s⌉ × ⌈cols/s⌉`.
pub fn downsample_bicubic<T: Planes>(t: &T, cfg: &PsfConfig) -> Result<T> {
    cfg.validate()?;
    let cube = t.cube();
    let s = cfg.scale;
    let out_rows = cube.rows().div_ceil(s);
    let out_cols = cube.cols().div_ceil(s);
    if out_rows == 0 || out_cols == 0 {
        return Err(Error::Shape("downsampled image would be empty".into()));
    }
    let pos = |o: usize| (o as f64 + 0.5) * s as f64 - 0.5;
    let row_taps = Taps::new(out_rows, cube.rows(), pos, cfg.boundary);
    let col_taps = Taps::new(out_cols, cube.cols(), pos, cfg.boundary);
    resample(t, &row_taps, &col_taps)
}

/// Bicubic enlargement by `scale` onto a `target` grid of `(rows, cols)`.
///
/// `target` may differ from `input · scale` by at most `scale − 1` per axis,
/// which covers grids that were not multiples of the scale before
/// decimation.
pub fn upsample_bicubic<T: Planes>(
    t: &T,
    scale: usize,
    target: (usize, usize),
    boundary: Boundary,
) -> Result<T> {
    if scale < 1 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    let cube = t.cube();
    let check = |input: usize, out: usize, axis: &str| {
        let full = input * scale;
        if out == 0 || full.abs_diff(out) > scale - 1 {
            Err(Error::Shape(format!(
                "{axis}: target {out} is inconsistent with {input} × {scale}"
            )))
        } else {
            Ok(())
        }
    };
    check(cube.rows(), target.0, "rows")?;
    check(cube.cols(), target.1, "cols")?;
    let pos = |o: usize| (o as f64 + 0.5) / scale as f64 - 0.5;
    let row_taps = Taps::new(target.0, cube.rows(), pos, boundary);
    let col_taps = Taps::new(target.1, cube.cols(), pos, boundary);
    resample(t, &row_taps, &col_taps)
}

/// `downsample_bicubic(gaussian_blur(t))`.
pub fn degrade<T: Planes>(t: &T, cfg: &PsfConfig) -> Result<T> {
    downsample_bicubic(&gaussian_blur(t, cfg)?, cfg)
}

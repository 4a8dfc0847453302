//! Tensor types shared by every stage of the pipeline.
//!
//! All stacks of 2-D planes use the `(plane, row, col)` axis order, row-major:
//! spectral cubes index planes by band, abundance maps by material. Values are
//! held in `f64`; files carry `f32` (see [`crate::npy`]).

use std::path::Path;

use crate::error::{Error, Result};
use crate::npy;

/// Tolerance for the simplex flag on [`AbundanceMaps`].
pub const SIMPLEX_EPS: f64 = 1e-6;

/// A stack of `depth` planes of `rows × cols` finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    depth: usize,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Cube {
    pub fn new(depth: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if depth == 0 || rows == 0 || cols == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {depth}x{rows}x{cols}"
            )));
        }
        let expected = depth * rows * cols;
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "{depth}x{rows}x{cols} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self {
            depth,
            rows,
            cols,
            data,
        })
    }

    pub fn zeros(depth: usize, rows: usize, cols: usize) -> Result<Self> {
        Self::new(depth, rows, cols, vec![0.0; depth * rows * cols])
    }

    pub fn from_fn(
        depth: usize,
        rows: usize,
        cols: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(depth * rows * cols);
        for d in 0..depth {
            for r in 0..rows {
                for c in 0..cols {
                    data.push(f(d, r, c));
                }
            }
        }
        Self::new(depth, rows, cols, data)
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.depth
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> [usize; 3] {
        [self.depth, self.rows, self.cols]
    }

    /// Pixels per plane.
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, d: usize, r: usize, c: usize) -> f64 {
        self.data[(d * self.rows + r) * self.cols + c]
    }

    pub fn plane(&self, d: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[d * n..(d + 1) * n]
    }

    /// The `depth`-vector at flat pixel index `p = row * cols + col`.
    pub fn pixel(&self, p: usize) -> Vec<f64> {
        let n = self.plane_len();
        (0..self.depth).map(|d| self.data[d * n + p]).collect()
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Copy of the spatial window `[row0, row0+rows) × [col0, col0+cols)`.
    pub fn crop(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || row0 + rows > self.rows || col0 + cols > self.cols {
            return Err(Error::Shape(format!(
                "crop {rows}x{cols} at ({row0},{col0}) exceeds {}x{}",
                self.rows, self.cols
            )));
        }
        let mut data = Vec::with_capacity(self.depth * rows * cols);
        for d in 0..self.depth {
            for r in row0..row0 + rows {
                let start = (d * self.rows + r) * self.cols + col0;
                data.extend_from_slice(&self.data[start..start + cols]);
            }
        }
        Self::new(self.depth, rows, cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.depth,
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Types that are stacks of spatial planes and can be processed plane-wise.
pub trait Planes: Sized {
    fn cube(&self) -> &Cube;
    /// Rebuilds a value of the same kind around a processed cube.
    fn with_cube(&self, cube: Cube) -> Result<Self>;
}

impl Planes for Cube {
    fn cube(&self) -> &Cube {
        self
    }

    fn with_cube(&self, cube: Cube) -> Result<Self> {
        Ok(cube)
    }
}

/// Spectral cube: bands × rows × cols.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    cube: Cube,
    pub wavelength_note: Option<String>,
}

impl HsiCube {
    pub fn new(cube: Cube) -> Self {
        Self {
            cube,
            wavelength_note: None,
        }
    }

    pub fn from_vec(bands: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Cube::new(bands, rows, cols, data).map(Self::new)
    }

    pub fn bands(&self) -> usize {
        self.cube.depth()
    }

    pub fn rows(&self) -> usize {
        self.cube.rows()
    }

    pub fn cols(&self) -> usize {
        self.cube.cols()
    }

    pub fn as_cube(&self) -> &Cube {
        &self.cube
    }

    pub fn into_cube(self) -> Cube {
        self.cube
    }

    pub fn get(&self, band: usize, row: usize, col: usize) -> f64 {
        self.cube.get(band, row, col)
    }

    /// Divides every value by the global maximum, so the result peaks at 1.
    pub fn normalize_global(&self) -> Result<Self> {
        let max = self.cube.max();
        if max <= 0.0 {
            return Err(Error::DegenerateInput(format!(
                "cannot normalize a cube whose maximum is {max}"
            )));
        }
        Ok(Self {
            cube: self.cube.map(|v| v / max)?,
            wavelength_note: self.wavelength_note.clone(),
        })
    }
}

impl Planes for HsiCube {
    fn cube(&self) -> &Cube {
        &self.cube
    }

    fn with_cube(&self, cube: Cube) -> Result<Self> {
        Ok(Self {
            cube,
            wavelength_note: self.wavelength_note.clone(),
        })
    }
}

/// Abundance maps: materials × rows × cols.
///
/// The `simplex` flag asserts that each pixel vector is non-negative and sums
/// to one (both within [`SIMPLEX_EPS`]); it is checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMaps {
    cube: Cube,
    simplex: bool,
}

impl AbundanceMaps {
    pub fn new(cube: Cube) -> Self {
        Self {
            cube,
            simplex: false,
        }
    }

    pub fn from_vec(materials: usize, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Cube::new(materials, rows, cols, data).map(Self::new)
    }

    /// Flags the maps as simplex-valued after verifying every pixel.
    pub fn into_simplex(self) -> Result<Self> {
        let n = self.cube.plane_len();
        for p in 0..n {
            let v = self.cube.pixel(p);
            let sum: f64 = v.iter().sum();
            if v.iter().any(|&x| x < -SIMPLEX_EPS) || (sum - 1.0).abs() > SIMPLEX_EPS {
                return Err(Error::Data(format!(
                    "pixel {p} is not on the simplex: {v:?}"
                )));
            }
        }
        Ok(Self {
            cube: self.cube,
            simplex: true,
        })
    }

    pub fn is_simplex(&self) -> bool {
        self.simplex
    }

    pub fn materials(&self) -> usize {
        self.cube.depth()
    }

    pub fn rows(&self) -> usize {
        self.cube.rows()
    }

    pub fn cols(&self) -> usize {
        self.cube.cols()
    }

    pub fn as_cube(&self) -> &Cube {
        &self.cube
    }

    pub fn into_cube(self) -> Cube {
        self.cube
    }

    pub fn get(&self, material: usize, row: usize, col: usize) -> f64 {
        self.cube.get(material, row, col)
    }
}

impl Planes for AbundanceMaps {
    fn cube(&self) -> &Cube {
        &self.cube
    }

    fn with_cube(&self, cube: Cube) -> Result<Self> {
        // processed maps are no longer guaranteed to be simplex-valued
        Ok(Self::new(cube))
    }
}

/// Endmember spectra S: bands × materials, column `n` is material `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    materials: usize,
    data: Vec<f64>,
}

impl EndmemberMatrix {
    /// `data` is row-major by `(band, material)`.
    pub fn new(bands: usize, materials: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || materials == 0 {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {bands}x{materials}"
            )));
        }
        if data.len() != bands * materials {
            return Err(Error::Shape(format!(
                "{bands}x{materials} needs {} values, got {}",
                bands * materials,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {pos}")));
        }
        if let Some(n) =
            (0..materials).find(|&n| (0..bands).all(|l| data[l * materials + n] == 0.0))
        {
            return Err(Error::Data(format!("endmember column {n} is all zero")));
        }
        Ok(Self {
            bands,
            materials,
            data,
        })
    }

    /// Builds S from per-material spectra.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let materials = columns.len();
        let bands = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != bands) {
            return Err(Error::Shape("endmember columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(bands * materials);
        for l in 0..bands {
            data.extend(columns.iter().map(|c| c[l]));
        }
        Self::new(bands, materials, data)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn materials(&self) -> usize {
        self.materials
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, band: usize, material: usize) -> f64 {
        self.data[band * self.materials + material]
    }

    pub fn column(&self, material: usize) -> Vec<f64> {
        (0..self.bands).map(|l| self.get(l, material)).collect()
    }
}

/// A tensor as read from disk; the rank decides the variant.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    /// Rank 3: spectral cube or abundance maps (the file does not say which).
    Cube(Cube),
    /// Rank 2: always an endmember matrix.
    Endmembers(EndmemberMatrix),
}

impl Tensor {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            Tensor::Cube(c) => c.shape().to_vec(),
            Tensor::Endmembers(s) => vec![s.bands(), s.materials()],
        }
    }

    fn data(&self) -> &[f64] {
        match self {
            Tensor::Cube(c) => c.data(),
            Tensor::Endmembers(s) => s.data(),
        }
    }
}

impl From<Cube> for Tensor {
    fn from(c: Cube) -> Self {
        Tensor::Cube(c)
    }
}

impl From<HsiCube> for Tensor {
    fn from(c: HsiCube) -> Self {
        Tensor::Cube(c.into_cube())
    }
}

impl From<AbundanceMaps> for Tensor {
    fn from(a: AbundanceMaps) -> Self {
        Tensor::Cube(a.into_cube())
    }
}

impl From<EndmemberMatrix> for Tensor {
    fn from(s: EndmemberMatrix) -> Self {
        Tensor::Endmembers(s)
    }
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Parses NPY bytes into a tensor.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let array = npy::decode(bytes)?;
    match *array.shape.as_slice() {
        [d, r, c] => Cube::new(d, r, c, array.data).map(Tensor::Cube),
        [l, n] => EndmemberMatrix::new(l, n, array.data).map(Tensor::Endmembers),
        ref other => Err(Error::Shape(format!(
            "tensor rank must be 2 or 3, got shape {other:?}"
        ))),
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    npy::encode_f32(&t.shape(), t.data())
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

fn expect_cube(t: Tensor, what: &str) -> Result<Cube> {
    match t {
        Tensor::Cube(c) => Ok(c),
        Tensor::Endmembers(s) => Err(Error::Shape(format!(
            "expected a rank-3 {what}, found a {}x{} matrix",
            s.bands(),
            s.materials()
        ))),
    }
}

pub fn load_cube(path: impl AsRef<Path>) -> Result<HsiCube> {
    expect_cube(load_tensor(path)?, "spectral cube").map(HsiCube::new)
}

pub fn load_abundances(path: impl AsRef<Path>) -> Result<AbundanceMaps> {
    expect_cube(load_tensor(path)?, "abundance tensor").map(AbundanceMaps::new)
}

pub fn load_endmembers(path: impl AsRef<Path>) -> Result<EndmemberMatrix> {
    match load_tensor(path)? {
        Tensor::Endmembers(s) => Ok(s),
        Tensor::Cube(c) => Err(Error::Shape(format!(
            "expected a rank-2 endmember matrix, found shape {:?}",
            c.shape()
        ))),
    }
}

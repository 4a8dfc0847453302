//! Building blocks for unsupervised hyperspectral single-image super-resolution.
//!
//! A low-resolution cube is split into endmembers and abundance maps
//! ([`unmix`]), synthetic dead-leaves abundance maps are drawn from the real
//! abundance statistics ([`deadleaves`]), paired with their degraded versions
//! ([`degrade`]), and results are scored with PSNR / SAM / ERGAS
//! ([`metrics`]). Every tensor crosses process boundaries as an NPY file
//! ([`npy`]).
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise; results are identical either way.

pub mod deadleaves;
pub mod degrade;
pub mod error;
pub mod metrics;
pub mod npy;
pub mod par;
pub mod tensor;
pub mod unmix;

pub use error::{Error, Result};
pub use tensor::{AbundanceMaps, Cube, EndmemberMatrix, HsiCube, Planes, Tensor};

//! Semi-blind unmixing of Raman mixture spectra.
//!
//! Known reference spectra are fitted to the mixtures under concentration
//! bounds; unknown components are then extracted from the fitting residual by
//! locating the extreme rays of the residual's row cone and recovering sparse
//! nonnegative source spectra with linearized Bregman iterations. Confirmed
//! components are fed back into the fit and the loop repeats.
//!
//! The numerical routines are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiations.

pub mod cls;
pub mod cone;
pub mod error;
mod linalg;
pub mod nmf;
pub mod pipeline;
pub mod scalar;
pub mod sparse;
pub mod spectra;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SpectralGrid64 = spectra::SpectralGrid<f64>;
pub type Spectrum64 = spectra::Spectrum<f64>;
pub type MixtureMatrix64 = spectra::MixtureMatrix<f64>;
pub type ReferenceLibrary64 = spectra::ReferenceLibrary<f64>;
pub type ConcentrationBounds64 = spectra::ConcentrationBounds<f64>;
pub type ConcentrationMatrix64 = cls::ConcentrationMatrix<f64>;
pub type ResidualMatrix64 = cls::ResidualMatrix<f64>;
pub type MixingEstimate64 = cone::MixingEstimate<f64>;
pub type SourceMatrix64 = sparse::SourceMatrix<f64>;
pub type BregmanConfig64 = sparse::BregmanConfig<f64>;

pub type SpectralGrid32 = spectra::SpectralGrid<f32>;
pub type Spectrum32 = spectra::Spectrum<f32>;
pub type MixtureMatrix32 = spectra::MixtureMatrix<f32>;
pub type ResidualMatrix32 = cls::ResidualMatrix<f32>;
pub type SourceMatrix32 = sparse::SourceMatrix<f32>;

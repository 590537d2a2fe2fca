//! NMF-family audio source separation with phase reconstruction.
//!
//! The crate covers the whole separation chain: STFT analysis and the
//! consistency projection, multiplicative-update NMF, Wiener / Griffin-Lim /
//! Le Roux phase recovery, complex NMF, the autoregressive HRNMF model with
//! exact EM, BSS Eval scoring and synthetic benchmark data.
//!
//! All numerical code is generic over the scalar type through [`Real`]
//! (implemented for `f32` and `f64`). Concrete `f64` aliases are exported at
//! the crate root for the common case.

pub mod bss_eval;
pub mod cnmf;
pub mod datagen;
pub mod error;
pub mod factorization;
pub mod hrnmf;
pub mod linalg;
pub mod phase;
pub mod scalar;
pub mod tf;
pub mod wav;

pub use error::{Error, Result};
pub use scalar::Real;

pub use num_complex::Complex;

pub type StftPlan64 = tf::StftPlan<f64>;
pub type Spectrogram64 = tf::Spectrogram<f64>;
pub type FactorPair64 = factorization::FactorPair<f64>;
pub type CnmfModel64 = cnmf::CnmfModel<f64>;
pub type HrnmfModel64 = hrnmf::HrnmfModel<f64>;
pub type SourceEstimateSet64 = phase::SourceEstimateSet<f64>;
pub type SeparationScores64 = bss_eval::SeparationScores<f64>;
pub type MixtureCase64 = datagen::MixtureCase<f64>;

pub type StftPlan32 = tf::StftPlan<f32>;
pub type Spectrogram32 = tf::Spectrogram<f32>;
pub type FactorPair32 = factorization::FactorPair<f32>;

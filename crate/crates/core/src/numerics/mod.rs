//! Dense matrices, norms, rank-1 residuals and singular spectra.

mod matrix;
mod residual;
mod svd;

pub use matrix::Matrix;
pub use residual::{column_medians, lower_median, residual, residual_with, ResidualReport};
pub use svd::{singular_spectrum, singular_spectrum_with, Spectrum, JACOBI_MAX_SWEEPS, JACOBI_TOLERANCE};

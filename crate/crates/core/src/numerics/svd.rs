//! Singular values by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of a working copy are rotated pairwise until every pair is
//! orthogonal to a relative tolerance; the column norms are then the
//! singular values.

use super::Matrix;
use crate::error::{Error, Result};

pub const JACOBI_TOLERANCE: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Nonincreasing singular values, length `min(rows, cols)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub singular_values: Vec<f64>,
}

impl Spectrum {
    pub fn max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.singular_values.last().copied().unwrap_or(0.0)
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.singular_values.iter().map(|s| s * s).sum()
    }
}

pub fn singular_spectrum(x: &Matrix) -> Result<Spectrum> {
    singular_spectrum_with(x, JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS)
}

pub fn singular_spectrum_with(x: &Matrix, tol: f64, max_sweeps: usize) -> Result<Spectrum> {
    assert!(x.rows().min(x.cols()) >= 1, "empty matrix has no spectrum");
    // Orthogonalize the shorter side: work on columns of a tall matrix.
    let work = if x.rows() >= x.cols() { x.clone() } else { x.transpose() };
    let (m, n) = work.shape();
    // Column-major copy so the rotations touch contiguous memory.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| work.column(j)).collect();

    // Columns at round-off level relative to the whole matrix carry no
    // spectral information and would otherwise keep rotating forever.
    let floor = (f64::EPSILON * work.frobenius()).powi(2);
    let mut converged = false;
    let mut off = 0.0;
    for _ in 0..max_sweeps {
        off = 0.0;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = dots(&cols[p], &cols[q]);
                if gamma == 0.0 || alpha <= floor || beta <= floor {
                    continue;
                }
                let coupling = gamma.abs() / (alpha.sqrt() * beta.sqrt());
                if !coupling.is_finite() || coupling <= tol {
                    continue;
                }
                off += coupling;
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for i in 0..m {
                    let a = cp[i];
                    let b = cq[i];
                    cp[i] = c * a - s * b;
                    cq[i] = s * a + c * b;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNoConvergence {
            sweeps: max_sweeps,
            off_diagonal: off,
        });
    }
    let mut singular_values: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    Ok(Spectrum { singular_values })
}

fn dots(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut alpha = 0.0;
    let mut beta = 0.0;
    let mut gamma = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        alpha += x * x;
        beta += y * y;
        gamma += x * y;
    }
    (alpha, beta, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_matrix, seeded, shuffled_indices};

    #[test]
    fn diagonal() {
        let s = singular_spectrum(&Matrix::from_rows(&[[1.0, 0.0], [0.0, 3.0]])).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
    }

    #[test]
    fn permutation_matrix_has_unit_spectrum() {
        let mut rng = seeded(2);
        let idx = shuffled_indices(&mut rng, 12);
        let p = Matrix::from_fn(12, 12, |i, j| if idx[i] == j { 1.0 } else { 0.0 });
        let s = singular_spectrum(&p).unwrap();
        assert_eq!(s.singular_values.len(), 12);
        for v in s.singular_values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frobenius_identity_on_random_square() {
        let mut rng = seeded(11);
        let x = gaussian_matrix(&mut rng, 6, 6, 1.0);
        let s = singular_spectrum(&x).unwrap();
        let fro2 = x.frobenius().powi(2);
        assert!((s.sum_of_squares() - fro2).abs() <= 1e-8 * fro2);
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_matrix_uses_transpose() {
        let mut rng = seeded(5);
        let x = gaussian_matrix(&mut rng, 3, 7, 1.0);
        let a = singular_spectrum(&x).unwrap();
        let b = singular_spectrum(&x.transpose()).unwrap();
        assert_eq!(a.singular_values.len(), 3);
        for (u, v) in a.singular_values.iter().zip(&b.singular_values) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_input() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        let s = singular_spectrum(&x).unwrap();
        assert!((s.max() - (70f64).sqrt()).abs() < 1e-12);
        assert!(s.min() < 1e-12);
    }

    #[test]
    fn nearly_collapsed_matrix_converges() {
        let mut rng = seeded(12);
        let u = gaussian_matrix(&mut rng, 40, 1, 1.0);
        let v = gaussian_matrix(&mut rng, 1, 12, 1.0);
        let noise = gaussian_matrix(&mut rng, 40, 12, 1e-17);
        let x = u.matmul(&v).unwrap().add(&noise).unwrap();
        let s = singular_spectrum(&x).unwrap();
        assert!((s.max() - x.frobenius()).abs() < 1e-9 * s.max());
        assert!(s.min() < 1e-12 * s.max());
    }

    #[test]
    fn zero_sweeps_reports_non_convergence() {
        let mut rng = seeded(9);
        let x = gaussian_matrix(&mut rng, 5, 5, 1.0);
        assert!(matches!(
            singular_spectrum_with(&x, 1e-10, 1),
            Err(Error::SvdNoConvergence { sweeps: 1, .. })
        ));
    }
}

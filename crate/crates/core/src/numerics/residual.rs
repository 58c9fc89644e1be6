//! Rank-1 residual `X - 1 x^T` and its (1,inf)-norm.
//!
//! `x` is the per-column lower median, the exact minimizer of the 1-norm
//! objective `max_c sum_n |x_nc - x_c|` since the columns decouple.

use super::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub xhat: Vec<f64>,
    pub residual: Matrix,
    pub norm1: f64,
    pub norm_inf: f64,
    pub norm_1_inf: f64,
}

/// Lower median: the smaller central value for even lengths.
pub fn lower_median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty column");
    let mut s = values.to_vec();
    let mid = (s.len() - 1) / 2;
    let (_, m, _) = s.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

pub fn column_medians(x: &Matrix) -> Vec<f64> {
    (0..x.cols()).map(|c| lower_median(&x.column(c))).collect()
}

/// Residual of `x` against an arbitrary candidate row vector.
pub fn residual_with(x: &Matrix, candidate: &[f64]) -> ResidualReport {
    assert_eq!(candidate.len(), x.cols());
    let residual = Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - candidate[j]);
    let norm1 = residual.norm1();
    let norm_inf = residual.norm_inf();
    ResidualReport {
        xhat: candidate.to_vec(),
        residual,
        norm1,
        norm_inf,
        norm_1_inf: (norm1 * norm_inf).sqrt(),
    }
}

pub fn residual(x: &Matrix) -> ResidualReport {
    assert!(x.rows() >= 1, "residual needs at least one row");
    residual_with(x, &column_medians(x))
}

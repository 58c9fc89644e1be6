//! Sinkhorn-Knopp normalization and grouped doubly stochastic attention.
//!
//! One iteration normalizes rows and then columns. The grouped attention
//! works in the log domain: the kernels `exp(v_ref v_c^T / tau)` overflow
//! long before `tau` reaches the small values where they approach the hard
//! sorting permutations. In exact arithmetic both domains give the same map.

use crate::csp::{plan, project, CspConfig};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::permutation::Permutation;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub iterations: usize,
    pub temperature: f64,
    pub groups: usize,
}

impl SinkhornConfig {
    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.groups == 0 {
            return Err(Error::InvalidConfig("zero groups".into()));
        }
        Ok(())
    }
}

/// `t` alternating row/column normalizations of a strictly positive matrix.
pub fn sinkhorn_normalize(a: &Matrix, iterations: usize) -> Result<Matrix> {
    for i in 0..a.rows() {
        for (j, &v) in a.row(i).iter().enumerate() {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::NonPositive {
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    let mut m = a.clone();
    for _ in 0..iterations {
        for i in 0..m.rows() {
            let row = m.row_mut(i);
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        let sums = m.col_sums();
        for i in 0..m.rows() {
            for (x, s) in m.row_mut(i).iter_mut().zip(&sums) {
                *x /= s;
            }
        }
    }
    Ok(m)
}

/// Sinkhorn on `exp(logits)`, carried out on the logits.
pub fn sinkhorn_normalize_log(logits: &Matrix, iterations: usize) -> Matrix {
    let (n, m) = logits.shape();
    let mut l = logits.clone();
    let mut col = vec![0.0; n];
    for _ in 0..iterations {
        for i in 0..n {
            let row = l.row_mut(i);
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        for j in 0..m {
            for (i, slot) in col.iter_mut().enumerate() {
                *slot = l[(i, j)];
            }
            let lse = log_sum_exp(&col);
            for i in 0..n {
                l[(i, j)] -= lse;
            }
        }
    }
    l.map(f64::exp)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Largest deviation of row and column sums from 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Margins {
    pub max_row_deviation: f64,
    pub max_col_deviation: f64,
}

impl Margins {
    pub fn of(m: &Matrix) -> Self {
        let dev = |sums: Vec<f64>| sums.into_iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
        Self {
            max_row_deviation: dev(m.row_sums()),
            max_col_deviation: dev(m.col_sums()),
        }
    }

    pub fn is_doubly_stochastic(&self, tol: f64) -> bool {
        self.max_row_deviation <= tol && self.max_col_deviation <= tol
    }
}

#[derive(Debug, Clone)]
pub struct GroupedSinkhorn {
    pub output: Matrix,
    /// Block-diagonal `N x N` map per channel.
    pub maps: Vec<Matrix>,
    pub margins: Vec<Margins>,
}

/// Grouped doubly stochastic attention on an already shifted value matrix.
///
/// For channel `c` and group `k` the block is
/// `Sinkhorn_t(exp(v_ref^(k) v_c^(k)^T / tau))`; the channel output is the
/// assembled block-diagonal map applied to `v_c`.
pub fn grouped_sinkhorn_attention(
    v: &Matrix,
    cfg: &SinkhornConfig,
    reference_channel: usize,
) -> Result<GroupedSinkhorn> {
    cfg.validate()?;
    let (n, c) = v.shape();
    if n % cfg.groups != 0 {
        return Err(Error::IndivisibleGroups {
            len: n,
            groups: cfg.groups,
        });
    }
    if reference_channel >= c {
        return Err(Error::IndexOutOfRange {
            index: reference_channel,
            len: c,
        });
    }
    let g = n / cfg.groups;
    let reference = v.column(reference_channel);
    let mut output = Matrix::zeros(n, c);
    let mut maps = Vec::with_capacity(c);
    let mut margins = Vec::with_capacity(c);
    for ch in 0..c {
        let values = v.column(ch);
        let mut map = Matrix::zeros(n, n);
        for k in 0..cfg.groups {
            let base = k * g;
            let logits = Matrix::from_fn(g, g, |i, j| reference[base + i] * values[base + j] / cfg.temperature);
            let block = sinkhorn_normalize_log(&logits, cfg.iterations);
            for i in 0..g {
                for j in 0..g {
                    map[(base + i, base + j)] = block[(i, j)];
                }
            }
        }
        output.set_column(ch, &map.apply(&values)?);
        margins.push(Margins::of(&map));
        maps.push(map);
    }
    Ok(GroupedSinkhorn { output, maps, margins })
}

/// Max-abs gap between grouped Sinkhorn maps and the hard sorting maps of
/// the CSP operator on the same input.
///
/// The value matrix is shifted per channel exactly as CSP does before both
/// maps are formed; the comparison is against the sort blocks `T_c`, which
/// has the same gap as `T_c S_c` since the shift only reorders columns.
pub fn sinkhorn_csp_gap(x: &Matrix, csp: &CspConfig, sinkhorn: &SinkhornConfig) -> Result<f64> {
    if csp.groups != sinkhorn.groups {
        return Err(Error::InvalidConfig(format!(
            "group counts differ: csp {} vs sinkhorn {}",
            csp.groups, sinkhorn.groups
        )));
    }
    let v = project(x, csp)?;
    let trace = plan(&v, csp)?;
    let mut shifted = Matrix::zeros(v.rows(), v.cols());
    for (ch, shift) in trace.shifts.iter().enumerate() {
        shifted.set_column(ch, &shift.apply(&v.column(ch)));
    }
    let soft = grouped_sinkhorn_attention(&shifted, sinkhorn, csp.reference_channel)?;
    let mut gap = 0.0f64;
    for (map, sort) in soft.maps.iter().zip(&trace.sorts) {
        gap = gap.max(map.max_abs_diff(&Permutation::to_dense(sort))?);
    }
    Ok(gap)
}

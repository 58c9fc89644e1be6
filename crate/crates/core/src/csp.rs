//! The channel-wise sample permutation operator.
//!
//! For `V = X W` with columns `v_c`, channel `c` is circularly shifted by its
//! scheduled step and then group-sorted against the un-shifted reference
//! column, so every output column is `P_c v_c` with `P_c = T_c S_c`. The
//! reference channel passes through unchanged.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::permutation::{compose, group_sort_permutation, shift_permutation, Permutation};
use crate::schedule::ShiftSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct CspConfig {
    pub channels: usize,
    pub groups: usize,
    pub schedule: ShiftSchedule,
    pub reference_channel: usize,
    /// `C x C` value projection; `None` means identity.
    pub projection: Option<Matrix>,
}

impl CspConfig {
    pub fn new(channels: usize, groups: usize, schedule: ShiftSchedule) -> Self {
        Self {
            channels,
            groups,
            schedule,
            reference_channel: 0,
            projection: None,
        }
    }

    pub fn with_projection(mut self, w: Matrix) -> Self {
        self.projection = Some(w);
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::InvalidConfig("zero channels".into()));
        }
        if self.groups == 0 || !n.is_multiple_of(self.groups) {
            return Err(Error::IndivisibleGroups {
                len: n,
                groups: self.groups,
            });
        }
        if self.reference_channel >= self.channels {
            return Err(Error::IndexOutOfRange {
                index: self.reference_channel,
                len: self.channels,
            });
        }
        if let Some(w) = &self.projection {
            if w.shape() != (self.channels, self.channels) {
                return Err(Error::ShapeMismatch {
                    op: "csp projection",
                    left: (self.channels, self.channels),
                    right: w.shape(),
                });
            }
        }
        Ok(())
    }
}

/// Per-channel shift, sort and total permutations of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CspTrace {
    pub shifts: Vec<Permutation>,
    pub sorts: Vec<Permutation>,
    pub totals: Vec<Permutation>,
    pub reference_channel: usize,
}

impl CspTrace {
    pub fn channels(&self) -> usize {
        self.totals.len()
    }

    /// Applies the frozen permutations to the columns of `v`.
    pub fn apply(&self, v: &Matrix) -> Result<Matrix> {
        if v.cols() != self.channels() || self.totals.first().is_some_and(|p| p.len() != v.rows()) {
            return Err(Error::ShapeMismatch {
                op: "trace apply",
                left: (self.totals.first().map_or(0, Permutation::len), self.channels()),
                right: v.shape(),
            });
        }
        let mut out = Matrix::zeros(v.rows(), v.cols());
        for (c, p) in self.totals.iter().enumerate() {
            out.set_column(c, &p.apply(&v.column(c)));
        }
        Ok(out)
    }
}

/// Value matrix `X W` (or `X` when no projection is configured).
pub fn project(x: &Matrix, cfg: &CspConfig) -> Result<Matrix> {
    match &cfg.projection {
        Some(w) => x.matmul(w),
        None => Ok(x.clone()),
    }
}

/// Builds the permutations CSP would apply to an already-projected `v`.
pub fn plan(v: &Matrix, cfg: &CspConfig) -> Result<CspTrace> {
    let (n, c) = v.shape();
    if c != cfg.channels {
        return Err(Error::ShapeMismatch {
            op: "csp",
            left: (n, cfg.channels),
            right: v.shape(),
        });
    }
    cfg.validate(n)?;
    let steps = cfg.schedule.resolve(n, c)?.steps;
    let reference = v.column(cfg.reference_channel);

    let mut shifts = Vec::with_capacity(c);
    let mut sorts = Vec::with_capacity(c);
    let mut totals = Vec::with_capacity(c);
    for (ch, &step) in steps.iter().enumerate() {
        if ch == cfg.reference_channel {
            shifts.push(Permutation::identity(n));
            sorts.push(Permutation::identity(n));
            totals.push(Permutation::identity(n));
            continue;
        }
        let shift = shift_permutation(n, step);
        let shifted = shift.apply(&v.column(ch));
        let sort = group_sort_permutation(&reference, &shifted, cfg.groups)?;
        totals.push(compose(&sort, &shift)?);
        shifts.push(shift);
        sorts.push(sort);
    }
    Ok(CspTrace {
        shifts,
        sorts,
        totals,
        reference_channel: cfg.reference_channel,
    })
}

/// Forward pass: returns `||_c P_c v_c` and the permutations used.
pub fn csp_forward(x: &Matrix, cfg: &CspConfig) -> Result<(Matrix, CspTrace)> {
    let v = project(x, cfg)?;
    let trace = plan(&v, cfg)?;
    let out = trace.apply(&v)?;
    Ok((out, trace))
}

/// Dense `N x N` attention map of every channel.
pub fn extract_attention_maps(trace: &CspTrace) -> Vec<Matrix> {
    trace.totals.iter().map(Permutation::to_dense).collect()
}

/// Shift-only heads: channel `c` (0-based) is shifted by `c mod N`.
pub fn shift_only_heads(v: &Matrix) -> Matrix {
    let n = v.rows();
    let mut out = Matrix::zeros(n, v.cols());
    for c in 0..v.cols() {
        out.set_column(c, &shift_permutation(n, c).apply(&v.column(c)));
    }
    out
}

/// Relative permutation `P_c^T P_c'` between two channels.
pub fn cross_channel_interaction(trace: &CspTrace, c: usize, c_prime: usize) -> Result<Permutation> {
    let len = trace.channels();
    for idx in [c, c_prime] {
        if idx >= len {
            return Err(Error::IndexOutOfRange { index: idx, len });
        }
    }
    compose(&trace.totals[c].inverse(), &trace.totals[c_prime])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::singular_spectrum;
    use crate::rng::{seeded, tie_free_matrix};

    #[test]
    fn identical_columns_pass_through() {
        let col = [0.3, -1.2, 2.2, 0.9, 1.5, -0.4];
        let x = Matrix::from_columns(&[col, col, col]).unwrap();
        for k in [1, 2, 3, 6] {
            let cfg = CspConfig::new(3, k, ShiftSchedule::Explicit(vec![0, 0, 0]));
            let (out, _) = csp_forward(&x, &cfg).unwrap();
            assert_eq!(out, x);
        }
    }

    #[test]
    fn worked_example() {
        let x = Matrix::from_columns(&[[3.0, 1.0, 2.0, 0.0], [4.0, 8.0, 6.0, 5.0]]).unwrap();
        let cfg = CspConfig::new(2, 2, ShiftSchedule::Explicit(vec![0, 1]));
        let (out, trace) = csp_forward(&x, &cfg).unwrap();
        assert_eq!(out.column(0), vec![3.0, 1.0, 2.0, 0.0]);
        assert_eq!(out.column(1), vec![5.0, 4.0, 8.0, 6.0]);
        let dense = trace.totals[1].to_dense().apply(&x.column(1)).unwrap();
        assert_eq!(dense, out.column(1));
    }

    #[test]
    fn output_matches_dense_maps() {
        let mut rng = seeded(5);
        let x = tie_free_matrix(&mut rng, 12, 5);
        let cfg = CspConfig::new(5, 3, ShiftSchedule::Linear);
        let (out, trace) = csp_forward(&x, &cfg).unwrap();
        for (c, map) in extract_attention_maps(&trace).iter().enumerate() {
            assert_eq!(map.apply(&x.column(c)).unwrap(), out.column(c));
        }
    }

    #[test]
    fn reference_map_is_identity_and_maps_are_orthogonal() {
        let mut rng = seeded(6);
        let x = tie_free_matrix(&mut rng, 8, 4);
        let (_, trace) = csp_forward(&x, &CspConfig::new(4, 2, ShiftSchedule::Linear)).unwrap();
        let maps = extract_attention_maps(&trace);
        assert_eq!(maps[0], Matrix::identity(8));
        for m in &maps {
            for s in singular_spectrum(m).unwrap().singular_values {
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singleton_groups_give_pure_shifts() {
        let mut rng = seeded(8);
        let x = tie_free_matrix(&mut rng, 6, 3);
        let cfg = CspConfig::new(3, 6, ShiftSchedule::Explicit(vec![0, 2, 5]));
        let (_, trace) = csp_forward(&x, &cfg).unwrap();
        assert_eq!(trace.totals[1], shift_permutation(6, 2));
        assert_eq!(trace.totals[2], shift_permutation(6, 5));
    }

    #[test]
    fn shift_only_examples() {
        let v = Matrix::from_columns(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(shift_only_heads(&v), v);

        let col = [1.0, 2.0, 3.0];
        let v = Matrix::from_columns(&[col, col, col]).unwrap();
        let expected = Matrix::from_columns(&[[1.0, 2.0, 3.0], [3.0, 1.0, 2.0], [2.0, 3.0, 1.0]]).unwrap();
        assert_eq!(shift_only_heads(&v), expected);

        let v = Matrix::from_columns(&[[1.0, 2.0]; 4]).unwrap();
        let out = shift_only_heads(&v);
        assert_eq!(out.column(0), vec![1.0, 2.0]);
        assert_eq!(out.column(1), vec![2.0, 1.0]);
        assert_eq!(out.column(2), vec![1.0, 2.0]);
        assert_eq!(out.column(3), vec![2.0, 1.0]);
    }

    #[test]
    fn cross_channel_examples() {
        let mut rng = seeded(9);
        let x = tie_free_matrix(&mut rng, 8, 4);
        let (_, trace) = csp_forward(&x, &CspConfig::new(4, 2, ShiftSchedule::Linear)).unwrap();
        assert!(cross_channel_interaction(&trace, 2, 2).unwrap().is_identity());
        assert_eq!(cross_channel_interaction(&trace, 0, 3).unwrap(), trace.totals[3]);
        let rel = cross_channel_interaction(&trace, 1, 3).unwrap().to_dense();
        let oracle = trace.totals[1]
            .to_dense()
            .transpose()
            .matmul(&trace.totals[3].to_dense())
            .unwrap();
        assert_eq!(rel, oracle);
        assert!(matches!(
            cross_channel_interaction(&trace, 4, 0),
            Err(Error::IndexOutOfRange { index: 4, len: 4 })
        ));
    }

    #[test]
    fn config_errors() {
        let x = Matrix::zeros(6, 2);
        assert!(matches!(
            csp_forward(&x, &CspConfig::new(2, 4, ShiftSchedule::Linear)),
            Err(Error::IndivisibleGroups { len: 6, groups: 4 })
        ));
        let mut cfg = CspConfig::new(2, 1, ShiftSchedule::Linear);
        cfg.reference_channel = 2;
        assert!(csp_forward(&x, &cfg).is_err());
        let cfg = CspConfig::new(2, 1, ShiftSchedule::Linear).with_projection(Matrix::identity(3));
        assert!(csp_forward(&x, &cfg).is_err());
        assert!(csp_forward(&Matrix::zeros(6, 3), &CspConfig::new(2, 1, ShiftSchedule::Linear)).is_err());
    }

    #[test]
    fn nonzero_reference_channel() {
        let mut rng = seeded(10);
        let x = tie_free_matrix(&mut rng, 6, 3);
        let mut cfg = CspConfig::new(3, 1, ShiftSchedule::Linear);
        cfg.reference_channel = 2;
        let (out, trace) = csp_forward(&x, &cfg).unwrap();
        assert!(trace.totals[2].is_identity());
        assert_eq!(out.column(2), x.column(2));
    }
}

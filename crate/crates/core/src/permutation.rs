//! Permutations stored as gather maps.
//!
//! A [`Permutation`] with map `m` sends a vector `v` to `out[i] = v[m[i]]`.
//! Its dense form has a single 1 at `(i, m[i])` in row `i`, so the dense
//! matrix times `v` agrees with [`Permutation::apply`].

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { map: (0..n).collect() }
    }

    /// Validates that `map` is a bijection on `0..map.len()`.
    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let n = map.len();
        let mut seen = vec![false; n];
        for &m in &map {
            if m >= n {
                return Err(Error::NotAPermutation(format!("index {m} >= length {n}")));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::NotAPermutation(format!("index {m} repeated")));
            }
        }
        Ok(Self { map })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.map.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    #[inline]
    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// `out[i] = v[map[i]]`.
    pub fn apply<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.map.len(), "permutation length mismatch");
        self.map.iter().map(|&m| v[m]).collect()
    }

    pub fn try_apply<T: Copy>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.map.len() {
            return Err(Error::LengthMismatch {
                op: "apply",
                left: self.map.len(),
                right: v.len(),
            });
        }
        Ok(self.apply(v))
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (i, &m) in self.map.iter().enumerate() {
            inv[m] = i;
        }
        Self { map: inv }
    }

    /// N x N 0/1 matrix `P` with `P v == self.apply(v)`.
    pub fn to_dense(&self) -> Matrix {
        let n = self.map.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.map.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

/// Circular shift by `j`: the element at input position `p` lands at
/// output position `(p + j) mod n`.
pub fn shift_permutation(n: usize, j: usize) -> Permutation {
    assert!(n >= 1, "shift of an empty sequence");
    let j = j % n;
    Permutation {
        map: (0..n).map(|i| (i + n - j) % n).collect(),
    }
}

/// Permutation that applies `inner` first and then `outer`.
pub fn compose(outer: &Permutation, inner: &Permutation) -> Result<Permutation> {
    if outer.len() != inner.len() {
        return Err(Error::LengthMismatch {
            op: "compose",
            left: outer.len(),
            right: inner.len(),
        });
    }
    Ok(Permutation {
        map: outer.map.iter().map(|&o| inner.map[o]).collect(),
    })
}

/// Indices that sort `v` ascending, ties kept in index order.
pub fn argsort_stable(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| cmp_values(v[a], v[b]));
    idx
}

#[inline]
fn cmp_values(a: f64, b: f64) -> Ordering {
    // total_cmp distinguishes -0.0 from 0.0; raw comparison is what callers expect.
    a.partial_cmp(&b).unwrap_or_else(|| a.total_cmp(&b))
}

/// Monotone rearrangement of `values` onto `reference`: the r-th smallest
/// value goes where `reference` holds its r-th smallest entry.
pub fn reference_sort_permutation(reference: &[f64], values: &[f64]) -> Result<Permutation> {
    if reference.len() != values.len() {
        return Err(Error::LengthMismatch {
            op: "reference_sort_permutation",
            left: reference.len(),
            right: values.len(),
        });
    }
    let mut map = vec![0; reference.len()];
    fill_group(reference, values, 0, &mut map);
    Ok(Permutation { map })
}

/// Writes the within-group monotone matching into `map[offset..offset+len]`.
fn fill_group(reference: &[f64], values: &[f64], offset: usize, map: &mut [usize]) {
    let by_ref = argsort_stable(reference);
    let by_val = argsort_stable(values);
    for (r, v) in by_ref.into_iter().zip(by_val) {
        map[offset + r] = offset + v;
    }
}

/// Size-2 groups via a single comparison per side; agrees with the general
/// stable path including ties.
fn fill_pair(reference: &[f64], values: &[f64], offset: usize, map: &mut [usize]) {
    let ref_swapped = reference[1] < reference[0];
    let val_swapped = values[1] < values[0];
    let (lo, hi) = if val_swapped { (1, 0) } else { (0, 1) };
    let (first, second) = if ref_swapped { (hi, lo) } else { (lo, hi) };
    map[offset] = offset + first;
    map[offset + 1] = offset + second;
}

/// Block-diagonal monotone matching over `groups` contiguous blocks.
pub fn group_sort_permutation(reference: &[f64], values: &[f64], groups: usize) -> Result<Permutation> {
    if reference.len() != values.len() {
        return Err(Error::LengthMismatch {
            op: "group_sort_permutation",
            left: reference.len(),
            right: values.len(),
        });
    }
    let n = reference.len();
    if groups == 0 || !n.is_multiple_of(groups) {
        return Err(Error::IndivisibleGroups { len: n, groups });
    }
    let g = n / groups;
    let mut map = vec![0; n];
    for k in 0..groups {
        let range = k * g..(k + 1) * g;
        let (r, v) = (&reference[range.clone()], &values[range]);
        match g {
            1 => map[k] = k,
            2 => fill_pair(r, v, k * g, &mut map),
            _ => fill_group(r, v, k * g, &mut map),
        }
    }
    Ok(Permutation { map })
}

/// General-path group sort with no size-2 fast path; kept for cross-checks.
pub fn group_sort_permutation_general(reference: &[f64], values: &[f64], groups: usize) -> Result<Permutation> {
    if reference.len() != values.len() {
        return Err(Error::LengthMismatch {
            op: "group_sort_permutation",
            left: reference.len(),
            right: values.len(),
        });
    }
    let n = reference.len();
    if groups == 0 || !n.is_multiple_of(groups) {
        return Err(Error::IndivisibleGroups { len: n, groups });
    }
    let g = n / groups;
    let mut map = vec![0; n];
    for k in 0..groups {
        let range = k * g..(k + 1) * g;
        fill_group(&reference[range.clone()], &values[range], k * g, &mut map);
    }
    Ok(Permutation { map })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in all_permutations(n - 1) {
            for pos in 0..n {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Exhaustive maximizer of sum_i reference[i] * values[map[i]].
    fn brute_force_matching(reference: &[f64], values: &[f64]) -> Vec<f64> {
        let best = all_permutations(reference.len())
            .into_iter()
            .max_by(|a, b| {
                let score =
                    |m: &Vec<usize>| -> f64 { m.iter().enumerate().map(|(i, &j)| reference[i] * values[j]).sum() };
                score(a).total_cmp(&score(b))
            })
            .unwrap();
        best.iter().map(|&j| values[j]).collect()
    }

    #[test]
    fn shift_identity_and_step_one() {
        assert!(shift_permutation(4, 0).is_identity());
        assert_eq!(shift_permutation(4, 1).apply(&[1, 2, 3, 4]), vec![4, 1, 2, 3]);
        assert_eq!(shift_permutation(4, 5), shift_permutation(4, 1));
    }

    #[test]
    fn shift_matches_block_matrix() {
        // top-right I_j, bottom-left I_{n-j}
        let n = 5;
        let j = 2;
        let block = Matrix::from_fn(n, n, |r, c| {
            let top_right = r < j && c == n - j + r;
            let bottom_left = r >= j && c == r - j;
            if top_right || bottom_left {
                1.0
            } else {
                0.0
            }
        });
        assert_eq!(shift_permutation(n, j).to_dense(), block);
    }

    #[test]
    fn shift_three_one_dense() {
        let expected = Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert_eq!(shift_permutation(3, 1).to_dense(), expected);
    }

    #[test]
    fn reference_sort_examples() {
        let p = reference_sort_permutation(&[3.0, 1.0, 2.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(p.apply(&[10.0, 20.0, 30.0]), vec![30.0, 10.0, 20.0]);
        assert_eq!(
            brute_force_matching(&[3.0, 1.0, 2.0], &[10.0, 20.0, 30.0]),
            vec![30.0, 10.0, 20.0]
        );

        let v = [0.5, -1.0, 2.0, 0.1];
        assert!(reference_sort_permutation(&v, &v).unwrap().is_identity());

        let p = reference_sort_permutation(&[0.0, 1.0], &[5.0, 2.0]).unwrap();
        assert_eq!(p.apply(&[5.0, 2.0]), vec![2.0, 5.0]);
    }

    #[test]
    fn reference_sort_length_mismatch() {
        assert!(matches!(
            reference_sort_permutation(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn group_sort_examples() {
        let r = [3.0, 1.0, 2.0, 0.0];
        let v = [4.0, 8.0, 6.0, 5.0];
        assert!(group_sort_permutation(&r, &v, 4).unwrap().is_identity());
        let p = group_sort_permutation(&r, &v, 2).unwrap();
        assert_eq!(p.apply(&v), vec![8.0, 4.0, 6.0, 5.0]);
        let full = group_sort_permutation(&r, &v, 1).unwrap();
        assert_eq!(full, reference_sort_permutation(&r, &v).unwrap());
        assert!(matches!(
            group_sort_permutation(&r, &v, 3),
            Err(Error::IndivisibleGroups { len: 4, groups: 3 })
        ));
    }

    #[test]
    fn pair_fast_path_agrees_with_general_path_on_ties() {
        let cases = [
            ([1.0, 1.0], [2.0, 1.0]),
            ([1.0, 0.0], [3.0, 3.0]),
            ([2.0, 2.0], [5.0, 5.0]),
            ([0.0, 1.0], [1.0, 0.0]),
        ];
        for (r, v) in cases {
            assert_eq!(
                group_sort_permutation(&r, &v, 1).unwrap(),
                group_sort_permutation_general(&r, &v, 1).unwrap()
            );
        }
    }

    #[test]
    fn compose_examples() {
        let p = Permutation::from_map(vec![2, 0, 3, 1]).unwrap();
        assert_eq!(compose(&p, &Permutation::identity(4)).unwrap(), p);
        assert!(compose(&p, &p.inverse()).unwrap().is_identity());
        let c = compose(&shift_permutation(4, 1), &shift_permutation(4, 2)).unwrap();
        assert_eq!(c.apply(&[0, 1, 2, 3]), shift_permutation(4, 3).apply(&[0, 1, 2, 3]));
        assert!(compose(&p, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn from_map_rejects_non_bijection() {
        assert!(Permutation::from_map(vec![0, 0]).is_err());
        assert!(Permutation::from_map(vec![0, 2]).is_err());
    }
}

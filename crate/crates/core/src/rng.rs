//! Seeded random helpers. Everything goes through ChaCha8 so runs are
//! reproducible across platforms for a given seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::Matrix;

pub type LabRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Matrix with i.i.d. `N(0, sigma^2)` entries.
pub fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| sigma * gaussian(rng))
}

/// Gaussian vector with pairwise-distinct entries.
pub fn tie_free_vector(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| gaussian(rng)).collect();
        if has_distinct_entries(&v) {
            return v;
        }
    }
}

/// Gaussian matrix whose every column has pairwise-distinct entries.
pub fn tie_free_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let columns: Vec<Vec<f64>> = (0..cols).map(|_| tie_free_vector(rng, rows)).collect();
    Matrix::from_columns(&columns).expect("columns share a length")
}

pub fn has_distinct_entries(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] != w[1])
}

/// Random permutation of `0..n` as an index vector (Fisher-Yates).
pub fn shuffled_indices(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

//! Exhaustive optimal-transport oracle for small groups.
//!
//! Transport plans between two length-G point clouds are restricted to
//! permutations (the extreme points of the doubly stochastic polytope, where
//! the linear objective attains its optimum). Enumerating all `G!` of them
//! gives an independent check that monotone matching by sorting is the
//! optimal plan for squared Euclidean cost.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::permutation::{reference_sort_permutation, Permutation};

pub const MAX_ENUMERATION: usize = 8;
pub const UNIQUENESS_GAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OtProblem {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    /// `cost[i][j] = (source[i] - target[j])^2`.
    pub cost: Matrix,
}

impl OtProblem {
    pub fn new(source: Vec<f64>, target: Vec<f64>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::LengthMismatch {
                op: "ot problem",
                left: source.len(),
                right: target.len(),
            });
        }
        let g = source.len();
        let cost = Matrix::from_fn(g, g, |i, j| (source[i] - target[j]).powi(2));
        Ok(Self { source, target, cost })
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// `<D, T>` for the permutation plan pairing `source[i]` with `target[map[i]]`.
    pub fn transport_cost(&self, plan: &Permutation) -> f64 {
        plan.map().iter().enumerate().map(|(i, &j)| self.cost[(i, j)]).sum()
    }

    /// `<-source target^T, T>`.
    pub fn correlation_cost(&self, plan: &Permutation) -> f64 {
        plan.map()
            .iter()
            .enumerate()
            .map(|(i, &j)| -self.source[i] * self.target[j])
            .sum()
    }

    /// `sum source^2 + sum target^2`, the plan-independent part of `<D, T>`.
    pub fn constant_term(&self) -> f64 {
        self.source.iter().map(|x| x * x).sum::<f64>() + self.target.iter().map(|x| x * x).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OtSolution {
    pub plan: Permutation,
    pub cost: f64,
    pub unique: bool,
}

/// Visits every permutation of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        visit(&p);
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).expect("pivot exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

fn enumerate_min(problem: &OtProblem, objective: impl Fn(&[usize]) -> f64) -> Result<OtSolution> {
    let g = problem.len();
    if g > MAX_ENUMERATION {
        return Err(Error::EnumerationTooLarge(g));
    }
    let mut best = f64::INFINITY;
    let mut second = f64::INFINITY;
    let mut best_map: Vec<usize> = (0..g).collect();
    for_each_permutation(g, |p| {
        let value = objective(p);
        if value < best {
            second = best;
            best = value;
            best_map.copy_from_slice(p);
        } else if value < second {
            second = value;
        }
    });
    let unique = second - best > UNIQUENESS_GAP * (1.0 + best.abs());
    Ok(OtSolution {
        plan: Permutation::from_map(best_map)?,
        cost: best,
        unique,
    })
}

/// Minimizer of `<D, T>` over all permutation plans.
pub fn brute_force_ot(problem: &OtProblem) -> Result<OtSolution> {
    enumerate_min(problem, |p| {
        p.iter().enumerate().map(|(i, &j)| problem.cost[(i, j)]).sum()
    })
}

/// Minimizer of `<-source target^T, T>` over all permutation plans.
pub fn brute_force_correlation(problem: &OtProblem) -> Result<OtSolution> {
    enumerate_min(problem, |p| {
        p.iter()
            .enumerate()
            .map(|(i, &j)| -problem.source[i] * problem.target[j])
            .sum()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equivalence {
    pub unique: bool,
    pub sorting_plan: Permutation,
    pub sorting_cost: f64,
    pub optimal_cost: f64,
    /// All three plans coincide (meaningful when `unique`).
    pub plans_agree: bool,
    pub holds: bool,
}

/// Three-way check: squared-distance optimum, correlation optimum and the
/// sorting plan. With a unique optimum all three must coincide; otherwise the
/// sorting plan must still attain the optimal cost.
pub fn equivalence_check(problem: &OtProblem) -> Result<Equivalence> {
    let by_cost = brute_force_ot(problem)?;
    let by_corr = brute_force_correlation(problem)?;
    let sorting_plan = reference_sort_permutation(&problem.source, &problem.target)?;
    let sorting_cost = problem.transport_cost(&sorting_plan);
    let plans_agree = by_cost.plan == by_corr.plan && by_cost.plan == sorting_plan;
    let attains = sorting_cost <= by_cost.cost + UNIQUENESS_GAP * (1.0 + by_cost.cost.abs());
    let holds = if by_cost.unique { plans_agree } else { attains };
    Ok(Equivalence {
        unique: by_cost.unique,
        sorting_plan,
        sorting_cost,
        optimal_cost: by_cost.cost,
        plans_agree,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, tie_free_vector};

    #[test]
    fn enumerates_factorial_many() {
        let mut count = 0;
        for_each_permutation(5, |_| count += 1);
        assert_eq!(count, 120);
        let mut seen = std::collections::HashSet::new();
        for_each_permutation(4, |p| {
            seen.insert(p.to_vec());
        });
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn single_point() {
        let p = OtProblem::new(vec![1.5], vec![-0.5]).unwrap();
        let s = brute_force_ot(&p).unwrap();
        assert!(s.plan.is_identity());
        assert_eq!(s.cost, 4.0);
    }

    #[test]
    fn two_point_swap() {
        let p = OtProblem::new(vec![0.0, 1.0], vec![5.0, 2.0]).unwrap();
        let s = brute_force_ot(&p).unwrap();
        assert_eq!(s.plan.map(), &[1, 0]);
        assert_eq!(s.cost, 20.0);
        assert_eq!(p.transport_cost(&Permutation::identity(2)), 26.0);
        assert!(s.unique);
    }

    #[test]
    fn duplicate_sources_are_not_unique() {
        let p = OtProblem::new(vec![1.0, 1.0, 3.0], vec![0.5, 2.0, 4.0]).unwrap();
        assert!(!brute_force_ot(&p).unwrap().unique);
        assert!(equivalence_check(&p).unwrap().holds);
    }

    #[test]
    fn random_instance_agrees() {
        let mut rng = seeded(23);
        let p = OtProblem::new(tie_free_vector(&mut rng, 5), tie_free_vector(&mut rng, 5)).unwrap();
        let e = equivalence_check(&p).unwrap();
        assert!(e.unique && e.plans_agree && e.holds);
    }

    #[test]
    fn monotone_vectors_give_identity() {
        let p = OtProblem::new(vec![-1.0, 0.0, 2.0, 3.0], vec![0.1, 0.2, 0.9, 5.0]).unwrap();
        let e = equivalence_check(&p).unwrap();
        assert!(e.sorting_plan.is_identity() && e.plans_agree);
    }

    #[test]
    fn constant_decomposition() {
        let mut rng = seeded(24);
        let p = OtProblem::new(tie_free_vector(&mut rng, 4), tie_free_vector(&mut rng, 4)).unwrap();
        for_each_permutation(4, |m| {
            let plan = Permutation::from_map(m.to_vec()).unwrap();
            let lhs = p.transport_cost(&plan);
            let rhs = p.constant_term() + 2.0 * p.correlation_cost(&plan);
            assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        });
    }

    #[test]
    fn too_large_for_enumeration() {
        let p = OtProblem::new(vec![0.0; 9], vec![0.0; 9]).unwrap();
        assert_eq!(brute_force_ot(&p), Err(Error::EnumerationTooLarge(9)));
    }
}

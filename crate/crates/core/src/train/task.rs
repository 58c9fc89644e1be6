//! Synthetic sequence-classification tasks.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::shuffled_indices;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Label is the token that fills more than half the sequence.
    MajorityToken,
    /// Binary: is the sequence nondecreasing?
    SortedOrNot,
    /// Binary: do the first and last tokens match?
    LongRangeMatch,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::MajorityToken => "majority_token",
            TaskKind::SortedOrNot => "sorted_or_not",
            TaskKind::LongRangeMatch => "long_range_match",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "majority_token" | "MajorityToken" => Some(TaskKind::MajorityToken),
            "sorted_or_not" | "SortedOrNot" => Some(TaskKind::SortedOrNot),
            "long_range_match" | "LongRangeMatch" => Some(TaskKind::LongRangeMatch),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub seq_len: usize,
    pub vocab: usize,
    pub generator_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub tokens: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl SyntheticTask {
    pub fn new(kind: TaskKind, seq_len: usize, vocab: usize, generator_seed: u64) -> Result<Self> {
        let task = Self {
            kind,
            seq_len,
            vocab,
            generator_seed,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return Err(Error::InvalidConfig(format!("vocabulary of {} tokens", self.vocab)));
        }
        if self.seq_len < 2 {
            return Err(Error::InvalidConfig(format!("sequence length {}", self.seq_len)));
        }
        Ok(())
    }

    pub fn label_count(&self) -> usize {
        match self.kind {
            TaskKind::MajorityToken => self.vocab,
            TaskKind::SortedOrNot | TaskKind::LongRangeMatch => 2,
        }
    }

    /// A batch whose labels are as balanced as the size allows (class counts
    /// differ by at most one) and appear in random order.
    pub fn batch(&self, rng: &mut impl Rng, size: usize) -> Batch {
        let classes = self.label_count();
        let order = shuffled_indices(rng, size);
        let labels: Vec<usize> = order.iter().map(|&i| i % classes).collect();
        let tokens = labels.iter().map(|&y| self.sequence(rng, y)).collect();
        Batch { tokens, labels }
    }

    fn sequence(&self, rng: &mut impl Rng, label: usize) -> Vec<usize> {
        let n = self.seq_len;
        let v = self.vocab;
        match self.kind {
            TaskKind::MajorityToken => {
                let count = rng.random_range(n / 2 + 1..=n);
                let mut seq: Vec<usize> = (0..n)
                    .map(|_| {
                        let t = rng.random_range(0..v - 1);
                        if t >= label {
                            t + 1
                        } else {
                            t
                        }
                    })
                    .collect();
                for &pos in shuffled_indices(rng, n).iter().take(count) {
                    seq[pos] = label;
                }
                seq
            }
            TaskKind::SortedOrNot => {
                let mut seq: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
                seq.sort_unstable();
                if label == 0 {
                    if seq[0] == seq[n - 1] {
                        // constant run: bump one element so a swap breaks order
                        let i = rng.random_range(0..n);
                        seq[i] = if seq[i] + 1 < v { seq[i] + 1 } else { seq[i] - 1 };
                        seq.sort_unstable();
                    }
                    let unequal: Vec<usize> = (0..n - 1).filter(|&i| seq[i] != seq[i + 1]).collect();
                    let i = unequal[rng.random_range(0..unequal.len())];
                    seq.swap(i, i + 1);
                }
                seq
            }
            TaskKind::LongRangeMatch => {
                let mut seq: Vec<usize> = (0..n).map(|_| rng.random_range(0..v)).collect();
                if label == 1 {
                    seq[n - 1] = seq[0];
                } else {
                    let t = rng.random_range(0..v - 1);
                    seq[n - 1] = if t >= seq[0] { t + 1 } else { t };
                }
                seq
            }
        }
    }

    /// Ground-truth label of a sequence, independent of the generator.
    pub fn label_of(&self, seq: &[usize]) -> usize {
        match self.kind {
            TaskKind::MajorityToken => {
                let mut counts = vec![0usize; self.vocab];
                for &t in seq {
                    counts[t] += 1;
                }
                (0..self.vocab).max_by_key(|&t| counts[t]).unwrap_or(0)
            }
            TaskKind::SortedOrNot => usize::from(seq.windows(2).all(|w| w[0] <= w[1])),
            TaskKind::LongRangeMatch => usize::from(seq.first() == seq.last()),
        }
    }
}

//! Per-channel circular-shift steps.
//!
//! * `Linear`: channel `c` (0-based) shifts by `c * ceil(N / C)`.
//! * `PowerLaw`: all `L * C` channels of an `L`-layer stack share one base
//!   `J = floor(N^(1 / (L C - 1)))`; global channel `g = layer * C + c` shifts
//!   by `J^g - 1`. Layer `l` owns the contiguous global block `[l C, (l + 1) C)`.
//! * `Explicit`: caller-provided steps.
//!
//! Steps are reduced modulo `N`, and channel 0 (the reference) is always 0.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShiftSchedule {
    Linear,
    PowerLaw { layer: usize, layers: usize },
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResolvedSchedule {
    pub steps: Vec<usize>,
    /// Power-law base `J`, when applicable.
    pub base: Option<u64>,
    /// Set when a power-law base collapses to 1 and every step is zero.
    pub degenerate: bool,
}

impl ShiftSchedule {
    pub fn power_law(layers: usize) -> Self {
        ShiftSchedule::PowerLaw { layer: 0, layers }
    }

    /// The same schedule positioned at another layer of a stack.
    pub fn at_layer(&self, layer: usize) -> Self {
        match self {
            ShiftSchedule::PowerLaw { layers, .. } => ShiftSchedule::PowerLaw { layer, layers: *layers },
            other => other.clone(),
        }
    }

    pub fn resolve(&self, n: usize, channels: usize) -> Result<ResolvedSchedule> {
        assert!(n >= 1, "schedule for an empty sequence");
        match self {
            ShiftSchedule::Linear => {
                let stride = n.div_ceil(channels.max(1));
                let steps = (0..channels).map(|c| (c * stride) % n).collect();
                Ok(ResolvedSchedule {
                    steps,
                    base: None,
                    degenerate: false,
                })
            }
            ShiftSchedule::PowerLaw { layer, layers } => {
                let global = layers * channels;
                if global < 2 {
                    return Err(Error::DegeneratePowerLaw(global));
                }
                if *layer >= *layers {
                    return Err(Error::InvalidConfig(format!(
                        "power-law layer {layer} outside a {layers}-layer stack"
                    )));
                }
                let base = integer_root(n as u64, (global - 1) as u32);
                let mut steps: Vec<usize> = (0..channels)
                    .map(|c| power_step(base, (layer * channels + c) as u64, n as u64) as usize)
                    .collect();
                steps[0] = 0;
                Ok(ResolvedSchedule {
                    steps,
                    base: Some(base),
                    degenerate: base <= 1,
                })
            }
            ShiftSchedule::Explicit(steps) => {
                if steps.len() != channels {
                    return Err(Error::ScheduleLength {
                        channels,
                        got: steps.len(),
                    });
                }
                let mut steps: Vec<usize> = steps.iter().map(|s| s % n).collect();
                if let Some(first) = steps.first_mut() {
                    *first = 0;
                }
                Ok(ResolvedSchedule {
                    steps,
                    base: None,
                    degenerate: false,
                })
            }
        }
    }
}

/// `floor(n^(1/k))` computed exactly in integers.
pub fn integer_root(n: u64, k: u32) -> u64 {
    if k == 0 || n <= 1 {
        return n.max(1);
    }
    if k == 1 {
        return n;
    }
    let mut r = (n as f64).powf(1.0 / k as f64).round() as u64;
    let fits = |r: u64| r.checked_pow(k).is_some_and(|p| p <= n);
    while r > 1 && !fits(r) {
        r -= 1;
    }
    while fits(r + 1) {
        r += 1;
    }
    r.max(1)
}

/// `(base^exp - 1) mod n` without overflow.
fn power_step(base: u64, exp: u64, n: u64) -> u64 {
    let modulus = n as u128;
    let mut result: u128 = 1 % modulus;
    let mut b = base as u128 % modulus;
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            result = result * b % modulus;
        }
        b = b * b % modulus;
        e >>= 1;
    }
    ((result + modulus - 1 % modulus) % modulus) as u64
}

//! Wall-clock scaling of CSP and softmax attention forward passes.
//!
//! Each point runs `warmup` untimed passes, then `repetitions` timed samples
//! on the monotonic clock and reports the median. A sample repeats the pass
//! enough times to last at least `min_sample`, so fast small-N points stay
//! well above the timer's resolution.

use std::hint::black_box;
use std::time::{Duration, Instant};

use csp_core::attention::softmax_attention;
use csp_core::csp::{csp_forward, CspConfig};
use csp_core::numerics::Matrix;
use csp_core::rng::{seeded, tie_free_matrix};
use csp_core::schedule::ShiftSchedule;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Csp,
    Softmax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Csp => "csp",
            Method::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.trim() {
            "csp" => Some(Method::Csp),
            "softmax" => Some(Method::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub channels: usize,
    pub groups: usize,
    pub warmup: usize,
    pub repetitions: usize,
    pub min_sample: Duration,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![256, 512, 1024, 2048, 4096, 8192],
            channels: 8,
            groups: 1,
            warmup: 3,
            repetitions: 7,
            min_sample: Duration::from_millis(2),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub method: Method,
    pub n: usize,
    /// Median seconds per forward pass.
    pub seconds: f64,
    pub inner_iterations: usize,
}

/// Smallest observable step of the monotonic clock.
pub fn timer_resolution() -> Duration {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best
}

const MAX_INNER: usize = 1 << 20;

fn time_point(mut pass: impl FnMut(), cfg: &BenchConfig, resolution: Duration) -> Result<(f64, usize), CliError> {
    for _ in 0..cfg.warmup {
        pass();
    }
    // Calibrate the inner loop so one sample lasts at least min_sample.
    let mut inner = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..inner {
            pass();
        }
        let elapsed = start.elapsed();
        if elapsed >= cfg.min_sample {
            break;
        }
        if inner >= MAX_INNER {
            return Err(CliError::TimerResolution(format!(
                "{inner} passes took {elapsed:?}; use larger N"
            )));
        }
        inner = if elapsed.is_zero() { inner * 16 } else { inner * 2 };
    }
    if cfg.min_sample < resolution * 100 {
        return Err(CliError::TimerResolution(format!(
            "clock step {resolution:?} is too coarse for {:?} samples; use larger N",
            cfg.min_sample
        )));
    }
    let mut samples: Vec<f64> = (0..cfg.repetitions.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                pass();
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    Ok((samples[samples.len() / 2], inner))
}

pub fn run_bench(methods: &[Method], cfg: &BenchConfig) -> Result<Vec<Timing>, CliError> {
    let resolution = timer_resolution();
    let mut out = Vec::new();
    for &method in methods {
        for &n in &cfg.sizes {
            let mut rng = seeded(cfg.seed.wrapping_add(n as u64));
            let x: Matrix = tie_free_matrix(&mut rng, n, cfg.channels);
            let (seconds, inner) = match method {
                Method::Csp => {
                    let csp = CspConfig::new(cfg.channels, cfg.groups, ShiftSchedule::Linear);
                    csp.validate(n)?;
                    time_point(
                        || {
                            black_box(csp_forward(black_box(&x), &csp).expect("validated config"));
                        },
                        cfg,
                        resolution,
                    )?
                }
                Method::Softmax => time_point(
                    || {
                        black_box(softmax_attention(black_box(&x), &x, &x).expect("square inputs"));
                    },
                    cfg,
                    resolution,
                )?,
            };
            out.push(Timing {
                method,
                n,
                seconds,
                inner_iterations: inner,
            });
        }
    }
    Ok(out)
}

/// Least-squares slope of `ln t` against `ln n`; `None` with fewer than two
/// distinct sizes.
pub fn log_log_slope(points: &[(usize, f64)]) -> Option<f64> {
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if xs.len() < 2 || sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

pub fn slope_of(timings: &[Timing], method: Method) -> Option<f64> {
    let pts: Vec<(usize, f64)> = timings
        .iter()
        .filter(|t| t.method == method)
        .map(|t| (t.n, t.seconds))
        .collect();
    log_log_slope(&pts)
}

//! Deep attention-only stacks (no skip connections, no normalization) and
//! their rank-1 residual decay.
//!
//! For a CSP stack with projections `W_l` and `lambda`-Lipschitz pointwise
//! maps, the residual after `l` layers is bounded by
//! `C^(l/2) (lambda beta)^l ||eps(X)||_(1,inf)` with `beta = max_l ||W_l||_1`.
//! Softmax stacks carry no such bound and collapse toward rank one.

use rand::Rng;

use crate::attention::{multi_head_attention, AttentionParams};
use crate::csp::{csp_forward, CspConfig};
use crate::error::{Error, Result};
use crate::numerics::{residual, singular_spectrum, Matrix, Spectrum};
use crate::rng::{gaussian_matrix, seeded, shuffled_indices};
use crate::schedule::ShiftSchedule;

/// Row-wise pointwise map applied after every layer. Both are 1-Lipschitz.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Identity,
    Relu,
}

impl Pointwise {
    pub fn lipschitz(self) -> f64 {
        1.0
    }

    pub fn apply(self, x: &Matrix) -> Matrix {
        match self {
            Pointwise::Identity => x.clone(),
            Pointwise::Relu => x.map(|v| v.max(0.0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StackLayers {
    Csp { weights: Vec<Matrix>, config: CspConfig },
    Mha { params: Vec<AttentionParams> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub layers: StackLayers,
    pub pointwise: Pointwise,
    pub seed: u64,
}

impl StackSpec {
    pub fn depth(&self) -> usize {
        match &self.layers {
            StackLayers::Csp { weights, .. } => weights.len(),
            StackLayers::Mha { params } => params.len(),
        }
    }

    pub fn is_csp(&self) -> bool {
        matches!(self.layers, StackLayers::Csp { .. })
    }

    /// `beta = max_l ||W_l||_1` for CSP stacks.
    pub fn beta(&self) -> Option<f64> {
        match &self.layers {
            StackLayers::Csp { weights, .. } => Some(weights.iter().map(Matrix::norm1).fold(0.0, f64::max)),
            StackLayers::Mha { .. } => None,
        }
    }

    /// CSP stack with i.i.d. Gaussian projections of standard deviation `sigma`.
    pub fn random_csp(
        channels: usize,
        depth: usize,
        sigma: f64,
        config: CspConfig,
        pointwise: Pointwise,
        seed: u64,
    ) -> Self {
        let mut rng = seeded(seed);
        let weights = (0..depth)
            .map(|_| gaussian_matrix(&mut rng, channels, channels, sigma))
            .collect();
        Self {
            layers: StackLayers::Csp { weights, config },
            pointwise,
            seed,
        }
    }

    /// CSP stack whose projections are random signed permutation matrices
    /// (orthogonal, unit 1-norm).
    pub fn signed_permutation_csp(
        channels: usize,
        depth: usize,
        config: CspConfig,
        pointwise: Pointwise,
        seed: u64,
    ) -> Self {
        let mut rng = seeded(seed);
        let weights = (0..depth).map(|_| signed_permutation(&mut rng, channels)).collect();
        Self {
            layers: StackLayers::Csp { weights, config },
            pointwise,
            seed,
        }
    }

    /// Softmax multi-head stack with Gaussian projections.
    pub fn random_mha(
        channels: usize,
        heads: usize,
        depth: usize,
        sigma: f64,
        pointwise: Pointwise,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded(seed);
        let params = (0..depth)
            .map(|_| AttentionParams::random(&mut rng, channels, heads, sigma))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: StackLayers::Mha { params },
            pointwise,
            seed,
        })
    }
}

pub fn signed_permutation(rng: &mut impl Rng, n: usize) -> Matrix {
    let idx = shuffled_indices(rng, n);
    let mut w = Matrix::zeros(n, n);
    for (i, &j) in idx.iter().enumerate() {
        w[(i, j)] = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    }
    w
}

#[derive(Debug, Clone)]
pub struct DecayCurve {
    /// `||eps||_(1,inf)` after each layer; index 0 is the input.
    pub residual_norms: Vec<f64>,
    /// Residual bound `(sqrt(C) lambda beta)^l * residual(X)` per layer (CSP stacks only).
    pub bounds: Option<Vec<f64>>,
    pub spectra: Option<Vec<Spectrum>>,
    pub beta: Option<f64>,
    pub lambda: f64,
    pub output: Matrix,
}

impl DecayCurve {
    pub fn final_residual(&self) -> f64 {
        *self.residual_norms.last().expect("curve has the input point")
    }

    /// Every recorded point lies under its bound (with relative slack).
    pub fn within_bounds(&self, slack: f64) -> bool {
        match &self.bounds {
            Some(b) => self
                .residual_norms
                .iter()
                .zip(b)
                .all(|(&r, &bound)| r <= bound * (1.0 + slack)),
            None => true,
        }
    }
}

fn apply_layer(x: &Matrix, spec: &StackSpec, layer: usize) -> Result<Matrix> {
    let y = match &spec.layers {
        StackLayers::Csp { weights, config } => {
            let mut cfg = config.clone();
            cfg.schedule = config.schedule.at_layer(layer);
            cfg.projection = Some(weights[layer].clone());
            csp_forward(x, &cfg)?.0
        }
        StackLayers::Mha { params } => multi_head_attention(x, &params[layer])?,
    };
    Ok(spec.pointwise.apply(&y))
}

fn run(x: &Matrix, spec: &StackSpec, with_spectra: bool) -> Result<DecayCurve> {
    let depth = spec.depth();
    let mut residual_norms = Vec::with_capacity(depth + 1);
    let mut spectra = with_spectra.then(Vec::new);
    let mut h = x.clone();
    residual_norms.push(residual(&h).norm_1_inf);
    if let Some(s) = spectra.as_mut() {
        s.push(singular_spectrum(&h)?);
    }
    for layer in 0..depth {
        h = apply_layer(&h, spec, layer)?;
        if !h.is_finite() {
            return Err(Error::NonFinite { layer: layer + 1 });
        }
        residual_norms.push(residual(&h).norm_1_inf);
        if let Some(s) = spectra.as_mut() {
            s.push(singular_spectrum(&h)?);
        }
    }
    let lambda = spec.pointwise.lipschitz();
    let beta = spec.beta();
    let bounds = beta.map(|beta| {
        let c = x.cols() as f64;
        let per_layer = c.sqrt() * lambda * beta;
        (0..=depth)
            .map(|l| per_layer.powi(l as i32) * residual_norms[0])
            .collect()
    });
    Ok(DecayCurve {
        residual_norms,
        bounds,
        spectra,
        beta,
        lambda,
        output: h,
    })
}

/// Applies the stack and records the residual after every layer.
pub fn run_stack(x: &Matrix, spec: &StackSpec) -> Result<DecayCurve> {
    run(x, spec, false)
}

/// As [`run_stack`], also recording the singular spectrum after every layer.
pub fn run_stack_with_spectra(x: &Matrix, spec: &StackSpec) -> Result<DecayCurve> {
    run(x, spec, true)
}

/// Both sides of the single-layer inequalities for the 1-norm, the inf-norm
/// and their geometric mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleLayerCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_norm1: f64,
    pub rhs_norm1: f64,
    pub lhs_norm_inf: f64,
    pub rhs_norm_inf: f64,
}

pub const BOUND_SLACK: f64 = 1e-9;

impl SingleLayerCheck {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs * (1.0 + BOUND_SLACK)
    }

    pub fn norm1_chain_holds(&self) -> bool {
        self.lhs_norm1 <= self.rhs_norm1 * (1.0 + BOUND_SLACK)
    }

    pub fn norm_inf_chain_holds(&self) -> bool {
        self.lhs_norm_inf <= self.rhs_norm_inf * (1.0 + BOUND_SLACK)
    }
}

/// Evaluates `||eps(f(CSP_W(X)))||_(1,inf) <= sqrt(C) ||W||_1 ||eps(X)||_(1,inf)`
/// together with the 1-norm and inf-norm chains it is assembled from.
pub fn verify_single_layer_bound(
    x: &Matrix,
    w: &Matrix,
    cfg: &CspConfig,
    pointwise: Pointwise,
) -> Result<SingleLayerCheck> {
    let cfg = cfg.clone().with_projection(w.clone());
    let (y, _) = csp_forward(x, &cfg)?;
    let after = residual(&pointwise.apply(&y));
    let before = residual(x);
    let c = x.cols() as f64;
    let scale = pointwise.lipschitz() * w.norm1();
    Ok(SingleLayerCheck {
        lhs: after.norm_1_inf,
        rhs: c.sqrt() * scale * before.norm_1_inf,
        lhs_norm1: after.norm1,
        rhs_norm1: scale * before.norm1,
        lhs_norm_inf: after.norm_inf,
        rhs_norm_inf: c * scale * before.norm_inf,
    })
}

#[derive(Debug, Clone)]
pub struct SpectrumReport {
    pub csp: DecayCurve,
    pub mha: DecayCurve,
}

/// Runs a CSP stack and a softmax stack on the same input, recording
/// per-layer spectra for both.
pub fn spectrum_decay_report(x: &Matrix, csp_spec: &StackSpec, mha_spec: &StackSpec) -> Result<SpectrumReport> {
    Ok(SpectrumReport {
        csp: run_stack_with_spectra(x, csp_spec)?,
        mha: run_stack_with_spectra(x, mha_spec)?,
    })
}

/// Convenience CSP config for stacks: linear schedule unless a power law is
/// requested, reference channel 0, projection supplied per layer.
pub fn stack_config(channels: usize, groups: usize, schedule: ShiftSchedule) -> CspConfig {
    CspConfig::new(channels, groups, schedule)
}

//! Regularized logistic risk: per-sample loss and gradient, local and
//! aggregate risk gradients, the minimizer oracle and convexity constants.
//!
//! The per-sample loss is `ln(1 + exp(-γ hᵀw)) + ρ‖w‖²`, so the sample average
//! over a dataset reproduces the local risk including its regularizer.

use crate::error::{Error, Result};
use crate::rng::IndexSet;
use crate::vector::{self, ModelVector};

/// Regularization weight used when none is configured.
pub const DEFAULT_RHO: f64 = 0.9;
pub const DEFAULT_MINIMIZER_TOL: f64 = 1e-10;
pub const DEFAULT_MINIMIZER_MAX_ITER: usize = 1_000_000;

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic sigmoid `1 / (1 + e^{-z})` without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One labelled feature vector. The label is exactly `-1` or `+1`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    feature: ModelVector,
    label: f64,
}

impl Sample {
    pub fn new(feature: ModelVector, label: f64) -> Result<Self> {
        if label != 1.0 && label != -1.0 {
            return Err(Error::invalid(format!("label must be ±1, got {label}")));
        }
        if !feature.is_finite() {
            return Err(Error::invalid("feature has non-finite entries"));
        }
        Ok(Self { feature, label })
    }

    pub fn feature(&self) -> &ModelVector {
        &self.feature
    }

    pub fn label(&self) -> f64 {
        self.label
    }
}

/// The `N_k` samples held by agent `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDataset {
    agent: usize,
    samples: Vec<Sample>,
}

impl LocalDataset {
    pub fn new(agent: usize, samples: Vec<Sample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::invalid(format!("dataset for agent {agent} is empty")))?;
        let dim = first.feature.dim();
        if samples.iter().any(|s| s.feature.dim() != dim) {
            return Err(Error::invalid(format!(
                "dataset for agent {agent} mixes feature dimensions"
            )));
        }
        Ok(Self { agent, samples })
    }

    pub fn agent(&self) -> usize {
        self.agent
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].feature.dim()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParams {
    pub rho: f64,
}

impl LossParams {
    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!(
                "regularization weight must be positive, got {rho}"
            )));
        }
        Ok(Self { rho })
    }
}

impl Default for LossParams {
    fn default() -> Self {
        Self { rho: DEFAULT_RHO }
    }
}

/// Strong-convexity modulus `nu` and gradient-Lipschitz constant `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityConstants {
    pub nu: f64,
    pub delta: f64,
}

fn check_dim(w: &ModelVector, dim: usize) -> Result<()> {
    if w.dim() != dim {
        return Err(Error::invalid(format!(
            "model has dimension {}, data has dimension {dim}",
            w.dim()
        )));
    }
    Ok(())
}

pub fn sample_loss(w: &ModelVector, s: &Sample, p: &LossParams) -> Result<f64> {
    check_dim(w, s.feature.dim())?;
    let margin = s.label * vector::dot(s.feature.as_slice(), w.as_slice());
    Ok(softplus(-margin) + p.rho * w.norm_sq())
}

/// Adds `scale * ∇Q(w; s)` into `out`. Dimensions are the caller's problem.
#[inline]
pub(crate) fn accumulate_sample_grad(w: &[f64], s: &Sample, rho: f64, scale: f64, out: &mut [f64]) {
    let h = s.feature.as_slice();
    let margin = s.label * vector::dot(h, w);
    let coef = -scale * s.label * sigmoid(-margin);
    for ((o, hi), wi) in out.iter_mut().zip(h).zip(w) {
        *o += coef * hi + scale * 2.0 * rho * wi;
    }
}

/// `-γ h σ(-γ hᵀw) + 2ρw`.
pub fn sample_grad(w: &ModelVector, s: &Sample, p: &LossParams) -> Result<ModelVector> {
    check_dim(w, s.feature.dim())?;
    let mut out = ModelVector::zeros(w.dim());
    accumulate_sample_grad(w.as_slice(), s, p.rho, 1.0, out.as_mut_slice());
    Ok(out)
}

/// Average of the per-sample gradients over the given sample indices.
pub(crate) fn batch_grad_into(w: &[f64], data: &LocalDataset, batch: &[usize], rho: f64, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let scale = 1.0 / batch.len() as f64;
    for &b in batch {
        accumulate_sample_grad(w, &data.samples[b], rho, scale, out);
    }
}

/// Mini-batch gradient `(1/|B|) Σ_{b∈B} ∇Q(w; x_b)`.
pub fn batch_gradient(w: &ModelVector, data: &LocalDataset, batch: &IndexSet, p: &LossParams) -> Result<ModelVector> {
    check_dim(w, data.dim())?;
    if batch.population() != data.len() || batch.is_empty() {
        return Err(Error::invalid(format!(
            "batch drawn from {} samples does not fit a dataset of {}",
            batch.population(),
            data.len()
        )));
    }
    let mut out = ModelVector::zeros(w.dim());
    batch_grad_into(w.as_slice(), data, batch.indices(), p.rho, out.as_mut_slice());
    Ok(out)
}

/// Local empirical risk `P_k(w)`.
pub fn local_risk(w: &ModelVector, d: &LocalDataset, p: &LossParams) -> Result<f64> {
    check_dim(w, d.dim())?;
    let logistic = d
        .samples
        .iter()
        .map(|s| softplus(-s.label * vector::dot(s.feature.as_slice(), w.as_slice())))
        .sum::<f64>()
        / d.len() as f64;
    Ok(logistic + p.rho * w.norm_sq())
}

pub fn local_risk_grad(w: &ModelVector, d: &LocalDataset, p: &LossParams) -> Result<ModelVector> {
    if d.is_empty() {
        return Err(Error::invalid("local risk of an empty dataset"));
    }
    check_dim(w, d.dim())?;
    let mut out = ModelVector::zeros(w.dim());
    let scale = 1.0 / d.len() as f64;
    for s in &d.samples {
        accumulate_sample_grad(w.as_slice(), s, p.rho, scale, out.as_mut_slice());
    }
    Ok(out)
}

/// `(1/K) Σ_k ∇P_k(w)`.
pub fn aggregate_risk_grad(w: &ModelVector, all: &[LocalDataset], p: &LossParams) -> Result<ModelVector> {
    if all.is_empty() {
        return Err(Error::invalid("aggregate risk over zero agents"));
    }
    let mut out = ModelVector::zeros(w.dim());
    for d in all {
        out.add_scaled(1.0, &local_risk_grad(w, d, p)?)?;
    }
    out.scale(1.0 / all.len() as f64);
    Ok(out)
}

pub fn aggregate_risk(w: &ModelVector, all: &[LocalDataset], p: &LossParams) -> Result<f64> {
    if all.is_empty() {
        return Err(Error::invalid("aggregate risk over zero agents"));
    }
    let mut total = 0.0;
    for d in all {
        total += local_risk(w, d, p)?;
    }
    Ok(total / all.len() as f64)
}

/// `nu = 2ρ`, `delta = 2ρ + max‖h‖²/4`.
pub fn convexity_constants(all: &[LocalDataset], p: &LossParams) -> Result<ConvexityConstants> {
    if all.is_empty() {
        return Err(Error::invalid("convexity constants of zero agents"));
    }
    let max_sq = all
        .iter()
        .flat_map(|d| d.samples.iter())
        .map(|s| s.feature.norm_sq())
        .fold(0.0, f64::max);
    Ok(ConvexityConstants {
        nu: 2.0 * p.rho,
        delta: 2.0 * p.rho + 0.25 * max_sq,
    })
}

/// Minimizer of the aggregate risk by full-gradient descent with step
/// `1/delta`, started at the origin.
pub fn solve_minimizer(all: &[LocalDataset], p: &LossParams, tol: f64, max_iter: usize) -> Result<ModelVector> {
    let dim = all
        .first()
        .ok_or_else(|| Error::invalid("minimizer of zero agents"))?
        .dim();
    solve_minimizer_from(ModelVector::zeros(dim), all, p, tol, max_iter)
}

/// As [`solve_minimizer`] but from a caller-supplied starting point.
pub fn solve_minimizer_from(
    start: ModelVector,
    all: &[LocalDataset],
    p: &LossParams,
    tol: f64,
    max_iter: usize,
) -> Result<ModelVector> {
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let step = 1.0 / convexity_constants(all, p)?.delta;
    let mut w = start;
    let mut best = (w.clone(), f64::INFINITY);
    for _ in 0..=max_iter {
        let g = aggregate_risk_grad(&w, all, p)?;
        let norm = g.norm_sq().sqrt();
        if norm < best.1 {
            best = (w.clone(), norm);
        }
        if norm <= tol {
            return Ok(w);
        }
        w.add_scaled(-step, &g)?;
    }
    Err(Error::Convergence {
        best: best.0,
        grad_norm: best.1,
        iterations: max_iter,
    })
}

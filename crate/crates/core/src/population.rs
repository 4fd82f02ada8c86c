//! Expected (population) risk of the synthetic data model and its minimizer.
//!
//! Agent `k` draws `h ~ N(0, v_k I)` and labels it `sign(hᵀu_k)` with
//! `u_k = w* + c_k`. For a model `w`, write `w = α û + β ê` with `û = u_k/‖u_k‖`
//! and `ê ⟂ û`. Folding the two label half-spaces onto each other, the
//! expectation only depends on `a = hᵀû/√v` (half-normal) and `b = hᵀê/√v`
//! (standard normal):
//!
//! ```text
//! E ℓ(w)  = E softplus(-√v (α a + β b))
//! E ∇ℓ(w) = -√v E[s (a û + b ê)],           s = σ(-√v (α a + β b))
//! E ∇²ℓ   = v E[c (a û + b ê)(a û + b ê)ᵀ] + v E[c] (I - ûûᵀ - êêᵀ),  c = s(1-s)
//! ```
//!
//! The `a` integral uses Gauss–Legendre on `[0, A_MAX]` against the half-normal
//! density; the `b` integral uses Gauss–Hermite. The minimizer of the
//! aggregate population risk is what the iterates of a small-step run settle
//! around when every round sees fresh data, so it is the reference that
//! exposes the step-size dependence of the steady-state error.

use std::num::NonZeroUsize;

use gauss_quad::hermite::GaussHermite;
use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};

use crate::environment::WorldState;
use crate::error::{Error, Result};
use crate::objective::{sigmoid, softplus, LossParams};
use crate::vector::{self, ModelVector};

/// Truncation of the half-normal integral; the tail mass beyond is ~1e-15.
const A_MAX: f64 = 8.0;

pub const DEFAULT_HALF_NODES: usize = 20;
pub const DEFAULT_FULL_NODES: usize = 12;

/// Tensor-product rule for `E_{a ~ |N(0,1)|, b ~ N(0,1)}`.
#[derive(Clone, Debug)]
pub struct PopulationQuadrature {
    nodes: Vec<(f64, f64, f64)>,
}

impl PopulationQuadrature {
    pub fn new(half_nodes: usize, full_nodes: usize) -> Result<Self> {
        let half = NonZeroUsize::new(half_nodes).ok_or_else(|| Error::invalid("quadrature needs at least one node"))?;
        let full = NonZeroUsize::new(full_nodes).ok_or_else(|| Error::invalid("quadrature needs at least one node"))?;
        let half_normal = 2.0 / (2.0 * std::f64::consts::PI).sqrt();
        let a_rule: Vec<(f64, f64)> = GaussLegendre::new(half)
            .iter()
            .map(|(x, w)| {
                let a = 0.5 * A_MAX * (x + 1.0);
                (a, w * 0.5 * A_MAX * half_normal * (-0.5 * a * a).exp())
            })
            .collect();
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let b_rule: Vec<(f64, f64)> = GaussHermite::new(full)
            .iter()
            .map(|(x, w)| (std::f64::consts::SQRT_2 * x, w * inv_sqrt_pi))
            .collect();
        let nodes = a_rule
            .iter()
            .flat_map(|&(a, wa)| b_rule.iter().map(move |&(b, wb)| (a, b, wa * wb)))
            .collect();
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

impl Default for PopulationQuadrature {
    fn default() -> Self {
        Self::new(DEFAULT_HALF_NODES, DEFAULT_FULL_NODES).expect("non-zero node counts")
    }
}

/// Risk value, gradient and Hessian of one agent's population risk
/// (logistic part only; the regularizer is added by the caller).
struct AgentMoments {
    loss: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Order {
    Value,
    Gradient,
    Hessian,
}

fn agent_moments(
    w: &[f64],
    truth: &[f64],
    var: f64,
    quad: &PopulationQuadrature,
    order: Order,
) -> Result<AgentMoments> {
    let with_hessian = order == Order::Hessian;
    let dim = w.len();
    let norm = vector::dot(truth, truth).sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("agent labelling model is the zero vector"));
    }
    let u_hat: Vec<f64> = truth.iter().map(|t| t / norm).collect();
    let alpha = vector::dot(w, &u_hat);
    let mut e_hat: Vec<f64> = w.iter().zip(&u_hat).map(|(wi, ui)| wi - alpha * ui).collect();
    let beta = vector::dot(&e_hat, &e_hat).sqrt();
    if beta > 1e-300 {
        e_hat.iter_mut().for_each(|e| *e /= beta);
    } else {
        e_hat.iter_mut().for_each(|e| *e = 0.0);
    }
    let sd = var.sqrt();

    let (mut loss, mut ga, mut gb) = (0.0, 0.0, 0.0);
    let (mut haa, mut hab, mut hbb, mut h0) = (0.0, 0.0, 0.0, 0.0);
    for &(a, b, wt) in &quad.nodes {
        let z = sd * (alpha * a + beta * b);
        if order == Order::Value {
            loss += wt * softplus(-z);
            continue;
        }
        let s = sigmoid(-z);
        ga += wt * a * s;
        gb += wt * b * s;
        if with_hessian {
            let c = wt * s * (1.0 - s);
            haa += a * a * c;
            hab += a * b * c;
            hbb += b * b * c;
            h0 += c;
        }
    }
    let grad = u_hat.iter().zip(&e_hat).map(|(u, e)| -sd * (ga * u + gb * e)).collect();
    let hess = if with_hessian {
        DMatrix::from_fn(dim, dim, |i, j| {
            let uu = u_hat[i] * u_hat[j];
            let ee = e_hat[i] * e_hat[j];
            let ue = u_hat[i] * e_hat[j] + e_hat[i] * u_hat[j];
            let eye = if i == j { 1.0 } else { 0.0 };
            var * (haa * uu + hab * ue + hbb * ee + h0 * (eye - uu - ee))
        })
    } else {
        DMatrix::zeros(0, 0)
    };
    Ok(AgentMoments { loss, grad, hess })
}

fn aggregate(
    world: &WorldState,
    w: &ModelVector,
    p: &LossParams,
    quad: &PopulationQuadrature,
    order: Order,
) -> Result<AgentMoments> {
    let with_hessian = order == Order::Hessian;
    if w.dim() != world.dim() {
        return Err(Error::invalid("model and world dimensions differ"));
    }
    let dim = w.dim();
    let k = world.num_agents() as f64;
    let mut total = AgentMoments {
        loss: 0.0,
        grad: vec![0.0; dim],
        hess: DMatrix::zeros(dim, dim),
    };
    for agent in 0..world.num_agents() {
        let truth = world.agent_true_model(agent);
        let m = agent_moments(w.as_slice(), truth.as_slice(), world.feature_vars()[agent], quad, order)?;
        total.loss += m.loss / k;
        vector::add_scaled(&mut total.grad, 1.0 / k, &m.grad);
        if with_hessian {
            total.hess += m.hess / k;
        }
    }
    total.loss += p.rho * w.norm_sq();
    vector::add_scaled(&mut total.grad, 2.0 * p.rho, w.as_slice());
    if with_hessian {
        for i in 0..dim {
            total.hess[(i, i)] += 2.0 * p.rho;
        }
    }
    Ok(total)
}

/// Aggregate population risk `(1/K) Σ_k E P_k(w)`.
pub fn population_risk(
    world: &WorldState,
    w: &ModelVector,
    p: &LossParams,
    quad: &PopulationQuadrature,
) -> Result<f64> {
    Ok(aggregate(world, w, p, quad, Order::Value)?.loss)
}

pub fn population_risk_grad(
    world: &WorldState,
    w: &ModelVector,
    p: &LossParams,
    quad: &PopulationQuadrature,
) -> Result<ModelVector> {
    Ok(ModelVector::new(aggregate(world, w, p, quad, Order::Gradient)?.grad))
}

/// Minimizer of the aggregate population risk by damped Newton iterations.
pub fn population_minimizer(
    world: &WorldState,
    p: &LossParams,
    quad: &PopulationQuadrature,
    start: Option<&ModelVector>,
    tol: f64,
) -> Result<ModelVector> {
    const MAX_ITER: usize = 100;
    let mut w = start.cloned().unwrap_or_else(|| ModelVector::zeros(world.dim()));
    let mut current = aggregate(world, &w, p, quad, Order::Hessian)?;
    let mut best = (w.clone(), f64::INFINITY);
    for _ in 0..MAX_ITER {
        let gnorm = vector::dot(&current.grad, &current.grad).sqrt();
        if gnorm < best.1 {
            best = (w.clone(), gnorm);
        }
        if gnorm <= tol {
            return Ok(w);
        }
        let rhs = DVector::from_column_slice(&current.grad);
        let step = current
            .hess
            .clone()
            .cholesky()
            .ok_or_else(|| Error::invalid("population Hessian is not positive definite"))?
            .solve(&rhs);
        let mut scale = 1.0;
        loop {
            let mut trial = w.clone();
            vector::add_scaled(trial.as_mut_slice(), -scale, step.as_slice());
            let next = aggregate(world, &trial, p, quad, Order::Hessian)?;
            let accept = vector::dot(&next.grad, &next.grad).sqrt() < gnorm || scale < 1e-8;
            if accept {
                w = trial;
                current = next;
                break;
            }
            scale *= 0.5;
        }
    }
    Err(Error::Convergence {
        best: best.0,
        grad_norm: best.1,
        iterations: MAX_ITER,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate_local_data, init_world, DriftConfig};
    use crate::objective::{aggregate_risk_grad, LocalDataset};
    use crate::rng::RngState;

    fn world(seed: u64) -> WorldState {
        init_world(&DriftConfig::new(0.0, 0.1, 2).unwrap(), 4, &RngState::new(seed)).unwrap()
    }

    #[test]
    fn rule_integrates_low_moments() {
        let q = PopulationQuadrature::default();
        let mass: f64 = q.nodes.iter().map(|n| n.2).sum();
        let ea: f64 = q.nodes.iter().map(|n| n.2 * n.0).sum();
        let eb2: f64 = q.nodes.iter().map(|n| n.2 * n.1 * n.1).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!((ea - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((eb2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn refining_the_rule_changes_little() {
        let w0 = world(3);
        let p = LossParams { rho: 0.5 };
        let w = ModelVector::new(vec![0.3, -0.4]);
        let coarse = population_risk_grad(&w0, &w, &p, &PopulationQuadrature::default()).unwrap();
        let fine = population_risk_grad(&w0, &w, &p, &PopulationQuadrature::new(64, 64).unwrap()).unwrap();
        assert!(coarse.dist_sq(&fine).unwrap().sqrt() < 1e-8);
    }

    #[test]
    fn gradient_agrees_with_large_sample_average() {
        let w0 = world(5);
        let p = LossParams { rho: 0.5 };
        let w = ModelVector::new(vec![0.2, 0.6]);
        let quad = population_risk_grad(&w0, &w, &p, &PopulationQuadrature::default()).unwrap();
        let n = 100_000;
        let mut rng = RngState::new(6);
        let data: Vec<LocalDataset> = (0..4)
            .map(|k| generate_local_data(&w0, k, n, &mut rng).unwrap())
            .collect();
        let mc = aggregate_risk_grad(&w, &data, &p).unwrap();
        // per-coordinate sd of one sample's gradient is below 1.5, so 4 agents
        // of 1e5 samples give a standard error under 3e-3
        for i in 0..2 {
            assert!((quad[i] - mc[i]).abs() < 0.01, "{quad:?} vs {mc:?}");
        }
    }

    #[test]
    fn hessian_matches_finite_differences() {
        let w0 = world(7);
        let p = LossParams { rho: 0.1 };
        let quad = PopulationQuadrature::default();
        let w = ModelVector::new(vec![-0.5, 0.8]);
        let h = aggregate(&w0, &w, &p, &quad, Order::Hessian).unwrap().hess;
        let eps = 1e-6;
        for j in 0..2 {
            let mut up = w.clone();
            up.as_mut_slice()[j] += eps;
            let mut dn = w.clone();
            dn.as_mut_slice()[j] -= eps;
            let gu = population_risk_grad(&w0, &up, &p, &quad).unwrap();
            let gd = population_risk_grad(&w0, &dn, &p, &quad).unwrap();
            for i in 0..2 {
                let fd = (gu[i] - gd[i]) / (2.0 * eps);
                assert!((fd - h[(i, j)]).abs() < 1e-7, "({i},{j}) {fd} vs {}", h[(i, j)]);
            }
        }
    }

    #[test]
    fn minimizer_zeroes_the_gradient_from_any_start() {
        let w0 = world(9);
        let p = LossParams { rho: 0.05 };
        let quad = PopulationQuadrature::default();
        let cold = population_minimizer(&w0, &p, &quad, None, 1e-12).unwrap();
        let g = population_risk_grad(&w0, &cold, &p, &quad).unwrap();
        assert!(g.norm_sq().sqrt() <= 1e-12);
        let warm = population_minimizer(&w0, &p, &quad, Some(&ModelVector::new(vec![3.0, -3.0])), 1e-12).unwrap();
        assert!(cold.dist_sq(&warm).unwrap().sqrt() < 1e-9);
    }

    #[test]
    fn minimizer_points_along_a_shared_true_model() {
        let w0 = WorldState::from_parts(
            ModelVector::new(vec![0.6, 0.8]),
            vec![ModelVector::zeros(2); 3],
            vec![1.0, 1.5, 2.0],
            0,
        )
        .unwrap();
        let m = population_minimizer(&w0, &LossParams { rho: 0.2 }, &Default::default(), None, 1e-12).unwrap();
        // collinear with w* and on the same side
        assert!((m[0] * 0.8 - m[1] * 0.6).abs() < 1e-10);
        assert!(m[0] > 0.0);
    }
}

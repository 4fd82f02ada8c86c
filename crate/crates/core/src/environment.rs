//! The drifting world: a random-walk true model, fixed per-agent offsets, and
//! fresh synthetic data for every agent at every time step.
//!
//! Drift and offset variances are per coordinate, so `E‖q_i‖² = M·σ_q²` and
//! `E‖c_k‖² = M·σ_c²`.

use crate::error::{Error, Result};
use crate::objective::{LocalDataset, Sample};
use crate::rng::{sample_gaussian_vector, RngState};
use crate::vector::{self, ModelVector};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftConfig {
    pub sigma_q2: f64,
    pub sigma_c2: f64,
    pub dim: usize,
}

impl DriftConfig {
    pub fn new(sigma_q2: f64, sigma_c2: f64, dim: usize) -> Result<Self> {
        if !(sigma_q2 >= 0.0) || !(sigma_c2 >= 0.0) {
            return Err(Error::invalid("drift and offset variances must be non-negative"));
        }
        if dim == 0 {
            return Err(Error::invalid("model dimension must be positive"));
        }
        Ok(Self {
            sigma_q2,
            sigma_c2,
            dim,
        })
    }
}

/// Snapshot of the world at time `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    w_star: ModelVector,
    offsets: Vec<ModelVector>,
    feature_vars: Vec<f64>,
    time: usize,
}

impl WorldState {
    /// Builds a world from explicit parts, e.g. for tests.
    pub fn from_parts(
        w_star: ModelVector,
        offsets: Vec<ModelVector>,
        feature_vars: Vec<f64>,
        time: usize,
    ) -> Result<Self> {
        if offsets.is_empty() || offsets.len() != feature_vars.len() {
            return Err(Error::invalid("need one offset and one feature variance per agent"));
        }
        if offsets.iter().any(|c| c.dim() != w_star.dim()) {
            return Err(Error::invalid("offset dimension differs from model dimension"));
        }
        if feature_vars.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::invalid("feature variances must be positive"));
        }
        Ok(Self {
            w_star,
            offsets,
            feature_vars,
            time,
        })
    }

    pub fn w_star(&self) -> &ModelVector {
        &self.w_star
    }

    pub fn offsets(&self) -> &[ModelVector] {
        &self.offsets
    }

    pub fn feature_vars(&self) -> &[f64] {
        &self.feature_vars
    }

    pub fn time(&self) -> usize {
        self.time
    }

    pub fn num_agents(&self) -> usize {
        self.offsets.len()
    }

    pub fn dim(&self) -> usize {
        self.w_star.dim()
    }

    /// `w*_i + c_k`.
    pub fn agent_true_model(&self, k: usize) -> ModelVector {
        let mut m = self.w_star.clone();
        add_slice(&mut m, &self.offsets[k]);
        m
    }

    /// `‖c_k‖²` per agent: the empirical spread of local models around the
    /// global one.
    pub fn offset_spread(&self) -> Vec<f64> {
        self.offsets.iter().map(ModelVector::norm_sq).collect()
    }
}

fn add_slice(dst: &mut ModelVector, src: &ModelVector) {
    vector::add_scaled(dst.as_mut_slice(), 1.0, src.as_slice());
}

/// Draws `w*_0` (standard Gaussian), the offsets `c_k ~ N(0, σ_c²)` and the
/// per-agent feature variances `~ U[1, 2)`.
pub fn init_world(cfg: &DriftConfig, num_agents: usize, rng: &RngState) -> Result<WorldState> {
    if num_agents == 0 {
        return Err(Error::invalid("need at least one agent"));
    }
    let w_star = sample_gaussian_vector(&mut rng.derive_substream("w_star"), cfg.dim, 1.0)?;
    let offsets = (0..num_agents)
        .map(|k| sample_gaussian_vector(&mut rng.derive_indexed("offset", k as u64), cfg.dim, cfg.sigma_c2))
        .collect::<Result<Vec<_>>>()?;
    let mut var_rng = rng.derive_substream("feature_vars");
    let feature_vars = (0..num_agents).map(|_| 1.0 + var_rng.uniform()).collect();
    Ok(WorldState {
        w_star,
        offsets,
        feature_vars,
        time: 0,
    })
}

/// One random-walk step `w* <- w* + q`, `q ~ N(0, σ_q²)` per coordinate.
pub fn step_drift(world: &WorldState, cfg: &DriftConfig, rng: &mut RngState) -> Result<WorldState> {
    let mut next = world.clone();
    if cfg.sigma_q2 > 0.0 {
        let q = sample_gaussian_vector(rng, world.dim(), cfg.sigma_q2)?;
        add_slice(&mut next.w_star, &q);
    }
    next.time += 1;
    Ok(next)
}

/// Fresh dataset for agent `k` at the world's current time. Features are
/// `N(0, feature_vars[k])` per coordinate; labels are `sign(hᵀ(w* + c_k))`
/// with `sign(0) = +1`.
pub fn generate_local_data(world: &WorldState, k: usize, n_samples: usize, rng: &mut RngState) -> Result<LocalDataset> {
    if k >= world.num_agents() {
        return Err(Error::invalid(format!(
            "agent {k} out of range for {} agents",
            world.num_agents()
        )));
    }
    if n_samples == 0 {
        return Err(Error::invalid("need at least one sample per agent"));
    }
    let truth = world.agent_true_model(k);
    let sd = world.feature_vars[k].sqrt();
    let dim = world.dim();
    let samples = (0..n_samples)
        .map(|_| {
            let h: Vec<f64> = (0..dim).map(|_| sd * rng.standard_normal()).collect();
            let label = if vector::dot(&h, truth.as_slice()) >= 0.0 {
                1.0
            } else {
                -1.0
            };
            Sample::new(ModelVector::new(h), label)
        })
        .collect::<Result<Vec<_>>>()?;
    LocalDataset::new(k, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(sigma_q2: f64, sigma_c2: f64) -> DriftConfig {
        DriftConfig::new(sigma_q2, sigma_c2, 2).unwrap()
    }

    #[test]
    fn zero_offset_variance_shares_the_true_model() {
        let world = init_world(&cfg(0.0, 0.0), 5, &RngState::new(1)).unwrap();
        for k in 0..5 {
            assert_eq!(world.offsets()[k], ModelVector::zeros(2));
            assert_eq!(&world.agent_true_model(k), world.w_star());
        }
        assert!(world.feature_vars().iter().all(|&v| (1.0..2.0).contains(&v)));
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_world(&cfg(0.0, 0.1), 20, &RngState::new(42)).unwrap();
        let b = init_world(&cfg(0.0, 0.1), 20, &RngState::new(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn offset_second_moment() {
        let c = cfg(0.0, 0.1);
        let root = RngState::new(8);
        let reps = 10_000;
        let mut total = 0.0;
        for r in 0..reps {
            let w = init_world(&c, 20, &root.derive_indexed("rep", r)).unwrap();
            total += w.offset_spread().iter().sum::<f64>() / 20.0;
        }
        let mean = total / reps as f64;
        assert!((mean - 0.2).abs() < 0.05 * 0.2, "{mean}");
    }

    #[test]
    fn stationary_drift_leaves_model_unchanged() {
        let c = cfg(0.0, 0.1);
        let mut world = init_world(&c, 3, &RngState::new(2)).unwrap();
        let start = world.clone();
        let mut rng = RngState::new(3);
        for _ in 0..50 {
            world = step_drift(&world, &c, &mut rng).unwrap();
        }
        assert_eq!(world.w_star(), start.w_star());
        assert_eq!(world.time(), 50);
    }

    #[test]
    fn drift_increments_have_the_right_moment_and_no_memory() {
        let c = cfg(0.01, 0.1);
        let mut world = init_world(&c, 4, &RngState::new(5)).unwrap();
        let offsets = world.offsets().to_vec();
        let vars = world.feature_vars().to_vec();
        let mut rng = RngState::new(6);
        let steps = 10_000;
        let mut incs = Vec::with_capacity(steps);
        for _ in 0..steps {
            let next = step_drift(&world, &c, &mut rng).unwrap();
            let mut q = next.w_star().clone();
            q.add_scaled(-1.0, world.w_star()).unwrap();
            incs.push(q);
            world = next;
        }
        assert_eq!(world.offsets(), &offsets[..]);
        assert_eq!(world.feature_vars(), &vars[..]);

        let mean_sq = incs.iter().map(ModelVector::norm_sq).sum::<f64>() / steps as f64;
        assert!((mean_sq - 0.02).abs() < 0.05 * 0.02, "{mean_sq}");

        // lag-1 correlation of the first coordinate
        let x: Vec<f64> = incs.iter().map(|q| q[0]).collect();
        let n = (steps - 1) as f64;
        let mean = x.iter().sum::<f64>() / steps as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / steps as f64;
        let cov = x.windows(2).map(|p| (p[0] - mean) * (p[1] - mean)).sum::<f64>() / n;
        let corr = cov / var;
        assert!(corr.abs() < 3.0 / n.sqrt(), "{corr}");
    }

    #[test]
    fn labels_follow_the_agent_model() {
        let c = cfg(0.0, 0.5);
        let world = init_world(&c, 3, &RngState::new(9)).unwrap();
        let mut rng = RngState::new(10);
        for k in 0..3 {
            let truth = world.agent_true_model(k);
            let d = generate_local_data(&world, k, 200, &mut rng).unwrap();
            assert_eq!(d.len(), 200);
            for s in d.samples() {
                assert!(s.label() * s.feature().dot(&truth).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn axis_aligned_model_labels_by_first_coordinate() {
        let world = WorldState::from_parts(
            ModelVector::new(vec![1.0, 0.0]),
            vec![ModelVector::zeros(2)],
            vec![1.5],
            0,
        )
        .unwrap();
        let d = generate_local_data(&world, 0, 500, &mut RngState::new(1)).unwrap();
        for s in d.samples() {
            let expected = if s.feature()[0] >= 0.0 { 1.0 } else { -1.0 };
            assert_eq!(s.label(), expected);
        }
    }

    #[test]
    fn feature_variance_matches_agent_variance() {
        let world = init_world(&cfg(0.0, 0.1), 2, &RngState::new(11)).unwrap();
        let d = generate_local_data(&world, 1, 10_000, &mut RngState::new(12)).unwrap();
        let var = d.samples().iter().map(|s| s.feature()[0].powi(2)).sum::<f64>() / 10_000.0;
        let target = world.feature_vars()[1];
        assert!((var - target).abs() < 0.05 * target, "{var} vs {target}");
    }

    #[test]
    fn out_of_range_agent_is_rejected() {
        let world = init_world(&cfg(0.0, 0.1), 2, &RngState::new(1)).unwrap();
        assert!(generate_local_data(&world, 2, 10, &mut RngState::new(1)).is_err());
        assert!(generate_local_data(&world, 0, 0, &mut RngState::new(1)).is_err());
    }
}

//! Dynamic federated averaging and its reference baselines.
//!
//! A global round samples `L` of the `K` agents without replacement. Each
//! selected agent restarts from the current global model and runs `E_k` local
//! epochs; every epoch draws a fresh mini-batch of `B_k` distinct samples and
//! takes a step of size `μ / E_k` along the batch-average gradient evaluated at
//! the latest local iterate. The server averages the `L` local models.
//!
//! Random streams: the selection uses `round.derive_substream("select")`,
//! agent `k` uses `round.derive_indexed("agent", k)`, and epoch `e` of that
//! agent uses `agent.derive_indexed("epoch", e)`. Nothing depends on the order
//! in which agents are processed.

use std::borrow::Borrow;

use crate::error::{Error, Result};
use crate::objective::{self, LocalDataset, LossParams};
use crate::rng::{sample_without_replacement, IndexSet, RngState};
use crate::vector::{self, ModelVector};

/// Per-agent capability profile `(N_k, B_k, E_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AgentConfig {
    pub n_samples: usize,
    pub batch_size: usize,
    pub epochs: usize,
}

impl AgentConfig {
    pub fn new(n_samples: usize, batch_size: usize, epochs: usize) -> Result<Self> {
        let ac = Self {
            n_samples,
            batch_size,
            epochs,
        };
        ac.validate()?;
        Ok(ac)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.n_samples {
            return Err(Error::invalid(format!(
                "batch size {} must lie in [1, {}]",
                self.batch_size, self.n_samples
            )));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("an agent must run at least one epoch"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundConfig {
    pub step_size: f64,
    pub participants: usize,
    pub population: usize,
}

impl RoundConfig {
    pub fn new(step_size: f64, participants: usize, population: usize) -> Result<Self> {
        let rc = Self {
            step_size,
            participants,
            population,
        };
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.participants == 0 || self.participants > self.population {
            return Err(Error::invalid(format!(
                "participants {} must lie in [1, {}]",
                self.participants, self.population
            )));
        }
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::invalid(format!(
                "step size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutput {
    pub next_model: ModelVector,
    pub selected: IndexSet,
    /// Final local model of each selected agent, in selection order.
    pub per_agent_models: Vec<(usize, ModelVector)>,
}

pub fn selection_stream(round: &RngState) -> RngState {
    round.derive_substream("select")
}

pub fn agent_stream(round: &RngState, k: usize) -> RngState {
    round.derive_indexed("agent", k as u64)
}

fn epoch_stream(agent: &RngState, e: usize) -> RngState {
    agent.derive_indexed("epoch", e as u64)
}

/// The `E_k` mini-batches an agent draws from its stream.
pub fn epoch_batches(ac: &AgentConfig, agent_rng: &RngState) -> Result<Vec<IndexSet>> {
    (0..ac.epochs)
        .map(|e| sample_without_replacement(&mut epoch_stream(agent_rng, e), ac.n_samples, ac.batch_size))
        .collect()
}

fn check_local(w_start: &ModelVector, data: &LocalDataset, ac: &AgentConfig) -> Result<()> {
    ac.validate()?;
    if ac.n_samples != data.len() {
        return Err(Error::invalid(format!(
            "agent {} declares {} samples but holds {}",
            data.agent(),
            ac.n_samples,
            data.len()
        )));
    }
    if w_start.dim() != data.dim() {
        return Err(Error::invalid("model and data dimensions differ"));
    }
    Ok(())
}

/// Incremental local pass: gradients at the latest local iterate.
pub fn local_update(
    w_start: &ModelVector,
    data: &LocalDataset,
    ac: &AgentConfig,
    mu: f64,
    p: &LossParams,
    rng: &RngState,
) -> Result<ModelVector> {
    check_local(w_start, data, ac)?;
    let batches = epoch_batches(ac, rng)?;
    Ok(incremental_pass(w_start, data, &batches, mu / ac.epochs as f64, p.rho))
}

pub(crate) fn incremental_pass(
    w_start: &ModelVector,
    data: &LocalDataset,
    batches: &[IndexSet],
    step: f64,
    rho: f64,
) -> ModelVector {
    let mut w = w_start.clone();
    let mut g = vec![0.0; w.dim()];
    for batch in batches {
        objective::batch_grad_into(w.as_slice(), data, batch.indices(), rho, &mut g);
        vector::add_scaled(w.as_mut_slice(), -step, &g);
    }
    w
}

/// Non-incremental local pass: every epoch's gradient is taken at `w_start`.
pub fn non_incremental_local_update(
    w_start: &ModelVector,
    data: &LocalDataset,
    ac: &AgentConfig,
    mu: f64,
    p: &LossParams,
    rng: &RngState,
) -> Result<ModelVector> {
    check_local(w_start, data, ac)?;
    let batches = epoch_batches(ac, rng)?;
    let step = mu / ac.epochs as f64;
    let mut w = w_start.clone();
    let mut g = vec![0.0; w.dim()];
    for batch in &batches {
        objective::batch_grad_into(w_start.as_slice(), data, batch.indices(), p.rho, &mut g);
        vector::add_scaled(w.as_mut_slice(), -step, &g);
    }
    Ok(w)
}

pub fn select_participants(rc: &RoundConfig, round: &RngState) -> Result<IndexSet> {
    rc.validate()?;
    sample_without_replacement(&mut selection_stream(round), rc.population, rc.participants)
}

/// One round of dynamic federated averaging over all `K` datasets.
pub fn global_round(
    w_prev: &ModelVector,
    datasets: &[LocalDataset],
    acs: &[AgentConfig],
    rc: &RoundConfig,
    p: &LossParams,
    rng: &RngState,
) -> Result<RoundOutput> {
    if datasets.len() != rc.population {
        return Err(Error::invalid(format!(
            "{} datasets for a population of {}",
            datasets.len(),
            rc.population
        )));
    }
    global_round_with(w_prev, acs, rc, p, rng, |k| Ok(&datasets[k]))
}

/// As [`global_round`] but fetches each selected agent's data on demand, so
/// callers need not materialize datasets for agents that sit the round out.
pub fn global_round_with<D, F>(
    w_prev: &ModelVector,
    acs: &[AgentConfig],
    rc: &RoundConfig,
    p: &LossParams,
    rng: &RngState,
    mut data_for: F,
) -> Result<RoundOutput>
where
    D: Borrow<LocalDataset>,
    F: FnMut(usize) -> Result<D>,
{
    if acs.len() != rc.population {
        return Err(Error::invalid(format!(
            "{} agent configs for a population of {}",
            acs.len(),
            rc.population
        )));
    }
    let selected = select_participants(rc, rng)?;
    let mut per_agent_models = Vec::with_capacity(selected.len());
    for &k in selected.indices() {
        let data = data_for(k)?;
        let local = local_update(w_prev, data.borrow(), &acs[k], rc.step_size, p, &agent_stream(rng, k))?;
        per_agent_models.push((k, local));
    }
    let next_model = ModelVector::mean(per_agent_models.iter().map(|(_, w)| w))?;
    Ok(RoundOutput {
        next_model,
        selected,
        per_agent_models,
    })
}

/// `w_prev - μ · (1/K) Σ_k ∇P_k(w_prev)`.
pub fn centralized_gd_step(
    w_prev: &ModelVector,
    datasets: &[LocalDataset],
    mu: f64,
    p: &LossParams,
) -> Result<ModelVector> {
    let g = objective::aggregate_risk_grad(w_prev, datasets, p)?;
    ModelVector::axpy(-mu, &g, w_prev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{local_risk_grad, sample_grad, Sample};

    fn dataset(agent: usize, raw: &[([f64; 2], f64)]) -> LocalDataset {
        LocalDataset::new(
            agent,
            raw.iter()
                .map(|(h, y)| Sample::new(ModelVector::new(h.to_vec()), *y).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn toy() -> LocalDataset {
        dataset(
            0,
            &[
                ([1.0, 0.5], 1.0),
                ([-0.3, 1.2], -1.0),
                ([0.8, -1.1], 1.0),
                ([-1.4, -0.2], -1.0),
                ([0.2, 0.9], 1.0),
                ([2.0, -0.4], -1.0),
            ],
        )
    }

    const P: LossParams = LossParams { rho: 0.05 };

    #[test]
    fn single_full_epoch_is_a_gradient_step() {
        let d = toy();
        let w = ModelVector::new(vec![0.4, -0.2]);
        let ac = AgentConfig::new(6, 6, 1).unwrap();
        let got = local_update(&w, &d, &ac, 0.3, &P, &RngState::new(1)).unwrap();
        let expected = ModelVector::axpy(-0.3, &local_risk_grad(&w, &d, &P).unwrap(), &w).unwrap();
        assert!(got.dist_sq(&expected).unwrap() < 1e-28);
    }

    #[test]
    fn zero_step_returns_start() {
        let d = toy();
        let w = ModelVector::new(vec![0.4, -0.2]);
        let ac = AgentConfig::new(6, 2, 3).unwrap();
        assert_eq!(local_update(&w, &d, &ac, 0.0, &P, &RngState::new(1)).unwrap(), w);
    }

    #[test]
    fn two_full_epochs_unroll_by_hand() {
        let d = toy();
        let w0 = ModelVector::new(vec![0.4, -0.2]);
        let mu = 0.5;
        let ac = AgentConfig::new(6, 6, 2).unwrap();
        let g0 = local_risk_grad(&w0, &d, &P).unwrap();
        let w1 = ModelVector::axpy(-mu / 2.0, &g0, &w0).unwrap();
        let g1 = local_risk_grad(&w1, &d, &P).unwrap();
        let w2 = ModelVector::axpy(-mu / 2.0, &g1, &w1).unwrap();

        let inc = local_update(&w0, &d, &ac, mu, &P, &RngState::new(4)).unwrap();
        assert!(inc.dist_sq(&w2).unwrap().sqrt() < 1e-12);

        let non = non_incremental_local_update(&w0, &d, &ac, mu, &P, &RngState::new(4)).unwrap();
        let full = ModelVector::axpy(-mu, &g0, &w0).unwrap();
        assert!(non.dist_sq(&full).unwrap().sqrt() < 1e-12);
        // the gradient moved after the first half-step, so the two passes differ
        assert!(g1.dist_sq(&g0).unwrap() > 0.0);
        assert!(inc.dist_sq(&non).unwrap() > 1e-12);
    }

    #[test]
    fn one_epoch_incremental_equals_non_incremental() {
        let d = toy();
        let w = ModelVector::new(vec![-0.1, 0.7]);
        let ac = AgentConfig::new(6, 3, 1).unwrap();
        let rng = RngState::new(21);
        let a = local_update(&w, &d, &ac, 0.2, &P, &rng).unwrap();
        let b = non_incremental_local_update(&w, &d, &ac, 0.2, &P, &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_incremental_matches_direct_minibatch_average() {
        let d = toy();
        let w = ModelVector::new(vec![-0.1, 0.7]);
        let ac = AgentConfig::new(6, 2, 4).unwrap();
        let rng = RngState::new(33);
        let mu = 0.7;
        // direct evaluation of the epoch-averaged mini-batch gradient
        let batches = epoch_batches(&ac, &rng).unwrap();
        let mut ghat = ModelVector::zeros(2);
        for b in &batches {
            for &i in b.indices() {
                let g = sample_grad(&w, &d.samples()[i], &P).unwrap();
                ghat.add_scaled(1.0 / (ac.epochs * ac.batch_size) as f64, &g).unwrap();
            }
        }
        let expected = ModelVector::axpy(-mu, &ghat, &w).unwrap();
        let got = non_incremental_local_update(&w, &d, &ac, mu, &P, &rng).unwrap();
        assert!(got.dist_sq(&expected).unwrap().sqrt() < 1e-12);
    }

    #[test]
    fn full_batch_non_incremental_is_one_gradient_step() {
        let d = toy();
        let w = ModelVector::new(vec![0.3, 0.3]);
        let ac = AgentConfig::new(6, 6, 5).unwrap();
        let got = non_incremental_local_update(&w, &d, &ac, 0.4, &P, &RngState::new(2)).unwrap();
        let expected = ModelVector::axpy(-0.4, &local_risk_grad(&w, &d, &P).unwrap(), &w).unwrap();
        assert!(got.dist_sq(&expected).unwrap().sqrt() < 1e-12);
    }

    #[test]
    fn invalid_agent_configs_are_rejected() {
        assert!(AgentConfig::new(5, 6, 1).is_err());
        assert!(AgentConfig::new(5, 0, 1).is_err());
        assert!(AgentConfig::new(5, 2, 0).is_err());
        assert!(RoundConfig::new(0.1, 8, 7).is_err());
        assert!(RoundConfig::new(0.1, 0, 7).is_err());
        let d = toy();
        let wrong_n = AgentConfig::new(7, 2, 1).unwrap();
        assert!(local_update(&ModelVector::zeros(2), &d, &wrong_n, 0.1, &P, &RngState::new(1)).is_err());
    }

    #[test]
    fn single_agent_round_is_centralized_step() {
        let d = [toy()];
        let ac = [AgentConfig::new(6, 6, 1).unwrap()];
        let rc = RoundConfig::new(0.25, 1, 1).unwrap();
        let w = ModelVector::new(vec![1.0, -1.0]);
        let out = global_round(&w, &d, &ac, &rc, &P, &RngState::new(5)).unwrap();
        let central = centralized_gd_step(&w, &d, 0.25, &P).unwrap();
        assert!(out.next_model.dist_sq(&central).unwrap().sqrt() < 1e-12);
    }

    #[test]
    fn identical_agents_make_selection_irrelevant() {
        let d: Vec<LocalDataset> = (0..5).map(|_| toy()).collect();
        let ac = vec![AgentConfig::new(6, 6, 3).unwrap(); 5];
        let rc = RoundConfig::new(0.2, 2, 5).unwrap();
        let w = ModelVector::new(vec![0.5, 0.5]);
        let a = global_round(&w, &d, &ac, &rc, &P, &RngState::new(1)).unwrap();
        let b = global_round(&w, &d, &ac, &rc, &P, &RngState::new(2)).unwrap();
        assert!(a.next_model.dist_sq(&b.next_model).unwrap() < 1e-28);
        let single = local_update(&w, &d[0], &ac[0], 0.2, &P, &RngState::new(0)).unwrap();
        assert!(a.next_model.dist_sq(&single).unwrap() < 1e-28);
    }

    #[test]
    fn round_output_is_mean_of_locals_and_zero_step_is_identity() {
        let d: Vec<LocalDataset> = (0..4)
            .map(|k| {
                let mut t = toy().samples().to_vec();
                t.rotate_left(k);
                LocalDataset::new(k, t).unwrap()
            })
            .collect();
        let ac = vec![AgentConfig::new(6, 2, 2).unwrap(); 4];
        let w = ModelVector::new(vec![0.1, -0.1]);
        let rc = RoundConfig::new(0.3, 3, 4).unwrap();
        let out = global_round(&w, &d, &ac, &rc, &P, &RngState::new(8)).unwrap();
        assert_eq!(out.selected.len(), 3);
        let mean = ModelVector::mean(out.per_agent_models.iter().map(|(_, m)| m)).unwrap();
        assert_eq!(out.next_model, mean);

        let rc0 = RoundConfig::new(0.0, 3, 4).unwrap();
        let still = global_round(&w, &d, &ac, &rc0, &P, &RngState::new(8)).unwrap();
        assert_eq!(still.next_model, w);
    }

    #[test]
    fn centralized_step_at_minimizer_barely_moves() {
        let d = [toy(), dataset(1, &[([0.5, 0.5], 1.0), ([-0.5, 0.1], -1.0)])];
        let tol = 1e-10;
        let w = objective::solve_minimizer(&d, &P, tol, 1_000_000).unwrap();
        let next = centralized_gd_step(&w, &d, 0.5, &P).unwrap();
        assert!(next.dist_sq(&w).unwrap().sqrt() <= 0.5 * tol);
        assert_eq!(centralized_gd_step(&w, &d, 0.0, &P).unwrap(), w);
    }
}

//! Monte Carlo driver: independent runs of the full simulation, averaged in
//! the linear MSD domain.
//!
//! Stream layout (every name below is a substream of its parent):
//! `seed → ("run", r) → {"world", "agents", ("iteration", i) → {"drift",
//! ("data", k), "round"}}`. None of the swept parameters feed into any stream,
//! so every sweep value sees the same selections, batches and data draws.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::diagnostics::{msd, MetricsTrace, ReferenceMode, TraceRecord};
use crate::environment::{generate_local_data, init_world, step_drift, DriftConfig};
use crate::error::{Error, Result};
use crate::fedavg::{global_round, global_round_with, AgentConfig, RoundConfig};
use crate::harness::config::ExperimentConfig;
use crate::objective::{self, LossParams};
use crate::parallel::Executor;
use crate::population::{population_minimizer, PopulationQuadrature};
use crate::rng::{IndexSet, RngState};
use crate::vector::ModelVector;

const POPULATION_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub executor: Executor,
    /// Keep the selected agent set of every (run, iteration).
    pub record_selections: bool,
    /// Keep every run's un-averaged MSD series.
    pub keep_runs: bool,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub trace: MetricsTrace,
    /// `selections[r][i - 1]` when requested.
    pub selections: Option<Vec<Vec<IndexSet>>>,
    /// `per_run[r][i - 1]` when requested.
    pub per_run: Option<Vec<Vec<f64>>>,
}

struct RunRecord {
    msd: Vec<f64>,
    selections: Vec<IndexSet>,
}

/// Short hex digest of the config document.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.to_document().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Per-agent `(N, B_k, E_k)`, drawn uniformly from the configured ranges.
pub fn draw_agent_configs(cfg: &ExperimentConfig, rng: &RngState) -> Result<Vec<AgentConfig>> {
    let mut rng = rng.clone();
    (0..cfg.k)
        .map(|_| {
            let b = rng.random_range(cfg.batch_lo..=cfg.batch_hi);
            let e = rng.random_range(cfg.epoch_lo..=cfg.epoch_hi);
            AgentConfig::new(cfg.n_samples_per_agent, b, e)
        })
        .collect()
}

/// Reference models `w_ref` for iterations `1..=T` of one run, for the modes
/// that depend on the world alone.
fn reference_path(cfg: &ExperimentConfig, run: usize, quad: &PopulationQuadrature) -> Result<Vec<ModelVector>> {
    let root = RngState::new(cfg.seed).derive_indexed("run", run as u64);
    let drift = DriftConfig::new(cfg.sigma_q2, cfg.sigma_c2, cfg.m)?;
    let p = LossParams::new(cfg.rho)?;
    let mut world = init_world(&drift, cfg.k, &root.derive_substream("world"))?;
    let mut path: Vec<ModelVector> = Vec::with_capacity(cfg.iterations);
    for i in 1..=cfg.iterations {
        let it = root.derive_indexed("iteration", i as u64);
        let next = step_drift(&world, &drift, &mut it.derive_substream("drift"))?;
        let reference = match cfg.reference {
            ReferenceMode::Generative => next.w_star().clone(),
            ReferenceMode::Population => match path.last() {
                Some(prev) if next.w_star() == world.w_star() => prev.clone(),
                prev => population_minimizer(&next, &p, quad, prev, POPULATION_TOL)?,
            },
            ReferenceMode::Minimizer => return Err(Error::invalid("minimizer reference depends on each round's data")),
        };
        path.push(reference);
        world = next;
    }
    Ok(path)
}

fn reference_paths(cfg: &ExperimentConfig, executor: Executor) -> Result<Option<Vec<Vec<ModelVector>>>> {
    if cfg.reference == ReferenceMode::Minimizer {
        return Ok(None);
    }
    let quad = PopulationQuadrature::default();
    executor
        .map(cfg.runs, |r| reference_path(cfg, r, &quad))
        .into_iter()
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn simulate_run(
    cfg: &ExperimentConfig,
    run: usize,
    references: Option<&[ModelVector]>,
    record_selections: bool,
) -> Result<RunRecord> {
    let root = RngState::new(cfg.seed).derive_indexed("run", run as u64);
    let drift = DriftConfig::new(cfg.sigma_q2, cfg.sigma_c2, cfg.m)?;
    let p = LossParams::new(cfg.rho)?;
    let rc = RoundConfig::new(cfg.mu, cfg.l, cfg.k)?;
    let acs = draw_agent_configs(cfg, &root.derive_substream("agents"))?;
    let mut world = init_world(&drift, cfg.k, &root.derive_substream("world"))?;
    let mut w = ModelVector::zeros(cfg.m);
    let mut msd_series = Vec::with_capacity(cfg.iterations);
    let mut selections = Vec::new();

    for i in 1..=cfg.iterations {
        let it = root.derive_indexed("iteration", i as u64);
        world = step_drift(&world, &drift, &mut it.derive_substream("drift"))?;
        let data_for = |k: usize| {
            generate_local_data(
                &world,
                k,
                cfg.n_samples_per_agent,
                &mut it.derive_indexed("data", k as u64),
            )
        };
        let round_rng = it.derive_substream("round");
        let (out, w_ref) = match references {
            Some(path) => (
                global_round_with(&w, &acs, &rc, &p, &round_rng, data_for)?,
                path[i - 1].clone(),
            ),
            None => {
                let all = (0..cfg.k).map(data_for).collect::<Result<Vec<_>>>()?;
                let out = global_round(&w, &all, &acs, &rc, &p, &round_rng)?;
                let w_ref = objective::solve_minimizer(
                    &all,
                    &p,
                    objective::DEFAULT_MINIMIZER_TOL,
                    objective::DEFAULT_MINIMIZER_MAX_ITER,
                )?;
                (out, w_ref)
            }
        };
        w = out.next_model;
        let value = msd(&w_ref, &w)?;
        if !w.is_finite() || !value.is_finite() {
            return Err(Error::Divergence {
                run: run + 1,
                iteration: i,
            });
        }
        if log::log_enabled!(log::Level::Debug) {
            log::debug!("run {} iteration {i} selected {:?}", run + 1, out.selected.sorted());
        }
        if record_selections {
            selections.push(out.selected);
        }
        msd_series.push(value);
    }
    Ok(RunRecord {
        msd: msd_series,
        selections,
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTrace> {
    Ok(run_experiment_with(cfg, &RunOptions::default())?.trace)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, options: &RunOptions) -> Result<ExperimentResult> {
    cfg.validate()?;
    let references = reference_paths(cfg, options.executor)?;
    run_with_references(cfg, options, references.as_deref())
}

fn run_with_references(
    cfg: &ExperimentConfig,
    options: &RunOptions,
    references: Option<&[Vec<ModelVector>]>,
) -> Result<ExperimentResult> {
    let runs = options
        .executor
        .map(cfg.runs, |r| {
            simulate_run(cfg, r, references.map(|all| &all[r][..]), options.record_selections)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let records = (0..cfg.iterations)
        .map(|i| {
            let total: f64 = runs.iter().map(|run| run.msd[i]).sum();
            TraceRecord::new(i + 1, total / cfg.runs as f64)
        })
        .collect();
    let trace = MetricsTrace {
        label: "run".into(),
        records,
        config_hash: config_hash(cfg),
        reference: cfg.reference,
    };
    let per_run = options.keep_runs.then(|| runs.iter().map(|r| r.msd.clone()).collect());
    let selections = options
        .record_selections
        .then(|| runs.into_iter().map(|r| r.selections).collect());
    Ok(ExperimentResult {
        trace,
        selections,
        per_run,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Mu,
    SigmaQ2,
    SigmaC2,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::SigmaQ2 => "sigma_q2",
            SweepParam::SigmaC2 => "sigma_c2",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, value: f64) {
        match self {
            SweepParam::Mu => cfg.mu = value,
            SweepParam::SigmaQ2 => cfg.sigma_q2 = value,
            SweepParam::SigmaC2 => cfg.sigma_c2 = value,
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "sigma_q2" => Ok(SweepParam::SigmaQ2),
            "sigma_c2" => Ok(SweepParam::SigmaC2),
            other => Err(Error::invalid(format!(
                "unknown sweep parameter `{other}` (expected mu, sigma_q2 or sigma_c2)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub parameter: SweepParam,
    pub values: Vec<f64>,
}

impl SweepSpec {
    pub fn new(parameter: SweepParam, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("sweep needs at least one value"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!("invalid {parameter} value {v}")));
        }
        Ok(Self { parameter, values })
    }

    pub fn label(&self, value: f64) -> String {
        format!("{}={}", self.parameter, value)
    }
}

pub fn run_sweep(cfg: &ExperimentConfig, sweep: &SweepSpec) -> Result<Vec<(f64, MetricsTrace)>> {
    Ok(run_sweep_with(cfg, sweep, &RunOptions::default())?
        .into_iter()
        .map(|(v, r)| (v, r.trace))
        .collect())
}

pub fn run_sweep_with(
    cfg: &ExperimentConfig,
    sweep: &SweepSpec,
    options: &RunOptions,
) -> Result<Vec<(f64, ExperimentResult)>> {
    let sweep = SweepSpec::new(sweep.parameter, sweep.values.clone())?;
    // The step size does not touch the world, so its references are shared.
    let shared = if sweep.parameter == SweepParam::Mu {
        cfg.validate()?;
        reference_paths(cfg, options.executor)?
    } else {
        None
    };
    sweep
        .values
        .iter()
        .map(|&value| {
            let mut c = cfg.clone();
            sweep.parameter.apply(&mut c, value);
            let mut result = match &shared {
                Some(refs) => {
                    c.validate()?;
                    run_with_references(&c, options, Some(refs))?
                }
                None => run_experiment_with(&c, options)?,
            };
            result.trace.label = sweep.label(value);
            Ok((value, result))
        })
        .collect()
}

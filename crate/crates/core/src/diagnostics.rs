//! Gradient-noise measurements, the noise-bound constants, MSD, and the
//! exponential-transient fit.
//!
//! One round's update can be written as
//! `w_i = w_{i-1} - μ ∇P(w_{i-1}) - μ s_i - μ d_i`, where `s_i` is the gap
//! between the sampled mini-batch estimate (agent subset, gradients at
//! `w_{i-1}`) and the full aggregate gradient, and `d_i` is the extra
//! displacement caused by evaluating later epochs at the moving local iterate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::fedavg::{agent_stream, epoch_batches, select_participants, AgentConfig, RoundConfig};
use crate::objective::{self, ConvexityConstants, LocalDataset, LossParams};
use crate::rng::RngState;
use crate::vector::{self, ModelVector};

/// Tolerated relative difference between the means of the last two windows
/// before a trace is said to have no plateau.
pub const PLATEAU_TOLERANCE: f64 = 0.5;

/// Absolute allowance for floating-point roundoff in the noise-bound check.
const ROUNDOFF_SLACK: f64 = 1e-20;

#[derive(Clone, Debug, PartialEq)]
pub struct TauFactors {
    /// `(N_k - B_k) / ((N_k - 1) B_k E_k)` per agent.
    pub tau_s: Vec<f64>,
    /// `(K - L) / (K - 1)`.
    pub tau_eps: f64,
}

pub fn compute_tau(acs: &[AgentConfig], participants: usize) -> Result<TauFactors> {
    let k = acs.len();
    if k == 0 {
        return Err(Error::invalid("no agents"));
    }
    if participants == 0 || participants > k {
        return Err(Error::invalid(format!(
            "participants {participants} must lie in [1, {k}]"
        )));
    }
    let tau_s = acs
        .iter()
        .map(|ac| {
            ac.validate()?;
            if ac.batch_size == ac.n_samples {
                return Ok(0.0);
            }
            let (n, b, e) = (ac.n_samples as f64, ac.batch_size as f64, ac.epochs as f64);
            Ok((n - b) / ((n - 1.0) * b * e))
        })
        .collect::<Result<Vec<_>>>()?;
    let tau_eps = if participants == k {
        0.0
    } else {
        (k - participants) as f64 / (k - 1) as f64
    };
    Ok(TauFactors { tau_s, tau_eps })
}

/// Plug-in values of the three constants in the noise-variance bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundTerms {
    pub beta_s2: f64,
    /// Data variability, weighted by the per-agent mini-batch factors.
    pub sigma_s2: f64,
    /// Model variability, weighted by the participation deficit.
    pub eps2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseReport {
    pub trials: usize,
    /// Empirical mean of `s_i`.
    pub mean_s: ModelVector,
    /// Empirical standard deviation of each coordinate of `s_i`.
    pub sd_s: ModelVector,
    /// Empirical `E‖s_i‖²` and its Monte Carlo standard error.
    pub var_s: f64,
    pub var_s_se: f64,
    /// Empirical `E‖d_i‖²`.
    pub var_d: f64,
    pub max_norm_s: f64,
    pub max_norm_d: f64,
    pub tau: TauFactors,
    pub bound_terms: BoundTerms,
}

impl NoiseReport {
    /// Largest |mean| / (sd / √trials) over the coordinates of `s_i`.
    pub fn mean_z_score(&self) -> f64 {
        let n = self.trials as f64;
        self.mean_s
            .as_slice()
            .iter()
            .zip(self.sd_s.as_slice())
            .map(|(m, sd)| {
                if *sd > 0.0 {
                    m.abs() / (sd / n.sqrt())
                } else if *m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

fn beta_s2(tau: &TauFactors, participants: usize, delta: f64) -> f64 {
    let k = tau.tau_s.len() as f64;
    let l = participants as f64;
    tau.tau_s
        .iter()
        .map(|t| (6.0 * t + 2.0 * tau.tau_eps) * delta * delta)
        .sum::<f64>()
        / (k * l)
}

/// Repeats one round's randomness `trials` times at a fixed `w_prev` and
/// records `s_i` and `d_i`. Trial `t` uses `rng.derive_indexed("trial", t)` as
/// its round stream, so its incremental pass is exactly what
/// [`crate::fedavg::global_round`] would do with that stream.
#[allow(clippy::too_many_arguments)]
pub fn measure_gradient_noise(
    w_prev: &ModelVector,
    w_ref: &ModelVector,
    datasets: &[LocalDataset],
    acs: &[AgentConfig],
    rc: &RoundConfig,
    p: &LossParams,
    rng: &RngState,
    trials: usize,
) -> Result<NoiseReport> {
    if trials == 0 {
        return Err(Error::invalid("need at least one trial"));
    }
    if datasets.len() != rc.population || acs.len() != rc.population {
        return Err(Error::invalid("need one dataset and one agent config per agent"));
    }
    let dim = w_prev.dim();
    let k = rc.population;
    let l = rc.participants;
    let full_avg = objective::aggregate_risk_grad(w_prev, datasets, p)?;
    let mu = rc.step_size;

    let mut sum_s = vec![0.0; dim];
    let mut sum_s2 = vec![0.0; dim];
    let mut norms_s = Vec::with_capacity(trials);
    let mut sum_d2 = 0.0;
    let mut max_d: f64 = 0.0;
    for t in 0..trials {
        let round = rng.derive_indexed("trial", t as u64);
        let selected = select_participants(rc, &round)?;
        let mut sampled = vec![0.0; dim];
        let mut realized = vec![0.0; dim];
        for agent in selected.sorted() {
            let ac = &acs[agent];
            let data = &datasets[agent];
            if ac.n_samples != data.len() {
                return Err(Error::invalid(format!("agent {agent} data size mismatch")));
            }
            let batches = epoch_batches(ac, &agent_stream(&round, agent))?;
            let (incremental, frozen) = local_directions(w_prev.as_slice(), data, &batches, mu, p.rho);
            vector::add_scaled(&mut sampled, 1.0, &frozen);
            vector::add_scaled(&mut realized, 1.0, &incremental);
        }
        sampled
            .iter_mut()
            .chain(realized.iter_mut())
            .for_each(|v| *v *= 1.0 / l as f64);
        let s: Vec<f64> = sampled.iter().zip(full_avg.as_slice()).map(|(a, b)| a - b).collect();
        let d: Vec<f64> = realized.iter().zip(&sampled).map(|(a, b)| a - b).collect();
        for i in 0..dim {
            sum_s[i] += s[i];
            sum_s2[i] += s[i] * s[i];
        }
        norms_s.push(vector::dot(&s, &s));
        let dn = vector::dot(&d, &d);
        sum_d2 += dn;
        max_d = max_d.max(dn.sqrt());
    }

    let n = trials as f64;
    let mean_s: Vec<f64> = sum_s.iter().map(|v| v / n).collect();
    let sd_s: Vec<f64> = sum_s2
        .iter()
        .zip(&mean_s)
        .map(|(s2, m)| {
            if trials > 1 {
                ((s2 - n * m * m) / (n - 1.0)).max(0.0).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let var_s = norms_s.iter().sum::<f64>() / n;
    let var_s_se = if trials > 1 {
        let ss = norms_s.iter().map(|v| (v - var_s).powi(2)).sum::<f64>() / (n - 1.0);
        (ss / n).sqrt()
    } else {
        0.0
    };
    let max_norm_s = norms_s.iter().fold(0.0f64, |a, &b| a.max(b.sqrt()));

    let tau = compute_tau(acs, l)?;
    let constants = objective::convexity_constants(datasets, p)?;
    let (mut sigma_s2, mut eps2) = (0.0, 0.0);
    for (agent, data) in datasets.iter().enumerate() {
        let g = objective::local_risk_grad(w_ref, data, p)?;
        let spread = data
            .samples()
            .iter()
            .map(|s| {
                let gs = objective::sample_grad(w_ref, s, p)?;
                gs.dist_sq(&g)
            })
            .sum::<Result<f64>>()?
            / data.len() as f64;
        sigma_s2 += tau.tau_s[agent] * spread;
        eps2 += tau.tau_eps * tau.tau_eps * g.norm_sq();
    }
    let kl = (k * l) as f64;
    let bound_terms = BoundTerms {
        beta_s2: beta_s2(&tau, l, constants.delta),
        sigma_s2: 3.0 * sigma_s2 / kl,
        eps2: 2.0 * eps2 / kl,
    };

    Ok(NoiseReport {
        trials,
        mean_s: ModelVector::new(mean_s),
        sd_s: ModelVector::new(sd_s),
        var_s,
        var_s_se,
        var_d: sum_d2 / n,
        max_norm_s,
        max_norm_d: max_d,
        tau,
        bound_terms,
    })
}

/// Epoch-averaged gradients for one agent and one set of batches:
/// `(incremental, frozen)`, where the incremental direction evaluates epoch
/// `e` at the local iterate after `e` steps of size `μ/E` and the frozen one
/// evaluates every epoch at `w_start`.
///
/// Batches are summed in index order and epochs are combined as a running
/// mean, so a single epoch gives bit-identical directions and full batches
/// reproduce the local risk gradient exactly.
fn local_directions(
    w_start: &[f64],
    data: &LocalDataset,
    batches: &[crate::rng::IndexSet],
    mu: f64,
    rho: f64,
) -> (Vec<f64>, Vec<f64>) {
    let dim = w_start.len();
    let epochs = batches.len() as f64;
    let mut w = w_start.to_vec();
    let mut incremental = vec![0.0; dim];
    let mut frozen = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for (e, batch) in batches.iter().enumerate() {
        let idx = batch.sorted();
        let n = (e + 1) as f64;
        objective::batch_grad_into(w_start, data, &idx, rho, &mut g);
        frozen.iter_mut().zip(&g).for_each(|(m, gi)| *m += (gi - *m) / n);
        objective::batch_grad_into(&w, data, &idx, rho, &mut g);
        incremental.iter_mut().zip(&g).for_each(|(m, gi)| *m += (gi - *m) / n);
        vector::add_scaled(&mut w, -mu / epochs, &g);
    }
    (incremental, frozen)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub holds: bool,
    /// `bound + slack - empirical`; non-negative when the bound holds.
    pub margin: f64,
    pub bound: f64,
    pub empirical: f64,
    /// Three Monte Carlo standard errors of the empirical second moment.
    pub slack: f64,
}

/// Compares the empirical `E‖s_i‖²` against
/// `β_s²‖w_ref - w_prev‖² + σ_s² + ε²`, allowing three standard errors.
pub fn check_lemma1_bound(
    report: &NoiseReport,
    w_prev: &ModelVector,
    w_ref: &ModelVector,
    constants: &ConvexityConstants,
) -> Result<BoundCheck> {
    let participants = participants_from(report)?;
    let beta = beta_s2(&report.tau, participants, constants.delta);
    let bound = beta * w_ref.dist_sq(w_prev)? + report.bound_terms.sigma_s2 + report.bound_terms.eps2;
    let slack = 3.0 * report.var_s_se + ROUNDOFF_SLACK;
    let margin = bound + slack - report.var_s;
    Ok(BoundCheck {
        holds: margin >= 0.0,
        margin,
        bound,
        empirical: report.var_s,
        slack,
    })
}

/// Recovers `L` from the stored `β_s²` (the report was built with it).
fn participants_from(report: &NoiseReport) -> Result<usize> {
    let k = report.tau.tau_s.len();
    if report.tau.tau_eps == 0.0 {
        return Ok(k);
    }
    // τ_ε = (K - L)/(K - 1)
    let l = k as f64 - report.tau.tau_eps * (k as f64 - 1.0);
    let rounded = l.round();
    if (l - rounded).abs() > 1e-9 || rounded < 1.0 {
        return Err(Error::invalid("report carries an inconsistent participation factor"));
    }
    Ok(rounded as usize)
}

pub fn msd(w_ref: &ModelVector, w: &ModelVector) -> Result<f64> {
    w_ref.dist_sq(w)
}

/// `10 log10(msd)`; zero maps to negative infinity.
pub fn msd_db(msd: f64) -> f64 {
    if msd == 0.0 {
        f64::NEG_INFINITY
    } else {
        10.0 * msd.log10()
    }
}

/// Which model the MSD is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReferenceMode {
    /// The drifting generative model `w*_i`.
    Generative,
    /// Minimizer of the aggregate empirical risk of the current round's data.
    Minimizer,
    /// Minimizer of the aggregate expected risk under the current world.
    Population,
}

impl ReferenceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReferenceMode::Generative => "generative",
            ReferenceMode::Minimizer => "minimizer",
            ReferenceMode::Population => "population",
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReferenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "generative" => Ok(ReferenceMode::Generative),
            "minimizer" => Ok(ReferenceMode::Minimizer),
            "population" => Ok(ReferenceMode::Population),
            other => Err(format!(
                "unknown reference `{other}` (expected generative, minimizer or population)"
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    pub msd: f64,
    pub msd_db: f64,
}

impl TraceRecord {
    pub fn new(iteration: usize, msd: f64) -> Self {
        Self {
            iteration,
            msd,
            msd_db: msd_db(msd),
        }
    }
}

/// Run-averaged MSD per iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTrace {
    pub label: String,
    pub records: Vec<TraceRecord>,
    pub config_hash: String,
    pub reference: ReferenceMode,
}

impl MetricsTrace {
    pub fn msd_values(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.msd).collect()
    }

    /// Mean linear MSD over the last `window` iterations.
    pub fn tail_mean(&self, window: usize) -> f64 {
        let n = self.records.len();
        let w = window.clamp(1, n.max(1));
        self.records[n - w..].iter().map(|r| r.msd).sum::<f64>() / w as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    /// Per-iteration contraction of the transient; `None` when there is no
    /// transient to fit.
    pub gamma_hat: Option<f64>,
    pub msd_floor: f64,
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: Option<f64>,
    /// Number of leading iterations used for the fit.
    pub transient_len: usize,
    pub degenerate: bool,
}

/// Least-squares `y = a + b x`; returns `(a, b, r²)`.
fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let r2 = if syy > 0.0 && sxx > 0.0 {
        sxy * sxy / (sxx * syy)
    } else {
        1.0
    };
    (my - slope * mx, slope, r2)
}

/// Fits `msd_i ≈ floor + C γ^i`.
///
/// The floor is the mean of the last `floor_window` values. The transient is
/// the prefix before the trace first comes within the floor's own size of it
/// (below `2·floor` when decaying from above, above `floor/2` when rising from
/// below), or within three plateau standard deviations, whichever band is
/// wider. `γ` is `exp(slope)` of a line fitted to `ln|msd_i - floor|` there.
pub fn fit_decay_rate(trace: &MetricsTrace, floor_window: usize) -> Result<DecayFit> {
    let n = trace.records.len();
    if floor_window < 2 || floor_window > n {
        return Err(Error::invalid(format!(
            "floor window {floor_window} must lie in [2, {n}]"
        )));
    }
    let msd: Vec<f64> = trace.msd_values();
    let tail = &msd[n - floor_window..];
    let floor = tail.iter().sum::<f64>() / floor_window as f64;
    // Compare against the window before; too short a trace skips the check.
    if n >= 2 * floor_window {
        let before = msd[n - 2 * floor_window..n - floor_window].iter().sum::<f64>() / floor_window as f64;
        let change = (before - floor).abs();
        if change > PLATEAU_TOLERANCE * floor.abs() && change > 0.0 {
            return Err(Error::NoPlateau {
                window: floor_window,
                relative_change: if floor != 0.0 {
                    change / floor.abs()
                } else {
                    f64::INFINITY
                },
            });
        }
    }
    let plateau_sd = (tail.iter().map(|v| (v - floor).powi(2)).sum::<f64>() / (floor_window - 1) as f64).sqrt();

    let from_above = msd[0] >= floor;
    let band = if from_above { floor } else { 0.5 * floor };
    let threshold = band.max(3.0 * plateau_sd);
    let transient_len = msd.iter().position(|v| (v - floor).abs() <= threshold).unwrap_or(n);

    if transient_len < 3 {
        return Ok(DecayFit {
            gamma_hat: None,
            msd_floor: floor,
            r_squared: None,
            transient_len,
            degenerate: true,
        });
    }
    let tiny = f64::MIN_POSITIVE;
    let xs: Vec<f64> = trace.records[..transient_len]
        .iter()
        .map(|r| r.iteration as f64)
        .collect();
    let ys: Vec<f64> = msd[..transient_len]
        .iter()
        .map(|v| (v - floor).abs().max(tiny).ln())
        .collect();
    let (_, slope, r2) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        gamma_hat: Some(slope.exp()),
        msd_floor: floor,
        r_squared: Some(r2),
        transient_len,
        degenerate: false,
    })
}

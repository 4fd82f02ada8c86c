//! The four standard panels: step-size sweeps in the stationary and drifting
//! cases, and the offset- and drift-variance sweeps.

use std::path::{Path, PathBuf};

use crate::diagnostics::MetricsTrace;
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::csv::write_csv;
use crate::harness::experiment::{run_sweep_with, RunOptions, SweepParam, SweepSpec};
use crate::harness::svg::{render_svg, Axes, Series};

/// Iterations averaged for steady-state and final MSD values.
pub const FINAL_WINDOW: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PanelKind {
    /// MSD (dB) against iteration, one curve per swept value.
    Traces,
    /// Final MSD (dB) against log10 of the swept value.
    FinalMsd,
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub name: &'static str,
    pub title: &'static str,
    pub config: ExperimentConfig,
    pub sweep: SweepSpec,
    pub kind: PanelKind,
}

pub fn panels() -> Vec<Panel> {
    let base = ExperimentConfig::default();
    let mus = vec![1e-3, 1e-2, 1e-1, 1.0];
    vec![
        Panel {
            name: "mu_stationary",
            title: "Step size, stationary",
            config: ExperimentConfig {
                sigma_q2: 0.0,
                sigma_c2: 0.1,
                iterations: 5000,
                ..base.clone()
            },
            sweep: SweepSpec {
                parameter: SweepParam::Mu,
                values: mus.clone(),
            },
            kind: PanelKind::Traces,
        },
        Panel {
            name: "mu_nonstationary",
            title: "Final MSD against step size, drifting",
            config: ExperimentConfig {
                sigma_q2: 0.01,
                sigma_c2: 0.1,
                iterations: 1000,
                ..base.clone()
            },
            sweep: SweepSpec {
                parameter: SweepParam::Mu,
                values: mus,
            },
            kind: PanelKind::FinalMsd,
        },
        Panel {
            name: "sigma_c2",
            title: "Offset variance",
            config: ExperimentConfig {
                sigma_q2: 0.0,
                mu: 0.01,
                iterations: 1000,
                ..base.clone()
            },
            sweep: SweepSpec {
                parameter: SweepParam::SigmaC2,
                values: vec![0.01, 0.1, 1.0],
            },
            kind: PanelKind::Traces,
        },
        Panel {
            name: "sigma_q2",
            title: "Drift variance",
            config: ExperimentConfig {
                sigma_c2: 0.1,
                mu: 0.01,
                iterations: 1000,
                ..base
            },
            sweep: SweepSpec {
                parameter: SweepParam::SigmaQ2,
                values: vec![1e-4, 1e-3, 1e-2],
            },
            kind: PanelKind::Traces,
        },
    ]
}

pub fn run_panel(panel: &Panel, options: &RunOptions) -> Result<Vec<MetricsTrace>> {
    Ok(run_sweep_with(&panel.config, &panel.sweep, options)?
        .into_iter()
        .map(|(_, r)| r.trace)
        .collect())
}

/// Writes `<name>.csv` and `<name>.svg` for one panel.
pub fn write_panel(panel: &Panel, traces: &[MetricsTrace], out: &Path) -> Result<[PathBuf; 2]> {
    let csv_path = out.join(format!("{}.csv", panel.name));
    let svg_path = out.join(format!("{}.svg", panel.name));
    write_csv(traces, &csv_path)?;
    let (series, axes) = match panel.kind {
        PanelKind::Traces => (
            traces.iter().map(Series::from_trace).collect(),
            Axes::new(panel.title, "iteration", "MSD (dB)"),
        ),
        PanelKind::FinalMsd => {
            let points = panel
                .sweep
                .values
                .iter()
                .zip(traces)
                .map(|(v, t)| (v.log10(), 10.0 * t.tail_mean(FINAL_WINDOW).log10()))
                .collect();
            (
                vec![Series {
                    label: "final MSD".into(),
                    points,
                }],
                Axes::new(
                    panel.title,
                    &format!("log10({})", panel.sweep.parameter),
                    "final MSD (dB)",
                ),
            )
        }
    };
    render_svg(&series, &axes, &svg_path)?;
    Ok([csv_path, svg_path])
}

pub fn write_figures(out: &Path, options: &RunOptions) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for panel in panels() {
        log::info!("panel {}", panel.name);
        let traces = run_panel(&panel, options)?;
        written.extend(write_panel(&panel, &traces, out)?);
    }
    Ok(written)
}

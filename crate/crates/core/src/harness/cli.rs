//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::config::load_config;
use crate::harness::csv::write_csv;
use crate::harness::experiment::{run_experiment, run_sweep, SweepSpec};
use crate::harness::figures::write_figures;
use crate::harness::svg::{render_svg, Axes, Series};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fedtrack",
    version,
    about = "Dynamic federated averaging under concept drift"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one experiment and write run.csv and run.svg.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Sweep one parameter and write sweep_<param>.csv and .svg.
    Sweep {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "NAME", value_parser = clap::builder::PossibleValuesParser::new(["mu", "sigma_q2", "sigma_c2"]))]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_name = "LIST", value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long, value_name = "DIR", default_value = ".")]
        out: PathBuf,
    },
    /// Reproduce the four standard panels (one CSV and one SVG each).
    Figures {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Divergence { .. } | Error::Convergence { .. } | Error::NoPlateau { .. } => EXIT_DIVERGENCE,
        Error::Io { .. } => EXIT_IO,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_outputs(stem: &str, traces: &[crate::diagnostics::MetricsTrace], out: &Path) -> Result<()> {
    ensure_dir(out)?;
    write_csv(traces, &out.join(format!("{stem}.csv")))?;
    let series: Vec<Series> = traces.iter().map(Series::from_trace).collect();
    render_svg(
        &series,
        &Axes::new(stem, "iteration", "MSD (dB)"),
        &out.join(format!("{stem}.svg")),
    )
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let trace = run_experiment(&cfg)?;
            write_outputs("run", &[trace], &out)
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = load_config(&config)?;
            let sweep = SweepSpec::new(param.parse()?, values)?;
            let traces: Vec<_> = run_sweep(&cfg, &sweep)?.into_iter().map(|(_, t)| t).collect();
            write_outputs(&format!("sweep_{}", sweep.parameter), &traces, &out)
        }
        Command::Figures { out } => write_figures(&out, &Default::default()).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs the command, returning
/// the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

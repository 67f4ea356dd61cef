use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use qmirror::engine::{Channel, Fault};
use qmirror::harness::experiment::{plot_curves, rate_ordering_failures, read_averaged_errors};
use qmirror::harness::{
    fit_rate_exponent, run_experiment, sweep, validate_suite, RunConfig, SweepGrid, ValidateOptions,
};

#[derive(Parser)]
#[command(
    name = "qmirror",
    version,
    about = "Quantized delayed distributed mirror descent experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its CSV, summary and plot.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Send exact states instead of quantized ones.
        #[arg(long)]
        no_quantize: bool,
        /// Override the subgradient delay.
        #[arg(long)]
        tau: Option<usize>,
        /// Output directory (defaults to the config's `output`, then `out/`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Inject a known bug to check that the monitors trip.
        #[arg(long, value_enum, default_value_t = FaultArg::None)]
        fault: FaultArg,
    },
    /// Run every cell of a rate-table grid in parallel.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the invariant checks on every module.
    Validate {
        /// Drop the (1 - beta) factor in the z-update.
        #[arg(long, conflicts_with = "single_level")]
        drop_beta: bool,
        /// Use a K = 1 quantizer.
        #[arg(long)]
        single_level: bool,
    },
    /// Fit the decay exponent of `rel_err_avg` in a run CSV.
    Rates {
        #[arg(long)]
        record: PathBuf,
        /// First round of the fit window (defaults to T/10).
        #[arg(long)]
        t_min: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FaultArg {
    None,
    DropBeta,
    SingleLevel,
}

impl From<FaultArg> for Fault {
    fn from(f: FaultArg) -> Self {
        match f {
            FaultArg::None => Fault::None,
            FaultArg::DropBeta => Fault::DropBetaFactor,
            FaultArg::SingleLevel => Fault::SingleLevelQuantizer,
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            no_quantize,
            tau,
            out,
            fault,
        } => run(config, no_quantize, tau, out, fault.into()),
        Command::Sweep { grid, out } => run_sweep(grid, out),
        Command::Validate {
            drop_beta,
            single_level,
        } => {
            let fault = if drop_beta {
                Fault::DropBetaFactor
            } else if single_level {
                Fault::SingleLevelQuantizer
            } else {
                Fault::None
            };
            let report = validate_suite(ValidateOptions { fault })?;
            print!("{report}");
            let failed = report.failed().len();
            println!("{} checks, {failed} failed", report.items.len());
            Ok(report.passed())
        }
        Command::Rates { record, t_min } => {
            let errors = read_averaged_errors(&record)?;
            let t_min = t_min.unwrap_or((errors.len() / 10).max(1));
            let fit = fit_rate_exponent(&errors, t_min)?;
            println!(
                "rho = {:.4}  95% CI [{:.4}, {:.4}]  rms residual {:.3e}  window [{}, {}]",
                fit.rho, fit.ci_low, fit.ci_high, fit.residual, fit.t_min, fit.t_max
            );
            Ok(true)
        }
    }
}

fn run(
    path: PathBuf,
    no_quantize: bool,
    tau: Option<usize>,
    out: Option<PathBuf>,
    fault: Fault,
) -> Result<bool> {
    let mut config =
        RunConfig::read(&path).with_context(|| format!("reading {}", path.display()))?;
    if no_quantize {
        config.channel = Channel::Perfect;
    }
    if let Some(tau) = tau {
        config.tau = tau;
        config.validate()?;
    }
    let out = out
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let result = run_experiment(&config, &out, fault)?;
    let s = result.summary();
    println!(
        "{}: T = {}, tau = {}, final e(T) = {:.4e}{}",
        s.name,
        s.horizon,
        s.tau,
        s.final_rel_err,
        if s.absolute_error { " (absolute)" } else { "" }
    );
    match &result.fit {
        Ok(f) => println!("fitted rho = {:.4} over [{}, {}]", f.rho, f.t_min, f.t_max),
        Err(e) => println!("no rate fit: {e}"),
    }
    if let Some(p) = &result.csv_path {
        println!("wrote {}", p.display());
    }
    if let Some(v) = s.first_violation {
        eprintln!(
            "{} monitor violations; first: {} at t = {}, agent {}: {:.6e} > {:.6e}",
            s.violations, v.monitor, v.t, v.agent, v.value, v.bound
        );
        return Ok(false);
    }
    Ok(true)
}

fn run_sweep(path: PathBuf, out: Option<PathBuf>) -> Result<bool> {
    let grid = SweepGrid::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let out = out
        .or_else(|| grid.output.clone())
        .unwrap_or_else(|| PathBuf::from("out/sweep"));
    std::fs::create_dir_all(&out)?;
    let cells = sweep(&grid, Some(&out))?;
    println!(
        "{:>6} {:>6} {:>10} {:>10} {:>12}",
        "rho1", "rho2", "predicted", "fitted", "final e(T)"
    );
    for c in &cells {
        let fitted = c
            .fit
            .map(|f| format!("{:.4}", f.rho))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>6} {:>6} {:>10} {:>10} {:>12.4e}",
            c.rho1, c.rho2, c.predicted, fitted, c.final_rel_err
        );
    }
    let configs = grid.configs()?;
    let series: Vec<_> = configs
        .iter()
        .map(|c| {
            let errs = read_averaged_errors(&out.join(format!("{}.csv", c.name)))?;
            let pts = errs
                .iter()
                .enumerate()
                .map(|(s, e)| ((s + 1) as f64, *e))
                .collect();
            Ok((
                format!("rho1={} rho2={}", c.schedule.alpha.rho, c.schedule.beta.rho),
                pts,
            ))
        })
        .collect::<Result<_>>()?;
    plot_curves(&out.join("comparison.svg"), "rate table", &series)?;
    for f in rate_ordering_failures(&cells, 0.1, 0.05) {
        println!("ordering: {f}");
    }
    println!("wrote {}", out.join("comparison.csv").display());
    Ok(cells.iter().all(|c| c.violations == 0))
}

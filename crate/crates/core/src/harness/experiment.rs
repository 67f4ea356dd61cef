use std::path::{Path, PathBuf};
use std::time::Instant;

use plotters::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Channel, Fault, RunRecord, Violation};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::metrics::{
    fit_rate_exponent, predicted_exponent, relative_error, RateFit, RelativeError,
};

pub const CSV_HEADER: [&str; 11] = [
    "t",
    "agent",
    "rel_err",
    "rel_err_avg",
    "consensus",
    "quant_err_max",
    "E_t",
    "proj_err_max",
    "bregman_err_max",
    "bits_cum",
    "slack_min",
];

/// Per-run results kept in memory and summarised on disk.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: RunConfig,
    pub record: RunRecord,
    pub errors: RelativeError,
    /// Fit over `[T/10, T]`; `Err` holds the refusal reason.
    pub fit: std::result::Result<RateFit, String>,
    pub csv_path: Option<PathBuf>,
    pub plot_path: Option<PathBuf>,
    pub wall_time_s: f64,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.record.passed()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.record.violations.first()
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            name: self.config.name.clone(),
            horizon: self.record.horizon(),
            tau: self.config.tau,
            quantized: matches!(self.config.channel, Channel::Quantized { .. }),
            final_rel_err: self.errors.final_averaged(),
            absolute_error: self.errors.absolute,
            fitted_rho: self.fit.as_ref().ok().map(|f| f.rho),
            fit_t_min: self.record.horizon() / 10,
            violations: self.record.violation_count,
            first_violation: self.first_violation().copied(),
            wall_time_s: self.wall_time_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub horizon: usize,
    pub tau: usize,
    pub quantized: bool,
    pub final_rel_err: f64,
    pub absolute_error: bool,
    pub fitted_rho: Option<f64>,
    pub fit_t_min: usize,
    pub violations: u64,
    pub first_violation: Option<Violation>,
    pub wall_time_s: f64,
}

/// Runs one configuration without touching the filesystem.
pub fn execute(config: &RunConfig, fault: Fault) -> Result<ExperimentResult> {
    let start = Instant::now();
    let mut engine = config.build_engine(fault)?;
    let record = engine.run(config.horizon)?;
    let errors = relative_error(&record);
    let t_min = (config.horizon / 10).max(1);
    let fit = fit_rate_exponent(&errors.averaged, t_min).map_err(|e| e.to_string());
    Ok(ExperimentResult {
        config: config.clone(),
        record,
        errors,
        fit,
        csv_path: None,
        plot_path: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Runs `config` and writes `<name>.csv`, `<name>.summary.toml` and, if
/// enabled, `<name>.svg` into `out_dir`.
pub fn run_experiment(
    config: &RunConfig,
    out_dir: &Path,
    fault: Fault,
) -> Result<ExperimentResult> {
    let mut result = execute(config, fault)?;
    std::fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join(format!("{}.csv", config.name));
    write_csv(&result.record, &result.errors, &csv_path)?;
    result.csv_path = Some(csv_path);
    if config.plot {
        let plot_path = out_dir.join(format!("{}.svg", config.name));
        let series = vec![(config.name.clone(), curve(&result.errors.averaged))];
        plot_curves(
            &plot_path,
            &format!("{}: relative error", config.name),
            &series,
        )?;
        result.plot_path = Some(plot_path);
    }
    let summary = toml::to_string(&result.summary()).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(
        out_dir.join(format!("{}.summary.toml", config.name)),
        summary,
    )?;
    Ok(result)
}

fn curve(errors: &[f64]) -> Vec<(f64, f64)> {
    errors
        .iter()
        .enumerate()
        .map(|(s, e)| ((s + 1) as f64, *e))
        .collect()
}

/// One row per (round, agent). `rel_err` at round `t` is `e(t + 1)`.
pub fn write_csv(record: &RunRecord, errors: &RelativeError, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    let mut bits_cum: u64 = 0;
    for (s, step) in record.steps.iter().enumerate() {
        bits_cum += step.bits;
        let shared = [
            errors.averaged[s].to_string(),
            step.consensus.to_string(),
            step.quant_err_max.to_string(),
            step.e_bound.to_string(),
            step.proj_err_max.to_string(),
            step.bregman_err_max.to_string(),
            bits_cum.to_string(),
            step.slack_min.to_string(),
        ];
        for (agent, e) in errors.per_agent[s].iter().enumerate() {
            w.write_field(step.t.to_string())?;
            w.write_field(agent.to_string())?;
            w.write_field(e.to_string())?;
            w.write_record(&shared)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `rel_err_avg` back from a run CSV, one value per round.
pub fn read_averaged_errors(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "unexpected CSV header".into(),
        });
    }
    let mut out: Vec<f64> = Vec::new();
    let mut last_t: Option<usize> = None;
    for row in r.records() {
        let row = row?;
        let parse_err = |what: &str| Error::Parse {
            path: path.to_path_buf(),
            message: format!("bad {what} in row {:?}", row.position().map(|p| p.line())),
        };
        let t: usize = row[0].parse().map_err(|_| parse_err("t"))?;
        if last_t == Some(t) {
            continue;
        }
        if t != out.len() {
            return Err(parse_err("round index"));
        }
        out.push(row[3].parse().map_err(|_| parse_err("rel_err_avg"))?);
        last_t = Some(t);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(out)
}

/// Log-scale line plot of one or more error curves.
pub fn plot_curves(path: &Path, title: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let plot_err = |e: &dyn std::fmt::Display| Error::Plot(e.to_string());
    let positive = |p: &&(f64, f64)| p.1 > 0.0 && p.1.is_finite();
    let x_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.0))
        .fold(1.0, f64::max);
    let (y_min, y_max) = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().filter(positive).map(|p| p.1))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    let (y_min, y_max) = if y_min.is_finite() {
        (y_min / 2.0, y_max * 2.0)
    } else {
        (1e-6, 1.0)
    };
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max, (y_min..y_max).log_scale())
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("iteration T")
        .y_desc("e(T)")
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                pts.iter().filter(positive).copied(),
                color.stroke_width(2),
            ))
            .map_err(|e| plot_err(&e))?
            .label(label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// A rate-table sweep: `base` with every `(rho1, rho2)` pair substituted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    pub output: Option<PathBuf>,
    pub base: RunConfig,
}

impl SweepGrid {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut grid: SweepGrid = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        grid.base.base_dir = path.parent().map(Path::to_path_buf);
        Ok(grid)
    }

    pub fn configs(&self) -> Result<Vec<RunConfig>> {
        let mut out = Vec::new();
        for &r1 in &self.rho1 {
            for &r2 in &self.rho2 {
                let mut c = self.base.clone();
                c.schedule.alpha.rho = r1;
                c.schedule.beta.rho = r2;
                c.name = format!("{}_rho1_{r1}_rho2_{r2}", self.base.name);
                c.validate()?;
                out.push(c);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub rho1: f64,
    pub rho2: f64,
    pub predicted: f64,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
    pub final_rel_err: f64,
    pub violations: u64,
}

/// Runs every grid cell in parallel; with `out_dir`, writes per-cell files and
/// `comparison.csv`.
pub fn sweep(grid: &SweepGrid, out_dir: Option<&Path>) -> Result<Vec<SweepCell>> {
    let configs = grid.configs()?;
    let results: Vec<Result<ExperimentResult>> = configs
        .par_iter()
        .map(|c| match out_dir {
            Some(dir) => run_experiment(c, dir, Fault::None),
            None => execute(c, Fault::None),
        })
        .collect();
    let mut cells = Vec::with_capacity(results.len());
    for r in results {
        let r = r?;
        let alpha = r.config.schedule.alpha.rho;
        let beta = r.config.schedule.beta.rho;
        cells.push(SweepCell {
            rho1: alpha,
            rho2: beta,
            predicted: predicted_exponent(alpha, beta),
            fit: r.fit.clone().ok(),
            fit_error: r.fit.clone().err(),
            final_rel_err: r.errors.final_averaged(),
            violations: r.record.violation_count,
        });
    }
    if let Some(dir) = out_dir {
        let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
        w.write_record([
            "rho1",
            "rho2",
            "predicted",
            "fitted",
            "ci_low",
            "ci_high",
            "final_rel_err",
            "violations",
        ])?;
        for c in &cells {
            let (f, lo, hi) = match &c.fit {
                Some(f) => (
                    f.rho.to_string(),
                    f.ci_low.to_string(),
                    f.ci_high.to_string(),
                ),
                None => (String::new(), String::new(), String::new()),
            };
            w.write_record([
                c.rho1.to_string(),
                c.rho2.to_string(),
                c.predicted.to_string(),
                f,
                lo,
                hi,
                c.final_rel_err.to_string(),
                c.violations.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(cells)
}

/// Checks the two rate-ordering conditions; returns human-readable failures.
pub fn rate_ordering_failures(cells: &[SweepCell], floor_tol: f64, order_tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    for c in cells {
        match &c.fit {
            Some(f) if f.rho >= c.predicted - floor_tol => {}
            Some(f) => out.push(format!(
                "({}, {}): fitted {:.3} below predicted {} - {floor_tol}",
                c.rho1, c.rho2, f.rho, c.predicted
            )),
            None => out.push(format!(
                "({}, {}): no fit ({})",
                c.rho1,
                c.rho2,
                c.fit_error.as_deref().unwrap_or("unknown")
            )),
        }
    }
    for a in cells {
        for b in cells {
            if let (Some(fa), Some(fb)) = (&a.fit, &b.fit) {
                if a.predicted > b.predicted && fa.rho < fb.rho - order_tol {
                    out.push(format!(
                        "({}, {}) predicted {} fits {:.3} < ({}, {}) predicted {} fits {:.3}",
                        a.rho1, a.rho2, a.predicted, fa.rho, b.rho1, b.rho2, b.predicted, fb.rho
                    ));
                }
            }
        }
    }
    out
}

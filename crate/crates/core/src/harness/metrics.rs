use serde::{Deserialize, Serialize};

use crate::engine::{PowerSchedule, RunRecord, Schedules};
use crate::error::{Error, Result};

/// `e(T)` per agent and for the network average, indexed by `T - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// `per_agent[s][l] = e_l(s + 1)`.
    pub per_agent: Vec<Vec<f64>>,
    /// `|(1/N) sum_l f(xhat_l(T)) - f*| / |f*|`.
    pub averaged: Vec<f64>,
    /// Set when `f* = 0` forced absolute errors.
    pub absolute: bool,
}

impl RelativeError {
    pub fn final_averaged(&self) -> f64 {
        *self
            .averaged
            .last()
            .expect("records hold at least one step")
    }

    /// Averaged error at `T` (1-based).
    pub fn at(&self, t: usize) -> f64 {
        self.averaged[t - 1]
    }
}

/// `|f(xhat) - f*| / |f*|`, or `|f(xhat) - f*|` when `f* = 0`.
pub fn relative_error(record: &RunRecord) -> RelativeError {
    let f_star = record.optimal_value;
    let absolute = f_star == 0.0;
    let scale = if absolute { 1.0 } else { f_star.abs() };
    let per_agent = record
        .agent_values
        .iter()
        .map(|row| row.iter().map(|v| (v - f_star).abs() / scale).collect())
        .collect();
    let averaged = record
        .averaged_values()
        .into_iter()
        .map(|v| (v - f_star).abs() / scale)
        .collect();
    RelativeError {
        per_agent,
        averaged,
        absolute,
    }
}

/// Least-squares slope of `log e` against `log T`, reported as a decay exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `-slope`, so a decaying error gives a positive exponent.
    pub rho: f64,
    /// 95% confidence interval for `rho`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub t_min: usize,
    pub t_max: usize,
}

/// Fits `e(T) ~ c T^(-rho)` over `t_min <= T <= errors.len()`, where
/// `errors[T - 1] = e(T)`.
pub fn fit_rate_exponent(errors: &[f64], t_min: usize) -> Result<RateFit> {
    let t_max = errors.len();
    if t_min == 0 || t_max < 10 * t_min {
        return Err(Error::RateFit(format!(
            "need T_max / t_min >= 10 (t_min = {t_min}, T_max = {t_max})"
        )));
    }
    let points: Vec<(f64, f64)> = (t_min..=t_max)
        .map(|t| ((t as f64).ln(), errors[t - 1]))
        .collect();
    if let Some((_, e)) = points.iter().find(|(_, e)| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::RateFit(format!(
            "error {e} is not positive; log undefined"
        )));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1.ln() - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let sse: f64 = points
        .iter()
        .map(|p| (p.1.ln() - intercept - slope * p.0).powi(2))
        .sum();
    if slope >= 0.0 {
        return Err(Error::RateFit(format!(
            "error tail is not decreasing (log-log slope {slope:.4} over [{t_min}, {t_max}])"
        )));
    }
    let se = (sse / (n - 2.0).max(1.0) / sxx).sqrt();
    Ok(RateFit {
        rho: -slope,
        ci_low: -slope - 1.96 * se,
        ci_high: -slope + 1.96 * se,
        residual: (sse / n).sqrt(),
        t_min,
        t_max,
    })
}

/// `min{rho_1, rho_2, 1 - rho_1}`.
pub fn predicted_exponent(rho1: f64, rho2: f64) -> f64 {
    rho1.min(rho2).min(1.0 - rho1)
}

pub const CONDITION_HORIZONS: [usize; 3] = [1_000, 10_000, 100_000];

/// Largest decade-to-decade ratio still counted as "decreasing to zero".
pub const DECADE_RATIO: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub name: String,
    /// Values at [`CONDITION_HORIZONS`].
    pub values: [f64; 3],
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Delay-shifted forms.
    pub theorem: Vec<ConditionResult>,
    /// Delay-free forms.
    pub corollary: Vec<ConditionResult>,
}

impl ConditionReport {
    pub fn theorem_passed(&self) -> bool {
        self.theorem.iter().all(|c| c.passed)
    }

    pub fn corollary_passed(&self) -> bool {
        self.corollary.iter().all(|c| c.passed)
    }

    pub fn verdicts_agree(&self) -> bool {
        self.theorem_passed() == self.corollary_passed()
    }

    pub fn passed(&self) -> bool {
        self.theorem_passed() && self.corollary_passed()
    }

    pub fn failures(&self) -> Vec<String> {
        self.theorem
            .iter()
            .chain(&self.corollary)
            .filter(|c| !c.passed)
            .map(|c| c.name.clone())
            .collect()
    }
}

fn vanishes(values: [f64; 3]) -> bool {
    values.iter().all(|v| v.is_finite() && *v >= 0.0)
        && values
            .windows(2)
            .all(|w| w[1] < w[0] && w[1] <= DECADE_RATIO * w[0])
}

fn cesaro(s: &PowerSchedule, t: usize, upper: usize) -> f64 {
    (1..=upper).map(|k| s.at(k)).sum::<f64>() / t as f64
}

/// Evaluates `1/(T alpha(T + tau))`, `(1/T) sum_{t<=T+tau} alpha(t)` and
/// `(1/T) sum_{t<=T+tau} beta(t)` (and their `tau = 0` forms) at
/// `T = 1e3, 1e4, 1e5`. A condition passes when the values fall by at least
/// [`DECADE_RATIO`] per decade.
pub fn condition_check(schedules: &Schedules) -> ConditionReport {
    let tau = schedules.tau;
    let build = |shift: usize, suffix: &str| {
        let eval = |f: &dyn Fn(usize) -> f64| {
            let mut values = [0.0; 3];
            for (v, &t) in values.iter_mut().zip(&CONDITION_HORIZONS) {
                *v = f(t);
            }
            values
        };
        let step = eval(&|t| 1.0 / (t as f64 * schedules.alpha.at(t + shift)));
        let alpha_mean = eval(&|t| cesaro(&schedules.alpha, t, t + shift));
        let beta_mean = eval(&|t| cesaro(&schedules.beta, t, t + shift));
        vec![
            ConditionResult {
                name: format!("1/(T alpha(T{suffix}))"),
                values: step,
                passed: vanishes(step),
            },
            ConditionResult {
                name: format!("mean alpha up to T{suffix}"),
                values: alpha_mean,
                passed: vanishes(alpha_mean),
            },
            ConditionResult {
                name: format!("mean beta up to T{suffix}"),
                values: beta_mean,
                passed: vanishes(beta_mean),
            },
        ]
    };
    ConditionReport {
        theorem: build(tau, &format!("+{tau}")),
        corollary: build(0, ""),
    }
}

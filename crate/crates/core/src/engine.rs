//! The synchronous iteration loop with quantized exchange, delayed
//! subgradients and per-step bound monitors.
//!
//! Round `t` for every agent `i`:
//!
//! 1. `d(t) = G alpha(t) beta(t) / sigma`
//! 2. each agent `j` broadcasts `Q(z_j(t), d(t), x_j(t))`
//! 3. `y_i(t) = sum_j P_ij(t) Q_j`, `ytilde_i(t) = Proj_X(y_i(t))`
//! 4. `g_i = subgradient of f_i at ytilde_i(t - tau)`
//! 5. `z_i(t+1)` and `x_i(t+1)` are mirror steps from `ytilde_i(t)` with
//!    stepsizes `alpha(t+1)(1 - beta(t+1))` and `alpha(t+1)`.

use std::collections::VecDeque;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::{BregmanGeometry, FeasibleSet, GeometryKind, FEASIBILITY_TOL};
use crate::network::{GraphSchedule, MixingConstants};
use crate::problems::DistributedProblem;
use crate::quantizer::{bits_per_level, quantize_into, QuantizerSpec, DEFAULT_LEVELS};
use crate::vecops::{dist, norm};

/// Absolute slack allowed on every monitored inequality.
pub const MONITOR_TOL: f64 = 1e-8;

/// Violations stored verbatim per run; later ones are only counted.
const MAX_STORED_VIOLATIONS: usize = 100;

/// `t -> a0 / (t + 1)^rho`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSchedule {
    pub a0: f64,
    pub rho: f64,
}

impl PowerSchedule {
    pub fn new(a0: f64, rho: f64) -> Result<Self> {
        if !(a0 > 0.0 && a0 <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "scale {a0} must lie in (0, 1]"
            )));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "exponent {rho} must be >= 0"
            )));
        }
        Ok(PowerSchedule { a0, rho })
    }

    /// `1 / sqrt(t + 1)`.
    pub fn inverse_sqrt() -> Self {
        PowerSchedule { a0: 1.0, rho: 0.5 }
    }

    pub fn at(&self, t: usize) -> f64 {
        self.a0 / ((t + 1) as f64).powf(self.rho)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    pub alpha: PowerSchedule,
    pub beta: PowerSchedule,
    pub tau: usize,
}

impl Schedules {
    pub fn new(alpha: PowerSchedule, beta: PowerSchedule, tau: usize) -> Self {
        Schedules { alpha, beta, tau }
    }
}

/// What agents send each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Channel {
    /// Adaptive uniform quantizer with `K` interior levels.
    Quantized { k: u32 },
    /// Exact 64-bit floats; `e_j(t) = 0` and `z` tracks `x`.
    Perfect,
}

impl Default for Channel {
    fn default() -> Self {
        Channel::Quantized { k: DEFAULT_LEVELS }
    }
}

/// Deliberate implementation bugs, used to show that the monitors notice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// The z-update uses `alpha(t+1)` instead of `alpha(t+1)(1 - beta(t+1))`.
    DropBetaFactor,
    /// The quantizer runs with a single interior level.
    SingleLevelQuantizer,
}

/// Every inequality checked during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    /// `z_j(t) - d(t) <= x_j(t) <= z_j(t) + d(t)`.
    Containment,
    /// `||e_j(t)|| <= sqrt(n) ||d(t)||_inf` for a state inside its interval.
    QuantizerResolution,
    /// `||e_j(t)|| <= E(t)`.
    QuantizationError,
    /// `||p_i(t)|| <= 2 N E(t)`.
    ProjectionError,
    /// `||x_i(t+1) - ytilde_i(t)|| <= G alpha(t) / sigma`.
    BregmanError,
    /// `||x_i(t+1) - z_i(t+1)|| <= G alpha(t+1) beta(t+1) / sigma`.
    StateGap,
    /// `z_i(t+1)` equals the mirror step with stepsize `alpha(t+1)(1 - beta(t+1))`.
    MidValueUpdate,
    /// One-step descent inequality with the applied stepsize.
    DescentSlack,
    /// Divergence perturbation bound for `V(x*, x_j + e_j + p_i)`.
    Perturbation,
    /// `x`, `z` and `ytilde` stay in the feasible set.
    Feasibility,
    /// `||g_i|| <= G`.
    SubgradientBound,
}

impl Monitor {
    pub const ALL: [Monitor; 11] = [
        Monitor::Containment,
        Monitor::QuantizerResolution,
        Monitor::QuantizationError,
        Monitor::ProjectionError,
        Monitor::BregmanError,
        Monitor::StateGap,
        Monitor::MidValueUpdate,
        Monitor::DescentSlack,
        Monitor::Perturbation,
        Monitor::Feasibility,
        Monitor::SubgradientBound,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Monitor::Containment => "containment",
            Monitor::QuantizerResolution => "quantizer_resolution",
            Monitor::QuantizationError => "quantization_error",
            Monitor::ProjectionError => "projection_error",
            Monitor::BregmanError => "bregman_error",
            Monitor::StateGap => "state_gap",
            Monitor::MidValueUpdate => "mid_value_update",
            Monitor::DescentSlack => "descent_slack",
            Monitor::Perturbation => "perturbation",
            Monitor::Feasibility => "feasibility",
            Monitor::SubgradientBound => "subgradient_bound",
        }
    }
}

impl fmt::Display for Monitor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One tripped inequality: `value` exceeded `bound` by more than [`MONITOR_TOL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub t: usize,
    pub agent: usize,
    pub monitor: Monitor,
    pub value: f64,
    pub bound: f64,
}

/// Worst observed `value - bound` and violation count for one monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorStat {
    pub monitor: Monitor,
    pub worst_excess: f64,
    pub checks: u64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub id: usize,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// `ytilde(t - tau), ..., ytilde(t - 1)` at the start of round `t`.
    pub history: VecDeque<Vec<f64>>,
    /// `x(1) + ... + x(t)`.
    pub running_sum: Vec<f64>,
}

/// Per-agent quantities of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Scalar entry of `d(t)`.
    pub d: f64,
    /// `E(t)`; zero on a perfect channel.
    pub e_bound: f64,
    pub quant_err: Vec<f64>,
    pub proj_err: Vec<f64>,
    pub bregman_err: Vec<f64>,
    pub state_gap: Vec<f64>,
    pub slack: Vec<f64>,
    /// Smallest `bound - V(x*, x_j + e_j + p_i)` over linked pairs into agent `i`.
    pub perturbation_slack: Vec<f64>,
    /// `sum_i ||x_i(t+1) - xbar(t+1)||`.
    pub consensus: f64,
    /// Agents whose `y_i(t)` fell outside the feasible set.
    pub y_outside: usize,
    pub bits: u64,
    pub violations: Vec<Violation>,
}

/// Aggregates of one round, as stored in a [`RunRecord`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub t: usize,
    pub d: f64,
    pub e_bound: f64,
    pub quant_err_max: f64,
    pub proj_err_max: f64,
    pub bregman_err_max: f64,
    pub state_gap_max: f64,
    pub slack_min: f64,
    pub perturbation_slack_min: f64,
    pub consensus: f64,
    pub y_outside: usize,
    pub bits: u64,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl StepDiagnostics {
    pub fn summary(&self) -> StepSummary {
        StepSummary {
            t: self.t,
            d: self.d,
            e_bound: self.e_bound,
            quant_err_max: max_of(&self.quant_err),
            proj_err_max: max_of(&self.proj_err),
            bregman_err_max: max_of(&self.bregman_err),
            state_gap_max: max_of(&self.state_gap),
            slack_min: min_of(&self.slack),
            perturbation_slack_min: min_of(&self.perturbation_slack),
            consensus: self.consensus,
            y_outside: self.y_outside,
            bits: self.bits,
        }
    }
}

/// Everything needed to build an engine.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub problem: DistributedProblem,
    pub geometry: BregmanGeometry,
    pub network: GraphSchedule,
    pub schedules: Schedules,
    pub channel: Channel,
    pub fault: Fault,
}

#[derive(Debug, Clone)]
pub struct Engine {
    setup: EngineSetup,
    levels: u32,
    d_phi: f64,
    agents: Vec<AgentState>,
    t: usize,
    stats: Vec<MonitorStat>,
    violations: Vec<Violation>,
    violation_count: u64,
}

/// Analytic `D_phi` for the pair; the sample count is irrelevant here.
fn analytic_d_phi(geometry: &BregmanGeometry, set: &FeasibleSet) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(geometry.divergence_budget(set, 1, &mut rng)?.d_phi)
}

/// Builds the engine state at `t = 0` with `z_i(0) = x_i(0)`.
///
/// `init_history[i]` lists `ytilde_i(-tau), ..., ytilde_i(-1)` and must have
/// exactly `tau` entries.
pub fn initialize(
    setup: EngineSetup,
    init_points: Vec<Vec<f64>>,
    init_history: Vec<Vec<Vec<f64>>>,
) -> Result<Engine> {
    let n_agents = setup.problem.n_agents();
    let set = setup.problem.set().clone();
    let dim = set.dim();
    check_dim(n_agents, setup.network.n_agents())?;
    check_dim(n_agents, init_points.len())?;
    check_dim(n_agents, init_history.len())?;
    if let Channel::Quantized { k } = setup.channel {
        if k < 2 {
            return Err(Error::InvalidParameter(format!(
                "level parameter K = {k} must be >= 2"
            )));
        }
    }
    if setup.geometry.kind == GeometryKind::NegativeEntropy
        && !matches!(set, FeasibleSet::Simplex { .. })
    {
        return Err(Error::InvalidParameter(
            "entropy geometry needs a simplex".into(),
        ));
    }
    let check_point = |p: &Vec<f64>| -> Result<()> {
        check_dim(dim, p.len())?;
        let violation = set.violation(p);
        if violation > FEASIBILITY_TOL {
            return Err(Error::Infeasible { violation });
        }
        Ok(())
    };
    let mut agents = Vec::with_capacity(n_agents);
    for (id, (x0, hist)) in init_points.into_iter().zip(init_history).enumerate() {
        check_point(&x0)?;
        if hist.len() != setup.schedules.tau {
            return Err(Error::InvalidParameter(format!(
                "agent {id}: history has {} entries, delay is {}",
                hist.len(),
                setup.schedules.tau
            )));
        }
        for h in &hist {
            check_point(h)?;
        }
        agents.push(AgentState {
            id,
            z: x0.clone(),
            x: x0,
            history: hist.into(),
            running_sum: vec![0.0; dim],
        });
    }
    let levels = match (setup.channel, setup.fault) {
        (Channel::Quantized { .. }, Fault::SingleLevelQuantizer) => 1,
        (Channel::Quantized { k }, _) => k,
        (Channel::Perfect, _) => 0,
    };
    let d_phi = analytic_d_phi(&setup.geometry, &set)?;
    let stats = Monitor::ALL
        .iter()
        .map(|&monitor| MonitorStat {
            monitor,
            worst_excess: f64::NEG_INFINITY,
            checks: 0,
            violations: 0,
        })
        .collect();
    Ok(Engine {
        setup,
        levels,
        d_phi,
        agents,
        t: 0,
        stats,
        violations: Vec::new(),
        violation_count: 0,
    })
}

/// `(1/eta)[V(x*, ytilde) - V(x*, x_next)] + G^2 eta / (2 sigma) - <g, ytilde - x*>`,
/// nonnegative whenever `x_next` is the exact mirror step from `ytilde`.
pub fn descent_inequality_slack(
    geometry: &BregmanGeometry,
    g_bound: f64,
    anchor: &[f64],
    x_next: &[f64],
    g: &[f64],
    eta: f64,
    x_star: &[f64],
) -> Result<f64> {
    let drop = geometry.divergence_difference(x_star, anchor, x_next)?;
    let inner: f64 = g
        .iter()
        .zip(anchor.iter().zip(x_star))
        .map(|(gi, (a, s))| gi * (a - s))
        .sum();
    Ok(drop / eta + g_bound * g_bound * eta / (2.0 * geometry.sigma_phi) - inner)
}

fn consensus_of(points: &[&[f64]]) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.iter()) {
            *m += v / n as f64;
        }
    }
    points.iter().map(|p| dist(p, &mean)).sum()
}

impl Engine {
    pub fn setup(&self) -> &EngineSetup {
        &self.setup
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    /// Index of the next round.
    pub fn time(&self) -> usize {
        self.t
    }

    pub fn d_phi(&self) -> f64 {
        self.d_phi
    }

    pub fn monitor_stats(&self) -> &[MonitorStat] {
        &self.stats
    }

    pub fn violation_count(&self) -> u64 {
        self.violation_count
    }

    /// First violations, capped at an internal limit.
    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    /// `sum_i ||x_i - xbar||` for the current states.
    pub fn consensus(&self) -> f64 {
        let pts: Vec<&[f64]> = self.agents.iter().map(|a| a.x.as_slice()).collect();
        consensus_of(&pts)
    }

    /// Ergodic averages `xhat_l(t) = (1/t) sum_{s=1..t} x_l(s)`; `None` before
    /// the first round.
    pub fn ergodic_averages(&self) -> Option<Vec<Vec<f64>>> {
        if self.t == 0 {
            return None;
        }
        let t = self.t as f64;
        Some(
            self.agents
                .iter()
                .map(|a| a.running_sum.iter().map(|s| s / t).collect())
                .collect(),
        )
    }

    fn sigma(&self) -> f64 {
        self.setup.geometry.sigma_phi
    }

    fn record(
        &mut self,
        diag: &mut StepDiagnostics,
        agent: usize,
        monitor: Monitor,
        value: f64,
        bound: f64,
    ) {
        let excess = value - bound;
        let stat = &mut self.stats[monitor as usize];
        stat.checks += 1;
        if excess > stat.worst_excess || excess.is_nan() {
            stat.worst_excess = excess;
        }
        if excess > MONITOR_TOL || excess.is_nan() {
            stat.violations += 1;
            self.violation_count += 1;
            let v = Violation {
                t: diag.t,
                agent,
                monitor,
                value,
                bound,
            };
            diag.violations.push(v);
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(v);
            }
        }
    }

    /// Runs round `t = self.time()` and advances to `t + 1`.
    pub fn step(&mut self) -> Result<StepDiagnostics> {
        let t = self.t;
        let n_agents = self.agents.len();
        let dim = self.setup.problem.dim();
        let g_bound = self.setup.problem.g_bound();
        let sigma = self.sigma();
        let sched = self.setup.schedules;
        let alpha_t = sched.alpha.at(t);
        let beta_t = sched.beta.at(t);
        let alpha_next = sched.alpha.at(t + 1);
        let beta_next = sched.beta.at(t + 1);
        let quantized = self.levels > 0;
        let (d, e_bound) = if quantized {
            let d = g_bound * alpha_t * beta_t / sigma;
            (d, d * dim as f64)
        } else {
            (0.0, 0.0)
        };
        let beta_eff = if quantized { beta_next } else { 0.0 };

        let mut diag = StepDiagnostics {
            t,
            alpha: alpha_t,
            beta: beta_t,
            d,
            e_bound,
            quant_err: vec![0.0; n_agents],
            proj_err: vec![0.0; n_agents],
            bregman_err: vec![0.0; n_agents],
            state_gap: vec![0.0; n_agents],
            slack: vec![0.0; n_agents],
            perturbation_slack: vec![f64::INFINITY; n_agents],
            consensus: 0.0,
            y_outside: 0,
            bits: 0,
            violations: Vec::new(),
        };

        // Broadcast.
        let mut sent = vec![vec![0.0; dim]; n_agents];
        let mut errors = vec![vec![0.0; dim]; n_agents];
        for j in 0..n_agents {
            let a = &self.agents[j];
            if quantized {
                let spec = QuantizerSpec::unchecked(self.levels, a.z.clone(), vec![d; dim])?;
                quantize_into(&spec, &a.x, &mut sent[j])?;
                let gap =
                    a.x.iter()
                        .zip(&a.z)
                        .map(|(x, z)| (x - z).abs())
                        .fold(0.0, f64::max);
                let inside = gap <= d + MONITOR_TOL;
                for k in 0..dim {
                    errors[j][k] = sent[j][k] - a.x[k];
                }
                let e = norm(&errors[j]);
                diag.quant_err[j] = e;
                self.record(&mut diag, j, Monitor::Containment, gap, d);
                if inside {
                    self.record(
                        &mut diag,
                        j,
                        Monitor::QuantizerResolution,
                        e,
                        (dim as f64).sqrt() * d,
                    );
                }
                self.record(&mut diag, j, Monitor::QuantizationError, e, e_bound);
            } else {
                sent[j].copy_from_slice(&self.agents[j].x);
            }
        }
        let payload = if quantized {
            dim as u64 * bits_per_level(self.levels) as u64
        } else {
            64 * dim as u64
        };
        let p = self.setup.network.matrix(t).clone();
        diag.bits = p.message_count() as u64 * payload;

        // Mix and project.
        let set = self.setup.problem.set().clone();
        let mut y_tilde = Vec::with_capacity(n_agents);
        let mut p_err = Vec::with_capacity(n_agents);
        for i in 0..n_agents {
            let mut y = vec![0.0; dim];
            for &(j, w) in p.row_entries(i) {
                for (yk, sk) in y.iter_mut().zip(&sent[j]) {
                    *yk += w * sk;
                }
            }
            if set.violation(&y) > FEASIBILITY_TOL {
                diag.y_outside += 1;
            }
            let yt = set.euclidean_project(&y)?;
            let pi: Vec<f64> = yt.iter().zip(&y).map(|(a, b)| a - b).collect();
            let pn = norm(&pi);
            diag.proj_err[i] = pn;
            if quantized {
                self.record(
                    &mut diag,
                    i,
                    Monitor::ProjectionError,
                    pn,
                    2.0 * n_agents as f64 * e_bound,
                );
            }
            y_tilde.push(yt);
            p_err.push(pi);
        }

        // Divergence perturbation over linked pairs.
        let geometry = self.setup.geometry;
        let x_star = self.setup.problem.optimizer().to_vec();
        let l_phi = geometry.l_phi;
        let pert_bound = 2.0
            * (4.0 * (n_agents * n_agents) as f64 + 1.0)
            * l_phi
            * e_bound
            * e_bound
            + (2.0 * n_agents as f64 + 1.0) * l_phi * (2.0 * self.d_phi / sigma).sqrt() * e_bound;
        for i in 0..n_agents {
            for &(j, _) in p.row_entries(i) {
                let xj = &self.agents[j].x;
                let shifted: Vec<f64> = (0..dim)
                    .map(|k| xj[k] + errors[j][k] + p_err[i][k])
                    .collect();
                if geometry.kind == GeometryKind::NegativeEntropy
                    && shifted.iter().any(|v| *v <= 0.0)
                {
                    continue;
                }
                let lhs = geometry.bregman_divergence(&x_star, &shifted)?;
                let rhs = geometry.bregman_divergence(&x_star, xj)? + pert_bound;
                diag.perturbation_slack[i] = diag.perturbation_slack[i].min(rhs - lhs);
                self.record(&mut diag, i, Monitor::Perturbation, lhs, rhs);
            }
        }

        // Delayed subgradients and mirror updates.
        let eta_x = alpha_next;
        let eta_z_rule = alpha_next * (1.0 - beta_eff);
        let eta_z_applied = match self.setup.fault {
            Fault::DropBetaFactor => alpha_next,
            _ => eta_z_rule,
        };
        let mut g = vec![0.0; dim];
        for i in 0..n_agents {
            let yt = y_tilde[i].clone();
            self.agents[i].history.push_back(yt.clone());
            let delayed = self.agents[i]
                .history
                .pop_front()
                .expect("history holds ytilde(t)");
            self.setup.problem.subgradient_into(i, &delayed, &mut g);
            let gn = norm(&g);
            self.record(&mut diag, i, Monitor::SubgradientBound, gn, g_bound);

            let x_next = geometry.mirror_step(&set, &yt, &g, eta_x)?;
            let z_next = if eta_z_applied == eta_x {
                x_next.clone()
            } else {
                geometry.mirror_step(&set, &yt, &g, eta_z_applied)?
            };
            let z_rule = if eta_z_rule == eta_z_applied {
                z_next.clone()
            } else if eta_z_rule == eta_x {
                x_next.clone()
            } else {
                geometry.mirror_step(&set, &yt, &g, eta_z_rule)?
            };
            self.record(
                &mut diag,
                i,
                Monitor::MidValueUpdate,
                norm_inf_diff(&z_next, &z_rule),
                0.0,
            );

            let eps = dist(&x_next, &yt);
            diag.bregman_err[i] = eps;
            self.record(
                &mut diag,
                i,
                Monitor::BregmanError,
                eps,
                g_bound * alpha_t / sigma,
            );

            let gap = dist(&x_next, &z_next);
            diag.state_gap[i] = gap;
            self.record(
                &mut diag,
                i,
                Monitor::StateGap,
                gap,
                g_bound * alpha_next * beta_eff / sigma,
            );

            let slack =
                descent_inequality_slack(&geometry, g_bound, &yt, &x_next, &g, eta_x, &x_star)?;
            diag.slack[i] = slack;
            self.record(&mut diag, i, Monitor::DescentSlack, -slack, 0.0);

            let worst_feas = set
                .violation(&x_next)
                .max(set.violation(&z_next))
                .max(set.violation(&yt));
            self.record(
                &mut diag,
                i,
                Monitor::Feasibility,
                worst_feas,
                FEASIBILITY_TOL,
            );

            let agent = &mut self.agents[i];
            for (s, v) in agent.running_sum.iter_mut().zip(&x_next) {
                *s += v;
            }
            agent.x = x_next;
            agent.z = z_next;
        }
        self.t += 1;
        diag.consensus = self.consensus();
        Ok(diag)
    }

    /// Runs `horizon` rounds and collects the record.
    pub fn run(&mut self, horizon: usize) -> Result<RunRecord> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be >= 1".into()));
        }
        let initial_norm_sum = self.agents.iter().map(|a| norm(&a.x)).sum();
        let initial_consensus = self.consensus();
        let start = self.t;
        let mut steps = Vec::with_capacity(horizon);
        let mut agent_values = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let diag = self.step()?;
            steps.push(diag.summary());
            let values: Vec<f64> = self
                .ergodic_averages()
                .expect("at least one round ran")
                .iter()
                .map(|x| self.setup.problem.value(x))
                .collect();
            agent_values.push(values);
        }
        Ok(RunRecord {
            n_agents: self.agents.len(),
            dim: self.setup.problem.dim(),
            start,
            schedules: self.setup.schedules,
            channel: self.setup.channel,
            fault: self.setup.fault,
            g_bound: self.setup.problem.g_bound(),
            sigma_phi: self.sigma(),
            optimal_value: self.setup.problem.optimal_value(),
            mixing: self.setup.network.mixing_constants(),
            initial_norm_sum,
            initial_consensus,
            steps,
            agent_values,
            ergodic: self.ergodic_averages().expect("at least one round ran"),
            monitor_stats: self.stats.clone(),
            violations: self.violations.clone(),
            violation_count: self.violation_count,
        })
    }
}

fn norm_inf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Output of [`Engine::run`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub n_agents: usize,
    pub dim: usize,
    /// Round index of the first recorded step.
    pub start: usize,
    pub schedules: Schedules,
    pub channel: Channel,
    pub fault: Fault,
    pub g_bound: f64,
    pub sigma_phi: f64,
    pub optimal_value: f64,
    pub mixing: MixingConstants,
    /// `A = sum_j ||x_j(0)||`.
    pub initial_norm_sum: f64,
    pub initial_consensus: f64,
    pub steps: Vec<StepSummary>,
    /// `agent_values[s][l] = f(xhat_l(s + 1))`.
    pub agent_values: Vec<Vec<f64>>,
    /// `xhat_l(T)` for every agent.
    pub ergodic: Vec<Vec<f64>>,
    pub monitor_stats: Vec<MonitorStat>,
    pub violations: Vec<Violation>,
    pub violation_count: u64,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn passed(&self) -> bool {
        self.violation_count == 0
    }

    pub fn stat(&self, monitor: Monitor) -> &MonitorStat {
        &self.monitor_stats[monitor as usize]
    }

    /// `(1/N) sum_l f(xhat_l(s + 1))` for every recorded step.
    pub fn averaged_values(&self) -> Vec<f64> {
        self.agent_values
            .iter()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect()
    }
}

/// Cumulative disagreement and its theoretical envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusProfile {
    /// `sum_{t=1..T} sum_i ||x_i(t) - xbar(t)||` for `T = 1..horizon`.
    pub measured: Vec<f64>,
    /// `(N omega / (1 - gamma)) A + B sum_{t=0..T} (G alpha(t) / sigma + 3 N E(t))`.
    pub envelope: Vec<f64>,
}

impl ConsensusProfile {
    pub fn holds(&self) -> bool {
        self.measured
            .iter()
            .zip(&self.envelope)
            .all(|(m, e)| *m <= e + MONITOR_TOL)
    }

    /// Smallest `envelope - measured`.
    pub fn min_margin(&self) -> f64 {
        self.measured
            .iter()
            .zip(&self.envelope)
            .map(|(m, e)| e - m)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Evaluates both sides of the disagreement bound. Only meaningful for records
/// that start at round 0.
pub fn consensus_profile(record: &RunRecord) -> ConsensusProfile {
    let n = record.n_agents as f64;
    let MixingConstants { omega, gamma } = record.mixing;
    let b = 2.0 * n + n * n * omega / (1.0 - gamma);
    let head = n * omega / (1.0 - gamma) * record.initial_norm_sum;
    let quantized = matches!(record.channel, Channel::Quantized { .. });
    let term = |t: usize| {
        let alpha = record.schedules.alpha.at(t);
        let e = if quantized {
            record.g_bound * record.dim as f64 * alpha * record.schedules.beta.at(t)
                / record.sigma_phi
        } else {
            0.0
        };
        record.g_bound * alpha / record.sigma_phi + 3.0 * n * e
    };
    let mut measured = Vec::with_capacity(record.steps.len());
    let mut envelope = Vec::with_capacity(record.steps.len());
    let mut acc_measured = 0.0;
    let mut acc_terms = term(0);
    for (s, step) in record.steps.iter().enumerate() {
        acc_measured += step.consensus;
        acc_terms += term(s + 1);
        measured.push(acc_measured);
        envelope.push(head + b * acc_terms);
    }
    ConsensusProfile { measured, envelope }
}

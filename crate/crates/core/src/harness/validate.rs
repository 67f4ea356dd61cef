use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{
    consensus_profile, initialize, Channel, EngineSetup, Fault, Monitor, PowerSchedule, RunRecord,
    Schedules, MONITOR_TOL,
};
use crate::error::Result;
use crate::geometry::{BregmanGeometry, FeasibleSet};
use crate::network::{
    check_b_connectivity, check_doubly_stochastic, make_gossip_cycle, make_metropolis_sequence,
    mixing_check, ring_edges, GraphSchedule,
};
use crate::problems::{make_estimation_problem, make_l1_problem, DistributedProblem};
use crate::quantizer::{decode, encode, quantize_vector, QuantizedMessage, QuantizerSpec};
use crate::vecops::{dot, norm};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateOptions {
    /// Injected bug, applied to the quantizer check and every engine run.
    pub fault: Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    /// Smallest `bound - value` seen; negative beyond tolerance means failure.
    pub worst_slack: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ValidationReport {
    pub items: Vec<CheckItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failed(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|i| !i.passed).collect()
    }

    fn push(
        &mut self,
        name: impl Into<String>,
        worst_slack: f64,
        tol: f64,
        detail: impl Into<String>,
    ) {
        self.items.push(CheckItem {
            name: name.into(),
            passed: worst_slack >= -tol,
            worst_slack,
            detail: detail.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for item in &self.items {
            writeln!(
                f,
                "{:4}  {:<48} worst slack {:>12.4e}  {}",
                if item.passed { "ok" } else { "FAIL" },
                item.name,
                item.worst_slack,
                item.detail
            )?;
        }
        Ok(())
    }
}

const TRIALS: usize = 1000;

fn geometry_checks(report: &mut ValidationReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let cube = FeasibleSet::cube(5, 2.0)?;
    let simplex = FeasibleSet::entropy_simplex(5)?;
    let pairs = [
        ("euclidean/box", BregmanGeometry::euclidean(), cube),
        (
            "entropy/simplex",
            BregmanGeometry::negative_entropy(&simplex)?,
            simplex,
        ),
    ];
    for (label, geom, set) in pairs {
        let dim = set.dim();
        let mut prox_worst = f64::INFINITY;
        let mut vi_worst = f64::INFINITY;
        for _ in 0..TRIALS {
            let anchor = set.sample(rng);
            let g1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let g2: Vec<f64> = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let eta = rng.gen_range(0.01..2.0);
            prox_worst =
                prox_worst.min(geom.prox_nonexpansiveness_gap(&set, &anchor, &g1, &g2, eta)?);

            // Variational inequality <eta g + grad phi(x+) - grad phi(anchor), u - x+> >= 0.
            let x = geom.mirror_step(&set, &anchor, &g1, eta)?;
            let gx = geom.grad_phi(&x)?;
            let ga = geom.grad_phi(&anchor)?;
            let w: Vec<f64> = (0..dim).map(|k| eta * g1[k] + gx[k] - ga[k]).collect();
            let u = set.sample(rng);
            let diff: Vec<f64> = u.iter().zip(&x).map(|(a, b)| a - b).collect();
            let scale = 1.0 + norm(&w) * norm(&diff);
            vi_worst = vi_worst.min(dot(&w, &diff) / scale);
        }
        report.push(
            format!("prox nonexpansiveness ({label})"),
            prox_worst,
            1e-12,
            format!("{TRIALS} trials"),
        );
        report.push(
            format!("mirror step optimality ({label})"),
            vi_worst,
            1e-9,
            format!("{TRIALS} trials"),
        );
        let budget = geom.divergence_budget(&set, 60, rng)?;
        report.push(
            format!("divergence budget ({label})"),
            budget.d_phi - budget.sampled_max,
            0.0,
            format!("D_phi = {:.4e}", budget.d_phi),
        );
    }
    Ok(())
}

fn quantizer_checks(
    report: &mut ValidationReport,
    rng: &mut ChaCha8Rng,
    levels: u32,
) -> Result<()> {
    let n = 8;
    let mut resolution_worst = f64::INFINITY;
    let mut roundtrip_failures = 0usize;
    for _ in 0..10 * TRIALS {
        let z: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let d = rng.gen_range(1e-3..10.0);
        let x: Vec<f64> = z.iter().map(|zi| zi + rng.gen_range(-d..=d)).collect();
        let spec = QuantizerSpec::unchecked(levels, z, vec![d; n])?;
        let q = quantize_vector(&spec, &x)?;
        let err: Vec<f64> = q.iter().zip(&x).map(|(a, b)| a - b).collect();
        resolution_worst = resolution_worst.min((n as f64).sqrt() * d - norm(&err));

        let msg = encode(&spec, &x)?;
        let back = QuantizedMessage::from_bytes(&msg.to_bytes(), n, levels)?;
        if back != msg
            || decode(&spec, &back)? != q
            || back.payload_bits() != msg.to_bytes().len() as u64 * 8 - pad(&msg)
        {
            roundtrip_failures += 1;
        }
    }
    report.push(
        format!("quantizer resolution sqrt(n)|d|_inf (K = {levels})"),
        resolution_worst,
        MONITOR_TOL,
        format!("{} samples", 10 * TRIALS),
    );
    report.push(
        "codec round trip",
        -(roundtrip_failures as f64),
        0.0,
        format!("{roundtrip_failures} mismatches"),
    );
    Ok(())
}

fn pad(msg: &QuantizedMessage) -> u64 {
    msg.to_bytes().len() as u64 * 8 - msg.payload_bits()
}

fn network_checks(report: &mut ValidationReport) -> Result<()> {
    let ring = make_gossip_cycle(30, &ring_edges(30), 0.5)?;
    let metro = make_metropolis_sequence(30, 0.2, 10, 1)?;
    for (label, s) in [("gossip ring N=30", &ring), ("metropolis N=30", &metro)] {
        let worst = (0..s.period())
            .map(|t| check_doubly_stochastic(s.matrix(t)).max_deviation)
            .fold(0.0, f64::max);
        report.push(
            format!("doubly stochastic ({label})"),
            -worst,
            1e-12,
            String::new(),
        );
        let conn = check_b_connectivity(s, 20 * s.b_window())?;
        report.push(
            format!("B-connectivity ({label})"),
            if conn.passed { 0.0 } else { -1.0 },
            0.0,
            format!("B = {}, {} windows", s.b_window(), conn.windows_checked),
        );
    }
    let mixing = mixing_check(&ring, 200);
    report.push(
        "geometric mixing (gossip ring N=30, 200 steps)",
        1.0 - mixing.worst_ratio,
        1e-9,
        format!("worst ratio {:.6}", mixing.worst_ratio),
    );
    Ok(())
}

fn problem_checks(report: &mut ValidationReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let set = FeasibleSet::cube(4, 5.0)?;
    let problems = [
        (
            "estimation",
            make_estimation_problem(6, &set, (0.5, 1.5), 11)?,
        ),
        ("l1", make_l1_problem(6, &set, 11)?),
    ];
    for (label, p) in problems {
        let mut ineq_worst = f64::INFINITY;
        let mut g_ratio: f64 = 0.0;
        let mut opt_worst = f64::INFINITY;
        for _ in 0..10 * TRIALS {
            let x = set.sample(rng);
            let y = set.sample(rng);
            let j = rng.gen_range(0..p.n_agents());
            let g = p.subgradient(j, &x);
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            ineq_worst =
                ineq_worst.min(p.local_value(j, &y) - p.local_value(j, &x) - dot(&g, &diff));
            g_ratio = g_ratio.max(norm(&g) / p.g_bound());
            opt_worst = opt_worst.min(p.value(&x) - p.optimal_value());
        }
        report.push(
            format!("subgradient inequality ({label})"),
            ineq_worst,
            1e-9,
            String::new(),
        );
        report.push(
            format!("subgradient bound G ({label})"),
            1.0 - g_ratio,
            1e-12,
            format!("max |g|/G = {g_ratio:.4}"),
        );
        report.push(
            format!("oracle optimality ({label})"),
            opt_worst,
            1e-9,
            String::new(),
        );
    }
    Ok(())
}

fn engine_run(
    problem: DistributedProblem,
    geometry: BregmanGeometry,
    network: GraphSchedule,
    tau: usize,
    horizon: usize,
    fault: Fault,
    seed: u64,
) -> Result<RunRecord> {
    let set = problem.set().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init: Vec<Vec<f64>> = (0..problem.n_agents())
        .map(|_| set.sample(&mut rng))
        .collect();
    let history = init.iter().map(|x| vec![x.clone(); tau]).collect();
    let setup = EngineSetup {
        problem,
        geometry,
        network,
        schedules: Schedules::new(
            PowerSchedule::inverse_sqrt(),
            PowerSchedule::inverse_sqrt(),
            tau,
        ),
        channel: Channel::Quantized { k: 5 },
        fault,
    };
    initialize(setup, init, history)?.run(horizon)
}

fn engine_checks(report: &mut ValidationReport, fault: Fault) -> Result<()> {
    let cube = FeasibleSet::cube(10, 100.0)?;
    let simplex = FeasibleSet::entropy_simplex(3)?;
    let mut records = Vec::new();
    for tau in [0, 5] {
        records.push(engine_run(
            make_estimation_problem(30, &cube, (0.5, 1.5), 1)?,
            BregmanGeometry::euclidean(),
            make_metropolis_sequence(30, 0.2, 10, 1)?,
            tau,
            200,
            fault,
            1,
        )?);
    }
    records.push(engine_run(
        make_estimation_problem(3, &simplex, (0.5, 1.5), 2)?,
        BregmanGeometry::negative_entropy(&simplex)?,
        make_gossip_cycle(3, &ring_edges(3), 0.5)?,
        2,
        200,
        fault,
        2,
    )?);
    for monitor in Monitor::ALL {
        let worst = records
            .iter()
            .map(|r| r.stat(monitor).worst_excess)
            .fold(f64::NEG_INFINITY, f64::max);
        let count: u64 = records.iter().map(|r| r.stat(monitor).violations).sum();
        let first = records
            .iter()
            .flat_map(|r| r.violations.iter())
            .find(|v| v.monitor == monitor)
            .map(|v| format!(", first at t = {} agent {}", v.t, v.agent))
            .unwrap_or_default();
        report.push(
            format!("engine monitor: {monitor}"),
            -worst,
            MONITOR_TOL,
            format!("{count} violations{first}"),
        );
    }
    let margin = records
        .iter()
        .map(|r| consensus_profile(r).min_margin())
        .fold(f64::INFINITY, f64::min);
    report.push("consensus envelope", margin, MONITOR_TOL, String::new());
    Ok(())
}

/// Runs every module's invariant checks and a set of short engine runs.
pub fn validate_suite(options: ValidateOptions) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let levels = if options.fault == Fault::SingleLevelQuantizer {
        1
    } else {
        5
    };
    geometry_checks(&mut report, &mut rng)?;
    quantizer_checks(&mut report, &mut rng, levels)?;
    network_checks(&mut report)?;
    problem_checks(&mut report, &mut rng)?;
    engine_checks(&mut report, options.fault)?;
    Ok(report)
}

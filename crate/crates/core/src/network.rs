//! Time-varying communication schedules with doubly stochastic weights.
//!
//! Every schedule shipped here is periodic: `P(t) = matrices[t mod period]`.
//! Agents are indexed from 0. An entry `P[i][j] > 0` with `i != j` means agent
//! `i` receives from agent `j` at that step.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row and column sums must be within this of 1.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Dense row-major square matrix with a cached sparse view of its rows.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    data: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl WeightMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::InvalidParameter(
                "matrix must have at least one row".into(),
            ));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
        Ok(Self::from_dense(n, rows.into_iter().flatten().collect()))
    }

    fn from_dense(n: usize, data: Vec<f64>) -> Self {
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter_map(|j| {
                        let v = data[i * n + j];
                        (v != 0.0).then_some((j, v))
                    })
                    .collect()
            })
            .collect();
        WeightMatrix { n, data, rows }
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::from_dense(n, data)
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    /// Nonzero entries of row `i` as `(column, weight)`.
    pub fn row_entries(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// `self * rhs`, skipping the zero entries of `self`.
    pub fn mul(&self, rhs: &WeightMatrix) -> WeightMatrix {
        let n = self.n;
        let mut data = vec![0.0; n * n];
        for (i, row) in self.rows.iter().enumerate() {
            let out = &mut data[i * n..(i + 1) * n];
            for &(k, w) in row {
                for (o, r) in out.iter_mut().zip(&rhs.data[k * n..(k + 1) * n]) {
                    *o += w * r;
                }
            }
        }
        Self::from_dense(n, data)
    }

    /// Number of directed links `j -> i` (`i != j`) carrying a message.
    pub fn message_count(&self) -> usize {
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| r.iter().filter(|(j, w)| *j != i && *w > 0.0).count())
            .sum()
    }

    fn min_positive(&self) -> f64 {
        self.data
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Outcome of the doubly-stochastic test for one matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticityReport {
    pub passed: bool,
    /// Largest `|row or column sum - 1|`.
    pub max_deviation: f64,
    pub min_entry: f64,
}

pub fn check_doubly_stochastic(p: &WeightMatrix) -> StochasticityReport {
    let n = p.n;
    let mut max_deviation: f64 = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| p.get(i, j)).sum();
        let col: f64 = (0..n).map(|j| p.get(j, i)).sum();
        max_deviation = max_deviation.max((row - 1.0).abs()).max((col - 1.0).abs());
    }
    let min_entry = p.data.iter().copied().fold(f64::INFINITY, f64::min);
    StochasticityReport {
        passed: max_deviation <= STOCHASTIC_TOL && min_entry >= 0.0,
        max_deviation,
        min_entry,
    }
}

/// Geometric mixing constants `omega = (1 - theta/(4N^2))^-2` and
/// `gamma = (1 - theta/(4N^2))^(1/B)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixingConstants {
    pub omega: f64,
    pub gamma: f64,
}

impl MixingConstants {
    pub fn new(n_agents: usize, theta: f64, b_window: usize) -> Self {
        let base = 1.0 - theta / (4.0 * (n_agents * n_agents) as f64);
        MixingConstants {
            omega: base.powi(-2),
            gamma: base.powf(1.0 / b_window as f64),
        }
    }

    /// `omega * gamma^steps`.
    pub fn envelope(&self, steps: usize) -> f64 {
        self.omega * self.gamma.powf(steps as f64)
    }
}

/// How a schedule was produced; enough to rebuild it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Pairwise averaging over each edge of the base graph in turn.
    GossipCycle { edges: Vec<(usize, usize)> },
    /// Gossip cycle over the ring `0-1-...-(N-1)-0`.
    RingGossip,
    /// `period` random graphs with Metropolis weights, repeated cyclically.
    MetropolisSequence {
        seed: u64,
        edge_prob: f64,
        period: usize,
    },
    /// Metropolis weights on a fixed graph.
    MetropolisStatic { edges: Vec<(usize, usize)> },
    /// Explicit matrices, repeated cyclically.
    Explicit { matrices: Vec<Vec<Vec<f64>>> },
}

impl GeneratorSpec {
    pub fn build(&self, n_agents: usize) -> Result<GraphSchedule> {
        match self {
            GeneratorSpec::GossipCycle { edges } => make_gossip_cycle(n_agents, edges, 0.5),
            GeneratorSpec::RingGossip => make_gossip_cycle(n_agents, &ring_edges(n_agents), 0.5),
            GeneratorSpec::MetropolisSequence {
                seed,
                edge_prob,
                period,
            } => make_metropolis_sequence(n_agents, *edge_prob, *period, *seed),
            GeneratorSpec::MetropolisStatic { edges } => make_metropolis_static(n_agents, edges),
            GeneratorSpec::Explicit { matrices } => {
                let mats = matrices
                    .iter()
                    .map(|m| WeightMatrix::from_rows(m.clone()))
                    .collect::<Result<Vec<_>>>()?;
                if mats.iter().any(|m| m.size() != n_agents) {
                    return Err(Error::Network(format!(
                        "explicit matrices must be {n_agents} x {n_agents}"
                    )));
                }
                GraphSchedule::from_matrices(mats)
            }
        }
    }
}

/// A certified periodic sequence of weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSchedule {
    n_agents: usize,
    matrices: Vec<WeightMatrix>,
    b_window: usize,
    theta: f64,
    generator: GeneratorSpec,
}

impl GraphSchedule {
    /// Validates an explicit periodic sequence and certifies the smallest
    /// connectivity window `B <= period` that works.
    pub fn from_matrices(matrices: Vec<WeightMatrix>) -> Result<Self> {
        let generator = GeneratorSpec::Explicit {
            matrices: matrices.iter().map(|m| m.to_rows()).collect(),
        };
        Self::certify(matrices, None, generator)
    }

    fn certify(
        matrices: Vec<WeightMatrix>,
        b_window: Option<usize>,
        generator: GeneratorSpec,
    ) -> Result<Self> {
        let n_agents = matrices
            .first()
            .ok_or_else(|| Error::Network("schedule needs at least one matrix".into()))?
            .size();
        for (t, m) in matrices.iter().enumerate() {
            if m.size() != n_agents {
                return Err(Error::DimensionMismatch {
                    expected: n_agents,
                    got: m.size(),
                });
            }
            let report = check_doubly_stochastic(m);
            if !report.passed {
                return Err(Error::Network(format!(
                    "matrix {t} is not doubly stochastic (deviation {:e}, min entry {})",
                    report.max_deviation, report.min_entry
                )));
            }
            if let Some(j) = (0..n_agents).find(|&j| m.get(j, j) <= 0.0) {
                return Err(Error::Network(format!(
                    "matrix {t} has zero self-weight at agent {j}"
                )));
            }
        }
        let theta = matrices
            .iter()
            .map(WeightMatrix::min_positive)
            .fold(f64::INFINITY, f64::min);
        let mut schedule = GraphSchedule {
            n_agents,
            matrices,
            b_window: 1,
            theta,
            generator,
        };
        let period = schedule.period();
        let candidates: Vec<usize> = match b_window {
            Some(b) => vec![b],
            None => (1..=period).collect(),
        };
        for b in candidates {
            schedule.b_window = b;
            if check_b_connectivity(&schedule, b * period + b)?.passed {
                return Ok(schedule);
            }
        }
        Err(Error::Network(
            "union graph is not strongly connected over any window".into(),
        ))
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn b_window(&self) -> usize {
        self.b_window
    }

    /// Smallest positive entry over every matrix, self-weights included.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn period(&self) -> usize {
        self.matrices.len()
    }

    pub fn generator(&self) -> &GeneratorSpec {
        &self.generator
    }

    pub fn matrix(&self, t: usize) -> &WeightMatrix {
        &self.matrices[t % self.matrices.len()]
    }

    pub fn mixing_constants(&self) -> MixingConstants {
        MixingConstants::new(self.n_agents, self.theta, self.b_window)
    }

    pub fn to_file_format(&self) -> ScheduleFile {
        ScheduleFile {
            n_agents: self.n_agents,
            b_window: self.b_window,
            theta: self.theta,
            generator: self.generator.clone(),
        }
    }
}

/// `[(0,1), (1,2), ..., (N-1,0)]`; a single edge for `N = 2`, none for `N = 1`.
pub fn ring_edges(n_agents: usize) -> Vec<(usize, usize)> {
    match n_agents {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        n => (0..n).map(|i| (i, (i + 1) % n)).collect(),
    }
}

fn validate_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<()> {
    if n_agents == 0 {
        return Err(Error::InvalidParameter("need at least one agent".into()));
    }
    for &(i, j) in edges {
        if i >= n_agents || j >= n_agents || i == j {
            return Err(Error::Network(format!(
                "invalid edge ({i}, {j}) for {n_agents} agents"
            )));
        }
    }
    let mut adj = vec![Vec::new(); n_agents];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    if reachable_count(&adj, 0) != n_agents {
        return Err(Error::Network("base graph is disconnected".into()));
    }
    Ok(())
}

fn reachable_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
    }
    count
}

/// Cycles through the pairwise-averaging matrices `I - (e_i - e_j)(e_i - e_j)^T / 2`
/// over `base_edges` in order. `theta` is the requested lower bound on positive
/// weights; the schedule records the realised one (1/2, or 1 for a single agent).
pub fn make_gossip_cycle(
    n_agents: usize,
    base_edges: &[(usize, usize)],
    theta: f64,
) -> Result<GraphSchedule> {
    if !(theta > 0.0 && theta <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "theta {theta} must lie in (0, 1/2]"
        )));
    }
    validate_edges(n_agents, base_edges)?;
    let matrices: Vec<WeightMatrix> = if base_edges.is_empty() {
        vec![WeightMatrix::identity(n_agents)]
    } else {
        base_edges
            .iter()
            .map(|&(i, j)| {
                let mut rows = WeightMatrix::identity(n_agents).to_rows();
                rows[i][i] = 0.5;
                rows[j][j] = 0.5;
                rows[i][j] = 0.5;
                rows[j][i] = 0.5;
                WeightMatrix::from_rows(rows).expect("square by construction")
            })
            .collect()
    };
    let b = matrices.len();
    GraphSchedule::certify(
        matrices,
        Some(b),
        GeneratorSpec::GossipCycle {
            edges: base_edges.to_vec(),
        },
    )
}

fn metropolis_matrix(n_agents: usize, edges: &[(usize, usize)]) -> WeightMatrix {
    let mut degree = vec![0usize; n_agents];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut rows = vec![vec![0.0; n_agents]; n_agents];
    for &(i, j) in edges {
        let w = 1.0 / (1 + degree[i].max(degree[j])) as f64;
        rows[i][j] = w;
        rows[j][i] = w;
    }
    for (i, row) in rows.iter_mut().enumerate() {
        let off: f64 = row.iter().sum();
        row[i] = 1.0 - off;
    }
    WeightMatrix::from_rows(rows).expect("square by construction")
}

/// Metropolis weights on a fixed connected graph (a static schedule, `B = 1`).
pub fn make_metropolis_static(n_agents: usize, edges: &[(usize, usize)]) -> Result<GraphSchedule> {
    validate_edges(n_agents, edges)?;
    GraphSchedule::certify(
        vec![metropolis_matrix(n_agents, edges)],
        Some(1),
        GeneratorSpec::MetropolisStatic {
            edges: edges.to_vec(),
        },
    )
}

/// `period` Erdos-Renyi graphs `G(N, edge_prob)` with Metropolis weights. The
/// whole sequence is redrawn until the union of the period is connected, so
/// `B = period` always certifies.
pub fn make_metropolis_sequence(
    n_agents: usize,
    edge_prob: f64,
    period: usize,
    seed: u64,
) -> Result<GraphSchedule> {
    if n_agents == 0 || period == 0 {
        return Err(Error::InvalidParameter(
            "need at least one agent and one period slot".into(),
        ));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "edge probability {edge_prob} outside (0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let slots: Vec<Vec<(usize, usize)>> = (0..period)
            .map(|_| {
                let mut edges = Vec::new();
                for i in 0..n_agents {
                    for j in i + 1..n_agents {
                        if rng.gen::<f64>() < edge_prob {
                            edges.push((i, j));
                        }
                    }
                }
                edges
            })
            .collect();
        let union: Vec<(usize, usize)> = slots.iter().flatten().copied().collect();
        if validate_edges(n_agents, &union).is_err() {
            continue;
        }
        let matrices = slots
            .iter()
            .map(|e| metropolis_matrix(n_agents, e))
            .collect();
        return GraphSchedule::certify(
            matrices,
            Some(period),
            GeneratorSpec::MetropolisSequence {
                seed,
                edge_prob,
                period,
            },
        );
    }
    Err(Error::Network(format!(
        "no connected union after 1000 draws (N = {n_agents}, p = {edge_prob}, period = {period})"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectivityReport {
    pub passed: bool,
    pub windows_checked: usize,
    pub first_failing_window: Option<usize>,
}

/// For every window `c` with `(c+1)B <= horizon`, checks that the union of the
/// edge sets of `P(cB+1), ..., P((c+1)B)` is strongly connected.
pub fn check_b_connectivity(
    schedule: &GraphSchedule,
    horizon: usize,
) -> Result<ConnectivityReport> {
    let b = schedule.b_window;
    if horizon < b {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} shorter than B = {b}"
        )));
    }
    let n = schedule.n_agents;
    let windows = horizon / b;
    for c in 0..windows {
        let mut forward = vec![Vec::new(); n];
        let mut backward = vec![Vec::new(); n];
        for t in c * b + 1..=(c + 1) * b {
            let p = schedule.matrix(t);
            for i in 0..n {
                for &(j, w) in p.row_entries(i) {
                    if j != i && w > 0.0 {
                        forward[j].push(i);
                        backward[i].push(j);
                    }
                }
            }
        }
        if reachable_count(&forward, 0) != n || reachable_count(&backward, 0) != n {
            return Ok(ConnectivityReport {
                passed: false,
                windows_checked: c + 1,
                first_failing_window: Some(c),
            });
        }
    }
    Ok(ConnectivityReport {
        passed: true,
        windows_checked: windows,
        first_failing_window: None,
    })
}

/// `P(m, n) = P(m) P(m-1) ... P(n)`, with `P(n-1, n) = I`.
pub fn transition_product(schedule: &GraphSchedule, m: usize, n: usize) -> Result<WeightMatrix> {
    if m + 1 < n {
        return Err(Error::InvalidParameter(format!(
            "transition product needs m >= n - 1 (got m = {m}, n = {n})"
        )));
    }
    let mut acc = WeightMatrix::identity(schedule.n_agents);
    for s in n..=m {
        acc = schedule.matrix(s).mul(&acc);
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingReport {
    /// `max |[P(m,n)]_ij - 1/N| / (omega gamma^(m-n))`.
    pub worst_ratio: f64,
    /// `(m, n, i, j)` attaining the worst ratio.
    pub argmax: (usize, usize, usize, usize),
    pub products_checked: usize,
}

/// Exhaustive check of the geometric mixing bound over `1 <= n <= m <= horizon`.
pub fn mixing_check(schedule: &GraphSchedule, horizon: usize) -> MixingReport {
    let constants = schedule.mixing_constants();
    let n_agents = schedule.n_agents;
    let uniform = 1.0 / n_agents as f64;
    let mut report = MixingReport {
        worst_ratio: 0.0,
        argmax: (0, 0, 0, 0),
        products_checked: 0,
    };
    for start in 1..=horizon {
        let mut acc = WeightMatrix::identity(n_agents);
        for end in start..=horizon {
            acc = schedule.matrix(end).mul(&acc);
            let envelope = constants.envelope(end - start);
            for i in 0..n_agents {
                for j in 0..n_agents {
                    let ratio = (acc.get(i, j) - uniform).abs() / envelope;
                    if ratio > report.worst_ratio {
                        report.worst_ratio = ratio;
                        report.argmax = (end, start, i, j);
                    }
                }
            }
            report.products_checked += 1;
        }
    }
    report
}

/// On-disk description of a schedule. Loading rebuilds the matrices from the
/// generator and rejects files whose recorded `N`, `B` or `theta` disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub n_agents: usize,
    pub b_window: usize,
    pub theta: f64,
    pub generator: GeneratorSpec,
}

impl ScheduleFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schedule file serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn build(&self) -> Result<GraphSchedule> {
        let schedule = self.generator.build(self.n_agents)?;
        if schedule.b_window != self.b_window || (schedule.theta - self.theta).abs() > 1e-12 {
            return Err(Error::Network(format!(
                "file records B = {}, theta = {}, generator yields B = {}, theta = {}",
                self.b_window, self.theta, schedule.b_window, schedule.theta
            )));
        }
        Ok(schedule)
    }
}

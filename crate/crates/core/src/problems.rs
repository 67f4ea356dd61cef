//! Objective families with exact subgradients, analytic bounds `G` and a
//! centralized reference solver.
//!
//! The global objective is `f(x) = sum_j f_j(x)`. Agents only ever see their
//! own `f_j`. The estimation family folds the `1/N` of its objective
//! `(1/N) sum_j a_j ||x - b_j||^2` into the local functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::geometry::FeasibleSet;
use crate::vecops::{dist, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    /// `f_j(x) = (a_j / N) ||x - b_j||^2`.
    Estimation,
    /// `f_j(x) = ||x - b_j||_1`.
    L1,
}

/// How the reference optimum was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum OracleStatus {
    ClosedForm,
    /// Iterative fallback; `gap` is the last observed improvement of the best value.
    Approximate {
        iterations: usize,
        gap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub x_star: Vec<f64>,
    pub value: f64,
    pub status: OracleStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedProblem {
    kind: ProblemKind,
    set: FeasibleSet,
    coeffs: Vec<f64>,
    targets: Vec<Vec<f64>>,
    g_bound: f64,
    oracle: OracleResult,
}

/// `f_j(x) = (a_j / N) ||x - b_j||^2` with `a_j ~ U(coeff_range)` and `b_j` uniform in
/// `set`. With a box, `G` is attained at the corner farthest from some `b_j`.
pub fn make_estimation_problem(
    n_agents: usize,
    set: &FeasibleSet,
    coeff_range: (f64, f64),
    seed: u64,
) -> Result<DistributedProblem> {
    let (lo, hi) = coeff_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "coefficient range [{lo}, {hi}] must be positive"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs = (0..n_agents)
        .map(|_| if lo == hi { lo } else { rng.gen_range(lo..hi) })
        .collect();
    let targets = (0..n_agents).map(|_| set.sample(&mut rng)).collect();
    DistributedProblem::new(ProblemKind::Estimation, set.clone(), coeffs, targets)
}

/// `f_j(x) = ||x - b_j||_1` with `b_j` uniform in `set`; `G = sqrt(dim)`.
pub fn make_l1_problem(
    n_agents: usize,
    set: &FeasibleSet,
    seed: u64,
) -> Result<DistributedProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets = (0..n_agents).map(|_| set.sample(&mut rng)).collect();
    DistributedProblem::new(ProblemKind::L1, set.clone(), vec![1.0; n_agents], targets)
}

impl DistributedProblem {
    /// Builds a problem from explicit data. For [`ProblemKind::L1`] the
    /// coefficients must all be 1.
    pub fn new(
        kind: ProblemKind,
        set: FeasibleSet,
        coeffs: Vec<f64>,
        targets: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidParameter("need at least one agent".into()));
        }
        check_dim(targets.len(), coeffs.len())?;
        let dim = set.dim();
        for b in &targets {
            check_dim(dim, b.len())?;
        }
        if let Some(a) = coeffs.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
            return Err(Error::InvalidParameter(format!(
                "coefficient {a} must be positive"
            )));
        }
        if kind == ProblemKind::L1 && coeffs.iter().any(|a| *a != 1.0) {
            return Err(Error::InvalidParameter("l1 problems are unweighted".into()));
        }
        let n_agents = targets.len() as f64;
        let g_bound = match kind {
            ProblemKind::Estimation => coeffs
                .iter()
                .zip(&targets)
                .map(|(a, b)| 2.0 * a / n_agents * dist(&farthest_point(&set, b), b))
                .fold(0.0, f64::max),
            ProblemKind::L1 => (dim as f64).sqrt(),
        };
        let mut problem = DistributedProblem {
            kind,
            set,
            coeffs,
            targets,
            g_bound,
            oracle: OracleResult {
                x_star: Vec::new(),
                value: f64::NAN,
                status: OracleStatus::ClosedForm,
            },
        };
        problem.oracle = centralized_oracle(&problem);
        Ok(problem)
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn n_agents(&self) -> usize {
        self.targets.len()
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn targets(&self) -> &[Vec<f64>] {
        &self.targets
    }

    /// Analytic `G = sup_{x in X, j} ||g_j(x)||`.
    pub fn g_bound(&self) -> f64 {
        self.g_bound
    }

    pub fn optimizer(&self) -> &[f64] {
        &self.oracle.x_star
    }

    pub fn optimal_value(&self) -> f64 {
        self.oracle.value
    }

    pub fn oracle(&self) -> &OracleResult {
        &self.oracle
    }

    pub fn local_value(&self, j: usize, x: &[f64]) -> f64 {
        let b = &self.targets[j];
        match self.kind {
            ProblemKind::Estimation => {
                self.coeffs[j] / self.n_agents() as f64
                    * x.iter()
                        .zip(b)
                        .map(|(xi, bi)| (xi - bi).powi(2))
                        .sum::<f64>()
            }
            ProblemKind::L1 => x.iter().zip(b).map(|(xi, bi)| (xi - bi).abs()).sum(),
        }
    }

    /// `f(x) = sum_j f_j(x)`.
    pub fn value(&self, x: &[f64]) -> f64 {
        (0..self.n_agents()).map(|j| self.local_value(j, x)).sum()
    }

    /// Writes a subgradient of `f_j` at `x` into `out`. The sign tie at zero is
    /// broken to 0.
    pub fn subgradient_into(&self, j: usize, x: &[f64], out: &mut [f64]) {
        let b = &self.targets[j];
        match self.kind {
            ProblemKind::Estimation => {
                let a2 = 2.0 * self.coeffs[j] / self.n_agents() as f64;
                for ((o, xi), bi) in out.iter_mut().zip(x).zip(b) {
                    *o = a2 * (xi - bi);
                }
            }
            ProblemKind::L1 => {
                for ((o, xi), bi) in out.iter_mut().zip(x).zip(b) {
                    let diff = xi - bi;
                    *o = if diff > 0.0 {
                        1.0
                    } else if diff < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    pub fn subgradient(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.subgradient_into(j, x, &mut out);
        out
    }

    /// A feasible point at which some agent's subgradient norm reaches `G`
    /// (quadratic only; the L1 bound need not be attained).
    pub fn g_maximizer(&self) -> Option<Vec<f64>> {
        if self.kind != ProblemKind::Estimation {
            return None;
        }
        self.coeffs
            .iter()
            .zip(&self.targets)
            .map(|(a, b)| {
                let p = farthest_point(&self.set, b);
                (a * dist(&p, b), p)
            })
            .max_by(|l, r| l.0.total_cmp(&r.0))
            .map(|(_, p)| p)
    }
}

/// The point of `set` farthest (Euclidean) from `b`: a box corner, or a
/// vertex of the floored simplex.
fn farthest_point(set: &FeasibleSet, b: &[f64]) -> Vec<f64> {
    match set {
        FeasibleSet::Box { lower, upper } => b
            .iter()
            .zip(lower.iter().zip(upper))
            .map(|(bi, (l, u))| if (u - bi) >= (bi - l) { *u } else { *l })
            .collect(),
        FeasibleSet::Simplex { dim, floor } => (0..*dim)
            .map(|k| {
                let mut v = vec![*floor; *dim];
                v[k] = 1.0 - (*dim as f64 - 1.0) * floor;
                v
            })
            .max_by(|l, r| dist(l, b).total_cmp(&dist(r, b)))
            .expect("simplex has at least one vertex"),
    }
}

/// Lower median of `values` (the minimiser set of `sum |x - v|` contains it).
fn lower_median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values[(values.len() - 1) / 2]
}

const FALLBACK_MAX_ITERS: usize = 1_000_000;
const FALLBACK_REL_TOL: f64 = 1e-10;

/// Reference optimum of `sum_j f_j` over the problem's feasible set.
///
/// The quadratic family reduces to projecting the weighted centroid
/// `sum a_j b_j / sum a_j` onto the set. The L1 family on a box separates into
/// clamped coordinate medians. L1 on a simplex falls back to projected
/// subgradient descent.
pub fn centralized_oracle(problem: &DistributedProblem) -> OracleResult {
    let set = &problem.set;
    let dim = set.dim();
    let closed = |x_star: Vec<f64>| OracleResult {
        value: problem.value(&x_star),
        x_star,
        status: OracleStatus::ClosedForm,
    };
    match (problem.kind, set) {
        (ProblemKind::Estimation, _) => {
            let total: f64 = problem.coeffs.iter().sum();
            let mut centroid = vec![0.0; dim];
            for (a, b) in problem.coeffs.iter().zip(&problem.targets) {
                for (c, bi) in centroid.iter_mut().zip(b) {
                    *c += a * bi / total;
                }
            }
            closed(
                set.euclidean_project(&centroid)
                    .expect("dimension checked at construction"),
            )
        }
        (ProblemKind::L1, FeasibleSet::Box { lower, upper }) => {
            let x_star = (0..dim)
                .map(|k| {
                    let mut column: Vec<f64> = problem.targets.iter().map(|b| b[k]).collect();
                    lower_median(&mut column).clamp(lower[k], upper[k])
                })
                .collect();
            closed(x_star)
        }
        (ProblemKind::L1, FeasibleSet::Simplex { .. }) => projected_subgradient(problem),
    }
}

fn projected_subgradient(problem: &DistributedProblem) -> OracleResult {
    let set = &problem.set;
    let n = problem.n_agents();
    let dim = set.dim();
    let mut x = set
        .euclidean_project(&vec![0.0; dim])
        .expect("dimension checked");
    let mut best = x.clone();
    let mut best_value = problem.value(&x);
    let mut checkpoint = best_value;
    let mut g = vec![0.0; dim];
    let mut g_j = vec![0.0; dim];
    let window = 10_000;
    for it in 1..=FALLBACK_MAX_ITERS {
        g.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..n {
            problem.subgradient_into(j, &x, &mut g_j);
            for (a, b) in g.iter_mut().zip(&g_j) {
                *a += b;
            }
        }
        let step = 1.0 / (n as f64 * (it as f64).sqrt());
        let shifted: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
        x = set.euclidean_project(&shifted).expect("dimension checked");
        let v = problem.value(&x);
        if v < best_value {
            best_value = v;
            best.clone_from(&x);
        }
        if it % window == 0 {
            let gap = checkpoint - best_value;
            if gap <= FALLBACK_REL_TOL * best_value.abs().max(1e-300) {
                return OracleResult {
                    x_star: best,
                    value: best_value,
                    status: OracleStatus::Approximate {
                        iterations: it,
                        gap,
                    },
                };
            }
            checkpoint = best_value;
        }
    }
    OracleResult {
        x_star: best,
        value: best_value,
        status: OracleStatus::Approximate {
            iterations: FALLBACK_MAX_ITERS,
            gap: checkpoint - best_value,
        },
    }
}

/// Largest `||g_j(x)|| / G` over `samples` uniform feasible points and all agents.
pub fn subgradient_bound_check<R: Rng + ?Sized>(
    problem: &DistributedProblem,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let mut g = vec![0.0; problem.dim()];
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = problem.set.sample(rng);
        for j in 0..problem.n_agents() {
            problem.subgradient_into(j, &x, &mut g);
            worst = worst.max(norm(&g) / problem.g_bound);
        }
    }
    worst
}

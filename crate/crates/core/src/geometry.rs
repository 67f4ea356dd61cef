//! Bregman geometries, feasible sets, and the closed-form mirror steps used by
//! every agent update.
//!
//! Two distance-generating functions are supported:
//!
//! * `Euclidean`: `phi(x) = ||x||^2 / 2`, so `V(a, b) = ||a - b||^2 / 2` and the
//!   mirror step is the Euclidean projection of `anchor - eta * g`.
//! * `NegativeEntropy`: `phi(x) = sum x_k ln x_k` on a simplex whose
//!   coordinates are bounded below by a positive floor. The floor keeps the
//!   gradient of `phi` Lipschitz (constant `1 / floor`) and the divergence
//!   bounded. The mirror step is a clipped exponentiated-gradient update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::vecops::{dist, dot};

/// Interior mixing weight used for entropy simplices: every coordinate is at
/// least `ENTROPY_EPSILON / dim`.
pub const ENTROPY_EPSILON: f64 = 1e-6;

/// Tolerance used when deciding whether an input point lies in a set.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Euclidean,
    NegativeEntropy,
}

/// Nonempty compact convex feasible set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeasibleSet {
    /// Axis-aligned box `lower <= x <= upper`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x : sum x = 1, x_k >= floor}`. A zero floor gives the full simplex.
    Simplex { dim: usize, floor: f64 },
}

impl FeasibleSet {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidParameter(
                "box must have dimension >= 1".into(),
            ));
        }
        for (k, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite()) || l > u {
                return Err(Error::InvalidParameter(format!(
                    "box coordinate {k}: lower {l} must not exceed upper {u}"
                )));
            }
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    /// The cube `[-half_width, half_width]^dim`.
    pub fn cube(dim: usize, half_width: f64) -> Result<Self> {
        Self::new_box(vec![-half_width; dim], vec![half_width; dim])
    }

    pub fn simplex(dim: usize, floor: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "simplex must have dimension >= 1".into(),
            ));
        }
        if !(0.0..=1.0 / dim as f64).contains(&floor) {
            return Err(Error::InvalidParameter(format!(
                "simplex floor {floor} outside [0, 1/{dim}]"
            )));
        }
        Ok(FeasibleSet::Simplex { dim, floor })
    }

    /// Simplex restricted to the interior region used with the entropy geometry.
    pub fn entropy_simplex(dim: usize) -> Result<Self> {
        Self::simplex(dim, ENTROPY_EPSILON / dim.max(1) as f64)
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Simplex { dim, .. } => *dim,
        }
    }

    /// Largest constraint violation of `x`; zero for feasible points.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match self {
            FeasibleSet::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(xi, (l, u))| (l - xi).max(xi - u).max(0.0))
                .fold(0.0, f64::max),
            FeasibleSet::Simplex { floor, .. } => {
                let below = x.iter().map(|xi| (floor - xi).max(0.0)).fold(0.0, f64::max);
                below.max((x.iter().sum::<f64>() - 1.0).abs())
            }
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim() && self.violation(x) <= tol
    }

    /// Euclidean projection `argmin_{b in set} ||b - y||`.
    pub fn euclidean_project(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), y.len())?;
        Ok(match self {
            FeasibleSet::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| v.clamp(*l, *u))
                .collect(),
            FeasibleSet::Simplex { dim, floor } => {
                let mass = 1.0 - *dim as f64 * floor;
                let shifted: Vec<f64> = y.iter().map(|v| v - floor).collect();
                project_onto_scaled_simplex(&shifted, mass)
                    .into_iter()
                    .map(|v| v + floor)
                    .collect()
            }
        })
    }

    /// Draws a point from the set (uniform on boxes, flat Dirichlet on simplices).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            FeasibleSet::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..=*u) })
                .collect(),
            FeasibleSet::Simplex { dim, floor } => {
                let e: Vec<f64> = (0..*dim).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
                let s: f64 = e.iter().sum();
                let mass = 1.0 - *dim as f64 * floor;
                e.iter().map(|v| floor + mass * v / s).collect()
            }
        }
    }
}

/// Projection onto `{v >= 0, sum v = mass}` by the sort-and-threshold rule.
fn project_onto_scaled_simplex(y: &[f64], mass: f64) -> Vec<f64> {
    if mass <= 0.0 {
        return vec![0.0; y.len()];
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        cumsum += v;
        let candidate = (cumsum - mass) / (i + 1) as f64;
        if v - candidate > 0.0 {
            shift = candidate;
        }
    }
    y.iter().map(|v| (v - shift).max(0.0)).collect()
}

/// A distance-generating function together with its analytic constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BregmanGeometry {
    pub kind: GeometryKind,
    /// Strong-convexity modulus of `phi` over the feasible set.
    pub sigma_phi: f64,
    /// Lipschitz constant of `grad phi` over the feasible set.
    pub l_phi: f64,
}

/// Uniform bound on the divergence over the feasible set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceBudget {
    /// `sup_{x,y} V(x, y)`, analytic.
    pub d_phi: f64,
    /// `sqrt(2 d_phi / sigma_phi)`, an upper bound on the set diameter.
    pub diameter: f64,
    /// Largest divergence seen over the sampled pairs.
    pub sampled_max: f64,
}

impl BregmanGeometry {
    pub fn euclidean() -> Self {
        BregmanGeometry {
            kind: GeometryKind::Euclidean,
            sigma_phi: 1.0,
            l_phi: 1.0,
        }
    }

    /// Negative entropy on a floored simplex. The modulus is 1 because every
    /// coordinate is at most 1; the gradient Lipschitz constant is `1 / floor`.
    pub fn negative_entropy(set: &FeasibleSet) -> Result<Self> {
        match set {
            FeasibleSet::Simplex { floor, .. } if *floor > 0.0 => Ok(BregmanGeometry {
                kind: GeometryKind::NegativeEntropy,
                sigma_phi: 1.0,
                l_phi: 1.0 / floor,
            }),
            FeasibleSet::Simplex { .. } => Err(Error::InvalidParameter(
                "entropy geometry needs a simplex with a positive floor".into(),
            )),
            FeasibleSet::Box { .. } => Err(Error::InvalidParameter(
                "entropy geometry is only supported on simplices".into(),
            )),
        }
    }

    /// Builds the geometry of the given kind for `set`.
    pub fn for_set(kind: GeometryKind, set: &FeasibleSet) -> Result<Self> {
        match kind {
            GeometryKind::Euclidean => Ok(Self::euclidean()),
            GeometryKind::NegativeEntropy => Self::negative_entropy(set),
        }
    }

    fn check_positive(&self, x: &[f64], what: &str) -> Result<()> {
        if self.kind == GeometryKind::NegativeEntropy {
            if let Some(v) = x.iter().find(|v| !(**v > 0.0)) {
                return Err(Error::Domain(format!(
                    "entropy geometry needs strictly positive {what}, found {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn phi(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            GeometryKind::Euclidean => Ok(0.5 * dot(x, x)),
            GeometryKind::NegativeEntropy => {
                if let Some(v) = x.iter().find(|v| !(**v >= 0.0)) {
                    return Err(Error::Domain(format!("negative coordinate {v}")));
                }
                Ok(x.iter()
                    .map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 })
                    .sum())
            }
        }
    }

    pub fn grad_phi(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.kind {
            GeometryKind::Euclidean => Ok(x.to_vec()),
            GeometryKind::NegativeEntropy => {
                self.check_positive(x, "point")?;
                Ok(x.iter().map(|v| 1.0 + v.ln()).collect())
            }
        }
    }

    /// `V(a, b) = phi(a) - phi(b) - <grad phi(b), a - b>`.
    pub fn bregman_divergence(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        check_dim(a.len(), b.len())?;
        match self.kind {
            GeometryKind::Euclidean => Ok(0.5 * dist(a, b).powi(2)),
            GeometryKind::NegativeEntropy => {
                self.check_positive(b, "second argument")?;
                if let Some(v) = a.iter().find(|v| !(**v >= 0.0)) {
                    return Err(Error::Domain(format!("negative coordinate {v}")));
                }
                let v: f64 = a
                    .iter()
                    .zip(b)
                    .map(|(&ai, &bi)| {
                        let log_term = if ai > 0.0 { ai * (ai / bi).ln() } else { 0.0 };
                        log_term - ai + bi
                    })
                    .sum();
                // Rounding can push an exact zero slightly negative.
                Ok(v.max(0.0))
            }
        }
    }

    /// `V(a, b) - V(a, c)` without forming either divergence, which avoids
    /// cancellation when `b` and `c` are close.
    pub fn divergence_difference(&self, a: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
        check_dim(a.len(), b.len())?;
        check_dim(a.len(), c.len())?;
        match self.kind {
            GeometryKind::Euclidean => Ok(0.5
                * a.iter()
                    .zip(b.iter().zip(c))
                    .map(|(ai, (bi, ci))| (ci - bi) * (2.0 * ai - bi - ci))
                    .sum::<f64>()),
            GeometryKind::NegativeEntropy => {
                self.check_positive(b, "second argument")?;
                self.check_positive(c, "third argument")?;
                Ok(a.iter()
                    .zip(b.iter().zip(c))
                    .map(|(ai, (bi, ci))| ai * (ci / bi).ln() + bi - ci)
                    .sum())
            }
        }
    }

    /// `argmin_{x in set} <g, x> + V(x, anchor) / eta`.
    pub fn mirror_step(
        &self,
        set: &FeasibleSet,
        anchor: &[f64],
        g: &[f64],
        eta: f64,
    ) -> Result<Vec<f64>> {
        let n = set.dim();
        check_dim(n, anchor.len())?;
        check_dim(n, g.len())?;
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stepsize {eta} must be positive"
            )));
        }
        let violation = set.violation(anchor);
        if violation > FEASIBILITY_TOL {
            return Err(Error::Infeasible { violation });
        }
        let out = match self.kind {
            GeometryKind::Euclidean => {
                let shifted: Vec<f64> = anchor.iter().zip(g).map(|(a, gi)| a - eta * gi).collect();
                set.euclidean_project(&shifted)?
            }
            GeometryKind::NegativeEntropy => {
                self.check_positive(anchor, "anchor")?;
                let floor = match set {
                    FeasibleSet::Simplex { floor, .. } => *floor,
                    FeasibleSet::Box { .. } => {
                        return Err(Error::InvalidParameter(
                            "entropy geometry is only supported on simplices".into(),
                        ))
                    }
                };
                clipped_exponentiated_step(anchor, g, eta, floor)
            }
        };
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("non-finite coordinate in mirror step".into()));
        }
        let violation = set.violation(&out);
        if violation > FEASIBILITY_TOL {
            return Err(Error::Solver(format!(
                "mirror step left the feasible set (violation {violation:e})"
            )));
        }
        Ok(out)
    }

    /// `(eta / sigma) ||g2 - g1|| - ||step(g2) - step(g1)||`; never below
    /// rounding noise for a correct prox mapping.
    pub fn prox_nonexpansiveness_gap(
        &self,
        set: &FeasibleSet,
        anchor: &[f64],
        g1: &[f64],
        g2: &[f64],
        eta: f64,
    ) -> Result<f64> {
        let x1 = self.mirror_step(set, anchor, g1, eta)?;
        let x2 = self.mirror_step(set, anchor, g2, eta)?;
        Ok(eta / self.sigma_phi * dist(g2, g1) - dist(&x2, &x1))
    }

    /// Analytic `D_phi` for the supported (geometry, set) pairs, plus the
    /// largest divergence over `samples` random points (all ordered pairs).
    pub fn divergence_budget<R: Rng + ?Sized>(
        &self,
        set: &FeasibleSet,
        samples: usize,
        rng: &mut R,
    ) -> Result<DivergenceBudget> {
        if samples == 0 {
            return Err(Error::InvalidParameter("samples must be >= 1".into()));
        }
        let d_phi = match (self.kind, set) {
            (GeometryKind::Euclidean, FeasibleSet::Box { lower, upper }) => {
                0.5 * dist(upper, lower).powi(2)
            }
            // Both divergences are jointly convex, so the supremum sits on a
            // pair of distinct vertices of the floored simplex.
            (GeometryKind::Euclidean, FeasibleSet::Simplex { dim, floor }) => {
                if *dim < 2 {
                    0.0
                } else {
                    (1.0 - *dim as f64 * floor).powi(2)
                }
            }
            (GeometryKind::NegativeEntropy, FeasibleSet::Simplex { dim, floor }) => {
                if *dim < 2 {
                    0.0
                } else {
                    let high = 1.0 - (*dim as f64 - 1.0) * floor;
                    (high - floor) * (high / floor).ln()
                }
            }
            (GeometryKind::NegativeEntropy, FeasibleSet::Box { .. }) => {
                return Err(Error::InvalidParameter(
                    "entropy geometry is only supported on simplices".into(),
                ))
            }
        };
        let points: Vec<Vec<f64>> = (0..samples).map(|_| set.sample(rng)).collect();
        let mut sampled_max: f64 = 0.0;
        for a in &points {
            for b in &points {
                sampled_max = sampled_max.max(self.bregman_divergence(a, b)?);
            }
        }
        Ok(DivergenceBudget {
            d_phi,
            diameter: (2.0 * d_phi / self.sigma_phi).sqrt(),
            sampled_max,
        })
    }
}

/// Exact minimiser of `eta <g, x> + KL(x || anchor)` over `{sum x = 1, x >= floor}`.
/// KKT gives `x_k = max(floor, c * anchor_k * exp(-eta g_k))` for a scalar `c`.
fn clipped_exponentiated_step(anchor: &[f64], g: &[f64], eta: f64, floor: f64) -> Vec<f64> {
    let n = anchor.len();
    let mass = 1.0 - n as f64 * floor;
    if mass <= 1e-15 {
        return vec![floor; n];
    }
    let logs: Vec<f64> = anchor
        .iter()
        .zip(g)
        .map(|(a, gi)| a.ln() - eta * gi)
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[j].total_cmp(&w[i]));

    // Grow the unclipped set in order of decreasing weight until the scale
    // is consistent with the clipped remainder.
    let mut scale = 1.0 / w.iter().sum::<f64>();
    let mut head = 0.0;
    for m in 1..=n {
        head += w[order[m - 1]];
        let c = (1.0 - (n - m) as f64 * floor) / head;
        let last_free = c * w[order[m - 1]] >= floor;
        let next_clipped = m == n || c * w[order[m]] <= floor;
        if last_free && next_clipped {
            scale = c;
            break;
        }
    }
    w.iter().map(|wi| (scale * wi).max(floor)).collect()
}

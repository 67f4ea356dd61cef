//! Brute-force grid oracle shared by the oracle tests and the acceptance suite.
#![allow(dead_code)]

use qmirror::geometry::FeasibleSet;
use qmirror::problems::DistributedProblem;

/// Best grid point and the grid spacing. Boxes use `m` points per axis; the
/// 3-simplex uses the barycentric lattice with step `1/(m-1)`.
pub fn grid_minimizer(problem: &DistributedProblem, m: usize) -> (Vec<f64>, f64) {
    let mut best = (f64::INFINITY, Vec::new());
    let mut consider = |x: Vec<f64>| {
        let v = problem.value(&x);
        if v < best.0 {
            best = (v, x);
        }
    };
    let spacing = match problem.set() {
        FeasibleSet::Box { lower, upper } => {
            let dim = lower.len();
            let total = m.pow(dim as u32);
            for flat in 0..total {
                let mut rest = flat;
                let x = (0..dim)
                    .map(|k| {
                        let i = rest % m;
                        rest /= m;
                        lower[k] + (upper[k] - lower[k]) * i as f64 / (m - 1) as f64
                    })
                    .collect();
                consider(x);
            }
            lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) / (m - 1) as f64)
                .fold(0.0, f64::max)
        }
        FeasibleSet::Simplex { dim, floor } => {
            assert_eq!(*dim, 3, "grid oracle supports the 3-simplex only");
            let h = 1.0 / (m - 1) as f64;
            for i in 0..m {
                for j in 0..m - i {
                    let a = i as f64 * h;
                    let b = j as f64 * h;
                    let x = vec![a, b, (1.0 - a - b).max(0.0)];
                    if x.iter().all(|v| *v >= *floor) {
                        consider(x);
                    }
                }
            }
            h
        }
    };
    (best.1, spacing)
}

mod common;

use qmirror::geometry::FeasibleSet;
use qmirror::problems::{make_estimation_problem, make_l1_problem, subgradient_bound_check};
use qmirror::vecops::norm_inf;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::grid_minimizer;

#[test]
fn l1_matches_fine_grid() {
    let set = FeasibleSet::cube(2, 1.0).unwrap();
    let p = make_l1_problem(5, &set, 3).unwrap();
    let (x_grid, h) = grid_minimizer(&p, 400);
    let gap: Vec<f64> = x_grid
        .iter()
        .zip(p.optimizer())
        .map(|(a, b)| a - b)
        .collect();
    assert!(
        norm_inf(&gap) <= h,
        "oracle {:?} vs grid {x_grid:?}",
        p.optimizer()
    );
    assert!(p.optimal_value() <= p.value(&x_grid) + 1e-12);
}

#[test]
fn estimation_matches_grid_on_simplex() {
    let set = FeasibleSet::simplex(3, 0.0).unwrap();
    let p = make_estimation_problem(6, &set, (0.5, 1.5), 8).unwrap();
    let (x_grid, h) = grid_minimizer(&p, 301);
    let gap: Vec<f64> = x_grid
        .iter()
        .zip(p.optimizer())
        .map(|(a, b)| a - b)
        .collect();
    assert!(norm_inf(&gap) <= h);
}

#[test]
fn thirty_agent_bound_holds_under_sampling() {
    let set = FeasibleSet::cube(10, 100.0).unwrap();
    let p = make_estimation_problem(30, &set, (0.5, 1.5), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ratio = subgradient_bound_check(&p, 10_000, &mut rng);
    assert!(ratio <= 1.0);
}

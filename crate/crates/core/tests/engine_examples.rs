use std::path::PathBuf;

use qmirror::engine::{
    consensus_profile, descent_inequality_slack, initialize, Channel, Engine, EngineSetup, Fault,
    Monitor, PowerSchedule, Schedules,
};
use qmirror::geometry::{BregmanGeometry, FeasibleSet};
use qmirror::harness::RunConfig;
use qmirror::network::{make_gossip_cycle, ring_edges, GraphSchedule, WeightMatrix};
use qmirror::problems::{make_estimation_problem, DistributedProblem, ProblemKind};
use qmirror::Error;

fn sqrt_schedules(tau: usize) -> Schedules {
    Schedules::new(
        PowerSchedule::inverse_sqrt(),
        PowerSchedule::inverse_sqrt(),
        tau,
    )
}

fn toy_setup(tau: usize, channel: Channel) -> EngineSetup {
    let set = FeasibleSet::cube(2, 4.0).unwrap();
    EngineSetup {
        problem: make_estimation_problem(3, &set, (0.5, 1.5), 9).unwrap(),
        geometry: BregmanGeometry::euclidean(),
        network: make_gossip_cycle(3, &ring_edges(3), 0.5).unwrap(),
        schedules: sqrt_schedules(tau),
        channel,
        fault: Fault::None,
    }
}

fn toy_engine(tau: usize, channel: Channel) -> Engine {
    let init = vec![vec![3.0, -2.0], vec![-4.0, 1.0], vec![0.5, 4.0]];
    let history = init.iter().map(|x| vec![x.clone(); tau]).collect();
    initialize(toy_setup(tau, channel), init, history).unwrap()
}

fn experiments_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../experiments")
}

#[test]
fn zero_delay_takes_empty_history() {
    let engine = toy_engine(0, Channel::Quantized { k: 5 });
    assert!(engine.agents().iter().all(|a| a.history.is_empty()));
    assert!(engine.agents().iter().all(|a| a.x == a.z));
}

#[test]
fn bad_initial_data_is_rejected() {
    let outside = vec![vec![9.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]];
    let err = initialize(toy_setup(0, Channel::Perfect), outside, vec![vec![]; 3]).unwrap_err();
    assert!(matches!(err, Error::Infeasible { .. }));

    let init = vec![vec![0.0, 0.0]; 3];
    let short = vec![vec![vec![0.0, 0.0]]; 3];
    assert!(initialize(toy_setup(2, Channel::Perfect), init, short).is_err());
}

#[test]
fn shared_start_has_zero_consensus() {
    let init = vec![vec![1.0, 1.0]; 3];
    let engine = initialize(toy_setup(0, Channel::Perfect), init, vec![vec![]; 3]).unwrap();
    assert_eq!(engine.consensus(), 0.0);
}

#[test]
fn single_agent_is_projected_subgradient() {
    let set = FeasibleSet::cube(3, 1.0).unwrap();
    let b = vec![2.0, -0.3, 0.4];
    let problem = DistributedProblem::new(
        ProblemKind::Estimation,
        set.clone(),
        vec![1.0],
        vec![b.clone()],
    )
    .unwrap();
    let network = GraphSchedule::from_matrices(vec![WeightMatrix::identity(1)]).unwrap();
    let schedules = sqrt_schedules(0);
    let setup = EngineSetup {
        problem,
        geometry: BregmanGeometry::euclidean(),
        network,
        schedules,
        channel: Channel::Perfect,
        fault: Fault::None,
    };
    let mut x = vec![-1.0, 1.0, 0.0];
    let mut engine = initialize(setup, vec![x.clone()], vec![vec![]]).unwrap();
    for t in 0..300 {
        engine.step().unwrap();
        let alpha = schedules.alpha.at(t + 1);
        x = x
            .iter()
            .zip(&b)
            .map(|(xi, bi)| (xi - alpha * 2.0 * (xi - bi)).clamp(-1.0, 1.0))
            .collect();
        let got = &engine.agents()[0].x;
        for (g, e) in got.iter().zip(&x) {
            assert!((g - e).abs() <= 1e-12, "round {t}: {got:?} vs {x:?}");
        }
    }
}

#[test]
fn perfect_channel_keeps_z_equal_to_x() {
    let mut engine = toy_engine(2, Channel::Perfect);
    for _ in 0..50 {
        let diag = engine.step().unwrap();
        assert!(diag.quant_err.iter().all(|e| *e == 0.0));
        assert!(engine.agents().iter().all(|a| a.x == a.z));
    }
}

#[test]
fn one_round_average_is_the_state() {
    let mut engine = toy_engine(1, Channel::Quantized { k: 5 });
    let record = engine.run(1).unwrap();
    for (avg, agent) in record.ergodic.iter().zip(engine.agents()) {
        assert_eq!(avg, &agent.x);
    }
}

#[test]
fn runs_are_deterministic() {
    let a = toy_engine(3, Channel::Quantized { k: 5 }).run(150).unwrap();
    let b = toy_engine(3, Channel::Quantized { k: 5 }).run(150).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_subgradient_slack_is_zero() {
    let geom = BregmanGeometry::euclidean();
    let set = FeasibleSet::cube(2, 1.0).unwrap();
    let anchor = vec![0.3, -0.2];
    let next = geom.mirror_step(&set, &anchor, &[0.0, 0.0], 0.7).unwrap();
    assert_eq!(next, anchor);
    // The G^2 eta / 2 sigma term is the only thing left; with G = 0 the slack is 0.
    let slack = descent_inequality_slack(&geom, 0.0, &anchor, &next, &[0.0, 0.0], 0.7, &[1.0, 1.0])
        .unwrap();
    assert_eq!(slack, 0.0);
}

#[test]
fn toy_run_satisfies_every_monitor() {
    for tau in [0, 3] {
        let record = toy_engine(tau, Channel::Quantized { k: 5 })
            .run(200)
            .unwrap();
        assert!(record.passed(), "{:?}", record.violations.first());
        assert!(record.stat(Monitor::DescentSlack).checks >= 600);
        assert!(record.steps.iter().all(|s| s.slack_min >= -1e-8));
    }
}

#[test]
fn toy_consensus_stays_under_envelope() {
    let record = toy_engine(0, Channel::Quantized { k: 5 }).run(100).unwrap();
    let profile = consensus_profile(&record);
    assert_eq!(profile.measured.len(), 100);
    assert!(profile.holds(), "margin {}", profile.min_margin());
}

#[test]
fn stationary_agents_never_disagree() {
    let set = FeasibleSet::cube(2, 4.0).unwrap();
    let b = vec![1.0, -1.0];
    let problem = DistributedProblem::new(
        ProblemKind::Estimation,
        set,
        vec![1.0; 3],
        vec![b.clone(); 3],
    )
    .unwrap();
    let setup = EngineSetup {
        problem,
        ..toy_setup(0, Channel::Perfect)
    };
    let record = initialize(setup, vec![b; 3], vec![vec![]; 3])
        .unwrap()
        .run(50)
        .unwrap();
    assert!(record.steps.iter().all(|s| s.consensus == 0.0));
}

#[test]
fn thirty_agent_config_loads() {
    let config = RunConfig::read(&experiments_dir().join("estimation_tau5.toml")).unwrap();
    let mut engine = config.build_engine(Fault::None).unwrap();
    assert_eq!(engine.agents().len(), 30);
    assert_eq!(engine.agents()[0].x.len(), 10);
    assert_eq!(engine.agents()[0].history.len(), 5);
    let record = engine.run(20).unwrap();
    assert!(record.passed());
}

use wbqp::active_set::SolverConfig;
use wbqp::harness::*;

fn scenario(name: &str) -> Scenario {
    Scenario::builtin(name).unwrap()
}

#[test]
fn equilibrium_stand_is_quiet() {
    let tr = run_scenario(&scenario("stand")).unwrap();
    assert_eq!(tr.steps.len(), 2000);
    for s in &tr.steps {
        assert!(s.zmp_err < 1e-6, "t={} err={}", s.t, s.zmp_err);
        assert!(s.floating_residual < 1e-8);
    }
    assert!(tr.steps[1..].iter().all(|s| s.iterations == 1 && !s.failover));
}

#[test]
fn balance_shift_converges_and_respects_limits() {
    let sc = scenario("balance");
    let shift_t = sc.balance.as_ref().unwrap().shifts[0][0];
    let tr = run_scenario(&sc).unwrap();
    for s in &tr.steps {
        assert!(s.floating_residual < 1e-8);
        assert!(s.cone_violation < 1e-10);
        assert_eq!(s.tau_violation, 0.0);
    }
    // within 2 s of the shift the ZMP sits within 5% of the 5 cm step
    for s in tr.steps.iter().filter(|s| s.t >= shift_t + 2.0) {
        assert!(s.zmp_err < 2.5e-3, "t={} err={}", s.t, s.zmp_err);
    }
    let summary = tr.summary();
    assert!(summary.single_iteration_fraction >= 0.9);
    let from_hist = *summary.histogram.get(&1).unwrap_or(&0) as f64 / summary.steps as f64;
    assert!(summary.single_iteration_fraction <= from_hist);
    assert!((0.0..=1.0).contains(&summary.single_iteration_fraction));
}

#[test]
fn walk_completes_with_clusters_at_contact_switches() {
    let sc = scenario("walk");
    let tr = run_scenario(&sc).unwrap();
    assert_eq!(tr.steps.len(), sc.steps());
    let switches: Vec<usize> = (1..tr.steps.len())
        .filter(|&i| tr.steps[i].contacts != tr.steps[i - 1].contacts)
        .collect();
    assert!(switches.len() >= 8, "only {} switches", switches.len());
    for (i, s) in tr.steps.iter().enumerate() {
        assert!(s.floating_residual < 1e-8);
        assert!(s.cone_violation < 1e-10);
        if i > 0 && (s.iterations > 1 || s.failover) {
            let near = switches.iter().any(|&k| i >= k && i - k <= 100);
            assert!(near, "multi-iteration step {i} far from any contact switch");
        }
    }
    let f = tr.single_iteration_fraction();
    assert!((0.0..=1.0).contains(&f));
}

#[test]
fn identical_scenarios_give_identical_traces() {
    let sc = scenario("push");
    let a = run_scenario(&sc).unwrap();
    let b = run_scenario(&sc).unwrap();
    assert_eq!(a.to_csv(false), b.to_csv(false));
    let mut other = sc.clone();
    other.seed += 1;
    let c = run_scenario(&other).unwrap();
    assert_ne!(a.to_csv(false), c.to_csv(false));
}

#[test]
fn iter_limit_fails_over_without_aborting() {
    let mut sc = scenario("balance");
    sc.solver_config.iter_max = 1;
    let tr = run_scenario(&sc).unwrap();
    assert_eq!(tr.steps.len(), sc.steps());
    assert!(tr.failovers() > 0);
    for s in tr.steps.iter().filter(|s| s.failover) {
        assert!(s.floating_residual < 1e-8);
        assert!(s.kkt < 1e-6);
    }
}

#[test]
fn crippled_actuators_abort_with_dump() {
    // the robot collapses under near-zero torque until both solvers give up
    let mut sc = scenario("stand");
    sc.controller.tau_limit = Some(1e-3);
    sc.controller.eta_bound = 1e-3;
    match run_scenario(&sc) {
        Err(HarnessError::Abort { step, t, dump, .. }) => {
            assert!(step > 0 && step < sc.steps());
            assert!((t - step as f64 * sc.dt).abs() < 1e-12);
            assert!(dump.contains("# rows") && dump.contains("inputs joint=0 upper"));
        }
        other => panic!("expected abort, got {:?}", other.map(|t| t.steps.len())),
    }
}

#[test]
fn torque_forward_stand_stays_upright() {
    let mut sc = scenario("stand");
    sc.integration = IntegrationMode::TorqueForward;
    let tr = run_scenario(&sc).unwrap();
    let last = tr.steps.last().unwrap();
    assert!(last.zmp_err < 1e-3, "{}", last.zmp_err);
}

#[test]
fn interior_point_solver_runs_closed_loop() {
    let mut sc = scenario("stand");
    sc.duration = 0.2;
    sc.solver = SolverKind::InteriorPoint;
    let tr = run_scenario(&sc).unwrap();
    assert_eq!(tr.solver, "interior-point");
    assert!(tr.steps.iter().all(|s| s.iterations > 1 && s.zmp_err < 1e-5));
}

#[test]
fn identical_qps_replay_in_one_iteration() {
    let mut sc = scenario("stand");
    sc.duration = 0.05;
    let mut seq = record_sequence(&sc).unwrap();
    let first = seq.steps[0].clone();
    seq.steps = vec![first; 30];
    let out = replay(&seq, ReplaySolver::ActiveSetWarm, &SolverConfig::default(), false).unwrap();
    assert!(out[1..].iter().all(|s| s.iterations == 1));
    assert!(out.windows(2).all(|w| w[0].z == w[1].z));
}

#[test]
fn replay_matches_closed_loop() {
    let mut sc = scenario("push");
    sc.duration = 0.5;
    let tr = run_scenario(&sc).unwrap();
    let seq = record_sequence(&sc).unwrap();
    let out = replay(&seq, ReplaySolver::ActiveSetWarm, &sc.solver_config(), false).unwrap();
    assert_eq!(out.len(), tr.steps.len());
    for (r, s) in out.iter().zip(&tr.steps) {
        assert_eq!(r.iterations, s.iterations);
    }
}

#[test]
fn structured_and_dense_replays_agree() {
    let mut sc = scenario("walk");
    sc.duration = 2.2;
    let seq = record_sequence(&sc).unwrap();
    let cfg = sc.solver_config();
    let a = replay(&seq, ReplaySolver::ActiveSetWarm, &cfg, false).unwrap();
    let b = replay(&seq, ReplaySolver::ActiveSetWarm, &cfg, true).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((&x.z - &y.z).amax() < 1e-9);
    }
}

#[test]
fn frictionless_parameterizations_match() {
    let mut sc = scenario("push");
    sc.duration = 1.0;
    sc.controller.mu = Some(0.0);
    let cmp = compare_friction(&sc, &[0, 1]).unwrap();
    assert_eq!(cmp.gv_multi, cmp.st_multi);
    assert_eq!(cmp.gv_histogram, cmp.st_histogram);
    assert_eq!(cmp.ratio, 1.0);
}

#[test]
fn dump_qp_returns_requested_step() {
    let sc = scenario("stand");
    let qp = qp_at_step(&sc, 3).unwrap().unwrap();
    assert_eq!(qp.qp.n_eq(), qp.eq_tags.len());
    assert!(qp_at_step(&sc, 1_000_000).unwrap().is_none());
}

#[test]
fn bench_table_has_all_solvers() {
    let mut sc = scenario("stand");
    sc.duration = 0.1;
    let rows = benchmark(&sc).unwrap();
    assert_eq!(rows.len(), 3);
    let csv = bench_csv(&rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("solver,steps,mean_us"));
}

#[test]
fn scenario_files_are_validated() {
    let bad = "name = \"w\"\nmode = \"walk\"\nduration = 1.0\n";
    assert!(matches!(Scenario::from_toml(bad), Err(HarnessError::Config(_))));
    let bad_dt = "name = \"b\"\nduration = 1.0\ndt = 0.0\n[balance]\nbase_z = 0.8\n";
    assert!(Scenario::from_toml(bad_dt).is_err());
    let typo = "name = \"b\"\nduration = 1.0\n[balance]\nbase_z = 0.8\nshfits = []\n";
    assert!(Scenario::from_toml(typo).is_err());
}

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wbqp::active_set::{self, SolverConfig, WarmStartState};
use wbqp::batch;
use wbqp::harness::{record_sequence, replay, run_scenario, ReplaySolver, Scenario};
use wbqp::reference::{interior_point_solve, random_feasible_qp, InteriorPointConfig};

fn sequence_solvers(c: &mut Criterion) {
    let mut sc = Scenario::builtin("walk").unwrap();
    sc.duration = 2.0;
    let seq = record_sequence(&sc).unwrap();
    let cfg = sc.solver_config();
    let mut g = c.benchmark_group("walk-sequence");
    g.sample_size(10);
    for s in ReplaySolver::ALL {
        g.bench_function(BenchmarkId::new("replay", s.label()), |b| {
            b.iter(|| replay(&seq, s, &cfg, false).unwrap())
        });
    }
    g.bench_function(BenchmarkId::new("replay", "active-set-warm-dense"), |b| {
        b.iter(|| replay(&seq, ReplaySolver::ActiveSetWarm, &cfg, true).unwrap())
    });
    g.finish();
}

fn random_qps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let qps: Vec<_> = (0..2000).map(|_| random_feasible_qp(&mut rng, 8, 3, 6)).collect();
    let cfg = SolverConfig {
        iter_max: 100,
        ..SolverConfig::default()
    };
    let ip = InteriorPointConfig::default();
    let mut g = c.benchmark_group("random-qp-batch");
    g.bench_function("active-set/parallel", |b| {
        b.iter(|| batch::map(&qps, |q| active_set::solve(q, &WarmStartState::cold(), &cfg).unwrap()))
    });
    g.bench_function("active-set/sequential", |b| {
        b.iter(|| batch::map_seq(&qps, |q| active_set::solve(q, &WarmStartState::cold(), &cfg).unwrap()))
    });
    g.bench_function("interior-point/parallel", |b| {
        b.iter(|| batch::map(&qps, |q| interior_point_solve(q, &ip)))
    });
    g.bench_function("interior-point/sequential", |b| {
        b.iter(|| batch::map_seq(&qps, |q| interior_point_solve(q, &ip)))
    });
    g.finish();
}

fn scenario_seeds(c: &mut Criterion) {
    let mut sc = Scenario::builtin("push").unwrap();
    sc.duration = 1.0;
    let runs: Vec<Scenario> = (0..8)
        .map(|seed| Scenario { seed, ..sc.clone() })
        .collect();
    let mut g = c.benchmark_group("push-seeds");
    g.sample_size(10);
    g.bench_function("parallel", |b| {
        b.iter_batched(|| runs.clone(), |r| batch::map(&r, |s| run_scenario(s).unwrap()), BatchSize::LargeInput)
    });
    g.bench_function("sequential", |b| {
        b.iter_batched(|| runs.clone(), |r| batch::map_seq(&r, |s| run_scenario(s).unwrap()), BatchSize::LargeInput)
    });
    g.finish();
}

criterion_group!(benches, sequence_solvers, random_qps, scenario_seeds);
criterion_main!(benches);

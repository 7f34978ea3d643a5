use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mpc_bounds::cmpc::{
    feasible_region_grid, suboptimality_map, ConstrainedProblem, GridSpec, TerminalDesign, TerminalGain,
};
use mpc_bounds::par::Exec;
use mpc_bounds::{HPolytope, LqSystem, Matrix, SymMatrix};

fn problem() -> ConstrainedProblem {
    let sys = LqSystem::new(
        Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
        SymMatrix::identity(2),
        SymMatrix::identity(1),
    )
    .unwrap();
    ConstrainedProblem::new(
        sys,
        HPolytope::symmetric_box(&[5.0, 5.0]).unwrap(),
        HPolytope::symmetric_box(&[1.0]).unwrap(),
    )
    .unwrap()
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn region(c: &mut Criterion) {
    let prob = problem();
    let design = TerminalDesign::zeta(&prob, 50.0, TerminalGain::ZetaProblem).unwrap();
    let spec = GridSpec::over(prob.state_set(), 51).unwrap();
    let mut g = c.benchmark_group("feasible_region_51x51");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(feasible_region_grid(&prob, &design, 3, &spec, exec).unwrap()))
        });
    }
    g.finish();
}

fn submap(c: &mut Criterion) {
    let prob = problem();
    let design = TerminalDesign::zeta(&prob, 50.0, TerminalGain::ZetaProblem).unwrap();
    let spec = GridSpec::over(prob.state_set(), 15).unwrap();
    let mut g = c.benchmark_group("suboptimality_map_15x15");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(suboptimality_map(&prob, &design, 3, &spec, exec).unwrap()))
        });
    }
    g.finish();
}

fn volume(c: &mut Criterion) {
    let cube = HPolytope::symmetric_box(&[1.0, 2.0, 0.5, 1.5]).unwrap();
    let mut g = c.benchmark_group("monte_carlo_volume_200k");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(cube.monte_carlo_volume(200_000, 1, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, region, submap, volume);
criterion_main!(benches);

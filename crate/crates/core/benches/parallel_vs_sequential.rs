use std::path::Path;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dualgs::par::Execution;
use dualgs::scenario::ScenarioConfig;
use dualgs::sdp::SolveOptions;
use dualgs::synthesis::{dual_problem, line_search, robust_lqr_search, stage_estimate, stage_initial, HyperGrid};
use dualgs::validate::{coverage_test, ValidationConfig};

fn desk() -> ScenarioConfig {
    ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/configs/desk.toml")).unwrap()
}

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn coverage(c: &mut Criterion) {
    let s = desk();
    let sys = s.true_system().unwrap();
    let alg = s.algorithm(SolveOptions::default(), Execution::Parallel).unwrap();
    let mut g = c.benchmark_group("coverage_100_trials");
    for (name, exec) in MODES {
        let cfg = ValidationConfig { n_trials: 100, execution: exec, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| coverage_test(&sys, &alg.initial_input_cov, &cfg).unwrap()));
    }
    g.finish();
}

fn search(c: &mut Criterion) {
    let s = desk();
    let sys = s.true_system().unwrap();
    let alg = s.algorithm(SolveOptions::default(), Execution::Parallel).unwrap();
    let est = stage_estimate(&alg, &stage_initial(&alg, &sys, 1).unwrap()).unwrap();
    let problem = {
        let ed = dual_problem(&alg, &est, nalgebra::DMatrix::zeros(1, 2)).unwrap().ed;
        let t: Vec<f64> = alg.k0_t_e_rel.iter().map(|t| t * alg.sigma_w * alg.sigma_w).collect();
        let k0 = robust_lqr_search(&ed, &t, &alg.solver, Execution::Parallel).unwrap().k0;
        dual_problem(&alg, &est, k0).unwrap()
    };
    let grid = HyperGrid { eps: vec![0.5, 1.0], t_e_rel: vec![0.3, 1.0], lambda_s: vec![10.0, 100.0], lambda_u: vec![10.0, 100.0] };
    let points = grid.points(alg.sigma_w);
    let mut g = c.benchmark_group("line_search_16_points");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| line_search(&problem, &points, &alg.solver, exec)));
    }
    g.finish();
}

criterion_group!(benches, coverage, search);
criterion_main!(benches);

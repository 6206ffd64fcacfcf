//! Acceptance suite on the two-state desk example. Prints one PASS/FAIL
//! line per criterion and exits non-zero if any fails.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dualgs::estimate::{chi2_quantile, info_matrix, parameter_dof, Dataset, InfoMatrix};
use dualgs::lmi::{analysis_lmi_fixed, covariance_lower_bound, s2_fixed, s2_gain_sched, s3_fixed, ExplorationData, GainSchedulingData};
use dualgs::matrix_kit::{is_definite, Sense, SymMatrix, STRICT_TOL};
use dualgs::par::Execution;
use dualgs::plant::{simulate, LtiSystem, Policy};
use dualgs::runner::{Runner, Stage, REPORT};
use dualgs::scenario::ScenarioConfig;
use dualgs::sdp::{solve, AffineMatrix, ConicProgram, LmiSense, SolveOptions};
use dualgs::seeds;
use dualgs::synthesis::{
    dare_gain, dual_problem, line_search, robust_lqr_search, run_algorithm1, AlgorithmConfig, DualProblem, StageTimings,
};
use dualgs::uncertainty::{delta_s_bound, info_bound, sample_delta};
use dualgs::validate::{
    binomial_threshold, certify_fixed, coverage_test, monte_carlo_pipelines, sampled_performance_report, ValidationConfig,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

type M = DMatrix<f64>;

const DESK: &str = "../cli/configs/desk.toml";

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn desk() -> ScenarioConfig {
    ScenarioConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join(DESK)).expect("bundled config")
}

fn desk_alg() -> (AlgorithmConfig, LtiSystem) {
    let s = desk();
    (s.algorithm(SolveOptions::default(), Execution::Parallel).unwrap(), s.true_system().unwrap())
}

fn randn<R: Rng>(rng: &mut R, r: usize, c: usize) -> M {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn rand_pd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> SymMatrix {
    let g = randn(rng, n, n);
    SymMatrix::new((&g * g.transpose() + DMatrix::identity(n, n) * 0.05) * scale).unwrap()
}

/// Information matrices of one identification run on the desk plant.
fn desk_infos(seed: u64) -> (InfoMatrix, InfoMatrix) {
    let (alg, sys) = desk_alg();
    let mut rng = seeds::stream(seed, "acceptance-infos", 0);
    let policy = Policy::random(2, alg.initial_input_cov.clone());
    let first = simulate(&sys, &policy, &DVector::zeros(2), alg.n0, &mut rng).unwrap();
    let second = simulate(&sys, &policy, first.last_state(), alg.horizon, &mut rng).unwrap();
    let c = chi2_quantile(parameter_dof(2, 1), alg.delta).unwrap();
    let d0 = info_matrix(&Dataset::from_trajectory(&first), 3, alg.sigma_w, c).unwrap();
    let all = Dataset::from_trajectory(&first).merged(&Dataset::from_trajectory(&second));
    let dt = info_matrix(&all, 3, alg.sigma_w, c).unwrap();
    (d0, dt)
}

fn criterion1() -> Outcome {
    let (alg, sys) = desk_alg();
    let t = Instant::now();
    let cfg = ValidationConfig { n_trials: 500, delta: 0.1, n0: 200, horizon: 1, seed: 101, ..Default::default() };
    let cov = coverage_test(&sys, &alg.initial_input_cov, &cfg).unwrap();
    let thr = binomial_threshold(0.9, 500, 2.0);
    let el = t.elapsed();
    outcome(cov.theta >= thr && el <= Duration::from_secs(120), format!("coverage {:.3} >= {thr:.3}, {:.1}s", cov.theta, el.as_secs_f64()))
}

fn criterion2() -> Outcome {
    let (d0, dt) = desk_infos(202);
    let mut rng = seeds::stream(202, "containment", 0);
    let b0 = info_bound(&d0, 2).unwrap();
    let bu = info_bound(&dt, 2).unwrap();
    let mut violations = 0;
    for eps in [0.25, 1.0, 4.0] {
        let bs = delta_s_bound(eps, &d0, &dt, 2).unwrap();
        for _ in 0..1000 {
            let delta0 = sample_delta(&b0, &mut rng, 0.5).unwrap();
            let delta_u = sample_delta(&bu, &mut rng, 0.5).unwrap();
            if !bs.contains(&-(delta0 + delta_u)).unwrap() {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations over 3x1000 pairs"))
}

fn example_gs() -> GainSchedulingData {
    let (alg, sys) = desk_alg();
    GainSchedulingData::new(sys.a.clone(), sys.b.clone(), alg.perf.clone()).unwrap()
}

fn criterion3() -> Outcome {
    let gs = example_gs();
    let mut rng = seeds::stream(303, "equivalence", 0);
    // A strictly feasible synthesis point, so that perturbations around it
    // exercise both verdicts.
    let ds0 = SymMatrix::scaled_identity(3, 1e3);
    let mut p = ConicProgram::new();
    let (nid, n) = p.symmetric("N", 2);
    let (mid, m) = p.rectangular("M", 1, 2);
    let (kid, ks) = p.rectangular("Ks", 1, 2);
    let ds_expr: AffineMatrix = (&ds0).into();
    p.add_lmi("S2", s2_gain_sched(&ks, &m, &n, 10.0, 10.0, &ds_expr, &ds_expr, &gs).unwrap(), LmiSense::Nsd, true);
    let (a, _) = solve(&p, &SolveOptions::default()).into_result().unwrap();
    let (n0, m0, ks0) = (a.get(nid).unwrap().clone(), a.get(mid).unwrap().clone(), a.get(kid).unwrap().clone());
    let (mut agree, mut neg) = (0, 0);
    for trial in 0..100 {
        let s = 10f64.powf(rng.random_range(-3.0..0.5));
        let ks = &ks0 + randn(&mut rng, 1, 2) * s;
        let m = &m0 + randn(&mut rng, 1, 2) * s;
        let n = SymMatrix::new(&n0 + rand_pd(&mut rng, 2, s).into_inner()).unwrap();
        let (ls, lu) = (10.0 * rng.random_range(0.5..2.0), 10.0 * rng.random_range(0.5..2.0));
        let (ds, dbar) = if trial % 2 == 0 {
            (ds0.scale(10f64.powf(rng.random_range(-1.0..1.0))), ds0.scale(10f64.powf(rng.random_range(-1.0..1.0))))
        } else {
            let (e1, e2) = (rng.random_range(0.0..4.0), rng.random_range(0.0..4.0));
            (rand_pd(&mut rng, 3, 10f64.powf(e1)), rand_pd(&mut rng, 3, 10f64.powf(e2)))
        };
        let s2 = s2_fixed(&ks, &m, &n, ls, lu, &ds, &dbar, &gs).unwrap();
        let x = n.inverse().unwrap();
        let k = &m * x.as_matrix();
        let an = analysis_lmi_fixed(&k, &ks, &x, ls, lu, &ds, &dbar, &gs).unwrap();
        let va = is_definite(&s2, Sense::Neg, STRICT_TOL).unwrap();
        let vb = is_definite(&an, Sense::Neg, STRICT_TOL).unwrap();
        agree += usize::from(va == vb);
        neg += usize::from(va);
    }
    outcome(agree == 100, format!("{agree}/100 verdicts agree ({neg} negative definite)"))
}

fn criterion4() -> Outcome {
    let mut rng = seeds::stream(404, "relaxation", 0);
    let (mut holds, mut worst_tight): (usize, f64) = (0, 0.0);
    for _ in 0..1000 {
        let w = rand_pd(&mut rng, 2, 0.1);
        let z = randn(&mut rng, 2, 1);
        let k0 = randn(&mut rng, 1, 2);
        let sigma = rand_pd(&mut rng, 1, 0.01);
        let winv = w.inverse().unwrap();
        let exact = |z: &M| {
            let mut e = DMatrix::zeros(3, 3);
            e.view_mut((0, 0), (2, 2)).copy_from(w.as_matrix());
            e.view_mut((0, 2), (2, 1)).copy_from(z);
            e.view_mut((2, 0), (1, 2)).copy_from(&z.transpose());
            e.view_mut((2, 2), (1, 1)).copy_from(&(z.transpose() * winv.as_matrix() * z + sigma.as_matrix()));
            e
        };
        let bound =
            |z: &M| covariance_lower_bound(&(&w).into(), &AffineMatrix::constant(z.clone()), &(&sigma).into(), &k0).unwrap().value();
        let ex = exact(&z);
        let gap = SymMatrix::new(&ex - bound(&z)).unwrap();
        if gap.min_eigenvalue().unwrap() >= -1e-9 * (1.0 + ex.norm()) {
            holds += 1;
        }
        let zt = w.as_matrix() * k0.transpose();
        worst_tight = worst_tight.max((exact(&zt) - bound(&zt)).norm());
    }
    outcome(holds == 1000 && worst_tight < 1e-9, format!("{holds}/1000 hold, tight residual {worst_tight:.2e}"))
}

fn criterion5() -> Outcome {
    let mut rng = seeds::stream(505, "woodbury", 0);
    let (mut agree, mut feasible) = (0, 0);
    for _ in 0..1000 {
        let eps = 10f64.powf(rng.random_range(-1.0..1.0));
        let d0 = rand_pd(&mut rng, 3, 1.0);
        let dbar = rand_pd(&mut rng, 3, 1.0);
        // Spread D_s around the boundary so both verdicts occur.
        let e = rng.random_range(-2.0..0.0);
        let ds = rand_pd(&mut rng, 3, 10f64.powf(e));
        let block = is_definite(&s3_fixed(eps, &d0, &dbar, &ds).unwrap(), Sense::Pos, STRICT_TOL).unwrap();
        let rhs = d0.inverse().unwrap().scale(1.0 + 1.0 / eps).add(&dbar.inverse().unwrap().scale(1.0 + eps)).unwrap();
        let direct = is_definite(&ds.inverse().unwrap().sub(&rhs).unwrap(), Sense::Pos, STRICT_TOL).unwrap();
        agree += usize::from(block == direct);
        feasible += usize::from(direct);
    }
    outcome(agree == 1000, format!("{agree}/1000 verdicts agree ({feasible} feasible)"))
}

fn criterion6() -> Outcome {
    let t = Instant::now();
    let (alg, sys) = desk_alg();
    let seed = desk().seeds.root;
    let run = match run_algorithm1(&alg, &sys, seed, &mut StageTimings::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("pipeline failed: {e}")),
    };
    let a = run.design.search.points.iter().any(|p| p.cost.is_some());
    let problem = dual_problem(&alg, &run.estimate, run.design.robust_lqr.k0.clone()).unwrap();
    let best = &run.design.search.best;
    let b = certify_fixed(best, &problem.gs, &alg.solver).is_ok();
    let vcfg = ValidationConfig { n_trials: 200, boundary_fraction: 1.0, seed: seed ^ 0x6c, ..Default::default() };
    let perf = sampled_performance_report(best, &problem.gs, &vcfg, &alg.solver).unwrap();
    let c = perf.failures.is_empty();
    let mc = monte_carlo_pipelines(&alg, &sys, 100, seed, Execution::Parallel).unwrap();
    let thr = binomial_threshold(1.0 - 2.0 * alg.delta, 100, 2.0);
    let d = mc.joint_fraction >= thr;
    let el = t.elapsed();
    let ok_time = el <= Duration::from_secs(15 * 60);
    outcome(
        a && b && c && d && ok_time,
        format!(
            "(a) optimal={a} (b) certified={b} (c) {}/200 boundary samples fail, worst margin {:.3e} (d) joint {:.2} (sets {:.2}, perf {:.2}) >= {thr:.2}; {:.0}s",
            perf.failures.len(),
            perf.worst_margin,
            mc.joint_fraction,
            mc.sets_fraction,
            mc.perf_fraction,
            el.as_secs_f64()
        ),
    )
}

fn criterion7() -> Outcome {
    let (alg, sys) = desk_alg();
    let run = run_algorithm1(&alg, &sys, 707, &mut StageTimings::default()).unwrap();
    let base_problem = dual_problem(&alg, &run.estimate, run.design.robust_lqr.k0.clone()).unwrap();
    let base = &run.design.search.best;
    let mut worst_gain: f64 = 0.0;
    let mut worst_cost: f64 = 0.0;
    for kappa in [0.5f64, 2.0] {
        let sigma_w = alg.sigma_w * kappa.sqrt();
        let ed = ExplorationData { sigma_w, ..base_problem.ed.clone() };
        let s2 = sigma_w * sigma_w;
        let k0 = robust_lqr_search(&ed, &alg.k0_t_e_rel.iter().map(|t| t * s2).collect::<Vec<_>>(), &alg.solver, alg.execution).unwrap().k0;
        let p = DualProblem { ed, k0, ..base_problem.clone() };
        let d = line_search(&p, &alg.grid.points(sigma_w), &alg.solver, alg.execution).unwrap().best;
        let rel = |a: &M, b: &M| (a - b).norm() / b.norm().max(1e-12);
        worst_gain = worst_gain.max(rel(&d.k, &base.k)).max(rel(&d.k_s, &base.k_s));
        worst_cost = worst_cost.max((d.exploration_cost / (kappa * base.exploration_cost) - 1.0).abs());
    }
    outcome(worst_gain <= 1e-4 && worst_cost <= 1e-3, format!("gain drift {worst_gain:.2e}, cost ratio error {worst_cost:.2e}"))
}

fn criterion8() -> Outcome {
    let (alg, _) = desk_alg();
    let opts = alg.solver.clone();
    let t_grid: Vec<f64> = alg.k0_t_e_rel.iter().map(|t| t * alg.sigma_w * alg.sigma_w).collect();
    let mut worst: f64 = 0.0;
    let cases = [
        (DMatrix::from_element(1, 1, 0.9), DMatrix::from_element(1, 1, 1.0)),
        (DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0])),
    ];
    for (a, b) in cases {
        let n = a.nrows();
        let q = SymMatrix::identity(n);
        let r = SymMatrix::identity(1);
        let ed =
            ExplorationData::new(a.clone(), b.clone(), SymMatrix::scaled_identity(n + 1, 1e6), q.clone(), r.clone(), alg.sigma_w).unwrap();
        let got = robust_lqr_search(&ed, &t_grid, &opts, Execution::Sequential).unwrap().k0;
        let want = dare_gain(&a, &b, q.as_matrix(), r.as_matrix()).unwrap();
        worst = worst.max((got - want).amax());
    }
    outcome(worst <= 1e-3, format!("max |K0 - K_dare| = {worst:.2e}"))
}

fn criterion9() -> Outcome {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut bytes = Vec::new();
    for d in &dirs {
        let mut s = desk();
        s.validation.samples = 20;
        s.validation.coverage_trials = 50;
        let r = Runner::new(s, d.path().to_path_buf(), Some(99), Execution::Parallel).unwrap();
        if let Err(e) = r.run(Stage::Full) {
            return outcome(false, format!("cmd_full failed: {e}"));
        }
        bytes.push(std::fs::read(d.path().join(REPORT)).unwrap());
    }
    outcome(bytes[0] == bytes[1], format!("report.json {} bytes, identical={}", bytes[0].len(), bytes[0] == bytes[1]))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("1 identification coverage", criterion1),
        ("2 composite error containment", criterion2),
        ("3 synthesis/analysis equivalence", criterion3),
        ("4 covariance bound relaxation", criterion4),
        ("5 S3 block vs inverse form", criterion5),
        ("6 end-to-end guarantee", criterion6),
        ("7 noise scaling", criterion7),
        ("8 robust LQR vs Riccati", criterion8),
        ("9 determinism of cmd_full", criterion9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|x| name.starts_with(x.as_str())) {
            continue;
        }
        let t = Instant::now();
        let o = f();
        println!("{} criterion {name}: {} [{:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

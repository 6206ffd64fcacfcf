//! Independent checks of a design: analysis-LMI certification, sampled
//! closed-loop performance, identification coverage, the covariance
//! approximation used for exploration, and full Monte Carlo pipelines.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{chi2_quantile, in_credibility_region, info_matrix, least_squares, parameter_dof, Dataset, Estimate, InfoMatrix};
use crate::lmi::{analysis_lmi, GainSchedulingData};
use crate::matrix_kit::{checked_inverse, SymMatrix};
use crate::par::{map_indexed, Execution};
use crate::plant::{quad_perf_lhs, simulate, simulate_with_noise, tail_energy_fraction, LtiSystem, PerfChannel, Policy};
use crate::sdp::{solve, AffineMatrix, ConicProgram, LmiSense, SolveOptions};
use crate::seeds;
use crate::synthesis::{run_algorithm1, AlgorithmConfig, DualDesign, StageTimings};
use crate::uncertainty::{delta_s_bound, info_bound, sample_delta, DeltaBound};

type M = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub n_trials: usize,
    pub delta: f64,
    /// Length of the initial identification run.
    pub n0: usize,
    /// Length of the second identification run (coverage) or of the
    /// simulated disturbance response (performance).
    pub horizon: usize,
    pub boundary_fraction: f64,
    /// Young parameter for the composite-error containment check.
    pub eps: f64,
    /// Multiplies sampled `Δ_u` (1 keeps samples inside their set).
    pub inflate_u: f64,
    /// Simulate without process noise (estimator still assumes `sigma_w`).
    pub noiseless: bool,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            n_trials: 200,
            delta: 0.1,
            n0: 200,
            horizon: 200,
            boundary_fraction: 1.0,
            eps: 1.0,
            inflate_u: 1.0,
            noiseless: false,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl ValidationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials < 1 {
            return Err(Error::config("validation.n_trials", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("validation.delta", "must lie in (0,1)"));
        }
        if !(0.0..=1.0).contains(&self.boundary_fraction) {
            return Err(Error::config("validation.boundary_fraction", "must lie in [0,1]"));
        }
        if self.horizon < 1 || self.n0 < 1 {
            return Err(Error::config("validation.horizon", "must be >= 1"));
        }
        Ok(())
    }
}

/// Multipliers that certify a fixed controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub x: SymMatrix,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

/// Re-solves the analysis problem with the controller fixed and the
/// Lyapunov matrix and both multipliers free.
pub fn certify_fixed(design: &DualDesign, gs: &GainSchedulingData, opts: &SolveOptions) -> Result<Certificate> {
    let n_x = gs.n_x();
    let rs = design.ds.inverse()?;
    let ru = design.dbar_t.inverse()?;
    let mut p = ConicProgram::new();
    let (xid, x) = p.symmetric("X", n_x);
    let (lsid, ls) = p.scalar("lambda_s");
    let (luid, lu) = p.scalar("lambda_u");
    p.add_lmi("X", x.clone(), LmiSense::Psd, true);
    p.add_lmi("lambda_s", ls.clone(), LmiSense::Psd, true);
    p.add_lmi("lambda_u", lu.clone(), LmiSense::Psd, true);
    p.add_lmi("analysis", analysis_lmi(&design.k, &design.k_s, &x, &ls, &lu, &rs, &ru, gs)?, LmiSense::Nsd, true);
    match solve(&p, opts).into_result() {
        Ok((a, _)) => Ok(Certificate { x: SymMatrix::new(a.get(xid)?.clone())?, lambda_s: a.scalar(lsid)?, lambda_u: a.scalar(luid)? }),
        Err(e) => Err(Error::CertificationFailed(format!("analysis problem not certified: {e}"))),
    }
}

/// Largest `ε` (capped at 1) for which the closed loop
/// `x+ = A x + w`, `z = C x + D_w w` satisfies the quadratic performance
/// LMI with a `ε‖w‖²` margin; `None` if no Lyapunov matrix exists.
pub fn performance_margin(a_cl: &M, c_cl: &M, d_w: &M, weight: &M, opts: &SolveOptions) -> Result<Option<f64>> {
    let n_x = a_cl.nrows();
    let n_z = c_cl.nrows();
    let mut v = DMatrix::zeros(3 * n_x + n_z, 2 * n_x);
    v.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
    v.view_mut((n_x, 0), (n_x, n_x)).copy_from(a_cl);
    v.view_mut((n_x, n_x), (n_x, n_x)).fill_with_identity();
    v.view_mut((2 * n_x, n_x), (n_x, n_x)).fill_with_identity();
    v.view_mut((3 * n_x, 0), (n_z, n_x)).copy_from(c_cl);
    v.view_mut((3 * n_x, n_x), (n_z, n_x)).copy_from(d_w);

    let mut p = ConicProgram::new();
    let (_, x) = p.symmetric("X", n_x);
    let (eid, e) = p.scalar("eps");
    let mut w_sel = DMatrix::zeros(2 * n_x, 2 * n_x);
    w_sel.view_mut((n_x, n_x), (n_x, n_x)).fill_with_identity();
    let middle = AffineMatrix::block_diag(vec![-&x, x.clone(), AffineMatrix::constant(weight.clone())]);
    let lmi = middle.congruence(&v) + AffineMatrix::scalar_times(&e, &w_sel);
    p.add_lmi("X", x, LmiSense::Psd, true);
    p.add_lmi("kyp", lmi, LmiSense::Nsd, false);
    p.add_lmi("eps_cap", AffineMatrix::scalar(1.0) - e.clone(), LmiSense::Psd, false);
    p.add_lmi("eps_floor", e + AffineMatrix::scalar(1e3), LmiSense::Psd, false);
    p.minimize_inner(eid, DMatrix::from_element(1, 1, -1.0));
    match solve(&p, opts).into_result() {
        Ok((a, _)) => Ok(Some(a.scalar(eid)?)),
        Err(Error::Infeasible) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Closed loop of the true plant `(A, B)` under `u = K x`, on the
/// performance channel.
pub fn closed_loop(a: &M, b: &M, k: &M, pc: &PerfChannel) -> (M, M) {
    (a + b * k, &pc.c + &pc.d * k)
}

/// `K_new` for a given scheduling shift `Δ_s = [ΔA ΔB]`; `None` when the
/// implicit law is singular.
pub fn scheduled_gain(k: &M, ks: &M, delta_s: &M) -> Option<M> {
    let n_x = k.ncols();
    let n_u = k.nrows();
    let da = delta_s.columns(0, n_x).into_owned();
    let db = delta_s.columns(n_x, n_u).into_owned();
    let lhs = DMatrix::identity(n_u, n_u) - ks * &db;
    checked_inverse(&lhs, "I - Ks dB").ok().map(|inv| inv * (k + ks * da))
}

/// Simulated response to a short random disturbance burst. Returns
/// `(s_wz / s_ww, tail energy fraction)`.
pub fn simulated_ratio<R: Rng + ?Sized>(a_cl: &M, pc: &PerfChannel, k: &M, b: &M, horizon: usize, rng: &mut R) -> Result<(f64, f64)> {
    let n_x = a_cl.nrows();
    let burst = (horizon / 10).max(1);
    let noises: Vec<DVector<f64>> = (0..horizon)
        .map(|i| if i < burst { DVector::from_fn(n_x, |_, _| rng.sample::<f64, _>(StandardNormal)) } else { DVector::zeros(n_x) })
        .collect();
    let a_open = a_cl - b * k;
    let sys = LtiSystem { a: a_open, b: b.clone(), sigma_w: 1.0 };
    let traj = simulate_with_noise(&sys, &Policy::feedback(k.clone()), &DVector::zeros(n_x), &noises, rng)?;
    let (s_wz, s_ww) = quad_perf_lhs(pc, &traj)?;
    Ok((s_wz / s_ww, tail_energy_fraction(&traj, horizon / 10)))
}

/// One sampled uncertainty pair and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSample {
    #[serde(with = "crate::mat_json::dense")]
    pub delta_s: M,
    #[serde(with = "crate::mat_json::dense")]
    pub delta_u: M,
    pub margin: Option<f64>,
    pub sim_ratio: Option<f64>,
    pub well_posed: bool,
}

impl PerfSample {
    pub fn passes(&self) -> bool {
        self.well_posed && self.margin.is_some_and(|m| m > 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    pub samples: usize,
    pub worst_margin: f64,
    pub worst_ratio: f64,
    pub failures: Vec<PerfSample>,
}

/// Samples `(Δ_s, Δ_u)` from the design's sets, closes the loop of the
/// perturbed plant under the scheduled law and checks quadratic
/// performance: per-sample LMI first, then a simulated response.
pub fn sampled_performance_report(
    design: &DualDesign,
    gs: &GainSchedulingData,
    cfg: &ValidationConfig,
    opts: &SolveOptions,
) -> Result<PerfSummary> {
    cfg.validate()?;
    let n_x = gs.n_x();
    let s_set = DeltaBound::new(design.ds.inverse()?, n_x)?;
    let u_set = DeltaBound::new(design.dbar_t.inverse()?, n_x)?;
    let samples = map_indexed(cfg.n_trials, cfg.execution, |i| -> Result<PerfSample> {
        let mut rng = seeds::stream(cfg.seed, "sampled_performance", i as u64);
        let delta_s = sample_delta(&s_set, &mut rng, cfg.boundary_fraction)?;
        let delta_u = sample_delta(&u_set, &mut rng, cfg.boundary_fraction)? * cfg.inflate_u;
        perf_sample(design, gs, delta_s, delta_u, cfg.horizon, &mut rng, opts)
    });
    let mut worst_margin = f64::INFINITY;
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut failures = Vec::new();
    for s in samples {
        let s = s?;
        worst_margin = worst_margin.min(s.margin.unwrap_or(f64::NEG_INFINITY));
        if let Some(r) = s.sim_ratio {
            worst_ratio = worst_ratio.max(r);
        }
        if !s.passes() {
            failures.push(s);
        }
    }
    Ok(PerfSummary { samples: cfg.n_trials, worst_margin, worst_ratio, failures })
}

fn perf_sample<R: Rng + ?Sized>(
    design: &DualDesign,
    gs: &GainSchedulingData,
    delta_s: M,
    delta_u: M,
    horizon: usize,
    rng: &mut R,
    opts: &SolveOptions,
) -> Result<PerfSample> {
    let n_x = gs.n_x();
    let theta = crate::matrix_kit::hstack(&[&gs.a0, &gs.b0])? + &delta_s + &delta_u;
    let a = theta.columns(0, n_x).into_owned();
    let b = theta.columns(n_x, gs.n_u()).into_owned();
    let Some(k_new) = scheduled_gain(&design.k, &design.k_s, &delta_s) else {
        return Ok(PerfSample { delta_s, delta_u, margin: None, sim_ratio: None, well_posed: false });
    };
    let (a_cl, c_cl) = closed_loop(&a, &b, &k_new, &gs.perf);
    let margin = performance_margin(&a_cl, &c_cl, &gs.perf.d_w, &gs.perf.weight(), opts)?;
    let sim_ratio = if margin.is_some() { Some(simulated_ratio(&a_cl, &gs.perf, &k_new, &b, horizon, rng)?.0) } else { None };
    Ok(PerfSample { delta_s, delta_u, margin, sim_ratio, well_posed: true })
}

/// [`sampled_performance_report`], failing on the first violation with the
/// offending sample serialized as JSON.
pub fn sampled_performance(design: &DualDesign, gs: &GainSchedulingData, cfg: &ValidationConfig, opts: &SolveOptions) -> Result<f64> {
    let r = sampled_performance_report(design, gs, cfg, opts)?;
    if let Some(f) = r.failures.first() {
        return Err(Error::PerformanceViolation(serde_json::to_string(f)?));
    }
    Ok(r.worst_ratio)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageTrial {
    pub index: usize,
    pub theta_inside: bool,
    pub delta_s_inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageSummary {
    pub trials: Vec<CoverageTrial>,
    /// Fraction with the truth in the initial credibility region.
    pub theta: f64,
    /// Fraction with the composite shift inside its bound.
    pub delta_s: f64,
    /// Fraction with both.
    pub joint: f64,
}

/// Repeats random-input identification: `n0` samples, then `horizon`
/// more, and records whether the truth lies in the first credibility
/// region and whether `Θ̂_T - Θ̂_0` lies in its composite bound.
pub fn coverage_test(true_sys: &LtiSystem, input_cov: &SymMatrix, cfg: &ValidationConfig) -> Result<CoverageSummary> {
    cfg.validate()?;
    let (n_x, n_u) = (true_sys.n_x(), true_sys.n_u());
    let c_delta = chi2_quantile(parameter_dof(n_x, n_u), cfg.delta)?;
    let trials = map_indexed(cfg.n_trials, cfg.execution, |i| -> Result<CoverageTrial> {
        let mut rng = seeds::stream(cfg.seed, "coverage", i as u64);
        let policy = Policy::random(n_x, input_cov.clone());
        let run = |x0: &DVector<f64>, len: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            if cfg.noiseless {
                simulate_with_noise(true_sys, &policy, x0, &vec![DVector::zeros(n_x); len], rng)
            } else {
                simulate(true_sys, &policy, x0, len, rng)
            }
        };
        let first = run(&DVector::zeros(n_x), cfg.n0, &mut rng)?;
        let second = run(first.last_state(), cfg.horizon, &mut rng)?;
        let d0_data = Dataset::from_trajectory(&first);
        let dt_data = d0_data.merged(&Dataset::from_trajectory(&second));
        let est0 = least_squares(&d0_data, n_x)?;
        let est_t = least_squares(&dt_data, n_x)?;
        let info0 = info_matrix(&d0_data, n_x + n_u, true_sys.sigma_w, c_delta)?;
        let info_t = info_matrix(&dt_data, n_x + n_u, true_sys.sigma_w, c_delta)?;
        let theta_inside = in_credibility_region(&true_sys.a, &true_sys.b, &est0, &info0)?;
        let delta_s = est_t.theta() - est0.theta();
        let delta_s_inside = delta_s_bound(cfg.eps, &info0, &info_t, n_x)?.contains(&delta_s)?;
        Ok(CoverageTrial { index: i, theta_inside, delta_s_inside })
    });
    let trials: Vec<CoverageTrial> = trials.into_iter().collect::<Result<_>>()?;
    let n = trials.len() as f64;
    let frac = |f: &dyn Fn(&CoverageTrial) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / n;
    Ok(CoverageSummary {
        theta: frac(&|t| t.theta_inside),
        delta_s: frac(&|t| t.delta_s_inside),
        joint: frac(&|t| t.theta_inside && t.delta_s_inside),
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assumption2Report {
    /// Relative Frobenius gap between the empirical and predicted
    /// regressor sums (absolute when the prediction is zero).
    pub discrepancy: f64,
    pub relative: bool,
    /// `λ_min(D_T - D̄_T)`; `>= 0` means the realized information dominates.
    pub dominance_margin: f64,
    pub dominates: bool,
}

/// Compares the empirical regressor sum of an exploration run with the
/// covariance the design assumed, and the realized `D_T` with `D̄_T`.
pub fn assumption2_check(
    traj: &crate::plant::Trajectory,
    design: &DualDesign,
    d0: &SymMatrix,
    sigma_w: f64,
    c_delta: f64,
) -> Result<Assumption2Report> {
    let data = Dataset::from_trajectory(traj);
    let dim = design.dbar_t.dim();
    let mut emp = DMatrix::zeros(dim, dim);
    for z in &data.regressors {
        emp += z * z.transpose();
    }
    let w = design.w_e.as_matrix();
    let ke = &design.k_e;
    let wk = w * ke.transpose();
    let n_x = w.nrows();
    let mut pred = DMatrix::zeros(dim, dim);
    pred.view_mut((0, 0), (n_x, n_x)).copy_from(w);
    pred.view_mut((0, n_x), wk.shape()).copy_from(&wk);
    pred.view_mut((n_x, 0), (wk.ncols(), n_x)).copy_from(&wk.transpose());
    pred.view_mut((n_x, n_x), (wk.ncols(), wk.ncols())).copy_from(&(ke * &wk + design.sigma.as_matrix()));
    pred *= traj.horizon() as f64;
    let gap = (&emp - &pred).norm();
    let (discrepancy, relative) = if pred.norm() > 0.0 { (gap / pred.norm(), true) } else { (gap, false) };
    let d_t = SymMatrix::new(d0.as_matrix() + emp / (sigma_w * sigma_w * c_delta))?;
    let dominance_margin = d_t.sub(&design.dbar_t)?.min_eigenvalue()?;
    Ok(Assumption2Report { discrepancy, relative, dominance_margin, dominates: dominance_margin >= -1e-9 * d_t.as_matrix().norm() })
}

/// Outcome of one full pipeline on a fresh seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrial {
    pub index: usize,
    pub seed: u64,
    /// Error text if the pipeline itself failed.
    pub error: Option<String>,
    pub theta_inside: bool,
    pub delta_s_inside: bool,
    pub delta_u_inside: bool,
    pub well_posed: bool,
    pub margin: Option<f64>,
    pub sim_ratio: Option<f64>,
    pub discrepancy: Option<f64>,
}

impl PipelineTrial {
    pub fn perf_pass(&self) -> bool {
        self.margin.is_some_and(|m| m > 0.0)
    }

    /// Realized shifts inside the certified sets, well-posed law, and
    /// performance on the realized system.
    pub fn joint(&self) -> bool {
        self.error.is_none() && self.delta_s_inside && self.delta_u_inside && self.well_posed && self.perf_pass()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub trials: Vec<PipelineTrial>,
    pub sets_fraction: f64,
    pub perf_fraction: f64,
    pub joint_fraction: f64,
}

/// Runs the whole design loop `n_runs` times against `true_sys`.
pub fn monte_carlo_pipelines(
    cfg: &AlgorithmConfig,
    true_sys: &LtiSystem,
    n_runs: usize,
    root_seed: u64,
    exec: Execution,
) -> Result<MonteCarloSummary> {
    let trials = map_indexed(n_runs, exec, |i| pipeline_trial(cfg, true_sys, i, seeds::child_seed(root_seed, "pipeline", i as u64)));
    let trials: Vec<PipelineTrial> = trials.into_iter().collect::<Result<_>>()?;
    let n = n_runs.max(1) as f64;
    let frac = |f: &dyn Fn(&PipelineTrial) -> bool| trials.iter().filter(|t| f(t)).count() as f64 / n;
    Ok(MonteCarloSummary {
        sets_fraction: frac(&|t| t.error.is_none() && t.delta_s_inside && t.delta_u_inside),
        perf_fraction: frac(&|t| t.perf_pass()),
        joint_fraction: frac(&|t| t.joint()),
        trials,
    })
}

fn pipeline_trial(cfg: &AlgorithmConfig, sys: &LtiSystem, index: usize, seed: u64) -> Result<PipelineTrial> {
    let mut t = PipelineTrial {
        index,
        seed,
        error: None,
        theta_inside: false,
        delta_s_inside: false,
        delta_u_inside: false,
        well_posed: false,
        margin: None,
        sim_ratio: None,
        discrepancy: None,
    };
    let run = match run_algorithm1(cfg, sys, seed, &mut StageTimings::default()) {
        Ok(r) => r,
        Err(e) => {
            t.error = Some(e.to_string());
            return Ok(t);
        }
    };
    let n_x = cfg.n_x();
    let design = &run.design.search.best;
    let est0: &Estimate = &run.estimate.estimate;
    let est_t = &run.exploration.estimate_t;
    t.theta_inside = in_credibility_region(&sys.a, &sys.b, est0, &run.estimate.info)?;
    let delta_s = est_t.theta() - est0.theta();
    let delta_u = sys.theta() - est_t.theta();
    t.delta_s_inside = DeltaBound::new(design.ds.inverse()?, n_x)?.contains(&delta_s)?;
    t.delta_u_inside = DeltaBound::new(design.dbar_t.inverse()?, n_x)?.contains(&delta_u)?;
    t.well_posed = true;
    let (a_cl, c_cl) = closed_loop(&sys.a, &sys.b, &run.exploration.controller.k_new, &cfg.perf);
    t.margin = performance_margin(&a_cl, &c_cl, &cfg.perf.d_w, &cfg.perf.weight(), &cfg.solver)?;
    if t.margin.is_some() {
        let mut rng = seeds::stream(seed, "pipeline_sim", 0);
        t.sim_ratio = Some(simulated_ratio(&a_cl, &cfg.perf, &run.exploration.controller.k_new, &sys.b, 400, &mut rng)?.0);
    }
    t.discrepancy = Some(
        assumption2_check(&run.exploration.trajectory, design, &run.estimate.info.d, cfg.sigma_w, run.estimate.info.c_delta)?.discrepancy,
    );
    Ok(t)
}

/// Validation summary CSV, one row per pipeline trial.
pub fn write_validation_csv<W: Write>(trials: &[PipelineTrial], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "trial",
        "seed",
        "theta_inside",
        "delta_s_inside",
        "delta_u_inside",
        "well_posed",
        "perf_margin",
        "sim_ratio",
        "discrepancy",
        "joint",
        "error",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for t in trials {
        w.write_record([
            t.index.to_string(),
            t.seed.to_string(),
            t.theta_inside.to_string(),
            t.delta_s_inside.to_string(),
            t.delta_u_inside.to_string(),
            t.well_posed.to_string(),
            opt(t.margin),
            opt(t.sim_ratio),
            opt(t.discrepancy),
            t.joint().to_string(),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Binomial lower acceptance threshold: `p - k sqrt(p(1-p)/n)`.
pub fn binomial_threshold(p: f64, n: usize, k: f64) -> f64 {
    p - k * (p * (1.0 - p) / n as f64).sqrt()
}

/// Checks that an `InfoMatrix` bound contains the truth; convenience for
/// callers that hold only the estimate.
pub fn truth_inside(sys: &LtiSystem, est: &Estimate, info: &InfoMatrix) -> Result<bool> {
    info_bound(info, sys.n_x())?.contains(&(est.theta() - sys.theta()))
}

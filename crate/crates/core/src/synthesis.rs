//! Design pipeline: robust LQR seed gain, the combined exploration and
//! gain-scheduling SDP, the hyperparameter line search, exploration and the
//! final scheduled feedback.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{chi2_quantile, info_matrix, least_squares, parameter_dof, Dataset, Estimate, InfoMatrix};
use crate::lmi::{dbar_constraint, s1_block, s2_gain_sched, s3_block, se_block, ExplorationData, GainSchedulingData};
use crate::matrix_kit::{checked_inverse, SymMatrix};
use crate::par::{map_indexed, Execution};
use crate::plant::{simulate, LtiSystem, PerfChannel, Policy, Trajectory};
use crate::sdp::{solve, AffineMatrix, Assignment, ConicProgram, LmiSense, SolveOptions, SolveStatus, VarId};
use crate::seeds;

type M = DMatrix<f64>;

/// Relative size of the fixed excitation covariance in the seed-gain step.
pub const K0_SIGMA_REL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub eps: f64,
    /// Absolute value (not relative to `sigma_w^2`).
    pub t_e: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", self.eps), ("t_e", self.t_e), ("lambda_s", self.lambda_s), ("lambda_u", self.lambda_u)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::DomainError(format!("hyperparameter {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Cartesian grid over the hyperparameters. `t_e_rel` is in units of
/// `sigma_w^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub eps: Vec<f64>,
    pub t_e_rel: Vec<f64>,
    pub lambda_s: Vec<f64>,
    pub lambda_u: Vec<f64>,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.log10(), hi.log10());
    (0..n).map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64)).collect()
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            eps: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            t_e_rel: vec![0.1, 0.3, 1.0, 3.0],
            lambda_s: logspace(1e-2, 1e2, 5),
            lambda_u: logspace(1e-2, 1e2, 5),
        }
    }
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eps", &self.eps), ("t_e", &self.t_e_rel), ("lambda_s", &self.lambda_s), ("lambda_u", &self.lambda_u)] {
            if v.is_empty() {
                return Err(Error::config(format!("grid.{name}"), "must not be empty"));
            }
            if v.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::config(format!("grid.{name}"), "values must be finite and > 0"));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.eps.len() * self.t_e_rel.len() * self.lambda_s.len() * self.lambda_u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All points in a fixed order (eps outermost, lambda_u innermost).
    pub fn points(&self, sigma_w: f64) -> Vec<Hyperparams> {
        let s2 = sigma_w * sigma_w;
        let mut out = Vec::with_capacity(self.len());
        for &eps in &self.eps {
            for &t in &self.t_e_rel {
                for &lambda_s in &self.lambda_s {
                    for &lambda_u in &self.lambda_u {
                        out.push(Hyperparams { eps, t_e: t * s2, lambda_s, lambda_u });
                    }
                }
            }
        }
        out
    }
}

/// Result of the seed-gain robust LQR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustLqr {
    #[serde(with = "crate::mat_json::dense")]
    pub k0: M,
    pub cost: f64,
    pub t_e: f64,
    pub w_e: SymMatrix,
}

/// Robust LQR for a fixed `t_e`, with the excitation covariance fixed at
/// `K0_SIGMA_REL * sigma_w^2 * I`.
pub fn robust_lqr_k0(ed: &ExplorationData, t_e: f64, opts: &SolveOptions) -> Result<RobustLqr> {
    let (n_x, n_u) = (ed.n_x(), ed.n_u());
    let s = noise_unit(ed);
    let unit = normalized(ed);
    let mut p = ConicProgram::new();
    let (wid, w) = p.symmetric("W_e", n_x);
    let (zid, z) = p.rectangular("Z_e", n_x, n_u);
    let (yid, y) = p.symmetric("Y_e", n_x + n_u);
    let sigma = AffineMatrix::identity(n_u) * K0_SIGMA_REL;
    p.add_lmi("S1", s1_block(&w, &y, &z, &ed.q, &ed.r)?, LmiSense::Psd, false);
    p.add_lmi("Se", se_block(t_e / s, &z, &w, &sigma, &unit)?, LmiSense::Psd, false);
    p.minimize_trace(yid);
    let (a, cost) = solve(&p, opts).into_result()?;
    let w_e = a.get(wid)?.clone();
    let k0 = a.get(zid)?.transpose() * checked_inverse(&w_e, "W_e")?;
    Ok(RobustLqr { k0, cost: cost * s, t_e, w_e: SymMatrix::new(w_e * s)? })
}

/// `sigma_w^2`, the unit in which covariance-like variables are solved.
fn noise_unit(ed: &ExplorationData) -> f64 {
    ed.sigma_w * ed.sigma_w
}

/// Same data with unit noise; covariance-like variables of the programs are
/// expressed in multiples of `sigma_w^2`.
fn normalized(ed: &ExplorationData) -> ExplorationData {
    ExplorationData { sigma_w: 1.0, ..ed.clone() }
}

/// Line search over `t_e` (absolute values) for the seed gain.
pub fn robust_lqr_search(ed: &ExplorationData, t_values: &[f64], opts: &SolveOptions, exec: Execution) -> Result<RobustLqr> {
    let results = map_indexed(t_values.len(), exec, |i| robust_lqr_k0(ed, t_values[i], opts));
    let mut best: Option<RobustLqr> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) if best.as_ref().is_none_or(|b| r.cost < b.cost) => best = Some(r),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or(match last_err {
        Some(Error::NumericalFailure(m)) => Error::NumericalFailure(m),
        _ => Error::Infeasible,
    })
}

/// Fixed data of the combined SDP; only the hyperparameters vary across
/// the line search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualProblem {
    pub gs: GainSchedulingData,
    pub ed: ExplorationData,
    #[serde(with = "crate::mat_json::dense")]
    pub k0: M,
    pub horizon: usize,
    pub c_delta: f64,
    /// `false` pins the scheduling gain to zero (unscheduled robust design).
    pub schedule: bool,
}

impl DualProblem {
    pub fn noise_scale(&self) -> f64 {
        self.ed.sigma_w * self.ed.sigma_w * self.c_delta
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DualVars {
    pub w_e: VarId,
    pub z_e: VarId,
    pub y_e: VarId,
    pub sigma: VarId,
    pub k_s: Option<VarId>,
    pub m: VarId,
    pub n: VarId,
    pub dbar: VarId,
    pub ds: VarId,
}

/// Which constraints to include; everything by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub performance: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { performance: true }
    }
}

/// Builds the combined program. `W_e`, `Z_e`, `Y_e` and `Sigma` are in units
/// of `sigma_w^2`; [`solve_dual`] maps them back.
pub fn build_dual_sdp(p: &DualProblem, h: &Hyperparams) -> Result<(ConicProgram, DualVars)> {
    build_dual_sdp_with(p, h, BuildOptions::default())
}

pub fn build_dual_sdp_with(p: &DualProblem, h: &Hyperparams, bo: BuildOptions) -> Result<(ConicProgram, DualVars)> {
    h.validate()?;
    let (n_x, n_u) = (p.gs.n_x(), p.gs.n_u());
    let dim = n_x + n_u;
    let mut prog = ConicProgram::new();
    let (w_id, w) = prog.symmetric("W_e", n_x);
    let (z_id, z) = prog.rectangular("Z_e", n_x, n_u);
    let (y_id, y) = prog.symmetric("Y_e", dim);
    let (sg_id, sigma) = prog.symmetric("Sigma", n_u);
    let (ks_id, ks) = if p.schedule {
        let (id, e) = prog.rectangular("K_s", n_u, n_x);
        (Some(id), e)
    } else {
        (None, AffineMatrix::zeros(n_u, n_x))
    };
    let (m_id, m) = prog.rectangular("M", n_u, n_x);
    let (n_id, n) = prog.symmetric("N", n_x);
    let (db_id, dbar) = prog.symmetric("DbarT", dim);
    let (ds_id, ds) = prog.symmetric("Ds", dim);

    prog.add_lmi("S1", s1_block(&w, &y, &z, &p.ed.q, &p.ed.r)?, LmiSense::Psd, false);
    let unit = normalized(&p.ed);
    prog.add_lmi("Se", se_block(h.t_e / noise_unit(&p.ed), &z, &w, &sigma, &unit)?, LmiSense::Psd, false);
    if bo.performance {
        prog.add_lmi("S2", s2_gain_sched(&ks, &m, &n, h.lambda_s, h.lambda_u, &ds, &dbar, &p.gs)?, LmiSense::Nsd, true);
    }
    let d0 = AffineMatrix::from(&p.ed.d0);
    prog.add_lmi("S3", s3_block(h.eps, &d0, &dbar, &ds)?, LmiSense::Psd, true);
    prog.add_lmi("DbarT", dbar_constraint(&w, &z, &sigma, &dbar, &p.k0, &p.ed.d0, p.horizon, p.c_delta)?, LmiSense::Psd, true);
    prog.minimize_trace(y_id);
    Ok((prog, DualVars { w_e: w_id, z_e: z_id, y_e: y_id, sigma: sg_id, k_s: ks_id, m: m_id, n: n_id, dbar: db_id, ds: ds_id }))
}

/// Everything the combined SDP returns, plus the recovered gains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualDesign {
    #[serde(with = "crate::mat_json::dense")]
    pub k_e: M,
    pub sigma: SymMatrix,
    #[serde(with = "crate::mat_json::dense")]
    pub k: M,
    #[serde(with = "crate::mat_json::dense")]
    pub k_s: M,
    pub n: SymMatrix,
    #[serde(with = "crate::mat_json::dense")]
    pub m: M,
    pub dbar_t: SymMatrix,
    pub ds: SymMatrix,
    pub w_e: SymMatrix,
    #[serde(with = "crate::mat_json::dense")]
    pub z_e: M,
    pub y_e: SymMatrix,
    pub exploration_cost: f64,
    pub hyper: Hyperparams,
}

/// `(K_e, K) = (Z_eᵀ W_e^{-1}, M N^{-1})`.
pub fn recover_controllers(w_e: &M, z_e: &M, m: &M, n: &M) -> Result<(M, M)> {
    let k_e = z_e.transpose() * checked_inverse(w_e, "W_e")?;
    let k = m * checked_inverse(n, "N")?;
    Ok((k_e, k))
}

fn design_from(a: &Assignment, v: &DualVars, h: &Hyperparams, cost: f64, unit: f64, n_u: usize, n_x: usize) -> Result<DualDesign> {
    let w_e = a.get(v.w_e)?.clone();
    let z_e = a.get(v.z_e)?.clone();
    let m = a.get(v.m)?.clone();
    let n = a.get(v.n)?.clone();
    let (k_e, k) = recover_controllers(&w_e, &z_e, &m, &n)?;
    let k_s = match v.k_s {
        Some(id) => a.get(id)?.clone(),
        None => DMatrix::zeros(n_u, n_x),
    };
    Ok(DualDesign {
        k_e,
        sigma: SymMatrix::new(a.get(v.sigma)? * unit)?,
        k,
        k_s,
        n: SymMatrix::new(n)?,
        m,
        dbar_t: SymMatrix::new(a.get(v.dbar)?.clone())?,
        ds: SymMatrix::new(a.get(v.ds)?.clone())?,
        w_e: SymMatrix::new(w_e * unit)?,
        z_e: z_e * unit,
        y_e: SymMatrix::new(a.get(v.y_e)? * unit)?,
        exploration_cost: cost * unit,
        hyper: *h,
    })
}

/// Solves the combined SDP at one grid point.
pub fn solve_dual(p: &DualProblem, h: &Hyperparams, opts: &SolveOptions) -> Result<DualDesign> {
    let (prog, vars) = build_dual_sdp(p, h)?;
    let (a, cost) = solve(&prog, opts).into_result()?;
    design_from(&a, &vars, h, cost, noise_unit(&p.ed), p.gs.n_u(), p.gs.n_x())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointStatus {
    pub index: usize,
    pub hyper: Hyperparams,
    pub status: SolveStatus,
    pub cost: Option<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchResult {
    pub best: DualDesign,
    pub best_index: usize,
    pub points: Vec<GridPointStatus>,
}

/// Solves every grid point and keeps the cheapest feasible design; ties go
/// to the lower grid index.
pub fn line_search(p: &DualProblem, points: &[Hyperparams], opts: &SolveOptions, exec: Execution) -> Result<LineSearchResult> {
    if points.is_empty() {
        return Err(Error::config("grid", "line search needs at least one grid point"));
    }
    let results = map_indexed(points.len(), exec, |i| solve_dual(p, &points[i], opts));
    let mut statuses = Vec::with_capacity(points.len());
    let mut best: Option<(usize, DualDesign)> = None;
    for (i, r) in results.into_iter().enumerate() {
        let (status, cost, detail) = match &r {
            Ok(d) => (SolveStatus::Optimal, Some(d.exploration_cost), String::new()),
            Err(Error::Infeasible) => (SolveStatus::Infeasible, None, String::new()),
            Err(e) => (SolveStatus::NumericalFailure, None, e.to_string()),
        };
        statuses.push(GridPointStatus { index: i, hyper: points[i], status, cost, detail });
        if let Ok(d) = r {
            if best.as_ref().is_none_or(|(_, b)| d.exploration_cost < b.exploration_cost) {
                best = Some((i, d));
            }
        }
    }
    match best {
        Some((best_index, best)) => Ok(LineSearchResult { best, best_index, points: statuses }),
        None => Err(Error::AllInfeasible { points: points.len() }),
    }
}

/// Targeted exploration `u = K_e x + e`, `e ~ N(0, Σ)`, for `horizon` steps.
pub fn explore<R: rand::Rng + ?Sized>(
    sys: &LtiSystem,
    k_e: &M,
    sigma: &SymMatrix,
    horizon: usize,
    x0: &DVector<f64>,
    rng: &mut R,
) -> Result<Trajectory> {
    simulate(sys, &Policy::exploring(k_e.clone(), sigma.clone()), x0, horizon, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalController {
    #[serde(with = "crate::mat_json::dense")]
    pub k_new: M,
    pub estimate_t: Estimate,
}

/// `K_new = (I - K_s ΔB)^{-1} (K + K_s ΔA)` with `[ΔA ΔB] = Θ̂_T - Θ̂_0`.
pub fn k_new(k: &M, ks: &M, est0: &Estimate, est_t: &Estimate) -> Result<FinalController> {
    let n_u = k.nrows();
    let da = &est_t.a_hat - &est0.a_hat;
    let db = &est_t.b_hat - &est0.b_hat;
    let lhs = DMatrix::identity(n_u, n_u) - ks * &db;
    let inv = checked_inverse(&lhs, "I - K_s (B_T - B_0)").map_err(|e| {
        let shift = crate::matrix_kit::hstack(&[&da, &db]).map(|d| d.norm()).unwrap_or(f64::NAN);
        Error::IllPosed(format!("{e}; scheduling shift has Frobenius norm {shift:.3e}"))
    })?;
    let gain = inv * (k + ks * &da);
    // Fixed point of the implicit law at a few probe states.
    for j in 0..k.ncols() {
        let mut x = DVector::zeros(k.ncols());
        x[j] = 1.0;
        let u = &gain * &x;
        let implicit = k * &x + ks * (&da * &x + &db * &u);
        if (&implicit - &u).norm() > 1e-8 * (1.0 + u.norm()) {
            return Err(Error::IllPosed("scheduled law does not close at its fixed point".into()));
        }
    }
    Ok(FinalController { k_new: gain, estimate_t: est_t.clone() })
}

/// Inputs of the whole design loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub delta: f64,
    pub n0: usize,
    pub horizon: usize,
    /// Noise level assumed by the designer.
    pub sigma_w: f64,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub perf: PerfChannel,
    /// Input covariance of the initial random exploration.
    pub initial_input_cov: SymMatrix,
    pub grid: HyperGrid,
    /// `t_e` values for the seed gain, in units of `sigma_w^2`.
    pub k0_t_e_rel: Vec<f64>,
    pub schedule: bool,
    #[serde(skip)]
    pub solver: SolveOptions,
    #[serde(skip)]
    pub execution: Execution,
}

impl AlgorithmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", format!("must lie in (0,1), got {}", self.delta)));
        }
        let n_x = self.q.dim();
        let n_u = self.r.dim();
        if self.n0 < n_x + n_u {
            return Err(Error::config("n0", format!("needs at least n_x + n_u = {} samples", n_x + n_u)));
        }
        if self.horizon < 1 {
            return Err(Error::config("horizon", "T must be >= 1"));
        }
        if !(self.sigma_w > 0.0) {
            return Err(Error::config("sigma_w", "must be > 0"));
        }
        if self.perf.n_x() != n_x || self.perf.n_u() != n_u {
            return Err(Error::config("performance", "channel dimensions disagree with Q/R"));
        }
        if self.initial_input_cov.dim() != n_u {
            return Err(Error::config("initial_input_cov", "must be n_u x n_u"));
        }
        if self.k0_t_e_rel.is_empty() || self.k0_t_e_rel.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::config("k0_t_e", "needs positive values"));
        }
        self.grid.validate()
    }

    pub fn n_x(&self) -> usize {
        self.q.dim()
    }

    pub fn n_u(&self) -> usize {
        self.r.dim()
    }

    pub fn c_delta(&self) -> Result<f64> {
        chi2_quantile(parameter_dof(self.n_x(), self.n_u()), self.delta)
    }
}

/// Initial random exploration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub seed: u64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateArtifact {
    pub estimate: Estimate,
    pub info: InfoMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignArtifact {
    pub robust_lqr: RobustLqr,
    pub search: LineSearchResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationArtifact {
    pub seed: u64,
    pub trajectory: Trajectory,
    pub estimate_t: Estimate,
    pub info_t: InfoMatrix,
    pub controller: FinalController,
}

pub fn stage_initial(cfg: &AlgorithmConfig, sys: &LtiSystem, seed: u64) -> Result<InitialData> {
    let mut rng = seeds::stream(seed, "initial", 0);
    let policy = Policy::random(cfg.n_x(), cfg.initial_input_cov.clone());
    let trajectory = simulate(sys, &policy, &DVector::zeros(cfg.n_x()), cfg.n0, &mut rng).map_err(|e| e.in_stage("initial"))?;
    Ok(InitialData { seed, trajectory })
}

pub fn stage_estimate(cfg: &AlgorithmConfig, init: &InitialData) -> Result<EstimateArtifact> {
    let run = || -> Result<EstimateArtifact> {
        let data = Dataset::from_trajectory(&init.trajectory);
        let estimate = least_squares(&data, cfg.n_x())?;
        let info = info_matrix(&data, cfg.n_x() + cfg.n_u(), cfg.sigma_w, cfg.c_delta()?)?;
        info.require_pd()?;
        Ok(EstimateArtifact { estimate, info })
    };
    run().map_err(|e| e.in_stage("estimate"))
}

pub fn dual_problem(cfg: &AlgorithmConfig, est: &EstimateArtifact, k0: M) -> Result<DualProblem> {
    let e = &est.estimate;
    Ok(DualProblem {
        gs: GainSchedulingData::new(e.a_hat.clone(), e.b_hat.clone(), cfg.perf.clone())?,
        ed: ExplorationData::new(e.a_hat.clone(), e.b_hat.clone(), est.info.d.clone(), cfg.q.clone(), cfg.r.clone(), cfg.sigma_w)?,
        k0,
        horizon: cfg.horizon,
        c_delta: est.info.c_delta,
        schedule: cfg.schedule,
    })
}

pub fn stage_design(cfg: &AlgorithmConfig, est: &EstimateArtifact) -> Result<DesignArtifact> {
    let s2 = cfg.sigma_w * cfg.sigma_w;
    let e = &est.estimate;
    let ed = ExplorationData::new(e.a_hat.clone(), e.b_hat.clone(), est.info.d.clone(), cfg.q.clone(), cfg.r.clone(), cfg.sigma_w)
        .map_err(|e| e.in_stage("robust_lqr"))?;
    let t_values: Vec<f64> = cfg.k0_t_e_rel.iter().map(|t| t * s2).collect();
    let robust_lqr = robust_lqr_search(&ed, &t_values, &cfg.solver, cfg.execution).map_err(|e| e.in_stage("robust_lqr"))?;
    let problem = dual_problem(cfg, est, robust_lqr.k0.clone()).map_err(|e| e.in_stage("design"))?;
    let search = line_search(&problem, &cfg.grid.points(cfg.sigma_w), &cfg.solver, cfg.execution).map_err(|e| e.in_stage("design"))?;
    Ok(DesignArtifact { robust_lqr, search })
}

pub fn stage_explore(
    cfg: &AlgorithmConfig,
    sys: &LtiSystem,
    seed: u64,
    init: &InitialData,
    est: &EstimateArtifact,
    design: &DesignArtifact,
) -> Result<ExplorationArtifact> {
    let d = &design.search.best;
    let mut rng = seeds::stream(seed, "explore", 0);
    let trajectory =
        explore(sys, &d.k_e, &d.sigma, cfg.horizon, init.trajectory.last_state(), &mut rng).map_err(|e| e.in_stage("explore"))?;
    let reestimate = || -> Result<(Estimate, InfoMatrix)> {
        let new_data = Dataset::from_trajectory(&trajectory);
        let all = Dataset::from_trajectory(&init.trajectory).merged(&new_data);
        let estimate_t = least_squares(&all, cfg.n_x())?;
        let added = info_matrix(&new_data, cfg.n_x() + cfg.n_u(), cfg.sigma_w, est.info.c_delta)?;
        Ok((estimate_t, est.info.accumulate(&added)?))
    };
    let (estimate_t, info_t) = reestimate().map_err(|e| e.in_stage("reestimate"))?;
    let controller = k_new(&d.k, &d.k_s, &est.estimate, &estimate_t).map_err(|e| e.in_stage("k_new"))?;
    Ok(ExplorationArtifact { seed, trajectory, estimate_t, info_t, controller })
}

/// Wall-clock seconds per stage; kept out of the report so reports stay
/// byte-reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub stages: Vec<(String, f64)>,
}

impl StageTimings {
    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push((stage.to_string(), t.elapsed().as_secs_f64()));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: AlgorithmConfig,
    pub estimate_0: EstimateArtifact,
    pub design: DesignArtifact,
    pub estimate_t: Estimate,
    pub info_t: InfoMatrix,
    #[serde(with = "crate::mat_json::dense")]
    pub k_new: M,
}

/// All artifacts of one pipeline run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub initial: InitialData,
    pub estimate: EstimateArtifact,
    pub design: DesignArtifact,
    pub exploration: ExplorationArtifact,
}

impl RunArtifacts {
    pub fn report(&self, cfg: &AlgorithmConfig) -> RunReport {
        RunReport {
            seed: self.initial.seed,
            config: cfg.clone(),
            estimate_0: self.estimate.clone(),
            design: self.design.clone(),
            estimate_t: self.exploration.estimate_t.clone(),
            info_t: self.exploration.info_t.clone(),
            k_new: self.exploration.controller.k_new.clone(),
        }
    }
}

/// Initial exploration, estimation, design, targeted exploration,
/// re-estimation and the scheduled feedback, in order.
pub fn run_algorithm1(cfg: &AlgorithmConfig, sys: &LtiSystem, seed: u64, timings: &mut StageTimings) -> Result<RunArtifacts> {
    cfg.validate()?;
    let initial = timings.time("initial", || stage_initial(cfg, sys, seed))?;
    let estimate = timings.time("estimate", || stage_estimate(cfg, &initial))?;
    let design = timings.time("design", || stage_design(cfg, &estimate))?;
    let exploration = timings.time("explore", || stage_explore(cfg, sys, seed, &initial, &estimate, &design))?;
    Ok(RunArtifacts { initial, estimate, design, exploration })
}

/// Nominal discrete-time LQR gain by Riccati iteration (`u = K x`).
pub fn dare_gain(a: &M, b: &M, q: &M, r: &M) -> Result<M> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.transpose() * &p;
        let g = checked_inverse(&(r + &btp * b), "R + B'PB")?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &g * &btp * a;
        let done = (&next - &p).norm() <= 1e-14 * (1.0 + p.norm());
        p = next;
        if done {
            break;
        }
    }
    let btp = b.transpose() * &p;
    Ok(-checked_inverse(&(r + &btp * b), "R + B'PB")? * btp * a)
}

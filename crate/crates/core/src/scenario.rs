//! Scenario files: the simulated truth, the design specification and the
//! run settings, in TOML with matrices as row-major nested arrays.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_kit::SymMatrix;
use crate::par::Execution;
use crate::plant::{LtiSystem, PerfChannel};
use crate::sdp::SolveOptions;
use crate::synthesis::{AlgorithmConfig, HyperGrid};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system: SystemSpec,
    pub performance: PerfSpec,
    pub exploration: ExplorationSpec,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub validation: ValidationSpec,
    #[serde(default)]
    pub seeds: SeedSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Ground truth, seen only by the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub a: Rows,
    pub b: Rows,
    pub sigma_w: f64,
}

/// Either `gamma` (L2-gain shorthand) or all of `q_p`, `s_p`, `r_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfSpec {
    pub c: Rows,
    pub d: Rows,
    pub d_w: Option<Rows>,
    pub gamma: Option<f64>,
    pub q_p: Option<Rows>,
    pub s_p: Option<Rows>,
    pub r_p: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSpec {
    pub q: Rows,
    pub r: Rows,
    /// Input covariance of the initial random phase; identity if absent.
    pub initial_input_cov: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub delta: f64,
    pub n0: usize,
    pub horizon: usize,
    #[serde(default = "yes")]
    pub schedule: bool,
    /// Noise level assumed by the designer; the true one if absent.
    pub design_sigma_w: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub eps: Vec<f64>,
    /// In units of `sigma_w^2`.
    pub t_e: Vec<f64>,
    pub lambda_s: Vec<f64>,
    pub lambda_u: Vec<f64>,
    /// Seed-gain `t_e` values, in units of `sigma_w^2`.
    pub k0_t_e: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        let g = HyperGrid::default();
        Self { eps: g.eps, t_e: g.t_e_rel, lambda_s: g.lambda_s, lambda_u: g.lambda_u, k0_t_e: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSpec {
    /// Sampled uncertainty pairs for the performance check.
    pub samples: usize,
    /// Identification trials for the coverage check.
    pub coverage_trials: usize,
    /// Full Monte Carlo pipeline repetitions (0 skips them).
    pub pipelines: usize,
    pub boundary_fraction: f64,
    /// Length of simulated disturbance responses.
    pub horizon: usize,
}

impl Default for ValidationSpec {
    fn default() -> Self {
        Self { samples: 200, coverage_trials: 500, pipelines: 0, boundary_fraction: 1.0, horizon: 200 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSpec {
    pub root: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<String>,
}

fn matrix(field: &str, rows: &Rows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 {
        return Err(Error::config(field, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(Error::config(field, format!("row {i} has {} entries, expected {c}", rows[i].len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(field, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn sym(field: &str, rows: &Rows, n: usize) -> Result<SymMatrix> {
    let m = matrix(field, rows)?;
    if m.shape() != (n, n) {
        return Err(Error::config(field, format!("expected {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    if (&m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::config(field, "must be symmetric"));
    }
    SymMatrix::new(m).map_err(|e| Error::config(field, e.to_string()))
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s).map_err(|e| {
            let field = e.span().map(|sp| format!("bytes {}..{}", sp.start, sp.end)).unwrap_or_else(|| "file".into());
            Error::config(field, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn n_x(&self) -> usize {
        self.system.a.len()
    }

    pub fn n_u(&self) -> usize {
        self.system.b.first().map_or(0, Vec::len)
    }

    pub fn true_system(&self) -> Result<LtiSystem> {
        let a = matrix("system.a", &self.system.a)?;
        let b = matrix("system.b", &self.system.b)?;
        if a.nrows() != a.ncols() {
            return Err(Error::config("system.a", "must be square"));
        }
        if b.nrows() != a.nrows() {
            return Err(Error::config("system.b", format!("must have {} rows", a.nrows())));
        }
        if !(self.system.sigma_w > 0.0) {
            return Err(Error::config("system.sigma_w", "must be > 0"));
        }
        LtiSystem::new(a, b, self.system.sigma_w)
    }

    pub fn perf_channel(&self) -> Result<PerfChannel> {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let p = &self.performance;
        let c = matrix("performance.c", &p.c)?;
        if c.ncols() != n_x {
            return Err(Error::config("performance.c", format!("must have {n_x} columns")));
        }
        let n_z = c.nrows();
        let d = matrix("performance.d", &p.d)?;
        if d.shape() != (n_z, n_u) {
            return Err(Error::config("performance.d", format!("expected {n_z}x{n_u}")));
        }
        let d_w = match &p.d_w {
            Some(r) => matrix("performance.d_w", r)?,
            None => DMatrix::zeros(n_z, n_x),
        };
        if d_w.shape() != (n_z, n_x) {
            return Err(Error::config("performance.d_w", format!("expected {n_z}x{n_x}")));
        }
        match (p.gamma, &p.q_p, &p.s_p, &p.r_p) {
            (Some(g), None, None, None) => {
                if !(g > 0.0) {
                    return Err(Error::config("performance.gamma", "must be > 0"));
                }
                PerfChannel::l2_gain(g, c, d, d_w)
            }
            (None, Some(q), Some(s), Some(r)) => {
                let q_p = sym("performance.q_p", q, n_x)?;
                let s_p = matrix("performance.s_p", s)?;
                if s_p.shape() != (n_x, n_z) {
                    return Err(Error::config("performance.s_p", format!("expected {n_x}x{n_z}")));
                }
                let r_p = sym("performance.r_p", r, n_z)?;
                PerfChannel::new(c, d, d_w, q_p, s_p, r_p).map_err(|e| Error::config("performance.r_p", e.to_string()))
            }
            _ => Err(Error::config("performance", "give either `gamma` or all of `q_p`, `s_p`, `r_p`")),
        }
    }

    pub fn algorithm(&self, solver: SolveOptions, execution: Execution) -> Result<AlgorithmConfig> {
        let (n_x, n_u) = (self.n_x(), self.n_u());
        let e = &self.exploration;
        let initial_input_cov = match &e.initial_input_cov {
            Some(r) => sym("exploration.initial_input_cov", r, n_u)?,
            None => SymMatrix::identity(n_u),
        };
        let g = &self.grid;
        let cfg = AlgorithmConfig {
            delta: self.algorithm.delta,
            n0: self.algorithm.n0,
            horizon: self.algorithm.horizon,
            sigma_w: self.algorithm.design_sigma_w.unwrap_or(self.system.sigma_w),
            q: sym("exploration.q", &e.q, n_x)?,
            r: sym("exploration.r", &e.r, n_u)?,
            perf: self.perf_channel()?,
            initial_input_cov,
            grid: HyperGrid { eps: g.eps.clone(), t_e_rel: g.t_e.clone(), lambda_s: g.lambda_s.clone(), lambda_u: g.lambda_u.clone() },
            k0_t_e_rel: g.k0_t_e.clone(),
            schedule: self.algorithm.schedule,
            solver,
            execution,
        };
        if cfg.r.min_eigenvalue()? <= 0.0 {
            return Err(Error::config("exploration.r", "must be positive definite"));
        }
        if cfg.q.min_eigenvalue()? < -1e-12 {
            return Err(Error::config("exploration.q", "must be positive semidefinite"));
        }
        if cfg.initial_input_cov.min_eigenvalue()? <= 0.0 {
            return Err(Error::config("exploration.initial_input_cov", "must be positive definite"));
        }
        if let Some(s) = self.algorithm.design_sigma_w {
            if !(s > 0.0) {
                return Err(Error::config("algorithm.design_sigma_w", "must be > 0"));
            }
        }
        cfg.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("algorithm.{field}"), message),
            e => e,
        })?;
        Ok(cfg)
    }

    /// Checks every field that can be checked without solving anything.
    pub fn validate(&self) -> Result<()> {
        self.true_system()?;
        self.algorithm(SolveOptions::default(), Execution::Sequential)?;
        let v = &self.validation;
        if !(0.0..=1.0).contains(&v.boundary_fraction) {
            return Err(Error::config("validation.boundary_fraction", "must lie in [0,1]"));
        }
        if v.horizon < 1 {
            return Err(Error::config("validation.horizon", "must be >= 1"));
        }
        Ok(())
    }

    /// `KEY=v1,v2,...` for one of the grid lists.
    pub fn apply_grid_override(&mut self, spec: &str) -> Result<()> {
        let (key, csv) = spec.split_once('=').ok_or_else(|| Error::config("--grid-override", format!("expected KEY=CSV, got `{spec}`")))?;
        let values: Vec<f64> = csv
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config(format!("grid.{key}"), format!("bad number: {e}")))?;
        let slot = match key.trim() {
            "eps" => &mut self.grid.eps,
            "t_e" => &mut self.grid.t_e,
            "lambda_s" => &mut self.grid.lambda_s,
            "lambda_u" => &mut self.grid.lambda_u,
            "k0_t_e" => &mut self.grid.k0_t_e,
            other => return Err(Error::config("--grid-override", format!("unknown grid key `{other}`"))),
        };
        *slot = values;
        self.validate()
    }
}

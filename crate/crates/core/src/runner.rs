//! Stage commands over an output directory. Each stage reads the artifacts
//! of the stages before it, writes its own and returns a one-line summary;
//! `full` runs them all in order through the same files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;
use crate::plant::LtiSystem;
use crate::scenario::ScenarioConfig;
use crate::sdp::SolveOptions;
use crate::seeds;
use crate::synthesis::{
    dual_problem, stage_design, stage_estimate, stage_explore, stage_initial, AlgorithmConfig, DesignArtifact, EstimateArtifact,
    ExplorationArtifact, InitialData, RunArtifacts,
};
use crate::validate::{
    assumption2_check, certify_fixed, coverage_test, monte_carlo_pipelines, sampled_performance_report, write_validation_csv,
    Assumption2Report, Certificate, CoverageSummary, MonteCarloSummary, PerfSummary, ValidationConfig,
};

pub const INITIAL: &str = "initial.json";
pub const ESTIMATE: &str = "estimate.json";
pub const DESIGN: &str = "design.json";
pub const EXPLORATION: &str = "exploration.json";
pub const REPORT: &str = "report.json";
pub const VALIDATION: &str = "validation.json";
pub const VIOLATIONS: &str = "violations.json";
pub const TIMINGS: &str = "timings.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Estimate,
    Design,
    Explore,
    Validate,
    Full,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Estimate => "estimate",
            Stage::Design => "design",
            Stage::Explore => "explore",
            Stage::Validate => "validate",
            Stage::Full => "full",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimate" => Ok(Stage::Estimate),
            "design" => Ok(Stage::Design),
            "explore" => Ok(Stage::Explore),
            "validate" => Ok(Stage::Validate),
            "full" => Ok(Stage::Full),
            other => Err(Error::config("--stage", format!("unknown stage `{other}`"))),
        }
    }
}

/// An artifact tagged with the seed it was produced under.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub seed: u64,
    pub data: T,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub certificate: Option<Certificate>,
    pub certification_error: Option<String>,
    pub performance: PerfSummary,
    pub coverage: CoverageSummary,
    pub assumption2: Assumption2Report,
    pub monte_carlo: Option<MonteCarloSummary>,
}

/// A configured run over one output directory.
pub struct Runner {
    pub scenario: ScenarioConfig,
    pub alg: AlgorithmConfig,
    pub sys: LtiSystem,
    pub seed: u64,
    pub out: PathBuf,
}

impl Runner {
    pub fn new(scenario: ScenarioConfig, out: PathBuf, seed: Option<u64>, execution: Execution) -> Result<Self> {
        let alg = scenario.algorithm(SolveOptions::default(), execution)?;
        let sys = scenario.true_system()?;
        let seed = seed.unwrap_or(scenario.seeds.root);
        fs::create_dir_all(&out)?;
        Ok(Self { scenario, alg, sys, seed, out })
    }

    pub fn run(&self, stage: Stage) -> Result<Vec<String>> {
        match stage {
            Stage::Full => [Stage::Estimate, Stage::Design, Stage::Explore, Stage::Validate].into_iter().map(|s| self.run_one(s)).collect(),
            s => Ok(vec![self.run_one(s)?]),
        }
    }

    fn run_one(&self, stage: Stage) -> Result<String> {
        let t = Instant::now();
        let out = match stage {
            Stage::Estimate => self.estimate(),
            Stage::Design => self.design(),
            Stage::Explore => self.explore(),
            Stage::Validate => self.validate(),
            Stage::Full => unreachable!("expanded by run"),
        };
        self.record_timing(stage.name(), t.elapsed().as_secs_f64())?;
        out
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        fs::write(self.path(name), s)?;
        Ok(())
    }

    fn write_artifact<T: Serialize>(&self, name: &str, data: &T) -> Result<()> {
        self.write_json(name, &Artifact { seed: self.seed, data })
    }

    fn read_artifact<T: DeserializeOwned>(&self, stage: Stage, name: &str) -> Result<T> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { stage: stage.name().into(), artifact: path.display().to_string() });
        }
        let a: Artifact<T> = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if a.seed != self.seed {
            return Err(Error::config(
                "--seed",
                format!("{} was produced with seed {}, this run uses {}", path.display(), a.seed, self.seed),
            ));
        }
        Ok(a.data)
    }

    /// Wall-clock seconds per stage, kept apart from the reproducible
    /// artifacts.
    fn record_timing(&self, stage: &str, secs: f64) -> Result<()> {
        let path = self.path(TIMINGS);
        let mut map: BTreeMap<String, f64> = match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s).unwrap_or_default(),
            Err(_) => BTreeMap::new(),
        };
        map.insert(stage.to_string(), secs);
        self.write_json(TIMINGS, &map)
    }

    fn estimate(&self) -> Result<String> {
        let initial = stage_initial(&self.alg, &self.sys, self.seed)?;
        let est = stage_estimate(&self.alg, &initial)?;
        initial.trajectory.write_csv(fs::File::create(self.path("initial_trajectory.csv"))?)?;
        self.write_artifact(INITIAL, &initial)?;
        self.write_artifact(ESTIMATE, &est)?;
        Ok(format!(
            "estimate: N0={} c_delta={:.4} lambda_min(D0)={:.4e}",
            initial.trajectory.horizon(),
            est.info.c_delta,
            est.info.d.min_eigenvalue()?
        ))
    }

    fn design(&self) -> Result<String> {
        let est: EstimateArtifact = self.read_artifact(Stage::Design, ESTIMATE)?;
        let design = stage_design(&self.alg, &est)?;
        self.write_status_csv(&design)?;
        self.write_artifact(DESIGN, &design)?;
        let s = &design.search;
        let feasible = s.points.iter().filter(|p| p.cost.is_some()).count();
        for p in &s.points {
            log::debug!("grid point {} {:?}: {:?} {:?} {}", p.index, p.hyper, p.status, p.cost, p.detail);
        }
        Ok(format!(
            "design: {feasible}/{} grid points feasible, best #{} cost={:.6e} K={:?} Ks={:?}",
            s.points.len(),
            s.best_index,
            s.best.exploration_cost,
            s.best.k.as_slice(),
            s.best.k_s.as_slice()
        ))
    }

    fn write_status_csv(&self, design: &DesignArtifact) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path("solver_status.csv"))?;
        w.write_record(["index", "eps", "t_e", "lambda_s", "lambda_u", "status", "cost", "detail"])?;
        for p in &design.search.points {
            w.write_record([
                p.index.to_string(),
                p.hyper.eps.to_string(),
                p.hyper.t_e.to_string(),
                p.hyper.lambda_s.to_string(),
                p.hyper.lambda_u.to_string(),
                format!("{:?}", p.status).to_lowercase(),
                p.cost.map(|c| c.to_string()).unwrap_or_default(),
                p.detail.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn explore(&self) -> Result<String> {
        let initial: InitialData = self.read_artifact(Stage::Explore, INITIAL)?;
        let est: EstimateArtifact = self.read_artifact(Stage::Explore, ESTIMATE)?;
        let design: DesignArtifact = self.read_artifact(Stage::Explore, DESIGN)?;
        let exploration = stage_explore(&self.alg, &self.sys, self.seed, &initial, &est, &design)?;
        exploration.trajectory.write_csv(fs::File::create(self.path("exploration_trajectory.csv"))?)?;
        self.write_artifact(EXPLORATION, &exploration)?;
        let k_new = exploration.controller.k_new.clone();
        let run = RunArtifacts { initial, estimate: est, design, exploration };
        self.write_json(REPORT, &run.report(&self.alg))?;
        Ok(format!("explore: T={} K_new={:?}", self.alg.horizon, k_new.as_slice()))
    }

    fn validate(&self) -> Result<String> {
        let est: EstimateArtifact = self.read_artifact(Stage::Validate, ESTIMATE)?;
        let design: DesignArtifact = self.read_artifact(Stage::Validate, DESIGN)?;
        let exploration: ExplorationArtifact = self.read_artifact(Stage::Validate, EXPLORATION)?;
        let best = &design.search.best;
        let problem = dual_problem(&self.alg, &est, design.robust_lqr.k0.clone())?;
        let (certificate, certification_error) = match certify_fixed(best, &problem.gs, &self.alg.solver) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let v = &self.scenario.validation;
        let base = ValidationConfig {
            n_trials: v.samples.max(1),
            delta: self.alg.delta,
            n0: self.alg.n0,
            horizon: v.horizon,
            boundary_fraction: v.boundary_fraction,
            eps: best.hyper.eps,
            inflate_u: 1.0,
            noiseless: false,
            seed: seeds::child_seed(self.seed, "validate", 0),
            execution: self.alg.execution,
        };
        let performance = sampled_performance_report(best, &problem.gs, &base, &self.alg.solver)?;
        let cov_cfg = ValidationConfig {
            n_trials: v.coverage_trials.max(1),
            horizon: self.alg.horizon,
            seed: seeds::child_seed(self.seed, "validate", 1),
            ..base.clone()
        };
        let coverage = coverage_test(&self.sys, &self.alg.initial_input_cov, &cov_cfg)?;
        let assumption2 = assumption2_check(&exploration.trajectory, best, &est.info.d, self.alg.sigma_w, est.info.c_delta)?;
        let monte_carlo = if v.pipelines > 0 {
            let mc =
                monte_carlo_pipelines(&self.alg, &self.sys, v.pipelines, seeds::child_seed(self.seed, "validate", 2), self.alg.execution)?;
            write_validation_csv(&mc.trials, fs::File::create(self.path("validation.csv"))?)?;
            Some(mc)
        } else {
            None
        };
        let report = ValidationReport { certificate, certification_error, performance, coverage, assumption2, monte_carlo };
        self.write_artifact(VALIDATION, &report)?;
        if !report.performance.failures.is_empty() {
            self.write_json(VIOLATIONS, &report.performance.failures)?;
        }
        let summary = format!(
            "validate: certified={} perf_failures={}/{} coverage={:.3} assumption2_gap={:.3}{}",
            report.certificate.is_some(),
            report.performance.failures.len(),
            report.performance.samples,
            report.coverage.theta,
            report.assumption2.discrepancy,
            report.monte_carlo.as_ref().map(|m| format!(" joint={:.3}", m.joint_fraction)).unwrap_or_default()
        );
        if let Some(e) = report.certification_error {
            return Err(Error::CertificationFailed(e).in_stage("validate"));
        }
        if let Some(f) = report.performance.failures.first() {
            return Err(Error::PerformanceViolation(serde_json::to_string(f)?).in_stage("validate"));
        }
        Ok(summary)
    }
}

/// Reads a stage artifact without a runner, e.g. from tests.
pub fn read_artifact_file<T: DeserializeOwned>(path: &Path) -> Result<Artifact<T>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

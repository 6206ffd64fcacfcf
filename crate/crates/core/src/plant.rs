//! Ground-truth LTI simulator and the performance channel.
//!
//! This is the only module that holds the true `(A, B)`; estimation and
//! synthesis only ever see trajectories.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_kit::{checked_inverse, is_definite, GaussianSampler, Sense, SymMatrix};

/// `x+ = A x + B u + w`, `w ~ N(0, sigma_w^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    #[serde(with = "crate::mat_json::dense")]
    pub a: DMatrix<f64>,
    #[serde(with = "crate::mat_json::dense")]
    pub b: DMatrix<f64>,
    pub sigma_w: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w: f64) -> Result<Self> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("A must be square, got {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must have {} rows and >= 1 column, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        if !(sigma_w > 0.0) || !sigma_w.is_finite() {
            return Err(Error::DomainError(format!("sigma_w must be > 0, got {sigma_w}")));
        }
        Ok(Self { a, b, sigma_w })
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b.ncols()
    }

    /// `[A B]`.
    pub fn theta(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n_x(), self.n_x() + self.n_u());
        t.view_mut((0, 0), self.a.shape()).copy_from(&self.a);
        t.view_mut((0, self.n_x()), self.b.shape()).copy_from(&self.b);
        t
    }
}

/// Performance output `z = C x + D u + D_w w` and the quadratic
/// performance weights `[[Q_p, S_p], [S_p^T, R_p]]` on `(w, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfChannel {
    #[serde(with = "crate::mat_json::dense")]
    pub c: DMatrix<f64>,
    #[serde(with = "crate::mat_json::dense")]
    pub d: DMatrix<f64>,
    #[serde(with = "crate::mat_json::dense")]
    pub d_w: DMatrix<f64>,
    pub q_p: SymMatrix,
    #[serde(with = "crate::mat_json::dense")]
    pub s_p: DMatrix<f64>,
    pub r_p: SymMatrix,
}

impl PerfChannel {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>, d_w: DMatrix<f64>, q_p: SymMatrix, s_p: DMatrix<f64>, r_p: SymMatrix) -> Result<Self> {
        let n_z = c.nrows();
        let n_x = c.ncols();
        if n_z == 0 || d.nrows() != n_z || d_w.shape() != (n_z, n_x) {
            return Err(Error::DimensionMismatch(format!(
                "performance channel: C {:?}, D {:?}, D_w {:?}",
                c.shape(),
                d.shape(),
                d_w.shape()
            )));
        }
        if q_p.dim() != n_x || s_p.shape() != (n_x, n_z) || r_p.dim() != n_z {
            return Err(Error::DimensionMismatch(format!(
                "performance weights: Q_p {}, S_p {:?}, R_p {} for n_x={n_x}, n_z={n_z}",
                q_p.dim(),
                s_p.shape(),
                r_p.dim()
            )));
        }
        if !is_definite(&r_p, Sense::Pos, 0.0)? {
            return Err(Error::DomainError("R_p must be positive definite".into()));
        }
        Ok(Self { c, d, d_w, q_p, s_p, r_p })
    }

    /// L2-gain specification `||z|| <= gamma ||w||`:
    /// `Q_p = -gamma I`, `S_p = 0`, `R_p = I / gamma`.
    pub fn l2_gain(gamma: f64, c: DMatrix<f64>, d: DMatrix<f64>, d_w: DMatrix<f64>) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::DomainError(format!("gamma must be > 0, got {gamma}")));
        }
        let n_x = c.ncols();
        let n_z = c.nrows();
        Self::new(
            c,
            d,
            d_w,
            SymMatrix::scaled_identity(n_x, -gamma),
            DMatrix::zeros(n_x, n_z),
            SymMatrix::scaled_identity(n_z, 1.0 / gamma),
        )
    }

    pub fn n_x(&self) -> usize {
        self.c.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.d.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.c.nrows()
    }

    /// The full `(n_x + n_z)` square weight on `(w, z)`.
    pub fn weight(&self) -> DMatrix<f64> {
        let n_x = self.n_x();
        let n_z = self.n_z();
        let mut m = DMatrix::zeros(n_x + n_z, n_x + n_z);
        m.view_mut((0, 0), (n_x, n_x)).copy_from(self.q_p.as_matrix());
        m.view_mut((0, n_x), (n_x, n_z)).copy_from(&self.s_p);
        m.view_mut((n_x, 0), (n_z, n_x)).copy_from(&self.s_p.transpose());
        m.view_mut((n_x, n_x), (n_z, n_z)).copy_from(self.r_p.as_matrix());
        m
    }
}

/// `z = C x + D u + D_w w`.
pub fn perf_output(pc: &PerfChannel, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
    if x.len() != pc.n_x() || u.len() != pc.n_u() || w.len() != pc.n_x() {
        return Err(Error::DimensionMismatch(format!(
            "perf_output: x {}, u {}, w {} for channel with n_x={}, n_u={}",
            x.len(),
            u.len(),
            w.len(),
            pc.n_x(),
            pc.n_u()
        )));
    }
    Ok(&pc.c * x + &pc.d * u + &pc.d_w * w)
}

/// Scheduled feedback term `u = K x + K_s Δ_s [x; u]`, resolved to an
/// explicit gain.
#[derive(Debug, Clone)]
pub struct SchedulingTerm {
    pub k_s: DMatrix<f64>,
    pub delta_s: DMatrix<f64>,
}

/// State feedback plus optional Gaussian excitation and scheduling term.
#[derive(Debug, Clone)]
pub struct Policy {
    pub gain: DMatrix<f64>,
    pub excitation: Option<SymMatrix>,
    pub scheduling: Option<SchedulingTerm>,
}

impl Policy {
    pub fn feedback(gain: DMatrix<f64>) -> Self {
        Self { gain, excitation: None, scheduling: None }
    }

    pub fn exploring(gain: DMatrix<f64>, cov: SymMatrix) -> Self {
        Self { gain, excitation: Some(cov), scheduling: None }
    }

    /// Pure excitation `u ~ N(0, cov)`.
    pub fn random(n_x: usize, cov: SymMatrix) -> Self {
        let n_u = cov.dim();
        Self { gain: DMatrix::zeros(n_u, n_x), excitation: Some(cov), scheduling: None }
    }

    /// Explicit feedback gain after resolving the scheduling loop.
    pub fn effective_gain(&self) -> Result<DMatrix<f64>> {
        let Some(s) = &self.scheduling else {
            return Ok(self.gain.clone());
        };
        let n_u = self.gain.nrows();
        let n_x = self.gain.ncols();
        if s.k_s.shape() != (n_u, n_x) || s.delta_s.shape() != (n_x, n_x + n_u) {
            return Err(Error::DimensionMismatch("scheduling term shapes".into()));
        }
        let ks_dx = &s.k_s * s.delta_s.columns(0, n_x);
        let ks_du = &s.k_s * s.delta_s.columns(n_x, n_u);
        let lhs = DMatrix::identity(n_u, n_u) - ks_du;
        let inv = checked_inverse(&lhs, "I - K_s ΔB").map_err(|e| Error::IllPosed(e.to_string()))?;
        Ok(inv * (&self.gain + ks_dx))
    }
}

/// A simulated run. `states` has `horizon + 1` entries, `inputs` and
/// `noises` have `horizon`. `perf_outputs` is either empty or has
/// `horizon` entries, filled by [`Trajectory::attach_perf`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    #[serde(with = "crate::mat_json::vectors")]
    pub states: Vec<DVector<f64>>,
    #[serde(with = "crate::mat_json::vectors")]
    pub inputs: Vec<DVector<f64>>,
    #[serde(with = "crate::mat_json::vectors")]
    pub noises: Vec<DVector<f64>>,
    #[serde(with = "crate::mat_json::vectors", default)]
    pub perf_outputs: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    pub fn last_state(&self) -> &DVector<f64> {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn attach_perf(&mut self, pc: &PerfChannel) -> Result<()> {
        self.perf_outputs =
            (0..self.horizon()).map(|k| perf_output(pc, &self.states[k], &self.inputs[k], &self.noises[k])).collect::<Result<_>>()?;
        Ok(())
    }

    /// Writes `k, x[..], u[..], w[..], z[..]`; the terminal state row leaves
    /// the input, noise and output columns empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n_x = self.states[0].len();
        let n_u = self.inputs.first().map_or(0, |u| u.len());
        let n_z = self.perf_outputs.first().map_or(0, |z| z.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["k".to_string()];
        header.extend((0..n_x).map(|i| format!("x{i}")));
        header.extend((0..n_u).map(|i| format!("u{i}")));
        header.extend((0..n_x).map(|i| format!("w{i}")));
        header.extend((0..n_z).map(|i| format!("z{i}")));
        w.write_record(&header)?;
        for k in 0..self.states.len() {
            let mut row = vec![k.to_string()];
            row.extend(self.states[k].iter().map(f64::to_string));
            let fill = |row: &mut Vec<String>, v: Option<&DVector<f64>>, n: usize| match v {
                Some(v) => row.extend(v.iter().map(f64::to_string)),
                None => row.extend(std::iter::repeat_n(String::new(), n)),
            };
            fill(&mut row, self.inputs.get(k), n_u);
            fill(&mut row, self.noises.get(k), n_x);
            fill(&mut row, self.perf_outputs.get(k), n_z);
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulates `x+ = A x + B u + w` under `policy` for `horizon` steps.
pub fn simulate<R: Rng + ?Sized>(sys: &LtiSystem, policy: &Policy, x0: &DVector<f64>, horizon: usize, rng: &mut R) -> Result<Trajectory> {
    let n_x = sys.n_x();
    let sigma = sys.sigma_w;
    simulate_with(sys, policy, x0, horizon, rng, |rng| {
        DVector::from_iterator(n_x, (0..n_x).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)))
    })
}

/// Like [`simulate`] but with the disturbance sequence given explicitly.
pub fn simulate_with_noise<R: Rng + ?Sized>(
    sys: &LtiSystem,
    policy: &Policy,
    x0: &DVector<f64>,
    noises: &[DVector<f64>],
    rng: &mut R,
) -> Result<Trajectory> {
    if noises.iter().any(|w| w.len() != sys.n_x()) {
        return Err(Error::DimensionMismatch("noise vector length".into()));
    }
    let mut it = noises.iter();
    simulate_with(sys, policy, x0, noises.len(), rng, |_| it.next().expect("length checked").clone())
}

fn simulate_with<R: Rng + ?Sized>(
    sys: &LtiSystem,
    policy: &Policy,
    x0: &DVector<f64>,
    horizon: usize,
    rng: &mut R,
    mut noise: impl FnMut(&mut R) -> DVector<f64>,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::DomainError("horizon must be >= 1".into()));
    }
    let (n_x, n_u) = (sys.n_x(), sys.n_u());
    if x0.len() != n_x || policy.gain.shape() != (n_u, n_x) {
        return Err(Error::DimensionMismatch(format!(
            "simulate: x0 {}, gain {:?} for n_x={n_x}, n_u={n_u}",
            x0.len(),
            policy.gain.shape()
        )));
    }
    let excitation = match &policy.excitation {
        Some(cov) if cov.dim() != n_u => {
            return Err(Error::DimensionMismatch(format!("excitation covariance dim {} != n_u {n_u}", cov.dim())))
        }
        Some(cov) => Some(GaussianSampler::new(cov)?),
        None => None,
    };
    let gain = policy.effective_gain()?;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    let mut noises = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for _ in 0..horizon {
        let mut u = &gain * &x;
        if let Some(s) = &excitation {
            u += s.sample(rng);
        }
        let w = noise(rng);
        let next = &sys.a * &x + &sys.b * &u + &w;
        states.push(x);
        inputs.push(u);
        noises.push(w);
        x = next;
    }
    states.push(x);
    Ok(Trajectory { states, inputs, noises, perf_outputs: Vec::new() })
}

/// `(s_wz, s_ww)`: the quadratic performance sum over the trajectory and
/// the disturbance energy. Quadratic performance holds on this run
/// when `s_wz <= -eps * s_ww`.
pub fn quad_perf_lhs(pc: &PerfChannel, traj: &Trajectory) -> Result<(f64, f64)> {
    let weight = pc.weight();
    let n_x = pc.n_x();
    let mut s_wz = 0.0;
    let mut s_ww = 0.0;
    for k in 0..traj.horizon() {
        let w = &traj.noises[k];
        let z = match traj.perf_outputs.get(k) {
            Some(z) => z.clone(),
            None => perf_output(pc, &traj.states[k], &traj.inputs[k], w)?,
        };
        let mut v = DVector::zeros(n_x + pc.n_z());
        v.rows_mut(0, n_x).copy_from(w);
        v.rows_mut(n_x, pc.n_z()).copy_from(&z);
        s_wz += v.dot(&(&weight * &v));
        s_ww += w.norm_squared();
    }
    Ok((s_wz, s_ww))
}

/// Largest `sqrt(sum ||z||^2 / sum ||w||^2)` over the given trajectories.
pub fn empirical_l2_gain(pc: &PerfChannel, trajectories: &[Trajectory]) -> Result<f64> {
    let mut best: Option<f64> = None;
    for t in trajectories {
        let mut zz = 0.0;
        let mut ww = 0.0;
        for k in 0..t.horizon() {
            let z = match t.perf_outputs.get(k) {
                Some(z) => z.clone(),
                None => perf_output(pc, &t.states[k], &t.inputs[k], &t.noises[k])?,
            };
            zz += z.norm_squared();
            ww += t.noises[k].norm_squared();
        }
        if ww > 0.0 {
            let g = (zz / ww).sqrt();
            best = Some(best.map_or(g, |b: f64| b.max(g)));
        }
    }
    best.ok_or(Error::ZeroDisturbance)
}

/// Fraction of total state energy carried by the last `tail` steps; used
/// to check that a finite horizon truncates an L2 response adequately.
pub fn tail_energy_fraction(traj: &Trajectory, tail: usize) -> f64 {
    let total: f64 = traj.states.iter().map(|x| x.norm_squared()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let n = traj.states.len();
    let t: f64 = traj.states[n.saturating_sub(tail)..].iter().map(|x| x.norm_squared()).sum();
    t / total
}

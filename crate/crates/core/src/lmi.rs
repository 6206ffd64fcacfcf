//! LMI builders for synthesis and analysis.
//!
//! Every builder works on [`AffineMatrix`] operands. Passing decision
//! variables yields a constraint for a [`ConicProgram`](crate::sdp::ConicProgram);
//! passing constants and calling `.value()` yields the numeric matrix used
//! for verification. Both paths share one assembly routine.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_kit::{checked_inverse, is_definite, sqrt_psd, Sense, SymMatrix};
use crate::plant::PerfChannel;
use crate::sdp::AffineMatrix;

type M = DMatrix<f64>;

fn c(m: &M) -> AffineMatrix {
    AffineMatrix::constant(m.clone())
}

fn zero(r: usize, c: usize) -> AffineMatrix {
    AffineMatrix::zeros(r, c)
}

fn eye(n: usize) -> AffineMatrix {
    AffineMatrix::identity(n)
}

fn expect_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::ShapeMismatch(format!("{what}: expected {want:?}, got {got:?}")));
    }
    Ok(())
}

/// Open-loop generalized plant around the initial estimate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainSchedulingData {
    #[serde(with = "crate::mat_json::dense")]
    pub a0: M,
    #[serde(with = "crate::mat_json::dense")]
    pub b0: M,
    pub perf: PerfChannel,
}

impl GainSchedulingData {
    pub fn new(a0: M, b0: M, perf: PerfChannel) -> Result<Self> {
        let n_x = a0.nrows();
        expect_shape("A0_hat", a0.shape(), (n_x, n_x))?;
        expect_shape("B0_hat", b0.shape(), (n_x, perf.n_u()))?;
        if perf.n_x() != n_x {
            return Err(Error::ShapeMismatch(format!("performance channel has n_x={}, plant {n_x}", perf.n_x())));
        }
        Ok(Self { a0, b0, perf })
    }

    pub fn n_x(&self) -> usize {
        self.a0.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b0.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.perf.n_z()
    }

    /// Side length of the synthesis LMI.
    pub fn s2_dim(&self) -> usize {
        7 * self.n_x() + 2 * self.n_u() + self.n_z()
    }
}

/// Data for the robust LQR cost of the exploration controller.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplorationData {
    #[serde(with = "crate::mat_json::dense")]
    pub a0: M,
    #[serde(with = "crate::mat_json::dense")]
    pub b0: M,
    pub d0: SymMatrix,
    pub q: SymMatrix,
    pub r: SymMatrix,
    pub sigma_w: f64,
}

impl ExplorationData {
    pub fn new(a0: M, b0: M, d0: SymMatrix, q: SymMatrix, r: SymMatrix, sigma_w: f64) -> Result<Self> {
        let n_x = a0.nrows();
        let n_u = b0.ncols();
        expect_shape("A0_hat", a0.shape(), (n_x, n_x))?;
        expect_shape("B0_hat", b0.shape(), (n_x, n_u))?;
        expect_shape("D0", (d0.dim(), d0.dim()), (n_x + n_u, n_x + n_u))?;
        expect_shape("Q", (q.dim(), q.dim()), (n_x, n_x))?;
        expect_shape("R", (r.dim(), r.dim()), (n_u, n_u))?;
        if !is_definite(&q, Sense::Psd, 1e-12)? {
            return Err(Error::DomainError("Q must be positive semidefinite".into()));
        }
        if !is_definite(&r, Sense::Pos, 0.0)? {
            return Err(Error::DomainError("R must be positive definite".into()));
        }
        if !(sigma_w > 0.0) {
            return Err(Error::DomainError(format!("sigma_w must be > 0, got {sigma_w}")));
        }
        Ok(Self { a0, b0, d0, q, r, sigma_w })
    }

    pub fn n_x(&self) -> usize {
        self.a0.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b0.ncols()
    }
}

/// `[[Y, [Q^½ W; R^½ Zᵀ]], [·ᵀ, W]] ⪰ 0`.
pub fn s1_block(w: &AffineMatrix, y: &AffineMatrix, z: &AffineMatrix, q: &SymMatrix, r: &SymMatrix) -> Result<AffineMatrix> {
    let n_x = q.dim();
    let n_u = r.dim();
    expect_shape("S1: W", w.shape(), (n_x, n_x))?;
    expect_shape("S1: Y", y.shape(), (n_x + n_u, n_x + n_u))?;
    expect_shape("S1: Z", z.shape(), (n_x, n_u))?;
    let qh = sqrt_psd(q)?.into_inner();
    let rh = sqrt_psd(r)?.into_inner();
    let off = AffineMatrix::vstack(vec![w.lmul(&qh), z.t().lmul(&rh)]);
    Ok(AffineMatrix::blocks(vec![vec![y.clone(), off.clone()], vec![off.t(), w.clone()]]))
}

/// `[[H, F, G], [Fᵀ, W - σ_w² I - t I, 0], [Gᵀ, 0, t D0]] ⪰ 0`.
pub fn se_block(t_e: f64, z: &AffineMatrix, w: &AffineMatrix, sigma: &AffineMatrix, ed: &ExplorationData) -> Result<AffineMatrix> {
    let (n_x, n_u) = (ed.n_x(), ed.n_u());
    expect_shape("Se: W", w.shape(), (n_x, n_x))?;
    expect_shape("Se: Z", z.shape(), (n_x, n_u))?;
    expect_shape("Se: Sigma", sigma.shape(), (n_u, n_u))?;
    if !(t_e > 0.0) {
        return Err(Error::DomainError(format!("t_e must be > 0, got {t_e}")));
    }
    let p = n_x + n_u;
    let h = AffineMatrix::block_diag(vec![w.clone(), sigma.clone()]);
    let f = AffineMatrix::vstack(vec![w.rmul(&ed.a0.transpose()) + z.rmul(&ed.b0.transpose()), sigma.rmul(&ed.b0.transpose())]);
    let g = AffineMatrix::blocks(vec![vec![-w, -z], vec![zero(n_u, n_x), -sigma]]);
    let ce = w - &(eye(n_x) * (ed.sigma_w * ed.sigma_w + t_e));
    let td0 = c(ed.d0.as_matrix()) * t_e;
    Ok(AffineMatrix::blocks(vec![vec![h, f.clone(), g.clone()], vec![f.t(), ce, zero(n_x, p)], vec![g.t(), zero(p, n_x), td0]]))
}

/// The gain-scheduled synthesis matrix (required `≺ 0`) with
/// `Q_s = Q_u = -I`. `ds` and `dbar` take the places of `R_s^{-1}` and
/// `R_u^{-1}`, so the matrix is affine for fixed multipliers.
#[allow(clippy::too_many_arguments)]
pub fn s2_gain_sched(
    ks: &AffineMatrix,
    m: &AffineMatrix,
    n: &AffineMatrix,
    lambda_s: f64,
    lambda_u: f64,
    ds: &AffineMatrix,
    dbar: &AffineMatrix,
    gs: &GainSchedulingData,
) -> Result<AffineMatrix> {
    let (n_x, n_u, n_z) = (gs.n_x(), gs.n_u(), gs.n_z());
    let p = n_x + n_u;
    expect_shape("S2: Ks", ks.shape(), (n_u, n_x))?;
    expect_shape("S2: M", m.shape(), (n_u, n_x))?;
    expect_shape("S2: N", n.shape(), (n_x, n_x))?;
    expect_shape("S2: Ds", ds.shape(), (p, p))?;
    expect_shape("S2: DbarT", dbar.shape(), (p, p))?;
    if !(lambda_s > 0.0 && lambda_u > 0.0) {
        return Err(Error::DomainError("multipliers must be > 0".into()));
    }
    let pc = &gs.perf;
    let sp = &pc.s_p;
    let cn_dm = n.lmul(&pc.c) + m.lmul(&pc.d);
    let dks = ks.lmul(&pc.d);
    let perf_ww = pc.q_p.as_matrix() + pc.d_w.transpose() * sp.transpose() + sp * &pc.d_w;

    let w_x = cn_dm.lmul(sp);
    let w_ws = dks.lmul(sp);
    let upper = AffineMatrix::blocks(vec![
        vec![-n, zero(n_x, n_x), zero(n_x, n_x), w_x.t()],
        vec![zero(n_x, n_x), eye(n_x) * -lambda_s, zero(n_x, n_x), w_ws.t()],
        vec![zero(n_x, n_x), zero(n_x, n_x), eye(n_x) * -lambda_u, zero(n_x, n_x)],
        vec![w_x, w_ws, zero(n_x, n_x), c(&perf_ww)],
    ]);

    let nm = AffineMatrix::vstack(vec![n.clone(), m.clone()]);
    let zks = AffineMatrix::vstack(vec![zero(n_x, n_x), ks.clone()]);
    let lower = AffineMatrix::blocks(vec![
        vec![n.lmul(&gs.a0) + m.lmul(&gs.b0), eye(n_x) + ks.lmul(&gs.b0), eye(n_x), eye(n_x)],
        vec![nm.clone(), zks.clone(), zero(p, n_x), zero(p, n_x)],
        vec![nm, zks, zero(p, n_x), zero(p, n_x)],
        vec![cn_dm, dks, zero(n_z, n_x), c(&pc.d_w)],
    ]);

    let rp_inv = pc.r_p.inverse()?.into_inner();
    let lr = AffineMatrix::block_diag(vec![-n, ds * (-1.0 / lambda_s), dbar * (-1.0 / lambda_u), c(&-rp_inv)]);
    Ok(AffineMatrix::blocks(vec![vec![upper, lower.t()], vec![lower, lr]]))
}

/// `[[ε D0 - (1+ε) Ds, ε D0], [ε D0, Dbar + ε D0]]`; positive definite iff
/// `Ds^{-1} ≻ (1 + 1/ε) D0^{-1} + (1 + ε) Dbar^{-1}`.
pub fn s3_block(eps: f64, d0: &AffineMatrix, dbar: &AffineMatrix, ds: &AffineMatrix) -> Result<AffineMatrix> {
    let p = d0.nrows();
    expect_shape("S3: D0", d0.shape(), (p, p))?;
    expect_shape("S3: DbarT", dbar.shape(), (p, p))?;
    expect_shape("S3: Ds", ds.shape(), (p, p))?;
    if !(eps > 0.0) {
        return Err(Error::DomainError(format!("eps must be > 0, got {eps}")));
    }
    let ed0 = d0 * eps;
    Ok(AffineMatrix::blocks(vec![vec![&ed0 - &(ds * (1.0 + eps)), ed0.clone()], vec![ed0.clone(), dbar + &ed0]]))
}

/// Affine lower bound on the predicted regressor covariance with `V = [I K0ᵀ]`:
/// `[[W, Z], [Zᵀ, Zᵀ K0ᵀ + K0 Z - K0 W K0ᵀ + Σ]]`.
pub fn covariance_lower_bound(w: &AffineMatrix, z: &AffineMatrix, sigma: &AffineMatrix, k0: &M) -> Result<AffineMatrix> {
    let (n_u, n_x) = k0.shape();
    expect_shape("bound: W", w.shape(), (n_x, n_x))?;
    expect_shape("bound: Z", z.shape(), (n_x, n_u))?;
    expect_shape("bound: Sigma", sigma.shape(), (n_u, n_u))?;
    let zk = z.t().rmul(&k0.transpose());
    let corner = &zk + &zk.t() - w.lmul(k0).rmul(&k0.transpose()) + sigma.clone();
    Ok(AffineMatrix::blocks(vec![vec![w.clone(), z.clone()], vec![z.t(), corner]]))
}

/// `(T / (σ_w² c_δ)) · bound + D0 - Dbar ≻ 0`. `noise_scale` is `σ_w² c_δ`.
#[allow(clippy::too_many_arguments)]
pub fn dbar_constraint(
    w: &AffineMatrix,
    z: &AffineMatrix,
    sigma: &AffineMatrix,
    dbar: &AffineMatrix,
    k0: &M,
    d0: &SymMatrix,
    horizon: usize,
    noise_scale: f64,
) -> Result<AffineMatrix> {
    if !(noise_scale > 0.0) {
        return Err(Error::DomainError(format!("sigma_w^2 c_delta must be > 0, got {noise_scale}")));
    }
    expect_shape("DbarT", dbar.shape(), (d0.dim(), d0.dim()))?;
    let bound = covariance_lower_bound(w, z, sigma, k0)?;
    Ok(bound * (horizon as f64 / noise_scale) + c(d0.as_matrix()) - dbar.clone())
}

/// Closed-loop analysis matrix (required `≺ 0`), affine in `X` and the
/// two 1x1 multipliers. `rs` and `ru` are the multiplier weights on the
/// scheduling and uncertainty outputs, i.e. `Ds^{-1}` and `Dbar^{-1}`.
#[allow(clippy::too_many_arguments)]
pub fn analysis_lmi(
    k: &M,
    ks: &M,
    x: &AffineMatrix,
    lambda_s: &AffineMatrix,
    lambda_u: &AffineMatrix,
    rs: &SymMatrix,
    ru: &SymMatrix,
    gs: &GainSchedulingData,
) -> Result<AffineMatrix> {
    let (n_x, n_u, n_z) = (gs.n_x(), gs.n_u(), gs.n_z());
    let p = n_x + n_u;
    expect_shape("analysis: K", k.shape(), (n_u, n_x))?;
    expect_shape("analysis: Ks", ks.shape(), (n_u, n_x))?;
    expect_shape("analysis: X", x.shape(), (n_x, n_x))?;
    expect_shape("analysis: Rs", (rs.dim(), rs.dim()), (p, p))?;
    expect_shape("analysis: Ru", (ru.dim(), ru.dim()), (p, p))?;
    let v = analysis_outer_factor(k, ks, gs);
    let mult = |lam: &AffineMatrix, r: &SymMatrix| {
        let mut w = DMatrix::zeros(n_x + p, n_x + p);
        w.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
        w.view_mut((0, 0), (n_x, n_x)).scale_mut(-1.0);
        w.view_mut((n_x, n_x), (p, p)).copy_from(r.as_matrix());
        AffineMatrix::scalar_times(lam, &w)
    };
    let middle = AffineMatrix::block_diag(vec![
        AffineMatrix::block_diag(vec![-x, x.clone()]),
        mult(lambda_s, rs),
        mult(lambda_u, ru),
        c(&gs.perf.weight()),
    ]);
    debug_assert_eq!(middle.nrows(), v.nrows());
    let _ = n_z;
    Ok(middle.congruence(&v))
}

/// Outer factor `V` of the analysis quadratic form: rows map
/// `(x, w^s, w^u, w)` to `(x, x+, w^s, z^s, w^u, z^u, w, z)`.
pub fn analysis_outer_factor(k: &M, ks: &M, gs: &GainSchedulingData) -> M {
    let (n_x, n_u, n_z) = (gs.n_x(), gs.n_u(), gs.n_z());
    let p = n_x + n_u;
    let pc = &gs.perf;
    let i = DMatrix::<f64>::identity(n_x, n_x);
    let a_cl = &gs.a0 + &gs.b0 * k;
    let mut v = DMatrix::zeros(4 * n_x + n_x + 2 * p + n_z, 4 * n_x);
    let mut r = 0;
    let put = |v: &mut M, r: usize, col: usize, b: &M| v.view_mut((r, col * n_x), b.shape()).copy_from(b);
    put(&mut v, r, 0, &i);
    r += n_x;
    put(&mut v, r, 0, &a_cl);
    put(&mut v, r, 1, &(&i + &gs.b0 * ks));
    put(&mut v, r, 2, &i);
    put(&mut v, r, 3, &i);
    r += n_x;
    put(&mut v, r, 1, &i);
    r += n_x;
    let ik = crate::matrix_kit::vstack(&[&i, k]).expect("same width");
    let zks = crate::matrix_kit::vstack(&[&DMatrix::zeros(n_x, n_x), ks]).expect("same width");
    put(&mut v, r, 0, &ik);
    put(&mut v, r, 1, &zks);
    r += p;
    put(&mut v, r, 2, &i);
    r += n_x;
    put(&mut v, r, 0, &ik);
    put(&mut v, r, 1, &zks);
    r += p;
    put(&mut v, r, 3, &i);
    r += n_x;
    put(&mut v, r, 0, &(&pc.c + &pc.d * k));
    put(&mut v, r, 1, &(&pc.d * ks));
    put(&mut v, r, 3, &pc.d_w);
    v
}

/// Numeric analysis matrix with `Rs = Ds^{-1}`, `Ru = Dbar^{-1}`.
#[allow(clippy::too_many_arguments)]
pub fn analysis_lmi_fixed(
    k: &M,
    ks: &M,
    x: &SymMatrix,
    lambda_s: f64,
    lambda_u: f64,
    ds: &SymMatrix,
    dbar: &SymMatrix,
    gs: &GainSchedulingData,
) -> Result<SymMatrix> {
    let rs = ds.inverse()?;
    let ru = dbar.inverse()?;
    let m = analysis_lmi(k, ks, &x.into(), &AffineMatrix::scalar(lambda_s), &AffineMatrix::scalar(lambda_u), &rs, &ru, gs)?;
    SymMatrix::new(m.value())
}

/// Numeric synthesis matrix.
#[allow(clippy::too_many_arguments)]
pub fn s2_fixed(
    ks: &M,
    m: &M,
    n: &SymMatrix,
    lambda_s: f64,
    lambda_u: f64,
    ds: &SymMatrix,
    dbar: &SymMatrix,
    gs: &GainSchedulingData,
) -> Result<SymMatrix> {
    SymMatrix::new(s2_gain_sched(&c(ks), &c(m), &n.into(), lambda_s, lambda_u, &ds.into(), &dbar.into(), gs)?.value())
}

/// Numeric S3 block.
pub fn s3_fixed(eps: f64, d0: &SymMatrix, dbar: &SymMatrix, ds: &SymMatrix) -> Result<SymMatrix> {
    SymMatrix::new(s3_block(eps, &d0.into(), &dbar.into(), &ds.into())?.value())
}

/// `K = M N^{-1}` style recovery `Zᵀ W^{-1}` for a gain stored transposed.
pub fn gain_from(numer_t: &M, w: &M, what: &str) -> Result<M> {
    Ok(numer_t * checked_inverse(w, what)?)
}

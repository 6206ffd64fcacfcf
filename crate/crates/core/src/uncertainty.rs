//! Ellipsoidal bounds `ΔᵀΔ ⪯ P` on the estimation, uncertainty and
//! scheduling blocks, and sampling from them.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::InfoMatrix;
use crate::matrix_kit::{sqrt_psd, SymMatrix};

/// Membership tolerance on the normalized bound.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// `{Δ ∈ R^{rows × dim} : ΔᵀΔ ⪯ P}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBound {
    pub p: SymMatrix,
    pub rows: usize,
}

impl DeltaBound {
    pub fn new(p: SymMatrix, rows: usize) -> Result<Self> {
        if rows == 0 {
            return Err(Error::DimensionMismatch("delta bound needs >= 1 row".into()));
        }
        if p.min_eigenvalue()? <= 0.0 {
            return Err(Error::DomainError("delta bound must be positive definite".into()));
        }
        Ok(Self { p, rows })
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    /// Largest eigenvalue of `P^{-1/2} ΔᵀΔ P^{-1/2}`; `<= 1` means inside.
    pub fn normalized_size(&self, delta: &DMatrix<f64>) -> Result<f64> {
        if delta.shape() != (self.rows, self.dim()) {
            return Err(Error::DimensionMismatch(format!("delta is {:?}, bound expects {:?}", delta.shape(), (self.rows, self.dim()))));
        }
        let p_inv_half = sqrt_psd(&self.p.inverse()?)?;
        SymMatrix::new(delta.transpose() * delta)?.congruence(p_inv_half.as_matrix())?.max_eigenvalue()
    }

    pub fn contains(&self, delta: &DMatrix<f64>) -> Result<bool> {
        Ok(self.normalized_size(delta)? <= 1.0 + MEMBERSHIP_TOL)
    }
}

/// Bound on `Θ̂ - Θ_tr` from one information matrix: `P = D^{-1}`.
pub fn info_bound(info: &InfoMatrix, n_x: usize) -> Result<DeltaBound> {
    DeltaBound::new(info.inverse()?, n_x)
}

/// `Δ_u = Θ_tr - Θ̂_T`: `P = D_T^{-1}`.
pub fn delta_u_bound(info_t: &InfoMatrix, n_x: usize) -> Result<DeltaBound> {
    info_bound(info_t, n_x)
}

/// `Δ_s = Θ̂_T - Θ̂_0`: `P = (1 + 1/ε) D0^{-1} + (1 + ε) D_T^{-1}`.
pub fn delta_s_bound(eps: f64, d0: &InfoMatrix, dt: &InfoMatrix, n_x: usize) -> Result<DeltaBound> {
    delta_s_bound_raw(eps, &d0.d, &dt.d, n_x)
}

pub fn delta_s_bound_raw(eps: f64, d0: &SymMatrix, dt: &SymMatrix, n_x: usize) -> Result<DeltaBound> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::DomainError(format!("eps must be > 0, got {eps}")));
    }
    let p = d0.inverse()?.scale(1.0 + 1.0 / eps).add(&dt.inverse()?.scale(1.0 + eps))?;
    DeltaBound::new(p, n_x)
}

/// The block whose positive definiteness is equivalent to
/// `Ds^{-1} ≻ (1 + 1/ε) D0^{-1} + (1 + ε) Dbar^{-1}`.
pub fn ds_feasibility_block(eps: f64, d0: &SymMatrix, dbar: &SymMatrix, ds: &SymMatrix) -> Result<SymMatrix> {
    crate::lmi::s3_fixed(eps, d0, dbar, ds)
}

/// Draws `Δ = U S P^{1/2}` with orthonormal-row `U` and diagonal
/// `S ∈ [0,1]`; with probability `boundary_fraction` every `s_i = 1`.
pub fn sample_delta<R: Rng + ?Sized>(bound: &DeltaBound, rng: &mut R, boundary_fraction: f64) -> Result<DMatrix<f64>> {
    let boundary = rng.random::<f64>() < boundary_fraction;
    let scales: Vec<f64> = (0..bound.dim()).map(|_| if boundary { 1.0 } else { rng.random::<f64>() }).collect();
    sample_delta_scaled(bound, rng, &scales)
}

/// [`sample_delta`] with the diagonal scaling given explicitly.
pub fn sample_delta_scaled<R: Rng + ?Sized>(bound: &DeltaBound, rng: &mut R, scales: &[f64]) -> Result<DMatrix<f64>> {
    let (rows, dim) = (bound.rows, bound.dim());
    if scales.len() != dim || scales.iter().any(|s| !(0.0..=1.0).contains(s)) {
        return Err(Error::DomainError("scales must be `dim` values in [0,1]".into()));
    }
    let u = orthonormal_rows(rng, rows, dim);
    let s = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(scales));
    Ok(u * s * sqrt_psd(&bound.p)?.into_inner())
}

/// `rows x dim` with orthonormal rows (or orthonormal columns when
/// `rows > dim`), from the QR factor of a Gaussian matrix.
fn orthonormal_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> DMatrix<f64> {
    let (tall, short) = (rows.max(dim), rows.min(dim));
    let g = DMatrix::from_fn(tall, short, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    if rows <= dim {
        q.transpose()
    } else {
        q
    }
}

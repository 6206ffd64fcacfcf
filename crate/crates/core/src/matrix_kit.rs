//! Dense matrix algebra shared by every other module.
//!
//! Matrices here are small (at most a few dozen rows), so definiteness is
//! always decided from a full symmetric eigendecomposition. That keeps the
//! eigenvalue margins available for reporting.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default margin used to certify strict inequalities.
pub const STRICT_TOL: f64 = 1e-7;

/// Relative threshold below which negative eigenvalues are clamped to zero.
pub const PSD_CLAMP_REL: f64 = 1e-9;

/// Default cap on the condition number of an eliminated Schur block.
pub const DEFAULT_COND_CAP: f64 = 1e12;

/// A real symmetric matrix. Symmetry is enforced on construction by
/// averaging with the transpose, so `m[(i, j)] == m[(j, i)]` holds bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::mat_json::MatrixJson", into = "crate::mat_json::MatrixJson")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!("symmetric matrix must be square, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.nrows() == 0 {
            return Err(Error::ShapeMismatch("symmetric matrix must have dim >= 1".into()));
        }
        Ok(Self::symmetrize(m))
    }

    fn symmetrize(m: DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut s = m;
        for i in 0..n {
            for j in (i + 1)..n {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        SymMatrix(s)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        SymMatrix(DMatrix::zeros(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(d)))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        SymMatrix(DMatrix::identity(n, n) * s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same(&self.0, &other.0, "add")?;
        Ok(SymMatrix(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &SymMatrix) -> Result<SymMatrix> {
        check_same(&self.0, &other.0, "sub")?;
        Ok(SymMatrix(&self.0 - &other.0))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        check_finite(&self.0)?;
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.eigenvalues()?[0])
    }

    pub fn max_eigenvalue(&self) -> Result<f64> {
        Ok(*self.eigenvalues()?.last().expect("dim >= 1"))
    }

    /// Inverse via eigendecomposition; fails when the smallest eigenvalue in
    /// magnitude is tiny relative to the largest.
    pub fn inverse(&self) -> Result<SymMatrix> {
        check_finite(&self.0)?;
        let eig = SymmetricEigen::new(self.0.clone());
        let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if max_abs == 0.0 || min_abs <= max_abs * 1e-14 {
            return Err(Error::SingularMatrix(format!("symmetric inverse: eigenvalue magnitudes in [{min_abs:.3e}, {max_abs:.3e}]")));
        }
        let inv_diag = eig.eigenvalues.map(|v| 1.0 / v);
        let q = &eig.eigenvectors;
        Ok(SymMatrix::symmetrize(q * DMatrix::from_diagonal(&inv_diag) * q.transpose()))
    }

    /// `t * self * t^T`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Result<SymMatrix> {
        if t.ncols() != self.dim() {
            return Err(Error::ShapeMismatch(format!("congruence: {}x{} against dim {}", t.nrows(), t.ncols(), self.dim())));
        }
        SymMatrix::new(t * &self.0 * t.transpose())
    }
}

impl TryFrom<DMatrix<f64>> for SymMatrix {
    type Error = Error;
    fn try_from(m: DMatrix<f64>) -> Result<Self> {
        SymMatrix::new(m)
    }
}

fn check_same(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidMatrix("non-finite entry".into()));
    }
    Ok(())
}

/// One slot of a [`BlockSpec`] grid.
#[derive(Debug, Clone)]
pub enum Block {
    Dense(DMatrix<f64>),
    Zero,
    Identity,
}

/// A partitioned matrix description: row and column partition sizes plus a
/// grid of blocks.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub row_dims: Vec<usize>,
    pub col_dims: Vec<usize>,
    pub blocks: Vec<Vec<Block>>,
}

impl BlockSpec {
    pub fn new(row_dims: Vec<usize>, col_dims: Vec<usize>, blocks: Vec<Vec<Block>>) -> Self {
        Self { row_dims, col_dims, blocks }
    }

    fn validate(&self) -> Result<()> {
        if self.row_dims.iter().chain(&self.col_dims).any(|&d| d == 0) {
            return Err(Error::ShapeMismatch("block dimensions must be positive".into()));
        }
        if self.blocks.len() != self.row_dims.len() {
            return Err(Error::ShapeMismatch(format!("{} block rows for {} row partitions", self.blocks.len(), self.row_dims.len())));
        }
        for (i, row) in self.blocks.iter().enumerate() {
            if row.len() != self.col_dims.len() {
                return Err(Error::ShapeMismatch(format!("block row {i} has {} entries, expected {}", row.len(), self.col_dims.len())));
            }
            for (j, b) in row.iter().enumerate() {
                let (r, c) = (self.row_dims[i], self.col_dims[j]);
                match b {
                    Block::Dense(m) if m.shape() != (r, c) => {
                        return Err(Error::ShapeMismatch(format!("block ({i},{j}) is {}x{}, slot is {r}x{c}", m.nrows(), m.ncols())))
                    }
                    Block::Identity if r != c => {
                        return Err(Error::ShapeMismatch(format!("identity block ({i},{j}) in non-square {r}x{c} slot")))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    dims.iter()
        .map(|d| {
            let o = acc;
            acc += d;
            o
        })
        .collect()
}

/// Concatenates a block grid into one dense matrix.
pub fn assemble(spec: &BlockSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let ro = offsets(&spec.row_dims);
    let co = offsets(&spec.col_dims);
    let rows: usize = spec.row_dims.iter().sum();
    let cols: usize = spec.col_dims.iter().sum();
    let mut out = DMatrix::zeros(rows, cols);
    for (i, row) in spec.blocks.iter().enumerate() {
        for (j, b) in row.iter().enumerate() {
            let (r, c) = (spec.row_dims[i], spec.col_dims[j]);
            match b {
                Block::Dense(m) => out.view_mut((ro[i], co[j]), (r, c)).copy_from(m),
                Block::Identity => out.view_mut((ro[i], co[j]), (r, c)).fill_with_identity(),
                Block::Zero => {}
            }
        }
    }
    Ok(out)
}

/// Extracts block `(i, j)` of `m` under the given partitions.
pub fn extract_block(m: &DMatrix<f64>, row_dims: &[usize], col_dims: &[usize], i: usize, j: usize) -> Result<DMatrix<f64>> {
    let rows: usize = row_dims.iter().sum();
    let cols: usize = col_dims.iter().sum();
    if m.shape() != (rows, cols) || i >= row_dims.len() || j >= col_dims.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot extract block ({i},{j}) from {}x{} with partitions {row_dims:?} x {col_dims:?}",
            m.nrows(),
            m.ncols()
        )));
    }
    let ro = offsets(row_dims);
    let co = offsets(col_dims);
    Ok(m.view((ro[i], co[j]), (row_dims[i], col_dims[j])).into_owned())
}

/// Schur complement `A - B C^{-1} B^T` of `m = [[A, B], [B^T, C]]`, where
/// `split` is the size of `A`.
pub fn schur_complement(m: &SymMatrix, split: usize) -> Result<SymMatrix> {
    schur_complement_capped(m, split, DEFAULT_COND_CAP)
}

pub fn schur_complement_capped(m: &SymMatrix, split: usize, cond_cap: f64) -> Result<SymMatrix> {
    let n = m.dim();
    if split == 0 || split >= n {
        return Err(Error::ShapeMismatch(format!("split {split} out of range for dim {n}")));
    }
    let full = m.as_matrix();
    check_finite(full)?;
    let a = full.view((0, 0), (split, split)).into_owned();
    let b = full.view((0, split), (split, n - split)).into_owned();
    let c = full.view((split, split), (n - split, n - split)).into_owned();
    let svals = c.singular_values();
    let smax = svals.max();
    let smin = svals.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= cond_cap) {
        return Err(Error::SingularBlock { cond });
    }
    let c_inv_bt = c.lu().solve(&b.transpose()).ok_or(Error::SingularBlock { cond: f64::INFINITY })?;
    SymMatrix::new(a - b * c_inv_bt)
}

/// Definiteness sense for [`is_definite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Pos,
    Neg,
    Psd,
    Nsd,
}

/// Eigenvalue test: strict senses need a margin larger than `tol`, the
/// semidefinite senses accept eigenvalues up to `tol` on the wrong side.
pub fn is_definite(m: &SymMatrix, sense: Sense, tol: f64) -> Result<bool> {
    if !(tol >= 0.0) {
        return Err(Error::DomainError(format!("tolerance must be >= 0, got {tol}")));
    }
    let ev = m.eigenvalues()?;
    let lo = ev[0];
    let hi = ev[ev.len() - 1];
    Ok(match sense {
        Sense::Pos => lo > tol,
        Sense::Psd => lo >= -tol,
        Sense::Neg => hi < -tol,
        Sense::Nsd => hi <= tol,
    })
}

/// Margin by which `m` satisfies `sense` (positive means satisfied).
pub fn definiteness_margin(m: &SymMatrix, sense: Sense) -> Result<f64> {
    let ev = m.eigenvalues()?;
    Ok(match sense {
        Sense::Pos | Sense::Psd => ev[0],
        Sense::Neg | Sense::Nsd => -ev[ev.len() - 1],
    })
}

fn psd_eigen(m: &SymMatrix) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    check_finite(m.as_matrix())?;
    let norm = m.as_matrix().norm();
    let tol = PSD_CLAMP_REL * norm;
    let mut eig = SymmetricEigen::new(m.as_matrix().clone());
    let min = eig.eigenvalues.min();
    if min < -tol {
        return Err(Error::NotPsd { min_eig: min });
    }
    eig.eigenvalues.apply(|v| *v = v.max(0.0));
    Ok(eig)
}

/// Symmetric PSD square root; small negative eigenvalues are clamped to zero.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = psd_eigen(m)?;
    let q = &eig.eigenvectors;
    let d = eig.eigenvalues.map(f64::sqrt);
    Ok(SymMatrix::symmetrize(q * DMatrix::from_diagonal(&d) * q.transpose()))
}

/// Draws `N(0, cov)` samples through a precomputed PSD factor.
#[derive(Debug, Clone)]
pub struct GaussianSampler {
    factor: DMatrix<f64>,
    zero: bool,
}

impl GaussianSampler {
    pub fn new(cov: &SymMatrix) -> Result<Self> {
        let zero = cov.as_matrix().iter().all(|v| *v == 0.0);
        let factor = sqrt_psd(cov)?.into_inner();
        Ok(Self { factor, zero })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.dim();
        let g = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        if self.zero {
            return DVector::zeros(n);
        }
        &self.factor * g
    }
}

/// One draw from `N(0, cov)`; deterministic for a given RNG state.
pub fn gaussian_sample<R: Rng + ?Sized>(cov: &SymMatrix, rng: &mut R) -> Result<DVector<f64>> {
    Ok(GaussianSampler::new(cov)?.sample(rng))
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of matrices with equal column counts.
pub fn vstack(parts: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let cols = parts.first().map(|p| p.ncols()).unwrap_or(0);
    if parts.iter().any(|p| p.ncols() != cols) {
        return Err(Error::ShapeMismatch("vstack: column counts differ".into()));
    }
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        out.view_mut((r, 0), p.shape()).copy_from(p);
        r += p.nrows();
    }
    Ok(out)
}

/// Horizontal concatenation of matrices with equal row counts.
pub fn hstack(parts: &[&DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let rows = parts.first().map(|p| p.nrows()).unwrap_or(0);
    if parts.iter().any(|p| p.nrows() != rows) {
        return Err(Error::ShapeMismatch("hstack: row counts differ".into()));
    }
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        out.view_mut((0, c), p.shape()).copy_from(p);
        c += p.ncols();
    }
    Ok(out)
}

/// General inverse with a singularity check on the smallest singular value.
pub fn checked_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::ShapeMismatch(format!("{what}: inverse of non-square matrix")));
    }
    check_finite(m)?;
    let sv = m.singular_values();
    if sv.min() <= sv.max() * 1e-13 || sv.max() == 0.0 {
        return Err(Error::SingularMatrix(format!("{what}: singular values in [{:.3e}, {:.3e}]", sv.min(), sv.max())));
    }
    m.clone().try_inverse().ok_or_else(|| Error::SingularMatrix(what.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let g = random_matrix(rng, n, n);
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.1).unwrap()
    }

    #[test]
    fn symmetric_construction_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let s = SymMatrix::new(m).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
        assert_eq!(s.as_matrix()[(0, 1)], 2.5);
        assert!(SymMatrix::new(DMatrix::zeros(2, 3)).is_err());
        assert!(SymMatrix::new(DMatrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn assemble_scalars() {
        let d = |v: f64| Block::Dense(DMatrix::from_element(1, 1, v));
        let spec = BlockSpec::new(vec![1, 1], vec![1, 1], vec![vec![d(1.0), d(2.0)], vec![d(3.0), d(4.0)]]);
        let m = assemble(&spec).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn assemble_identity_blocks() {
        let spec = BlockSpec::new(vec![2, 3], vec![2, 3], vec![vec![Block::Identity, Block::Zero], vec![Block::Zero, Block::Identity]]);
        assert_eq!(assemble(&spec).unwrap(), DMatrix::<f64>::identity(5, 5));
    }

    #[test]
    fn assemble_slice_and_extract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_matrix(&mut rng, 2, 2);
        let b = random_matrix(&mut rng, 2, 2);
        let c = random_matrix(&mut rng, 2, 2);
        let spec = BlockSpec::new(
            vec![2, 2],
            vec![2, 2],
            vec![vec![Block::Dense(a.clone()), Block::Dense(b.clone())], vec![Block::Dense(b.transpose()), Block::Dense(c.clone())]],
        );
        let m = assemble(&spec).unwrap();
        assert_eq!(m.view((0, 2), (2, 2)).into_owned(), b);
        assert_eq!(extract_block(&m, &[2, 2], &[2, 2], 1, 1).unwrap(), c);
        assert_eq!(extract_block(&m, &[2, 2], &[2, 2], 0, 0).unwrap(), a);
    }

    #[test]
    fn assemble_rejects_bad_block() {
        let spec = BlockSpec::new(vec![2], vec![2], vec![vec![Block::Dense(DMatrix::zeros(2, 3))]]);
        assert!(matches!(assemble(&spec), Err(Error::ShapeMismatch(_))));
        let spec = BlockSpec::new(vec![2], vec![3], vec![vec![Block::Identity]]);
        assert!(matches!(assemble(&spec), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn schur_two_by_two() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let s = schur_complement(&m, 1).unwrap();
        assert_relative_eq!(s.as_matrix()[(0, 0)], 1.5, epsilon = 1e-15);
    }

    #[test]
    fn schur_block_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let c = DMatrix::from_row_slice(2, 2, &[5.0, 0.5, 0.5, 1.0]);
        let m = SymMatrix::new(block_diag(&[&a, &c])).unwrap();
        assert_eq!(schur_complement(&m, 2).unwrap().as_matrix(), &a);
    }

    #[test]
    fn schur_singular_block() {
        let m = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 0.0])).unwrap();
        assert!(matches!(schur_complement(&m, 1), Err(Error::SingularBlock { .. })));
    }

    #[test]
    fn schur_random_pd_stays_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_pd(&mut rng, 4);
        let s = schur_complement(&m, 2).unwrap();
        assert!(is_definite(&s, Sense::Pos, 0.0).unwrap());
    }

    #[test]
    fn definiteness_examples() {
        let i = SymMatrix::identity(3);
        assert!(is_definite(&i, Sense::Pos, 1e-9).unwrap());
        let z = SymMatrix::zeros(3);
        assert!(!is_definite(&z, Sense::Pos, 1e-9).unwrap());
        assert!(is_definite(&z, Sense::Psd, 1e-9).unwrap());
        assert!(is_definite(&z, Sense::Nsd, 1e-9).unwrap());
        let d = SymMatrix::from_diagonal(&[1.0, -1e-12]);
        assert!(is_definite(&d, Sense::Psd, 1e-9).unwrap());
        assert!(!is_definite(&d, Sense::Pos, 1e-9).unwrap());
        let n = SymMatrix::from_diagonal(&[-1.0, -2.0]);
        assert!(is_definite(&n, Sense::Neg, 1e-9).unwrap());
    }

    #[test]
    fn definiteness_rejects_nan() {
        let m = SymMatrix(DMatrix::from_element(1, 1, f64::NAN));
        assert!(matches!(is_definite(&m, Sense::Pos, 0.0), Err(Error::InvalidMatrix(_))));
        assert!(is_definite(&SymMatrix::identity(1), Sense::Pos, -1.0).is_err());
    }

    #[test]
    fn sqrt_examples() {
        assert_eq!(sqrt_psd(&SymMatrix::identity(3)).unwrap(), SymMatrix::identity(3));
        let s = sqrt_psd(&SymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert_relative_eq!(s.as_matrix(), &DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_matrix(&mut rng, 4, 3);
        let m = SymMatrix::new(&g * g.transpose()).unwrap();
        let s = sqrt_psd(&m).unwrap();
        let err = (s.as_matrix() * s.as_matrix() - m.as_matrix()).norm();
        assert!(err <= 1e-8 * m.as_matrix().norm());
        assert!(matches!(sqrt_psd(&SymMatrix::from_diagonal(&[1.0, -0.1])), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn gaussian_zero_cov_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(gaussian_sample(&SymMatrix::zeros(2), &mut rng).unwrap(), DVector::zeros(2));
        let a = gaussian_sample(&SymMatrix::identity(3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gaussian_sample(&SymMatrix::identity(3), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_sample_covariance() {
        let cov = SymMatrix::from_diagonal(&[4.0, 1.0]);
        let sampler = GaussianSampler::new(&cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let v = sampler.sample(&mut rng);
            acc += &v * v.transpose();
        }
        acc /= n as f64;
        let rel = (acc - cov.as_matrix()).norm() / cov.as_matrix().norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    #[test]
    fn inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_pd(&mut rng, 5);
        let inv = m.inverse().unwrap();
        let err = (m.as_matrix() * inv.as_matrix() - DMatrix::<f64>::identity(5, 5)).norm();
        assert!(err < 1e-10);
        assert!(SymMatrix::zeros(2).inverse().is_err());
    }
}

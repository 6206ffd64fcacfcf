//! Least-squares identification, the data information matrix and the
//! credibility region it defines.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::matrix_kit::SymMatrix;
use crate::plant::Trajectory;

/// Regressor/target pairs `([x_k; u_k], x_{k+1})`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(with = "crate::mat_json::vectors")]
    pub regressors: Vec<DVector<f64>>,
    #[serde(with = "crate::mat_json::vectors")]
    pub targets: Vec<DVector<f64>>,
}

impl Dataset {
    /// Every `(x_k, u_k)` that has a successor state.
    pub fn from_trajectory(t: &Trajectory) -> Self {
        let mut d = Dataset::default();
        for k in 0..t.horizon() {
            let (x, u) = (&t.states[k], &t.inputs[k]);
            let mut z = DVector::zeros(x.len() + u.len());
            z.rows_mut(0, x.len()).copy_from(x);
            z.rows_mut(x.len(), u.len()).copy_from(u);
            d.regressors.push(z);
            d.targets.push(t.states[k + 1].clone());
        }
        d
    }

    pub fn len(&self) -> usize {
        self.regressors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regressors.is_empty()
    }

    pub fn extend(&mut self, other: &Dataset) {
        self.regressors.extend(other.regressors.iter().cloned());
        self.targets.extend(other.targets.iter().cloned());
    }

    pub fn merged(&self, other: &Dataset) -> Dataset {
        let mut d = self.clone();
        d.extend(other);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(with = "crate::mat_json::dense")]
    pub a_hat: DMatrix<f64>,
    #[serde(with = "crate::mat_json::dense")]
    pub b_hat: DMatrix<f64>,
}

impl Estimate {
    pub fn n_x(&self) -> usize {
        self.a_hat.nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b_hat.ncols()
    }

    /// `[A_hat B_hat]`.
    pub fn theta(&self) -> DMatrix<f64> {
        let mut t = DMatrix::zeros(self.n_x(), self.n_x() + self.n_u());
        t.columns_mut(0, self.n_x()).copy_from(&self.a_hat);
        t.columns_mut(self.n_x(), self.n_u()).copy_from(&self.b_hat);
        t
    }

    pub fn from_theta(theta: &DMatrix<f64>, n_x: usize) -> Self {
        let n_u = theta.ncols() - n_x;
        Estimate { a_hat: theta.columns(0, n_x).into(), b_hat: theta.columns(n_x, n_u).into() }
    }
}

/// Minimizes `sum ||x_{k+1} - A x_k - B u_k||^2` through an SVD of the
/// stacked regressors.
pub fn least_squares(data: &Dataset, n_x: usize) -> Result<Estimate> {
    let n = data.len();
    let p = data.regressors.first().map_or(0, |z| z.len());
    if p <= n_x {
        return Err(Error::DimensionMismatch(format!("regressor length {p} must exceed n_x={n_x}")));
    }
    if data.targets.len() != n || data.targets.iter().any(|t| t.len() != n_x) || data.regressors.iter().any(|z| z.len() != p) {
        return Err(Error::DimensionMismatch("dataset rows have inconsistent lengths".into()));
    }
    if n < p {
        return Err(Error::RankDeficient { rank: n, needed: p });
    }
    let z = DMatrix::from_fn(n, p, |i, j| data.regressors[i][j]);
    let y = DMatrix::from_fn(n, n_x, |i, j| data.targets[i][j]);
    let svd = z.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < p || smax == 0.0 {
        return Err(Error::RankDeficient { rank, needed: p });
    }
    let theta_t = svd.solve(&y, tol).map_err(|e| Error::NumericalFailure(e.to_string()))?;
    Ok(Estimate::from_theta(&theta_t.transpose(), n_x))
}

/// `(1 - delta)` quantile of the chi-squared law with `dof` degrees of
/// freedom, by bisection on the regularized lower incomplete gamma function.
pub fn chi2_quantile(dof: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::DomainError(format!("delta must lie in (0,1), got {delta}")));
    }
    if dof == 0 {
        return Err(Error::DomainError("chi-squared dof must be >= 1".into()));
    }
    let a = dof as f64 / 2.0;
    let target = 1.0 - delta;
    let cdf = |q: f64| gamma_lr(a, q / 2.0);
    let mut lo = 0.0;
    let mut hi = dof as f64 + 10.0;
    while cdf(hi) < target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Degrees of freedom of the parameter vector `vec([A B])`.
pub fn parameter_dof(n_x: usize, n_u: usize) -> usize {
    n_x * n_x + n_x * n_u
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoMatrix {
    pub d: SymMatrix,
    pub c_delta: f64,
    pub sigma_w: f64,
    pub sample_count: usize,
}

/// `D = (sigma_w^2 c_delta)^-1 sum [x;u][x;u]^T`. An empty dataset needs
/// `dim` to size the zero matrix.
pub fn info_matrix(data: &Dataset, dim: usize, sigma_w: f64, c_delta: f64) -> Result<InfoMatrix> {
    if !(sigma_w > 0.0) || !(c_delta > 0.0) {
        return Err(Error::DomainError(format!("need sigma_w > 0 and c_delta > 0, got {sigma_w}, {c_delta}")));
    }
    let mut sum = DMatrix::zeros(dim, dim);
    for z in &data.regressors {
        if z.len() != dim {
            return Err(Error::DimensionMismatch(format!("regressor length {} != {dim}", z.len())));
        }
        sum.ger(1.0, z, z, 1.0);
    }
    let scale = 1.0 / (sigma_w * sigma_w * c_delta);
    Ok(InfoMatrix { d: SymMatrix::new(sum * scale)?, c_delta, sigma_w, sample_count: data.len() })
}

impl InfoMatrix {
    pub fn dim(&self) -> usize {
        self.d.dim()
    }

    /// Information of the union of two disjoint datasets.
    pub fn accumulate(&self, other: &InfoMatrix) -> Result<InfoMatrix> {
        if self.c_delta != other.c_delta || self.sigma_w != other.sigma_w {
            return Err(Error::DomainError("information matrices use different noise or confidence scaling".into()));
        }
        Ok(InfoMatrix {
            d: self.d.add(&other.d)?,
            c_delta: self.c_delta,
            sigma_w: self.sigma_w,
            sample_count: self.sample_count + other.sample_count,
        })
    }

    /// Same data, rescaled to a different `sigma_w`.
    pub fn with_sigma_w(&self, sigma_w: f64) -> InfoMatrix {
        let f = (self.sigma_w / sigma_w).powi(2);
        InfoMatrix { d: self.d.scale(f), c_delta: self.c_delta, sigma_w, sample_count: self.sample_count }
    }

    /// `D^-1`, or `SingularInfo` if `D` is not positive definite.
    pub fn inverse(&self) -> Result<SymMatrix> {
        self.require_pd()?;
        self.d.inverse().map_err(|_| Error::SingularInfo)
    }

    pub fn require_pd(&self) -> Result<()> {
        let min = self.d.min_eigenvalue()?;
        let max = self.d.max_eigenvalue()?;
        if min <= max.abs() * 1e-14 || min <= 0.0 {
            return Err(Error::SingularInfo);
        }
        Ok(())
    }
}

const REGION_TOL: f64 = 1e-9;

/// `E^T D E ⪯ I` with `E = [(A_hat - A)^T; (B_hat - B)^T]`.
pub fn in_credibility_region(a: &DMatrix<f64>, b: &DMatrix<f64>, est: &Estimate, info: &InfoMatrix) -> Result<bool> {
    if a.shape() != est.a_hat.shape() || b.shape() != est.b_hat.shape() || info.dim() != est.n_x() + est.n_u() {
        return Err(Error::DimensionMismatch("candidate, estimate and information matrix disagree".into()));
    }
    info.require_pd()?;
    let e = (est.theta() - crate::matrix_kit::hstack(&[a, b])?).transpose();
    let m = SymMatrix::new(e.transpose() * info.d.as_matrix() * &e)?;
    Ok(m.max_eigenvalue()? <= 1.0 + REGION_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{simulate, LtiSystem, Policy};
    use crate::seeds;
    use approx::assert_relative_eq;

    fn example_system(sigma_w: f64) -> LtiSystem {
        LtiSystem::new(DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), sigma_w).unwrap()
    }

    fn excite(sys: &LtiSystem, n: usize, seed: u64) -> Dataset {
        let mut rng = seeds::stream(seed, "test-data", 0);
        let t = simulate(sys, &Policy::random(2, SymMatrix::identity(1)), &DVector::zeros(2), n, &mut rng).unwrap();
        Dataset::from_trajectory(&t)
    }

    #[test]
    fn noiseless_recovery() {
        let sys = example_system(1e-300);
        let est = least_squares(&excite(&sys, 30, 1), 2).unwrap();
        assert!((est.a_hat - &sys.a).norm() < 1e-8);
        assert!((est.b_hat - &sys.b).norm() < 1e-8);
    }

    #[test]
    fn constant_state_without_input_is_rank_deficient() {
        let x = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let d = Dataset { regressors: vec![x; 10], targets: vec![DVector::from_vec(vec![1.0, 2.0]); 10] };
        assert!(matches!(least_squares(&d, 2), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn error_decays_like_inverse_sqrt_n() {
        let sys = example_system(0.1);
        let ns = [100usize, 1000, 10000];
        let mut logs = Vec::new();
        for &n in &ns {
            let trials = 20;
            let mut mean = 0.0;
            for t in 0..trials {
                let est = least_squares(&excite(&sys, n, 100 + t), 2).unwrap();
                mean += (est.theta() - sys.theta()).norm() / trials as f64;
            }
            logs.push(mean.ln());
        }
        let slope = (logs[2] - logs[0]) / ((ns[2] as f64).ln() - (ns[0] as f64).ln());
        assert!((slope + 0.5).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn chi2_examples() {
        assert!((chi2_quantile(2, 0.05).unwrap() - (-2.0 * 0.05f64.ln())).abs() < 1e-9);
        assert!((chi2_quantile(1, 0.05).unwrap() - 3.841_458_820_694_124).abs() < 1e-8);
        assert!((chi2_quantile(6, 0.05).unwrap() - 12.591_587_243_743_977).abs() < 1e-8);
        assert!(matches!(chi2_quantile(2, 1.5), Err(Error::DomainError(_))));
        assert!(matches!(chi2_quantile(2, 0.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn chi2_inverts_cdf_tightly() {
        for dof in [1usize, 2, 3, 6, 12, 30] {
            for delta in [0.001, 0.05, 0.1, 0.5, 0.9] {
                let q = chi2_quantile(dof, delta).unwrap();
                assert!((gamma_lr(dof as f64 / 2.0, q / 2.0) - (1.0 - delta)).abs() < 1e-10);
            }
        }
        // Higher confidence, larger region.
        assert!(chi2_quantile(6, 0.01).unwrap() > chi2_quantile(6, 0.1).unwrap());
    }

    #[test]
    fn info_matrix_examples() {
        let empty = info_matrix(&Dataset::default(), 3, 1.0, 1.0).unwrap();
        assert_eq!(empty.d, SymMatrix::zeros(3));
        let one = Dataset { regressors: vec![DVector::from_vec(vec![1.0, 0.0, 0.0])], targets: vec![DVector::zeros(2)] };
        assert_eq!(info_matrix(&one, 3, 1.0, 1.0).unwrap().d, SymMatrix::from_diagonal(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn info_is_additive_and_monotone() {
        let sys = example_system(0.1);
        let (d1, d2) = (excite(&sys, 50, 3), excite(&sys, 70, 4));
        let i1 = info_matrix(&d1, 3, 0.1, 2.0).unwrap();
        let i2 = info_matrix(&d2, 3, 0.1, 2.0).unwrap();
        let both = info_matrix(&d1.merged(&d2), 3, 0.1, 2.0).unwrap();
        let sum = i1.accumulate(&i2).unwrap();
        assert!((both.d.as_matrix() - sum.d.as_matrix()).norm() <= 1e-12 * both.d.as_matrix().norm());
        assert_eq!(sum.sample_count, 120);
        assert!(both.d.sub(&i1.d).unwrap().min_eigenvalue().unwrap() >= -1e-10);
    }

    #[test]
    fn doubling_noise_variance_halves_info() {
        let sys = example_system(0.1);
        let d = excite(&sys, 40, 5);
        let base = info_matrix(&d, 3, 0.1, 3.0).unwrap();
        let doubled = info_matrix(&d, 3, 0.1 * 2f64.sqrt(), 3.0).unwrap();
        assert_relative_eq!(doubled.d.as_matrix().clone() * 2.0, base.d.as_matrix().clone(), max_relative = 1e-12);
        assert_relative_eq!(
            base.with_sigma_w(0.1 * 2f64.sqrt()).d.as_matrix().clone(),
            doubled.d.as_matrix().clone(),
            max_relative = 1e-12
        );
    }

    fn unit_info() -> InfoMatrix {
        InfoMatrix { d: SymMatrix::identity(2), c_delta: 1.0, sigma_w: 1.0, sample_count: 0 }
    }

    #[test]
    fn credibility_examples() {
        let est = Estimate { a_hat: DMatrix::from_element(1, 1, 0.5), b_hat: DMatrix::from_element(1, 1, 1.0) };
        let info = unit_info();
        assert!(in_credibility_region(&est.a_hat, &est.b_hat, &est, &info).unwrap());
        // E = [0.6; 0.8] has unit norm: boundary point.
        let (a, b) = (DMatrix::from_element(1, 1, -0.1), DMatrix::from_element(1, 1, 0.2));
        assert!(in_credibility_region(&a, &b, &est, &info).unwrap());
        let s = 1.0 + 1e-3;
        let (a, b) = (DMatrix::from_element(1, 1, 0.5 - 0.6 * s), DMatrix::from_element(1, 1, 1.0 - 0.8 * s));
        assert!(!in_credibility_region(&a, &b, &est, &info).unwrap());
        let singular = InfoMatrix { d: SymMatrix::from_diagonal(&[1.0, 0.0]), ..unit_info() };
        assert!(matches!(in_credibility_region(&est.a_hat, &est.b_hat, &est, &singular), Err(Error::SingularInfo)));
    }

    #[test]
    fn coverage_at_delta_point_one() {
        let sys = example_system(0.1);
        let delta = 0.1;
        let c = chi2_quantile(parameter_dof(2, 1), delta).unwrap();
        let trials = 500;
        let mut hits = 0;
        for t in 0..trials {
            let d = excite(&sys, 200, 1000 + t);
            let est = least_squares(&d, 2).unwrap();
            let info = info_matrix(&d, 3, 0.1, c).unwrap();
            if in_credibility_region(&sys.a, &sys.b, &est, &info).unwrap() {
                hits += 1;
            }
        }
        let p = 1.0 - delta;
        let frac = hits as f64 / trials as f64;
        assert!(frac >= p - 2.0 * (p * (1.0 - p) / trials as f64).sqrt(), "coverage {frac}");
    }

    #[test]
    fn json_roundtrip() {
        let est = Estimate { a_hat: DMatrix::from_row_slice(1, 1, &[0.25]), b_hat: DMatrix::from_row_slice(1, 2, &[1.0, -3.0]) };
        let back: Estimate = serde_json::from_str(&serde_json::to_string(&est).unwrap()).unwrap();
        assert_eq!(back, est);
        let info = unit_info();
        let back: InfoMatrix = serde_json::from_str(&serde_json::to_string(&info).unwrap()).unwrap();
        assert_eq!(back, info);
    }
}

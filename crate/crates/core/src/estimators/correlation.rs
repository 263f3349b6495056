//! Empirical correlation matrices and the one-spike (market mode) model.
//!
//! The spike model keeps the leading eigenpair `(lambda0, v0)` and replaces
//! the rest of the spectrum by a single eigenvalue `eps2 = (N - lambda0) / (N - 1)`
//! so that the trace stays `N`. Its inverse is available in closed form.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::EstimatorConfig;
use crate::data::ReturnPanel;
use crate::error::{Error, Result};

/// Largest market-mode share of the trace accepted by the spike model.
pub const MAX_SPIKE_FRACTION: f64 = 0.95;

const DENSE_EIGEN_MAX: usize = 256;
const POWER_MAX_ITER: usize = 500;
const POWER_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularization {
    /// Use the empirical matrix as is.
    None,
    /// Clip the bulk of the spectrum to its mean (one-spike model).
    Spike,
}

#[derive(Debug, Clone)]
pub struct CorrelationModel {
    instruments: Vec<usize>,
    n_obs: usize,
    /// `n_obs x n` demeaned returns with unit-norm columns, `C = F^T F`.
    factor: Option<DMatrix<f64>>,
    explicit: Option<DMatrix<f64>>,
    lambda0: f64,
    v0: DVector<f64>,
    regularization: Regularization,
}

impl CorrelationModel {
    /// Model built from a `n_obs x n` window of returns (`NaN` = missing).
    pub fn from_returns(instruments: Vec<usize>, window: &DMatrix<f64>, regularization: Regularization) -> Result<Self> {
        let (n_obs, n) = window.shape();
        if n != instruments.len() {
            return Err(Error::invalid("window columns do not match instruments"));
        }
        let mut factor = DMatrix::zeros(n_obs, n);
        for j in 0..n {
            let col = window.column(j);
            let (sum, count) = col
                .iter()
                .filter(|r| r.is_finite())
                .fold((0.0, 0usize), |(s, c), r| (s + r, c + 1));
            if count < 2 {
                return Err(Error::insufficient(format!("instrument {} has <2 returns in window", instruments[j])));
            }
            let mean = sum / count as f64;
            let mut norm2 = 0.0;
            for (k, r) in col.iter().enumerate() {
                let z = if r.is_finite() { r - mean } else { 0.0 };
                factor[(k, j)] = z;
                norm2 += z * z;
            }
            if !(norm2 > 0.0) {
                return Err(Error::Degenerate(format!("instrument {} has constant returns", instruments[j])));
            }
            let inv = 1.0 / norm2.sqrt();
            factor.column_mut(j).scale_mut(inv);
        }
        let (lambda0, v0) = leading_eigenpair_factor(&factor, None);
        let model = Self {
            instruments,
            n_obs,
            factor: Some(factor),
            explicit: None,
            lambda0,
            v0,
            regularization,
        };
        model.check_spike()?;
        Ok(model)
    }

    /// Model around an explicit correlation matrix.
    pub fn from_matrix(instruments: Vec<usize>, matrix: DMatrix<f64>, regularization: Regularization) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n != instruments.len() {
            return Err(Error::invalid("correlation matrix shape mismatch"));
        }
        for i in 0..n {
            if (matrix[(i, i)] - 1.0).abs() > 1e-10 {
                return Err(Error::invalid(format!("diagonal entry {i} is {} (expected 1)", matrix[(i, i)])));
            }
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 {
                    return Err(Error::invalid("correlation matrix is not symmetric"));
                }
            }
        }
        let (lambda0, v0) = leading_eigenpair_dense(&matrix);
        let model = Self {
            instruments,
            n_obs: usize::MAX,
            factor: None,
            explicit: Some(matrix),
            lambda0,
            v0,
            regularization,
        };
        model.check_spike()?;
        Ok(model)
    }

    /// Exact one-spike model with market eigenpair `(lambda0, v0)`.
    pub fn spike(instruments: Vec<usize>, lambda0: f64, v0: DVector<f64>) -> Result<Self> {
        if v0.len() != instruments.len() {
            return Err(Error::invalid("eigenvector length mismatch"));
        }
        let norm = v0.norm();
        if !(norm > 0.0) {
            return Err(Error::invalid("zero eigenvector"));
        }
        let model = Self {
            instruments,
            n_obs: usize::MAX,
            factor: None,
            explicit: None,
            lambda0,
            v0: v0 / norm,
            regularization: Regularization::Spike,
        };
        model.check_spike()?;
        Ok(model)
    }

    fn check_spike(&self) -> Result<()> {
        if self.regularization != Regularization::Spike {
            return Ok(());
        }
        let n = self.n() as f64;
        if self.n() < 2 {
            return Err(Error::insufficient("spike model needs at least 2 instruments"));
        }
        if !(self.lambda0 >= 1.0) || self.lambda0 > MAX_SPIKE_FRACTION * n {
            return Err(Error::Singular(format!(
                "market eigenvalue {:.4} outside [1, {MAX_SPIKE_FRACTION} N] for N = {}",
                self.lambda0,
                self.n()
            )));
        }
        Ok(())
    }

    /// Model on a subset of the instruments (panel indices, any order).
    pub fn restrict(&self, subset: &[usize]) -> Result<Self> {
        let pos: Vec<usize> = subset
            .iter()
            .map(|id| {
                self.instruments
                    .iter()
                    .position(|x| x == id)
                    .ok_or_else(|| Error::invalid(format!("instrument {id} not in correlation model")))
            })
            .collect::<Result<_>>()?;
        if pos.len() == self.n() && pos.iter().enumerate().all(|(k, &p)| k == p) {
            return Ok(self.clone());
        }
        let instruments = subset.to_vec();
        let model = if let Some(f) = &self.factor {
            let factor = f.select_columns(&pos);
            let start = DVector::from_iterator(pos.len(), pos.iter().map(|&p| self.v0[p]));
            let (lambda0, v0) = leading_eigenpair_factor(&factor, Some(start));
            Self {
                instruments,
                n_obs: self.n_obs,
                factor: Some(factor),
                explicit: None,
                lambda0,
                v0,
                regularization: self.regularization,
            }
        } else {
            let full = self.empirical_matrix();
            let sub = DMatrix::from_fn(pos.len(), pos.len(), |a, b| full[(pos[a], pos[b])]);
            let (lambda0, v0) = leading_eigenpair_dense(&sub);
            Self {
                instruments,
                n_obs: self.n_obs,
                factor: None,
                explicit: Some(sub),
                lambda0,
                v0,
                regularization: self.regularization,
            }
        };
        model.check_spike()?;
        Ok(model)
    }

    pub fn n(&self) -> usize {
        self.instruments.len()
    }

    pub fn instruments(&self) -> &[usize] {
        &self.instruments
    }

    pub fn regularization(&self) -> Regularization {
        self.regularization
    }

    /// Observations behind an empirical model (`usize::MAX` otherwise).
    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    /// Leading eigenvalue `lambda0`.
    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    /// Leading eigenvector `v0`, unit norm, oriented so that `sum(v0) >= 0`.
    pub fn v0(&self) -> &DVector<f64> {
        &self.v0
    }

    /// Bulk eigenvalue of the spike model, `(N - lambda0) / (N - 1)`.
    pub fn epsilon2(&self) -> f64 {
        let n = self.n() as f64;
        (n - self.lambda0) / (n - 1.0)
    }

    /// Empirical (unregularized) matrix.
    pub fn empirical_matrix(&self) -> DMatrix<f64> {
        if let Some(m) = &self.explicit {
            return m.clone();
        }
        match &self.factor {
            Some(f) => {
                let mut c = f.tr_mul(f);
                for i in 0..c.nrows() {
                    c[(i, i)] = 1.0;
                }
                c
            }
            None => spike_matrix(self.lambda0, &self.v0),
        }
    }

    /// The matrix actually used for risk: spike model or empirical.
    pub fn matrix(&self) -> DMatrix<f64> {
        match self.regularization {
            Regularization::Spike => spike_matrix(self.lambda0, &self.v0),
            Regularization::None => self.empirical_matrix(),
        }
    }

    /// `C x` for the effective matrix.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.regularization {
            Regularization::Spike => {
                let eps2 = self.epsilon2();
                let proj = self.v0.dot(x);
                x * eps2 + &self.v0 * ((self.lambda0 - eps2) * proj)
            }
            Regularization::None => match (&self.explicit, &self.factor) {
                (Some(m), _) => m * x,
                (None, Some(f)) => f.tr_mul(&(f * x)),
                (None, None) => spike_matrix(self.lambda0, &self.v0) * x,
            },
        }
    }

    /// Solve `C u = b` for the effective matrix.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        match self.regularization {
            Regularization::Spike => {
                let eps2 = self.epsilon2();
                let proj = self.v0.dot(b);
                Ok(b / eps2 + &self.v0 * ((1.0 / self.lambda0 - 1.0 / eps2) * proj))
            }
            Regularization::None => {
                if self.n() > self.n_obs {
                    return Err(Error::Singular(format!(
                        "{} instruments but only {} observations; enable spike regularization",
                        self.n(),
                        self.n_obs
                    )));
                }
                let chol = self
                    .empirical_matrix()
                    .cholesky()
                    .ok_or_else(|| Error::Singular("correlation matrix is not positive definite".into()))?;
                Ok(chol.solve(b))
            }
        }
    }
}

fn orient(mut v: DVector<f64>) -> DVector<f64> {
    if v.sum() < 0.0 {
        v.neg_mut();
    }
    v
}

fn leading_eigenpair_dense(c: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let eig = SymmetricEigen::new(c.clone());
    let k = eig.eigenvalues.imax();
    (eig.eigenvalues[k], orient(eig.eigenvectors.column(k).into_owned()))
}

/// Leading eigenpair of `F^T F` without forming it when `n` is large.
fn leading_eigenpair_factor(f: &DMatrix<f64>, start: Option<DVector<f64>>) -> (f64, DVector<f64>) {
    let n = f.ncols();
    if n <= DENSE_EIGEN_MAX {
        let mut c = f.tr_mul(f);
        for i in 0..n {
            c[(i, i)] = 1.0;
        }
        return leading_eigenpair_dense(&c);
    }
    let mut v = match start {
        Some(s) if s.len() == n && s.norm() > 0.0 => s.normalize(),
        _ => DVector::from_element(n, 1.0 / (n as f64).sqrt()),
    };
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let y = f.tr_mul(&(f * &v));
        let next_lambda = v.dot(&y);
        let next = y.normalize();
        let step = (&next - &v).norm();
        v = next;
        let settled = (next_lambda - lambda).abs() <= POWER_TOL * next_lambda && step <= 1e-11;
        lambda = next_lambda;
        if settled {
            // Rayleigh quotient of the converged vector
            let y = f.tr_mul(&(f * &v));
            return (v.dot(&y), orient(v));
        }
    }
    // slow spectral gap: fall back to a full decomposition
    let mut c = f.tr_mul(f);
    for i in 0..n {
        c[(i, i)] = 1.0;
    }
    leading_eigenpair_dense(&c)
}

/// `lambda0 P0 + eps2 (I - P0)` with `eps2 = (N - lambda0) / (N - 1)`.
pub fn spike_matrix(lambda0: f64, v0: &DVector<f64>) -> DMatrix<f64> {
    let n = v0.len();
    let eps2 = (n as f64 - lambda0) / (n as f64 - 1.0);
    let p0 = v0 * v0.transpose();
    DMatrix::identity(n, n) * eps2 + p0 * (lambda0 - eps2)
}

/// Closed-form inverse of [`spike_matrix`]:
/// `(1/eps2) [I - (1 - eps2/lambda0) P0]`.
pub fn spike_inverse(lambda0: f64, v0: &DVector<f64>) -> DMatrix<f64> {
    let n = v0.len();
    let eps2 = (n as f64 - lambda0) / (n as f64 - 1.0);
    spike_inverse_with_bulk(lambda0, eps2, v0)
}

pub(crate) fn spike_inverse_with_bulk(lambda0: f64, eps2: f64, v0: &DVector<f64>) -> DMatrix<f64> {
    let n = v0.len();
    let p0 = v0 * v0.transpose();
    (DMatrix::identity(n, n) - p0 * (1.0 - eps2 / lambda0)) / eps2
}

/// Large-N approximation `(1 / (1 - lambda0/N)) [I - (1 - 1/lambda0) P0]`,
/// accurate to `O(1/N)` relative to [`spike_inverse`].
pub fn spike_inverse_large_n(lambda0: f64, v0: &DVector<f64>) -> DMatrix<f64> {
    let n = v0.len();
    let p0 = v0 * v0.transpose();
    (DMatrix::identity(n, n) - p0 * (1.0 - 1.0 / lambda0)) / (1.0 - lambda0 / n as f64)
}

/// Correlation model on day `t` over `candidates`, using the `corr_window`
/// daily returns ending at `t`. Instruments covering less than
/// `min_coverage` of the window (or with constant returns) are dropped.
pub fn estimate_correlation(
    panel: &ReturnPanel,
    t: usize,
    cfg: &EstimatorConfig,
    candidates: &[usize],
    regularization: Regularization,
) -> Result<CorrelationModel> {
    if t >= panel.n_days() {
        return Err(Error::param(format!("day {t} beyond panel")));
    }
    let start = (t + 1).saturating_sub(cfg.corr_window);
    let needed = (cfg.min_coverage * cfg.corr_window as f64).ceil() as usize;
    let mut kept = Vec::with_capacity(candidates.len());
    for &i in candidates {
        let col = panel.column_slice(i, start..t + 1);
        let finite: Vec<f64> = col.iter().copied().filter(|r| r.is_finite()).collect();
        let varying = finite.windows(2).any(|w| w[0] != w[1]);
        if finite.len() >= needed.max(2) && varying {
            kept.push(i);
        }
    }
    if kept.len() < 2 {
        return Err(Error::insufficient(format!(
            "only {} instruments with enough coverage for a correlation matrix on {}",
            kept.len(),
            panel.calendar()[t]
        )));
    }
    let rows = t + 1 - start;
    let window = DMatrix::from_fn(rows, kept.len(), |k, j| panel.get(start + k, kept[j]));
    CorrelationModel::from_returns(kept, &window, regularization)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn flat(n: usize) -> DVector<f64> {
        DVector::from_element(n, 1.0 / (n as f64).sqrt())
    }

    #[test]
    fn spike_inverse_matches_dense_inverse() {
        for &n in &[10usize, 60] {
            let lambda0 = 0.3 * n as f64;
            let c = spike_matrix(lambda0, &flat(n));
            let dense = c.clone().try_inverse().unwrap();
            let closed = spike_inverse(lambda0, &flat(n));
            assert!((dense - &closed).amax() < 1e-12);
            assert!((c.trace() - n as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn large_n_form_is_an_approximation() {
        let n = 400;
        let lambda0 = 0.3 * n as f64;
        let exact = spike_inverse(lambda0, &flat(n));
        let approx = spike_inverse_large_n(lambda0, &flat(n));
        let rel = (exact.clone() - approx).amax() / exact.amax();
        assert!(rel < 5.0 / n as f64, "relative gap {rel}");
    }

    #[test]
    fn model_solve_and_apply_are_inverse() {
        let n = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v: DVector<f64> = DVector::from_fn(n, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); 1.0 + 0.2 * z });
        v.normalize_mut();
        let m = CorrelationModel::spike((0..n).collect(), 0.4 * n as f64, v).unwrap();
        let b = DVector::from_fn(n, |i, _| (i as f64).sin());
        let back = m.apply(&m.solve(&b).unwrap());
        assert!((back - b).amax() < 1e-12);
    }

    #[test]
    fn spike_guard_rejects_near_rank_one() {
        let n = 20;
        assert!(CorrelationModel::spike((0..n).collect(), 0.96 * n as f64, flat(n)).is_err());
        assert!(CorrelationModel::spike((0..n).collect(), 0.94 * n as f64, flat(n)).is_ok());
    }

    /// Constant-correlation matrix has lambda0 = 1 + (N-1) rho exactly.
    #[test]
    fn constant_correlation_spectrum() {
        let n = 50;
        let rho = 0.3;
        let c = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
        let m = CorrelationModel::from_matrix((0..n).collect(), c, Regularization::Spike).unwrap();
        assert!((m.lambda0() - (1.0 + (n as f64 - 1.0) * rho)).abs() < 1e-10);
        assert!((m.v0() - flat(n)).amax() < 1e-10);
        // with an exact spike matrix the regularized model reproduces it
        assert!((m.matrix() - m.empirical_matrix()).amax() < 1e-10);
    }

    #[test]
    fn power_iteration_matches_dense() {
        let (t, n) = (600, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let f: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = DMatrix::from_fn(t, n, |k, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.5 * f[k] + e
        });
        let m = CorrelationModel::from_returns((0..n).collect(), &w, Regularization::Spike).unwrap();
        let (l_dense, v_dense) = leading_eigenpair_dense(&m.empirical_matrix());
        assert!((m.lambda0() - l_dense).abs() < 1e-9 * l_dense);
        assert!((m.v0() - v_dense).amax() < 1e-8);
    }

    #[test]
    fn restriction_equals_direct_estimate() {
        let (t, n) = (300, 280);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..t).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = DMatrix::from_fn(t, n, |k, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.6 * f[k] + e
        });
        let full = CorrelationModel::from_returns((0..n).collect(), &w, Regularization::Spike).unwrap();
        let subset: Vec<usize> = (0..n).filter(|i| i % 7 != 3).collect();
        let sub = full.restrict(&subset).unwrap();
        let direct = CorrelationModel::from_returns(subset.clone(), &w.select_columns(&subset), Regularization::Spike).unwrap();
        assert!((sub.lambda0() - direct.lambda0()).abs() < 1e-9 * direct.lambda0());
        assert!((sub.v0() - direct.v0()).amax() < 1e-8);
        assert!(full.restrict(&[n + 1]).is_err());
    }

    #[test]
    fn unregularized_singular_when_short_window() {
        let (t, n) = (20, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
        let m = CorrelationModel::from_returns((0..n).collect(), &w, Regularization::None).unwrap();
        assert!(matches!(m.solve(&DVector::from_element(n, 1.0)), Err(Error::Singular(_))));
    }

    #[test]
    fn empirical_matrix_is_a_correlation_matrix() {
        let (t, n) = (200, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = DMatrix::from_fn(t, n, |_, _| StandardNormal.sample(&mut rng));
        w[(3, 4)] = f64::NAN;
        let m = CorrelationModel::from_returns((0..n).collect(), &w, Regularization::None).unwrap();
        let c = m.empirical_matrix();
        assert!((c.trace() - n as f64).abs() < 1e-12);
        assert!((c.clone() - c.transpose()).amax() < 1e-15);
        let eig = SymmetricEigen::new(c).eigenvalues;
        assert!(eig.min() > -1e-12);
    }
}

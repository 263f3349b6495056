//! Markowitz position construction, market-mode neutralization and the
//! closed-form diagnostics of the one-spike model.

mod closed_form;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{CorrelationModel, SignalVector};

pub use closed_form::{closed_form_market_exposure, closed_form_ratio, SpikeMoments};

/// Dollar positions on a set of instruments (panel indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionVector {
    pub instruments: Vec<usize>,
    pub dollars: Vec<f64>,
    /// Risk budget the positions were scaled to.
    pub target_risk: f64,
}

impl PositionVector {
    pub fn nmv(&self) -> f64 {
        self.dollars.iter().sum()
    }

    pub fn gmv(&self) -> f64 {
        self.dollars.iter().map(|x| x.abs()).sum()
    }

    /// Net over gross; `None` for an empty book.
    pub fn ratio(&self) -> Option<f64> {
        let gmv = self.gmv();
        (gmv > 0.0).then(|| self.nmv() / gmv)
    }

    fn risk_space(&self, sigma: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.dollars.len(), self.dollars.iter().zip(sigma).map(|(x, s)| x * s))
    }

    fn with_risk_space(&self, w: &DVector<f64>, sigma: &[f64]) -> Self {
        Self {
            instruments: self.instruments.clone(),
            dollars: w.iter().zip(sigma).map(|(w, s)| w / s).collect(),
            target_risk: self.target_risk,
        }
    }
}

fn check_sigma(sigma: &[f64], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::invalid(format!("{} volatilities for {n} instruments", sigma.len())));
    }
    if let Some(s) = sigma.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::invalid(format!("volatility {s} is not positive")));
    }
    Ok(())
}

fn check_alignment(instruments: &[usize], corr: &CorrelationModel) -> Result<()> {
    if instruments != corr.instruments() {
        return Err(Error::invalid("positions and correlation model cover different instruments"));
    }
    Ok(())
}

/// Mean-variance positions for predictor `signal`, scaled so the portfolio
/// risk `sqrt(sum x_i s_i C_ij x_j s_j)` equals `target_risk`.
///
/// `x_i = (1 / 2 mu s_i) sum_j Cinv_ij p_j / s_j`, with `mu` solved from the
/// risk budget. An all-zero signal gives an empty (all-zero) book.
pub fn markowitz_positions(
    signal: &SignalVector,
    sigma: &[f64],
    corr: &CorrelationModel,
    target_risk: f64,
) -> Result<PositionVector> {
    if !(target_risk > 0.0 && target_risk.is_finite()) {
        return Err(Error::param(format!("target risk must be positive, got {target_risk}")));
    }
    check_alignment(&signal.instruments, corr)?;
    check_sigma(sigma, signal.len())?;
    let n = signal.len();
    let q = DVector::from_iterator(n, signal.scores.iter().zip(sigma).map(|(p, s)| p / s));
    if q.iter().all(|v| *v == 0.0) {
        return Ok(PositionVector { instruments: signal.instruments.clone(), dollars: vec![0.0; n], target_risk });
    }
    let u = corr.solve(&q)?;
    let risk2 = u.dot(&q);
    if !(risk2 > 0.0 && risk2.is_finite()) {
        return Err(Error::Singular(format!("non-positive portfolio variance {risk2}")));
    }
    let scale = target_risk / risk2.sqrt();
    Ok(PositionVector {
        instruments: signal.instruments.clone(),
        dollars: u.iter().zip(sigma).map(|(u, s)| scale * u / s).collect(),
        target_risk,
    })
}

/// Removes the market-mode component of the risk-space positions `x_i s_i`;
/// exposures to every other eigen-direction are untouched.
pub fn project_market_mode(positions: &PositionVector, corr: &CorrelationModel, sigma: &[f64]) -> Result<PositionVector> {
    check_alignment(&positions.instruments, corr)?;
    check_sigma(sigma, positions.dollars.len())?;
    let v = corr.v0();
    let mut w = positions.risk_space(sigma);
    // two passes keep the residual exposure at round-off level
    for _ in 0..2 {
        let c = v.dot(&w);
        w.axpy(-c, v, 1.0);
    }
    Ok(positions.with_risk_space(&w, sigma))
}

/// Joint projection removing the market mode and the net dollar exposure of
/// every sector (`sectors[k]` labels `positions.instruments[k]`).
pub fn neutralize_sectors<S: AsRef<str>>(
    positions: &PositionVector,
    corr: &CorrelationModel,
    sigma: &[f64],
    sectors: &[S],
) -> Result<PositionVector> {
    check_alignment(&positions.instruments, corr)?;
    let n = positions.dollars.len();
    check_sigma(sigma, n)?;
    if sectors.len() != n {
        return Err(Error::invalid("sector labels do not match positions"));
    }
    let mut labels: Vec<&str> = sectors.iter().map(|s| s.as_ref()).collect();
    labels.sort_unstable();
    labels.dedup();
    // sector dollar sum is sum_i w_i / s_i in risk space
    let mut cols = vec![corr.v0().clone()];
    for label in &labels {
        cols.push(DVector::from_fn(n, |i, _| if sectors[i].as_ref() == *label { 1.0 / sigma[i] } else { 0.0 }));
    }
    let a = DMatrix::from_columns(&cols);
    let basis = orthonormal_basis(&a);
    let mut w = positions.risk_space(sigma);
    for _ in 0..2 {
        let coef = basis.tr_mul(&w);
        w -= &basis * coef;
    }
    Ok(positions.with_risk_space(&w, sigma))
}

/// Orthonormal basis of the column span of `a` (rank-revealing via SVD).
fn orthonormal_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 1e-12 * smax * a.nrows() as f64)
        .collect();
    u.select_columns(&keep)
}

/// Risk exposure to the market mode, `sqrt(lambda0) sum_i x_i s_i v0_i`.
pub fn market_risk_exposure(positions: &PositionVector, corr: &CorrelationModel, sigma: &[f64]) -> Result<f64> {
    check_alignment(&positions.instruments, corr)?;
    check_sigma(sigma, positions.dollars.len())?;
    Ok(corr.lambda0().sqrt() * corr.v0().dot(&positions.risk_space(sigma)))
}

/// Portfolio risk `sqrt(w^T C w)` in risk space under the model's matrix.
pub fn portfolio_risk(positions: &PositionVector, corr: &CorrelationModel, sigma: &[f64]) -> Result<f64> {
    check_alignment(&positions.instruments, corr)?;
    check_sigma(sigma, positions.dollars.len())?;
    let w = positions.risk_space(sigma);
    Ok(w.dot(&corr.apply(&w)).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{rank_signal, spike_matrix, Direction, Regularization};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, StandardNormal};

    fn inv_gamma_sigma(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Gamma::new(6.0, 1.0).unwrap();
        (0..n).map(|_| 1.5 / d.sample(&mut rng)).collect()
    }

    fn noisy_flat(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            1.0 + 0.1 * z
        })
        .normalize()
    }

    fn low_vol(sigma: &[f64]) -> SignalVector {
        let s = rank_signal(sigma, Direction::Descending).unwrap();
        SignalVector::new((0..sigma.len()).collect(), s)
    }

    #[test]
    fn identity_and_equal_sigma_gives_positions_proportional_to_signal() {
        let n = 5;
        let corr = CorrelationModel::from_matrix((0..n).collect(), DMatrix::identity(n, n), Regularization::None).unwrap();
        let sig = SignalVector::new((0..n).collect(), vec![1.0, 0.5, 0.0, -0.5, -1.0]);
        let x = markowitz_positions(&sig, &[0.2; 5], &corr, 2.0).unwrap();
        let k = x.dollars[0];
        for (xi, si) in x.dollars.iter().zip(&sig.scores) {
            assert!((xi - k * si).abs() < 1e-14);
        }
        assert!((portfolio_risk(&x, &corr, &[0.2; 5]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn spike_positions_match_dense_oracle() {
        let n = 200;
        let sigma = inv_gamma_sigma(n, 1);
        let v = noisy_flat(n, 2);
        let lambda0 = 0.3 * n as f64;
        let corr = CorrelationModel::spike((0..n).collect(), lambda0, v.clone()).unwrap();
        let signal = low_vol(&sigma);
        let x = markowitz_positions(&signal, &sigma, &corr, 1.0).unwrap();
        // oracle: dense covariance Sigma = diag(s) C diag(s), x = Sigma^-1 p / (2 mu)
        let c = spike_matrix(lambda0, &v);
        let cov = DMatrix::from_fn(n, n, |i, j| sigma[i] * c[(i, j)] * sigma[j]);
        let p = DVector::from_vec(signal.scores.clone());
        let raw = cov.clone().lu().solve(&p).unwrap();
        let risk = raw.dot(&(&cov * &raw)).sqrt();
        let oracle = raw / risk;
        let scale = oracle.amax();
        for (a, b) in x.dollars.iter().zip(oracle.iter()) {
            assert!((a - b).abs() <= 1e-8 * scale, "{a} vs {b}");
        }
    }

    #[test]
    fn low_vol_predictor_is_net_long() {
        for seed in 0..10 {
            let n = 300;
            let sigma = inv_gamma_sigma(n, seed);
            let v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
            let corr = CorrelationModel::spike((0..n).collect(), 0.3 * n as f64, v).unwrap();
            let sig = SignalVector::new((0..n).collect(), sigma.iter().map(|s| 0.1 / s).collect());
            let x = markowitz_positions(&sig, &sigma, &corr, 1.0).unwrap();
            assert!(x.nmv() > 0.0);
            let r = x.ratio().unwrap();
            assert!(r > -1.0 && r < 1.0);
        }
    }

    #[test]
    fn positions_are_linear_in_target_risk() {
        let n = 50;
        let sigma = inv_gamma_sigma(n, 4);
        let corr = CorrelationModel::spike((0..n).collect(), 0.4 * n as f64, noisy_flat(n, 5)).unwrap();
        let sig = low_vol(&sigma);
        let a = markowitz_positions(&sig, &sigma, &corr, 1.0).unwrap();
        let b = markowitz_positions(&sig, &sigma, &corr, 2.0).unwrap();
        for (x, y) in a.dollars.iter().zip(&b.dollars) {
            assert_eq!(2.0 * x, *y);
        }
        assert!(markowitz_positions(&sig, &sigma, &corr, 0.0).is_err());
        assert!(markowitz_positions(&sig, &sigma, &corr, -1.0).is_err());
    }

    #[test]
    fn zero_signal_gives_empty_book() {
        let n = 4;
        let corr = CorrelationModel::spike((0..n).collect(), 2.0, DVector::from_element(n, 0.5)).unwrap();
        let sig = SignalVector::new((0..n).collect(), vec![0.0; n]);
        let x = markowitz_positions(&sig, &[0.1, 0.2, 0.3, 0.4], &corr, 1.0).unwrap();
        assert_eq!(x.gmv(), 0.0);
        assert_eq!(x.ratio(), None);
    }

    #[test]
    fn projection_removes_market_exposure() {
        let n = 120;
        let sigma = inv_gamma_sigma(n, 6);
        let corr = CorrelationModel::spike((0..n).collect(), 0.3 * n as f64, noisy_flat(n, 7)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pos = PositionVector {
            instruments: (0..n).collect(),
            dollars: (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
            target_risk: 1.0,
        };
        let pre = market_risk_exposure(&pos, &corr, &sigma).unwrap();
        let once = project_market_mode(&pos, &corr, &sigma).unwrap();
        let post = market_risk_exposure(&once, &corr, &sigma).unwrap();
        assert!(post.abs() <= 1e-8 * pre.abs());
        let twice = project_market_mode(&once, &corr, &sigma).unwrap();
        for (a, b) in once.dollars.iter().zip(&twice.dollars) {
            assert!((a - b).abs() < 1e-12);
        }
        // pure market mode vanishes
        let market = PositionVector {
            instruments: (0..n).collect(),
            dollars: corr.v0().iter().zip(&sigma).map(|(v, s)| v / s).collect(),
            target_risk: 1.0,
        };
        let gone = project_market_mode(&market, &corr, &sigma).unwrap();
        assert!(gone.dollars.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn sector_neutralization_zeroes_sector_nets() {
        let n = 60;
        let sigma = inv_gamma_sigma(n, 9);
        let corr = CorrelationModel::spike((0..n).collect(), 0.3 * n as f64, noisy_flat(n, 10)).unwrap();
        let sectors: Vec<String> = (0..n).map(|i| format!("S{}", i % 4)).collect();
        let x = markowitz_positions(&low_vol(&sigma), &sigma, &corr, 1.0).unwrap();
        let y = neutralize_sectors(&x, &corr, &sigma, &sectors).unwrap();
        for k in 0..4 {
            let net: f64 = (0..n).filter(|i| i % 4 == k).map(|i| y.dollars[i]).sum();
            assert!(net.abs() < 1e-12 * y.gmv());
        }
        assert!(market_risk_exposure(&y, &corr, &sigma).unwrap().abs() < 1e-12);
    }
}

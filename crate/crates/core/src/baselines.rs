//! Comparison baselines: closed-form Gaussian PPCA and the weighted fixed
//! point of classical Student-t PPCA. Both require complete data.
//!
//! Classical Student-t PPCA scales the factors and the noise with one shared
//! mixing variable, so its marginal is a multivariate t with scatter
//! `W W^T + sigma2 I` and its density is available in closed form.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

use crate::conditional::{chol_log_det, spd_cholesky};
use crate::covariance::eigendecompose;
use crate::error::{Error, Result};
use crate::types::{validate, DataSet, ModelKind, ModelParams};

const LN_PI: f64 = 1.144_729_885_849_400_2;
const LN_2PI: f64 = 1.837_877_066_409_345_5;
const MAX_ITER: usize = 10_000;
const REL_TOL: f64 = 1e-8;

/// Location, scatter and PPCA factorization of a baseline fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineEstimate {
    pub mu: DVector<f64>,
    /// Sample covariance (Gaussian) or scatter matrix (Student-t).
    pub c: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub sigma2: f64,
    /// Final row weights; all ones for the Gaussian fit.
    pub weights: DVector<f64>,
    /// Degrees of freedom of the Student-t fit; `None` for the Gaussian fit.
    pub nu: Option<f64>,
    pub iterations: usize,
}

impl BaselineEstimate {
    /// The fit as model parameters of [`ModelKind::GaussianPPCA`] or
    /// [`ModelKind::StudentTPPCA`].
    pub fn params(&self) -> ModelParams {
        let (d, k) = self.w.shape();
        let sigma2 = self.sigma2.max(f64::MIN_POSITIVE);
        match self.nu {
            None => ModelParams::gaussian(self.w.clone(), self.mu.clone(), sigma2),
            Some(nu) => ModelParams::new(
                self.w.clone(),
                self.mu.clone(),
                sigma2,
                DVector::from_element(d, nu),
                DVector::from_element(k, nu),
            ),
        }
    }

    pub fn kind(&self) -> ModelKind {
        if self.nu.is_some() {
            ModelKind::StudentTPPCA
        } else {
            ModelKind::GaussianPPCA
        }
    }
}

fn complete_rows(data: &DataSet, k: usize) -> Result<()> {
    if !data.is_complete() {
        return Err(Error::Unsupported(
            "baseline estimators need complete data".into(),
        ));
    }
    if data.n() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 rows, got {}",
            data.n()
        )));
    }
    if k == 0 || k >= data.d() {
        return Err(Error::DimensionMismatch(format!(
            "latent dimension {k} for {} columns",
            data.d()
        )));
    }
    Ok(())
}

/// `W` from the top `k` eigenpairs of `c` as `e_j sqrt(lambda_j - sigma2)`
/// and `sigma2` as the mean of the trailing eigenvalues.
pub fn ppca_factorization(c: &DMatrix<f64>, k: usize) -> Result<(DMatrix<f64>, f64)> {
    let d = c.nrows();
    if k == 0 || k >= d {
        return Err(Error::DimensionMismatch(format!(
            "latent dimension {k} for {d} columns"
        )));
    }
    let (vals, vecs) = eigendecompose(c)?;
    if !(vals[0] > 0.0) {
        return Err(Error::RankDeficient(vals[0].max(0.0)));
    }
    let sigma2 = (vals.rows(k, d - k).sum() / (d - k) as f64).max(0.0);
    let w = DMatrix::from_fn(d, k, |i, j| {
        vecs[(i, j)] * (vals[j] - sigma2).max(0.0).sqrt()
    });
    Ok((w, sigma2))
}

/// Maximum-likelihood Gaussian PPCA: sample mean, sample covariance (divisor
/// `N`) and its principal-axis factorization.
pub fn fit_gaussian_ppca(data: &DataSet, k: usize) -> Result<BaselineEstimate> {
    complete_rows(data, k)?;
    let y = data.y();
    let n = data.n() as f64;
    let mu = DVector::from_fn(data.d(), |i, _| y.column(i).mean());
    let centered = DMatrix::from_fn(data.n(), data.d(), |t, i| y[(t, i)] - mu[i]);
    let c = centered.transpose() * &centered / n;
    let (w, sigma2) = ppca_factorization(&(0.5 * (&c + c.transpose())), k)?;
    Ok(BaselineEstimate {
        mu,
        c,
        w,
        sigma2,
        weights: DVector::from_element(data.n(), 1.0),
        nu: None,
        iterations: 0,
    })
}

/// Classical Student-t PPCA: iterates the weighted mean and scatter with row
/// weights `(nu + d) / (nu + D^2)` until the largest relative parameter change
/// drops below `1e-8`, then factorizes the scatter as in the Gaussian case.
pub fn fit_student_t_ppca(data: &DataSet, k: usize, nu: f64) -> Result<BaselineEstimate> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::NonPositiveDof(nu));
    }
    let start = fit_gaussian_ppca(data, k)?;
    let y = data.y();
    let (n, d) = (data.n(), data.d());
    let mut mu = start.mu;
    let mut c = start.c;
    let mut weights = DVector::from_element(n, 1.0);
    for iter in 1..=MAX_ITER {
        let chol = spd_cholesky(&c)?;
        for t in 0..n {
            let r = y.row(t).transpose() - &mu;
            let dist = r.dot(&chol.solve(&r));
            weights[t] = (nu + d as f64) / (nu + dist);
        }
        let total = weights.sum();
        let mu_new = y.tr_mul(&weights) / total;
        let mut c_new = DMatrix::zeros(d, d);
        for t in 0..n {
            let r = y.row(t).transpose() - &mu_new;
            c_new.ger(weights[t], &r, &r, 1.0);
        }
        c_new /= n as f64;
        let scale = c.diagonal().max().sqrt().max(f64::MIN_POSITIVE);
        let mu_change = (&mu_new - &mu).amax() / scale;
        let c_change = (&c_new - &c).amax() / c.amax().max(f64::MIN_POSITIVE);
        mu = mu_new;
        c = c_new;
        if mu_change.max(c_change) < REL_TOL {
            let (w, sigma2) = ppca_factorization(&(0.5 * (&c + c.transpose())), k)?;
            return Ok(BaselineEstimate {
                mu,
                c,
                w,
                sigma2,
                weights,
                nu: Some(nu),
                iterations: iter,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
    })
}

/// Log-density of every row under Gaussian or classical Student-t PPCA,
/// marginalizing over missing entries.
pub fn baseline_row_log_densities(
    data: &DataSet,
    params: &ModelParams,
    kind: ModelKind,
) -> Result<Vec<f64>> {
    if !matches!(kind, ModelKind::GaussianPPCA | ModelKind::StudentTPPCA) {
        return Err(Error::Unsupported(format!(
            "{kind} is not a closed-form baseline"
        )));
    }
    validate(params, kind)?;
    if data.d() != params.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, model {}",
            data.d(),
            params.dim()
        )));
    }
    let nu = params.nu_eps[0];
    let scatter = &params.w * params.w.transpose()
        + DMatrix::identity(params.dim(), params.dim()) * params.sigma2;
    (0..data.n())
        .map(|t| {
            let obs: Vec<usize> = (0..data.d()).filter(|&i| data.is_observed(t, i)).collect();
            let c = scatter.select_rows(&obs).select_columns(&obs);
            let r = DVector::from_fn(obs.len(), |a, _| data.y()[(t, obs[a])] - params.mu[obs[a]]);
            let chol = spd_cholesky(&c)?;
            let dist = r.dot(&chol.solve(&r));
            let p = obs.len() as f64;
            let log_det = chol_log_det(&chol);
            Ok(if nu.is_infinite() {
                -0.5 * (p * LN_2PI + log_det + dist)
            } else {
                ln_gamma(0.5 * (nu + p))
                    - ln_gamma(0.5 * nu)
                    - 0.5 * p * (nu.ln() + LN_PI)
                    - 0.5 * log_det
                    - 0.5 * (nu + p) * (dist / nu).ln_1p()
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
    use statrs::distribution::{Continuous, StudentsT};

    fn gaussian_sample(n: usize, seed: u64) -> DataSet {
        let w = dmatrix![0.3, 1.0; 1.23, 0.8; 0.021, 0.98];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = DMatrix::zeros(n, 3);
        for t in 0..n {
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            for i in 0..3 {
                let e: f64 = rng.sample(StandardNormal);
                y[(t, i)] = w[(i, 0)] * x[0] + w[(i, 1)] * x[1] + 0.1f64.sqrt() * e;
            }
        }
        DataSet::complete(y).unwrap()
    }

    #[test]
    fn noiseless_subspace_has_zero_noise() {
        let basis = dmatrix![1.0, 0.0; 0.5, 1.0; -1.0, 2.0];
        let coords = DMatrix::from_fn(40, 2, |t, j| ((t * (j + 3)) as f64 * 0.37).sin());
        let y = coords * basis.transpose() + DMatrix::from_fn(40, 3, |_, i| i as f64);
        let fit = fit_gaussian_ppca(&DataSet::complete(y).unwrap(), 2).unwrap();
        assert!(fit.sigma2.abs() < 1e-12);
        assert_relative_eq!(&fit.w * fit.w.transpose(), fit.c, epsilon = 1e-10);
    }

    #[test]
    fn repeated_row_is_rank_zero() {
        let y = DMatrix::from_fn(5, 3, |_, i| i as f64);
        assert!(matches!(
            fit_gaussian_ppca(&DataSet::complete(y).unwrap(), 1),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn preconditions() {
        let data = gaussian_sample(10, 1);
        assert!(fit_gaussian_ppca(&data, 3).is_err());
        assert!(fit_gaussian_ppca(&data.select_rows(&[0]), 1).is_err());
        assert!(fit_student_t_ppca(&data, 1, 0.0).is_err());
        let masked =
            DataSet::with_mask(data.y().clone(), (0..30).map(|e| e != 4).collect()).unwrap();
        assert!(matches!(
            fit_gaussian_ppca(&masked, 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn huge_nu_matches_gaussian() {
        let data = gaussian_sample(500, 2);
        let g = fit_gaussian_ppca(&data, 2).unwrap();
        let t = fit_student_t_ppca(&data, 2, 1e6).unwrap();
        assert_relative_eq!(g.mu, t.mu, epsilon = 1e-4);
        assert_relative_eq!(g.c, t.c, epsilon = 1e-4, max_relative = 1e-4);
        assert!((g.sigma2 - t.sigma2).abs() < 1e-4);
    }

    #[test]
    fn weights_bounded() {
        let data = gaussian_sample(300, 3);
        let nu = 3.0;
        let t = fit_student_t_ppca(&data, 2, nu).unwrap();
        assert!(t.weights.iter().all(|&w| w > 0.0 && w <= (nu + 3.0) / nu));
    }

    #[test]
    fn outlier_pull_is_damped() {
        let clean = gaussian_sample(400, 4);
        let mut y = clean.y().clone();
        let shift = 100.0 * 0.1f64.sqrt();
        y.row_mut(0).add_scalar_mut(shift);
        let dirty = DataSet::complete(y).unwrap();
        let g_clean = fit_gaussian_ppca(&clean, 2).unwrap();
        let g_dirty = fit_gaussian_ppca(&dirty, 2).unwrap();
        let t_clean = fit_student_t_ppca(&clean, 2, 4.0).unwrap();
        let t_dirty = fit_student_t_ppca(&dirty, 2, 4.0).unwrap();
        let pull_mean = (&g_dirty.mu - &g_clean.mu).norm();
        let pull_t = (&t_dirty.mu - &t_clean.mu).norm();
        assert!(pull_t < 0.1 * pull_mean, "{pull_t} vs {pull_mean}");
    }

    #[test]
    fn univariate_t_density() {
        // d = 2 with one observed coordinate reduces to a scaled univariate t.
        let p = ModelParams::new(
            dmatrix![0.6; 0.2],
            DVector::from_vec(vec![0.5, -1.0]),
            0.3,
            DVector::from_element(2, 5.0),
            DVector::from_element(1, 5.0),
        );
        let data = DataSet::from_rows(&[vec![Some(1.7), None]]).unwrap();
        let ll = baseline_row_log_densities(&data, &p, ModelKind::StudentTPPCA).unwrap()[0];
        let scale = (0.36f64 + 0.3).sqrt();
        let oracle = StudentsT::new(0.5, scale, 5.0).unwrap().ln_pdf(1.7);
        assert_relative_eq!(ll, oracle, epsilon = 1e-12);
    }
}

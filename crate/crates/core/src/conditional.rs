//! Gaussian structure of the model once the mixing vectors are fixed.
//!
//! Given `u` and `v`, the latent factors and the observation are jointly
//! Gaussian. The functions here assemble that joint law directly and serve as
//! the reference against which the EM kernel's cached formulas are tested.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::special::mixing_vectors;
use crate::types::ModelParams;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Cholesky factorization with one retry after a symmetric jitter of
/// `1e-10 * trace / dim`.
pub fn spd_cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows().max(1) as f64;
    let jitter = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE) / n;
    let shifted = m + DMatrix::identity(m.nrows(), m.ncols()) * jitter;
    shifted.cholesky().ok_or_else(|| {
        Error::NotPositiveDefinite(format!("{}x{} matrix after jitter", m.nrows(), m.ncols()))
    })
}

/// Log-determinant from a Cholesky factor.
pub fn chol_log_det(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
}

/// Conditional Gaussian blocks for fixed mixing vectors.
#[derive(Debug, Clone)]
pub struct ConditionalBlocks {
    /// `sigma2 D_x + W^T D_eps W`.
    pub m: DMatrix<f64>,
    /// `D_eps - D_eps W M^-1 W^T D_eps`; equals `sigma2 Sigma_y^-1`.
    pub n: DMatrix<f64>,
    /// Posterior covariance of the factors, `sigma2 M^-1`.
    pub sigma_x: DMatrix<f64>,
    /// Mean of `y` given the mixing vectors.
    pub mu_y: DVector<f64>,
    /// Covariance of `y` given the mixing vectors.
    pub sigma_y: DMatrix<f64>,
    m_inv: DMatrix<f64>,
    w: DMatrix<f64>,
    mu: DVector<f64>,
    u: DVector<f64>,
    delta_eps: DVector<f64>,
    delta_x: DVector<f64>,
    sigma2: f64,
}

impl ConditionalBlocks {
    /// Posterior mean of the factors for a fully observed row `y`:
    /// `((y - mu) o u - delta_eps) W + sigma2 delta_x` times `M^-1`.
    pub fn mu_x(&self, y: &DVector<f64>) -> DVector<f64> {
        let c = (y - &self.mu).component_mul(&self.u) - &self.delta_eps;
        let g = self.w.transpose() * c + &self.delta_x * self.sigma2;
        &self.m_inv * g
    }
}

pub fn conditional_blocks(
    params: &ModelParams,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<ConditionalBlocks> {
    let (d, k) = params.w.shape();
    if u.len() != d || v.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "mixing vectors of length {}, {}",
            u.len(),
            v.len()
        )));
    }
    if u.iter()
        .chain(v.iter())
        .any(|&x| !(x > 0.0) || !x.is_finite())
    {
        return Err(Error::Domain(
            "mixing values must be positive and finite".into(),
        ));
    }
    let w = &params.w;
    let s2 = params.sigma2;
    let du = DMatrix::from_diagonal(u);
    let m = DMatrix::from_diagonal(&(v * s2)) + w.transpose() * &du * w;
    let m_inv = spd_cholesky(&m)?.inverse();
    let duw = &du * w;
    let n = &du - &duw * &m_inv * duw.transpose();
    let u_inv = u.map(|x| 1.0 / x);
    let v_inv = v.map(|x| 1.0 / x);
    let mu_y = &params.mu
        + params.delta_eps.component_mul(&u_inv)
        + w * params.delta_x.component_mul(&v_inv);
    let sigma_y =
        w * DMatrix::from_diagonal(&v_inv) * w.transpose() + DMatrix::from_diagonal(&(u_inv * s2));
    Ok(ConditionalBlocks {
        sigma_x: &m_inv * s2,
        m,
        n,
        mu_y,
        sigma_y: 0.5 * (&sigma_y + sigma_y.transpose()),
        m_inv,
        w: w.clone(),
        mu: params.mu.clone(),
        u: u.clone(),
        delta_eps: params.delta_eps.clone(),
        delta_x: params.delta_x.clone(),
        sigma2: s2,
    })
}

/// Conditions `N(mu, sigma)` on the coordinates `observed_idx` taking
/// `observed_values`; returns the law of the remaining coordinates in
/// increasing index order.
pub fn gaussian_condition(
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    observed_idx: &[usize],
    observed_values: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = mu.len();
    if observed_idx.len() != observed_values.len() || observed_idx.iter().any(|&i| i >= n) {
        return Err(Error::DimensionMismatch(
            "observed indices and values disagree".into(),
        ));
    }
    let free: Vec<usize> = (0..n).filter(|i| !observed_idx.contains(i)).collect();
    if observed_idx.is_empty() {
        return Ok((mu.clone(), sigma.clone()));
    }
    let s_oo = sigma.select_rows(observed_idx).select_columns(observed_idx);
    let s_fo = sigma.select_rows(&free).select_columns(observed_idx);
    let s_ff = sigma.select_rows(&free).select_columns(&free);
    let chol = s_oo
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("observed covariance block".into()))?;
    let resid = observed_values - mu.select_rows(observed_idx);
    let mean = mu.select_rows(&free) + &s_fo * chol.solve(&resid);
    let cov = s_ff - &s_fo * chol.solve(&s_fo.transpose());
    Ok((mean, 0.5 * (&cov + cov.transpose())))
}

fn split_mask(mask_row: &[bool]) -> Result<(Vec<usize>, Vec<usize>)> {
    let observed: Vec<usize> = (0..mask_row.len()).filter(|&i| mask_row[i]).collect();
    if observed.is_empty() {
        return Err(Error::InvalidInput("row has no observed entries".into()));
    }
    let missing = (0..mask_row.len()).filter(|&i| !mask_row[i]).collect();
    Ok((observed, missing))
}

/// Law of the missing coordinates given the observed ones (and the mixing
/// vectors). `y_row` is the full row; missing entries are ignored.
pub fn missing_conditional(
    blocks: &ConditionalBlocks,
    y_row: &DVector<f64>,
    mask_row: &[bool],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (observed, missing) = split_mask(mask_row)?;
    if missing.is_empty() {
        return Ok((DVector::zeros(0), DMatrix::zeros(0, 0)));
    }
    gaussian_condition(
        &blocks.mu_y,
        &blocks.sigma_y,
        &observed,
        &y_row.select_rows(&observed),
    )
}

/// First and second non-central moments of the full row with the missing
/// part replaced by its conditional law.
pub fn y_moments_given_missing(
    blocks: &ConditionalBlocks,
    y_row: &DVector<f64>,
    mask_row: &[bool],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (_, missing) = split_mask(mask_row)?;
    let (mu_m, sigma_m) = missing_conditional(blocks, y_row, mask_row)?;
    let mut ey = y_row.clone();
    for (slot, &i) in missing.iter().enumerate() {
        ey[i] = mu_m[slot];
    }
    let mut eyy = &ey * ey.transpose();
    for (a, &i) in missing.iter().enumerate() {
        for (b, &j) in missing.iter().enumerate() {
            eyy[(i, j)] += sigma_m[(a, b)];
        }
    }
    Ok((ey, eyy))
}

/// Log density of the observed part of `y_row` given the mixing vectors.
pub fn log_observed_density(
    blocks: &ConditionalBlocks,
    y_row: &DVector<f64>,
    mask_row: &[bool],
) -> Result<f64> {
    let (observed, _) = split_mask(mask_row)?;
    let s_oo = blocks
        .sigma_y
        .select_rows(&observed)
        .select_columns(&observed);
    let chol = spd_cholesky(&s_oo)?;
    let r = y_row.select_rows(&observed) - blocks.mu_y.select_rows(&observed);
    let quad = r.dot(&chol.solve(&r));
    Ok(-0.5 * (observed.len() as f64 * LN_2PI + chol_log_det(&chol) + quad))
}

/// Logarithm of the unit-square integrand whose double integral is the
/// marginal density of the observed coordinates: the Gaussian density of
/// `y_o` given the mixing vectors at `(s_eps, s_x)`.
pub fn log_m_function(
    params: &ModelParams,
    y_row: &DVector<f64>,
    mask_row: &[bool],
    s_eps: f64,
    s_x: f64,
) -> Result<f64> {
    let mv = mixing_vectors(s_eps, s_x, &params.nu_eps, &params.nu_x)?;
    let blocks = conditional_blocks(params, &mv.u, &mv.v)?;
    let value = log_observed_density(&blocks, y_row, mask_row)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteIntegrand { s_eps, s_x });
    }
    Ok(value)
}

pub fn m_function(
    params: &ModelParams,
    y_row: &DVector<f64>,
    mask_row: &[bool],
    s_eps: f64,
    s_x: f64,
) -> Result<f64> {
    log_m_function(params, y_row, mask_row, s_eps, s_x).map(f64::exp)
}

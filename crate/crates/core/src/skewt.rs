//! Skew-t fit with latent skewness chosen on a grid.
//!
//! Jointly estimating the intercept and the latent skewness is badly
//! identified: both shift the mean of an observation. For each fixed `delta_x`
//! the intercept is instead pinned by the mean identity
//! `E[y] = mu + nu_x / (nu_x - 2) * delta_x W^T`, the data are centred at that
//! intercept and EM updates only `W` and `sigma2`. The grid point with the
//! largest sample log-likelihood wins.
//!
//! With one latent degree of freedom the latent mixing values of a row are
//! equal, so `(W, delta_x)` and `(W R, R^T delta_x)` define the same law for
//! any orthogonal `R`: only the length of `delta_x` is identified. Each
//! distinct length on the grid is fitted once at `(r, 0, ..., 0)` after
//! searching over initial skew directions, and the fit is rotated onto every
//! grid point of that length. Equivalent points tie exactly; the tie goes to
//! the lexicographically largest point, which puts the skewness on the
//! leading factor with positive sign.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::em::{
    initial_params, integral_set, integral_set_with, iterate, log_likelihood_with, maximize,
    EmConfig, MixingTable,
};
use crate::error::{Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::robust::huber_location;
use crate::types::{validate, DataSet, FreeParams, ModelKind, ModelParams};

/// Marginal grid used when none is given.
pub const DEFAULT_DELTA_GRID: [f64; 7] = [-1.0, -0.5, -0.2, 0.0, 0.2, 0.5, 1.0];

/// Column location estimate used in the intercept identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LocationStatistic {
    #[default]
    Mean,
    Huber,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkewGridConfig {
    pub em: EmConfig,
    pub location: LocationStatistic,
}

/// Fit at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SkewGridResult {
    pub delta_x: DVector<f64>,
    pub params: ModelParams,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkewGridFit {
    /// Index of the selected point in `results`.
    pub best: usize,
    /// One entry per grid point, in grid order.
    pub results: Vec<SkewGridResult>,
}

impl SkewGridFit {
    pub fn best(&self) -> &SkewGridResult {
        &self.results[self.best]
    }
}

/// Cartesian product of a marginal grid over `k` coordinates, in
/// lexicographic order.
pub fn product_grid(marginal: &[f64], k: usize) -> Vec<DVector<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                marginal.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// `W` and `sigma2` maximizing the expected complete-data log-likelihood of
/// the centred model (no intercept, no noise skewness) given E-step
/// statistics at `params`. `data_centered` must already have the intercept
/// removed; the intercept and noise skewness of `params` are ignored.
pub fn centered_m_step(
    data_centered: &DataSet,
    params: &ModelParams,
    grid: &QuadratureGrid,
) -> Result<(DMatrix<f64>, f64)> {
    let centred = centred_params(params);
    let stats = integral_set(data_centered, &centred, grid)?;
    let next = maximize(&stats, &centred, FreeParams::centred())?;
    Ok((next.w, next.sigma2))
}

fn centred_params(params: &ModelParams) -> ModelParams {
    let mut p = params.clone();
    p.mu.fill(0.0);
    p.delta_eps.fill(0.0);
    p
}

fn column_locations(data: &DataSet, location: LocationStatistic) -> Result<DVector<f64>> {
    let y = data.y();
    match location {
        LocationStatistic::Mean => Ok(DVector::from_fn(data.d(), |i, _| y.column(i).mean())),
        LocationStatistic::Huber => {
            let cols = (0..data.d())
                .map(|i| huber_location(y.column(i).as_slice()))
                .collect::<Result<Vec<_>>>()?;
            Ok(DVector::from_vec(cols))
        }
    }
}

fn intercept(
    location: &DVector<f64>,
    w: &DMatrix<f64>,
    delta_x: &DVector<f64>,
    nu_x: f64,
) -> DVector<f64> {
    location - w * delta_x * (nu_x / (nu_x - 2.0))
}

fn check_inputs(data: &DataSet, nu_x: f64) -> Result<()> {
    if !data.is_complete() {
        return Err(Error::Unsupported(
            "the skew grid fit needs complete data".into(),
        ));
    }
    if !(nu_x > 2.0) {
        return Err(Error::Domain(format!(
            "latent degrees of freedom {nu_x} must exceed 2"
        )));
    }
    Ok(())
}

/// Alternates the intercept identity with one centred EM step until the
/// relative log-likelihood change falls below `config.em.rel_tol`.
pub fn fit_skew_t_at(
    data: &DataSet,
    init: &ModelParams,
    delta_x: &DVector<f64>,
    config: &SkewGridConfig,
) -> Result<SkewGridResult> {
    let nu_x = init.nu_x[0];
    check_inputs(data, nu_x)?;
    if delta_x.len() != init.latent_dim() {
        return Err(Error::DimensionMismatch(format!(
            "skewness has {} entries, model {}",
            delta_x.len(),
            init.latent_dim()
        )));
    }
    let location = column_locations(data, config.location)?;
    let mut params = init.clone();
    params.delta_x = delta_x.clone();
    params.delta_eps.fill(0.0);
    validate(&params, ModelKind::SkewTGStSimplified)?;
    let grid = config.em.grid()?;
    let table = MixingTable::new(&params.nu_eps, &params.nu_x, &grid)?;
    params.mu = intercept(&location, &params.w, delta_x, nu_x);
    // The intercept follows the mean identity rather than the likelihood, so
    // small decreases are possible and not treated as errors.
    let em = EmConfig {
        monotone_slack: f64::INFINITY,
        ..config.em.clone()
    };
    let run = iterate(
        &params,
        FreeParams::centred(),
        &em,
        |p| {
            let mu = intercept(&location, &p.w, delta_x, nu_x);
            let centred = centred_params(p);
            let stats = integral_set_with(&centre(data, &mu)?, &centred, &table)?;
            let next = maximize(&stats, &centred, FreeParams::centred())?;
            let mut out = p.clone();
            out.w = next.w;
            out.sigma2 = next.sigma2;
            out.mu = intercept(&location, &out.w, delta_x, nu_x);
            Ok((stats.loglik, out))
        },
        |p| p.sigma2 > 0.0,
    )?;
    let (iterations, converged) = (run.iterations, run.converged);
    let mut params = run.params;
    params.mu = intercept(&location, &params.w, delta_x, nu_x);
    let loglik = log_likelihood_with(data, &params, &table)?;
    Ok(SkewGridResult {
        delta_x: delta_x.clone(),
        params,
        loglik,
        iterations,
        converged,
    })
}

fn centre(data: &DataSet, mu: &DVector<f64>) -> Result<DataSet> {
    let y = DMatrix::from_fn(data.n(), data.d(), |t, i| data.y()[(t, i)] - mu[i]);
    DataSet::complete(y)
}

/// Orthogonal symmetric matrix whose first column is the unit vector `u`.
fn reflection_onto(u: &DVector<f64>) -> DMatrix<f64> {
    let k = u.len();
    let mut v = u.clone();
    v[0] -= 1.0;
    let norm2 = v.norm_squared();
    if norm2 < 1e-30 {
        return DMatrix::identity(k, k);
    }
    DMatrix::identity(k, k) - (2.0 / norm2) * &v * v.transpose()
}

/// Unit latent directions tried as the skew axis: `+-e_i`, `(+-e_i +- e_j) / sqrt 2`
/// and, when defined, the latent coordinates of the gap between the column
/// means and the Huber locations, which points along the skew in the data.
fn candidate_directions(data: &DataSet, w: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let k = w.ncols();
    let mut out = Vec::new();
    let gap = column_locations(data, LocationStatistic::Mean)?
        - column_locations(data, LocationStatistic::Huber)?;
    if let Some(solved) = (w.transpose() * w).lu().solve(&(w.transpose() * gap)) {
        if solved.norm() > 0.0 && solved.iter().all(|v| v.is_finite()) {
            out.push(solved.normalize());
        }
    }
    let unit = |i: usize| DVector::from_fn(k, |r, _| if r == i { 1.0 } else { 0.0 });
    for i in 0..k {
        out.push(unit(i));
        out.push(-unit(i));
        for j in i + 1..k {
            for (a, b) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                out.push((a * unit(i) + b * unit(j)) / 2f64.sqrt());
            }
        }
    }
    Ok(out)
}

/// Fit at skewness `(length, 0, ..., 0)`, started from the rotation of
/// `init` whose skew axis gives the largest log-likelihood.
pub fn fit_skew_t_length(
    data: &DataSet,
    init: &ModelParams,
    length: f64,
    config: &SkewGridConfig,
) -> Result<SkewGridResult> {
    let k = init.latent_dim();
    let delta = DVector::from_fn(k, |r, _| if r == 0 { length } else { 0.0 });
    if length == 0.0 {
        return fit_skew_t_at(data, init, &delta, config);
    }
    let nu_x = init.nu_x[0];
    check_inputs(data, nu_x)?;
    let location = column_locations(data, config.location)?;
    let table = MixingTable::new(&init.nu_eps, &init.nu_x, &config.em.grid()?)?;
    let mut best: Option<(f64, ModelParams)> = None;
    for u in candidate_directions(data, &init.w)? {
        let mut start = init.clone();
        start.delta_eps.fill(0.0);
        start.delta_x = delta.clone();
        start.w = &init.w * reflection_onto(&u);
        start.mu = intercept(&location, &start.w, &delta, nu_x);
        let ll = log_likelihood_with(data, &start, &table)?;
        if best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, start));
        }
    }
    let (_, start) = best.expect("at least one direction");
    fit_skew_t_at(data, &start, &delta, config)
}

/// Rotates a fit at `(r, 0, ..., 0)` onto the equivalent point `delta_x`
/// of the same length.
fn rotate_onto(fit: &SkewGridResult, delta_x: &DVector<f64>) -> SkewGridResult {
    let length = delta_x.norm();
    let mut out = fit.clone();
    if length > 0.0 {
        out.params.w = &fit.params.w * reflection_onto(&(delta_x / length));
    }
    out.params.delta_x = delta_x.clone();
    out.delta_x = delta_x.clone();
    out
}

/// Fits every distinct skewness length of the grid in parallel from a common
/// warm start and selects the largest log-likelihood; ties go to the
/// lexicographically largest point.
pub fn fit_skew_t_grid(
    data: &DataSet,
    k: usize,
    nu_eps: f64,
    nu_x: f64,
    delta_grid: &[DVector<f64>],
    config: &SkewGridConfig,
) -> Result<SkewGridFit> {
    check_inputs(data, nu_x)?;
    if delta_grid.is_empty() {
        return Err(Error::InvalidInput("empty skewness grid".into()));
    }
    if let Some(bad) = delta_grid.iter().find(|d| d.len() != k) {
        return Err(Error::DimensionMismatch(format!(
            "skewness has {} entries, model {k}",
            bad.len()
        )));
    }
    let init = initial_params(
        data,
        k,
        DVector::from_element(data.d(), nu_eps),
        DVector::from_element(k, nu_x),
    )?;
    let mut lengths: Vec<f64> = Vec::new();
    let length_of: Vec<usize> = delta_grid
        .iter()
        .map(|d| {
            let r = d.norm();
            match lengths
                .iter()
                .position(|&l| (l - r).abs() <= 1e-12 * r.max(1.0))
            {
                Some(i) => i,
                None => {
                    lengths.push(r);
                    lengths.len() - 1
                }
            }
        })
        .collect();
    let fits = lengths
        .par_iter()
        .map(|&r| fit_skew_t_length(data, &init, r, config))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<SkewGridResult> = delta_grid
        .iter()
        .zip(&length_of)
        .map(|(d, &i)| rotate_onto(&fits[i], d))
        .collect();
    let best = (0..results.len())
        .reduce(|a, b| {
            let (ra, rb) = (&results[a], &results[b]);
            match rb.loglik.total_cmp(&ra.loglik) {
                std::cmp::Ordering::Greater => b,
                std::cmp::Ordering::Less => a,
                std::cmp::Ordering::Equal => {
                    if lex_less(&ra.delta_x, &rb.delta_x) {
                        b
                    } else {
                        a
                    }
                }
            }
        })
        .unwrap_or(0);
    Ok(SkewGridFit { best, results })
}

fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    a.iter()
        .zip(b.iter())
        .find(|(x, y)| x != y)
        .is_some_and(|(x, y)| x < y)
}

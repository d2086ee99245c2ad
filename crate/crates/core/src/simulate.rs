//! Samplers for every family member and value-independent masking.
//!
//! Each row draws from its own ChaCha stream keyed on `(seed, purpose, row)`,
//! so output does not depend on how rows are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::special::mixing_value;
use crate::types::{validate, DataSet, ModelKind, ModelParams};

const PURPOSE_DRAW: u64 = 1;
const PURPOSE_MASK: u64 = 2;

/// Deterministic generator for one `(seed, purpose, row)` triple.
pub fn row_rng(seed: u64, purpose: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(row);
    rng
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let s: f64 = rng.random();
        if s > 0.0 {
            return s;
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimSpec {
    pub params: ModelParams,
    pub kind: ModelKind,
    pub n: usize,
    pub seed: u64,
}

/// Hidden variables of a simulated sample.
#[derive(Debug, Clone)]
pub struct Latents {
    pub s_eps: Vec<f64>,
    pub s_x: Vec<f64>,
    /// `N x d` noise mixing values.
    pub u: DMatrix<f64>,
    /// `N x k` latent mixing values.
    pub v: DMatrix<f64>,
    /// `N x k` latent factors.
    pub x: DMatrix<f64>,
}

struct RowDraw {
    y: Vec<f64>,
    s_eps: f64,
    s_x: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    x: Vec<f64>,
}

/// Maps each entry of `nu` through the scaled quantile at `s`, evaluating
/// each distinct value once.
fn mixing_row(nu: &DVector<f64>, s: f64) -> Result<Vec<f64>> {
    let mut out: Vec<f64> = Vec::with_capacity(nu.len());
    for (i, &n) in nu.iter().enumerate() {
        let value = match nu.iter().take(i).position(|&m| m == n) {
            Some(j) => out[j],
            None => mixing_value(n, s)?,
        };
        out.push(value);
    }
    Ok(out)
}

fn draw_row(p: &ModelParams, kind: ModelKind, seed: u64, t: usize) -> Result<RowDraw> {
    let (d, k) = p.w.shape();
    let mut rng = row_rng(seed, PURPOSE_DRAW, t as u64);
    let s_eps = open_uniform(&mut rng);
    let s_x = open_uniform(&mut rng);
    let z_x: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
    let z_e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let (u, v) = if kind == ModelKind::StudentTPPCA {
        // One mixing variable scales factors and noise together.
        let w = mixing_value(p.nu_eps[0], s_eps)?;
        (vec![w; d], vec![w; k])
    } else {
        (mixing_row(&p.nu_eps, s_eps)?, mixing_row(&p.nu_x, s_x)?)
    };
    let x: Vec<f64> = (0..k)
        .map(|j| p.delta_x[j] / v[j] + z_x[j] / v[j].sqrt())
        .collect();
    let y = (0..d)
        .map(|i| {
            let signal: f64 = (0..k).map(|j| x[j] * p.w[(i, j)]).sum();
            p.mu[i] + signal + p.delta_eps[i] / u[i] + (p.sigma2 / u[i]).sqrt() * z_e[i]
        })
        .collect();
    Ok(RowDraw {
        y,
        s_eps,
        s_x: if kind == ModelKind::StudentTPPCA {
            s_eps
        } else {
            s_x
        },
        u,
        v,
        x,
    })
}

fn draw_all(spec: &SimSpec) -> Result<Vec<RowDraw>> {
    if spec.n == 0 {
        return Err(Error::InvalidInput("sample size must be positive".into()));
    }
    validate(&spec.params, spec.kind)?;
    (0..spec.n)
        .into_par_iter()
        .map(|t| draw_row(&spec.params, spec.kind, spec.seed, t))
        .collect()
}

/// Draws `spec.n` fully observed rows.
pub fn simulate(spec: &SimSpec) -> Result<DataSet> {
    Ok(simulate_with_latents(spec)?.0)
}

/// Like [`simulate`] but also returns the hidden variables.
pub fn simulate_with_latents(spec: &SimSpec) -> Result<(DataSet, Latents)> {
    let rows = draw_all(spec)?;
    let (d, k) = spec.params.w.shape();
    let n = rows.len();
    let y = DMatrix::from_fn(n, d, |t, i| rows[t].y[i]);
    let latents = Latents {
        s_eps: rows.iter().map(|r| r.s_eps).collect(),
        s_x: rows.iter().map(|r| r.s_x).collect(),
        u: DMatrix::from_fn(n, d, |t, i| rows[t].u[i]),
        v: DMatrix::from_fn(n, k, |t, j| rows[t].v[j]),
        x: DMatrix::from_fn(n, k, |t, j| rows[t].x[j]),
    };
    Ok((DataSet::complete(y)?, latents))
}

/// Hides each entry independently with probability `rate`, redrawing the
/// mask of any row that would lose every entry. Entries already missing stay
/// missing.
pub fn mask_mar(data: &DataSet, rate: f64, seed: u64) -> Result<DataSet> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Domain(format!("masking rate {rate} outside [0, 1)")));
    }
    let d = data.d();
    let mut observed = data.mask().to_vec();
    for t in 0..data.n() {
        let mut rng = row_rng(seed, PURPOSE_MASK, t as u64);
        let original = data.row_mask(t);
        loop {
            let row: Vec<bool> = original
                .iter()
                .map(|&o| o && rng.random::<f64>() >= rate)
                .collect();
            if row.iter().any(|&o| o) {
                observed[t * d..(t + 1) * d].copy_from_slice(&row);
                break;
            }
        }
    }
    DataSet::with_mask(data.y().clone(), observed)
}

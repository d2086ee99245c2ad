//! EM estimation for the generalized skew-t PPCA family under missing data.
//!
//! The marginal density of a row is a double integral over the uniforms that
//! drive the noise and latent mixing vectors. Replacing that integral by a
//! tensor-product quadrature turns the model into a finite mixture of
//! Gaussian PPCA models with known weights, so the E-step below computes exact
//! posterior moments of the discretized model and every EM step is monotone.
//!
//! Coordinates whose noise degrees of freedom coincide share one mixing value,
//! so per-row work is organised by those groups. Quantities that depend only
//! on the missingness pattern (the `k x k` posterior precision at every node,
//! its determinant, constant parts of the log density) are computed once per
//! pattern and E-step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::conditional::{chol_log_det, spd_cholesky};
use crate::covariance::model_covariance;
use crate::error::{Error, Result};
use crate::quadrature::{build_smoothed_grid, QuadratureGrid};
use crate::special::mixing_value_split;
use crate::types::{
    pack, unpack, validate, DataSet, FitResult, FreeParams, ModelKind, ModelParams,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Nodes whose weighted log integrand falls this far below the row maximum
/// contribute less than `e^-36` relative to it and are skipped.
const NODE_CUTOFF: f64 = 36.0;
const ROW_CHUNK: usize = 64;

/// Settings of the outer EM loop and the quadrature rule.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    /// Nodes per axis.
    pub grid_n: usize,
    /// Order of the endpoint-smoothing substitution; 1 is plain Gauss-Legendre.
    pub smoothing: u32,
    pub max_iter: usize,
    /// Stop when the relative log-likelihood change drops below this.
    pub rel_tol: f64,
    /// Abort when the log-likelihood drops by more than this relative amount.
    pub monotone_slack: f64,
    /// Squared-extrapolation acceleration. Extrapolated points are kept only
    /// when they do not lower the log-likelihood.
    pub accelerate: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            grid_n: 32,
            smoothing: DEFAULT_SMOOTHING,
            max_iter: 500,
            rel_tol: 1e-6,
            monotone_slack: 1e-6,
            accelerate: true,
        }
    }
}

pub const DEFAULT_SMOOTHING: u32 = 3;

impl EmConfig {
    pub fn grid(&self) -> Result<QuadratureGrid> {
        build_smoothed_grid(self.grid_n, self.smoothing)
    }
}

/// Mixing values of one axis at every quadrature node.
#[derive(Debug, Clone)]
struct Axis {
    nodes: Vec<f64>,
    log_weights: Vec<f64>,
    /// `values[node * width + c]`.
    values: Vec<f64>,
    width: usize,
}

impl Axis {
    fn len(&self) -> usize {
        self.log_weights.len()
    }

    fn build(nu: &[f64], nodes: &[f64], complements: &[f64], weights: &[f64]) -> Result<Self> {
        let width = nu.len();
        if nu.iter().all(|v| v.is_infinite()) {
            return Ok(Self {
                nodes: vec![0.5],
                log_weights: vec![0.0],
                values: vec![1.0; width],
                width,
            });
        }
        let mut values = Vec::with_capacity(nodes.len() * width);
        for (q, &s) in nodes.iter().enumerate() {
            for &n in nu {
                values.push(mixing_value_split(n, s, complements[q])?);
            }
        }
        Ok(Self {
            nodes: nodes.to_vec(),
            log_weights: weights.iter().map(|w| w.ln()).collect(),
            values,
            width,
        })
    }

    fn value(&self, node: usize, c: usize) -> f64 {
        self.values[node * self.width + c]
    }
}

/// Mixing values at the quadrature nodes for fixed degrees of freedom, with
/// noise coordinates grouped by equal degrees of freedom.
#[derive(Debug, Clone)]
pub struct MixingTable {
    eps: Axis,
    lat: Axis,
    group_of: Vec<usize>,
    groups: usize,
    nu_eps: Vec<f64>,
    nu_x: Vec<f64>,
}

impl MixingTable {
    pub fn new(nu_eps: &DVector<f64>, nu_x: &DVector<f64>, grid: &QuadratureGrid) -> Result<Self> {
        let mut distinct: Vec<f64> = Vec::new();
        let mut group_of = Vec::with_capacity(nu_eps.len());
        for &nu in nu_eps.iter() {
            if !(nu > 0.0) {
                return Err(Error::NonPositiveDof(nu));
            }
            let g = match distinct.iter().position(|&x| x == nu) {
                Some(g) => g,
                None => {
                    distinct.push(nu);
                    distinct.len() - 1
                }
            };
            group_of.push(g);
        }
        if let Some(&nu) = nu_x.iter().find(|&&nu| !(nu > 0.0)) {
            return Err(Error::NonPositiveDof(nu));
        }
        let nu_x_vec: Vec<f64> = nu_x.iter().copied().collect();
        Ok(Self {
            eps: Axis::build(
                &distinct,
                &grid.nodes_eps,
                &grid.complements,
                &grid.weights_eps,
            )?,
            lat: Axis::build(&nu_x_vec, &grid.nodes_x, &grid.complements, &grid.weights_x)?,
            groups: distinct.len(),
            group_of,
            nu_eps: nu_eps.iter().copied().collect(),
            nu_x: nu_x_vec,
        })
    }

    /// Number of `(s_eps, s_x)` nodes actually evaluated.
    pub fn node_count(&self) -> usize {
        self.eps.len() * self.lat.len()
    }

    fn matches(&self, params: &ModelParams) -> bool {
        params.nu_eps.iter().eq(self.nu_eps.iter()) && params.nu_x.iter().eq(self.nu_x.iter())
    }
}

/// Per-pattern quantities shared by all rows with the same observed set.
struct PatternCache {
    /// Observed coordinates.
    observed: Vec<usize>,
    /// `sum_obs delta_eps_i w_i`.
    skew_load: Vec<f64>,
    /// `M^-1` at every node, `k x k` row-major.
    m_inv: Vec<f64>,
    /// Constant part of the weighted log integrand at every node.
    node_const: Vec<f64>,
}

fn build_pattern(mask: &[bool], params: &ModelParams, table: &MixingTable) -> Result<PatternCache> {
    let (_, k) = params.w.shape();
    let s2 = params.sigma2;
    let g_count = table.groups;
    let observed: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    let mut gram = vec![DMatrix::<f64>::zeros(k, k); g_count];
    let mut skew_sq = vec![0.0; g_count];
    let mut counts = vec![0usize; g_count];
    let mut skew_load = vec![0.0; k];
    for &i in &observed {
        let g = table.group_of[i];
        let wi = params.w.row(i);
        gram[g] += wi.transpose() * wi;
        let de = params.delta_eps[i];
        skew_sq[g] += de * de;
        counts[g] += 1;
        for j in 0..k {
            skew_load[j] += de * wi[j];
        }
    }
    let (na, nb) = (table.eps.len(), table.lat.len());
    let mut m_inv = vec![0.0; na * nb * k * k];
    let mut node_const = vec![0.0; na * nb];
    let base = -0.5 * observed.len() as f64 * (LN_2PI + s2.ln()) + 0.5 * k as f64 * s2.ln();
    for a in 0..na {
        let mut shared = DMatrix::<f64>::zeros(k, k);
        let mut a_const = base + table.eps.log_weights[a];
        for g in 0..g_count {
            let u = table.eps.value(a, g);
            if counts[g] > 0 {
                shared += &gram[g] * u;
                a_const += 0.5 * counts[g] as f64 * u.ln() - 0.5 * skew_sq[g] / (s2 * u);
            }
        }
        for b in 0..nb {
            let mut m = shared.clone();
            let mut b_const = table.lat.log_weights[b];
            for j in 0..k {
                let v = table.lat.value(b, j);
                m[(j, j)] += s2 * v;
                let dx = params.delta_x[j];
                b_const += 0.5 * v.ln() - 0.5 * dx * dx / v;
            }
            let chol = spd_cholesky(&m)?;
            let inv = chol.inverse();
            let idx = a * nb + b;
            let c = a_const + b_const - 0.5 * chol_log_det(&chol);
            if !c.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    s_eps: table.eps.nodes[a],
                    s_x: table.lat.nodes[b],
                });
            }
            node_const[idx] = c;
            let dst = &mut m_inv[idx * k * k..(idx + 1) * k * k];
            for r in 0..k {
                for col in 0..k {
                    dst[r * k + col] = inv[(r, col)];
                }
            }
        }
    }
    Ok(PatternCache {
        observed,
        skew_load,
        m_inv,
        node_const,
    })
}

/// Raw per-chunk sums; normalized per row before accumulation.
#[derive(Debug, Clone)]
struct Sums {
    rows: f64,
    loglik: f64,
    g_u: Vec<f64>,
    g_uinv: Vec<f64>,
    g_logu: Vec<f64>,
    g_ux: Vec<f64>,
    g_uxx: Vec<f64>,
    y: Vec<f64>,
    uy: Vec<f64>,
    uyy: Vec<f64>,
    uyx: Vec<f64>,
    x: Vec<f64>,
    vinv: Vec<f64>,
    logv: Vec<f64>,
    vxx: Vec<f64>,
}

impl Sums {
    fn new(d: usize, k: usize, groups: usize) -> Self {
        Self {
            rows: 0.0,
            loglik: 0.0,
            g_u: vec![0.0; groups],
            g_uinv: vec![0.0; groups],
            g_logu: vec![0.0; groups],
            g_ux: vec![0.0; groups * k],
            g_uxx: vec![0.0; groups * k * k],
            y: vec![0.0; d],
            uy: vec![0.0; d],
            uyy: vec![0.0; d],
            uyx: vec![0.0; d * k],
            x: vec![0.0; k],
            vinv: vec![0.0; k],
            logv: vec![0.0; k],
            vxx: vec![0.0; k],
        }
    }

    fn add(&mut self, other: &Sums) {
        fn add(a: &mut [f64], b: &[f64]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.rows += other.rows;
        self.loglik += other.loglik;
        add(&mut self.g_u, &other.g_u);
        add(&mut self.g_uinv, &other.g_uinv);
        add(&mut self.g_logu, &other.g_logu);
        add(&mut self.g_ux, &other.g_ux);
        add(&mut self.g_uxx, &other.g_uxx);
        add(&mut self.y, &other.y);
        add(&mut self.uy, &other.uy);
        add(&mut self.uyy, &other.uyy);
        add(&mut self.uyx, &other.uyx);
        add(&mut self.x, &other.x);
        add(&mut self.vinv, &other.vinv);
        add(&mut self.logv, &other.logv);
        add(&mut self.vxx, &other.vxx);
    }
}

/// Reusable per-row buffers.
struct Scratch {
    log_m: Vec<f64>,
    g_vec: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
    s: Vec<f64>,
    wa: Vec<f64>,
    wb: Vec<f64>,
    xa: Vec<f64>,
    xxa: Vec<f64>,
    xxb: Vec<f64>,
    mu_x: Vec<f64>,
}

impl Scratch {
    fn new(table: &MixingTable, k: usize) -> Self {
        let (na, nb, g) = (table.eps.len(), table.lat.len(), table.groups);
        Self {
            log_m: vec![0.0; na * nb],
            g_vec: vec![0.0; na * k],
            h: vec![0.0; na],
            p: vec![0.0; g * k],
            s: vec![0.0; g],
            wa: vec![0.0; na],
            wb: vec![0.0; nb],
            xa: vec![0.0; na * k],
            xxa: vec![0.0; na * k * k],
            xxb: vec![0.0; nb * k],
            mu_x: vec![0.0; k],
        }
    }
}

/// What a pass over the data should produce.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    LogLik,
    Moments,
}

struct Kernel<'a> {
    data: &'a DataSet,
    params: &'a ModelParams,
    table: &'a MixingTable,
    d: usize,
    k: usize,
}

impl Kernel<'_> {
    /// First pass: weighted log integrand at every node. Returns the maximum
    /// and fills `scratch.log_m`, `scratch.g_vec`.
    fn log_integrand(&self, t: usize, cache: &PatternCache, sc: &mut Scratch) -> Result<f64> {
        let (k, p) = (self.k, self.params);
        let s2 = p.sigma2;
        let groups = self.table.groups;
        sc.p.iter_mut().for_each(|x| *x = 0.0);
        sc.s.iter_mut().for_each(|x| *x = 0.0);
        let mut skew_cross = 0.0;
        let y = self.data.y();
        for &i in &cache.observed {
            let g = self.table.group_of[i];
            let r = y[(t, i)] - p.mu[i];
            for j in 0..k {
                sc.p[g * k + j] += r * p.w[(i, j)];
            }
            sc.s[g] += r * r;
            skew_cross += r * p.delta_eps[i];
        }
        let row_const = skew_cross / s2;
        let (na, nb) = (self.table.eps.len(), self.table.lat.len());
        let mut max = f64::NEG_INFINITY;
        for a in 0..na {
            let mut h = 0.0;
            let gv = &mut sc.g_vec[a * k..(a + 1) * k];
            for j in 0..k {
                gv[j] = s2 * p.delta_x[j] - cache.skew_load[j];
            }
            for g in 0..groups {
                let u = self.table.eps.value(a, g);
                h += sc.s[g] * u;
                for j in 0..k {
                    gv[j] += u * sc.p[g * k + j];
                }
            }
            sc.h[a] = h;
            for b in 0..nb {
                let idx = a * nb + b;
                let minv = &cache.m_inv[idx * k * k..(idx + 1) * k * k];
                let mut quad = 0.0;
                for r in 0..k {
                    let mut acc = 0.0;
                    for c in 0..k {
                        acc += minv[r * k + c] * gv[c];
                    }
                    quad += gv[r] * acc;
                }
                let lm = cache.node_const[idx] + row_const - 0.5 * (h - quad) / s2;
                sc.log_m[idx] = lm;
                if lm > max {
                    max = lm;
                }
            }
        }
        if !max.is_finite() {
            return Err(Error::ZeroDensity { row: t });
        }
        Ok(max)
    }

    fn row(
        &self,
        t: usize,
        cache: &PatternCache,
        sc: &mut Scratch,
        mode: Mode,
        sums: &mut Sums,
    ) -> Result<f64> {
        let max = self.log_integrand(t, cache, sc)?;
        let (na, nb) = (self.table.eps.len(), self.table.lat.len());
        let floor = max - NODE_CUTOFF;
        if mode == Mode::LogLik {
            let total: f64 = sc
                .log_m
                .iter()
                .filter(|&&lm| lm >= floor)
                .map(|lm| (lm - max).exp())
                .sum();
            let ll = max + total.ln();
            sums.rows += 1.0;
            sums.loglik += ll;
            return Ok(ll);
        }
        let (k, s2) = (self.k, self.params.sigma2);
        sc.wa.iter_mut().for_each(|x| *x = 0.0);
        sc.wb.iter_mut().for_each(|x| *x = 0.0);
        sc.xa.iter_mut().for_each(|x| *x = 0.0);
        sc.xxa.iter_mut().for_each(|x| *x = 0.0);
        sc.xxb.iter_mut().for_each(|x| *x = 0.0);
        let mut s0 = 0.0;
        for a in 0..na {
            let gv = &sc.g_vec[a * k..(a + 1) * k];
            for b in 0..nb {
                let idx = a * nb + b;
                let lm = sc.log_m[idx];
                if lm < floor {
                    continue;
                }
                let w = (lm - max).exp();
                let minv = &cache.m_inv[idx * k * k..(idx + 1) * k * k];
                for r in 0..k {
                    let mut acc = 0.0;
                    for c in 0..k {
                        acc += minv[r * k + c] * gv[c];
                    }
                    sc.mu_x[r] = acc;
                }
                s0 += w;
                sc.wa[a] += w;
                sc.wb[b] += w;
                let xa = &mut sc.xa[a * k..(a + 1) * k];
                let xxa = &mut sc.xxa[a * k * k..(a + 1) * k * k];
                let xxb = &mut sc.xxb[b * k..(b + 1) * k];
                for r in 0..k {
                    let mr = sc.mu_x[r];
                    xa[r] += w * mr;
                    for c in 0..k {
                        xxa[r * k + c] += w * (s2 * minv[r * k + c] + mr * sc.mu_x[c]);
                    }
                    xxb[r] += w * (s2 * minv[r * k + r] + mr * mr);
                }
            }
        }
        let ll = max + s0.ln();
        let inv = 1.0 / s0;
        self.accumulate(t, sc, inv, sums);
        sums.rows += 1.0;
        sums.loglik += ll;
        Ok(ll)
    }

    /// Folds one row's node sums (scaled by `inv = 1 / S0`) into `sums`.
    fn accumulate(&self, t: usize, sc: &Scratch, inv: f64, sums: &mut Sums) {
        let (d, k) = (self.d, self.k);
        let p = self.params;
        let groups = self.table.groups;
        let (na, nb) = (self.table.eps.len(), self.table.lat.len());

        // Row-normalized group moments.
        let mut gu = vec![0.0; groups];
        let mut guinv = vec![0.0; groups];
        let mut gux = vec![0.0; groups * k];
        let mut guxx = vec![0.0; groups * k * k];
        for g in 0..groups {
            let (mut su, mut suinv, mut slog) = (0.0, 0.0, 0.0);
            for a in 0..na {
                let w = sc.wa[a] * inv;
                if w == 0.0 {
                    continue;
                }
                let u = self.table.eps.value(a, g);
                su += w * u;
                suinv += w / u;
                slog += w * u.ln();
                for j in 0..k {
                    gux[g * k + j] += u * sc.xa[a * k + j] * inv;
                }
                for q in 0..k * k {
                    guxx[g * k * k + q] += u * sc.xxa[a * k * k + q] * inv;
                }
            }
            gu[g] = su;
            guinv[g] = suinv;
            sums.g_u[g] += su;
            sums.g_uinv[g] += suinv;
            sums.g_logu[g] += slog;
        }
        for q in 0..groups * k {
            sums.g_ux[q] += gux[q];
        }
        for q in 0..groups * k * k {
            sums.g_uxx[q] += guxx[q];
        }
        let mut ex = vec![0.0; k];
        for a in 0..na {
            for j in 0..k {
                ex[j] += sc.xa[a * k + j] * inv;
            }
        }
        for j in 0..k {
            sums.x[j] += ex[j];
            let (mut vinv, mut logv, mut vxx) = (0.0, 0.0, 0.0);
            for b in 0..nb {
                let w = sc.wb[b] * inv;
                if w == 0.0 {
                    continue;
                }
                let v = self.table.lat.value(b, j);
                vinv += w / v;
                logv += w * v.ln();
                vxx += v * sc.xxb[b * k + j] * inv;
            }
            sums.vinv[j] += vinv;
            sums.logv[j] += logv;
            sums.vxx[j] += vxx;
        }

        // Observation moments: observed entries are constants, missing ones
        // are integrated against their conditional law.
        let mask = self.data.row_mask(t);
        let y = self.data.y();
        for i in 0..d {
            let g = self.table.group_of[i];
            let ux = &gux[g * k..(g + 1) * k];
            let uxx = &guxx[g * k * k..(g + 1) * k * k];
            if mask[i] {
                let yi = y[(t, i)];
                sums.y[i] += yi;
                sums.uy[i] += yi * gu[g];
                sums.uyy[i] += yi * yi * gu[g];
                for j in 0..k {
                    sums.uyx[i * k + j] += yi * ux[j];
                }
            } else {
                let (mu, de) = (p.mu[i], p.delta_eps[i]);
                let wi: Vec<f64> = (0..k).map(|j| p.w[(i, j)]).collect();
                let dot = |v: &[f64]| v.iter().zip(&wi).map(|(a, b)| a * b).sum::<f64>();
                let x_w = dot(&ex);
                let ux_w = dot(ux);
                let mut uxx_w = vec![0.0; k];
                for r in 0..k {
                    for c in 0..k {
                        uxx_w[r] += uxx[r * k + c] * wi[c];
                    }
                }
                let w_uxx_w = dot(&uxx_w);
                sums.y[i] += mu + de * guinv[g] + x_w;
                sums.uy[i] += mu * gu[g] + de + ux_w;
                sums.uyy[i] += mu * mu * gu[g]
                    + 2.0 * mu * de
                    + de * de * guinv[g]
                    + 2.0 * (mu * ux_w + de * x_w)
                    + w_uxx_w
                    + p.sigma2;
                for j in 0..k {
                    sums.uyx[i * k + j] += mu * ux[j] + de * ex[j] + uxx_w[j];
                }
            }
        }
    }
}

/// Runs the kernel over all rows. Rows are processed pattern by pattern in a
/// fixed order and chunk sums are reduced sequentially, so results do not
/// depend on the number of threads.
fn run(
    data: &DataSet,
    params: &ModelParams,
    table: &MixingTable,
    mode: Mode,
) -> Result<(Sums, Vec<f64>)> {
    params.check_shapes()?;
    let (d, k) = params.w.shape();
    if data.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "data has {} columns, model {d}",
            data.d()
        )));
    }
    if !table.matches(params) {
        return Err(Error::InvalidInput(
            "mixing table was built for other degrees of freedom".into(),
        ));
    }
    let mut patterns: BTreeMap<&[bool], Vec<usize>> = BTreeMap::new();
    for t in 0..data.n() {
        patterns.entry(data.row_mask(t)).or_default().push(t);
    }
    let kernel = Kernel {
        data,
        params,
        table,
        d,
        k,
    };
    let mut total = Sums::new(d, k, table.groups);
    let mut row_ll = vec![0.0; data.n()];
    for (mask, rows) in patterns {
        let cache = build_pattern(mask, params, table)?;
        let parts: Vec<Result<(Sums, Vec<f64>)>> = rows
            .par_chunks(ROW_CHUNK)
            .map(|chunk| {
                let mut sums = Sums::new(d, k, table.groups);
                let mut sc = Scratch::new(table, k);
                let lls = chunk
                    .iter()
                    .map(|&t| kernel.row(t, &cache, &mut sc, mode, &mut sums))
                    .collect::<Result<Vec<f64>>>()?;
                Ok((sums, lls))
            })
            .collect();
        for (chunk, part) in rows.chunks(ROW_CHUNK).zip(parts) {
            let (sums, lls) = part?;
            total.add(&sums);
            for (&t, ll) in chunk.iter().zip(lls) {
                row_ll[t] = ll;
            }
        }
    }
    Ok((total, row_ll))
}

/// Posterior expectations summed over rows: the sufficient statistics of
/// the M-step. Each row contributes expectations under its own posterior,
/// i.e. the row's integrals are normalized by its marginal density.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralSet {
    /// Number of rows.
    pub total: f64,
    /// Sum of `E[u_i]`.
    pub e_u: DVector<f64>,
    /// Sum of `E[1/u_i]`.
    pub e_u_inv: DVector<f64>,
    pub e_log_u: DVector<f64>,
    /// Row `i`: sum of `E[u_i x]`.
    pub e_ux: DMatrix<f64>,
    /// Entry `i`: sum of `E[u_i x^T x]`.
    pub e_uxx: Vec<DMatrix<f64>>,
    /// Sum of `E[y_i]`.
    pub e_y: DVector<f64>,
    /// Sum of `E[u_i y_i]`.
    pub e_uy: DVector<f64>,
    /// Sum of `E[u_i y_i^2]`.
    pub e_uyy: DVector<f64>,
    /// Row `i`: sum of `E[u_i y_i x]`.
    pub e_uyx: DMatrix<f64>,
    /// Sum of `E[x]`.
    pub e_x: DVector<f64>,
    /// Sum of `E[1/v_j]`.
    pub e_v_inv: DVector<f64>,
    pub e_log_v: DVector<f64>,
    /// Sum of `E[v_j x_j^2]`.
    pub e_vxx: DVector<f64>,
    /// Observed-data log-likelihood at the parameters used for the E-step.
    pub loglik: f64,
}

impl IntegralSet {
    fn from_sums(s: &Sums, table: &MixingTable, d: usize, k: usize) -> Self {
        let grp = &table.group_of;
        Self {
            total: s.rows,
            e_u: DVector::from_fn(d, |i, _| s.g_u[grp[i]]),
            e_u_inv: DVector::from_fn(d, |i, _| s.g_uinv[grp[i]]),
            e_log_u: DVector::from_fn(d, |i, _| s.g_logu[grp[i]]),
            e_ux: DMatrix::from_fn(d, k, |i, j| s.g_ux[grp[i] * k + j]),
            e_uxx: (0..d)
                .map(|i| {
                    DMatrix::from_row_slice(k, k, &s.g_uxx[grp[i] * k * k..(grp[i] + 1) * k * k])
                })
                .collect(),
            e_y: DVector::from_column_slice(&s.y),
            e_uy: DVector::from_column_slice(&s.uy),
            e_uyy: DVector::from_column_slice(&s.uyy),
            e_uyx: DMatrix::from_row_slice(d, k, &s.uyx),
            e_x: DVector::from_column_slice(&s.x),
            e_v_inv: DVector::from_column_slice(&s.vinv),
            e_log_v: DVector::from_column_slice(&s.logv),
            e_vxx: DVector::from_column_slice(&s.vxx),
            loglik: s.loglik,
        }
    }

    /// Normal-equation system of coordinate `i` in the unknowns
    /// `(mu_i, delta_eps_i, w_i)`.
    pub fn normal_equations(&self, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.e_x.len();
        let mut g = DMatrix::zeros(k + 2, k + 2);
        let mut b = DVector::zeros(k + 2);
        g[(0, 0)] = self.e_u[i];
        g[(0, 1)] = self.total;
        g[(1, 0)] = self.total;
        g[(1, 1)] = self.e_u_inv[i];
        for j in 0..k {
            g[(0, 2 + j)] = self.e_ux[(i, j)];
            g[(2 + j, 0)] = self.e_ux[(i, j)];
            g[(1, 2 + j)] = self.e_x[j];
            g[(2 + j, 1)] = self.e_x[j];
            for c in 0..k {
                g[(2 + j, 2 + c)] = self.e_uxx[i][(j, c)];
            }
            b[2 + j] = self.e_uyx[(i, j)];
        }
        b[0] = self.e_uy[i];
        b[1] = self.e_y[i];
        (g, b)
    }
}

fn coordinate_params(p: &ModelParams, i: usize) -> DVector<f64> {
    let k = p.latent_dim();
    DVector::from_fn(k + 2, |r, _| match r {
        0 => p.mu[i],
        1 => p.delta_eps[i],
        _ => p.w[(i, r - 2)],
    })
}

/// Expected sum of squared scaled residuals of coordinate `i`,
/// `E[u_i (y_i - mu_i - x w_i - delta_i / u_i)^2]`, summed over rows.
fn coordinate_residual(stats: &IntegralSet, theta: &DVector<f64>, i: usize) -> f64 {
    let (g, b) = stats.normal_equations(i);
    stats.e_uyy[i] - 2.0 * theta.dot(&b) + theta.dot(&(&g * theta))
}

/// Expected complete-data log-likelihood at `params` (the mixing densities,
/// which do not depend on the parameters, are left out).
pub fn q_value(stats: &IntegralSet, params: &ModelParams) -> f64 {
    let (d, k) = params.w.shape();
    let n = stats.total;
    let s2 = params.sigma2;
    let mut q = 0.0;
    for i in 0..d {
        let theta = coordinate_params(params, i);
        q += -0.5 * n * (LN_2PI + s2.ln()) + 0.5 * stats.e_log_u[i]
            - 0.5 * coordinate_residual(stats, &theta, i) / s2;
    }
    for j in 0..k {
        let dx = params.delta_x[j];
        q += -0.5 * n * LN_2PI + 0.5 * stats.e_log_v[j]
            - 0.5 * (stats.e_vxx[j] - 2.0 * dx * stats.e_x[j] + dx * dx * stats.e_v_inv[j]);
    }
    q
}

/// Gradient block of `Q` with respect to `W` divided by `1/sigma2`:
/// row `i` is `E[u_i y_i x] - mu_i E[u_i x] - delta_i E[x] - w_i E[u_i x^T x]`.
pub fn w_gradient(stats: &IntegralSet, params: &ModelParams) -> DMatrix<f64> {
    let (d, k) = params.w.shape();
    DMatrix::from_fn(d, k, |i, j| {
        let mut v = stats.e_uyx[(i, j)]
            - params.mu[i] * stats.e_ux[(i, j)]
            - params.delta_eps[i] * stats.e_x[j];
        for c in 0..k {
            v -= params.w[(i, c)] * stats.e_uxx[i][(c, j)];
        }
        v
    })
}

fn solve_spd_or_pinv(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let svd = a.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    svd.solve(b, tol)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Maximizes `Q` over the free parameter blocks given the E-step statistics.
/// Fixed blocks keep their values from `params`.
pub fn maximize(
    stats: &IntegralSet,
    params: &ModelParams,
    free: FreeParams,
) -> Result<ModelParams> {
    let (d, k) = params.w.shape();
    let mut out = params.clone();
    let free_idx: Vec<usize> = (0..k + 2)
        .filter(|&r| match r {
            0 => free.mu,
            1 => free.delta_eps,
            _ => free.w,
        })
        .collect();
    let mut residual = 0.0;
    for i in 0..d {
        let (g, b) = stats.normal_equations(i);
        let mut theta = coordinate_params(params, i);
        if !free_idx.is_empty() {
            let fixed_idx: Vec<usize> = (0..k + 2).filter(|r| !free_idx.contains(r)).collect();
            let g_ff = g.select_rows(&free_idx).select_columns(&free_idx);
            let mut rhs = b.select_rows(&free_idx);
            if !fixed_idx.is_empty() {
                let g_fx = g.select_rows(&free_idx).select_columns(&fixed_idx);
                rhs -= g_fx * theta.select_rows(&fixed_idx);
            }
            let solved = solve_spd_or_pinv(&g_ff, &rhs)?;
            for (slot, &r) in free_idx.iter().enumerate() {
                theta[r] = solved[slot];
            }
        }
        out.mu[i] = theta[0];
        out.delta_eps[i] = theta[1];
        for j in 0..k {
            out.w[(i, j)] = theta[2 + j];
        }
        residual += stats.e_uyy[i] - 2.0 * theta.dot(&b) + theta.dot(&(&g * &theta));
    }
    if free.sigma2 {
        let s2 = residual / (stats.total * d as f64);
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::NonPositiveScale(s2));
        }
        out.sigma2 = s2;
    }
    if free.delta_x {
        for j in 0..k {
            out.delta_x[j] = stats.e_x[j] / stats.e_v_inv[j];
        }
    }
    Ok(out)
}

/// E-step statistics at `params`.
pub fn integral_set(
    data: &DataSet,
    params: &ModelParams,
    grid: &QuadratureGrid,
) -> Result<IntegralSet> {
    let table = MixingTable::new(&params.nu_eps, &params.nu_x, grid)?;
    integral_set_with(data, params, &table)
}

pub fn integral_set_with(
    data: &DataSet,
    params: &ModelParams,
    table: &MixingTable,
) -> Result<IntegralSet> {
    let (sums, _) = run(data, params, table, Mode::Moments)?;
    Ok(IntegralSet::from_sums(
        &sums,
        table,
        params.dim(),
        params.latent_dim(),
    ))
}

/// `Q(params, params_star)`: the E-step at `params` evaluated at `params_star`.
pub fn e_step_q(
    data: &DataSet,
    params: &ModelParams,
    params_star: &ModelParams,
    grid: &QuadratureGrid,
) -> Result<f64> {
    Ok(q_value(&integral_set(data, params, grid)?, params_star))
}

/// One EM update of the blocks that `kind` leaves free.
pub fn m_step(
    data: &DataSet,
    params: &ModelParams,
    kind: ModelKind,
    grid: &QuadratureGrid,
) -> Result<ModelParams> {
    let stats = integral_set(data, params, grid)?;
    maximize(&stats, params, FreeParams::for_kind(kind))
}

/// Observed-data log-likelihood.
pub fn log_likelihood(data: &DataSet, params: &ModelParams, grid: &QuadratureGrid) -> Result<f64> {
    let table = MixingTable::new(&params.nu_eps, &params.nu_x, grid)?;
    log_likelihood_with(data, params, &table)
}

pub fn log_likelihood_with(
    data: &DataSet,
    params: &ModelParams,
    table: &MixingTable,
) -> Result<f64> {
    Ok(run(data, params, table, Mode::LogLik)?.0.loglik)
}

/// Log marginal density of every row, in row order.
pub fn row_log_likelihoods(
    data: &DataSet,
    params: &ModelParams,
    table: &MixingTable,
) -> Result<Vec<f64>> {
    Ok(run(data, params, table, Mode::LogLik)?.1)
}

/// Warm start from the median-imputed data: a location and scatter matrix,
/// its principal axes for the loadings and the mean discarded eigenvalue for
/// the noise scale. Skewness starts at zero.
///
/// With all degrees of freedom infinite the location is the column median
/// and the scatter the second moment about it. Otherwise both are the
/// multivariate-t maximum-likelihood estimates at the smallest degree of
/// freedom, which stay finite when the sample covariance is dominated by a
/// few extreme rows.
pub fn initial_params(
    data: &DataSet,
    k: usize,
    nu_eps: DVector<f64>,
    nu_x: DVector<f64>,
) -> Result<ModelParams> {
    let d = data.d();
    if k == 0 || k > d {
        return Err(Error::DimensionMismatch(format!(
            "latent dimension {k} for {d} columns"
        )));
    }
    let medians = data.observed_medians();
    let y = data.imputed(&medians);
    let tail = nu_eps
        .iter()
        .chain(nu_x.iter())
        .copied()
        .fold(f64::INFINITY, f64::min);
    let (mu, cov) = if tail.is_finite() {
        t_scatter(&y, medians, tail)
    } else {
        let centered = DMatrix::from_fn(data.n(), d, |t, i| y[(t, i)] - medians[i]);
        (medians, centered.transpose() * &centered / data.n() as f64)
    };
    let (vals, vecs) = crate::covariance::eigendecompose(&(0.5 * (&cov + cov.transpose())))?;
    let scale = vals[0].max(f64::MIN_POSITIVE);
    let sigma2 = if k < d {
        (vals.rows(k, d - k).sum() / (d - k) as f64).max(1e-6 * scale)
    } else {
        1e-3 * scale
    };
    let w = DMatrix::from_fn(d, k, |i, j| {
        vecs[(i, j)] * (vals[j] - sigma2).max(1e-3 * scale).sqrt()
    });
    Ok(ModelParams::new(w, mu, sigma2, nu_eps, nu_x))
}

/// Location and scatter of a multivariate t with `nu` degrees of freedom by
/// the reweighting fixed point, started from `start` and the second moment
/// about it.
fn t_scatter(y: &DMatrix<f64>, start: DVector<f64>, nu: f64) -> (DVector<f64>, DMatrix<f64>) {
    const MAX_ITER: usize = 200;
    const TOL: f64 = 1e-8;
    let (n, d) = y.shape();
    let mut mu = start;
    let centered = DMatrix::from_fn(n, d, |t, i| y[(t, i)] - mu[i]);
    let mut scatter = centered.transpose() * &centered / n as f64;
    for _ in 0..MAX_ITER {
        let Some(chol) = scatter.clone().cholesky() else {
            break;
        };
        let inv = chol.inverse();
        let mut weights = Vec::with_capacity(n);
        for t in 0..n {
            let r = y.row(t).transpose() - &mu;
            let dist = (r.transpose() * &inv * &r)[(0, 0)];
            weights.push((nu + d as f64) / (nu + dist));
        }
        let total: f64 = weights.iter().sum();
        let next_mu = DVector::from_fn(d, |i, _| {
            (0..n).map(|t| weights[t] * y[(t, i)]).sum::<f64>() / total
        });
        let mut next = DMatrix::zeros(d, d);
        for t in 0..n {
            let r = y.row(t).transpose() - &next_mu;
            next += weights[t] * &r * r.transpose();
        }
        next /= n as f64;
        let change = (&next - &scatter).norm() / scatter.norm();
        mu = next_mu;
        scatter = next;
        if change < TOL {
            break;
        }
    }
    (mu, scatter)
}

/// Outcome of [`iterate`].
#[derive(Debug, Clone)]
pub struct EmRun {
    /// Last evaluated point if converged, otherwise the last update.
    pub params: ModelParams,
    /// Log-likelihood at every evaluated point that was kept.
    pub trace: Vec<f64>,
    /// Number of map evaluations.
    pub iterations: usize,
    pub converged: bool,
}

/// Drives a fixed-point map `step`, which returns the log-likelihood at its
/// argument and the next iterate, until the relative log-likelihood change
/// falls below `config.rel_tol`.
///
/// With `config.accelerate`, every two plain steps are followed by a
/// squared extrapolation over the `free` blocks (steplength `-|r| / |v|`,
/// capped below at `-1`). The extrapolated point is kept only if it is valid
/// and its log-likelihood is at least that of the last plain step, so the
/// trace stays non-decreasing whenever the plain map is monotone.
pub fn iterate<F, V>(
    init: &ModelParams,
    free: FreeParams,
    config: &EmConfig,
    mut step: F,
    valid: V,
) -> Result<EmRun>
where
    F: FnMut(&ModelParams) -> Result<(f64, ModelParams)>,
    V: Fn(&ModelParams) -> bool,
{
    let mut trace: Vec<f64> = Vec::new();
    let mut evaluations = 0;
    let max_iter = config.max_iter.max(1);
    // Appends `ll`, returning whether the run has converged.
    let record = |trace: &mut Vec<f64>, ll: f64, evaluations: usize| -> Result<bool> {
        let converged = match trace.last() {
            Some(&prev) => {
                if ll < prev - config.monotone_slack * prev.abs() {
                    return Err(Error::NonMonotone {
                        iteration: evaluations,
                        previous: prev,
                        current: ll,
                    });
                }
                (ll - prev).abs() <= config.rel_tol * prev.abs()
            }
            None => false,
        };
        trace.push(ll);
        Ok(converged)
    };
    let done = |params: ModelParams, trace: Vec<f64>, iterations: usize, converged: bool| EmRun {
        params,
        trace,
        iterations,
        converged,
    };
    let mut current = init.clone();
    while evaluations < max_iter {
        let (ll0, p1) = step(&current)?;
        evaluations += 1;
        if record(&mut trace, ll0, evaluations)? {
            return Ok(done(current, trace, evaluations, true));
        }
        if !config.accelerate || evaluations >= max_iter {
            current = p1;
            continue;
        }
        let (ll1, p2) = step(&p1)?;
        evaluations += 1;
        if record(&mut trace, ll1, evaluations)? {
            return Ok(done(p1, trace, evaluations, true));
        }
        let theta0 = pack(&current, free);
        let theta1 = pack(&p1, free);
        let theta2 = pack(&p2, free);
        let r: Vec<f64> = theta1.iter().zip(&theta0).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = (0..r.len()).map(|i| theta2[i] - theta1[i] - r[i]).collect();
        let (rn, vn) = (norm(&r), norm(&v));
        current = p2;
        if !(vn > 0.0) || evaluations >= max_iter {
            continue;
        }
        let alpha = (-rn / vn).min(-1.0);
        let extrapolated: Vec<f64> = (0..r.len())
            .map(|i| theta0[i] - 2.0 * alpha * r[i] + alpha * alpha * v[i])
            .collect();
        let candidate = unpack(&current, free, &extrapolated);
        if !(candidate.sigma2 > 0.0)
            || candidate.flatten().iter().any(|x| !x.is_finite())
            || !valid(&candidate)
        {
            continue;
        }
        let Ok((ll_e, p_e)) = step(&candidate) else {
            evaluations += 1;
            continue;
        };
        evaluations += 1;
        if ll_e.is_finite() && ll_e >= ll1 {
            if record(&mut trace, ll_e, evaluations)? {
                return Ok(done(candidate, trace, evaluations, true));
            }
            current = p_e;
        }
    }
    Ok(done(current, trace, evaluations, false))
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// EM with the free blocks implied by `kind`.
pub fn fit(
    data: &DataSet,
    kind: ModelKind,
    init: &ModelParams,
    config: &EmConfig,
) -> Result<FitResult> {
    fit_free(data, kind, init, FreeParams::for_kind(kind), config)
}

/// EM with explicitly chosen free blocks. `kind` is used for validation and
/// the covariance report.
pub fn fit_free(
    data: &DataSet,
    kind: ModelKind,
    init: &ModelParams,
    free: FreeParams,
    config: &EmConfig,
) -> Result<FitResult> {
    if kind == ModelKind::StudentTPPCA {
        return Err(Error::Unsupported(
            "classical Student-t PPCA shares one mixing variable; use the baseline estimator"
                .into(),
        ));
    }
    validate(init, kind)?;
    let grid = config.grid()?;
    let table = MixingTable::new(&init.nu_eps, &init.nu_x, &grid)?;
    let run = iterate(
        init,
        free,
        config,
        |p| {
            let stats = integral_set_with(data, p, &table)?;
            let next = maximize(&stats, p, free)?;
            Ok((stats.loglik, next))
        },
        |p| validate(p, kind).is_ok(),
    )?;
    let mut trace = run.trace;
    let params = run.params;
    if !run.converged {
        // Report the likelihood of the returned parameters.
        trace.push(log_likelihood_with(data, &params, &table)?);
    }
    let (iterations, converged) = (run.iterations, run.converged);
    let covariance = model_covariance(&params, kind)?;
    Ok(FitResult {
        params,
        kind,
        loglik_trace: trace,
        iterations,
        converged,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::log_m_function;
    use crate::quadrature::build_grid;
    use approx::assert_relative_eq;
    use nalgebra::{dmatrix, dvector};

    fn toy_data() -> DataSet {
        let rows = vec![
            vec![Some(0.3), Some(-1.2), Some(0.8)],
            vec![Some(1.5), None, Some(0.1)],
            vec![Some(-0.4), Some(0.9), None],
            vec![Some(2.2), Some(1.1), Some(-0.7)],
            vec![None, Some(0.2), Some(0.4)],
        ];
        DataSet::from_rows(&rows).unwrap()
    }

    fn toy_params() -> ModelParams {
        ModelParams::new(
            dmatrix![0.3, 1.0; 1.23, 0.8; 0.021, 0.98],
            dvector![0.1, -0.2, 0.3],
            0.4,
            dvector![4.0, 100.0, 4.0],
            dvector![5.0, 10.0],
        )
        .with_skew(dvector![0.2, 0.0, -0.4], dvector![0.5, -0.1])
    }

    #[test]
    fn loglik_matches_reference_integrand() {
        let data = toy_data();
        let p = toy_params();
        let grid = build_grid(8).unwrap();
        let fast = row_log_likelihoods(
            &data,
            &p,
            &MixingTable::new(&p.nu_eps, &p.nu_x, &grid).unwrap(),
        )
        .unwrap();
        for t in 0..data.n() {
            let y = data.y().row(t).transpose();
            let mut total = 0.0;
            for (a, &se) in grid.nodes_eps.iter().enumerate() {
                for (b, &sx) in grid.nodes_x.iter().enumerate() {
                    let lm = log_m_function(&p, &y, data.row_mask(t), se, sx).unwrap();
                    total += grid.weights_eps[a] * grid.weights_x[b] * lm.exp();
                }
            }
            assert_relative_eq!(fast[t], total.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn gaussian_kind_uses_one_node() {
        let p = ModelParams::gaussian(dmatrix![1.0; 0.5], dvector![0.0, 0.0], 0.3);
        let table = MixingTable::new(&p.nu_eps, &p.nu_x, &build_grid(32).unwrap()).unwrap();
        assert_eq!(table.node_count(), 1);
        let data = DataSet::complete(dmatrix![0.5, -0.1; 1.0, 2.0]).unwrap();
        let c = p.w.clone() * p.w.transpose() + DMatrix::identity(2, 2) * 0.3;
        let ci = c.clone().try_inverse().unwrap();
        let expected: f64 = (0..2)
            .map(|t| {
                let y = data.y().row(t).transpose();
                -0.5 * (2.0 * LN_2PI + c.determinant().ln() + (y.transpose() * &ci * &y)[(0, 0)])
            })
            .sum();
        assert_relative_eq!(
            log_likelihood(&data, &p, &build_grid(32).unwrap()).unwrap(),
            expected,
            epsilon = 1e-12
        );
    }

    #[test]
    fn univariate_student_t() {
        // d = 1, k = 1, W = 0: the row density is a Student-t with scale sigma.
        let nu = 5.0;
        let mut p = ModelParams::new(
            dmatrix![0.0],
            dvector![0.7],
            2.0,
            dvector![nu],
            dvector![f64::INFINITY],
        );
        p.w[(0, 0)] = 0.0;
        let y = 1.9;
        let data = DataSet::complete(dmatrix![y]).unwrap();
        let grid = build_smoothed_grid(64, 5).unwrap();
        let ll = log_likelihood(&data, &p, &grid).unwrap();
        let z = (y - 0.7) / p.sigma2.sqrt();
        let ln_t = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - (nu + 1.0) / 2.0 * (1.0 + z * z / nu).ln()
            - 0.5 * p.sigma2.ln();
        assert_relative_eq!(ll, ln_t, max_relative = 1e-6);
    }

    #[test]
    fn maximize_zeroes_gradients() {
        let data = toy_data();
        let p = toy_params();
        let grid = build_grid(6).unwrap();
        let stats = integral_set(&data, &p, &grid).unwrap();
        let star = maximize(&stats, &p, FreeParams::ALL).unwrap();
        let q0 = q_value(&stats, &star);
        let grad = w_gradient(&stats, &star);
        assert!(grad.norm() < 1e-9 * stats.e_uyx.norm().max(1.0), "{grad}");
        // Perturbing any scalar parameter lowers Q.
        for h in [1e-3, -1e-3] {
            let mut q = star.clone();
            q.sigma2 *= 1.0 + h;
            assert!(q_value(&stats, &q) < q0);
            let mut q = star.clone();
            q.delta_x[1] += h;
            assert!(q_value(&stats, &q) < q0);
            let mut q = star.clone();
            q.mu[2] += h;
            assert!(q_value(&stats, &q) < q0);
        }
        assert!(q0 >= q_value(&stats, &p));
    }

    #[test]
    fn zero_skew_is_a_fixed_point() {
        let data = toy_data();
        let p = toy_params().with_skew(DVector::zeros(3), DVector::zeros(2));
        let out = m_step(&data, &p, ModelKind::GroupedT, &build_grid(6).unwrap()).unwrap();
        assert!(out.delta_eps.amax() == 0.0 && out.delta_x.amax() == 0.0);
    }

    #[test]
    fn fit_trace_is_monotone() {
        let data = toy_data();
        let init = toy_params();
        let config = EmConfig {
            grid_n: 6,
            max_iter: 30,
            rel_tol: 1e-12,
            ..EmConfig::default()
        };
        let fit = fit(&data, ModelKind::GStGeneral, &init, &config).unwrap();
        for pair in fit.loglik_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-9 * pair[0].abs(), "{pair:?}");
        }
    }

    #[test]
    fn student_baseline_kind_is_rejected() {
        let p = toy_params()
            .with_skew(DVector::zeros(3), DVector::zeros(2))
            .with_nu(DVector::from_element(3, 4.0), DVector::from_element(2, 4.0));
        assert!(matches!(
            fit(
                &toy_data(),
                ModelKind::StudentTPPCA,
                &p,
                &EmConfig::default()
            ),
            Err(Error::Unsupported(_))
        ));
    }
}

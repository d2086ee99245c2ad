//! Tensor-product Gauss-Legendre rules on the open unit square.
//!
//! The mixing maps blow up at `s -> 1` (and their inverses at `s -> 0`), so
//! only open rules are used. [`build_smoothed_grid`] additionally composes the
//! rule with a sigmoidal change of variables that flattens algebraic and
//! logarithmic endpoint singularities.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Nodes and weights of an `n`-point rule per axis on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes_eps: Vec<f64>,
    pub weights_eps: Vec<f64>,
    pub nodes_x: Vec<f64>,
    pub weights_x: Vec<f64>,
    pub n: usize,
    /// `1 - s` for each node, kept separately because nodes may lie within
    /// rounding distance of one.
    pub complements: Vec<f64>,
}

/// One axis of a rule: nodes, their complements and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRule {
    pub nodes: Vec<f64>,
    pub complements: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x = 0.0;
            dp = 1.0;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped affinely to `(0, 1)`; weights sum to one.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    (
        x.iter().map(|t| 0.5 * (1.0 + t)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Gauss-Legendre in `t` after the substitution
/// `s = t^m / (t^m + (1 - t)^m)`, which clusters nodes at both ends.
/// `m = 1` is the plain affine rule. Weights are renormalized to sum to one.
pub fn smoothed_unit_rule(n: usize, m: u32) -> UnitRule {
    let (x, w) = gauss_legendre(n);
    let mf = m.max(1) as f64;
    let mut rule = UnitRule {
        nodes: Vec::with_capacity(n),
        complements: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
    };
    for (&x, &w) in x.iter().zip(&w) {
        // t and 1 - t without cancellation.
        let (t, t_c) = (0.5 * (1.0 + x), 0.5 * (1.0 - x));
        let a = t.powf(mf);
        let b = t_c.powf(mf);
        // ds/dt = m t^(m-1) (1-t)^(m-1) / (t^m + (1-t)^m)^2
        let ds = mf * (t * t_c).powf(mf - 1.0) / ((a + b) * (a + b));
        rule.nodes.push(a / (a + b));
        rule.complements.push(b / (a + b));
        rule.weights.push(0.5 * w * ds);
    }
    let total: f64 = rule.weights.iter().sum();
    rule.weights.iter_mut().for_each(|w| *w /= total);
    rule
}

/// Affine Gauss-Legendre grid with `n` nodes per axis.
pub fn build_grid(n: usize) -> Result<QuadratureGrid> {
    build_smoothed_grid(n, 1)
}

/// Grid from [`smoothed_unit_rule`] on both axes.
pub fn build_smoothed_grid(n: usize, m: u32) -> Result<QuadratureGrid> {
    if n == 0 {
        return Err(Error::InvalidInput(
            "quadrature needs at least one node".into(),
        ));
    }
    let rule = smoothed_unit_rule(n, m);
    Ok(QuadratureGrid {
        nodes_eps: rule.nodes.clone(),
        weights_eps: rule.weights.clone(),
        nodes_x: rule.nodes,
        weights_x: rule.weights,
        n,
        complements: rule.complements,
    })
}

/// Tensor-product sum of `f` over the grid.
pub fn integrate_unit_square<F>(f: F, grid: &QuadratureGrid) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let mut total = 0.0;
    for (&se, &we) in grid.nodes_eps.iter().zip(&grid.weights_eps) {
        for (&sx, &wx) in grid.nodes_x.iter().zip(&grid.weights_x) {
            let value = f(se, sx);
            if !value.is_finite() {
                return Err(Error::NonFiniteIntegrand { s_eps: se, s_x: sx });
            }
            total += we * wx * value;
        }
    }
    Ok(total)
}

/// Entrywise analogue of [`integrate_unit_square`].
pub fn integrate_matrix_unit_square<F>(f: F, grid: &QuadratureGrid) -> Result<DMatrix<f64>>
where
    F: Fn(f64, f64) -> DMatrix<f64>,
{
    let mut total: Option<DMatrix<f64>> = None;
    for (&se, &we) in grid.nodes_eps.iter().zip(&grid.weights_eps) {
        for (&sx, &wx) in grid.nodes_x.iter().zip(&grid.weights_x) {
            let value = f(se, sx);
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteIntegrand { s_eps: se, s_x: sx });
            }
            match total.as_mut() {
                Some(t) => {
                    if t.shape() != value.shape() {
                        return Err(Error::DimensionMismatch("integrand changed shape".into()));
                    }
                    *t += value * (we * wx);
                }
                None => total = Some(value * (we * wx)),
            }
        }
    }
    total.ok_or_else(|| Error::InvalidInput("empty grid".into()))
}

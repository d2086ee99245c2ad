//! Model-implied mean and covariance of an observation and the spectral
//! summaries reported for fitted models.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{smoothed_unit_rule, UnitRule};
use crate::special::{inv_mixing_moments, mixing_value_split};
use crate::types::{ModelKind, ModelParams};

const MOMENT_NODES: usize = 256;
const MOMENT_SMOOTHING: u32 = 8;

/// Mean, covariance and eigen-summary of a model. Moments that do not exist
/// for the given degrees of freedom are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub mean: Option<Vec<f64>>,
    pub cov: Option<Vec<Vec<f64>>>,
    pub eigvals: Option<Vec<f64>>,
    /// Eigenvectors as columns, stored row-major.
    pub eigvecs: Option<Vec<Vec<f64>>>,
    pub left_singular_w: Vec<Vec<f64>>,
}

impl CovarianceReport {
    pub fn is_defined(&self) -> bool {
        self.cov.is_some()
    }

    pub fn cov_matrix(&self) -> Option<DMatrix<f64>> {
        self.cov.as_ref().map(|c| rows_to_matrix(c))
    }

    pub fn eigvecs_matrix(&self) -> Option<DMatrix<f64>> {
        self.eigvecs.as_ref().map(|c| rows_to_matrix(c))
    }

    pub fn eigvals_vector(&self) -> Option<DVector<f64>> {
        self.eigvals.as_ref().map(|v| DVector::from_column_slice(v))
    }

    pub fn mean_vector(&self) -> Option<DVector<f64>> {
        self.mean.as_ref().map(|v| DVector::from_column_slice(v))
    }
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let ncols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

/// Mean and covariance of the inverse mixing vector `(1/T_1(S), ..., 1/T_n(S))`
/// for co-monotone entries driven by one uniform `S`.
///
/// Returns `None` for the mean if any `nu <= 2`. Covariance entries are only
/// required where `needed(i, j)` holds; they are `None` when such an entry is
/// infinite.
pub fn inverse_mixing_moments<F>(
    nu: &DVector<f64>,
    needed: F,
) -> (Option<DVector<f64>>, Option<DMatrix<f64>>)
where
    F: Fn(usize, usize) -> bool,
{
    let n = nu.len();
    let means: Option<Vec<f64>> = nu.iter().map(|&v| inv_mixing_moments(v).mean).collect();
    let Some(means) = means else {
        return (None, None);
    };
    let mean = DVector::from_vec(means);
    let mut cov = DMatrix::zeros(n, n);
    let mut rule: Option<UnitRule> = None;
    for i in 0..n {
        for j in i..n {
            if !needed(i, j) || nu[i].is_infinite() || nu[j].is_infinite() {
                continue;
            }
            let value = if nu[i] == nu[j] {
                match inv_mixing_moments(nu[i]).variance {
                    Some(v) => v,
                    None => return (Some(mean), None),
                }
            } else {
                // Integrable at s -> 0 iff 2/nu_i + 2/nu_j < 1.
                if 2.0 / nu[i] + 2.0 / nu[j] >= 1.0 {
                    return (Some(mean), None);
                }
                let r =
                    rule.get_or_insert_with(|| smoothed_unit_rule(MOMENT_NODES, MOMENT_SMOOTHING));
                let second: f64 = (0..r.nodes.len())
                    .map(|q| {
                        let (s, c) = (r.nodes[q], r.complements[q]);
                        let a = mixing_value_split(nu[i], s, c).expect("open-rule node");
                        let b = mixing_value_split(nu[j], s, c).expect("open-rule node");
                        r.weights[q] / (a * b)
                    })
                    .sum();
                second - mean[i] * mean[j]
            };
            cov[(i, j)] = value;
            cov[(j, i)] = value;
        }
    }
    (Some(mean), Some(cov))
}

/// Model-implied moments and eigendecomposition of `Cov[Y]`.
pub fn model_covariance(params: &ModelParams, kind: ModelKind) -> Result<CovarianceReport> {
    params.check_shapes()?;
    let w = &params.w;
    let (d, k) = w.shape();
    let svd = w.clone().svd(true, false);
    let mut left = svd.u.expect("requested U");
    // Order by singular value and fix signs for reproducibility.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    left = DMatrix::from_fn(d, k, |i, c| left[(i, order[c])]);
    canonical_signs(&mut left);

    let moments = match kind {
        ModelKind::StudentTPPCA => shared_mixing_moments(params),
        _ => independent_mixing_moments(params),
    };
    let mut report = CovarianceReport {
        mean: None,
        cov: None,
        eigvals: None,
        eigvecs: None,
        left_singular_w: matrix_to_rows(&left),
    };
    if let Some((mean, cov)) = moments {
        report.mean = Some(mean.iter().copied().collect());
        if let Some(cov) = cov {
            let (vals, vecs) = eigendecompose(&cov)?;
            report.eigvals = Some(vals.iter().copied().collect());
            report.eigvecs = Some(matrix_to_rows(&vecs));
            report.cov = Some(matrix_to_rows(&cov));
        }
    }
    Ok(report)
}

type Moments = Option<(DVector<f64>, Option<DMatrix<f64>>)>;

fn independent_mixing_moments(p: &ModelParams) -> Moments {
    let (mean_b, cov_b) =
        inverse_mixing_moments(&p.nu_eps, |i, j| p.delta_eps[i] * p.delta_eps[j] != 0.0);
    let (mean_a, cov_a) =
        inverse_mixing_moments(&p.nu_x, |i, j| p.delta_x[i] * p.delta_x[j] != 0.0);
    let (mean_a, mean_b) = (mean_a?, mean_b?);
    let ex = p.delta_x.component_mul(&mean_a);
    let eeps = p.delta_eps.component_mul(&mean_b);
    let mean = &p.mu + &p.w * ex + eeps;
    let cov = match (cov_a, cov_b) {
        (Some(cov_a), Some(cov_b)) => {
            let cov_x = DMatrix::from_diagonal(&mean_a)
                + (&p.delta_x * p.delta_x.transpose()).component_mul(&cov_a);
            let cov_eps = DMatrix::from_diagonal(&(mean_b * p.sigma2))
                + (&p.delta_eps * p.delta_eps.transpose()).component_mul(&cov_b);
            let c = &p.w * cov_x * p.w.transpose() + cov_eps;
            Some(0.5 * (&c + c.transpose()))
        }
        _ => None,
    };
    Some((mean, cov))
}

fn shared_mixing_moments(p: &ModelParams) -> Moments {
    let nu = p.nu_eps[0];
    let scale = inv_mixing_moments(nu).mean?;
    let d = p.dim();
    let c = (&p.w * p.w.transpose() + DMatrix::identity(d, d) * p.sigma2) * scale;
    Some((p.mu.clone(), Some(c)))
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn canonical_signs(vecs: &mut DMatrix<f64>) {
    for mut col in vecs.column_iter_mut() {
        let pivot = col.iter().copied().fold(
            0.0_f64,
            |best, v| if v.abs() > best.abs() { v } else { best },
        );
        if pivot < 0.0 {
            col.neg_mut();
        }
    }
}

/// Descending eigenvalues and orthonormal eigenvectors (columns) of a
/// symmetric matrix, each vector signed so its largest-magnitude entry is
/// positive.
pub fn eigendecompose(cov: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !cov.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} is not square",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let scale = cov.amax().max(1.0);
    if (cov - cov.transpose()).amax() > 1e-8 * scale {
        return Err(Error::InvalidInput("matrix is not symmetric".into()));
    }
    let sym = 0.5 * (cov + cov.transpose());
    let eig = SymmetricEigen::new(sym);
    let n = cov.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let mut vecs = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    canonical_signs(&mut vecs);
    Ok((vals, vecs))
}

/// Share of total variance per eigenvalue and the ratios `lambda_1 / lambda_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceProportions {
    pub share: Vec<f64>,
    pub ratio_to_first: Vec<f64>,
}

pub fn proportion_of_variance(eigvals: &DVector<f64>) -> Result<VarianceProportions> {
    let total: f64 = eigvals.iter().sum();
    let max = eigvals.amax();
    if !(total > 0.0) {
        return Err(Error::InvalidInput("spectrum is identically zero".into()));
    }
    if eigvals.iter().any(|&l| l < -1e-12 * max) {
        return Err(Error::InvalidInput("negative eigenvalue".into()));
    }
    let first = eigvals[0];
    Ok(VarianceProportions {
        share: eigvals.iter().map(|l| l / total).collect(),
        ratio_to_first: eigvals.iter().map(|&l| first / l).collect(),
    })
}

/// Largest principal angle in radians between the column spaces of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = a.clone().qr().q();
    let qb = b.clone().qr().q();
    let s = (qa.transpose() * qb).singular_values();
    let smallest = s
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .clamp(-1.0, 1.0);
    smallest.acos()
}

//! Influence-function diagnostics of the maximum-likelihood estimators.
//!
//! Scores and Hessians are finite differences of the quadrature log-density
//! with the node set held fixed, so the differentiated function is smooth in
//! the parameters. The influence of row `y` is `-H^+ score(y)`, where `H` is
//! the mean Hessian over a sample and `H^+` its pseudo-inverse: in models
//! whose latent law is rotation invariant the loadings are identified only up
//! to rotation and `H` is singular along that orbit.
//!
//! Parameters are flattened as `sigma2`, then `W` row by row, then `mu`,
//! `delta_eps` and `delta_x`, keeping only the selected blocks.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_row_log_densities, fit_gaussian_ppca, fit_student_t_ppca};
use crate::em::{fit, initial_params, row_log_likelihoods, EmConfig, MixingTable};
use crate::error::{Error, Result};
use crate::simulate::{row_rng, simulate, SimSpec};
use crate::types::{pack, unpack, validate, DataSet, FreeParams, ModelKind, ModelParams};

const SCORE_STEP: f64 = 1e-5;
const HESSIAN_STEP: f64 = 1e-4;
/// Singular values below this fraction of the largest are treated as zero.
const PINV_RTOL: f64 = 1e-7;
const PURPOSE_REPLICATION: u64 = 3;

/// Parameters retained by the influence analysis.
pub const SIGMA2_AND_W: FreeParams = FreeParams {
    w: true,
    mu: false,
    sigma2: true,
    delta_eps: false,
    delta_x: false,
};

/// Names of the selected parameters in flattening order (1-based indices).
pub fn parameter_labels(params: &ModelParams, sel: FreeParams) -> Vec<String> {
    let (d, k) = params.w.shape();
    let mut out = Vec::new();
    if sel.sigma2 {
        out.push("sigma2".to_string());
    }
    if sel.w {
        for i in 0..d {
            for j in 0..k {
                out.push(format!("w[{},{}]", i + 1, j + 1));
            }
        }
    }
    if sel.mu {
        out.extend((0..d).map(|i| format!("mu[{}]", i + 1)));
    }
    if sel.delta_eps {
        out.extend((0..d).map(|i| format!("delta_eps[{}]", i + 1)));
    }
    if sel.delta_x {
        out.extend((0..k).map(|j| format!("delta_x[{}]", j + 1)));
    }
    out
}

/// Per-row log-density of one model kind: closed form for the classical
/// baselines, fixed-node quadrature otherwise.
#[derive(Debug, Clone)]
pub struct RowDensity {
    kind: ModelKind,
    table: Option<MixingTable>,
}

impl RowDensity {
    pub fn new(params: &ModelParams, kind: ModelKind, config: &EmConfig) -> Result<Self> {
        validate(params, kind)?;
        let table = match kind {
            ModelKind::GaussianPPCA | ModelKind::StudentTPPCA => None,
            _ => Some(MixingTable::new(
                &params.nu_eps,
                &params.nu_x,
                &config.grid()?,
            )?),
        };
        Ok(Self { kind, table })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Log-density of every row. Degrees of freedom are those the evaluator
    /// was built with.
    pub fn rows(&self, data: &DataSet, params: &ModelParams) -> Result<Vec<f64>> {
        if !(params.sigma2 > 0.0) {
            return Err(Error::NonPositiveScale(params.sigma2));
        }
        let out = match &self.table {
            None => baseline_row_log_densities(data, params, self.kind)?,
            Some(table) => row_log_likelihoods(data, params, table)?,
        };
        if let Some(t) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::ZeroDensity { row: t });
        }
        Ok(out)
    }

    fn total(&self, data: &DataSet, params: &ModelParams) -> Result<f64> {
        Ok(self.rows(data, params)?.iter().sum())
    }
}

fn step(theta: f64, scale: f64) -> f64 {
    scale * (1.0 + theta.abs())
}

/// `N x p` matrix of per-row scores by central differences with step
/// `1e-5 (1 + |theta|)`.
pub fn score_matrix(
    data: &DataSet,
    params: &ModelParams,
    sel: FreeParams,
    density: &RowDensity,
) -> Result<DMatrix<f64>> {
    score_matrix_with_step(data, params, sel, density, SCORE_STEP)
}

/// [`score_matrix`] with a custom relative step.
pub fn score_matrix_with_step(
    data: &DataSet,
    params: &ModelParams,
    sel: FreeParams,
    density: &RowDensity,
    rel_step: f64,
) -> Result<DMatrix<f64>> {
    let theta = pack(params, sel);
    let columns = (0..theta.len())
        .into_par_iter()
        .map(|j| {
            let h = step(theta[j], rel_step);
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus[j] += h;
            minus[j] -= h;
            let lp = density.rows(data, &unpack(params, sel, &plus))?;
            let lm = density.rows(data, &unpack(params, sel, &minus))?;
            Ok(lp
                .iter()
                .zip(&lm)
                .map(|(a, b)| (a - b) / (2.0 * h))
                .collect::<Vec<f64>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DMatrix::from_fn(data.n(), theta.len(), |t, j| {
        columns[j][t]
    }))
}

/// Score of a single row.
pub fn score(
    y: &DataSet,
    params: &ModelParams,
    sel: FreeParams,
    density: &RowDensity,
) -> Result<DVector<f64>> {
    if y.n() != 1 {
        return Err(Error::InvalidInput(format!(
            "expected one row, got {}",
            y.n()
        )));
    }
    Ok(score_matrix(y, params, sel, density)?.row(0).transpose())
}

/// Mean Hessian of the row log-density over a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedHessian {
    pub matrix: DMatrix<f64>,
    /// Whether `-matrix` is positive definite. A `false` flag is a
    /// diagnostic, e.g. for loadings identified only up to rotation.
    pub negative_definite: bool,
}

/// Mean over rows of finite-difference Hessians with step `1e-4 (1 + |theta|)`,
/// symmetrized.
pub fn expected_hessian(
    sample: &DataSet,
    params: &ModelParams,
    sel: FreeParams,
    density: &RowDensity,
) -> Result<ExpectedHessian> {
    let theta = pack(params, sel);
    let p = theta.len();
    let h: Vec<f64> = theta.iter().map(|&t| step(t, HESSIAN_STEP)).collect();
    let eval = |shifts: &[(usize, f64)]| -> Result<f64> {
        let mut th = theta.clone();
        for &(j, s) in shifts {
            th[j] += s * h[j];
        }
        density.total(sample, &unpack(params, sel, &th))
    };
    let centre = density.total(sample, params)?;
    let pairs: Vec<(usize, usize)> = (0..p).flat_map(|i| (i..p).map(move |j| (i, j))).collect();
    let entries = pairs
        .par_iter()
        .map(|&(i, j)| {
            if i == j {
                let fp = eval(&[(i, 1.0)])?;
                let fm = eval(&[(i, -1.0)])?;
                Ok((fp - 2.0 * centre + fm) / (h[i] * h[i]))
            } else {
                let fpp = eval(&[(i, 1.0), (j, 1.0)])?;
                let fpm = eval(&[(i, 1.0), (j, -1.0)])?;
                let fmp = eval(&[(i, -1.0), (j, 1.0)])?;
                let fmm = eval(&[(i, -1.0), (j, -1.0)])?;
                Ok((fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j]))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = sample.n() as f64;
    let mut matrix = DMatrix::zeros(p, p);
    for (&(i, j), &v) in pairs.iter().zip(&entries) {
        matrix[(i, j)] = v / n;
        matrix[(j, i)] = v / n;
    }
    let negative_definite = (-&matrix).cholesky().is_some();
    Ok(ExpectedHessian {
        matrix,
        negative_definite,
    })
}

/// Moore-Penrose inverse with singular values below `1e-7` of the largest
/// dropped.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("matrix has non-finite entries".into()));
    }
    let svd = m.clone().svd(true, true);
    let largest = svd.singular_values.max();
    if !(largest > 0.0) {
        return Err(Error::Singular("zero matrix".into()));
    }
    svd.pseudo_inverse(PINV_RTOL * largest)
        .map_err(|e| Error::Singular(e.to_string()))
}

/// Influence of each row: `-H^+ score`, one row per observation.
pub fn influence_functions(scores: &DMatrix<f64>, hessian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if hessian.nrows() != scores.ncols() || !hessian.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "{} scores against a {}x{} Hessian",
            scores.ncols(),
            hessian.nrows(),
            hessian.ncols()
        )));
    }
    let inv = pseudo_inverse(hessian)?;
    Ok(-(scores * inv.transpose()))
}

/// Influence of a single observation.
pub fn influence_function(
    y: &DataSet,
    params: &ModelParams,
    sel: FreeParams,
    density: &RowDensity,
    hessian: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let s = score_matrix(y, params, sel, density)?;
    Ok(influence_functions(&s, hessian)?.row(0).transpose())
}

/// Column summaries of a matrix of influence values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMeasures {
    /// Mean squared influence.
    pub asy_var: Vec<f64>,
    /// Largest absolute influence.
    pub gross_error: Vec<f64>,
    /// Largest change of influence per unit L1 distance between rows;
    /// pairs at distance zero are skipped.
    pub local_shift: Vec<f64>,
}

pub fn sensitivity_measures(sample: &DataSet, ifs: &DMatrix<f64>) -> Result<SensitivityMeasures> {
    let (n, p) = ifs.shape();
    if n != sample.n() {
        return Err(Error::DimensionMismatch(format!(
            "{n} influence rows for {} observations",
            sample.n()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput("need at least two rows".into()));
    }
    if !sample.is_complete() {
        return Err(Error::Unsupported(
            "sensitivity measures need complete rows".into(),
        ));
    }
    let asy_var = (0..p)
        .map(|j| ifs.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64)
        .collect();
    let gross_error = (0..p).map(|j| ifs.column(j).amax()).collect();
    let y = sample.y();
    let local_shift = (0..n)
        .into_par_iter()
        .map(|a| {
            let mut best = vec![0.0f64; p];
            for b in a + 1..n {
                let dist: f64 = (0..sample.d()).map(|i| (y[(a, i)] - y[(b, i)]).abs()).sum();
                if dist > 0.0 {
                    for (j, slot) in best.iter_mut().enumerate() {
                        *slot = slot.max((ifs[(a, j)] - ifs[(b, j)]).abs() / dist);
                    }
                }
            }
            best
        })
        .reduce(
            || vec![0.0; p],
            |x, y| x.iter().zip(&y).map(|(a, b)| a.max(*b)).collect(),
        );
    Ok(SensitivityMeasures {
        asy_var,
        gross_error,
        local_shift,
    })
}

/// Everything computed for one sample and one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    pub labels: Vec<String>,
    pub ifs: DMatrix<f64>,
    pub hessian: ExpectedHessian,
    pub measures: SensitivityMeasures,
}

/// Influence of the `kind` estimator at `params` evaluated on `sample`.
pub fn influence_report(
    sample: &DataSet,
    params: &ModelParams,
    kind: ModelKind,
    sel: FreeParams,
    config: &EmConfig,
) -> Result<InfluenceReport> {
    let density = RowDensity::new(params, kind, config)?;
    let scores = score_matrix(sample, params, sel, &density)?;
    let hessian = expected_hessian(sample, params, sel, &density)?;
    let ifs = influence_functions(&scores, &hessian.matrix)?;
    let measures = sensitivity_measures(sample, &ifs)?;
    Ok(InfluenceReport {
        labels: parameter_labels(params, sel),
        ifs,
        hessian,
        measures,
    })
}

/// An estimator compared in the mean-squared-error study.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    /// Closed-form Gaussian PPCA.
    Gaussian,
    /// Classical Student-t PPCA with the given degrees of freedom.
    StudentT { nu: f64 },
    /// EM fit of a family member with fixed degrees of freedom.
    Gst {
        kind: ModelKind,
        nu_eps: DVector<f64>,
        nu_x: DVector<f64>,
    },
}

impl Estimator {
    pub fn name(&self) -> String {
        match self {
            Estimator::Gaussian => "gaussian".into(),
            Estimator::StudentT { nu } => format!("student-t({nu})"),
            Estimator::Gst { kind, .. } => kind.name().into(),
        }
    }

    pub fn fit(&self, data: &DataSet, k: usize, config: &EmConfig) -> Result<ModelParams> {
        match self {
            Estimator::Gaussian => Ok(fit_gaussian_ppca(data, k)?.params()),
            Estimator::StudentT { nu } => Ok(fit_student_t_ppca(data, k, *nu)?.params()),
            Estimator::Gst { kind, nu_eps, nu_x } => {
                let init = initial_params(data, k, nu_eps.clone(), nu_x.clone())?;
                Ok(fit(data, *kind, &init, config)?.params)
            }
        }
    }
}

/// Rotation-invariant targets of the study: `sigma2`, the intercept and the
/// upper triangle of `W W^T`.
pub fn mse_targets(params: &ModelParams) -> (Vec<String>, Vec<f64>) {
    let d = params.dim();
    let wwt = &params.w * params.w.transpose();
    let mut labels = vec!["sigma2".to_string()];
    let mut values = vec![params.sigma2];
    for i in 0..d {
        labels.push(format!("mu[{}]", i + 1));
        values.push(params.mu[i]);
    }
    for i in 0..d {
        for j in i..d {
            labels.push(format!("wwt[{},{}]", i + 1, j + 1));
            values.push(wwt[(i, j)]);
        }
    }
    (labels, values)
}

/// Mean squared error of one estimator at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub estimator: String,
    pub n: usize,
    pub parameter: String,
    pub mse: f64,
    /// Replications that produced an estimate.
    pub successes: usize,
    pub failures: usize,
}

/// Seed of replication `rep`, independent of scheduling.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    row_rng(seed, PURPOSE_REPLICATION, rep as u64).next_u64()
}

/// Simulates `m` samples of every size from `truth`, fits each estimator and
/// averages squared errors of [`mse_targets`]. Failed fits are counted and
/// left out of the averages. Rows are ordered by estimator, size, parameter.
pub fn mse_study(
    truth: &ModelParams,
    truth_kind: ModelKind,
    estimators: &[Estimator],
    sizes: &[usize],
    m: usize,
    seed: u64,
    config: &EmConfig,
) -> Result<Vec<MseRow>> {
    validate(truth, truth_kind)?;
    if m == 0 || sizes.is_empty() || estimators.is_empty() {
        return Err(Error::InvalidInput(
            "study needs replications, sizes and estimators".into(),
        ));
    }
    let k = truth.latent_dim();
    let (labels, target) = mse_targets(truth);
    let mut rows = Vec::new();
    for est in estimators {
        for &n in sizes {
            let errors: Vec<Option<Vec<f64>>> = (0..m)
                .into_par_iter()
                .map(|rep| {
                    let spec = SimSpec {
                        params: truth.clone(),
                        kind: truth_kind,
                        n,
                        seed: replication_seed(seed ^ (n as u64).rotate_left(32), rep),
                    };
                    let data = simulate(&spec).ok()?;
                    let fitted = est.fit(&data, k, config).ok()?;
                    let (_, values) = mse_targets(&fitted);
                    Some(
                        values
                            .iter()
                            .zip(&target)
                            .map(|(a, b)| (a - b).powi(2))
                            .collect(),
                    )
                })
                .collect();
            let ok: Vec<&Vec<f64>> = errors.iter().flatten().collect();
            let failures = m - ok.len();
            for (j, label) in labels.iter().enumerate() {
                let mse = if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|e| e[j]).sum::<f64>() / ok.len() as f64
                };
                rows.push(MseRow {
                    estimator: est.name(),
                    n,
                    parameter: label.clone(),
                    mse,
                    successes: ok.len(),
                    failures,
                });
            }
        }
    }
    Ok(rows)
}

//! Robustness experiments comparing the Gaussian, classical Student-t and
//! Grouped-t estimators of `sigma2` and `W`.
//!
//! In the matched setting every estimator is evaluated on draws from its own
//! model at the reference parameters. In the mismatched setting the draws
//! come from Grouped-t models and each estimator is evaluated at its own fit
//! to the sample, the plug-in value of its functional.

use nalgebra::{dmatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_gaussian_ppca, fit_student_t_ppca};
use crate::em::EmConfig;
use crate::error::{Error, Result};
use crate::influence::{influence_report, SIGMA2_AND_W};
use crate::simulate::{simulate, SimSpec};
use crate::types::{median_in_place, DataSet, ModelKind, ModelParams};

/// Degrees of freedom of the classical Student-t estimator.
pub const STUDENT_NU: [f64; 4] = [4.0, 10.0, 20.0, 100.0];
/// Per-coordinate degrees of freedom of the Grouped-t models.
pub const GROUPED_NU_LEVELS: [f64; 2] = [4.0, 100.0];

/// Gaussian model with the reference loadings, zero intercept and
/// `sigma2 = 0.1`.
pub fn reference_params() -> ModelParams {
    ModelParams::gaussian(
        dmatrix![0.3, 1.0; 1.23, 0.8; 0.021, 0.98],
        DVector::zeros(3),
        0.1,
    )
}

fn levels(len: usize) -> Vec<DVector<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                GROUPED_NU_LEVELS.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out.into_iter().map(DVector::from_vec).collect()
}

/// Every `(nu_eps, nu_x)` pair with entries in [`GROUPED_NU_LEVELS`], for
/// the reference dimensions.
pub fn grouped_combinations() -> Vec<(DVector<f64>, DVector<f64>)> {
    let p = reference_params();
    let eps = levels(p.dim());
    let x = levels(p.latent_dim());
    eps.iter()
        .flat_map(|e| x.iter().map(move |l| (e.clone(), l.clone())))
        .collect()
}

/// Underscore-joined degrees of freedom, e.g. `4_100_4`.
pub fn nu_label(nu: &DVector<f64>) -> String {
    nu.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join("_")
}

/// Sensitivity of one estimator for one parameter under one data model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEntry {
    pub estimator: String,
    /// Degrees of freedom assumed by the estimator, empty for Gaussian.
    pub estimator_nu: String,
    /// Degrees of freedom of the data model.
    pub nu_eps: String,
    pub nu_x: String,
    pub parameter: String,
    pub asy_var: f64,
    pub gross_error: f64,
    pub local_shift: f64,
}

struct Case {
    estimator: &'static str,
    estimator_nu: String,
    nu_eps: DVector<f64>,
    nu_x: DVector<f64>,
    data_kind: ModelKind,
}

fn with_nu(nu_eps: &DVector<f64>, nu_x: &DVector<f64>) -> ModelParams {
    reference_params().with_nu(nu_eps.clone(), nu_x.clone())
}

fn entries(
    case: &Case,
    m: usize,
    seed: u64,
    config: &EmConfig,
    evaluate: impl Fn(&DataSet) -> Result<(ModelParams, ModelKind)>,
) -> Result<Vec<ScenarioEntry>> {
    let truth = with_nu(&case.nu_eps, &case.nu_x);
    let sample = simulate(&SimSpec {
        params: truth,
        kind: case.data_kind,
        n: m,
        seed,
    })?;
    let (params, kind) = evaluate(&sample)?;
    let report = influence_report(&sample, &params, kind, SIGMA2_AND_W, config)?;
    Ok(report
        .labels
        .iter()
        .enumerate()
        .map(|(j, label)| ScenarioEntry {
            estimator: case.estimator.into(),
            estimator_nu: case.estimator_nu.clone(),
            nu_eps: nu_label(&case.nu_eps),
            nu_x: nu_label(&case.nu_x),
            parameter: label.clone(),
            asy_var: report.measures.asy_var[j],
            gross_error: report.measures.gross_error[j],
            local_shift: report.measures.local_shift[j],
        })
        .collect())
}

fn nu_vectors(nu: f64) -> (DVector<f64>, DVector<f64>) {
    let p = reference_params();
    (
        DVector::from_element(p.dim(), nu),
        DVector::from_element(p.latent_dim(), nu),
    )
}

/// Matched setting: `m` draws from each estimator's own model, influence
/// evaluated at the true parameters. Student-t runs once per entry of
/// [`STUDENT_NU`], Grouped-t once per [`grouped_combinations`] entry.
pub fn matched_scenario(m: usize, seed: u64, config: &EmConfig) -> Result<Vec<ScenarioEntry>> {
    let mut cases = vec![Case {
        estimator: "gaussian",
        estimator_nu: String::new(),
        nu_eps: nu_vectors(f64::INFINITY).0,
        nu_x: nu_vectors(f64::INFINITY).1,
        data_kind: ModelKind::GaussianPPCA,
    }];
    for nu in STUDENT_NU {
        let (e, x) = nu_vectors(nu);
        cases.push(Case {
            estimator: "student-t",
            estimator_nu: format!("{nu}"),
            nu_eps: e,
            nu_x: x,
            data_kind: ModelKind::StudentTPPCA,
        });
    }
    for (e, x) in grouped_combinations() {
        cases.push(Case {
            estimator: "grouped-t",
            estimator_nu: format!("{}|{}", nu_label(&e), nu_label(&x)),
            nu_eps: e,
            nu_x: x,
            data_kind: ModelKind::GroupedT,
        });
    }
    let mut out = Vec::new();
    for case in &cases {
        let truth = with_nu(&case.nu_eps, &case.nu_x);
        out.extend(entries(case, m, seed, config, |_| {
            Ok((truth.clone(), case.data_kind))
        })?);
    }
    Ok(out)
}

/// Mismatched setting: for every Grouped-t data model, `m` draws evaluated
/// under the Gaussian fit, each classical Student-t fit and the Grouped-t
/// model at the true degrees of freedom.
pub fn mismatched_scenario(m: usize, seed: u64, config: &EmConfig) -> Result<Vec<ScenarioEntry>> {
    let k = reference_params().latent_dim();
    let mut out = Vec::new();
    for (e, x) in grouped_combinations() {
        let base = |estimator: &'static str, estimator_nu: String| Case {
            estimator,
            estimator_nu,
            nu_eps: e.clone(),
            nu_x: x.clone(),
            data_kind: ModelKind::GroupedT,
        };
        out.extend(entries(
            &base("gaussian", String::new()),
            m,
            seed,
            config,
            |s| Ok((fit_gaussian_ppca(s, k)?.params(), ModelKind::GaussianPPCA)),
        )?);
        for nu in STUDENT_NU {
            out.extend(entries(
                &base("student-t", format!("{nu}")),
                m,
                seed,
                config,
                |s| {
                    Ok((
                        fit_student_t_ppca(s, k, nu)?.params(),
                        ModelKind::StudentTPPCA,
                    ))
                },
            )?);
        }
        let truth = with_nu(&e, &x);
        out.extend(entries(
            &base("grouped-t", format!("{}|{}", nu_label(&e), nu_label(&x))),
            m,
            seed,
            config,
            |_| Ok((truth.clone(), ModelKind::GroupedT)),
        )?);
    }
    Ok(out)
}

/// Which sensitivity measure a summary refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    AsyVar,
    GrossError,
    LocalShift,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::AsyVar, Measure::GrossError, Measure::LocalShift];

    pub fn name(self) -> &'static str {
        match self {
            Measure::AsyVar => "asy_var",
            Measure::GrossError => "gross_error",
            Measure::LocalShift => "local_shift",
        }
    }

    pub fn of(self, e: &ScenarioEntry) -> f64 {
        match self {
            Measure::AsyVar => e.asy_var,
            Measure::GrossError => e.gross_error,
            Measure::LocalShift => e.local_shift,
        }
    }
}

/// Median and interquartile range of a measure across data models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub iqr: f64,
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and IQR of `measure` over all entries of `estimator` for
/// `parameter`.
pub fn spread(
    entries: &[ScenarioEntry],
    estimator: &str,
    parameter: &str,
    measure: Measure,
) -> Result<Spread> {
    let mut values: Vec<f64> = entries
        .iter()
        .filter(|e| e.estimator == estimator && e.parameter == parameter)
        .map(|e| measure.of(e))
        .collect();
    if values.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no entries for {estimator} / {parameter}"
        )));
    }
    values.sort_by(f64::total_cmp);
    let iqr = quantile(&values, 0.75) - quantile(&values, 0.25);
    Ok(Spread {
        median: median_in_place(&mut values),
        iqr,
    })
}

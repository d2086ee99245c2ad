use std::path::PathBuf;

use clap::Args;
use gst_ppca::baselines::baseline_row_log_densities;
use gst_ppca::skewt::{product_grid, SkewGridConfig};
use gst_ppca::{
    fit, fit_gaussian_ppca, fit_skew_t_grid, fit_student_t_ppca, initial_params, model_covariance,
    proportion_of_variance, standardize, BaselineEstimate, DataSet, EmConfig, ModelKind,
    ModelParams,
};
use nalgebra::DVector;
use rayon::prelude::*;

use super::parse_kind;
use crate::error::{usage, CliError, Result};
use crate::panel::{parse_list, read_groups, read_panel};
use crate::report::{
    emit, to_json, ColumnScale, Failure, FitReport, GridPoint, GroupEcho, IndexEcho, SCHEMA_VERSION,
};
use crate::{EmArgs, Outcome, OutputArg};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV panel, one row per observation.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArg,
    /// gaussian, student-t, gst, grouped-t, student-t-gst or skew-t-gst.
    #[arg(long, default_value = "grouped-t", value_parser = parse_kind)]
    pub kind: ModelKind,
    /// Number of latent factors.
    #[arg(long)]
    pub k: usize,
    /// Candidate degrees of freedom; `inf` is allowed. Noise groups and the
    /// shared latent value each range over it. Latent values of 2 or less are
    /// skipped for skew-t-gst, whose intercept needs a finite latent mean.
    #[arg(long, default_value = "2,4,10,20,100")]
    pub nu_grid: String,
    /// CSV `column_name,group_name` giving columns that share one noise
    /// degree of freedom (grouped-t and gst only).
    #[arg(long)]
    pub nu_groups: Option<PathBuf>,
    /// Marginal grid of latent skewness values for skew-t-gst.
    #[arg(long, default_value = "-1,-0.5,-0.2,0,0.2,0.5,1")]
    pub delta_grid: String,
    /// Standardize columns by Huber location and scale before fitting.
    #[arg(long)]
    pub standardize: bool,
    #[command(flatten)]
    pub em: EmArgs,
}

/// A grid point with its fitted parameters, if any.
struct Trial {
    point: GridPoint,
    params: Option<ModelParams>,
}

fn nu_repr(nu: &DVector<f64>) -> Vec<Option<f64>> {
    nu.iter().map(|&v| v.is_finite().then_some(v)).collect()
}

fn failed(nu_eps: &DVector<f64>, nu_x: &DVector<f64>, e: impl ToString) -> Trial {
    Trial {
        point: GridPoint {
            nu_eps: nu_repr(nu_eps),
            nu_x: nu_repr(nu_x),
            delta_x: None,
            loglik: None,
            iterations: 0,
            converged: false,
            error: Some(e.to_string()),
        },
        params: None,
    }
}

/// Every assignment of grid values to `groups` slots, first slot slowest.
fn assignments(grid: &[f64], groups: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..groups {
        out = out
            .into_iter()
            .flat_map(|prefix: Vec<f64>| {
                grid.iter().map(move |&v| {
                    let mut next = prefix.clone();
                    next.push(v);
                    next
                })
            })
            .collect();
    }
    out
}

fn baseline_trial(
    data: &DataSet,
    est: gst_ppca::Result<BaselineEstimate>,
    nu_eps: &DVector<f64>,
    nu_x: &DVector<f64>,
) -> Trial {
    let fitted = est.and_then(|b| {
        let params = b.params();
        let ll: f64 = baseline_row_log_densities(data, &params, b.kind())?
            .iter()
            .sum();
        Ok((params, ll, b.iterations))
    });
    match fitted {
        Ok((params, ll, iterations)) => Trial {
            point: GridPoint {
                nu_eps: nu_repr(nu_eps),
                nu_x: nu_repr(nu_x),
                delta_x: None,
                loglik: Some(ll),
                iterations,
                converged: true,
                error: None,
            },
            params: Some(params),
        },
        Err(e) => failed(nu_eps, nu_x, e),
    }
}

fn em_trial(
    data: &DataSet,
    kind: ModelKind,
    k: usize,
    nu_eps: DVector<f64>,
    nu_x: DVector<f64>,
    config: &EmConfig,
) -> Trial {
    let result = initial_params(data, k, nu_eps.clone(), nu_x.clone())
        .and_then(|init| fit(data, kind, &init, config));
    match result {
        Ok(r) => Trial {
            point: GridPoint {
                nu_eps: nu_repr(&nu_eps),
                nu_x: nu_repr(&nu_x),
                delta_x: None,
                loglik: Some(r.loglik()),
                iterations: r.iterations,
                converged: r.converged,
                error: None,
            },
            params: Some(r.params),
        },
        Err(e) => failed(&nu_eps, &nu_x, e),
    }
}

fn skew_trials(
    data: &DataSet,
    k: usize,
    nu_eps: f64,
    nu_x: f64,
    delta_grid: &[DVector<f64>],
    config: &EmConfig,
) -> Vec<Trial> {
    let (e, x) = (
        DVector::from_element(data.d(), nu_eps),
        DVector::from_element(k, nu_x),
    );
    let skew_config = SkewGridConfig {
        em: config.clone(),
        ..SkewGridConfig::default()
    };
    match fit_skew_t_grid(data, k, nu_eps, nu_x, delta_grid, &skew_config) {
        Ok(grid) => grid
            .results
            .into_iter()
            .map(|r| Trial {
                point: GridPoint {
                    nu_eps: nu_repr(&e),
                    nu_x: nu_repr(&x),
                    delta_x: Some(r.delta_x.iter().copied().collect()),
                    loglik: Some(r.loglik),
                    iterations: r.iterations,
                    converged: r.converged,
                    error: None,
                },
                params: Some(r.params),
            })
            .collect(),
        Err(err) => vec![failed(&e, &x, err)],
    }
}

fn check_kind_supports(kind: ModelKind, data: &DataSet, groups: usize) -> Result<()> {
    let complete_only = matches!(
        kind,
        ModelKind::GaussianPPCA | ModelKind::StudentTPPCA | ModelKind::SkewTGStSimplified
    );
    if complete_only && !data.is_complete() {
        return usage(format!(
            "kind '{}' needs complete data but the panel has missing cells; use gst, grouped-t or student-t-gst",
            kind.name()
        ));
    }
    if groups > 1 && !matches!(kind, ModelKind::GroupedT | ModelKind::GStGeneral) {
        return usage(format!(
            "--nu-groups needs kind grouped-t or gst, not '{}'",
            kind.name()
        ));
    }
    Ok(())
}

fn run_grid(
    args: &FitArgs,
    data: &DataSet,
    group_of: &[usize],
    groups: usize,
    config: &EmConfig,
) -> Result<Vec<Trial>> {
    let k = args.k;
    let grid = parse_list(&args.nu_grid)?;
    if let Some(bad) = grid.iter().find(|v| !(**v > 0.0)) {
        return usage(format!("degrees of freedom {bad} must be positive"));
    }
    let kind = args.kind;
    let spread = |g: &[f64]| DVector::from_iterator(group_of.len(), group_of.iter().map(|&i| g[i]));
    let trials = match kind {
        ModelKind::GaussianPPCA => {
            let inf = (
                DVector::from_element(data.d(), f64::INFINITY),
                DVector::from_element(k, f64::INFINITY),
            );
            vec![baseline_trial(
                data,
                fit_gaussian_ppca(data, k),
                &inf.0,
                &inf.1,
            )]
        }
        ModelKind::StudentTPPCA => {
            let finite: Vec<f64> = grid.iter().copied().filter(|v| v.is_finite()).collect();
            if finite.is_empty() {
                return usage("student-t needs a finite value in --nu-grid");
            }
            finite
                .par_iter()
                .map(|&nu| {
                    let (e, x) = (
                        DVector::from_element(data.d(), nu),
                        DVector::from_element(k, nu),
                    );
                    baseline_trial(data, fit_student_t_ppca(data, k, nu), &e, &x)
                })
                .collect()
        }
        ModelKind::SkewTGStSimplified => {
            let marginal = parse_list(&args.delta_grid)?;
            let deltas = product_grid(&marginal, k);
            let latent: Vec<f64> = grid.iter().copied().filter(|&v| v > 2.0).collect();
            if latent.is_empty() {
                return usage("skew-t-gst needs a value above 2 in --nu-grid");
            }
            let pairs: Vec<(f64, f64)> = grid
                .iter()
                .flat_map(|&e| latent.iter().map(move |&x| (e, x)))
                .collect();
            pairs
                .par_iter()
                .map(|&(e, x)| skew_trials(data, k, e, x, &deltas, config))
                .collect::<Vec<_>>()
                .into_iter()
                .flatten()
                .collect()
        }
        _ => {
            let noise = assignments(&grid, groups);
            let combos: Vec<(Vec<f64>, f64)> = noise
                .iter()
                .flat_map(|g| grid.iter().map(move |&x| (g.clone(), x)))
                .collect();
            combos
                .par_iter()
                .map(|(g, x)| {
                    em_trial(
                        data,
                        kind,
                        k,
                        spread(g),
                        DVector::from_element(k, *x),
                        config,
                    )
                })
                .collect()
        }
    };
    Ok(trials)
}

pub fn run(args: &FitArgs) -> Result<Outcome> {
    let config = args.em.config()?;
    let panel = read_panel(&args.input)?;
    let d = panel.data.d();
    if args.k == 0 || args.k >= d {
        return usage(format!(
            "--k must be between 1 and {} for {d} columns",
            d.saturating_sub(1)
        ));
    }
    let (group_of, group_names) = match &args.nu_groups {
        Some(path) => read_groups(path, &panel.columns)?,
        None => (vec![0; d], vec!["all".to_string()]),
    };
    check_kind_supports(args.kind, &panel.data, group_names.len())?;
    let (data, standardization) = if args.standardize {
        let (data, scales) = standardize(&panel.data)?;
        let echo = panel
            .columns
            .iter()
            .zip(scales)
            .map(|(c, s)| ColumnScale::new(c, s))
            .collect();
        (data, Some(echo))
    } else {
        (panel.data.clone(), None)
    };

    let trials = run_grid(args, &data, &group_of, group_names.len(), &config)?;
    let selected = trials
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.point.loglik.map(|ll| (i, ll)))
        .fold(None, |best: Option<(usize, f64)>, (i, ll)| match best {
            Some((_, b)) if b >= ll => best,
            _ => Some((i, ll)),
        })
        .map(|(i, _)| i);
    let failures: Vec<Failure> = trials
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.point.converged)
        .map(|(i, t)| Failure {
            grid_point: i,
            reason: t.point.error.clone().unwrap_or_else(|| {
                format!("no convergence after {} iterations", t.point.iterations)
            }),
        })
        .collect();

    let kind = args.kind;
    let params = selected.and_then(|i| trials[i].params.clone());
    let covariance = params
        .as_ref()
        .map(|p| model_covariance(p, kind))
        .transpose()?;
    let proportions = covariance
        .as_ref()
        .and_then(|c| c.eigvals_vector())
        .and_then(|l| proportion_of_variance(&l).ok());
    let report = FitReport {
        schema_version: SCHEMA_VERSION,
        kind: kind.name().to_string(),
        k: args.k,
        n: data.n(),
        columns: panel.columns.clone(),
        index: panel
            .index
            .clone()
            .map(|(name, values)| IndexEcho { name, values }),
        groups: group_names
            .iter()
            .enumerate()
            .map(|(g, name)| GroupEcho {
                name: name.clone(),
                columns: panel
                    .columns
                    .iter()
                    .zip(&group_of)
                    .filter(|(_, &o)| o == g)
                    .map(|(c, _)| c.clone())
                    .collect(),
            })
            .collect(),
        standardization,
        missing_fraction: data.missing_fraction(),
        quad_n: config.grid_n,
        max_iter: config.max_iter,
        tol: config.rel_tol,
        loglik: selected.and_then(|i| trials[i].point.loglik),
        converged: failures.is_empty(),
        grid: trials.into_iter().map(|t| t.point).collect(),
        selected,
        params,
        covariance,
        proportions,
        failures,
    };
    emit(args.output.output.as_deref(), to_json(&report)?.as_bytes())?;
    if report.selected.is_none() {
        return Err(CliError::Usage(format!(
            "all {} fits failed",
            report.grid.len()
        )));
    }
    if !report.failures.is_empty() {
        eprintln!(
            "{}",
            serde_json::to_string(&serde_json::json!({ "failures": report.failures }))?
        );
        return Ok(Outcome::Incomplete);
    }
    Ok(Outcome::Done)
}

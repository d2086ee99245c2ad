use std::path::PathBuf;

use clap::Args;
use gst_ppca::scenarios::reference_params;
use gst_ppca::simulate::{mask_mar, simulate, SimSpec};
use gst_ppca::{collapse_kind, ModelKind, ModelParams};
use nalgebra::DVector;

use super::{default_columns, parse_kind};
use crate::error::{usage, Result};
use crate::panel::{open, parse_list, write_panel, Panel};
use crate::report::{emit, FitReport};
use crate::{Outcome, OutputArg};

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub output: OutputArg,
    /// Parameter JSON or fit report to draw from. Without it the reference
    /// three-dimensional, two-factor model is used.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Model kind; inferred from the parameter values when absent.
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ModelKind>,
    /// Noise degrees of freedom of the reference model: one value or one per column.
    #[arg(long)]
    pub nu_eps: Option<String>,
    /// Latent degrees of freedom of the reference model: one value or one per factor.
    #[arg(long)]
    pub nu_x: Option<String>,
    /// Latent skewness of the reference model.
    #[arg(long)]
    pub delta_x: Option<String>,
    /// Noise skewness of the reference model.
    #[arg(long)]
    pub delta_eps: Option<String>,
    /// Noise variance of the reference model.
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Number of rows.
    #[arg(long)]
    pub n: usize,
    /// Fraction of cells masked completely at random.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn vector(arg: &Option<String>, len: usize, default: f64, what: &str) -> Result<DVector<f64>> {
    let Some(s) = arg else {
        return Ok(DVector::from_element(len, default));
    };
    let values = parse_list(s)?;
    match values.len() {
        1 => Ok(DVector::from_element(len, values[0])),
        l if l == len => Ok(DVector::from_vec(values)),
        l => usage(format!("{what} has {l} values, expected 1 or {len}")),
    }
}

fn model(args: &SimulateArgs) -> Result<(ModelParams, ModelKind, Vec<String>)> {
    if let Some(path) = &args.params {
        let overrides = [&args.nu_eps, &args.nu_x, &args.delta_x, &args.delta_eps];
        if overrides.iter().any(|o| o.is_some()) || args.sigma2.is_some() {
            return usage("--params cannot be combined with reference-model flags");
        }
        let value: serde_json::Value =
            serde_json::from_reader(std::io::BufReader::new(open(path)?))?;
        let (params, columns, kind) = if value.get("schema_version").is_some() {
            let report: FitReport = serde_json::from_value(value)?;
            let Some(params) = report.params else {
                return usage(format!(
                    "{}: the report has no fitted parameters",
                    path.display()
                ));
            };
            let kind = parse_kind(&report.kind).map_err(crate::error::CliError::Usage)?;
            (params, report.columns, Some(kind))
        } else {
            let params: ModelParams = serde_json::from_value(value)?;
            let columns = default_columns(params.dim());
            (params, columns, None)
        };
        let kind = args.kind.or(kind).unwrap_or_else(|| collapse_kind(&params));
        return Ok((params, kind, columns));
    }
    let base = reference_params();
    let (d, k) = (base.dim(), base.latent_dim());
    let params = ModelParams {
        sigma2: args.sigma2.unwrap_or(base.sigma2),
        nu_eps: vector(&args.nu_eps, d, f64::INFINITY, "--nu-eps")?,
        nu_x: vector(&args.nu_x, k, f64::INFINITY, "--nu-x")?,
        delta_eps: vector(&args.delta_eps, d, 0.0, "--delta-eps")?,
        delta_x: vector(&args.delta_x, k, 0.0, "--delta-x")?,
        ..base
    };
    let kind = args.kind.unwrap_or_else(|| collapse_kind(&params));
    Ok((params, kind, default_columns(d)))
}

pub fn run(args: &SimulateArgs) -> Result<Outcome> {
    if args.n == 0 {
        return usage("--n must be positive");
    }
    let (params, kind, columns) = model(args)?;
    let mut data = simulate(&SimSpec {
        params,
        kind,
        n: args.n,
        seed: args.seed,
    })?;
    if args.missing > 0.0 {
        data = mask_mar(&data, args.missing, args.seed)?;
    }
    let mut bytes = Vec::new();
    write_panel(
        &mut bytes,
        &Panel {
            index: None,
            columns,
            data,
        },
    )?;
    emit(args.output.output.as_deref(), &bytes)?;
    Ok(Outcome::Done)
}

use clap::Args;
use gst_ppca::influence::{mse_study, Estimator};
use gst_ppca::scenarios::reference_params;
use gst_ppca::{collapse_kind, ModelKind};
use nalgebra::DVector;

use crate::error::{usage, Result};
use crate::panel::parse_list;
use crate::report::{csv_bytes, emit};
use crate::{EmArgs, Outcome, OutputArg};

#[derive(Debug, Args)]
pub struct MseArgs {
    /// Replications per sample size.
    #[arg(long, default_value_t = 50)]
    pub m: usize,
    #[arg(long, default_value = "100,500,1000,5000,10000")]
    pub sizes: String,
    /// Noise degrees of freedom of the data model: one value or one per column.
    #[arg(long, default_value = "4")]
    pub nu_eps: String,
    /// Latent degrees of freedom of the data model: one value or one per factor.
    #[arg(long, default_value = "4")]
    pub nu_x: String,
    /// Degrees of freedom assumed by the classical Student-t estimator.
    #[arg(long, default_value_t = 4.0)]
    pub student_nu: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArg,
    #[command(flatten)]
    pub em: EmArgs,
}

fn broadcast(s: &str, len: usize, what: &str) -> Result<DVector<f64>> {
    let v = parse_list(s)?;
    match v.len() {
        1 => Ok(DVector::from_element(len, v[0])),
        l if l == len => Ok(DVector::from_vec(v)),
        l => usage(format!("{what} has {l} values, expected 1 or {len}")),
    }
}

pub fn run(args: &MseArgs) -> Result<Outcome> {
    let config = args.em.config()?;
    let base = reference_params();
    let nu_eps = broadcast(&args.nu_eps, base.dim(), "--nu-eps")?;
    let nu_x = broadcast(&args.nu_x, base.latent_dim(), "--nu-x")?;
    let sizes: Vec<usize> = parse_list(&args.sizes)?
        .into_iter()
        .map(|v| {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                usage(format!("sample size {v} is not a positive integer"))
            }
        })
        .collect::<Result<_>>()?;
    let truth = base.with_nu(nu_eps.clone(), nu_x.clone());
    let kind = match collapse_kind(&truth) {
        ModelKind::GaussianPPCA => ModelKind::StudentTGSt,
        other => other,
    };
    let estimators = [
        Estimator::Gaussian,
        Estimator::StudentT {
            nu: args.student_nu,
        },
        Estimator::Gst { kind, nu_eps, nu_x },
    ];
    let rows = mse_study(
        &truth,
        kind,
        &estimators,
        &sizes,
        args.m,
        args.seed,
        &config,
    )?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record([
        "estimator",
        "n",
        "parameter",
        "mse",
        "successes",
        "failures",
    ])?;
    for r in &rows {
        writer.write_record([
            r.estimator.clone(),
            r.n.to_string(),
            r.parameter.clone(),
            if r.mse.is_nan() {
                "NA".into()
            } else {
                format!("{}", r.mse)
            },
            r.successes.to_string(),
            r.failures.to_string(),
        ])?;
    }
    let bytes = csv_bytes(writer)?;
    emit(args.output.output.as_deref(), &bytes)?;
    if rows.iter().any(|r| r.failures > 0) {
        return Ok(Outcome::Incomplete);
    }
    Ok(Outcome::Done)
}

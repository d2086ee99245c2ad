use std::path::PathBuf;

use clap::Args;
use gst_ppca::{collapse_kind, model_covariance, proportion_of_variance, ModelKind, ModelParams};

use super::{default_columns, parse_kind};
use crate::error::{usage, Result};
use crate::panel::open;
use crate::report::{csv_bytes, emit, FitReport};
use crate::{Outcome, OutputArg};

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// A fit report, or a bare parameter JSON.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArg,
    /// Kind of a bare parameter file; inferred from the values when absent.
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ModelKind>,
    /// Number of leading components to write (default: all).
    #[arg(long)]
    pub top: Option<usize>,
}

/// Parameters, kind and column names from either input format.
fn load(args: &DecomposeArgs) -> Result<(ModelParams, ModelKind, Vec<String>)> {
    let value: serde_json::Value =
        serde_json::from_reader(std::io::BufReader::new(open(&args.input)?))?;
    if value.get("schema_version").is_some() {
        let report: FitReport = serde_json::from_value(value)?;
        let Some(params) = report.params else {
            return usage(format!(
                "{}: the report has no fitted parameters",
                args.input.display()
            ));
        };
        let kind = parse_kind(&report.kind).map_err(crate::error::CliError::Usage)?;
        Ok((params, kind, report.columns))
    } else {
        let params: ModelParams = serde_json::from_value(value)?;
        let kind = args.kind.unwrap_or_else(|| collapse_kind(&params));
        let columns = default_columns(params.dim());
        Ok((params, kind, columns))
    }
}

/// CSV with one row per component: eigenvalue, `lambda_1 / lambda_i`, share
/// of total variance, whether the covariance exists, then the loading of
/// every input column. Without a covariance all numeric fields are `NA`.
pub fn decomposition_csv(
    params: &ModelParams,
    kind: ModelKind,
    columns: &[String],
    top: Option<usize>,
) -> Result<String> {
    let d = params.dim();
    let m = top.unwrap_or(d);
    if m == 0 || m > d {
        return usage(format!("--top must be between 1 and {d}"));
    }
    let cov = model_covariance(params, kind)?;
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "component",
        "eigenvalue",
        "ratio_to_first",
        "share",
        "defined",
    ];
    header.extend(columns.iter().map(String::as_str));
    writer.write_record(&header)?;
    match (cov.eigvals_vector(), cov.eigvecs_matrix()) {
        (Some(vals), Some(vecs)) => {
            let props = proportion_of_variance(&vals)?;
            for c in 0..m {
                let mut row = vec![
                    (c + 1).to_string(),
                    format!("{}", vals[c]),
                    format!("{}", props.ratio_to_first[c]),
                    format!("{}", props.share[c]),
                    "true".to_string(),
                ];
                row.extend((0..d).map(|i| format!("{}", vecs[(i, c)])));
                writer.write_record(&row)?;
            }
        }
        _ => {
            for c in 0..m {
                let mut row = vec![
                    (c + 1).to_string(),
                    "NA".into(),
                    "NA".into(),
                    "NA".into(),
                    "false".into(),
                ];
                row.extend(std::iter::repeat_n("NA".to_string(), d));
                writer.write_record(&row)?;
            }
        }
    }
    let bytes = csv_bytes(writer)?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn run(args: &DecomposeArgs) -> Result<Outcome> {
    let (params, kind, columns) = load(args)?;
    if columns.len() != params.dim() {
        return usage(format!(
            "{} column names for {} dimensions",
            columns.len(),
            params.dim()
        ));
    }
    let csv = decomposition_csv(&params, kind, &columns, args.top)?;
    emit(args.output.output.as_deref(), csv.as_bytes())?;
    Ok(Outcome::Done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DVector};

    #[test]
    fn isotropic_model_has_unit_ratios() {
        // Negligible loadings leave the covariance at the identity.
        let w = dmatrix![1e-9, 0.0; 0.0, 1e-9; 0.0, 0.0];
        let p = ModelParams::gaussian(w, DVector::zeros(3), 1.0);
        let csv =
            decomposition_csv(&p, ModelKind::GaussianPPCA, &default_columns(3), None).unwrap();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        for rec in reader.records() {
            let rec = rec.unwrap();
            let ratio: f64 = rec[2].parse().unwrap();
            assert!((ratio - 1.0).abs() < 1e-12);
            assert_eq!(&rec[4], "true");
        }
    }

    #[test]
    fn heavy_tails_leave_covariance_undefined() {
        let p = ModelParams::new(
            dmatrix![1.0; 0.5],
            DVector::zeros(2),
            0.2,
            DVector::from_element(2, 2.0),
            DVector::from_element(1, 2.0),
        );
        let csv =
            decomposition_csv(&p, ModelKind::StudentTGSt, &default_columns(2), Some(1)).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1], "1,NA,NA,NA,false,NA,NA");
    }
}

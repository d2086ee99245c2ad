//! JSON documents written by the CLI. Each carries `schema_version` and
//! re-reads to an identical value.

use std::io::Write;
use std::path::Path;

use gst_ppca::covariance::VarianceProportions;
use gst_ppca::{CovarianceReport, LocationScale, ModelParams};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::panel::create;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEcho {
    pub name: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEcho {
    pub name: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub column: String,
    pub location: f64,
    pub scale: f64,
}

impl ColumnScale {
    pub fn new(column: &str, s: LocationScale) -> Self {
        Self {
            column: column.to_string(),
            location: s.location,
            scale: s.scale,
        }
    }
}

/// One fit of the model-selection grid. Infinite degrees of freedom are
/// written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub nu_eps: Vec<Option<f64>>,
    pub nu_x: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_x: Option<Vec<f64>>,
    pub loglik: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// A grid point that failed or did not converge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub grid_point: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub schema_version: u32,
    pub kind: String,
    pub k: usize,
    pub n: usize,
    pub columns: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexEcho>,
    pub groups: Vec<GroupEcho>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub standardization: Option<Vec<ColumnScale>>,
    pub missing_fraction: f64,
    pub quad_n: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub grid: Vec<GridPoint>,
    /// Index into `grid` of the selected fit; absent when every fit failed.
    pub selected: Option<usize>,
    pub params: Option<ModelParams>,
    pub loglik: Option<f64>,
    pub covariance: Option<CovarianceReport>,
    pub proportions: Option<VarianceProportions>,
    pub converged: bool,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub schema_version: u32,
    pub columns: Vec<ColumnScale>,
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes `bytes` to `path`, or to standard output when `path` is `None`.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    let io = |source| CliError::Io {
        path: path.map_or_else(|| "stdout".into(), |p| p.display().to_string()),
        source,
    };
    match path {
        Some(p) => create(p)?.write_all(bytes).map_err(io),
        None => std::io::stdout().lock().write_all(bytes).map_err(io),
    }
}

/// Bytes of a CSV table written to memory.
pub fn csv_bytes(writer: csv::Writer<Vec<u8>>) -> Result<Vec<u8>> {
    writer.into_inner().map_err(|e| CliError::Io {
        path: "CSV buffer".into(),
        source: e.into_error(),
    })
}

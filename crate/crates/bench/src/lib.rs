//! Shared fixtures for the benchmarks.

use gst_ppca::simulate::{simulate, SimSpec};
use gst_ppca::{DataSet, ModelKind, ModelParams};
use nalgebra::{dmatrix, DVector};

/// Three-dimensional, two-factor model with the given degrees of freedom.
pub fn model(nu_eps: [f64; 3], nu_x: [f64; 2]) -> ModelParams {
    ModelParams::new(
        dmatrix![0.3, 1.0; 1.23, 0.8; 0.021, 0.98],
        DVector::zeros(3),
        0.1,
        DVector::from_row_slice(&nu_eps),
        DVector::from_row_slice(&nu_x),
    )
}

pub fn sample(params: &ModelParams, kind: ModelKind, n: usize) -> DataSet {
    simulate(&SimSpec {
        params: params.clone(),
        kind,
        n,
        seed: 42,
    })
    .expect("valid benchmark model")
}

//! Huber M-estimates of location and scale, used for robust standardization
//! of input panels and as an optional location statistic.
//!
//! Location and scale are solved jointly (Huber's proposal 2): the location
//! zeroes the mean of `psi(r)` and the scale makes the mean of `psi(r)^2`
//! equal its expectation under a standard normal, so both are consistent at
//! the Gaussian. The iteration starts from the median and the normalized MAD.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::types::{median_in_place, DataSet};

pub const HUBER_C: f64 = 1.345;
/// Consistency factor turning the MAD into a standard deviation at the normal.
const MAD_TO_SD: f64 = 1.482_602_218_505_602;
const MIN_COUNT: usize = 10;
const MAX_ITER: usize = 500;
const TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationScale {
    pub location: f64,
    pub scale: f64,
}

fn psi(r: f64, c: f64) -> f64 {
    r.clamp(-c, c)
}

/// `E[psi_c(Z)^2]` for a standard normal `Z`.
fn psi_second_moment(c: f64) -> f64 {
    let z = Normal::standard();
    let tail = 1.0 - z.cdf(c);
    (1.0 - 2.0 * tail) - 2.0 * c * z.pdf(c) + 2.0 * c * c * tail
}

/// Joint Huber location and scale of `values` with tuning constant `c`.
pub fn huber_location_scale(values: &[f64], c: f64) -> Result<LocationScale> {
    if !(c > 0.0) {
        return Err(Error::Domain(format!(
            "tuning constant {c} must be positive"
        )));
    }
    if values.len() < MIN_COUNT {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_COUNT} values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".into()));
    }
    let mut sorted = values.to_vec();
    let mut location = median_in_place(&mut sorted);
    let mut dev: Vec<f64> = values.iter().map(|v| (v - location).abs()).collect();
    let mut scale = MAD_TO_SD * median_in_place(&mut dev);
    if !(scale > 0.0) {
        // More than half the values tie; fall back to the standard deviation.
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        scale = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    if !(scale > 0.0) {
        return Err(Error::Domain("constant column has zero scale".into()));
    }
    let beta = psi_second_moment(c);
    let n = values.len() as f64;
    for _ in 0..MAX_ITER {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut sq = 0.0;
        for &v in values {
            let r = (v - location) / scale;
            let p = psi(r, c);
            // IRLS weight psi(r) / r.
            let w = if r.abs() <= c { 1.0 } else { c / r.abs() };
            num += w * v;
            den += w;
            sq += p * p;
        }
        let next_location = num / den;
        let next_scale = scale * (sq / (n * beta)).sqrt();
        let done = (next_location - location).abs() <= TOL * scale
            && (next_scale - scale).abs() <= TOL * scale;
        location = next_location;
        scale = next_scale;
        if done {
            return Ok(LocationScale { location, scale });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
    })
}

/// Huber location with the tuning constant `1.345`.
pub fn huber_location(values: &[f64]) -> Result<f64> {
    Ok(huber_location_scale(values, HUBER_C)?.location)
}

/// Standardizes every column by its Huber location and scale, computed from
/// the observed entries. Missing entries stay missing.
pub fn standardize(data: &DataSet) -> Result<(DataSet, Vec<LocationScale>)> {
    let (n, d) = (data.n(), data.d());
    let stats = (0..d)
        .map(|i| {
            let column: Vec<f64> = (0..n)
                .filter(|&t| data.is_observed(t, i))
                .map(|t| data.y()[(t, i)])
                .collect();
            huber_location_scale(&column, HUBER_C).map_err(|e| match e {
                Error::Domain(msg) | Error::InvalidInput(msg) => {
                    Error::InvalidInput(format!("column {i}: {msg}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let y = DMatrix::from_fn(n, d, |t, i| {
        (data.y()[(t, i)] - stats[i].location) / stats[i].scale
    });
    Ok((DataSet::with_mask(y, data.mask().to_vec())?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_consistency_constant() {
        // Value from integrating psi^2 against the normal density numerically.
        let grid = 200_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / grid as f64;
        let z = Normal::standard();
        let numeric: f64 = (0..grid)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                psi(x, HUBER_C).powi(2) * z.pdf(x) * h
            })
            .sum();
        assert_relative_eq!(psi_second_moment(HUBER_C), numeric, epsilon = 1e-9);
    }

    #[test]
    fn symmetric_sample_centres_at_symmetry_point() {
        let values: Vec<f64> = (0..21).map(|i| 3.0 + (i as f64 - 10.0).powi(3)).collect();
        let est = huber_location_scale(&values, HUBER_C).unwrap();
        assert_relative_eq!(est.location, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn equivariance() {
        let values: Vec<f64> = (0..30)
            .map(|i| ((i * 7) as f64).sin() * 2.0 + (i % 4) as f64)
            .collect();
        let base = huber_location_scale(&values, HUBER_C).unwrap();
        let moved: Vec<f64> = values.iter().map(|v| -3.0 * v + 5.0).collect();
        let est = huber_location_scale(&moved, HUBER_C).unwrap();
        assert_relative_eq!(est.location, -3.0 * base.location + 5.0, epsilon = 1e-8);
        assert_relative_eq!(est.scale, 3.0 * base.scale, epsilon = 1e-8);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(huber_location_scale(&[1.0; 20], HUBER_C).is_err());
        assert!(huber_location_scale(&[1.0, 2.0], HUBER_C).is_err());
        assert!(huber_location_scale(&[0.0; 12], 0.0).is_err());
    }

    #[test]
    fn standardize_keeps_mask() {
        let rows: Vec<Vec<Option<f64>>> = (0..15)
            .map(|t| {
                vec![
                    Some(t as f64),
                    if t == 3 { None } else { Some((t * t) as f64) },
                ]
            })
            .collect();
        let data = DataSet::from_rows(&rows).unwrap();
        let (out, stats) = standardize(&data).unwrap();
        assert_eq!(out.mask(), data.mask());
        assert_eq!(stats.len(), 2);
        assert_relative_eq!(
            out.y()[(4, 0)],
            (4.0 - stats[0].location) / stats[0].scale,
            epsilon = 1e-14
        );
    }
}

//! Chi-square quantiles and the maps that turn a uniform draw into the Gamma
//! mixing vectors of the noise and latent factors.

use nalgebra::DVector;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};

use crate::error::{Error, Result};

/// Quantile of the chi-square distribution with `nu` degrees of freedom.
///
/// Starts from the Wilson-Hilferty approximation (or the small-argument
/// series when that is negative) and refines with Newton steps on the
/// regularized incomplete gamma function, bisecting whenever a step leaves
/// the current bracket.
pub fn chi2_quantile(nu: f64, p: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::NonPositiveDof(nu));
    }
    if p.is_nan() || p < 0.0 {
        return Err(Error::Domain(format!("probability {p} is negative")));
    }
    if p >= 1.0 {
        return Err(Error::Domain(format!(
            "probability {p} has an infinite quantile"
        )));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * gamma_quantile(0.5 * nu, p, 1.0 - p, initial_guess(nu, p) * 0.5))
}

/// Chi-square quantile at `p = 1 - q`, accurate when `q` is tiny and `p`
/// rounds to one.
pub fn chi2_quantile_upper(nu: f64, q: f64) -> Result<f64> {
    if !(nu > 0.0) || !nu.is_finite() {
        return Err(Error::NonPositiveDof(nu));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::Domain(format!(
            "upper-tail probability {q} outside (0, 1]"
        )));
    }
    if q == 1.0 {
        return Ok(0.0);
    }
    let p = 1.0 - q;
    Ok(2.0 * gamma_quantile(0.5 * nu, p, q, initial_guess_upper(nu, p, q) * 0.5))
}

fn initial_guess_upper(nu: f64, p: f64, q: f64) -> f64 {
    if p <= 0.5 {
        return initial_guess(nu, p);
    }
    let z = -Normal::standard().inverse_cdf(q);
    let c = 2.0 / (9.0 * nu);
    let wh = nu * (1.0 - c + z * c.sqrt()).powi(3);
    if wh > 0.0 {
        wh
    } else {
        nu
    }
}

fn initial_guess(nu: f64, p: f64) -> f64 {
    let z = Normal::standard().inverse_cdf(p);
    let c = 2.0 / (9.0 * nu);
    let wh = nu * (1.0 - c + z * c.sqrt()).powi(3);
    if wh > 0.0 && nu >= 1.0 {
        return wh;
    }
    // P(a, t) ~ t^a / Gamma(a + 1) for small t.
    let a = 0.5 * nu;
    let series = 2.0 * ((p.ln() + ln_gamma(a + 1.0)) / a).exp();
    if series.is_finite() && series > 0.0 {
        series
    } else {
        nu
    }
}

/// Solves `P(a, t) = p` for the unit-rate Gamma(a) distribution.
fn gamma_quantile(a: f64, p: f64, q: f64, start: f64) -> f64 {
    let upper = p > 0.5;
    let lg = ln_gamma(a);
    // Residual increasing in t with the Gamma density as its derivative.
    let residual = |t: f64| {
        if upper {
            q - gamma_ur(a, t)
        } else {
            gamma_lr(a, t) - p
        }
    };
    let density = |t: f64| ((a - 1.0) * t.ln() - t - lg).exp();

    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut t = if start > 0.0 && start.is_finite() {
        start
    } else {
        a
    };
    for _ in 0..500 {
        let h = residual(t);
        if h == 0.0 {
            return t;
        }
        if h < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let f = density(t);
        let mut next = t - h / f;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() {
                if lo > 0.0 {
                    (lo * hi).sqrt()
                } else {
                    0.5 * hi
                }
            } else {
                2.0 * t.max(1.0)
            };
        }
        if (next - t).abs() <= 1e-15 * t || (hi.is_finite() && hi - lo <= 1e-15 * hi) {
            return next;
        }
        t = next;
    }
    t
}

/// Regularized lower incomplete gamma value of the chi-square CDF.
pub fn chi2_cdf(nu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma_lr(0.5 * nu, 0.5 * x)
    }
}

/// Scaled quantile `chi2_quantile(nu, s) / nu`; identically one for infinite `nu`.
pub fn mixing_value(nu: f64, s: f64) -> Result<f64> {
    mixing_value_split(nu, s, 1.0 - s)
}

/// [`mixing_value`] with the complement `1 - s` supplied separately, so
/// nodes within rounding distance of one stay distinct.
pub fn mixing_value_split(nu: f64, s: f64, complement: f64) -> Result<f64> {
    if !(s > 0.0 && complement > 0.0 && s < 1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "uniform coordinate {s} outside (0, 1)"
        )));
    }
    if nu.is_infinite() && nu > 0.0 {
        return Ok(1.0);
    }
    let x = if s > 0.5 {
        chi2_quantile_upper(nu, complement)?
    } else {
        chi2_quantile(nu, s)?
    };
    Ok(x / nu)
}

/// Realized mixing vectors for one pair of uniform coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingVectors {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub s_eps: f64,
    pub s_x: f64,
}

/// Applies the scaled quantile map entrywise. All entries of `u` share
/// `s_eps`, so they are co-monotone; likewise `v` in `s_x`.
pub fn mixing_vectors(
    s_eps: f64,
    s_x: f64,
    nu_eps: &DVector<f64>,
    nu_x: &DVector<f64>,
) -> Result<MixingVectors> {
    let map = |nu: &DVector<f64>, s: f64| -> Result<DVector<f64>> {
        let values = nu
            .iter()
            .map(|&n| mixing_value(n, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(DVector::from_vec(values))
    };
    Ok(MixingVectors {
        u: map(nu_eps, s_eps)?,
        v: map(nu_x, s_x)?,
        s_eps,
        s_x,
    })
}

/// Mean and variance of the inverse of a Gamma(nu/2, rate nu/2) variable.
/// `None` marks a moment that does not exist.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvMixingMoments {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
}

/// The inverse mixing variable is inverse-gamma with shape and scale `nu/2`,
/// so its mean is `nu/(nu-2)` and its variance `2 nu^2 / ((nu-2)^2 (nu-4))`.
pub fn inv_mixing_moments(nu: f64) -> InvMixingMoments {
    if nu.is_infinite() {
        return InvMixingMoments {
            mean: Some(1.0),
            variance: Some(0.0),
        };
    }
    let mean = (nu > 2.0).then(|| nu / (nu - 2.0));
    let variance = (nu > 4.0).then(|| 2.0 * nu * nu / ((nu - 2.0).powi(2) * (nu - 4.0)));
    InvMixingMoments { mean, variance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ContinuousCDF, InverseGamma, Normal};
    use statrs::statistics::Distribution;

    fn bisect_quantile(nu: f64, p: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while chi2_cdf(nu, hi) < p {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf(nu, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn two_dof_closed_form() {
        assert_relative_eq!(
            chi2_quantile(2.0, 0.5).unwrap(),
            4f64.ln(),
            max_relative = 1e-12
        );
        for p in [1e-12, 0.01, 0.3, 0.99, 1.0 - 1e-9] {
            assert_relative_eq!(
                chi2_quantile(2.0, p).unwrap(),
                -2.0 * (-p).ln_1p(),
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn lower_boundary_is_zero() {
        for nu in [0.5, 1.0, 7.0] {
            assert_eq!(chi2_quantile(nu, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn one_dof_matches_bisection_and_normal() {
        let x = chi2_quantile(1.0, 0.5).unwrap();
        assert_relative_eq!(x, bisect_quantile(1.0, 0.5), max_relative = 1e-10);
        let z = Normal::standard().inverse_cdf(0.75);
        assert_relative_eq!(x, z * z, max_relative = 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(chi2_quantile(3.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(chi2_quantile(3.0, -0.1), Err(Error::Domain(_))));
        assert!(matches!(
            chi2_quantile(0.0, 0.5),
            Err(Error::NonPositiveDof(_))
        ));
        assert!(mixing_value(4.0, 0.0).is_err());
        assert!(mixing_value(4.0, 1.0).is_err());
    }

    #[test]
    fn upper_tail_quantiles() {
        for q in [1e-30, 1e-17, 1e-9, 0.3] {
            assert_relative_eq!(
                chi2_quantile_upper(2.0, q).unwrap(),
                -2.0 * q.ln(),
                max_relative = 1e-10
            );
            let x = chi2_quantile_upper(5.0, q).unwrap();
            assert_relative_eq!(gamma_ur(2.5, 0.5 * x), q, max_relative = 1e-9);
        }
        assert!(mixing_value_split(4.0, 1.0, 1e-20).unwrap() > 20.0);
    }

    #[test]
    fn extreme_nodes_round_trip() {
        for nu in [0.5, 1.0, 2.0, 4.0, 100.0, 1000.0] {
            for p in [1e-14, 1e-8, 1e-3, 0.5, 1.0 - 1e-6, 1.0 - 1e-12] {
                let x = chi2_quantile(nu, p).unwrap();
                let back = if p > 0.5 {
                    1.0 - gamma_ur(0.5 * nu, 0.5 * x)
                } else {
                    chi2_cdf(nu, x)
                };
                assert_relative_eq!(back, p, max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn equal_dof_gives_identical_entries() {
        let nu = DVector::from_element(3, 2.0);
        let mv = mixing_vectors(0.5, 0.3, &nu, &DVector::from_element(2, 7.0)).unwrap();
        for &u in mv.u.iter() {
            assert_relative_eq!(u, 2f64.ln(), max_relative = 1e-12);
        }
        assert_eq!(mv.v[0], mv.v[1]);
    }

    #[test]
    fn mixed_dof_matches_oracle() {
        let nu = DVector::from_vec(vec![4.0, 100.0]);
        let mv = mixing_vectors(0.9, 0.5, &nu, &DVector::from_element(1, f64::INFINITY)).unwrap();
        assert_relative_eq!(
            mv.u[0],
            bisect_quantile(4.0, 0.9) / 4.0,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            mv.u[1],
            bisect_quantile(100.0, 0.9) / 100.0,
            max_relative = 1e-10
        );
        assert_eq!(mv.v[0], 1.0);
    }

    #[test]
    fn inverse_moments() {
        let m4 = inv_mixing_moments(4.0);
        assert_eq!(m4.mean, Some(2.0));
        assert_eq!(m4.variance, None);
        assert_relative_eq!(inv_mixing_moments(100.0).mean.unwrap(), 100.0 / 98.0);
        assert_eq!(inv_mixing_moments(2.0).mean, None);
        for nu in [6.0, 10.0, 37.5] {
            let oracle = InverseGamma::new(0.5 * nu, 0.5 * nu).unwrap();
            let m = inv_mixing_moments(nu);
            assert_relative_eq!(
                m.mean.unwrap(),
                oracle.mean().unwrap(),
                max_relative = 1e-12
            );
            assert_relative_eq!(
                m.variance.unwrap(),
                oracle.variance().unwrap(),
                max_relative = 1e-12
            );
        }
        assert_relative_eq!(
            inv_mixing_moments(6.0).variance.unwrap(),
            2.25,
            max_relative = 1e-12
        );
    }
}

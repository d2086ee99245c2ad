//! Helpers shared by the integration tests.
//!
//! The E-step oracle checks the quadrature integrals against Monte Carlo.
//!
//! The oracle samples the hidden variables from their prior and weights each
//! draw by the density of the observed entries (self-normalized importance
//! sampling). Mixing values come from statrs' chi-square quantile, not the
//! crate's own, and the missing coordinate is drawn explicitly rather than
//! integrated out.

use gst_ppca::em::{integral_set, q_value};
use gst_ppca::{log_likelihood, DataSet, EmConfig, ModelParams};
use nalgebra::{dmatrix, dvector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub const DRAWS: usize = 1_000_000;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn truth() -> ModelParams {
    ModelParams::new(
        dmatrix![1.0; 0.6],
        dvector![0.3, -0.2],
        0.5,
        dvector![4.0, 10.0],
        dvector![6.0],
    )
    .with_skew(dvector![0.3, -0.2], dvector![0.4])
}

/// Parameters at which `Q` is evaluated; deliberately away from `truth`.
pub fn star() -> ModelParams {
    let mut p = truth();
    p.w *= 0.9;
    p.mu += dvector![0.1, 0.05];
    p.sigma2 = 0.6;
    p.delta_eps = dvector![0.1, 0.0];
    p.delta_x = dvector![0.25];
    p
}

pub fn rows() -> Vec<Vec<Option<f64>>> {
    vec![
        vec![Some(0.5), Some(1.0)],
        vec![Some(-1.2), Some(0.3)],
        vec![Some(2.0), None],
    ]
}

/// Names of the per-draw features, in the order [`features`] fills them.
pub const NAMES: [&str; 21] = [
    "u1", "u2", "1/u1", "1/u2", "ln u1", "ln u2", "u1 x", "u2 x", "u1 x^2", "u2 x^2", "y1", "y2",
    "u1 y1", "u2 y2", "u1 y1^2", "u2 y2^2", "u1 y1 x", "u2 y2 x", "x", "1/v", "ln v",
];
pub const EXTRA: [&str; 2] = ["v x^2", "Q"];

struct Draw {
    u: [f64; 2],
    v: f64,
    x: f64,
    y: [f64; 2],
}

/// Complete-data log-density at `p`, leaving out the mixing densities.
fn complete_log_density(p: &ModelParams, dr: &Draw) -> f64 {
    let mut c = 0.0;
    for i in 0..2 {
        let r = dr.y[i] - p.mu[i] - p.w[(i, 0)] * dr.x - p.delta_eps[i] / dr.u[i];
        c += -0.5 * (LN_2PI + p.sigma2.ln()) + 0.5 * dr.u[i].ln()
            - 0.5 * dr.u[i] * r * r / p.sigma2;
    }
    let r = dr.x - p.delta_x[0] / dr.v;
    c + -0.5 * LN_2PI + 0.5 * dr.v.ln() - 0.5 * dr.v * r * r
}

fn features(dr: &Draw, p_star: &ModelParams) -> Vec<f64> {
    let (u, x, y) = (dr.u, dr.x, dr.y);
    vec![
        u[0],
        u[1],
        1.0 / u[0],
        1.0 / u[1],
        u[0].ln(),
        u[1].ln(),
        u[0] * x,
        u[1] * x,
        u[0] * x * x,
        u[1] * x * x,
        y[0],
        y[1],
        u[0] * y[0],
        u[1] * y[1],
        u[0] * y[0] * y[0],
        u[1] * y[1] * y[1],
        u[0] * y[0] * x,
        u[1] * y[1] * x,
        x,
        1.0 / dr.v,
        dr.v.ln(),
        dr.v * x * x,
        complete_log_density(p_star, dr),
    ]
}

/// Weighted sums for a self-normalized estimate and its standard error.
#[derive(Default)]
pub struct Accumulator {
    w: f64,
    w2: f64,
    wf: Vec<f64>,
    w2f: Vec<f64>,
    w2f2: Vec<f64>,
}

impl Accumulator {
    fn new(width: usize) -> Self {
        Self {
            wf: vec![0.0; width],
            w2f: vec![0.0; width],
            w2f2: vec![0.0; width],
            ..Self::default()
        }
    }

    fn add(&mut self, weight: f64, f: &[f64]) {
        self.w += weight;
        self.w2 += weight * weight;
        for (c, &v) in f.iter().enumerate() {
            self.wf[c] += weight * v;
            self.w2f[c] += weight * weight * v;
            self.w2f2[c] += weight * weight * v * v;
        }
    }

    pub fn estimate(&self, c: usize) -> (f64, f64) {
        let mean = self.wf[c] / self.w;
        let spread = self.w2f2[c] - 2.0 * mean * self.w2f[c] + mean * mean * self.w2;
        (mean, spread.max(0.0).sqrt() / self.w)
    }

    /// Log of the mean weight and its delta-method standard error.
    pub fn log_mean_weight(&self, draws: usize) -> (f64, f64) {
        let m = draws as f64;
        let mean = self.w / m;
        let var = self.w2 / m - mean * mean;
        (mean.ln(), (var / m).sqrt() / mean)
    }
}

fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// Monte Carlo posterior means for each row, sharing one set of prior draws.
pub fn oracle(p: &ModelParams, p_star: &ModelParams, data: &[Vec<Option<f64>>]) -> Vec<Accumulator> {
    let chi_eps: Vec<ChiSquared> = p.nu_eps.iter().map(|&n| ChiSquared::new(n).unwrap()).collect();
    let chi_x = ChiSquared::new(p.nu_x[0]).unwrap();
    let width = NAMES.len() + EXTRA.len();
    let mut acc: Vec<Accumulator> = data.iter().map(|_| Accumulator::new(width)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(20_260_101);
    let open = |rng: &mut ChaCha8Rng| loop {
        let s: f64 = rng.random();
        if s > 0.0 {
            return s;
        }
    };
    for _ in 0..DRAWS {
        let s_eps = open(&mut rng);
        let s_x = open(&mut rng);
        let u = [
            chi_eps[0].inverse_cdf(s_eps) / p.nu_eps[0],
            chi_eps[1].inverse_cdf(s_eps) / p.nu_eps[1],
        ];
        let v = chi_x.inverse_cdf(s_x) / p.nu_x[0];
        let z: f64 = rng.sample(StandardNormal);
        let x = p.delta_x[0] / v + z / v.sqrt();
        let noise: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let centre = |i: usize| p.mu[i] + p.w[(i, 0)] * x + p.delta_eps[i] / u[i];
        for (row, acc) in data.iter().zip(acc.iter_mut()) {
            let mut log_w = 0.0;
            let mut y = [0.0; 2];
            for i in 0..2 {
                let var = p.sigma2 / u[i];
                match row[i] {
                    Some(obs) => {
                        y[i] = obs;
                        log_w += normal_log_pdf(obs, centre(i), var);
                    }
                    None => y[i] = centre(i) + var.sqrt() * noise[i],
                }
            }
            let dr = Draw { u, v, x, y };
            acc.add(log_w.exp(), &features(&dr, p_star));
        }
    }
    acc
}

/// The quadrature value of every feature for a single-row data set.
pub fn quadrature_features(data: &DataSet, p: &ModelParams, p_star: &ModelParams) -> Vec<f64> {
    let grid = EmConfig::default().grid().unwrap();
    let s = integral_set(data, p, &grid).unwrap();
    vec![
        s.e_u[0],
        s.e_u[1],
        s.e_u_inv[0],
        s.e_u_inv[1],
        s.e_log_u[0],
        s.e_log_u[1],
        s.e_ux[(0, 0)],
        s.e_ux[(1, 0)],
        s.e_uxx[0][(0, 0)],
        s.e_uxx[1][(0, 0)],
        s.e_y[0],
        s.e_y[1],
        s.e_uy[0],
        s.e_uy[1],
        s.e_uyy[0],
        s.e_uyy[1],
        s.e_uyx[(0, 0)],
        s.e_uyx[(1, 0)],
        s.e_x[0],
        s.e_v_inv[0],
        s.e_log_v[0],
        s.e_vxx[0],
        q_value(&s, p_star),
    ]
}

/// Every mismatch between the quadrature E-step and the oracle beyond four
/// standard errors, plus the largest standardized gap seen.
pub fn estep_mismatches() -> (Vec<String>, f64) {
    let (p, p_star) = (truth(), star());
    let data = DataSet::from_rows(&rows()).unwrap();
    let acc = oracle(&p, &p_star, &rows());
    let grid = EmConfig::default().grid().unwrap();
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (t, acc) in acc.iter().enumerate() {
        let row = data.select_rows(&[t]);
        let quad = quadrature_features(&row, &p, &p_star);
        for (c, name) in NAMES.iter().chain(EXTRA.iter()).enumerate() {
            let (mc, se) = acc.estimate(c);
            let gap = (quad[c] - mc).abs();
            if se > 0.0 {
                worst = worst.max(gap / se);
            }
            // Observed coordinates are constants with zero standard error.
            if gap > 4.0 * se + 1e-9 * (1.0 + mc.abs()) {
                failures.push(format!("row {t} {name}: quadrature {} vs MC {mc} (se {se})", quad[c]));
            }
        }
        let (mc_ll, se) = acc.log_mean_weight(DRAWS);
        let ll = log_likelihood(&row, &p, &grid).unwrap();
        worst = worst.max((ll - mc_ll).abs() / se);
        if (ll - mc_ll).abs() > 4.0 * se {
            failures.push(format!("row {t} loglik: quadrature {ll} vs MC {mc_ll} (se {se})"));
        }
    }
    (failures, worst)
}

/// Relative gap between `Q` summed over rows and the product form
/// `sum_t I1_t prod_{s != t} I2_s / prod_s I2_s`.
pub fn ratio_product_gap() -> f64 {
    let (p, p_star) = (truth(), star());
    let data = DataSet::from_rows(&rows()).unwrap();
    let grid = EmConfig::default().grid().unwrap();
    let ratio = q_value(&integral_set(&data, &p, &grid).unwrap(), &p_star);

    // Per row: I2 is the marginal density and I1 the unnormalized integral
    // of the complete-data log-density against it.
    let n = data.n();
    let (mut i1, mut i2) = (Vec::new(), Vec::new());
    for t in 0..n {
        let row = data.select_rows(&[t]);
        let density = log_likelihood(&row, &p, &grid).unwrap().exp();
        let q = q_value(&integral_set(&row, &p, &grid).unwrap(), &p_star);
        i1.push(q * density);
        i2.push(density);
    }
    let joint: f64 = i2.iter().product();
    let numerator: f64 = (0..n)
        .map(|t| {
            let others: f64 = (0..n).filter(|&s| s != t).map(|s| i2[s]).product();
            i1[t] * others
        })
        .sum();
    (ratio - numerator / joint).abs() / ratio.abs()
}

//! Parameter vector, data containers and model-family descriptors shared by
//! every other module.
//!
//! Vectors such as `mu`, `delta_eps` and `delta_x` are stored as column
//! vectors but are interpreted as row vectors in all formulas: an observation
//! is modelled as `y = mu + x W^T + eps`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceReport;
use crate::error::{Error, Result};

/// Members of the generalized skew-t PPCA family plus the two classical
/// baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    /// Tipping-Bishop PPCA; all degrees of freedom infinite, no skew.
    GaussianPPCA,
    /// Classical Student-t PPCA: one mixing variable shared by latent factors and noise.
    StudentTPPCA,
    /// Unrestricted generalized skew-t PPCA.
    GStGeneral,
    /// Zero skew, per-marginal degrees of freedom.
    GroupedT,
    /// Zero skew, one degree of freedom per vector.
    StudentTGSt,
    /// Skew in the latent factors only, one degree of freedom per vector.
    SkewTGStSimplified,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::GaussianPPCA,
        ModelKind::StudentTPPCA,
        ModelKind::GStGeneral,
        ModelKind::GroupedT,
        ModelKind::StudentTGSt,
        ModelKind::SkewTGStSimplified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GaussianPPCA => "gaussian",
            ModelKind::StudentTPPCA => "student-t",
            ModelKind::GStGeneral => "gst",
            ModelKind::GroupedT => "grouped-t",
            ModelKind::StudentTGSt => "student-t-gst",
            ModelKind::SkewTGStSimplified => "skew-t-gst",
        }
    }

    /// Kinds whose likelihood is evaluated by quadrature over independent
    /// noise and latent mixing variables.
    pub fn is_gst(self) -> bool {
        !matches!(self, ModelKind::StudentTPPCA)
    }

    /// Closed-form baselines that require complete data.
    pub fn is_baseline(self) -> bool {
        matches!(self, ModelKind::GaussianPPCA | ModelKind::StudentTPPCA)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown model kind '{s}'")))
    }
}

/// Static parameters `[W, mu, sigma2, delta_eps, delta_x, nu_eps, nu_x]`.
///
/// Infinite degrees of freedom are allowed and mean the corresponding mixing
/// variable is identically one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamsRepr", try_from = "ParamsRepr")]
pub struct ModelParams {
    pub w: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma2: f64,
    pub delta_eps: DVector<f64>,
    pub delta_x: DVector<f64>,
    pub nu_eps: DVector<f64>,
    pub nu_x: DVector<f64>,
}

impl ModelParams {
    /// Zero-skew parameters with the given degrees of freedom.
    pub fn new(
        w: DMatrix<f64>,
        mu: DVector<f64>,
        sigma2: f64,
        nu_eps: DVector<f64>,
        nu_x: DVector<f64>,
    ) -> Self {
        let (d, k) = w.shape();
        Self {
            w,
            mu,
            sigma2,
            delta_eps: DVector::zeros(d),
            delta_x: DVector::zeros(k),
            nu_eps,
            nu_x,
        }
    }

    /// Gaussian PPCA parameters (infinite degrees of freedom, no skew).
    pub fn gaussian(w: DMatrix<f64>, mu: DVector<f64>, sigma2: f64) -> Self {
        let (d, k) = w.shape();
        Self::new(
            w,
            mu,
            sigma2,
            DVector::from_element(d, f64::INFINITY),
            DVector::from_element(k, f64::INFINITY),
        )
    }

    pub fn with_nu(mut self, nu_eps: DVector<f64>, nu_x: DVector<f64>) -> Self {
        self.nu_eps = nu_eps;
        self.nu_x = nu_x;
        self
    }

    pub fn with_skew(mut self, delta_eps: DVector<f64>, delta_x: DVector<f64>) -> Self {
        self.delta_eps = delta_eps;
        self.delta_x = delta_x;
        self
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        validate(self, kind).map(|_| ())
    }

    /// Checks shapes and positivity only, without kind constraints or the
    /// rank condition.
    pub fn check_shapes(&self) -> Result<()> {
        let (d, k) = self.w.shape();
        if d == 0 || k == 0 {
            return Err(Error::DimensionMismatch(format!("W is {d}x{k}")));
        }
        if k > d {
            return Err(Error::DimensionMismatch(format!(
                "latent dimension {k} exceeds {d}"
            )));
        }
        let checks = [
            ("mu", self.mu.len(), d),
            ("delta_eps", self.delta_eps.len(), d),
            ("nu_eps", self.nu_eps.len(), d),
            ("delta_x", self.delta_x.len(), k),
            ("nu_x", self.nu_x.len(), k),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(Error::DimensionMismatch(format!(
                    "{name} has length {got}, expected {want}"
                )));
            }
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::NonPositiveScale(self.sigma2));
        }
        if let Some(&nu) = self
            .nu_eps
            .iter()
            .chain(self.nu_x.iter())
            .find(|&&nu| !(nu > 0.0))
        {
            return Err(Error::NonPositiveDof(nu));
        }
        Ok(())
    }

    /// Flattened, kind-independent view used to measure parameter changes.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + self.w.len() + 2 * self.mu.len() + self.delta_x.len());
        out.push(self.sigma2);
        for i in 0..self.w.nrows() {
            for j in 0..self.w.ncols() {
                out.push(self.w[(i, j)]);
            }
        }
        out.extend(self.mu.iter());
        out.extend(self.delta_eps.iter());
        out.extend(self.delta_x.iter());
        out
    }
}

fn all_zero(v: &DVector<f64>) -> bool {
    v.iter().all(|&x| x == 0.0)
}

fn all_equal(v: &DVector<f64>) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Returns the parameters unchanged if all type invariants and the
/// constraints of `kind` hold.
pub fn validate(params: &ModelParams, kind: ModelKind) -> Result<ModelParams> {
    params.check_shapes()?;
    let smallest = params.w.clone().svd(false, false).singular_values.min();
    if !(smallest > 1e-12) {
        return Err(Error::RankDeficient(smallest));
    }
    let fail = |reason: &str| {
        Err(Error::KindConstraint {
            kind,
            reason: reason.to_owned(),
        })
    };
    let no_skew = all_zero(&params.delta_eps) && all_zero(&params.delta_x);
    let equal_nu = all_equal(&params.nu_eps) && all_equal(&params.nu_x);
    match kind {
        ModelKind::GaussianPPCA => {
            if !no_skew {
                return fail("skewness must be zero");
            }
            if params
                .nu_eps
                .iter()
                .chain(params.nu_x.iter())
                .any(|nu| nu.is_finite())
            {
                return fail("degrees of freedom must be infinite");
            }
        }
        ModelKind::StudentTPPCA => {
            if !no_skew {
                return fail("skewness must be zero");
            }
            let nu = params.nu_eps[0];
            if !nu.is_finite()
                || params
                    .nu_eps
                    .iter()
                    .chain(params.nu_x.iter())
                    .any(|&v| v != nu)
            {
                return fail("one finite degree of freedom must be shared by noise and factors");
            }
        }
        ModelKind::GroupedT => {
            if !no_skew {
                return fail("skewness must be zero");
            }
        }
        ModelKind::StudentTGSt => {
            if !no_skew {
                return fail("skewness must be zero");
            }
            if !equal_nu {
                return fail("degrees of freedom must be equal within each vector");
            }
        }
        ModelKind::SkewTGStSimplified => {
            if !all_zero(&params.delta_eps) {
                return fail("noise skewness must be zero");
            }
            if !equal_nu {
                return fail("degrees of freedom must be equal within each vector");
            }
        }
        ModelKind::GStGeneral => {}
    }
    Ok(params.clone())
}

/// Most specific family member consistent with the parameter values.
pub fn collapse_kind(params: &ModelParams) -> ModelKind {
    let no_eps_skew = all_zero(&params.delta_eps);
    let no_skew = no_eps_skew && all_zero(&params.delta_x);
    let equal_nu = all_equal(&params.nu_eps) && all_equal(&params.nu_x);
    let all_infinite = params
        .nu_eps
        .iter()
        .chain(params.nu_x.iter())
        .all(|nu| nu.is_infinite());
    match (no_skew, no_eps_skew, equal_nu) {
        (true, _, _) if all_infinite => ModelKind::GaussianPPCA,
        (true, _, true) => ModelKind::StudentTGSt,
        (true, _, false) => ModelKind::GroupedT,
        (false, true, true) => ModelKind::SkewTGStSimplified,
        _ => ModelKind::GStGeneral,
    }
}

/// Which parameter blocks the M-step updates. Fixed blocks keep their
/// current values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FreeParams {
    pub w: bool,
    pub mu: bool,
    pub sigma2: bool,
    pub delta_eps: bool,
    pub delta_x: bool,
}

impl FreeParams {
    pub const ALL: FreeParams = FreeParams {
        w: true,
        mu: true,
        sigma2: true,
        delta_eps: true,
        delta_x: true,
    };

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::GStGeneral => Self::ALL,
            ModelKind::SkewTGStSimplified => Self {
                delta_eps: false,
                ..Self::ALL
            },
            _ => Self {
                delta_eps: false,
                delta_x: false,
                ..Self::ALL
            },
        }
    }

    /// Free blocks of the centred model: only `W` and `sigma2`.
    pub fn centred() -> Self {
        Self {
            w: true,
            sigma2: true,
            mu: false,
            delta_eps: false,
            delta_x: false,
        }
    }
}

/// Selected blocks as a flat vector: `sigma2`, `W` row by row, `mu`,
/// `delta_eps`, `delta_x`.
pub fn pack(params: &ModelParams, sel: FreeParams) -> Vec<f64> {
    let (d, k) = params.w.shape();
    let mut out = Vec::new();
    if sel.sigma2 {
        out.push(params.sigma2);
    }
    if sel.w {
        for i in 0..d {
            for j in 0..k {
                out.push(params.w[(i, j)]);
            }
        }
    }
    if sel.mu {
        out.extend(params.mu.iter());
    }
    if sel.delta_eps {
        out.extend(params.delta_eps.iter());
    }
    if sel.delta_x {
        out.extend(params.delta_x.iter());
    }
    out
}

/// Inverse of [`pack`]: `base` with the selected entries replaced by `theta`.
pub fn unpack(base: &ModelParams, sel: FreeParams, theta: &[f64]) -> ModelParams {
    let (d, k) = base.w.shape();
    let mut p = base.clone();
    let mut it = theta.iter().copied();
    let mut next = || it.next().expect("parameter vector too short");
    if sel.sigma2 {
        p.sigma2 = next();
    }
    if sel.w {
        for i in 0..d {
            for j in 0..k {
                p.w[(i, j)] = next();
            }
        }
    }
    if sel.mu {
        for i in 0..d {
            p.mu[i] = next();
        }
    }
    if sel.delta_eps {
        for i in 0..d {
            p.delta_eps[i] = next();
        }
    }
    if sel.delta_x {
        for j in 0..k {
            p.delta_x[j] = next();
        }
    }
    p
}

/// `N x d` observation matrix with an observed-entry mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    y: DMatrix<f64>,
    observed: Vec<bool>,
}

impl DataSet {
    /// Fully observed data set.
    pub fn complete(y: DMatrix<f64>) -> Result<Self> {
        let observed = vec![true; y.len()];
        Self::with_mask(y, observed)
    }

    /// `observed` is row-major with `true` for observed entries. Missing
    /// entries are stored as NaN.
    pub fn with_mask(mut y: DMatrix<f64>, observed: Vec<bool>) -> Result<Self> {
        let (n, d) = y.shape();
        if observed.len() != n * d {
            return Err(Error::DimensionMismatch(format!(
                "mask has {} entries for a {n}x{d} matrix",
                observed.len()
            )));
        }
        if n == 0 || d == 0 {
            return Err(Error::InvalidInput("empty data set".into()));
        }
        for t in 0..n {
            let row = &observed[t * d..(t + 1) * d];
            if !row.iter().any(|&o| o) {
                return Err(Error::EmptyRow(t));
            }
            for i in 0..d {
                if row[i] {
                    if !y[(t, i)].is_finite() {
                        return Err(Error::InvalidInput(format!(
                            "non-finite observed value at ({t}, {i})"
                        )));
                    }
                } else {
                    y[(t, i)] = f64::NAN;
                }
            }
        }
        Ok(Self { y, observed })
    }

    /// Builds a data set from rows with `None` marking missing values.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::DimensionMismatch(
                "rows have different lengths".into(),
            ));
        }
        let y = DMatrix::from_fn(n, d, |t, i| rows[t][i].unwrap_or(f64::NAN));
        let observed = rows
            .iter()
            .flat_map(|r| r.iter().map(Option::is_some))
            .collect();
        Self::with_mask(y, observed)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn is_observed(&self, t: usize, i: usize) -> bool {
        self.observed[t * self.d() + i]
    }

    pub fn row_mask(&self, t: usize) -> &[bool] {
        let d = self.d();
        &self.observed[t * d..(t + 1) * d]
    }

    pub fn mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    pub fn missing_fraction(&self) -> f64 {
        self.observed.iter().filter(|&&o| !o).count() as f64 / self.observed.len() as f64
    }

    /// Subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let d = self.d();
        let y = DMatrix::from_fn(rows.len(), d, |r, i| self.y[(rows[r], i)]);
        let observed = rows
            .iter()
            .flat_map(|&t| self.row_mask(t).iter().copied())
            .collect();
        Self { y, observed }
    }

    /// Column-wise median of the observed entries.
    pub fn observed_medians(&self) -> DVector<f64> {
        DVector::from_fn(self.d(), |i, _| {
            let mut col: Vec<f64> = (0..self.n())
                .filter(|&t| self.is_observed(t, i))
                .map(|t| self.y[(t, i)])
                .collect();
            median_in_place(&mut col)
        })
    }

    /// Copy of `y` with missing entries replaced by `fill[i]`.
    pub fn imputed(&self, fill: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.d(), |t, i| {
            if self.is_observed(t, i) {
                self.y[(t, i)]
            } else {
                fill[i]
            }
        })
    }
}

pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Outcome of an EM fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub kind: ModelKind,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub covariance: CovarianceReport,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        self.loglik_trace
            .last()
            .copied()
            .unwrap_or(f64::NEG_INFINITY)
    }
}

/// Serialized form of [`ModelParams`]: nested row-major arrays, infinite
/// degrees of freedom written as `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsRepr {
    pub w: Vec<Vec<f64>>,
    pub mu: Vec<f64>,
    pub sigma2: f64,
    pub delta_eps: Vec<f64>,
    pub delta_x: Vec<f64>,
    pub nu_eps: Vec<Option<f64>>,
    pub nu_x: Vec<Option<f64>>,
}

fn nu_to_repr(nu: &DVector<f64>) -> Vec<Option<f64>> {
    nu.iter().map(|&v| v.is_finite().then_some(v)).collect()
}

fn nu_from_repr(nu: &[Option<f64>]) -> DVector<f64> {
    DVector::from_iterator(nu.len(), nu.iter().map(|v| v.unwrap_or(f64::INFINITY)))
}

impl From<ModelParams> for ParamsRepr {
    fn from(p: ModelParams) -> Self {
        Self {
            w: p.w
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            mu: p.mu.iter().copied().collect(),
            sigma2: p.sigma2,
            delta_eps: p.delta_eps.iter().copied().collect(),
            delta_x: p.delta_x.iter().copied().collect(),
            nu_eps: nu_to_repr(&p.nu_eps),
            nu_x: nu_to_repr(&p.nu_x),
        }
    }
}

impl TryFrom<ParamsRepr> for ModelParams {
    type Error = Error;

    fn try_from(r: ParamsRepr) -> Result<Self> {
        let d = r.w.len();
        let k = r.w.first().map_or(0, Vec::len);
        if r.w.iter().any(|row| row.len() != k) {
            return Err(Error::DimensionMismatch("ragged W".into()));
        }
        let params = ModelParams {
            w: DMatrix::from_fn(d, k, |i, j| r.w[i][j]),
            mu: DVector::from_vec(r.mu),
            sigma2: r.sigma2,
            delta_eps: DVector::from_vec(r.delta_eps),
            delta_x: DVector::from_vec(r.delta_x),
            nu_eps: nu_from_repr(&r.nu_eps),
            nu_x: nu_from_repr(&r.nu_x),
        };
        params.check_shapes()?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn paper_w() -> DMatrix<f64> {
        dmatrix![0.3, 1.0; 1.23, 0.8; 0.021, 0.98]
    }

    fn student(nu_eps: DVector<f64>, nu_x: DVector<f64>) -> ModelParams {
        ModelParams::new(paper_w(), DVector::zeros(3), 0.1, nu_eps, nu_x)
    }

    #[test]
    fn accepts_reference_parameters() {
        let p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0]);
        assert_eq!(validate(&p, ModelKind::StudentTGSt).unwrap(), p);
        assert!(validate(
            &ModelParams::gaussian(paper_w(), DVector::zeros(3), 0.1),
            ModelKind::GaussianPPCA
        )
        .is_ok());
    }

    #[test]
    fn rejects_zero_scale() {
        let mut p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0]);
        p.sigma2 = 0.0;
        assert_eq!(
            validate(&p, ModelKind::GStGeneral),
            Err(Error::NonPositiveScale(0.0))
        );
    }

    #[test]
    fn rejects_skew_under_grouped_t() {
        let p = student(dvector![4.0, 100.0, 4.0], dvector![4.0, 4.0])
            .with_skew(DVector::zeros(3), dvector![0.5, 0.0]);
        assert!(matches!(
            validate(&p, ModelKind::GroupedT),
            Err(Error::KindConstraint {
                kind: ModelKind::GroupedT,
                ..
            })
        ));
    }

    #[test]
    fn rejects_bad_shapes_and_dof() {
        let mut p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0]);
        p.mu = DVector::zeros(2);
        assert!(matches!(
            validate(&p, ModelKind::GStGeneral),
            Err(Error::DimensionMismatch(_))
        ));
        let p = student(dvector![4.0, -1.0, 4.0], dvector![4.0, 4.0]);
        assert_eq!(
            validate(&p, ModelKind::GStGeneral),
            Err(Error::NonPositiveDof(-1.0))
        );
        let mut p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0]);
        p.w = dmatrix![1.0, 2.0; 2.0, 4.0; 0.0, 0.0];
        assert!(matches!(
            validate(&p, ModelKind::GStGeneral),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn collapse_examples() {
        let p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0]);
        assert_eq!(collapse_kind(&p), ModelKind::StudentTGSt);
        let p = student(dvector![4.0, 100.0, 4.0], dvector![4.0, 4.0]);
        assert_eq!(collapse_kind(&p), ModelKind::GroupedT);
        let p = student(dvector![4.0, 4.0, 4.0], dvector![4.0, 4.0])
            .with_skew(DVector::zeros(3), dvector![0.5, 0.0]);
        assert_eq!(collapse_kind(&p), ModelKind::SkewTGStSimplified);
        let p = student(dvector![4.0, 10.0, 4.0], dvector![4.0, 4.0])
            .with_skew(DVector::zeros(3), dvector![0.5, 0.0]);
        assert_eq!(collapse_kind(&p), ModelKind::GStGeneral);
        let p = ModelParams::gaussian(paper_w(), DVector::zeros(3), 0.1);
        assert_eq!(collapse_kind(&p), ModelKind::GaussianPPCA);
    }

    #[test]
    fn collapsed_kind_validates() {
        for nu_eps in [dvector![4.0, 4.0, 4.0], dvector![2.0, 100.0, 4.0]] {
            for dx in [dvector![0.0, 0.0], dvector![0.3, -0.1]] {
                let p =
                    student(nu_eps.clone(), dvector![6.0, 6.0]).with_skew(DVector::zeros(3), dx);
                let kind = collapse_kind(&p);
                let again = validate(&p, kind).unwrap();
                assert_eq!(collapse_kind(&again), kind);
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
        assert!("nope".parse::<ModelKind>().is_err());
    }

    #[test]
    fn dataset_rejects_empty_rows() {
        let rows = vec![vec![Some(1.0), None], vec![None, None]];
        assert_eq!(DataSet::from_rows(&rows), Err(Error::EmptyRow(1)));
    }

    #[test]
    fn dataset_medians_skip_missing() {
        let rows = vec![
            vec![Some(1.0), None],
            vec![Some(3.0), Some(2.0)],
            vec![Some(100.0), Some(4.0)],
        ];
        let data = DataSet::from_rows(&rows).unwrap();
        assert_eq!(data.observed_medians(), dvector![3.0, 3.0]);
        assert!(!data.is_complete());
        assert!((data.missing_fraction() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn params_serde_keeps_infinite_dof() {
        let p = ModelParams::gaussian(paper_w(), DVector::zeros(3), 0.1);
        let repr = ParamsRepr::from(p.clone());
        assert!(repr.nu_eps.iter().all(Option::is_none));
        assert_eq!(ModelParams::try_from(repr).unwrap(), p);
    }
}

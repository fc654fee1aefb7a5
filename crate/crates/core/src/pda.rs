//! Principal differential analysis for second-order linear ODEs.
//!
//! Each observed curve `y_i` is represented as a spline `x_i(t) = C_i^T phi(t)`
//! and the operator
//!
//! ```text
//! L x = x'' + w1 x' + w0 x
//! ```
//!
//! is estimated by alternating two linear solves:
//!
//! * for fixed ODE parameters, the spline coefficients minimise the data misfit
//!   plus `lambda * C_i^T J C_i`, where `J = int psi psi^T dt` and
//!   `psi = phi'' + w1 phi' + w0 phi`;
//! * for fixed coefficients, the parameters minimise `sum_i int (L x_i)^2 dt`,
//!   which is a linear least-squares problem in `(w1, w0)` or, for
//!   time-varying coefficients `w1(t) = h1^T phi(t)` and `w0(t) = h0^T phi(t)`,
//!   in the stacked vector `h = [h1; h0]`.
//!
//! The smoothing parameter is chosen by generalized cross-validation on the
//! first pass and then held fixed.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{
    design_matrix, dot_local, make_quadrature, BasisSystem, NodeTable, QuadratureRule,
    DEFAULT_POINTS_PER_SPAN, LOCAL,
};
use crate::error::{Error, Result};
use crate::signal::BeatRecord;

/// Whether the ODE coefficients are scalars or functions of time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Constant,
    TimeVarying,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Constant => "constant",
            Mode::TimeVarying => "time-varying",
        })
    }
}

/// ODE coefficients. Time-varying coefficients are spline coefficient
/// vectors in the same basis as the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum OdeParams {
    Constant { w1: f64, w0: f64 },
    TimeVarying { h1: Vec<f64>, h0: Vec<f64> },
}

impl OdeParams {
    pub fn zeros(mode: Mode, k: usize) -> Self {
        match mode {
            Mode::Constant => OdeParams::Constant { w1: 0.0, w0: 0.0 },
            Mode::TimeVarying => OdeParams::TimeVarying {
                h1: vec![0.0; k],
                h0: vec![0.0; k],
            },
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            OdeParams::Constant { .. } => Mode::Constant,
            OdeParams::TimeVarying { .. } => Mode::TimeVarying,
        }
    }

    /// `[w1, w0]` or `[h1; h0]`.
    pub fn to_vector(&self) -> Vec<f64> {
        match self {
            OdeParams::Constant { w1, w0 } => vec![*w1, *w0],
            OdeParams::TimeVarying { h1, h0 } => h1.iter().chain(h0).copied().collect(),
        }
    }

    fn from_vector(mode: Mode, v: &[f64]) -> Self {
        match mode {
            Mode::Constant => OdeParams::Constant { w1: v[0], w0: v[1] },
            Mode::TimeVarying => {
                let k = v.len() / 2;
                OdeParams::TimeVarying {
                    h1: v[..k].to_vec(),
                    h0: v[k..].to_vec(),
                }
            }
        }
    }

    fn check(&self, k: usize) -> Result<()> {
        match self {
            OdeParams::Constant { w1, w0 } => {
                if !(w1.is_finite() && w0.is_finite()) {
                    return Err(Error::invalid("ODE parameters must be finite"));
                }
            }
            OdeParams::TimeVarying { h1, h0 } => {
                if h1.len() != k || h0.len() != k {
                    return Err(Error::invalid(format!(
                        "time-varying parameters need {k} coefficients each, got {} and {}",
                        h1.len(),
                        h0.len()
                    )));
                }
                if h1.iter().chain(h0).any(|v| !v.is_finite()) {
                    return Err(Error::invalid("ODE parameters must be finite"));
                }
            }
        }
        Ok(())
    }

    /// `(w1(t), w0(t))` given the local basis values at `t`.
    fn local_coefficients(&self, d0: &[f64; LOCAL], first: usize) -> (f64, f64) {
        match self {
            OdeParams::Constant { w1, w0 } => (*w1, *w0),
            OdeParams::TimeVarying { h1, h0 } => {
                (dot_local(d0, &h1[first..]), dot_local(d0, &h0[first..]))
            }
        }
    }
}

/// A fitted second-order model with its fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeModel {
    pub params: OdeParams,
    pub basis: BasisSystem,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `sum_i int (L x_i)^2 dt` at the returned parameters.
    pub sse_p: f64,
    /// Residual variance estimate `SSE / (n (T - tr H))`. Reported only.
    pub noise_variance: f64,
}

impl OdeModel {
    pub fn mode(&self) -> Mode {
        self.params.mode()
    }

    /// `(w1, w0)` for constant models.
    pub fn constant_params(&self) -> Option<(f64, f64)> {
        match self.params {
            OdeParams::Constant { w1, w0 } => Some((w1, w0)),
            OdeParams::TimeVarying { .. } => None,
        }
    }

    /// Coefficients `(w1(t), w0(t))` at time `t`.
    pub fn coefficients_at(&self, t: f64) -> Result<(f64, f64)> {
        match &self.params {
            OdeParams::Constant { w1, w0 } => Ok((*w1, *w0)),
            OdeParams::TimeVarying { h1, h0 } => Ok((
                self.basis.eval_spline(h1, t, 0)?,
                self.basis.eval_spline(h0, t, 0)?,
            )),
        }
    }
}

/// Spline coefficients for a set of curves, one row per curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    pub coefs: DMatrix<f64>,
    pub residual_sse: f64,
}

impl CoefficientSet {
    pub fn num_curves(&self) -> usize {
        self.coefs.nrows()
    }

    pub fn curve(&self, i: usize) -> Vec<f64> {
        self.coefs.row(i).iter().copied().collect()
    }
}

/// `J = int psi(t) psi(t)^T dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix(pub DMatrix<f64>);

impl PenaltyMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub fn penalty_matrix(
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
) -> Result<PenaltyMatrix> {
    params.check(basis.len())?;
    let table = NodeTable::new(basis, quad)?;
    Ok(penalty_from_table(basis.len(), &table, params))
}

fn penalty_from_table(k: usize, table: &NodeTable, params: &OdeParams) -> PenaltyMatrix {
    let mut j = DMatrix::zeros(k, k);
    for (lv, &w) in table.values.iter().zip(&table.weights) {
        let (w1, w0) = params.local_coefficients(&lv.ders[0], lv.first);
        let psi: [f64; LOCAL] =
            std::array::from_fn(|a| lv.ders[2][a] + w1 * lv.ders[1][a] + w0 * lv.ders[0][a]);
        for a in 0..LOCAL {
            for b in 0..LOCAL {
                j[(lv.first + a, lv.first + b)] += w * psi[a] * psi[b];
            }
        }
    }
    PenaltyMatrix(j)
}

/// Design matrix and its Gram matrix for one shared sampling grid.
struct Smoother {
    phi: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Smoother {
    fn new(basis: &BasisSystem, times: &[f64]) -> Result<Self> {
        let phi = design_matrix(basis, times, 0)?;
        let gram = phi.transpose() * &phi;
        Ok(Smoother { phi, gram })
    }

    fn factor(
        &self,
        penalty: &PenaltyMatrix,
        lambda: f64,
    ) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let (t, k) = self.phi.shape();
        if lambda == 0.0 && t < k {
            return Err(Error::RankDeficient(format!(
                "{t} samples for {k} basis functions at lambda = 0"
            )));
        }
        let a = &self.gram + lambda * penalty.matrix();
        a.cholesky().ok_or_else(|| {
            Error::RankDeficient(format!(
                "penalized normal matrix not positive definite at lambda = {lambda}"
            ))
        })
    }

    /// Coefficients (n x K), residual SSE, and trace of the hat matrix.
    fn solve(
        &self,
        y: &DMatrix<f64>,
        penalty: &PenaltyMatrix,
        lambda: f64,
    ) -> Result<(DMatrix<f64>, Vec<f64>, f64)> {
        let chol = self.factor(penalty, lambda)?;
        let rhs = self.phi.transpose() * y.transpose();
        let ct = chol.solve(&rhs);
        let fitted = &self.phi * &ct;
        let resid = y.transpose() - fitted;
        let sse_per_curve = resid
            .column_iter()
            .map(|c| c.norm_squared())
            .collect::<Vec<_>>();
        let trace = chol.solve(&self.gram).trace();
        if ct.iter().any(|v| !v.is_finite()) {
            return Err(Error::RankDeficient(format!(
                "non-finite coefficients at lambda = {lambda}"
            )));
        }
        Ok((ct.transpose(), sse_per_curve, trace))
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "smoothing parameter must be finite and nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

fn check_samples(y: &DMatrix<f64>, times: &[f64]) -> Result<()> {
    if y.nrows() == 0 {
        return Err(Error::invalid("at least one curve is required"));
    }
    if y.ncols() != times.len() {
        return Err(Error::invalid(format!(
            "sample matrix has {} columns but {} times were given",
            y.ncols(),
            times.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("samples must be finite"));
    }
    Ok(())
}

/// Penalized least-squares spline coefficients for each row of `y`.
///
/// The block system decouples by curve, so one Cholesky factorization of
/// `Phi^T Phi + lambda J` serves every curve.
pub fn estimate_coefficients(
    y: &DMatrix<f64>,
    times: &[f64],
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
    lambda: f64,
) -> Result<CoefficientSet> {
    check_lambda(lambda)?;
    check_samples(y, times)?;
    let penalty = penalty_matrix(basis, quad, params)?;
    let smoother = Smoother::new(basis, times)?;
    let (coefs, sse, _) = smoother.solve(y, &penalty, lambda)?;
    Ok(CoefficientSet {
        coefs,
        residual_sse: sse.iter().sum(),
    })
}

/// Value of the penalized objective
/// `sum_i ||Y_i - Phi C_i||^2 + lambda C_i^T J C_i` for given coefficients.
pub fn penalized_objective(
    y: &DMatrix<f64>,
    times: &[f64],
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
    lambda: f64,
    coefs: &DMatrix<f64>,
) -> Result<f64> {
    check_samples(y, times)?;
    let penalty = penalty_matrix(basis, quad, params)?;
    let phi = design_matrix(basis, times, 0)?;
    let resid = y.transpose() - &phi * coefs.transpose();
    let mut total = resid.norm_squared();
    for row in coefs.row_iter() {
        let c = row.transpose();
        total += lambda * (c.transpose() * penalty.matrix() * &c)[(0, 0)];
    }
    Ok(total)
}

/// Normal equations `M h = r` of the parameter step, with
/// `M = int G^T C^T C G dt` and `r = -int G^T C^T C phi'' dt`.
fn parameter_normal_equations(
    coefs: &DMatrix<f64>,
    k: usize,
    table: &NodeTable,
    mode: Mode,
) -> (DMatrix<f64>, DVector<f64>) {
    let dim = match mode {
        Mode::Constant => 2,
        Mode::TimeVarying => 2 * k,
    };
    let mut m = DMatrix::zeros(dim, dim);
    let mut r = DVector::zeros(dim);
    for (lv, &w) in table.values.iter().zip(&table.weights) {
        for c in coefs.row_iter() {
            let local: Vec<f64> = (0..LOCAL).map(|a| c[lv.first + a]).collect();
            let x = dot_local(&lv.ders[0], &local);
            let dx = dot_local(&lv.ders[1], &local);
            let ddx = dot_local(&lv.ders[2], &local);
            match mode {
                Mode::Constant => {
                    let g = [dx, x];
                    for a in 0..2 {
                        for b in 0..2 {
                            m[(a, b)] += w * g[a] * g[b];
                        }
                        r[a] -= w * g[a] * ddx;
                    }
                }
                Mode::TimeVarying => {
                    // nonzero entries of g = [phi x'; phi x]
                    let mut idx = [0usize; 2 * LOCAL];
                    let mut g = [0.0; 2 * LOCAL];
                    for a in 0..LOCAL {
                        idx[a] = lv.first + a;
                        g[a] = lv.ders[0][a] * dx;
                        idx[LOCAL + a] = k + lv.first + a;
                        g[LOCAL + a] = lv.ders[0][a] * x;
                    }
                    for a in 0..2 * LOCAL {
                        for b in 0..2 * LOCAL {
                            m[(idx[a], idx[b])] += w * g[a] * g[b];
                        }
                        r[idx[a]] -= w * g[a] * ddx;
                    }
                }
            }
        }
    }
    (m, r)
}

/// Condition number above which the time-varying Gram system is ridged.
const TV_CONDITION_LIMIT: f64 = 1e12;
const TV_RIDGE: f64 = 1e-10;

/// Least-squares ODE parameters for fixed spline coefficients.
pub fn estimate_parameters(
    coefs: &CoefficientSet,
    basis: &BasisSystem,
    quad: &QuadratureRule,
    mode: Mode,
) -> Result<OdeParams> {
    let k = basis.len();
    if coefs.coefs.ncols() != k {
        return Err(Error::invalid(format!(
            "coefficient matrix has {} columns, basis has {k} functions",
            coefs.coefs.ncols()
        )));
    }
    if coefs.coefs.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("spline coefficients must be finite"));
    }
    let table = NodeTable::new(basis, quad)?;
    let (mut m, r) = parameter_normal_equations(&coefs.coefs, k, &table, mode);
    let trace = m.trace();
    if !(trace > 0.0) {
        return Err(Error::DegenerateData(
            "parameter Gram matrix vanishes (curves identically zero?)".into(),
        ));
    }

    let h = match mode {
        Mode::Constant => {
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            if !(det > 1e-14 * m[(0, 0)] * m[(1, 1)]) {
                return Err(Error::DegenerateData(
                    "parameter Gram matrix is singular".into(),
                ));
            }
            vec![
                (m[(1, 1)] * r[0] - m[(0, 1)] * r[1]) / det,
                (m[(0, 0)] * r[1] - m[(1, 0)] * r[0]) / det,
            ]
        }
        Mode::TimeVarying => {
            let eig = SymmetricEigen::new(m.clone());
            let max = eig.eigenvalues.max();
            let min = eig.eigenvalues.min();
            let cond = if min > 0.0 { max / min } else { f64::INFINITY };
            if cond > TV_CONDITION_LIMIT {
                for i in 0..m.nrows() {
                    m[(i, i)] += TV_RIDGE * trace;
                }
            }
            let chol = m.cholesky().ok_or_else(|| {
                Error::DegenerateData("parameter Gram matrix is not positive definite".into())
            })?;
            chol.solve(&r).iter().copied().collect()
        }
    };
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateData("non-finite ODE parameters".into()));
    }
    Ok(OdeParams::from_vector(mode, &h))
}

/// Gradient of the parameter objective at `params`, `M h - r`, and the
/// scale `||r||_inf` it should be compared against.
pub fn stationarity_residual(
    coefs: &CoefficientSet,
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
) -> Result<(f64, f64)> {
    params.check(basis.len())?;
    let table = NodeTable::new(basis, quad)?;
    let (m, r) = parameter_normal_equations(&coefs.coefs, basis.len(), &table, params.mode());
    let h = DVector::from_vec(params.to_vector());
    let grad = &m * h - &r;
    Ok((grad.amax(), r.amax()))
}

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaChoice {
    Fixed(f64),
    Gcv(Vec<f64>),
}

impl Default for LambdaChoice {
    fn default() -> Self {
        LambdaChoice::Gcv(default_lambda_grid())
    }
}

/// 21 log-spaced values from 1e-8 to 1e2.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..21).map(|i| 10f64.powf(-8.0 + 0.5 * i as f64)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub mode: Mode,
    pub lambda: LambdaChoice,
    pub max_iter: usize,
    pub tol: f64,
    pub points_per_span: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: Mode::Constant,
            lambda: LambdaChoice::default(),
            max_iter: 50,
            tol: 1e-6,
            points_per_span: DEFAULT_POINTS_PER_SPAN,
        }
    }
}

impl FitOptions {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_lambda(mut self, lambda: LambdaChoice) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }
}

/// Samples of records sharing one grid, as an `n x T` matrix plus the grid.
pub fn stack_records(records: &[BeatRecord]) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("at least one record is required"))?;
    let t = first.len();
    for (i, r) in records.iter().enumerate() {
        if r.len() != t || (r.sample_rate - first.sample_rate).abs() > 1e-9 * first.sample_rate {
            return Err(Error::invalid(format!(
                "record {i} ('{}') does not share the time grid of record 0",
                r.source_id
            )));
        }
    }
    let y = DMatrix::from_fn(records.len(), t, |i, j| records[i].values[j]);
    Ok((y, first.times.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSelection {
    pub lambda: f64,
    /// `(lambda, GCV score)` for each grid point, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Generalized cross-validation over `grid`, scores averaged across records.
///
/// `GCV(lambda) = T * SSE(lambda) / (T - tr H(lambda))^2`. Grid points where
/// the penalized system cannot be factored score `+inf`.
pub fn select_lambda(
    records: &[BeatRecord],
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
    grid: &[f64],
) -> Result<LambdaSelection> {
    let (y, times) = stack_records(records)?;
    select_lambda_samples(&y, &times, basis, quad, params, grid)
}

fn select_lambda_samples(
    y: &DMatrix<f64>,
    times: &[f64],
    basis: &BasisSystem,
    quad: &QuadratureRule,
    params: &OdeParams,
    grid: &[f64],
) -> Result<LambdaSelection> {
    if grid.is_empty() {
        return Err(Error::invalid("lambda grid is empty"));
    }
    if grid.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("lambda grid values must be positive"));
    }
    check_samples(y, times)?;
    let penalty = penalty_matrix(basis, quad, params)?;
    let smoother = Smoother::new(basis, times)?;
    let n_obs = times.len() as f64;

    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let score = match smoother.solve(y, &penalty, lambda) {
            Ok((_, sse, trace)) if n_obs - trace > 0.0 => {
                let denom = (n_obs - trace).powi(2);
                sse.iter().map(|s| n_obs * s / denom).sum::<f64>() / sse.len() as f64
            }
            _ => f64::INFINITY,
        };
        scores.push((lambda, score));
        if score.is_finite() && best.is_none_or(|(_, b)| score < b) {
            best = Some((lambda, score));
        }
    }
    let (lambda, _) = best.ok_or_else(|| {
        Error::RankDeficient("no grid value gives a solvable smoothing problem".into())
    })?;
    Ok(LambdaSelection { lambda, scores })
}

/// Iterated principal differential analysis over records sharing a grid.
///
/// Starts from zero parameters (so the first smooth is a plain roughness
/// penalty), picks `lambda` once, then alternates coefficient and parameter
/// updates until the relative sup-norm change in the parameters drops below
/// `tol` or `max_iter` passes have run. Non-convergence is reported through
/// [`OdeModel::converged`], not as an error.
pub fn fit(
    records: &[BeatRecord],
    basis: &BasisSystem,
    options: &FitOptions,
) -> Result<(OdeModel, CoefficientSet)> {
    if options.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let (y, times) = stack_records(records)?;
    fit_samples(&y, &times, basis, options)
}

/// [`fit`] on a raw `n x T` sample matrix.
pub fn fit_samples(
    y: &DMatrix<f64>,
    times: &[f64],
    basis: &BasisSystem,
    options: &FitOptions,
) -> Result<(OdeModel, CoefficientSet)> {
    if options.max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    check_samples(y, times)?;
    let k = basis.len();
    let quad = make_quadrature(basis, options.points_per_span)?;
    let table = NodeTable::new(basis, &quad)?;
    let smoother = Smoother::new(basis, times)?;

    let mut params = OdeParams::zeros(options.mode, k);
    let lambda = match &options.lambda {
        LambdaChoice::Fixed(l) => {
            check_lambda(*l)?;
            *l
        }
        LambdaChoice::Gcv(grid) => {
            select_lambda_samples(y, times, basis, &quad, &params, grid)?.lambda
        }
    };

    let mut converged = false;
    let mut iterations = 0;
    let mut last = None;
    while iterations < options.max_iter {
        iterations += 1;
        let penalty = penalty_from_table(k, &table, &params);
        let (coefs, sse, trace) = smoother.solve(y, &penalty, lambda)?;
        let set = CoefficientSet {
            coefs,
            residual_sse: sse.iter().sum(),
        };
        let next = estimate_parameters(&set, basis, &quad, options.mode)?;
        let old = params.to_vector();
        let new = next.to_vector();
        let step = old
            .iter()
            .zip(&new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let size = old.iter().map(|v| v.abs()).fold(0.0, f64::max);
        params = next;
        last = Some((set, trace));
        if step / (1.0 + size) < options.tol {
            converged = true;
            break;
        }
    }
    let (set, trace) = last.expect("at least one iteration ran");

    let penalty = penalty_from_table(k, &table, &params);
    let sse_p = set
        .coefs
        .row_iter()
        .map(|row| {
            let c = row.transpose();
            (c.transpose() * penalty.matrix() * &c)[(0, 0)]
        })
        .sum::<f64>()
        .max(0.0);
    let dof = y.nrows() as f64 * (times.len() as f64 - trace);
    let noise_variance = if dof > 0.0 {
        set.residual_sse / dof
    } else {
        f64::NAN
    };

    Ok((
        OdeModel {
            params,
            basis: basis.clone(),
            lambda,
            iterations,
            converged,
            sse_p,
            noise_variance,
        },
        set,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;

    fn uniform(n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|k| k as f64 / fs).collect()
    }

    fn samples(times: &[f64], f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        DMatrix::from_fn(1, times.len(), |_, j| f(times[j]))
    }

    fn qrs_setup() -> (BasisSystem, QuadratureRule, Vec<f64>) {
        let times = uniform(72, 360.0);
        let basis = make_basis((0.0, times[71]), 0.012).unwrap();
        let quad = make_quadrature(&basis, DEFAULT_POINTS_PER_SPAN).unwrap();
        (basis, quad, times)
    }

    fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(m.clone()).eigenvalues.min()
    }

    #[test]
    fn zero_params_give_roughness_penalty() {
        let (basis, quad, _) = qrs_setup();
        let j = penalty_matrix(
            &basis,
            &quad,
            &OdeParams::zeros(Mode::Constant, basis.len()),
        )
        .unwrap();
        let mut expect = DMatrix::zeros(basis.len(), basis.len());
        for (&t, &w) in quad.nodes.iter().zip(&quad.weights) {
            let d2 = DVector::from_vec(basis.eval(t, 2).unwrap());
            expect += w * &d2 * d2.transpose();
        }
        assert!((j.matrix() - &expect).amax() < 1e-12 * expect.amax());
        let tv = penalty_matrix(
            &basis,
            &quad,
            &OdeParams::zeros(Mode::TimeVarying, basis.len()),
        )
        .unwrap();
        assert_eq!(tv, j);
    }

    #[test]
    fn penalty_is_symmetric_psd() {
        let (basis, quad, _) = qrs_setup();
        let k = basis.len();
        let cases = [
            OdeParams::Constant {
                w1: 2.598,
                w0: 9394.2,
            },
            OdeParams::Constant {
                w1: -6.97,
                w0: 4535.9,
            },
            OdeParams::TimeVarying {
                h1: (0..k).map(|i| (i as f64).sin()).collect(),
                h0: (0..k).map(|i| 8000.0 + 100.0 * i as f64).collect(),
            },
        ];
        for p in cases {
            let j = penalty_matrix(&basis, &quad, &p).unwrap();
            let m = j.matrix();
            assert!((m - m.transpose()).amax() <= 1e-12 * m.amax());
            assert!(min_eigenvalue(m) >= -1e-8 * m.norm());
        }
    }

    #[test]
    fn penalty_dimension_mismatch() {
        let (basis, quad, _) = qrs_setup();
        let p = OdeParams::TimeVarying {
            h1: vec![0.0; 3],
            h0: vec![0.0; 3],
        };
        assert!(matches!(
            penalty_matrix(&basis, &quad, &p),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sine_is_in_the_null_space_of_its_operator() {
        let two_pi = 2.0 * std::f64::consts::PI;
        let basis = make_basis((0.0, two_pi), two_pi / 80.0).unwrap();
        let quad = make_quadrature(&basis, 8).unwrap();
        let times: Vec<f64> = (0..2000).map(|i| two_pi * i as f64 / 1999.0).collect();
        let y = samples(&times, f64::sin);
        let zero = OdeParams::zeros(Mode::Constant, basis.len());
        let c = estimate_coefficients(&y, &times, &basis, &quad, &zero, 0.0).unwrap();
        let j = penalty_matrix(&basis, &quad, &OdeParams::Constant { w1: 0.0, w0: 1.0 }).unwrap();
        let cv = c.coefs.row(0).transpose();
        let quad_form = (cv.transpose() * j.matrix() * &cv)[(0, 0)];
        assert!(quad_form < 1e-6 * cv.norm_squared(), "{quad_form}");
    }

    #[test]
    fn zero_lambda_is_ordinary_least_squares() {
        let (basis, quad, times) = qrs_setup();
        let y = DMatrix::from_fn(3, times.len(), |i, j| {
            let t = times[j];
            (40.0 * t + i as f64).sin() + 0.1 * (j as f64 * 0.7).cos()
        });
        let params = OdeParams::Constant {
            w1: 2.0,
            w0: 9000.0,
        };
        let c = estimate_coefficients(&y, &times, &basis, &quad, &params, 0.0).unwrap();
        // direct least squares through a QR factorization of Phi
        let phi = design_matrix(&basis, &times, 0).unwrap();
        let qr = phi.clone().qr();
        for i in 0..3 {
            let yi = y.row(i).transpose();
            let rhs = qr.q().transpose() * &yi;
            let ols = qr.r().solve_upper_triangular(&rhs).unwrap();
            for j in 0..basis.len() {
                assert!((c.coefs[(i, j)] - ols[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn recovers_in_span_curves() {
        let (basis, quad, times) = qrs_setup();
        let truth: Vec<f64> = (0..basis.len()).map(|i| (i as f64 * 0.37).cos()).collect();
        let phi = design_matrix(&basis, &times, 0).unwrap();
        let yv = &phi * DVector::from_vec(truth.clone());
        let y = DMatrix::from_row_slice(1, times.len(), yv.as_slice());
        let c = estimate_coefficients(
            &y,
            &times,
            &basis,
            &quad,
            &OdeParams::zeros(Mode::Constant, 20),
            0.0,
        )
        .unwrap();
        for (a, b) in c.coefs.row(0).iter().zip(&truth) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(c.residual_sse < 1e-20);
    }

    #[test]
    fn heavy_penalty_tends_to_a_straight_line() {
        let basis = make_basis((0.0, 1.0), 0.1).unwrap();
        let quad = make_quadrature(&basis, 8).unwrap();
        let times = uniform(101, 100.0);
        let f = |t: f64| (6.0 * t).sin() + t * t;
        let y = samples(&times, f);
        let c = estimate_coefficients(
            &y,
            &times,
            &basis,
            &quad,
            &OdeParams::zeros(Mode::Constant, basis.len()),
            1e6,
        )
        .unwrap();
        // least-squares line
        let n = times.len() as f64;
        let (st, sy) = (times.iter().sum::<f64>(), y.iter().sum::<f64>());
        let stt = times.iter().map(|t| t * t).sum::<f64>();
        let sty = times.iter().zip(y.iter()).map(|(t, v)| t * v).sum::<f64>();
        let slope = (n * sty - st * sy) / (n * stt - st * st);
        let icept = (sy - slope * st) / n;
        let coefs: Vec<f64> = c.coefs.row(0).iter().copied().collect();
        for &t in &times {
            let fit = basis.eval_spline(&coefs, t, 0).unwrap();
            assert!((fit - (icept + slope * t)).abs() < 1e-3);
        }
    }

    #[test]
    fn rank_deficient_without_penalty() {
        let basis = make_basis((0.0, 0.2), 0.012).unwrap();
        let quad = make_quadrature(&basis, 8).unwrap();
        let times: Vec<f64> = (0..10).map(|i| i as f64 * 0.02).collect();
        let y = samples(&times, |t| t);
        let p = OdeParams::zeros(Mode::Constant, basis.len());
        let err = estimate_coefficients(&y, &times, &basis, &quad, &p, 0.0).unwrap_err();
        assert!(matches!(err, Error::RankDeficient(_)));
        assert!(estimate_coefficients(&y, &times, &basis, &quad, &p, 1e-6).is_ok());
        assert!(estimate_coefficients(&y, &times, &basis, &quad, &p, -1.0).is_err());
    }

    #[test]
    fn joint_fit_decouples_by_curve() {
        let (basis, quad, times) = qrs_setup();
        let y = DMatrix::from_fn(4, times.len(), |i, j| {
            ((30.0 + 10.0 * i as f64) * times[j]).cos()
        });
        let p = OdeParams::Constant {
            w1: 1.0,
            w0: 5000.0,
        };
        let joint = estimate_coefficients(&y, &times, &basis, &quad, &p, 1e-6).unwrap();
        for i in 0..4 {
            let yi = y.rows(i, 1).into_owned();
            let single = estimate_coefficients(&yi, &times, &basis, &quad, &p, 1e-6).unwrap();
            for j in 0..basis.len() {
                assert!((joint.coefs[(i, j)] - single.coefs[(0, j)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cosine_gives_undamped_parameters() {
        let basis = make_basis((0.0, 3.0), 0.05).unwrap();
        let quad = make_quadrature(&basis, 8).unwrap();
        let times = uniform(301, 100.0);
        let y = DMatrix::from_fn(2, times.len(), |i, j| (2.0 * times[j] + i as f64).cos());
        let c = estimate_coefficients(
            &y,
            &times,
            &basis,
            &quad,
            &OdeParams::zeros(Mode::Constant, basis.len()),
            0.0,
        )
        .unwrap();
        match estimate_parameters(&c, &basis, &quad, Mode::Constant).unwrap() {
            OdeParams::Constant { w1, w0 } => {
                assert!(w1.abs() < 1e-3, "{w1}");
                assert!((w0 - 4.0).abs() < 1e-3, "{w0}");
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn damped_qrs_oscillation_parameters() {
        let (basis, _, times) = qrs_setup();
        let (a, b) = (1.3, 96.9);
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-a * t).exp() * (b * t).cos())
            .collect();
        let rec = BeatRecord::new("qrs", 360.0, values, None).unwrap();
        let opts = FitOptions::default().with_lambda(LambdaChoice::Fixed(1e-8));
        let (model, _) = fit(&[rec], &basis, &opts).unwrap();
        let (w1, w0) = model.constant_params().unwrap();
        // oracle: w1 = 2a, w0 = a^2 + b^2
        let (e1, e0) = (2.0 * a, a * a + b * b);
        assert!(((w1 - e1) / e1).abs() < 0.01, "{w1}");
        assert!(((w0 - e0) / e0).abs() < 0.01, "{w0}");
    }

    #[test]
    fn zero_curves_are_degenerate() {
        let (basis, quad, _) = qrs_setup();
        let c = CoefficientSet {
            coefs: DMatrix::zeros(3, basis.len()),
            residual_sse: 0.0,
        };
        for mode in [Mode::Constant, Mode::TimeVarying] {
            assert!(matches!(
                estimate_parameters(&c, &basis, &quad, mode),
                Err(Error::DegenerateData(_))
            ));
        }
    }

    #[test]
    fn gcv_grid_edge_cases() {
        let (basis, quad, times) = qrs_setup();
        let phi = design_matrix(&basis, &times, 0).unwrap();
        let truth: Vec<f64> = (0..basis.len()).map(|i| (i as f64).sin()).collect();
        let yv = &phi * DVector::from_vec(truth);
        let rec = BeatRecord::new("in-span", 360.0, yv.iter().copied().collect(), None).unwrap();
        let p = OdeParams::zeros(Mode::Constant, basis.len());
        let grid = default_lambda_grid();
        let sel = select_lambda(std::slice::from_ref(&rec), &basis, &quad, &p, &grid).unwrap();
        assert_eq!(sel.lambda, grid[0]);
        assert_eq!(sel.scores.len(), 21);
        let one = select_lambda(std::slice::from_ref(&rec), &basis, &quad, &p, &[0.5]).unwrap();
        assert_eq!(one.lambda, 0.5);
        assert!(matches!(
            select_lambda(std::slice::from_ref(&rec), &basis, &quad, &p, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn critically_damped_fit() {
        // x'' + 2x' + x = 0 with x = (1 + t) e^{-t}
        let times = uniform(201, 50.0);
        let basis = make_basis((0.0, 4.0), 0.1).unwrap();
        let values: Vec<f64> = times.iter().map(|t| (1.0 + t) * (-t).exp()).collect();
        let rec = BeatRecord::new("crit", 50.0, values, None).unwrap();
        let (model, _) = fit(&[rec], &basis, &FitOptions::default()).unwrap();
        assert!(model.converged);
        assert!(model.iterations <= 10);
        let (w1, w0) = model.constant_params().unwrap();
        assert!((w1 - 2.0).abs() < 1e-2, "{w1}");
        assert!((w0 - 1.0).abs() < 1e-2, "{w0}");
    }

    #[test]
    fn single_iteration_is_one_pass() {
        let (basis, quad, times) = qrs_setup();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-2.0 * t).exp() * (90.0 * t).sin())
            .collect();
        let rec = BeatRecord::new("one", 360.0, values, None).unwrap();
        let opts = FitOptions::default()
            .with_lambda(LambdaChoice::Fixed(1e-6))
            .with_max_iter(1);
        let (model, set) = fit(std::slice::from_ref(&rec), &basis, &opts).unwrap();
        assert_eq!(model.iterations, 1);
        let y = DMatrix::from_row_slice(1, 72, &rec.values);
        let c = estimate_coefficients(
            &y,
            &times,
            &basis,
            &quad,
            &OdeParams::zeros(Mode::Constant, 20),
            1e-6,
        )
        .unwrap();
        let p = estimate_parameters(&c, &basis, &quad, Mode::Constant).unwrap();
        assert_eq!(model.params, p);
        assert!((set.coefs - c.coefs).amax() < 1e-12);
    }

    #[test]
    fn objective_never_increases_after_coefficient_update() {
        let (basis, quad, times) = qrs_setup();
        let y = DMatrix::from_fn(2, 72, |i, j| {
            ((95.0 + i as f64) * times[j]).cos() + 0.01 * ((j * 7 % 11) as f64)
        });
        let p = OdeParams::Constant {
            w1: 2.6,
            w0: 9391.3,
        };
        let lambda = 1e-5;
        let c = estimate_coefficients(&y, &times, &basis, &quad, &p, lambda).unwrap();
        let best = penalized_objective(&y, &times, &basis, &quad, &p, lambda, &c.coefs).unwrap();
        for s in 0..20 {
            let mut perturbed = c.coefs.clone();
            perturbed[(s % 2, s % 20)] += 1e-3 * (s as f64 - 10.0);
            let other =
                penalized_objective(&y, &times, &basis, &quad, &p, lambda, &perturbed).unwrap();
            assert!(other >= best - 1e-12 * best.abs());
        }
    }

    #[test]
    fn converged_fit_is_stationary() {
        let (basis, quad, times) = qrs_setup();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-1.3 * t).exp() * (96.9 * t).cos())
            .collect();
        let rec = BeatRecord::new("stat", 360.0, values, None).unwrap();
        let (model, set) = fit(&[rec], &basis, &FitOptions::default()).unwrap();
        assert!(model.converged);
        let (grad, scale) = stationarity_residual(&set, &basis, &quad, &model.params).unwrap();
        assert!(grad < 1e-6 * scale, "{grad} vs {scale}");
    }

    #[test]
    fn model_round_trips_through_json() {
        let (basis, _, times) = qrs_setup();
        let values: Vec<f64> = times.iter().map(|t| (80.0 * t).cos()).collect();
        let rec = BeatRecord::new("rt", 360.0, values, None).unwrap();
        let opts = FitOptions::default()
            .with_mode(Mode::TimeVarying)
            .with_max_iter(3);
        let (model, _) = fit(&[rec], &basis, &opts).unwrap();
        let s = serde_json::to_string(&model).unwrap();
        let back: OdeModel = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}

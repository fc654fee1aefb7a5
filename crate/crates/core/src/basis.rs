//! Clamped cubic B-spline bases on a closed interval.
//!
//! Interior breakpoints are laid out at a fixed spacing from the left end of
//! the domain. When the spacing does not divide the domain length the final
//! span is shorter than the others. End knots are repeated `DEGREE + 1` times,
//! so the basis interpolates at both ends of the domain.
//!
//! Evaluation uses the Cox–de Boor triangle together with the knot-difference
//! formula for derivatives. Integrals over the domain are computed with a
//! per-span Gauss–Legendre rule, see [`make_quadrature`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial degree of every basis built by this module.
pub const DEGREE: usize = 3;

/// Highest derivative order supported by [`BasisSystem::eval`].
pub const MAX_DERIV: usize = 2;

/// Default number of Gauss points per knot span (exact for degree <= 15).
pub const DEFAULT_POINTS_PER_SPAN: usize = 8;

/// Number of basis functions that are nonzero on any one span.
pub(crate) const LOCAL: usize = DEGREE + 1;

/// Values of the `LOCAL` basis functions (and derivatives 0..=2) that are
/// nonzero at a point. Entry `[d][j]` belongs to basis function `first + j`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalValues {
    pub first: usize,
    pub ders: [[f64; LOCAL]; MAX_DERIV + 1],
}

/// Clamped cubic B-spline basis with uniform interior knot spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BasisSystem {
    t_min: f64,
    t_max: f64,
    spacing: f64,
    breakpoints: Vec<f64>,
    knots: Vec<f64>,
}

/// Serialized form of a [`BasisSystem`]; the knots are rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisSpec {
    t_min: f64,
    t_max: f64,
    interior_knot_spacing: f64,
}

impl TryFrom<BasisSpec> for BasisSystem {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        make_basis((spec.t_min, spec.t_max), spec.interior_knot_spacing)
    }
}

impl From<BasisSystem> for BasisSpec {
    fn from(b: BasisSystem) -> Self {
        BasisSpec {
            t_min: b.t_min,
            t_max: b.t_max,
            interior_knot_spacing: b.spacing,
        }
    }
}

/// Builds a clamped cubic basis on `[domain.0, domain.1]`.
///
/// The number of spans is `ceil(length / spacing)`, treating ratios within
/// `1e-9` of an integer as exact.
pub fn make_basis(domain: (f64, f64), interior_spacing: f64) -> Result<BasisSystem> {
    let (t_min, t_max) = domain;
    if !(t_min.is_finite() && t_max.is_finite()) || t_max <= t_min {
        return Err(Error::invalid(format!(
            "basis domain [{t_min}, {t_max}] must be a nonempty finite interval"
        )));
    }
    let length = t_max - t_min;
    if !(interior_spacing > 0.0) || !interior_spacing.is_finite() {
        return Err(Error::invalid(format!(
            "knot spacing must be positive, got {interior_spacing}"
        )));
    }
    if interior_spacing > length * (1.0 + 1e-12) {
        return Err(Error::invalid(format!(
            "knot spacing {interior_spacing} exceeds domain length {length}"
        )));
    }

    let ratio = length / interior_spacing;
    let spans = if (ratio - ratio.round()).abs() < 1e-9 * ratio.max(1.0) {
        ratio.round() as usize
    } else {
        ratio.ceil() as usize
    }
    .max(1);

    let mut breakpoints: Vec<f64> = (0..spans)
        .map(|i| t_min + i as f64 * interior_spacing)
        .collect();
    breakpoints.push(t_max);

    let mut knots = Vec::with_capacity(spans + 1 + 2 * DEGREE);
    knots.extend(std::iter::repeat_n(t_min, DEGREE));
    knots.extend_from_slice(&breakpoints);
    knots.extend(std::iter::repeat_n(t_max, DEGREE));

    Ok(BasisSystem {
        t_min,
        t_max,
        spacing: interior_spacing,
        breakpoints,
        knots,
    })
}

impl BasisSystem {
    pub fn domain(&self) -> (f64, f64) {
        (self.t_min, self.t_max)
    }

    pub fn degree(&self) -> usize {
        DEGREE
    }

    pub fn interior_knot_spacing(&self) -> f64 {
        self.spacing
    }

    /// Full knot sequence, end knots repeated `DEGREE + 1` times.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Distinct knot values `t_min = b_0 < ... < b_spans = t_max`.
    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn num_spans(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Number of basis functions, `K = spans + DEGREE`.
    pub fn len(&self) -> usize {
        self.num_spans() + DEGREE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Maps `t` onto the domain, absorbing rounding slop at the ends.
    fn check_domain(&self, index: usize, t: f64) -> Result<f64> {
        let slack = 1e-9 * (self.t_max - self.t_min).max(1.0);
        if !t.is_finite() || t < self.t_min - slack || t > self.t_max + slack {
            return Err(Error::OutOfDomain {
                index,
                t,
                lo: self.t_min,
                hi: self.t_max,
            });
        }
        Ok(t.clamp(self.t_min, self.t_max))
    }

    fn span_of(&self, t: f64) -> usize {
        let last = self.num_spans() - 1;
        let mut s = (((t - self.t_min) / self.spacing).floor().max(0.0) as usize).min(last);
        while s > 0 && t < self.breakpoints[s] {
            s -= 1;
        }
        while s < last && t >= self.breakpoints[s + 1] {
            s += 1;
        }
        s
    }

    pub(crate) fn local(&self, index: usize, t: f64) -> Result<LocalValues> {
        let t = self.check_domain(index, t)?;
        let span = self.span_of(t);
        Ok(LocalValues {
            first: span,
            ders: ders_basis_funs(&self.knots, span + DEGREE, t),
        })
    }

    /// Values of all `K` basis functions (or their `deriv`-th derivative) at `t`.
    pub fn eval(&self, t: f64, deriv: usize) -> Result<Vec<f64>> {
        if deriv > MAX_DERIV {
            return Err(Error::invalid(format!(
                "derivative order {deriv} not supported (max {MAX_DERIV})"
            )));
        }
        let local = self.local(0, t)?;
        let mut out = vec![0.0; self.len()];
        out[local.first..local.first + LOCAL].copy_from_slice(&local.ders[deriv]);
        Ok(out)
    }

    /// Value of the spline `coefs^T phi^(deriv)(t)`.
    pub fn eval_spline(&self, coefs: &[f64], t: f64, deriv: usize) -> Result<f64> {
        if coefs.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} spline coefficients, got {}",
                self.len(),
                coefs.len()
            )));
        }
        if deriv > MAX_DERIV {
            return Err(Error::invalid(format!(
                "derivative order {deriv} not supported (max {MAX_DERIV})"
            )));
        }
        let local = self.local(0, t)?;
        Ok(dot_local(&local.ders[deriv], &coefs[local.first..]))
    }
}

pub(crate) fn dot_local(vals: &[f64; LOCAL], coefs: &[f64]) -> f64 {
    vals.iter().zip(coefs).map(|(a, b)| a * b).sum()
}

/// Free-function form of [`BasisSystem::eval`].
pub fn eval_basis(basis: &BasisSystem, t: f64, deriv: usize) -> Result<Vec<f64>> {
    basis.eval(t, deriv)
}

/// Row `j` holds the basis (or derivative) values at `times[j]`.
pub fn design_matrix(basis: &BasisSystem, times: &[f64], deriv: usize) -> Result<DMatrix<f64>> {
    if deriv > MAX_DERIV {
        return Err(Error::invalid(format!(
            "derivative order {deriv} not supported (max {MAX_DERIV})"
        )));
    }
    let mut m = DMatrix::zeros(times.len(), basis.len());
    for (row, &t) in times.iter().enumerate() {
        let local = basis.local(row, t)?;
        for (j, v) in local.ders[deriv].iter().enumerate() {
            m[(row, local.first + j)] = *v;
        }
    }
    Ok(m)
}

/// Basis functions and their derivatives at `t`, for knot span index `i`
/// (so that `knots[i] <= t < knots[i + 1]`, or `t` is the right end).
fn ders_basis_funs(knots: &[f64], i: usize, t: f64) -> [[f64; LOCAL]; MAX_DERIV + 1] {
    let p = DEGREE;
    let mut ndu = [[0.0f64; LOCAL]; LOCAL];
    let mut left = [0.0f64; LOCAL];
    let mut right = [0.0f64; LOCAL];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = t - knots[i + 1 - j];
        right[j] = knots[i + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            // lower triangle holds knot differences
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }

    let mut ders = [[0.0f64; LOCAL]; MAX_DERIV + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }

    let mut a = [[0.0f64; LOCAL]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=MAX_DERIV {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p - k;
            if rk >= 0 {
                let rk = rk as usize;
                a[s2][0] = a[s1][0] / ndu[pk + 1][rk];
                d = a[s2][0] * ndu[rk][pk];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if r as isize - 1 <= pk as isize {
                k - 1
            } else {
                p - r
            };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][idx];
                d += a[s2][j] * ndu[idx][pk];
            }
            if r <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                d += a[s2][k] * ndu[r][pk];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }

    let mut factor = p as f64;
    for (k, row) in ders.iter_mut().enumerate().skip(1) {
        for v in row.iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

/// Composite Gauss–Legendre rule with a fixed number of points per knot span.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub points_per_span: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Knot span holding node `q`.
    pub fn span_of_node(&self, q: usize) -> usize {
        q / self.points_per_span
    }

    /// `sum_q w_q f(t_q)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

pub fn make_quadrature(basis: &BasisSystem, points_per_span: usize) -> Result<QuadratureRule> {
    if points_per_span == 0 {
        return Err(Error::invalid("points_per_span must be at least 1"));
    }
    let (ref_nodes, ref_weights) = gauss_legendre(points_per_span);
    let spans = basis.num_spans();
    let mut nodes = Vec::with_capacity(spans * points_per_span);
    let mut weights = Vec::with_capacity(spans * points_per_span);
    for w in basis.breakpoints().windows(2) {
        let (a, b) = (w[0], w[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, wt) in ref_nodes.iter().zip(&ref_weights) {
            nodes.push(mid + half * x);
            weights.push(half * wt);
        }
    }
    Ok(QuadratureRule {
        nodes,
        weights,
        points_per_span,
    })
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`,
/// ascending, from Newton iteration on the Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Local basis values at every node of a quadrature rule, computed once and
/// reused across the assembly loops of the estimator.
pub(crate) struct NodeTable {
    pub weights: Vec<f64>,
    pub values: Vec<LocalValues>,
}

impl NodeTable {
    pub fn new(basis: &BasisSystem, quad: &QuadratureRule) -> Result<Self> {
        let values = quad
            .nodes
            .iter()
            .enumerate()
            .map(|(q, &t)| basis.local(q, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(NodeTable {
            weights: quad.weights.clone(),
            values,
        })
    }
}

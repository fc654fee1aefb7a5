//! Soft-margin SVM trained by sequential minimal optimization with
//! second-order working-set selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_training_set, Prediction};
use crate::error::{Error, Result};
use crate::features::StandardizationTransform;
use crate::signal::Label;

const TAU: f64 = 1e-12;
const MIN_ITERATIONS: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Rbf { gamma: f64 },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Kernel as configured; an rbf without `gamma` uses `1 / dimension`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelChoice {
    Linear,
    Rbf { gamma: Option<f64> },
}

impl KernelChoice {
    pub fn resolve(self, dim: usize) -> Result<Kernel> {
        match self {
            KernelChoice::Linear => Ok(Kernel::Linear),
            KernelChoice::Rbf { gamma: None } => Ok(Kernel::Rbf {
                gamma: 1.0 / dim.max(1) as f64,
            }),
            KernelChoice::Rbf { gamma: Some(g) } if g > 0.0 && g.is_finite() => {
                Ok(Kernel::Rbf { gamma: g })
            }
            KernelChoice::Rbf { gamma: Some(g) } => Err(Error::invalid(format!(
                "rbf gamma must be positive, got {g}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub kernel: KernelChoice,
    pub c: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            kernel: KernelChoice::Rbf { gamma: None },
            c: 1.0,
            tol: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: Kernel,
    pub c: f64,
    /// Standardized support vectors.
    pub support_vectors: Vec<Vec<f64>>,
    /// `alpha_i * y_i` per support vector, with `y = +1` for abnormal.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub transform: StandardizationTransform,
}

/// Solver diagnostics from [`svm_train_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrace {
    /// Multipliers in the caller's row order.
    pub alphas: Vec<f64>,
    /// Dual objective after each update, starting from `alpha = 0`.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.transform.dim()
    }

    /// Decision value for an already standardized input.
    fn decision_standardized(&self, z: &[f64]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(sv, c)| c * self.kernel.eval(sv, z))
            .sum::<f64>()
            + self.bias
    }

    pub fn decision(&self, x: &[f64]) -> Result<f64> {
        Ok(self.decision_standardized(&self.transform.apply(x)?))
    }
}

pub fn svm_predict(model: &SvmModel, x: &[f64]) -> Result<Prediction> {
    let margin = model.decision(x)?;
    Ok(Prediction {
        label: if margin > 0.0 {
            Label::Abnormal
        } else {
            Label::Normal
        },
        score: margin,
    })
}

pub fn svm_train(x: &[Vec<f64>], y: &[Label], params: &SvmParams) -> Result<SvmModel> {
    svm_train_traced(x, y, params).map(|(m, _)| m)
}

pub fn svm_train_traced(
    x: &[Vec<f64>],
    y: &[Label],
    params: &SvmParams,
) -> Result<(SvmModel, SvmTrace)> {
    check_training_set(x, y)?;
    if !(params.c > 0.0) || !params.c.is_finite() {
        return Err(Error::invalid(format!(
            "C must be positive, got {}",
            params.c
        )));
    }
    if !(params.tol > 0.0) || !params.tol.is_finite() {
        return Err(Error::invalid(format!(
            "tolerance must be positive, got {}",
            params.tol
        )));
    }
    let dim = x[0].len();
    let kernel = params.kernel.resolve(dim)?;
    let transform = StandardizationTransform::fit(x)?;
    let n = x.len();

    // the seed fixes the scan order, which decides ties in pair selection
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let z: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| transform.apply(&x[i]))
        .collect::<Result<_>>()?;
    let signs: Vec<f64> = order
        .iter()
        .map(|&i| if y[i].is_abnormal() { 1.0 } else { -1.0 })
        .collect();

    let solution = Smo::new(&z, &signs, kernel, params.c).solve(params.tol);
    if !solution.converged {
        log::warn!(
            "SVM solver stopped after {} iterations without reaching tolerance {}",
            solution.iterations,
            params.tol
        );
    }

    let mut support_vectors = Vec::new();
    let mut dual_coeffs = Vec::new();
    let mut alphas = vec![0.0; n];
    for (k, &orig) in order.iter().enumerate() {
        let a = solution.alpha[k];
        alphas[orig] = a;
        if a > 0.0 {
            support_vectors.push(z[k].clone());
            dual_coeffs.push(a * signs[k]);
        }
    }
    let model = SvmModel {
        kernel,
        c: params.c,
        support_vectors,
        dual_coeffs,
        bias: -solution.rho,
        transform,
    };
    let trace = SvmTrace {
        alphas,
        objective: solution.objective,
        iterations: solution.iterations,
        converged: solution.converged,
    };
    Ok((model, trace))
}

struct Solution {
    alpha: Vec<f64>,
    rho: f64,
    objective: Vec<f64>,
    iterations: usize,
    converged: bool,
}

struct Smo<'a> {
    y: &'a [f64],
    kmat: Vec<f64>,
    n: usize,
    c: f64,
    alpha: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Smo<'a> {
    fn new(z: &[Vec<f64>], y: &'a [f64], kernel: Kernel, c: f64) -> Self {
        let n = z.len();
        let mut kmat = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&z[i], &z[j]);
                kmat[i * n + j] = v;
                kmat[j * n + i] = v;
            }
        }
        Smo {
            y,
            kmat,
            n,
            c,
            alpha: vec![0.0; n],
            grad: vec![-1.0; n],
        }
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        self.kmat[i * self.n + j]
    }

    fn q(&self, i: usize, j: usize) -> f64 {
        self.y[i] * self.y[j] * self.k(i, j)
    }

    fn at_upper(&self, i: usize) -> bool {
        self.alpha[i] >= self.c
    }

    fn at_lower(&self, i: usize) -> bool {
        self.alpha[i] <= 0.0
    }

    /// `e^T a - a^T Q a / 2`.
    fn dual_objective(&self) -> f64 {
        -0.5 * self
            .alpha
            .iter()
            .zip(&self.grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>()
    }

    /// Maximal-violating `i`, then the `j` with the largest second-order gain.
    fn select_pair(&self, tol: f64) -> Option<(usize, usize)> {
        let y = self.y;
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = None;
        for (t, &yt) in y.iter().enumerate().take(self.n) {
            let v = -yt * self.grad[t];
            let movable = if yt > 0.0 {
                !self.at_upper(t)
            } else {
                !self.at_lower(t)
            };
            if movable && v >= gmax {
                gmax = v;
                i_sel = Some(t);
            }
        }
        let i = i_sel?;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j_sel = None;
        let mut best = f64::INFINITY;
        for (t, &yt) in y.iter().enumerate().take(self.n) {
            let movable = if yt > 0.0 {
                !self.at_lower(t)
            } else {
                !self.at_upper(t)
            };
            if !movable {
                continue;
            }
            let v = yt * self.grad[t];
            if v >= gmax2 {
                gmax2 = v;
            }
            let grad_diff = gmax + v;
            if grad_diff > 0.0 {
                let quad = self.k(i, i) + self.k(t, t) - 2.0 * self.k(i, t);
                let gain = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                if gain <= best {
                    best = gain;
                    j_sel = Some(t);
                }
            }
        }
        if gmax + gmax2 < tol {
            return None;
        }
        j_sel.map(|j| (i, j))
    }

    fn update(&mut self, i: usize, j: usize) {
        let c = self.c;
        let (old_i, old_j) = (self.alpha[i], self.alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if self.y[i] != self.y[j] {
            let quad = self.q(i, i) + self.q(j, j) + 2.0 * self.q(i, j);
            let delta = (-self.grad[i] - self.grad[j]) / if quad > 0.0 { quad } else { TAU };
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let quad = self.q(i, i) + self.q(j, j) - 2.0 * self.q(i, j);
            let delta = (self.grad[i] - self.grad[j]) / if quad > 0.0 { quad } else { TAU };
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        self.alpha[i] = ai;
        self.alpha[j] = aj;
        let (di, dj) = (ai - old_i, aj - old_j);
        for t in 0..self.n {
            self.grad[t] += self.q(i, t) * di + self.q(j, t) * dj;
        }
    }

    fn rho(&self) -> f64 {
        let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut free, mut sum) = (0usize, 0.0);
        for t in 0..self.n {
            let yg = self.y[t] * self.grad[t];
            if self.at_upper(t) {
                if self.y[t] < 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else if self.at_lower(t) {
                if self.y[t] > 0.0 {
                    ub = ub.min(yg);
                } else {
                    lb = lb.max(yg);
                }
            } else {
                free += 1;
                sum += yg;
            }
        }
        if free > 0 {
            sum / free as f64
        } else if ub.is_finite() && lb.is_finite() {
            0.5 * (ub + lb)
        } else if ub.is_finite() {
            ub
        } else {
            lb
        }
    }

    fn solve(mut self, tol: f64) -> Solution {
        let max_iter = MIN_ITERATIONS.max(100 * self.n);
        let mut objective = vec![0.0];
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iter {
            match self.select_pair(tol) {
                None => {
                    converged = true;
                    break;
                }
                Some((i, j)) => {
                    self.update(i, j);
                    objective.push(self.dual_objective());
                    iterations += 1;
                }
            }
        }
        Solution {
            rho: self.rho(),
            alpha: self.alpha,
            objective,
            iterations,
            converged,
        }
    }
}

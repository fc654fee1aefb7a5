//! Stability and transient response of `x'' + w1 x' + w0 x = 0`.
//!
//! Step and impulse responses are those of the unit-DC-gain transfer function
//! `G(s) = w0 / (s^2 + w1 s + w0)`, evaluated in closed form for each root
//! configuration. Time-varying models are integrated with classical RK4.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pda::{OdeModel, OdeParams};

/// Real parts within this distance of zero count as zero.
pub const MARGINAL_TOL: f64 = 1e-12;

/// Roots are treated as repeated when `|w1^2 - 4 w0|` is below this factor
/// times `max(1, w1^2, |w0|)`.
pub const REPEATED_ROOT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Underdamped,
    CriticallyDamped,
    Overdamped,
    Undamped,
    DivergentOscillatory,
    DivergentMonotone,
    Marginal,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Underdamped => "underdamped",
            Regime::CriticallyDamped => "critically-damped",
            Regime::Overdamped => "overdamped",
            Regime::Undamped => "undamped",
            Regime::DivergentOscillatory => "divergent-oscillatory",
            Regime::DivergentMonotone => "divergent-monotone",
            Regime::Marginal => "marginal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub w1: f64,
    pub w0: f64,
    pub roots: [Root; 2],
    pub regime: Regime,
    /// Both roots strictly in the left half plane.
    pub stable: bool,
    /// Largest real part is zero (within [`MARGINAL_TOL`]).
    pub marginal: bool,
    /// `sqrt(w0)`, when `w0 > 0`.
    pub natural_frequency: Option<f64>,
    /// `w1 / (2 sqrt(w0))`, when `w0 > 0`.
    pub damping_ratio: Option<f64>,
}

fn discriminant(w1: f64, w0: f64) -> f64 {
    w1 * w1 - 4.0 * w0
}

fn is_repeated(w1: f64, w0: f64) -> bool {
    discriminant(w1, w0).abs() < REPEATED_ROOT_TOL * 1f64.max(w1 * w1).max(w0.abs())
}

/// Roots of `s^2 + w1 s + w0`, ordered by (real part, imaginary part).
pub fn characteristic_roots(w1: f64, w0: f64) -> [Root; 2] {
    let disc = discriminant(w1, w0);
    if is_repeated(w1, w0) {
        let r = Root {
            re: -0.5 * w1,
            im: 0.0,
        };
        return [r, r];
    }
    if disc < 0.0 {
        let re = -0.5 * w1;
        let im = 0.5 * (-disc).sqrt();
        return [Root { re, im: -im }, Root { re, im }];
    }
    // q carries the sign of -w1 so no cancellation occurs
    let sign = if w1 >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (w1 + sign * disc.sqrt());
    let (a, b) = if q == 0.0 { (0.0, 0.0) } else { (q, w0 / q) };
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    [Root { re: lo, im: 0.0 }, Root { re: hi, im: 0.0 }]
}

pub fn stability(w1: f64, w0: f64) -> StabilityReport {
    let roots = characteristic_roots(w1, w0);
    let max_re = roots[0].re.max(roots[1].re);
    let oscillatory = roots[1].im != 0.0;
    let (regime, stable, marginal) = if max_re > MARGINAL_TOL {
        let regime = if oscillatory {
            Regime::DivergentOscillatory
        } else {
            Regime::DivergentMonotone
        };
        (regime, false, false)
    } else if max_re >= -MARGINAL_TOL {
        let regime = if oscillatory {
            Regime::Undamped
        } else {
            Regime::Marginal
        };
        (regime, false, true)
    } else if is_repeated(w1, w0) {
        (Regime::CriticallyDamped, true, false)
    } else if oscillatory {
        (Regime::Underdamped, true, false)
    } else {
        (Regime::Overdamped, true, false)
    };
    let (natural_frequency, damping_ratio) = if w0 > 0.0 {
        let wn = w0.sqrt();
        (Some(wn), Some(w1 / (2.0 * wn)))
    } else {
        (None, None)
    };
    StabilityReport {
        w1,
        w0,
        roots,
        regime,
        stable,
        marginal,
        natural_frequency,
        damping_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseKind {
    Step,
    Impulse,
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: ResponseKind,
}

/// Closed-form solution of the constant-coefficient ODE with
/// `x(0) = x0`, `x'(0) = v0`, evaluated at `t`.
pub fn free_response_at(w1: f64, w0: f64, x0: f64, v0: f64, t: f64) -> f64 {
    let disc = discriminant(w1, w0);
    if is_repeated(w1, w0) {
        let r = -0.5 * w1;
        (r * t).exp() * (x0 + (v0 - r * x0) * t)
    } else if disc < 0.0 {
        let alpha = -0.5 * w1;
        let beta = 0.5 * (-disc).sqrt();
        let (s, c) = (beta * t).sin_cos();
        (alpha * t).exp() * (x0 * c + (v0 - alpha * x0) / beta * s)
    } else {
        let [lo, hi] = characteristic_roots(w1, w0);
        let (r1, r2) = (hi.re, lo.re);
        let gap = r1 - r2;
        let a = (v0 - r2 * x0) / gap;
        // e^{r1 t} - e^{r2 t} without cancellation when the roots are close
        let diff = if gap * t < 1.0 {
            (r2 * t).exp() * (gap * t).exp_m1()
        } else {
            (r1 * t).exp() - (r2 * t).exp()
        };
        x0 * (r2 * t).exp() + a * diff
    }
}

fn check_times(times: &[f64], nonnegative: bool) -> Result<()> {
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("times must be finite"));
    }
    if nonnegative && times.iter().any(|&t| t < 0.0) {
        return Err(Error::invalid("response times must be nonnegative"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("times must be ascending"));
    }
    Ok(())
}

/// Unit-step response of `w0 / (s^2 + w1 s + w0)`.
pub fn step_response(w1: f64, w0: f64, times: &[f64]) -> Result<ResponseCurve> {
    if w0 == 0.0 {
        return Err(Error::UnsupportedPole(
            "w0 = 0 puts a pole at the origin; the step response is unbounded".into(),
        ));
    }
    check_times(times, true)?;
    let values = times
        .iter()
        .map(|&t| 1.0 - free_response_at(w1, w0, 1.0, 0.0, t))
        .collect();
    Ok(ResponseCurve {
        times: times.to_vec(),
        values,
        kind: ResponseKind::Step,
    })
}

/// Unit-impulse response of `w0 / (s^2 + w1 s + w0)`.
pub fn impulse_response(w1: f64, w0: f64, times: &[f64]) -> Result<ResponseCurve> {
    check_times(times, true)?;
    let values = times
        .iter()
        .map(|&t| w0 * free_response_at(w1, w0, 0.0, 1.0, t))
        .collect();
    Ok(ResponseCurve {
        times: times.to_vec(),
        values,
        kind: ResponseKind::Impulse,
    })
}

/// Classical fourth-order Runge–Kutta for `x'' = -w1(t) x' - w0(t) x`,
/// reporting `x` at each of `times` (the first entry is the initial time).
/// Each interval is split into equal substeps no longer than `max_step`.
pub fn integrate_rk4<F>(coef: F, x0: f64, v0: f64, times: &[f64], max_step: f64) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<(f64, f64)>,
{
    if !(max_step > 0.0) {
        return Err(Error::invalid("RK4 step must be positive"));
    }
    let rhs = |t: f64, x: f64, v: f64| -> Result<(f64, f64)> {
        let (w1, w0) = coef(t)?;
        Ok((v, -w1 * v - w0 * x))
    };
    let mut out = Vec::with_capacity(times.len());
    let Some(&t0) = times.first() else {
        return Ok(out);
    };
    let (mut x, mut v, mut t) = (x0, v0, t0);
    out.push(x);
    for &next in &times[1..] {
        let span = next - t;
        let steps = (span / max_step).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for s in 0..steps {
            let ts = t + s as f64 * h;
            let (k1x, k1v) = rhs(ts, x, v)?;
            let (k2x, k2v) = rhs(ts + 0.5 * h, x + 0.5 * h * k1x, v + 0.5 * h * k1v)?;
            let (k3x, k3v) = rhs(ts + 0.5 * h, x + 0.5 * h * k2x, v + 0.5 * h * k2v)?;
            let (k4x, k4v) = rhs(ts + h, x + h * k3x, v + h * k3v)?;
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        t = next;
        out.push(x);
    }
    Ok(out)
}

/// Trajectory of a fitted model from `x(times[0]) = x0`, `x'(times[0]) = v0`.
///
/// Constant models use the closed form. Time-varying models are integrated
/// with RK4 at a quarter of the smallest sample spacing; their coefficients
/// are only defined on the basis domain.
pub fn solve_trajectory(
    model: &OdeModel,
    x0: f64,
    v0: f64,
    times: &[f64],
) -> Result<ResponseCurve> {
    check_times(times, false)?;
    let values = match &model.params {
        OdeParams::Constant { w1, w0 } => {
            let t0 = times.first().copied().unwrap_or(0.0);
            times
                .iter()
                .map(|&t| free_response_at(*w1, *w0, x0, v0, t - t0))
                .collect()
        }
        OdeParams::TimeVarying { .. } => {
            let (lo, hi) = model.basis.domain();
            for (index, &t) in times.iter().enumerate() {
                if t < lo - 1e-12 || t > hi + 1e-12 {
                    return Err(Error::OutOfDomain { index, t, lo, hi });
                }
            }
            let spacing = times
                .windows(2)
                .map(|w| w[1] - w[0])
                .filter(|d| *d > 0.0)
                .fold(f64::INFINITY, f64::min);
            let max_step = if spacing.is_finite() {
                spacing / 4.0
            } else {
                1.0
            };
            integrate_rk4(|t| model.coefficients_at(t), x0, v0, times, max_step)?
        }
    };
    Ok(ResponseCurve {
        times: times.to_vec(),
        values,
        kind: ResponseKind::Free,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::make_basis;
    use proptest::prelude::*;

    fn constant_model(w1: f64, w0: f64) -> OdeModel {
        OdeModel {
            params: OdeParams::Constant { w1, w0 },
            basis: make_basis((0.0, 1.0), 0.1).unwrap(),
            lambda: 0.0,
            iterations: 0,
            converged: true,
            sse_p: 0.0,
            noise_variance: 0.0,
        }
    }

    #[test]
    fn reported_eigenvalues() {
        let [a, b] = characteristic_roots(2.598, 9394.2);
        assert!((a.re + 1.299).abs() < 1e-12);
        assert!((b.im - 96.9149761).abs() < 1e-6);
        assert_eq!(a.im, -b.im);
        let [a, b] = characteristic_roots(-6.97, 4535.9);
        assert!((a.re - 3.485).abs() < 1e-12);
        assert!((b.im - 67.2596).abs() < 1e-3);
        let [a, b] = characteristic_roots(2.0, 1.0);
        assert_eq!(a, Root { re: -1.0, im: 0.0 });
        assert_eq!(a, b);
    }

    #[test]
    fn real_roots_are_ordered_and_accurate() {
        let [a, b] = characteristic_roots(1e8, 1.0);
        assert!(a.re < b.re);
        assert!((b.re + 1e-8).abs() < 1e-20);
        assert!((a.re + 1e8).abs() < 1e-4);
        let [a, b] = characteristic_roots(0.0, -4.0);
        assert_eq!((a.re, b.re), (-2.0, 2.0));
    }

    #[test]
    fn regimes() {
        let n = stability(2.598, 9394.2);
        assert!(n.stable);
        assert_eq!(n.regime, Regime::Underdamped);
        assert!((n.natural_frequency.unwrap() - 96.9237).abs() < 1e-3);
        assert!((n.damping_ratio.unwrap() - 0.013402).abs() < 1e-5);

        let a = stability(-6.97, 4535.9);
        assert!(!a.stable);
        assert_eq!(a.regime, Regime::DivergentOscillatory);

        let m = stability(0.0, 1.0);
        assert!(!m.stable && m.marginal);
        assert_eq!(m.regime, Regime::Undamped);

        assert_eq!(stability(2.0, 1.0).regime, Regime::CriticallyDamped);
        assert_eq!(stability(5.0, 1.0).regime, Regime::Overdamped);
        assert_eq!(stability(-5.0, 1.0).regime, Regime::DivergentMonotone);
        assert_eq!(stability(1.0, -1.0).regime, Regime::DivergentMonotone);
        let z = stability(1.0, 0.0);
        assert_eq!(z.regime, Regime::Marginal);
        assert!(z.natural_frequency.is_none());
    }

    #[test]
    fn closed_form_probes() {
        let s = step_response(2.0, 1.0, &[1.0]).unwrap();
        assert!((s.values[0] - (1.0 - 2.0 * (-1.0f64).exp())).abs() < 1e-12);
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let s = step_response(0.0, 1.0, &ts).unwrap();
        let g = impulse_response(0.0, 1.0, &ts).unwrap();
        for (i, &t) in ts.iter().enumerate() {
            assert!((s.values[i] - (1.0 - t.cos())).abs() < 1e-12);
            assert!((g.values[i] - t.sin()).abs() < 1e-12);
        }
        assert!(matches!(
            step_response(1.0, 0.0, &ts),
            Err(Error::UnsupportedPole(_))
        ));
        assert!(impulse_response(1.0, 0.0, &ts)
            .unwrap()
            .values
            .iter()
            .all(|v| *v == 0.0));
        assert!(step_response(1.0, 1.0, &[1.0, 0.5]).is_err());
        assert!(step_response(1.0, 1.0, &[-1.0]).is_err());
    }

    #[test]
    fn reported_normal_parameters_settle() {
        // At t = 3 s the envelope e^{-1.299 t} sqrt(1 + (alpha/beta)^2) bounds
        // the distance from the final value.
        let (w1, w0) = (2.598, 9394.2);
        let s = step_response(w1, w0, &[3.0]).unwrap();
        let alpha: f64 = -w1 / 2.0;
        let beta = (w0 - alpha * alpha).sqrt();
        let bound = (alpha * 3.0).exp() * (1.0 + (alpha / beta).powi(2)).sqrt();
        assert!((s.values[0] - 1.0).abs() <= bound);
        assert!(bound < 0.021);
    }

    #[test]
    fn derivative_of_step_is_impulse() {
        let h = 1e-4;
        for (w1, w0) in [(3.0, 1.0), (2.0, 1.0), (0.5, 40.0), (1.2, 400.0)] {
            let ts: Vec<f64> = (0..=2000).map(|i| i as f64 * h).collect();
            let s = step_response(w1, w0, &ts).unwrap().values;
            let g = impulse_response(w1, w0, &ts).unwrap().values;
            let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 1..ts.len() - 1 {
                let fd = (s[i + 1] - s[i - 1]) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-5 * scale, "({w1},{w0}) i={i}");
            }
        }
    }

    #[test]
    fn unstable_envelope_grows() {
        let g = impulse_response(-6.97, 4535.9, &[0.5, 1.0]).unwrap();
        let s = step_response(-6.97, 4535.9, &[0.5, 1.0]).unwrap();
        // envelope ratio e^{3.485 * 0.5} ~ 5.7; compare against the envelope
        let env = |t: f64| (3.485 * t).exp();
        assert!(env(1.0) / env(0.5) > 5.0);
        assert!(g.values.iter().all(|v| v.is_finite()));
        assert!(s.values[1].abs() > 1.0);
    }

    #[test]
    fn regime_boundaries_agree() {
        // discriminant +-1e-8 around w1 = 2, w0 = 1
        let ts: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
        let rep = |t| free_response_at(2.0, 1.0, 1.0, 0.3, t);
        for d in [1e-8, -1e-8] {
            let w0 = 1.0 - d / 4.0;
            for &t in &ts {
                let v = free_response_at(2.0, w0, 1.0, 0.3, t);
                assert!((v - rep(t)).abs() < 1e-6, "d={d} t={t}");
            }
        }
    }

    #[test]
    fn trajectories() {
        let m = constant_model(2.0, 1.0);
        let c = solve_trajectory(&m, 1.0, 0.0, &[0.0, 1.0]).unwrap();
        assert!((c.values[1] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
        assert!((c.values[1] - 0.73576).abs() < 1e-5);
        let m = constant_model(0.0, 4.0);
        let ts: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let c = solve_trajectory(&m, 1.0, 0.0, &ts).unwrap();
        for (t, v) in ts.iter().zip(&c.values) {
            assert!((v - (2.0 * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_valued_time_varying_model_matches_closed_form() {
        let basis = make_basis((0.0, 2.0), 0.1).unwrap();
        let k = basis.len();
        let model = OdeModel {
            params: OdeParams::TimeVarying {
                h1: vec![0.8; k],
                h0: vec![25.0; k],
            },
            basis,
            lambda: 0.0,
            iterations: 0,
            converged: true,
            sse_p: 0.0,
            noise_variance: 0.0,
        };
        let ts: Vec<f64> = (0..=400).map(|i| i as f64 / 200.0).collect();
        let rk = solve_trajectory(&model, 1.0, -0.5, &ts).unwrap();
        for (t, v) in ts.iter().zip(&rk.values) {
            assert!((v - free_response_at(0.8, 25.0, 1.0, -0.5, *t)).abs() < 1e-6);
        }
        assert!(matches!(
            solve_trajectory(&model, 1.0, 0.0, &[0.0, 2.5]),
            Err(Error::OutOfDomain { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn vieta(w1 in -100.0f64..100.0, w0 in -1e5f64..1e5) {
            let [a, b] = characteristic_roots(w1, w0);
            let scale = (a.re.hypot(a.im) + b.re.hypot(b.im)).max(1e-300);
            let sum_re = a.re + b.re;
            let sum_im = a.im + b.im;
            prop_assert!((sum_re + w1).abs() <= 1e-9 * scale);
            prop_assert!(sum_im.abs() <= 1e-9 * scale);
            let prod_re = a.re * b.re - a.im * b.im;
            let prod_im = a.re * b.im + a.im * b.re;
            let pscale = scale * scale;
            prop_assert!((prod_re - w0).abs() <= 1e-9 * pscale);
            prop_assert!(prod_im.abs() <= 1e-9 * pscale);
        }

        #[test]
        fn routh_hurwitz(w1 in -100.0f64..100.0, w0 in -1e5f64..1e5) {
            prop_assert_eq!(stability(w1, w0).stable, w1 > 0.0 && w0 > 0.0);
        }
    }
}

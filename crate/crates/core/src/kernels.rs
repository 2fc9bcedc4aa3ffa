//! Scaled modified Bessel functions and the kernels of `Q` and `T`.
//!
//! `k0(t, s) = sqrt(p(t)) sqrt(p(s)) e^{-t-s} I0(2 sqrt(st))` is evaluated as
//! `sqrt(p(t)) sqrt(p(s)) e^{-(sqrt t - sqrt s)^2} i0e(2 sqrt(st))`, which is the
//! same number without the overflowing `I0` factor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Argument above which the large-`x` asymptotic series replaces the power series.
const ASYMPTOTIC_FROM: f64 = 20.0;

/// Below this `s` the weighted `k1` kernel uses its explicit power series.
const K1_SERIES_BELOW: f64 = 1e-8;

/// Kernels of the integral operators and their parameter derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelKind {
    /// Kernel of `Q`.
    K0,
    /// `k1(t, s) sqrt(t/s)`, the linear part of `T`. Not symmetric.
    K1Weighted,
    /// `d k0 / d nu = -(t+s)/2 k0`.
    DNuK0,
    /// `d k0 / d g = -(phi(t)+phi(s))/2 k0`.
    DGK0,
    /// `(t+s)^2/4 k0`.
    D2NuK0,
    /// `(t+s)(phi(t)+phi(s))/4 k0`.
    DNuDGK0,
    /// `(phi(t)+phi(s))^2/4 k0`.
    D2GK0,
}

impl KernelKind {
    pub fn is_symmetric(self) -> bool {
        !matches!(self, KernelKind::K1Weighted)
    }

    /// Polynomial prefactor multiplying `k0` for the derivative kinds.
    pub(crate) fn factor(self, params: &ModelParams, t: f64, s: f64) -> f64 {
        let dt = -0.5 * (t + s);
        let dg = -0.5 * (params.phi(t) + params.phi(s));
        match self {
            KernelKind::K0 | KernelKind::K1Weighted => 1.0,
            KernelKind::DNuK0 => dt,
            KernelKind::DGK0 => dg,
            KernelKind::D2NuK0 => dt * dt,
            KernelKind::DNuDGK0 => dt * dg,
            KernelKind::D2GK0 => dg * dg,
        }
    }
}

/// `e^{-x} I0(x)` for `x >= 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < ASYMPTOTIC_FROM {
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut m = 1.0;
        while term > 1e-17 * sum {
            term *= q / (m * m);
            sum += term;
            m += 1.0;
        }
        sum * (-x).exp()
    } else {
        asymptotic(x, 0.0)
    }
}

/// `e^{-x} I1(x)` for `x >= 0`.
pub fn bessel_i1_scaled(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < ASYMPTOTIC_FROM {
        let q = 0.25 * x * x;
        let mut term = 0.5 * x;
        let mut sum = term;
        let mut m = 1.0;
        while term > 1e-17 * sum {
            term *= q / (m * (m + 1.0));
            sum += term;
            m += 1.0;
        }
        sum * (-x).exp()
    } else {
        asymptotic(x, 4.0)
    }
}

/// Hankel expansion `e^{-x} I_v(x) ~ (2 pi x)^{-1/2} sum_k (-1)^k a_k(v) / x^k`,
/// with `mu = 4 v^2`, summed until the terms stop shrinking.
fn asymptotic(x: f64, mu: f64) -> f64 {
    let mut term = 1.0f64;
    let mut sum = 1.0;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (8.0 * k as f64 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

/// `log k(t, s)` for the positive kernels; `-inf` where the kernel vanishes.
///
/// Derivative kinds are not positive, so only `K0` and `K1Weighted` are accepted.
pub fn kernel_log_eval(kind: KernelKind, params: &ModelParams, t: f64, s: f64) -> Result<f64> {
    check_args(t, s)?;
    match kind {
        KernelKind::K0 => {
            let (lo, hi) = sorted(t, s);
            Ok(params.log_sqrt_p(lo) + params.log_sqrt_p(hi) + log_bessel_part(lo, hi))
        }
        KernelKind::K1Weighted => Ok(params.log_sqrt_p(t) + params.log_sqrt_p(s) + log_k1w_part(t, s)),
        _ => Err(Error::Domain(format!(
            "{kind:?} has no logarithm (not a positive kernel)"
        ))),
    }
}

/// Value of the kernel `kind` at `(t, s)`.
pub fn kernel_eval(kind: KernelKind, params: &ModelParams, t: f64, s: f64) -> Result<f64> {
    check_args(t, s)?;
    if kind == KernelKind::K1Weighted {
        return kernel_log_eval(kind, params, t, s).map(f64::exp);
    }
    let (lo, hi) = sorted(t, s);
    let k0 = (params.log_sqrt_p(lo) + params.log_sqrt_p(hi) - sq_gap(lo, hi)).exp()
        * bessel_i0_scaled(2.0 * (lo * hi).sqrt());
    Ok(kind.factor(params, lo, hi) * k0)
}

fn check_args(t: f64, s: f64) -> Result<()> {
    if t.is_nan() || s.is_nan() {
        return Err(Error::Domain("NaN kernel argument".into()));
    }
    if t < 0.0 || s < 0.0 {
        return Err(Error::Domain(format!("kernel arguments ({t}, {s}) must be >= 0")));
    }
    Ok(())
}

fn sorted(t: f64, s: f64) -> (f64, f64) {
    if t <= s {
        (t, s)
    } else {
        (s, t)
    }
}

fn sq_gap(t: f64, s: f64) -> f64 {
    let d = t.sqrt() - s.sqrt();
    d * d
}

/// `log(e^{-t-s} I0(2 sqrt(ts)))`, parameter independent.
pub(crate) fn log_bessel_part(t: f64, s: f64) -> f64 {
    -sq_gap(t, s) + bessel_i0_scaled(2.0 * (t * s).sqrt()).ln()
}

/// `log(e^{-t-s} I1(2 sqrt(ts)) sqrt(t/s))`, parameter independent.
pub(crate) fn log_k1w_part(t: f64, s: f64) -> f64 {
    if t == 0.0 {
        return f64::NEG_INFINITY;
    }
    if s < K1_SERIES_BELOW {
        // sum_m s^m t^{m+1} / (m! (m+1)!)
        let ts = t * s;
        let mut term = t;
        let mut sum = t;
        let mut m = 1.0;
        while term > 1e-18 * sum {
            term *= ts / (m * (m + 1.0));
            sum += term;
            m += 1.0;
        }
        return -t - s + sum.ln();
    }
    -sq_gap(t, s) + bessel_i1_scaled(2.0 * (t * s).sqrt()).ln() + 0.5 * (t / s).ln()
}

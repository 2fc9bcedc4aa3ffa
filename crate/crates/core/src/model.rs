//! Interaction function and single-site weight of the walk.
//!
//! The walk is reweighted by `prod_x p(L_x)` with `p(t) = exp(-g phi(t) - nu t)`,
//! where `phi` is a polynomial `sum_k a_k t^k` with powers `k >= 2`,
//! nonnegative coefficients and a positive leading coefficient. That family
//! satisfies every hypothesis the spectral representation needs; other
//! interaction functions are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Polynomial interaction `phi(t) = sum_k a_k t^k`.
///
/// Terms are kept sorted by power with no duplicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(u32, f64)>", into = "Vec<(u32, f64)>")]
pub struct PhiSpec {
    terms: Vec<(u32, f64)>,
}

impl PhiSpec {
    /// Builds an admissible interaction from `(power, coefficient)` pairs.
    pub fn new(terms: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut terms: Vec<(u32, f64)> = terms.into_iter().collect();
        if terms.is_empty() {
            return Err(Error::InvalidPhi("no terms given".into()));
        }
        terms.sort_by_key(|&(k, _)| k);
        for pair in terms.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::InvalidPhi(format!("power {} given twice", pair[0].0)));
            }
        }
        for &(k, a) in &terms {
            if k < 2 {
                return Err(Error::InvalidPhi(format!(
                    "power {k} < 2 (phi must vanish to second order at 0)"
                )));
            }
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidPhi(format!(
                    "coefficient {a} of t^{k} must be finite and nonnegative"
                )));
            }
        }
        let &(top, lead) = terms.last().expect("nonempty");
        if lead <= 0.0 {
            return Err(Error::InvalidPhi(format!(
                "leading coefficient of t^{top} must be positive"
            )));
        }
        Ok(Self { terms })
    }

    /// `phi(t) = t^2`.
    pub fn quadratic() -> Self {
        Self {
            terms: vec![(2, 1.0)],
        }
    }

    /// Builds a polynomial without checking admissibility.
    ///
    /// Only meant for null tests of formulas that are algebraic in `phi`
    /// (e.g. a linear `phi`, which only shifts `nu`).
    pub fn new_unchecked(terms: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut terms: Vec<(u32, f64)> = terms.into_iter().collect();
        terms.sort_by_key(|&(k, _)| k);
        Self { terms }
    }

    pub fn terms(&self) -> &[(u32, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.last().map_or(0, |&(k, _)| k)
    }

    /// `phi(t)` for `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self.eval_unchecked(t))
    }

    /// `phi'(t)` for `t >= 0`.
    pub fn derivative(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        Ok(self
            .terms
            .iter()
            .map(|&(k, a)| match k {
                0 => 0.0,
                1 => a,
                _ => a * f64::from(k) * t.powi(k as i32 - 1),
            })
            .sum())
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(k, a)| a * t.powi(k as i32)).sum()
    }

    /// Checks that `phi(t)/t` is nondecreasing on the given increasing points.
    pub fn ratio_nondecreasing_on(&self, points: &[f64]) -> bool {
        let ratios: Vec<f64> = points
            .iter()
            .filter(|&&t| t > 0.0)
            .map(|&t| self.eval_unchecked(t) / t)
            .collect();
        ratios.windows(2).all(|w| w[1] >= w[0])
    }
}

impl Default for PhiSpec {
    fn default() -> Self {
        Self::quadratic()
    }
}

impl TryFrom<Vec<(u32, f64)>> for PhiSpec {
    type Error = Error;

    fn try_from(terms: Vec<(u32, f64)>) -> Result<Self> {
        Self::new(terms)
    }
}

impl From<PhiSpec> for Vec<(u32, f64)> {
    fn from(phi: PhiSpec) -> Self {
        phi.terms
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_nan() || t < 0.0 {
        Err(Error::Domain(format!("time argument {t} must be >= 0")))
    } else {
        Ok(())
    }
}

/// Model parameters: repelling strength `g`, Laplace variable `nu` and the
/// interaction function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub g: f64,
    pub nu: f64,
    pub phi: PhiSpec,
}

impl ModelParams {
    pub fn new(g: f64, nu: f64, phi: PhiSpec) -> Result<Self> {
        if !(g.is_finite() && g > 0.0) {
            return Err(Error::Domain(format!("repelling strength g = {g} must be > 0")));
        }
        if !nu.is_finite() {
            return Err(Error::Domain(format!("nu = {nu} must be finite")));
        }
        Ok(Self { g, nu, phi })
    }

    /// The non-interacting walk (`g = 0`).
    ///
    /// Outside the model's `g > 0` domain, but every operator formula extends
    /// continuously to it and it has closed-form answers.
    pub fn free_walk(nu: f64) -> Self {
        Self {
            g: 0.0,
            nu,
            phi: PhiSpec::quadratic(),
        }
    }

    pub fn with_nu(&self, nu: f64) -> Self {
        Self { nu, ..self.clone() }
    }

    pub fn with_g(&self, g: f64) -> Self {
        Self { g, ..self.clone() }
    }

    pub fn phi(&self, t: f64) -> f64 {
        self.phi.eval_unchecked(t)
    }

    /// `log sqrt(p(t)) = -(g phi(t) + nu t) / 2`.
    ///
    /// All weights in the crate are built from this, so that products of
    /// weights spanning hundreds of orders of magnitude are formed in log space.
    pub fn log_sqrt_p(&self, t: f64) -> f64 {
        -0.5 * (self.g * self.phi.eval_unchecked(t) + self.nu * t)
    }

    /// `sqrt(p(t))`; fails only if the value leaves the `f64` range.
    pub fn sqrt_p(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        let v = self.log_sqrt_p(t).exp();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!(
                "sqrt p({t}) overflows at g = {}, nu = {}",
                self.g, self.nu
            )))
        }
    }
}

/// `phi(t)`.
pub fn phi_eval(phi: &PhiSpec, t: f64) -> Result<f64> {
    phi.eval(t)
}

/// `phi'(t)`.
pub fn phi_prime(phi: &PhiSpec, t: f64) -> Result<f64> {
    phi.derivative(t)
}

/// `sqrt(p(t)) = exp(-(g phi(t) + nu t) / 2)`.
pub fn sqrt_p(params: &ModelParams, t: f64) -> Result<f64> {
    params.sqrt_p(t)
}

//! The speed-derivative certificate.
//!
//! At the critical point `Q h0 = h0`, and with `u = t h0`
//!
//! `c_n = <Q^n u, phi h0> int s h0^2 - <Q^n u, s h0> int phi h0^2`.
//!
//! Writing `L[F] = F_{nu g} F_nu - F_{nu nu} F_g`, the sum `-c_0 - 2 sum c_n`
//! equals `L[lambda]`, and `d theta / dg = -theta^2 L[lambda] / (-lambda_nu)`.
//! So `c_0 > 0` and `c_n >= 0` give `theta' > 0`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::{self, Critical, CriticalityOptions};
use crate::discretize::{Discretization, DiscretizedOperator, QuadGrid};
use crate::error::{Error, Result};
use crate::kernels::bessel_i0_scaled;
use crate::model::{ModelParams, PhiSpec};
use crate::spectral::{self, SpectralResult, MIN_GAP};

/// Default number of terms after `c_0`.
pub const DEFAULT_TERMS: usize = 50;

/// Allowed negative roundoff in `c_n`, relative to `|c_0|`.
pub const CN_ROUNDOFF: f64 = 1e-12;

/// `c_n` is only defined at `lambda = 1`; this is the accepted slack.
const CRITICAL_SLACK: f64 = 1e-8;

/// Step of the finite-difference `L[H_n]`.
pub const FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnSequence {
    pub g: f64,
    pub nu_c: f64,
    /// `c_0, ..., c_N`.
    pub values: Vec<f64>,
    /// Bound on `sum_{n > N} |c_n|`.
    pub tail_bound: f64,
    /// Decay ratio `lambda_2 / lambda` behind the tail bound.
    pub ratio: f64,
}

impl CnSequence {
    /// `N`, the index of the last term.
    pub fn n_terms(&self) -> usize {
        self.values.len() - 1
    }

    /// `-c_0 - 2 sum_{n=1}^N c_n`.
    pub fn l_lambda(&self) -> f64 {
        -self.values[0] - 2.0 * self.values[1..].iter().sum::<f64>()
    }

    /// Bound on the truncation error of [`Self::l_lambda`].
    pub fn l_lambda_tail(&self) -> f64 {
        2.0 * self.tail_bound
    }

    /// `min_n c_n / |c_0|`.
    pub fn min_relative(&self) -> f64 {
        let scale = self.values[0].abs();
        self.values.iter().fold(f64::INFINITY, |m, &c| m.min(c / scale))
    }

    /// `c_0 > 0` and every `c_n >= -CN_ROUNDOFF |c_0|`.
    pub fn is_nonnegative(&self) -> bool {
        self.values[0] > 0.0 && self.min_relative() >= -CN_ROUNDOFF
    }
}

/// `c_0, ..., c_N` at a critical point.
pub fn cn_sequence(op: &DiscretizedOperator, spec: &SpectralResult, n_terms: usize) -> Result<CnSequence> {
    if n_terms < 1 {
        return Err(Error::Domain("need at least one term after c_0".into()));
    }
    if (spec.lambda - 1.0).abs() > CRITICAL_SLACK {
        return Err(Error::Domain(format!(
            "c_n needs lambda = 1, got {}",
            spec.lambda
        )));
    }
    if spec.gap < MIN_GAP {
        return Err(Error::IllConditioned { gap: spec.gap });
    }
    let h = &spec.h;
    let th = h.component_mul(op.t());
    let phih = h.component_mul(op.phi_values());
    let int_t = h.dot(&th);
    let int_phi = h.dot(&phih);
    // v is orthogonal to h, so only the complement of u contributes; projecting
    // u keeps eigenvector roundoff from accumulating over the powers
    let v = &phih * int_t - &th * int_phi;
    let mut x = &th - h * h.dot(&th);
    let ratio = spec.lambda2.max(0.0) / spec.lambda;
    let tail_bound = x.norm() * v.norm() * ratio.powi(n_terms as i32 + 1) / (1.0 - ratio);
    let mut values = Vec::with_capacity(n_terms + 1);
    values.push(th.dot(&v));
    for _ in 1..=n_terms {
        x = op.apply(&x)?;
        values.push(x.dot(&v));
    }
    Ok(CnSequence {
        g: op.params().g,
        nu_c: op.params().nu,
        values,
        tail_bound,
        ratio,
    })
}

/// `lambda_{nu g} lambda_nu - lambda_{nu nu} lambda_g` from the resolvent
/// second derivatives.
pub fn l_lambda_spectral(op: &DiscretizedOperator, spec: &SpectralResult) -> Result<f64> {
    let second = spectral::lambda_second_derivs(op, spec)?;
    Ok(second.nu_g * spec.dlambda_dnu - second.nu_nu * spec.dlambda_dg)
}

/// `d theta / dg = -theta^2 L[lambda] / (-lambda_nu)`.
pub fn dtheta_dg(theta: f64, dlambda_dnu: f64, l_lambda: f64) -> f64 {
    -theta * theta * l_lambda / (-dlambda_dnu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub g: f64,
    pub nu_c: f64,
    pub theta: f64,
    pub cn: CnSequence,
    /// `-c_0 - 2 sum c_n`.
    pub l_lambda: f64,
    pub l_lambda_tail: f64,
    /// The same quantity from the resolvent second derivatives.
    pub l_lambda_spectral: f64,
    pub dtheta_dg: f64,
    /// `l_lambda + l_lambda_tail < 0`.
    pub certified: bool,
}

/// Solves the critical point at `g` and evaluates the certificate there.
pub fn certificate(
    g: f64,
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
    n_terms: usize,
) -> Result<(Critical, Certificate)> {
    let crit = criticality::find_nu_c(g, phi, disc, opts)?;
    let cert = certificate_at(&crit, n_terms)?;
    Ok((crit, cert))
}

/// The certificate at an already solved critical point.
pub fn certificate_at(crit: &Critical, n_terms: usize) -> Result<Certificate> {
    let cn = cn_sequence(&crit.op, &crit.spectral, n_terms)?;
    let l_lambda = cn.l_lambda();
    let l_lambda_tail = cn.l_lambda_tail();
    let p = &crit.point;
    Ok(Certificate {
        g: p.g,
        nu_c: p.nu_c,
        theta: p.theta,
        l_lambda,
        l_lambda_tail,
        l_lambda_spectral: l_lambda_spectral(&crit.op, &crit.spectral)?,
        dtheta_dg: dtheta_dg(p.theta, p.dlambda_dnu_at_nuc, l_lambda),
        certified: l_lambda + l_lambda_tail < 0.0,
        cn,
    })
}

/// `L[H_n] = -(1/n) (-c_0/2 + c_n/2 + sum_{i,j=1}^n c_{|j-i|})`.
pub fn hn_formula(c: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n >= c.len() {
        return Err(Error::InsufficientData(format!(
            "L[H_{n}] needs c_0..c_{n}, have {} terms",
            c.len()
        )));
    }
    // sum_{i,j=1}^n c_{|j-i|} = n c_0 + 2 sum_{k=1}^{n-1} (n - k) c_k
    let double: f64 = n as f64 * c[0] + 2.0 * (1..n).map(|k| (n - k) as f64 * c[k]).sum::<f64>();
    Ok(-(-0.5 * c[0] + 0.5 * c[n] + double) / n as f64)
}

/// `-(1/n) sum_{i,j=0}^n a_i a_j c_{|j-i|}` with end weights `1/2`, summed
/// term by term.
pub fn hn_alpha_sum(c: &[f64], n: usize) -> Result<f64> {
    if n == 0 || n >= c.len() {
        return Err(Error::InsufficientData(format!(
            "L[H_{n}] needs c_0..c_{n}, have {} terms",
            c.len()
        )));
    }
    let alpha = |j: usize| if j == 0 || j == n { 0.5 } else { 1.0 };
    let mut sum = 0.0;
    for i in 0..=n {
        for j in 0..=n {
            sum += alpha(i) * alpha(j) * c[i.abs_diff(j)];
        }
    }
    Ok(-sum / n as f64)
}

/// `H_n(g, nu) = <Q(g, nu)^n h0, h0>^{1/n}` with `h0` held fixed.
pub fn h_n(disc: &Discretization, params: &ModelParams, h0: &DVector<f64>, n: usize) -> Result<f64> {
    let op = disc.operator(params)?;
    let mut x = h0.clone();
    for _ in 0..n {
        x = op.apply(&x)?;
    }
    Ok(x.dot(h0).powf(1.0 / n as f64))
}

/// `L[H_n]` by central differences of [`h_n`] with step `step` in both
/// variables.
pub fn hn_finite_difference(crit: &Critical, n: usize, step: f64) -> Result<f64> {
    let base = crit.params();
    let h0 = &crit.spectral.h;
    let at = |dg: f64, dnu: f64| {
        let p = base.with_g(base.g + dg * step).with_nu(base.nu + dnu * step);
        h_n(&crit.disc, &p, h0, n)
    };
    let c = at(0.0, 0.0)?;
    let (gp, gm) = (at(1.0, 0.0)?, at(-1.0, 0.0)?);
    let (np, nm) = (at(0.0, 1.0)?, at(0.0, -1.0)?);
    let (pp, pm, mp, mm) = (at(1.0, 1.0)?, at(1.0, -1.0)?, at(-1.0, 1.0)?, at(-1.0, -1.0)?);
    let h_g = (gp - gm) / (2.0 * step);
    let h_nu = (np - nm) / (2.0 * step);
    let h_nunu = (np - 2.0 * c + nm) / (step * step);
    let h_nug = (pp - pm - mp + mm) / (4.0 * step * step);
    Ok(h_nug * h_nu - h_nunu * h_g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnRow {
    pub n: usize,
    pub formula: f64,
    pub finite_difference: f64,
    /// `|formula - finite_difference| / |formula|`.
    pub rel_err: f64,
    /// `|formula - L[lambda]|`.
    pub distance_to_limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HnReport {
    pub g: f64,
    pub l_lambda: f64,
    pub rows: Vec<HnRow>,
    /// `distance_to_limit` strictly decreasing along `rows`.
    pub converging: bool,
}

/// Compares the `c_n` formula for `L[H_n]` with finite differences and with
/// the limit `L[lambda]`.
pub fn hn_consistency(crit: &Critical, cn: &CnSequence, n_list: &[usize]) -> Result<HnReport> {
    let l_lambda = cn.l_lambda();
    let rows = n_list
        .iter()
        .map(|&n| {
            let formula = hn_formula(&cn.values, n)?;
            let finite_difference = hn_finite_difference(crit, n, FD_STEP)?;
            Ok(HnRow {
                n,
                formula,
                finite_difference,
                rel_err: (formula - finite_difference).abs() / formula.abs(),
                distance_to_limit: (formula - l_lambda).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let converging = rows
        .windows(2)
        .all(|w| w[1].distance_to_limit < w[0].distance_to_limit);
    Ok(HnReport {
        g: cn.g,
        l_lambda,
        rows,
        converging,
    })
}

/// Slack on the log of the Bessel ratio.
const RATIO_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub x: f64,
    pub y: f64,
    /// Largest decrease of `log I0(2 sqrt(sy)) - log I0(2 sqrt(sx))` between
    /// consecutive sample points (0 if nondecreasing).
    pub worst_drop: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub pairs: Vec<PairCheck>,
    /// `phi(s)/s` nondecreasing on the grid nodes.
    pub phi_ratio_pass: bool,
    pub all_pass: bool,
}

/// `log I0(x)`.
fn log_i0(x: f64) -> f64 {
    bessel_i0_scaled(x).ln() + x
}

/// Checks that `s -> I0(2 sqrt(sy)) / I0(2 sqrt(sx))` is nondecreasing.
pub fn bessel_ratio_check(x: f64, y: f64, points: &[f64]) -> PairCheck {
    let (x, y) = (x.min(y), x.max(y));
    let log_ratio = |s: f64| log_i0(2.0 * (s * y).sqrt()) - log_i0(2.0 * (s * x).sqrt());
    let values: Vec<f64> = points.iter().map(|&s| log_ratio(s)).collect();
    let worst_drop = values
        .windows(2)
        .map(|w| (w[0] - w[1]).max(0.0))
        .fold(0.0, f64::max);
    PairCheck {
        x,
        y,
        worst_drop,
        pass: worst_drop <= RATIO_SLACK,
    }
}

/// Samples `n_pairs` random pairs `x <= y` in `[0, s_max]` and checks the
/// Bessel ratio on `n_points` equispaced points, plus `phi(s)/s` on the nodes.
pub fn dominance_check(
    phi: &PhiSpec,
    grid: &QuadGrid,
    n_pairs: usize,
    n_points: usize,
    seed: u64,
) -> DominanceReport {
    let s_max = grid.s_max();
    let points: Vec<f64> = (0..n_points.max(2))
        .map(|i| s_max * i as f64 / (n_points.max(2) - 1) as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<PairCheck> = (0..n_pairs)
        .map(|_| {
            let a = rng.random_range(0.0..s_max);
            let b = rng.random_range(0.0..s_max);
            bessel_ratio_check(a, b, &points)
        })
        .collect();
    let phi_ratio_pass = phi.ratio_nondecreasing_on(grid.nodes());
    let all_pass = phi_ratio_pass && pairs.iter().all(|p| p.pass);
    DominanceReport {
        pairs,
        phi_ratio_pass,
        all_pass,
    }
}

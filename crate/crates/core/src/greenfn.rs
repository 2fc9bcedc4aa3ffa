//! Two-point functions, susceptibility and correlation lengths.
//!
//! With `q` the fixed point of `T`, the infinite-volume two-point function is
//! `G_ij = <Q^{|j-i|} q, q>` and the one-sided susceptibility is
//! `chi_+ = <Q (1 - Q)^{-1} q, q>`.

use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::discretize::DiscretizedOperator;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::spectral::SpectralResult;

pub const FIXED_POINT_TOL: f64 = 1e-10;
pub const FIXED_POINT_MAX_ITER: usize = 10_000;
/// Consecutive non-shrinking increments tolerated before giving up.
const NON_CONTRACTION_RUN: usize = 50;

/// Largest `k` for which moment sums are available.
pub const MAX_MOMENT: usize = 6;

/// Resolvent sums are refused unless `lambda < 1 - SUBCRITICAL_MARGIN`.
pub const SUBCRITICAL_MARGIN: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FixedPoint {
    /// `sqrt(w)`-scaled samples of `q`.
    pub q: DVector<f64>,
    pub iterations: usize,
    /// `||T q - q||`.
    pub residual: f64,
    /// Mean ratio of successive increments over the last iterations.
    pub contraction: f64,
    pub params: ModelParams,
}

/// Iterates `T` from `sqrt(p)` to its fixed point.
pub fn fixed_point_q(op: &DiscretizedOperator) -> Result<FixedPoint> {
    let offset = op.t_offset();
    let mut f = op.sqrt_p_vector();
    let mut prev_step = f64::INFINITY;
    let mut growing = 0;
    let mut ratios: Vec<f64> = Vec::new();
    for it in 1..=FIXED_POINT_MAX_ITER {
        let next = &offset + op.apply_a(&f)?;
        let step = (&next - &f).norm();
        f = next;
        if !step.is_finite() {
            return Err(non_contraction(op, f64::INFINITY));
        }
        if prev_step.is_finite() && prev_step > 0.0 {
            let r = step / prev_step;
            ratios.push(r);
            growing = if r >= 1.0 { growing + 1 } else { 0 };
            if growing >= NON_CONTRACTION_RUN {
                return Err(non_contraction(op, r));
            }
        }
        prev_step = step;
        if step <= 1e-3 * FIXED_POINT_TOL * f.norm().max(1.0) || step == 0.0 {
            let residual = (&offset + op.apply_a(&f)? - &f).norm();
            let tail = &ratios[ratios.len().saturating_sub(10)..];
            let contraction = if tail.is_empty() {
                0.0
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            };
            return Ok(FixedPoint {
                q: f,
                iterations: it,
                residual,
                contraction,
                params: op.params().clone(),
            });
        }
    }
    Err(Error::NoConvergence {
        what: "fixed point of T",
        iterations: FIXED_POINT_MAX_ITER,
        residual: prev_step,
    })
}

fn non_contraction(op: &DiscretizedOperator, ratio: f64) -> Error {
    Error::NonContraction {
        g: op.params().g,
        nu: op.params().nu,
        ratio,
    }
}

/// `G_ij = <Q^{|j-i|} q, q>`.
pub fn two_point(op: &DiscretizedOperator, q: &FixedPoint, i: i64, j: i64) -> Result<f64> {
    let sep = (j - i).unsigned_abs() as usize;
    Ok(*two_point_profile(op, q, sep)?.last().expect("nonempty"))
}

/// `G_{0j}` for `j = 0..=j_max`.
pub fn two_point_profile(op: &DiscretizedOperator, q: &FixedPoint, j_max: usize) -> Result<Vec<f64>> {
    let mut v = q.q.clone();
    let mut out = Vec::with_capacity(j_max + 1);
    out.push(v.dot(&q.q));
    for j in 1..=j_max {
        v = op.apply(&v)?;
        let g = v.dot(&q.q);
        if !g.is_finite() {
            return Err(Error::Overflow { separation: j });
        }
        out.push(g);
    }
    Ok(out)
}

/// `G^N_ij = <Q^{j-i} T^{N+i}[sqrt p], T^{N-j}[sqrt p]>` on the box `[-N, N]`.
pub fn finite_volume_two_point(op: &DiscretizedOperator, n: usize, i: i64, j: i64) -> Result<f64> {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    let nn = n as i64;
    if i < -nn || j > nn {
        return Err(Error::Domain(format!(
            "sites ({i}, {j}) outside the box [-{n}, {n}]"
        )));
    }
    let left = t_power_sqrt_p(op, (nn + i) as usize)?;
    let right = t_power_sqrt_p(op, (nn - j) as usize)?;
    let mut v = left;
    for _ in 0..(j - i) {
        v = op.apply(&v)?;
    }
    let g = v.dot(&right);
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::Overflow {
            separation: (j - i) as usize,
        })
    }
}

/// `T^k[sqrt p]`.
pub fn t_power_sqrt_p(op: &DiscretizedOperator, k: usize) -> Result<DVector<f64>> {
    let mut f = op.sqrt_p_vector();
    for _ in 0..k {
        f = op.apply_t(&f)?;
    }
    Ok(f)
}

fn check_subcritical(spec: &SpectralResult) -> Result<()> {
    if spec.lambda < 1.0 - SUBCRITICAL_MARGIN {
        Ok(())
    } else {
        Err(Error::Critical {
            lambda: spec.lambda,
            shift: 1.0,
            distance: (1.0 - spec.lambda).abs(),
        })
    }
}

/// `chi_+ = <Q (1 - Q)^{-1} q, q> = sum_{j >= 1} G_{0j}`.
pub fn susceptibility_plus(op: &DiscretizedOperator, spec: &SpectralResult, q: &FixedPoint) -> Result<f64> {
    check_subcritical(spec)?;
    let x = op.resolvent_solve(1.0, spec.lambda, &q.q)?;
    Ok(op.apply(&x)?.dot(&q.q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSums {
    pub chi_plus: f64,
    pub g00: f64,
    /// Two-sided `chi = 2 chi_+ + G_00`.
    pub chi: f64,
    /// `k -> sum_{j >= 1} j^k G_{0j}`, `k = 0..=K`.
    pub moments: BTreeMap<usize, f64>,
    /// `k -> (sum_j |j|^k G_{0j} / chi)^{1/k}`, `k = 1..=K`.
    pub xi: BTreeMap<usize, f64>,
}

/// Stirling numbers of the second kind `S(k, m)`, `0 <= m <= k <= MAX_MOMENT`.
pub fn stirling2(k: usize, m: usize) -> u64 {
    let mut s = [[0u64; MAX_MOMENT + 1]; MAX_MOMENT + 1];
    s[0][0] = 1;
    for a in 1..=MAX_MOMENT {
        for b in 1..=a {
            s[a][b] = b as u64 * s[a - 1][b] + s[a - 1][b - 1];
        }
    }
    s[k][m]
}

/// Moments `sum_{j >= 1} j^k G_{0j}` for `k <= k_max`, via
/// `sum_j j^k z^j = sum_m S(k,m) m! z^m (1-z)^{-(m+1)}` and chained solves.
pub fn moment_sums(
    op: &DiscretizedOperator,
    spec: &SpectralResult,
    q: &FixedPoint,
    k_max: usize,
) -> Result<MomentSums> {
    if k_max > MAX_MOMENT {
        return Err(Error::Domain(format!("k_max = {k_max} exceeds {MAX_MOMENT}")));
    }
    check_subcritical(spec)?;
    let res = op.resolvent(1.0, spec.lambda)?;
    // y_r = (1 - Q)^{-r} q
    let mut y = vec![q.q.clone()];
    for r in 1..=k_max + 1 {
        y.push(res.solve(&y[r - 1]));
    }
    // w_m = <Q^m (1 - Q)^{-(m+1)} q, q>
    let mut w = vec![0.0; k_max + 1];
    for (m, wm) in w.iter_mut().enumerate().skip(1) {
        let mut v = y[m + 1].clone();
        for _ in 0..m {
            v = op.apply(&v)?;
        }
        *wm = v.dot(&q.q);
    }
    let chi_plus = op.apply(&y[1])?.dot(&q.q);
    let g00 = q.q.norm_squared();
    let chi = 2.0 * chi_plus + g00;
    let mut moments = BTreeMap::new();
    let mut xi = BTreeMap::new();
    moments.insert(0, chi_plus);
    let mut fact = 1.0;
    let mut m_fact = vec![1.0; k_max + 1];
    for (m, f) in m_fact.iter_mut().enumerate().skip(1) {
        fact *= m as f64;
        *f = fact;
    }
    for k in 1..=k_max {
        let mk: f64 = (1..=k).map(|m| stirling2(k, m) as f64 * m_fact[m] * w[m]).sum();
        moments.insert(k, mk);
        xi.insert(k, (2.0 * mk / chi).powf(1.0 / k as f64));
    }
    Ok(MomentSums {
        chi_plus,
        g00,
        chi,
        moments,
        xi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub amplitude: f64,
    pub r2: f64,
}

pub const MIN_FIT_POINTS: usize = 6;

/// Least-squares fit of `log y = log A + exponent log x`.
pub fn exponent_fit(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData(format!(
            "{} points; a power-law fit needs at least {MIN_FIT_POINTS}",
            points.len()
        )));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Domain(format!("nonpositive data point ({x}, {y})")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("all x values coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerLawFit {
        exponent: slope,
        amplitude: intercept.exp(),
        r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_grid, Discretization, QuadGrid, QuadRule};
    use crate::model::PhiSpec;
    use crate::spectral::leading_eigenpair;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn coarse() -> Discretization {
        Discretization::new(build_grid(60.0, 30, 10, QuadRule::CompositeGaussLegendre).unwrap())
    }

    #[test]
    fn free_walk_two_point_closed_form() {
        let nu = 1.0f64;
        let op = Discretization::new(QuadGrid::default_grid())
            .operator(&ModelParams::free_walk(nu))
            .unwrap();
        let q = fixed_point_q(&op).unwrap();
        let b = 1.0 + 0.5 * nu;
        let z = b - (b * b - 1.0).sqrt();
        let norm = (nu * (nu + 4.0)).sqrt();
        let g = two_point_profile(&op, &q, 5).unwrap();
        for (j, gj) in g.iter().enumerate() {
            // independent route: (1/pi) int_0^pi cos(j x) / (nu + 2 - 2 cos x) dx
            let m = 20000;
            let quad: f64 = (0..m)
                .map(|k| {
                    let x = std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
                    (j as f64 * x).cos() / (nu + 2.0 - 2.0 * x.cos())
                })
                .sum::<f64>()
                / m as f64;
            let closed = z.powi(j as i32) / norm;
            assert!(rel(quad, closed) < 1e-9, "j = {j}");
            assert!(rel(*gj, closed) < 1e-7, "j = {j}: {gj} vs {closed}");
        }
        let spec = leading_eigenpair(&op).unwrap();
        let chi = susceptibility_plus(&op, &spec, &q).unwrap();
        assert!(rel(chi, z / ((1.0 - z) * 5f64.sqrt())) < 1e-7);
    }

    #[test]
    fn fixed_point_lower_bound_and_residual() {
        let op = coarse()
            .operator(&ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap())
            .unwrap();
        let offset = op.t_offset();
        let once = op.apply_t(&op.sqrt_p_vector()).unwrap();
        assert!(once.iter().zip(offset.iter()).all(|(a, b)| a >= b));
        let q = fixed_point_q(&op).unwrap();
        assert!(q.residual <= FIXED_POINT_TOL);
        assert!(q.q.iter().zip(offset.iter()).all(|(a, b)| a >= b));
        assert!(q.contraction > 0.0 && q.contraction < 1.0);
    }

    #[test]
    fn t_iterates_contract_geometrically() {
        let op = coarse()
            .operator(&ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap())
            .unwrap();
        let mut f = op.sqrt_p_vector();
        let mut steps = Vec::new();
        for _ in 0..20 {
            let next = op.apply_t(&f).unwrap();
            steps.push((&next - &f).norm());
            f = next;
        }
        assert!(steps.windows(2).all(|w| w[1] < w[0]));
        let ratio = (steps[19] / steps[9]).powf(0.1);
        assert!(ratio < 1.0);
        // bounded by the norm of A
        let a = op.assemble(crate::KernelKind::K1Weighted).unwrap();
        let sv = a.singular_values().max();
        assert!(ratio <= sv * (1.0 + 1e-6));
    }

    #[test]
    fn finite_volume_limits() {
        let p = ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap();
        let disc = coarse();
        let op = disc.operator(&p).unwrap();
        let g0 = finite_volume_two_point(&op, 0, 0, 0).unwrap();
        let int_p = disc.grid().integrate(|t| (-(t * t)).exp());
        assert!(rel(g0, int_p) < 1e-13);
        let q = fixed_point_q(&op).unwrap();
        for (i, j) in [(0, 0), (0, 2), (-1, 3)] {
            let fin = finite_volume_two_point(&op, 200, i, j).unwrap();
            let inf = two_point(&op, &q, i, j).unwrap();
            assert!(rel(fin, inf) < 1e-8);
        }
        assert!(finite_volume_two_point(&op, 2, 0, 3).is_err());
    }

    #[test]
    fn susceptibility_matches_direct_sum() {
        let disc = coarse();
        for (g, nu) in [(1.0, -1.0), (0.5, 0.0), (3.0, -2.0)] {
            let op = disc
                .operator(&ModelParams::new(g, nu, PhiSpec::quadratic()).unwrap())
                .unwrap();
            let spec = leading_eigenpair(&op).unwrap();
            let q = fixed_point_q(&op).unwrap();
            let chi = susceptibility_plus(&op, &spec, &q).unwrap();
            let j_max = ((1e-14f64).ln() / spec.lambda.ln()).ceil() as usize;
            let prof = two_point_profile(&op, &q, j_max).unwrap();
            let direct: f64 = prof[1..].iter().sum();
            let tail = q.q.norm_squared() * spec.lambda.powi(j_max as i32 + 1) / (1.0 - spec.lambda);
            assert!((chi - direct).abs() <= tail + 1e-8 * chi, "({g}, {nu})");
            let ms = moment_sums(&op, &spec, &q, 3).unwrap();
            assert!(rel(ms.chi_plus, chi) < 1e-12);
            for k in 1..=3 {
                let d: f64 = prof
                    .iter()
                    .enumerate()
                    .map(|(j, v)| (j as f64).powi(k as i32) * v)
                    .sum();
                assert!(rel(ms.moments[&k], d) < 1e-8, "k = {k}");
            }
        }
    }

    #[test]
    fn first_moment_is_direct_resolvent_square() {
        let op = coarse()
            .operator(&ModelParams::new(1.0, -1.0, PhiSpec::quadratic()).unwrap())
            .unwrap();
        let spec = leading_eigenpair(&op).unwrap();
        let q = fixed_point_q(&op).unwrap();
        let ms = moment_sums(&op, &spec, &q, 1).unwrap();
        let x = op.resolvent_solve(1.0, spec.lambda, &q.q).unwrap();
        let x2 = op.resolvent_solve(1.0, spec.lambda, &x).unwrap();
        let direct = op.apply(&x2).unwrap().dot(&q.q);
        assert!(rel(ms.moments[&1], direct) < 1e-13);
    }

    #[test]
    fn susceptibility_decreasing_in_nu_and_guarded() {
        let disc = coarse();
        let base = ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap();
        let chis: Vec<f64> = [-1.5, -1.0, -0.5, 0.0, 0.5]
            .iter()
            .map(|&nu| {
                let op = disc.operator(&base.with_nu(nu)).unwrap();
                let spec = leading_eigenpair(&op).unwrap();
                susceptibility_plus(&op, &spec, &fixed_point_q(&op).unwrap()).unwrap()
            })
            .collect();
        assert!(chis.windows(2).all(|w| w[1] < w[0]));
        let op = disc.operator(&base.with_nu(-2.0)).unwrap();
        let spec = leading_eigenpair(&op).unwrap();
        assert!(spec.lambda > 1.0);
        let q = FixedPoint {
            q: op.sqrt_p_vector(),
            iterations: 0,
            residual: 0.0,
            contraction: 0.0,
            params: base.with_nu(-2.0),
        };
        assert!(matches!(
            susceptibility_plus(&op, &spec, &q),
            Err(Error::Critical { .. })
        ));
    }

    #[test]
    fn stirling_table() {
        assert_eq!(stirling2(1, 1), 1);
        assert_eq!(stirling2(3, 2), 3);
        assert_eq!(stirling2(4, 2), 7);
        assert_eq!(stirling2(6, 3), 90);
        // sum_j j^k z^j identity at z = 0.3, k = 4
        let z: f64 = 0.3;
        let direct: f64 = (1..400).map(|j| (j as f64).powi(4) * z.powi(j)).sum();
        let mut fact = 1.0;
        let mut via = 0.0;
        for m in 1..=4 {
            fact *= m as f64;
            via += stirling2(4, m) as f64 * fact * z.powi(m as i32) / (1.0 - z).powi(m as i32 + 1);
        }
        assert!(rel(via, direct) < 1e-13);
    }

    #[test]
    fn power_law_fit_exact() {
        let pts: Vec<(f64, f64)> = (1..=8).map(|i| (i as f64, 3.0 * (i as f64).powi(2))).collect();
        let f = exponent_fit(&pts).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        assert!((f.amplitude - 3.0).abs() < 1e-11);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        let mut bad = pts.clone();
        bad[3].1 = -1.0;
        assert!(matches!(exponent_fit(&bad), Err(Error::Domain(_))));
        assert!(matches!(exponent_fit(&pts[..5]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn non_contraction_detected_below_critical() {
        let op = coarse()
            .operator(&ModelParams::new(1.0, -3.0, PhiSpec::quadratic()).unwrap())
            .unwrap();
        assert!(matches!(fixed_point_q(&op), Err(Error::NonContraction { .. })));
    }
}

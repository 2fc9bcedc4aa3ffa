//! Leading eigenpair of `Q`, its spectral gap, and the parameter derivatives
//! of `lambda(g, nu) = ||Q(g, nu)||`.
//!
//! First derivatives are Hellmann–Feynman sandwiches `<Q_x h, h>`. Second
//! derivatives add the reduced-resolvent term
//! `2 <(lambda - Q)^{-1} P Q_y h, P Q_x h>` with `P` the projection off `h`.

use nalgebra::{DMatrix, DVector};

use crate::discretize::{symmetric_eigen, Discretization, DiscretizedOperator};
use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::model::ModelParams;

/// Dense operators up to this size are diagonalized outright.
pub const FULL_EIGEN_LIMIT: usize = 400;

/// Required residual `||M h - lambda h||`.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-10;

/// Gap below which the complement solve is refused.
pub const MIN_GAP: f64 = 1e-8;

const LANCZOS_STEPS: usize = 60;
const LANCZOS_RESTARTS: usize = 30;

#[derive(Debug, Clone)]
pub struct SpectralResult {
    pub lambda: f64,
    /// Unit, entrywise nonnegative, `sqrt(w)`-scaled eigenvector.
    pub h: DVector<f64>,
    pub lambda2: f64,
    pub gap: f64,
    pub residual: f64,
    pub dlambda_dnu: f64,
    pub dlambda_dg: f64,
    pub second: Option<SecondDerivatives>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondDerivatives {
    pub nu_nu: f64,
    /// Mixed derivative with the resolvent acting on the `g`-perturbation.
    pub nu_g: f64,
    /// Mixed derivative with the resolvent acting on the `nu`-perturbation.
    pub g_nu: f64,
    pub g_g: f64,
}

/// Leading eigenpair, gap and first derivatives.
pub fn leading_eigenpair(op: &DiscretizedOperator) -> Result<SpectralResult> {
    let n = op.dim();
    let (_, h0, lambda2) = if let Some(pairs) = op.series_eigenpairs(2) {
        let l2 = pairs.get(1).map_or(0.0, |p| p.0);
        let (l1, h) = pairs
            .into_iter()
            .next()
            .ok_or(Error::InsufficientData("empty operator".into()))?;
        (l1, h, l2)
    } else if n <= FULL_EIGEN_LIMIT {
        let m = op.dense().expect("dense operator");
        dense_top_two(m)
    } else {
        let start = DVector::from_column_slice(op.grid().weights()).map(f64::sqrt);
        let r = lanczos_top_two(|x| op.apply(x).expect("dimension checked"), start)?;
        (r.0, r.1, r.2)
    };
    // one power step clears sign noise in entries the kernel has already killed
    let mut h = op.apply(&orient(h0))?;
    let norm = h.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::NoConvergence {
            what: "leading eigenvector",
            iterations: 0,
            residual: f64::NAN,
        });
    }
    h /= norm;
    let mh = op.apply(&h)?;
    let lambda = h.dot(&mh);
    let residual = (&mh - lambda * &h).norm();
    if residual > EIGEN_RESIDUAL_TOL * lambda.max(1.0) {
        return Err(Error::NoConvergence {
            what: "leading eigenpair",
            iterations: LANCZOS_RESTARTS,
            residual,
        });
    }
    let mut out = SpectralResult {
        lambda,
        h,
        lambda2,
        gap: lambda - lambda2,
        residual,
        dlambda_dnu: 0.0,
        dlambda_dg: 0.0,
        second: None,
    };
    let (dnu, dg) = lambda_first_derivs(op, &out)?;
    out.dlambda_dnu = dnu;
    out.dlambda_dg = dg;
    Ok(out)
}

/// Leading eigenpair with second derivatives filled in.
pub fn leading_eigenpair_full(op: &DiscretizedOperator) -> Result<SpectralResult> {
    let mut s = leading_eigenpair(op)?;
    s.second = Some(lambda_second_derivs(op, &s)?);
    Ok(s)
}

/// `lambda(g, nu)` on a discretization.
pub fn lambda_at(disc: &Discretization, params: &ModelParams) -> Result<f64> {
    Ok(leading_eigenpair(&disc.operator(params)?)?.lambda)
}

/// `(d lambda / d nu, d lambda / d g) = (<Q_nu h, h>, <Q_g h, h>)`.
pub fn lambda_first_derivs(op: &DiscretizedOperator, spec: &SpectralResult) -> Result<(f64, f64)> {
    let h = &spec.h;
    Ok((
        h.dot(&op.apply_kind(KernelKind::DNuK0, h)?),
        h.dot(&op.apply_kind(KernelKind::DGK0, h)?),
    ))
}

/// Second derivatives of `lambda` in `(nu, g)`.
pub fn lambda_second_derivs(op: &DiscretizedOperator, spec: &SpectralResult) -> Result<SecondDerivatives> {
    if spec.gap < MIN_GAP {
        return Err(Error::IllConditioned { gap: spec.gap });
    }
    let h = &spec.h;
    let project = |v: DVector<f64>| &v - h * h.dot(&v);
    let qnu = project(op.apply_kind(KernelKind::DNuK0, h)?);
    let qg = project(op.apply_kind(KernelKind::DGK0, h)?);
    let rnu = op.complement_solve(spec.lambda, h, &qnu)?;
    let rg = op.complement_solve(spec.lambda, h, &qg)?;
    let sandwich = |kind| -> Result<f64> { Ok(h.dot(&op.apply_kind(kind, h)?)) };
    Ok(SecondDerivatives {
        nu_nu: sandwich(KernelKind::D2NuK0)? + 2.0 * rnu.dot(&qnu),
        nu_g: sandwich(KernelKind::DNuDGK0)? + 2.0 * rg.dot(&qnu),
        g_nu: sandwich(KernelKind::DNuDGK0)? + 2.0 * rnu.dot(&qg),
        g_g: sandwich(KernelKind::D2GK0)? + 2.0 * rg.dot(&qg),
    })
}

/// Solves `(shift I - M) x = rhs`, refusing shifts within `1e-10` of `lambda`.
pub fn resolvent_solve(
    op: &DiscretizedOperator,
    spec: &SpectralResult,
    shift: f64,
    rhs: &DVector<f64>,
) -> Result<DVector<f64>> {
    op.resolvent_solve(shift, spec.lambda, rhs)
}

/// Top two eigenvalues and the top eigenvector of a symmetric matrix.
pub fn dense_top_two(m: &DMatrix<f64>) -> (f64, DVector<f64>, f64) {
    let (values, vectors) = symmetric_eigen(m);
    let l2 = values.get(1).copied().unwrap_or(0.0);
    (values[0], vectors.column(0).into_owned(), l2)
}

/// Lanczos with full reorthogonalization, restarted from the top Ritz vector.
///
/// Returns `(lambda_1, v_1, lambda_2)`.
pub fn lanczos_top_two(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    start: DVector<f64>,
) -> Result<(f64, DVector<f64>, f64)> {
    let n = start.len();
    let steps = LANCZOS_STEPS.min(n);
    let mut q0 = start;
    let mut last_residual = f64::INFINITY;
    for _ in 0..LANCZOS_RESTARTS {
        let q0n = q0.norm();
        if q0n.is_nan() || q0n <= 0.0 {
            return Err(Error::InsufficientData("zero start vector".into()));
        }
        let mut basis: Vec<DVector<f64>> = vec![q0 / q0n];
        let mut alpha = Vec::with_capacity(steps);
        let mut beta: Vec<f64> = Vec::with_capacity(steps);
        let mut scale = 0.0f64;
        for k in 0..steps {
            let mut w = apply(&basis[k]);
            let a = basis[k].dot(&w);
            alpha.push(a);
            scale = scale.max(a.abs());
            // two passes of classical Gram–Schmidt against the whole basis
            for _ in 0..2 {
                for v in &basis {
                    let c = v.dot(&w);
                    w.axpy(-c, v, 1.0);
                }
            }
            let b = w.norm();
            if k + 1 == steps || b <= 1e-13 * scale.max(f64::MIN_POSITIVE) {
                break;
            }
            beta.push(b);
            basis.push(w / b);
        }
        let m = alpha.len();
        let tri = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let (l1, s1, l2) = dense_top_two(&tri);
        let mut y = DVector::zeros(n);
        for (v, c) in basis.iter().zip(s1.iter()) {
            y.axpy(*c, v, 1.0);
        }
        y /= y.norm();
        let r = (apply(&y) - l1 * &y).norm();
        last_residual = r;
        if r <= 0.1 * EIGEN_RESIDUAL_TOL * l1.abs().max(1.0) {
            return Ok((l1, y, if m > 1 { l2 } else { 0.0 }));
        }
        q0 = y;
    }
    Err(Error::NoConvergence {
        what: "Lanczos iteration",
        iterations: LANCZOS_RESTARTS,
        residual: last_residual,
    })
}

/// Sign convention: the largest-magnitude entry is positive.
fn orient(mut h: DVector<f64>) -> DVector<f64> {
    let imax = h.iamax();
    if h[imax] < 0.0 {
        h.neg_mut();
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretize::{build_grid, Backend, QuadGrid, QuadRule};
    use crate::model::PhiSpec;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn free_lambda(nu: f64) -> f64 {
        let b = 1.0 + 0.5 * nu;
        1.0 / (b + (b * b - 1.0).sqrt())
    }

    fn mid_grid() -> QuadGrid {
        build_grid(60.0, 30, 10, QuadRule::CompositeGaussLegendre).unwrap()
    }

    fn lanczos_grid() -> QuadGrid {
        build_grid(60.0, 60, 10, QuadRule::CompositeGaussLegendre).unwrap()
    }

    #[test]
    fn free_walk_closed_form() {
        let disc = Discretization::new(QuadGrid::default_grid());
        let s = leading_eigenpair(&disc.operator(&ModelParams::free_walk(1.0)).unwrap()).unwrap();
        assert!((s.lambda - 0.38196601125010515).abs() < 1e-8);
        assert!(rel(s.lambda, free_lambda(1.0)) < 1e-8);
        // d/dnu of 1/(b + sqrt(b^2 - 1)) = (1 - b/sqrt(b^2-1))/2
        let b: f64 = 1.5;
        let want = 0.5 * (1.0 - b / (b * b - 1.0).sqrt());
        assert!((want + 0.1708203932499369).abs() < 1e-15);
        assert!(rel(s.dlambda_dnu, want) < 1e-6);
        assert!(s.h.iter().all(|&v| v >= 0.0));
        assert!(s.residual <= EIGEN_RESIDUAL_TOL);
    }

    #[test]
    fn free_walk_tends_to_one_near_zero() {
        let disc = Discretization::new(build_grid(400.0, 200, 10, QuadRule::CompositeGaussLegendre).unwrap());
        let mut prev = 0.0;
        for nu in [0.5, 0.2, 0.1, 0.05] {
            let l = lambda_at(&disc, &ModelParams::free_walk(nu)).unwrap();
            assert!(l < 1.0 && l > prev);
            assert!(rel(l, free_lambda(nu)) < 1e-6, "nu = {nu}");
            prev = l;
        }
    }

    #[test]
    fn lanczos_matches_dense_on_small_matrix() {
        let b = DMatrix::from_fn(5, 5, |i, j| 1.0 / (1.0 + i as f64 + 2.0 * j as f64));
        let m = &b * b.transpose() + DMatrix::from_fn(5, 5, |i, j| if i == j { 0.3 } else { 0.05 });
        let (l1, v1, l2) = dense_top_two(&m);
        let (k1, w1, k2) = lanczos_top_two(|x| &m * x, DVector::from_element(5, 1.0)).unwrap();
        assert!(rel(k1, l1) < 1e-13);
        assert!(rel(k2, l2) < 1e-10);
        assert!((v1.dot(&w1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lanczos_path_matches_full_eigen() {
        let p = ModelParams::new(0.5, -0.4, PhiSpec::quadratic()).unwrap();
        let op = Discretization::new(lanczos_grid()).operator(&p).unwrap();
        assert!(op.dim() > FULL_EIGEN_LIMIT);
        let s = leading_eigenpair(&op).unwrap();
        let (l1, v1, l2) = dense_top_two(op.dense().unwrap());
        assert!(rel(s.lambda, l1) < 1e-13);
        assert!(rel(s.lambda2, l2) < 1e-9);
        assert!((s.h.dot(&v1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn series_path_matches_dense() {
        let p = ModelParams::new(1.0, -1.5, PhiSpec::quadratic()).unwrap();
        let grid = mid_grid();
        let d = leading_eigenpair_full(
            &Discretization::with_backend(grid.clone(), Backend::Dense)
                .operator(&p)
                .unwrap(),
        )
        .unwrap();
        let s = leading_eigenpair_full(
            &Discretization::with_backend(grid, Backend::Series)
                .operator(&p)
                .unwrap(),
        )
        .unwrap();
        assert!(rel(s.lambda, d.lambda) < 1e-13);
        assert!(rel(s.gap, d.gap) < 1e-9);
        assert!(rel(s.dlambda_dnu, d.dlambda_dnu) < 1e-12);
        let (a, b) = (s.second.unwrap(), d.second.unwrap());
        assert!(rel(a.nu_nu, b.nu_nu) < 1e-9);
        assert!(rel(a.nu_g, b.nu_g) < 1e-9);
    }

    #[test]
    fn first_derivatives_match_finite_differences() {
        let disc = Discretization::new(mid_grid());
        let p = ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap();
        let s = leading_eigenpair(&disc.operator(&p).unwrap()).unwrap();
        let e = 1e-5;
        let fd_nu = (lambda_at(&disc, &p.with_nu(e)).unwrap() - lambda_at(&disc, &p.with_nu(-e)).unwrap())
            / (2.0 * e);
        let fd_g = (lambda_at(&disc, &p.with_g(1.0 + e)).unwrap()
            - lambda_at(&disc, &p.with_g(1.0 - e)).unwrap())
            / (2.0 * e);
        assert!(rel(s.dlambda_dnu, fd_nu) < 1e-6);
        assert!(rel(s.dlambda_dg, fd_g) < 1e-6);
        assert!(s.dlambda_dnu < 0.0 && s.dlambda_dg < 0.0);
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        let disc = Discretization::new(mid_grid());
        let p = ModelParams::new(1.0, 0.0, PhiSpec::quadratic()).unwrap();
        let s = leading_eigenpair_full(&disc.operator(&p).unwrap()).unwrap();
        let d = s.second.unwrap();
        let e = 1e-4;
        let l = |g: f64, nu: f64| lambda_at(&disc, &p.with_g(g).with_nu(nu)).unwrap();
        let fd_nn = (l(1.0, e) - 2.0 * s.lambda + l(1.0, -e)) / (e * e);
        assert!(rel(d.nu_nu, fd_nn) < 1e-4, "{} vs {}", d.nu_nu, fd_nn);
        let e = 1e-3;
        let dnu = |g: f64| {
            leading_eigenpair(&disc.operator(&p.with_g(g)).unwrap())
                .unwrap()
                .dlambda_dnu
        };
        let fd_ng = (dnu(1.0 + e) - dnu(1.0 - e)) / (2.0 * e);
        assert!(rel(d.nu_g, fd_ng) < 1e-5);
        assert!(rel(d.nu_g, d.g_nu) < 1e-8);
        assert!(d.nu_nu > 0.0);
    }

    #[test]
    fn complement_solve_refuses_tiny_gap() {
        let op = Discretization::new(build_grid(10.0, 2, 4, QuadRule::CompositeGaussLegendre).unwrap())
            .operator(&ModelParams::free_walk(1.0))
            .unwrap();
        let mut s = leading_eigenpair(&op).unwrap();
        s.gap = 1e-9;
        assert!(matches!(
            lambda_second_derivs(&op, &s),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn resolvent_matches_neumann_series() {
        let disc = Discretization::new(mid_grid());
        let p = ModelParams::new(1.0, -1.0, PhiSpec::quadratic()).unwrap();
        let op = disc.operator(&p).unwrap();
        let s = leading_eigenpair(&op).unwrap();
        assert!(s.lambda < 1.0);
        let q = op.t_offset();
        let x = resolvent_solve(&op, &s, 1.0, &q).unwrap();
        let direct = q.dot(&op.apply(&x).unwrap());
        let mut v = q.clone();
        let mut sum = 0.0;
        for _ in 0..200 {
            v = op.apply(&v).unwrap();
            sum += q.dot(&v);
        }
        let tail = q.norm_squared() * s.lambda.powi(201) / (1.0 - s.lambda);
        assert!((direct - sum).abs() <= tail + 1e-12 * direct);
        let m0 = DMatrix::<f64>::zeros(4, 4);
        let rhs = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let c = (DMatrix::<f64>::identity(4, 4) - m0).cholesky().unwrap();
        assert_eq!(c.solve(&rhs), rhs);
    }

    #[test]
    fn lambda_monotone_and_convex() {
        let disc = Discretization::new(build_grid(50.0, 25, 8, QuadRule::CompositeGaussLegendre).unwrap());
        let gs = [0.1, 0.3, 1.0, 3.0, 10.0];
        let nus = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let table: Vec<Vec<f64>> = gs
            .iter()
            .map(|&g| {
                nus.iter()
                    .map(|&nu| {
                        lambda_at(&disc, &ModelParams::new(g, nu, PhiSpec::quadratic()).unwrap()).unwrap()
                    })
                    .collect()
            })
            .collect();
        for row in &table {
            assert!(row.windows(2).all(|w| w[1] < w[0]));
            assert!(row.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] > 0.0));
        }
        for pair in table.windows(2) {
            assert!(pair[1].iter().zip(&pair[0]).all(|(hi_g, lo_g)| hi_g < lo_g));
        }
    }
}

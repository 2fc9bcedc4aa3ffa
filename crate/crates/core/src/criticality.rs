//! The critical point `nu_c(g)`, where `lambda(g, nu) = 1`, and the escape
//! speed `theta(g) = -1 / d_nu lambda(g, nu_c)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{Discretization, DiscretizedOperator};
use crate::error::{Error, Result};
use crate::greenfn;
use crate::model::{ModelParams, PhiSpec};
use crate::spectral::{self, SpectralResult};

/// Search interval for `nu_c`.
pub const NU_MIN: f64 = -50.0;
pub const NU_MAX: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityOptions {
    /// Required `|lambda(g, nu_c) - 1|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Extend `s_max` by 1.5 while the eigenvector's last-panel mass exceeds
    /// `tail_mass_tol`.
    pub auto_extend: bool,
    pub tail_mass_tol: f64,
    pub max_extensions: usize,
}

impl Default for CriticalityOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100,
            auto_extend: true,
            tail_mass_tol: 1e-10,
            max_extensions: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub s_max: f64,
    pub n_nodes: usize,
    /// `sum h_i^2` over the last panel.
    pub tail_mass: f64,
    pub extensions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub g: f64,
    pub nu_c: f64,
    pub theta: f64,
    /// `<q, h>^2` at `nu_c`; filled by [`speed`].
    pub u_bar: Option<f64>,
    pub dlambda_dnu_at_nuc: f64,
    pub lambda_at_nuc: f64,
    pub lambda2: f64,
    pub gap: f64,
    pub iterations: usize,
    pub grid_meta: GridMeta,
}

/// A solved critical point with the objects built along the way.
#[derive(Debug, Clone)]
pub struct Critical {
    pub point: CriticalPoint,
    /// The discretization actually used (after any `s_max` extension).
    pub disc: Discretization,
    pub op: DiscretizedOperator,
    pub spectral: SpectralResult,
}

impl Critical {
    pub fn params(&self) -> &ModelParams {
        self.op.params()
    }
}

/// Solves `lambda(g, nu) = 1` by safeguarded Newton on `log lambda`,
/// starting from `nu = 0`.
pub fn find_nu_c(
    g: f64,
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
) -> Result<Critical> {
    find_nu_c_from(g, phi, disc, opts, 0.0)
}

/// As [`find_nu_c`], with the Newton iteration seeded at `seed`.
pub fn find_nu_c_from(
    g: f64,
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
    seed: f64,
) -> Result<Critical> {
    if !(opts.tol >= 1e-15 && opts.tol.is_finite()) {
        return Err(Error::Domain(format!("tolerance {} out of range", opts.tol)));
    }
    let base = ModelParams::new(g, 0.0, phi.clone())?;
    let mut disc = disc.clone();
    let mut seed = seed.clamp(NU_MIN, NU_MAX);
    let mut extensions = 0;
    loop {
        let (op, spec, iterations) = newton(&base, &disc, opts, seed)?;
        let range = disc.grid().last_panel();
        let tail_mass: f64 = spec.h.rows(range.start, range.len()).norm_squared();
        if opts.auto_extend && tail_mass > opts.tail_mass_tol && extensions < opts.max_extensions {
            let grid = disc.grid().with_s_max(1.5 * disc.grid().s_max())?;
            disc = Discretization::with_backend(grid, disc.backend());
            seed = op.params().nu;
            extensions += 1;
            continue;
        }
        let nu_c = op.params().nu;
        let point = CriticalPoint {
            g,
            nu_c,
            theta: -1.0 / spec.dlambda_dnu,
            u_bar: None,
            dlambda_dnu_at_nuc: spec.dlambda_dnu,
            lambda_at_nuc: spec.lambda,
            lambda2: spec.lambda2,
            gap: spec.gap,
            iterations,
            grid_meta: GridMeta {
                s_max: disc.grid().s_max(),
                n_nodes: disc.grid().len(),
                tail_mass,
                extensions,
            },
        };
        return Ok(Critical {
            point,
            disc,
            op,
            spectral: spec,
        });
    }
}

fn newton(
    base: &ModelParams,
    disc: &Discretization,
    opts: &CriticalityOptions,
    seed: f64,
) -> Result<(DiscretizedOperator, SpectralResult, usize)> {
    // lo: lambda > 1 side, hi: lambda < 1 side
    let mut lo: Option<f64> = None;
    let mut hi: Option<f64> = None;
    let mut nu = seed;
    let mut step = 0.1;
    let mut last = f64::NAN;
    for it in 1..=opts.max_iter {
        let eval = disc
            .operator(&base.with_nu(nu))
            .and_then(|op| spectral::leading_eigenpair(&op).map(|s| (op, s)));
        let newton_step = match eval {
            Ok((op, s)) => {
                let f = s.lambda - 1.0;
                last = f;
                if f.abs() <= opts.tol {
                    return Ok((op, s, it));
                }
                if f > 0.0 {
                    lo = Some(nu);
                } else {
                    hi = Some(nu);
                }
                // Newton on log(lambda): same root, but sane steps far from it
                Some(nu - s.lambda.ln() * s.lambda / s.dlambda_dnu)
            }
            // overflow only happens far on the lambda > 1 side
            Err(Error::Domain(_)) => {
                lo = Some(nu);
                None
            }
            Err(e) => return Err(e),
        };
        let inside = |x: f64| lo.is_none_or(|l| x > l) && hi.is_none_or(|h| x < h);
        nu = match (newton_step, lo, hi) {
            (Some(x), _, _) if inside(x) && (NU_MIN..=NU_MAX).contains(&x) => x,
            (_, Some(l), Some(h)) => 0.5 * (l + h),
            (_, Some(l), None) => {
                step *= 2.0;
                l + step
            }
            (_, None, Some(h)) => {
                step *= 2.0;
                h - step
            }
            (_, None, None) => unreachable!("one side is always known after an evaluation"),
        };
        if !(NU_MIN..=NU_MAX).contains(&nu) {
            let clamped = nu.clamp(NU_MIN, NU_MAX);
            if lo == Some(clamped) || hi == Some(clamped) {
                return Err(Error::BracketNotFound {
                    g: base.g,
                    lo: NU_MIN,
                    hi: NU_MAX,
                });
            }
            nu = clamped;
        }
    }
    Err(Error::NoConvergence {
        what: "critical point Newton iteration",
        iterations: opts.max_iter,
        residual: last.abs(),
    })
}

/// `nu_c(g)`, `theta(g)` and `u_bar(g)`.
pub fn speed(g: f64, phi: &PhiSpec, disc: &Discretization, opts: &CriticalityOptions) -> Result<Critical> {
    speed_from(g, phi, disc, opts, 0.0)
}

fn speed_from(
    g: f64,
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
    seed: f64,
) -> Result<Critical> {
    let mut c = find_nu_c_from(g, phi, disc, opts, seed)?;
    let q = greenfn::fixed_point_q(&c.op)?;
    let overlap = q.q.dot(&c.spectral.h);
    c.point.u_bar = Some(overlap * overlap);
    Ok(c)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub g: f64,
    pub result: std::result::Result<CriticalPoint, Error>,
}

/// `speed` at each `g`, warm-starting Newton from the previous `nu_c`.
///
/// Failures are recorded per row and the sweep continues.
pub fn sweep(
    g_values: &[f64],
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
) -> Vec<SweepRow> {
    let mut seed = 0.0;
    g_values
        .iter()
        .map(|&g| {
            let result = speed_from(g, phi, disc, opts, seed).map(|c| c.point);
            if let Ok(p) = &result {
                seed = p.nu_c;
            }
            SweepRow { g, result }
        })
        .collect()
}

/// Parallel sweep; every point starts from `nu = 0` so the output does not
/// depend on scheduling.
pub fn sweep_parallel(
    g_values: &[f64],
    phi: &PhiSpec,
    disc: &Discretization,
    opts: &CriticalityOptions,
) -> Vec<SweepRow> {
    g_values
        .par_iter()
        .map(|&g| SweepRow {
            g,
            result: speed(g, phi, disc, opts).map(|c| c.point),
        })
        .collect()
}

/// Header of the sweep CSV.
pub const CSV_HEADER: &str = "g,nu_c,theta,u_bar,gap,s_max,n_nodes";

/// One CSV line (12 significant digits) for a solved point.
pub fn csv_row(p: &CriticalPoint) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        sig12(p.g),
        sig12(p.nu_c),
        sig12(p.theta),
        p.u_bar.map_or_else(|| "nan".to_string(), sig12),
        sig12(p.gap),
        sig12(p.grid_meta.s_max),
        p.grid_meta.n_nodes
    )
}

/// `x` with 12 significant digits in scientific notation.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

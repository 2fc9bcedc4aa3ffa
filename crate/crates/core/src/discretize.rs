//! Quadrature grids on `[0, s_max]` and Nyström discretizations of `Q` and `T`.
//!
//! Vectors live in `sqrt(w)`-scaled coordinates: `f_i = sqrt(w_i) f(t_i)`, so the
//! `L2` inner product becomes the plain dot product and the operator with kernel
//! `k` becomes the matrix `M_ij = sqrt(w_i) k(t_i, t_j) sqrt(w_j)`.
//!
//! Two representations are available. The dense one stores `M` explicitly.
//! The series one uses `e^{-t-s} I0(2 sqrt(ts)) = sum_m e^{-t} t^m/m! e^{-s} s^m/m!`
//! to write `M = F F^T` with a thin `F`, which is what makes grids of 10^5 nodes
//! tractable.

use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{self, KernelKind};
use crate::model::ModelParams;

/// Grids with more nodes than this use the series representation by default.
pub const DENSE_NODE_LIMIT: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadRule {
    CompositeGaussLegendre,
    Trapezoid,
}

/// Nodes and weights of a composite rule on `[0, s_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    s_max: f64,
    rule: QuadRule,
    n_panels: usize,
    nodes_per_panel: usize,
}

/// Composite rule over `n_panels` equal panels of `[0, s_max]`.
///
/// For the trapezoid rule `nodes_per_panel` must be 2 (the panel endpoints,
/// shared between neighbours), giving `n_panels + 1` nodes including `t = 0`.
pub fn build_grid(s_max: f64, n_panels: usize, nodes_per_panel: usize, rule: QuadRule) -> Result<QuadGrid> {
    if !(s_max.is_finite() && s_max > 0.0) {
        return Err(Error::InvalidGrid(format!("s_max = {s_max} must be positive")));
    }
    if n_panels == 0 || nodes_per_panel == 0 {
        return Err(Error::InvalidGrid("panel and node counts must be >= 1".into()));
    }
    let h = s_max / n_panels as f64;
    let (nodes, weights) = match rule {
        QuadRule::CompositeGaussLegendre => {
            let (x, w) = gauss_legendre(nodes_per_panel);
            let mut nodes = Vec::with_capacity(n_panels * nodes_per_panel);
            let mut weights = Vec::with_capacity(n_panels * nodes_per_panel);
            for p in 0..n_panels {
                let mid = (p as f64 + 0.5) * h;
                for (xi, wi) in x.iter().zip(&w) {
                    nodes.push(mid + 0.5 * h * xi);
                    weights.push(0.5 * h * wi);
                }
            }
            (nodes, weights)
        }
        QuadRule::Trapezoid => {
            if nodes_per_panel != 2 {
                return Err(Error::InvalidGrid(format!(
                    "trapezoid panels have 2 nodes, got {nodes_per_panel}"
                )));
            }
            let nodes: Vec<f64> = (0..=n_panels).map(|i| i as f64 * h).collect();
            let mut weights = vec![h; n_panels + 1];
            weights[0] = 0.5 * h;
            weights[n_panels] = 0.5 * h;
            (nodes, weights)
        }
    };
    Ok(QuadGrid {
        nodes,
        weights,
        s_max,
        rule,
        n_panels,
        nodes_per_panel,
    })
}

impl QuadGrid {
    /// 10-point Gauss–Legendre on 100 panels of `[0, 100]`.
    pub fn default_grid() -> Self {
        build_grid(100.0, 100, 10, QuadRule::CompositeGaussLegendre).expect("valid preset")
    }

    /// Trapezoid rule with step `0.001` on `[0, 100]`.
    pub fn figure1() -> Self {
        Self::trapezoid_step(100.0, 0.001).expect("valid preset")
    }

    /// Trapezoid rule with (approximately) the given step.
    pub fn trapezoid_step(s_max: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidGrid(format!("step {step} must be positive")));
        }
        build_grid(
            s_max,
            (s_max / step).round().max(1.0) as usize,
            2,
            QuadRule::Trapezoid,
        )
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn rule(&self) -> QuadRule {
        self.rule
    }

    pub fn n_panels(&self) -> usize {
        self.n_panels
    }

    pub fn nodes_per_panel(&self) -> usize {
        self.nodes_per_panel
    }

    /// The same rule with twice the resolution.
    pub fn refined(&self) -> Self {
        let (panels, per) = match self.rule {
            QuadRule::CompositeGaussLegendre => (self.n_panels, 2 * self.nodes_per_panel),
            QuadRule::Trapezoid => (2 * self.n_panels, 2),
        };
        build_grid(self.s_max, panels, per, self.rule).expect("refining a valid grid")
    }

    /// The same panel width on `[0, s_max']`.
    pub fn with_s_max(&self, s_max: f64) -> Result<Self> {
        let width = self.s_max / self.n_panels as f64;
        let panels = (s_max / width).round().max(1.0) as usize;
        build_grid(s_max, panels, self.nodes_per_panel, self.rule)
    }

    /// Indices of the nodes in the last panel.
    pub fn last_panel(&self) -> std::ops::Range<usize> {
        let n = self.len();
        match self.rule {
            QuadRule::CompositeGaussLegendre => n - self.nodes_per_panel..n,
            QuadRule::Trapezoid => n - 2..n,
        }
    }

    /// `sum_i w_i f(t_i)`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d.is_finite() {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `(P_n(z), P_n'(z))` by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Dense,
    Series,
}

/// A grid together with the parameter-independent parts of the kernels.
///
/// Building a discretization is the expensive step; operators at different
/// `(g, nu)` on the same grid reuse it.
#[derive(Debug, Clone)]
pub struct Discretization {
    grid: Arc<QuadGrid>,
    backend: Backend,
    log_b0: Arc<OnceLock<DMatrix<f64>>>,
    log_b1: Arc<OnceLock<DMatrix<f64>>>,
}

impl Discretization {
    /// Picks the dense backend for grids up to [`DENSE_NODE_LIMIT`] nodes.
    pub fn new(grid: QuadGrid) -> Self {
        let backend = if grid.len() <= DENSE_NODE_LIMIT {
            Backend::Dense
        } else {
            Backend::Series
        };
        Self::with_backend(grid, backend)
    }

    pub fn with_backend(grid: QuadGrid, backend: Backend) -> Self {
        Self {
            grid: Arc::new(grid),
            backend,
            log_b0: Arc::new(OnceLock::new()),
            log_b1: Arc::new(OnceLock::new()),
        }
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// `log(e^{-t_i - t_j} I0(2 sqrt(t_i t_j)))`, symmetric.
    fn log_b0(&self) -> &DMatrix<f64> {
        self.log_b0.get_or_init(|| {
            let t = self.grid.nodes();
            let n = t.len();
            let rows: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|i| (i..n).map(|j| kernels::log_bessel_part(t[i], t[j])).collect())
                .collect();
            let mut b = DMatrix::zeros(n, n);
            for (i, row) in rows.iter().enumerate() {
                for (k, &v) in row.iter().enumerate() {
                    b[(i, i + k)] = v;
                    b[(i + k, i)] = v;
                }
            }
            b
        })
    }

    /// `log(e^{-t_i - t_j} I1(2 sqrt(t_i t_j)) sqrt(t_i / t_j))`.
    fn log_b1(&self) -> &DMatrix<f64> {
        self.log_b1.get_or_init(|| {
            let t = self.grid.nodes();
            let n = t.len();
            let cols: Vec<Vec<f64>> = (0..n)
                .into_par_iter()
                .map(|j| (0..n).map(|i| kernels::log_k1w_part(t[i], t[j])).collect())
                .collect();
            DMatrix::from_fn(n, n, |i, j| cols[j][i])
        })
    }

    /// The discretized operators at `params`.
    pub fn operator(&self, params: &ModelParams) -> Result<DiscretizedOperator> {
        DiscretizedOperator::new(self, params)
    }
}

/// Discretized `Q` (and the linear part `A` of `T`) at one parameter point.
#[derive(Debug, Clone)]
pub struct DiscretizedOperator {
    params: ModelParams,
    grid: Arc<QuadGrid>,
    /// `log sqrt(p(t_i)) + log sqrt(w_i)`.
    log_a: Vec<f64>,
    t: DVector<f64>,
    phi: DVector<f64>,
    repr: Repr,
}

#[derive(Debug, Clone)]
enum Repr {
    Dense {
        m: DMatrix<f64>,
        disc: Box<Discretization>,
        a: Arc<OnceLock<DMatrix<f64>>>,
    },
    Series(Box<SeriesRepr>),
}

/// `M = F F^T` with `F_im = sqrt(w_i) sqrt(p(t_i)) e^{-t_i} t_i^m / m!`.
#[derive(Debug, Clone)]
struct SeriesRepr {
    /// Columns `0..=rank`; `M` uses `0..rank`, `A` uses the shifted pair.
    f: DMatrix<f64>,
    rank: usize,
    /// Eigendecomposition of the Gram matrix `F^T F` (rank x rank), descending.
    gram_values: Vec<f64>,
    gram_vectors: DMatrix<f64>,
}

impl DiscretizedOperator {
    fn new(disc: &Discretization, params: &ModelParams) -> Result<Self> {
        if !(params.g.is_finite() && params.g >= 0.0 && params.nu.is_finite()) {
            return Err(Error::Domain(format!(
                "invalid parameters g = {}, nu = {}",
                params.g, params.nu
            )));
        }
        let grid = disc.grid.clone();
        let t = DVector::from_column_slice(grid.nodes());
        let phi = t.map(|ti| params.phi(ti));
        let log_a: Vec<f64> = grid
            .nodes()
            .iter()
            .zip(grid.weights())
            .map(|(&ti, &wi)| params.log_sqrt_p(ti) + 0.5 * wi.ln())
            .collect();
        let repr = match disc.backend {
            Backend::Dense => {
                let lb = disc.log_b0();
                let n = grid.len();
                let mut m = DMatrix::zeros(n, n);
                for j in 0..n {
                    for i in 0..=j {
                        let v = (log_a[i] + log_a[j] + lb[(i, j)]).exp();
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "kernel matrix overflows at g = {}, nu = {}",
                        params.g, params.nu
                    )));
                }
                Repr::Dense {
                    m,
                    disc: Box::new(disc.clone()),
                    a: Arc::new(OnceLock::new()),
                }
            }
            Backend::Series => Repr::Series(Box::new(SeriesRepr::new(grid.nodes(), &log_a)?)),
        };
        Ok(Self {
            params: params.clone(),
            grid,
            log_a,
            t,
            phi,
            repr,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grid(&self) -> &QuadGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.len()
    }

    pub fn backend(&self) -> Backend {
        match self.repr {
            Repr::Dense { .. } => Backend::Dense,
            Repr::Series(_) => Backend::Series,
        }
    }

    /// Node values `t_i`.
    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    /// Node values `phi(t_i)`.
    pub fn phi_values(&self) -> &DVector<f64> {
        &self.phi
    }

    /// Rank of the series representation, if used.
    pub fn series_rank(&self) -> Option<usize> {
        match &self.repr {
            Repr::Series(s) => Some(s.rank),
            Repr::Dense { .. } => None,
        }
    }

    /// The dense matrix of `Q`, if stored.
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        match &self.repr {
            Repr::Dense { m, .. } => Some(m),
            Repr::Series(_) => None,
        }
    }

    /// `sqrt(w) sqrt(p)` samples of `sqrt(p)`, i.e. `T^0[sqrt p]`.
    pub fn sqrt_p_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.log_a.iter().map(|a| a.exp()))
    }

    /// The affine offset of `T`: `sqrt(w_i) sqrt(p(t_i)) e^{-t_i}`.
    pub fn t_offset(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.dim(),
            self.log_a.iter().zip(self.t.iter()).map(|(a, t)| (a - t).exp()),
        )
    }

    /// `M x` for the matrix of `Q`.
    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(match &self.repr {
            Repr::Dense { m, .. } => m * x,
            Repr::Series(s) => {
                let f = s.f.columns(0, s.rank);
                f * (f.transpose() * x)
            }
        })
    }

    /// Matrix of any kernel kind applied to `x`, without forming it.
    pub fn apply_kind(&self, kind: KernelKind, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        let a = |u: &DVector<f64>| self.apply(u);
        let t = &self.t;
        let phi = &self.phi;
        // factors are products of (u_i + u_j)/2 sums; expand them into diagonal scalings
        let first = |u: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(-0.5 * (u.component_mul(&a(x)?) + a(&u.component_mul(x))?))
        };
        let second = |u: &DVector<f64>, v: &DVector<f64>| -> Result<DVector<f64>> {
            let uv = u.component_mul(v);
            Ok(0.25
                * (uv.component_mul(&a(x)?)
                    + u.component_mul(&a(&v.component_mul(x))?)
                    + v.component_mul(&a(&u.component_mul(x))?)
                    + a(&uv.component_mul(x))?))
        };
        match kind {
            KernelKind::K0 => a(x),
            KernelKind::K1Weighted => self.apply_a(x),
            KernelKind::DNuK0 => first(t),
            KernelKind::DGK0 => first(phi),
            KernelKind::D2NuK0 => second(t, t),
            KernelKind::DNuDGK0 => second(t, phi),
            KernelKind::D2GK0 => second(phi, phi),
        }
    }

    /// `A x`, the linear part of `T`.
    pub fn apply_a(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(x.len())?;
        Ok(match &self.repr {
            Repr::Dense { .. } => self.a_matrix() * x,
            Repr::Series(s) => {
                let r = s.rank;
                s.f.columns(1, r) * (s.f.columns(0, r).transpose() * x)
            }
        })
    }

    /// The discrete `T`: `T[f] = offset + A f`.
    pub fn apply_t(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.t_offset() + self.apply_a(f)?)
    }

    fn a_matrix(&self) -> &DMatrix<f64> {
        match &self.repr {
            Repr::Dense { disc, a, .. } => a.get_or_init(|| {
                let lb = disc.log_b1();
                let n = self.dim();
                DMatrix::from_fn(n, n, |i, j| (self.log_a[i] + self.log_a[j] + lb[(i, j)]).exp())
            }),
            Repr::Series(_) => unreachable!("series operators never form A"),
        }
    }

    /// Explicit matrix of the given kind.
    ///
    /// Only available for dense operators; the series form is meant for grids
    /// whose dense matrices do not fit in memory.
    pub fn assemble(&self, kind: KernelKind) -> Result<DMatrix<f64>> {
        let m = self.dense().ok_or_else(|| {
            Error::InvalidGrid(format!(
                "{} nodes: dense assembly is disabled for the series backend",
                self.dim()
            ))
        })?;
        if kind == KernelKind::K1Weighted {
            return Ok(self.a_matrix().clone());
        }
        let n = self.dim();
        let mut out = m.clone();
        for j in 0..n {
            for i in 0..=j {
                let v = kind.factor(&self.params, self.t[i], self.t[j]) * m[(i, j)];
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        Ok(out)
    }

    /// Solves `(shift I - M) x = rhs`.
    ///
    /// Fails with [`Error::Critical`] when `shift` is within `1e-10` of the top
    /// eigenvalue `lambda` (passed in by the caller, who already knows it).
    pub fn resolvent_solve(&self, shift: f64, lambda: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.resolvent(shift, lambda)?.solve(rhs))
    }

    /// Factorization of `shift I - M` reusable across right-hand sides.
    pub fn resolvent(&self, shift: f64, lambda: f64) -> Result<Resolvent<'_>> {
        let distance = (shift - lambda).abs();
        if distance < 1e-10 {
            return Err(Error::Critical {
                lambda,
                shift,
                distance,
            });
        }
        match &self.repr {
            Repr::Dense { m, .. } => {
                let mut a = -m.clone();
                for i in 0..self.dim() {
                    a[(i, i)] += shift;
                }
                let kind = match a.clone().cholesky() {
                    Some(c) => DenseFactor::Cholesky(c),
                    None => DenseFactor::Lu(a.lu()),
                };
                Ok(Resolvent(Factor::Dense(kind)))
            }
            Repr::Series(s) => Ok(Resolvent(Factor::Series {
                s,
                shift,
                skip_top: false,
            })),
        }
    }

    /// Solves `(lambda I - M) x = rhs` on the orthogonal complement of `h`.
    ///
    /// `rhs` is projected first and the solution after. The dense path factors
    /// `lambda I - M + lambda h h^T`, which agrees with `lambda I - M` on the
    /// complement and is positive definite.
    pub fn complement_solve(
        &self,
        lambda: f64,
        h: &DVector<f64>,
        rhs: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_dim(rhs.len())?;
        let project = |v: &DVector<f64>| v - h * h.dot(v);
        let r = project(rhs);
        let x = match &self.repr {
            Repr::Dense { m, .. } => {
                let mut a = -m.clone();
                a.ger(lambda, h, h, 1.0);
                for i in 0..self.dim() {
                    a[(i, i)] += lambda;
                }
                match a.clone().cholesky() {
                    Some(c) => c.solve(&r),
                    None => a.lu().solve(&r).ok_or(Error::IllConditioned { gap: 0.0 })?,
                }
            }
            Repr::Series(s) => Resolvent(Factor::Series {
                s,
                shift: lambda,
                skip_top: true,
            })
            .solve(&r),
        };
        Ok(project(&x))
    }

    /// Top eigenpairs of the series Gram matrix mapped back to node space.
    pub(crate) fn series_eigenpairs(&self, count: usize) -> Option<Vec<(f64, DVector<f64>)>> {
        let Repr::Series(s) = &self.repr else {
            return None;
        };
        let f = s.f.columns(0, s.rank);
        Some(
            (0..count.min(s.rank))
                .map(|k| {
                    let lam = s.gram_values[k];
                    let h = f * s.gram_vectors.column(k) / lam.sqrt();
                    (lam, h)
                })
                .collect(),
        )
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                found,
            })
        }
    }
}

impl SeriesRepr {
    fn new(t: &[f64], log_a: &[f64]) -> Result<Self> {
        // log F_im = log_a_i - t_i + m log t_i - log m!
        let base: Vec<f64> = log_a.iter().zip(t).map(|(a, ti)| a - ti).collect();
        let log_t: Vec<f64> = t.iter().map(|ti| ti.ln()).collect();
        let col_max = |m: usize, log_fact: f64| -> f64 {
            base.iter()
                .zip(&log_t)
                .map(|(b, lt)| {
                    if m == 0 {
                        *b
                    } else if lt.is_finite() {
                        b + m as f64 * lt - log_fact
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut log_facts = vec![0.0];
        let mut maxima = vec![col_max(0, 0.0)];
        let mut peak = maxima[0];
        loop {
            let m = log_facts.len();
            if m > 5000 {
                return Err(Error::NoConvergence {
                    what: "series rank selection",
                    iterations: m,
                    residual: (maxima[m - 1] - peak).exp(),
                });
            }
            let lf = log_facts[m - 1] + (m as f64).ln();
            log_facts.push(lf);
            let v = col_max(m, lf);
            maxima.push(v);
            peak = peak.max(v);
            // past the peak and two consecutive columns below 1e-18 of it
            if v < peak + (1e-18f64).ln() && maxima[m - 1] < peak + (1e-18f64).ln() && v < maxima[m - 1] {
                break;
            }
        }
        let rank = log_facts.len() - 1;
        let n = t.len();
        let f = DMatrix::from_fn(n, rank + 1, |i, m| {
            if m == 0 {
                base[i].exp()
            } else if log_t[i].is_finite() {
                (base[i] + m as f64 * log_t[i] - log_facts[m]).exp()
            } else {
                0.0
            }
        });
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("series factor overflows".into()));
        }
        let fr = f.columns(0, rank);
        let (gram_values, gram_vectors) = symmetric_eigen(&(fr.transpose() * fr));
        Ok(Self {
            f,
            rank,
            gram_values,
            gram_vectors,
        })
    }
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues descending.
///
/// Kernel matrices are strongly graded (entries spanning hundreds of decades).
/// The implicit QL sweep is reliable on them only when the large entries sit
/// at the bottom-right, so rows and columns are ordered by ascending diagonal
/// before decomposing.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| m[(a, a)].total_cmp(&m[(b, b)]));
    let pm = DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
    let eig = SymmetricEigen::new(pm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors[(perm[i], k)] = eig.eigenvectors[(i, src)];
        }
    }
    (values, vectors)
}

#[derive(Debug)]
enum DenseFactor {
    Cholesky(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

/// A factored `shift I - M`.
#[derive(Debug)]
pub struct Resolvent<'a>(Factor<'a>);

#[derive(Debug)]
enum Factor<'a> {
    Dense(DenseFactor),
    Series {
        s: &'a SeriesRepr,
        shift: f64,
        skip_top: bool,
    },
}

impl Resolvent<'_> {
    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match &self.0 {
            Factor::Dense(DenseFactor::Cholesky(c)) => c.solve(rhs),
            Factor::Dense(DenseFactor::Lu(lu)) => lu
                .solve(rhs)
                .unwrap_or_else(|| DVector::from_element(rhs.len(), f64::NAN)),
            Factor::Series { s, shift, skip_top } => {
                // (sI - F F^T)^{-1} b = b/s + F U diag(1/(s (s - mu_k))) U^T F^T b
                let f = s.f.columns(0, s.rank);
                let mut c = s.gram_vectors.transpose() * (f.transpose() * rhs);
                for (k, ck) in c.iter_mut().enumerate() {
                    let mu = s.gram_values[k];
                    *ck *= if *skip_top && k == 0 {
                        0.0
                    } else {
                        1.0 / (shift * (shift - mu))
                    };
                }
                rhs / *shift + f * (&s.gram_vectors * c)
            }
        }
    }
}

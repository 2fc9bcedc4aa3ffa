//! Monte Carlo for the walk on `Z` and on the box `[-N, N]`.
//!
//! The free walk jumps to each neighbour at rate 1; box endpoints have one
//! neighbour and so jump at total rate 1. A path of duration `T` carries the
//! weight `exp(-g sum_x phi(L_{T,x}))`, with `L_{T,x}` the time spent at `x`.
//!
//! Conditional moments at fixed `T` use sequential Monte Carlo: particles are
//! free walks reweighted at regular checkpoints and resampled when the
//! effective sample size collapses. Plain importance sampling from the free
//! walk degenerates to a handful of effective samples already at `T ~ 25`.
//! Independent batches, each on its own RNG stream, give the error bars.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;

/// Estimates with fewer effective samples than this are flagged.
pub const LOW_ESS: f64 = 30.0;

/// Smallest sample count accepted by the estimators.
pub const MIN_SAMPLES: usize = 1000;

/// Largest accepted `exp(-nu T_max)` in the Laplace estimator.
pub const LAPLACE_TRUNCATION: f64 = 1e-8;

/// Samples per independent RNG stream in the Laplace estimator.
const LAPLACE_BATCH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Full,
    /// Sites `-N..=N`.
    Box(usize),
}

impl Domain {
    fn contains(self, x: i64) -> bool {
        match self {
            Domain::Full => true,
            Domain::Box(n) => x.unsigned_abs() <= n as u64,
        }
    }

    /// `(left allowed, right allowed)` at `x`.
    fn moves(self, x: i64) -> (bool, bool) {
        match self {
            Domain::Full => (true, true),
            Domain::Box(n) => {
                let n = n as i64;
                (x > -n, x < n)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub jump_times: Vec<f64>,
    /// Starting site followed by the site after each jump.
    pub positions: Vec<i64>,
    pub t_final: f64,
    pub local_times: BTreeMap<i64, f64>,
}

impl Trajectory {
    pub fn final_position(&self) -> i64 {
        *self.positions.last().expect("positions start with the origin")
    }

    pub fn n_jumps(&self) -> usize {
        self.jump_times.len()
    }
}

/// A free walk on `[0, T]` started at 0.
pub fn sample_trajectory(seed: u64, t: f64, domain: Domain) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_trajectory_from(&mut rng, 0, t, domain)
}

/// A free walk on `[0, T]` started at `start`.
pub fn sample_trajectory_from<R: Rng>(rng: &mut R, start: i64, t: f64, domain: Domain) -> Result<Trajectory> {
    check_duration(t)?;
    if !domain.contains(start) {
        return Err(Error::Domain(format!("start {start} outside {domain:?}")));
    }
    let mut jump_times = Vec::new();
    let mut positions = vec![start];
    let mut local_times = BTreeMap::new();
    let mut x = start;
    let mut now = 0.0;
    loop {
        let (left, right) = domain.moves(x);
        let rate = f64::from(u8::from(left) + u8::from(right));
        let hold = if rate > 0.0 {
            rng.sample::<f64, _>(Exp1) / rate
        } else {
            f64::INFINITY
        };
        if now + hold >= t {
            *local_times.entry(x).or_insert(0.0) += t - now;
            break;
        }
        *local_times.entry(x).or_insert(0.0) += hold;
        now += hold;
        x += step(rng, left, right);
        jump_times.push(now);
        positions.push(x);
    }
    Ok(Trajectory {
        jump_times,
        positions,
        t_final: t,
        local_times,
    })
}

fn check_duration(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "duration T = {t} must be positive and finite"
        )))
    }
}

fn step<R: Rng>(rng: &mut R, left: bool, right: bool) -> i64 {
    match (left, right) {
        (true, true) => {
            if rng.random_bool(0.5) {
                1
            } else {
                -1
            }
        }
        (true, false) => -1,
        (false, true) => 1,
        (false, false) => unreachable!("a walk with no neighbours never jumps"),
    }
}

/// `-g sum_x phi(L_{T,x})`.
pub fn gibbs_weight(traj: &Trajectory, params: &ModelParams) -> f64 {
    if params.g == 0.0 {
        return 0.0;
    }
    -params.g * traj.local_times.values().map(|&l| params.phi(l)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedEstimate {
    #[serde(rename = "estimate")]
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub ess: f64,
    /// `ess < LOW_ESS`.
    pub low_confidence: bool,
}

impl WeightedEstimate {
    fn new(value: f64, std_error: f64, n_samples: usize, ess: f64) -> Self {
        let ess = ess.min(n_samples as f64);
        Self {
            value,
            std_error,
            n_samples,
            ess,
            low_confidence: ess.is_nan() || ess < LOW_ESS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcOptions {
    /// Particles per independent batch.
    pub batch_size: usize,
    /// Time between reweighting checkpoints.
    pub checkpoint: f64,
    /// Resample when the ESS drops below this fraction of the batch.
    pub resample_below: f64,
}

impl Default for SmcOptions {
    fn default() -> Self {
        Self {
            batch_size: 1000,
            checkpoint: 0.5,
            resample_below: 0.5,
        }
    }
}

/// Free walk from the origin with its local times and running `sum phi(L)`.
#[derive(Debug, Clone)]
struct Walker {
    x: i64,
    /// Site of `local[0]`.
    lo: i64,
    local: Vec<f64>,
    sum_phi: f64,
    now: f64,
}

impl Walker {
    fn new(x: i64) -> Self {
        Self {
            x,
            lo: x,
            local: vec![0.0],
            sum_phi: 0.0,
            now: 0.0,
        }
    }

    fn add_time(&mut self, params: &ModelParams, dt: f64) {
        if self.x < self.lo {
            let grow = (self.lo - self.x) as usize;
            self.local.splice(0..0, std::iter::repeat_n(0.0, grow));
            self.lo = self.x;
        }
        let k = (self.x - self.lo) as usize;
        if k >= self.local.len() {
            self.local.resize(k + 1, 0.0);
        }
        let old = self.local[k];
        let new = old + dt;
        self.local[k] = new;
        self.sum_phi += params.phi(new) - params.phi(old);
    }

    /// Runs the walk up to time `until`; holding times are redrawn at each
    /// call, which is exact by memorylessness.
    fn advance<R: Rng>(&mut self, rng: &mut R, params: &ModelParams, domain: Domain, until: f64) {
        while self.now < until {
            let (left, right) = domain.moves(self.x);
            let rate = f64::from(u8::from(left) + u8::from(right));
            let hold = if rate > 0.0 {
                rng.sample::<f64, _>(Exp1) / rate
            } else {
                f64::INFINITY
            };
            if self.now + hold >= until {
                self.add_time(params, until - self.now);
                self.now = until;
                break;
            }
            self.add_time(params, hold);
            self.now += hold;
            self.x += step(rng, left, right);
        }
    }
}

/// Per-batch result of the particle filter.
struct SmcBatch {
    /// Log of the batch's normalizing-constant estimate scale.
    log_scale: f64,
    /// Final particle weights relative to `exp(log_scale)`, divided by the
    /// batch size.
    weights: Vec<f64>,
    positions: Vec<i64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn run_smc_batch(
    params: &ModelParams,
    t: f64,
    m: usize,
    rng: &mut ChaCha8Rng,
    opts: &SmcOptions,
) -> SmcBatch {
    let mut walkers = vec![Walker::new(0); m];
    let mut spare = walkers.clone();
    let mut logw = vec![0.0; m];
    let mut log_z = 0.0;
    let n_steps = ((t / opts.checkpoint).ceil() as usize).max(1);
    for k in 1..=n_steps {
        let until = if k == n_steps {
            t
        } else {
            k as f64 * opts.checkpoint
        };
        for (w, lw) in walkers.iter_mut().zip(logw.iter_mut()) {
            let before = w.sum_phi;
            w.advance(rng, params, Domain::Full, until);
            *lw -= params.g * (w.sum_phi - before);
        }
        if k == n_steps {
            break;
        }
        let (mx, w) = normalized(&logw);
        if ess(&w) < opts.resample_below * m as f64 {
            let total: f64 = w.iter().sum();
            log_z += mx + (total / m as f64).ln();
            let idx = systematic_resample(&w, total, rng);
            for (dst, &i) in spare.iter_mut().zip(&idx) {
                dst.clone_from(&walkers[i]);
            }
            std::mem::swap(&mut walkers, &mut spare);
            logw.fill(0.0);
        }
    }
    let (mx, w) = normalized(&logw);
    SmcBatch {
        log_scale: log_z + mx,
        weights: w.into_iter().map(|x| x / m as f64).collect(),
        positions: walkers.iter().map(|w| w.x).collect(),
    }
}

/// `(max, exp(logw - max))`.
fn normalized(logw: &[f64]) -> (f64, Vec<f64>) {
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mx, logw.iter().map(|&l| (l - mx).exp()).collect())
}

fn ess(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn systematic_resample<R: Rng>(w: &[f64], total: f64, rng: &mut R) -> Vec<usize> {
    let m = w.len();
    let u0: f64 = rng.random_range(0.0..1.0);
    let mut out = Vec::with_capacity(m);
    let mut cum = w[0] / total * m as f64;
    let mut i = 0;
    for k in 0..m {
        let u = u0 + k as f64;
        while cum <= u && i + 1 < m {
            i += 1;
            cum += w[i] / total * m as f64;
        }
        out.push(i);
    }
    out
}

/// Self-normalized `E^{g,T}[f(X(T)) | X(T) > 0]` for the walk on `Z`.
///
/// The standard error is the ratio-estimator delta method over batches; the
/// ESS is that of the final particle weights restricted to `X(T) > 0`.
pub fn estimate_conditional<F>(
    params: &ModelParams,
    t: f64,
    n_samples: usize,
    seed: u64,
    opts: &SmcOptions,
    f: F,
) -> Result<WeightedEstimate>
where
    F: Fn(i64) -> f64 + Sync,
{
    check_duration(t)?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    if !(opts.checkpoint > 0.0 && opts.batch_size >= 2) {
        return Err(Error::Domain("invalid particle filter options".into()));
    }
    // at least 10 batches for the error bar
    let m = opts.batch_size.min(n_samples / 10);
    let n_batches = n_samples.div_ceil(m);
    let batches: Vec<SmcBatch> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let size = m.min(n_samples - b * m);
            run_smc_batch(params, t, size, &mut stream_rng(seed, b as u64), opts)
        })
        .collect();
    let top = batches
        .iter()
        .map(|b| b.log_scale)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = Vec::with_capacity(n_batches);
    let mut den = Vec::with_capacity(n_batches);
    let mut global = Vec::new();
    for b in &batches {
        let a = (b.log_scale - top).exp();
        let (mut nb, mut db) = (0.0, 0.0);
        for (&w, &x) in b.weights.iter().zip(&b.positions) {
            if x > 0 {
                nb += a * w * f(x);
                db += a * w;
                global.push(a * w);
            }
        }
        num.push(nb);
        den.push(db);
    }
    let total_den: f64 = den.iter().sum();
    if total_den.is_nan() || total_den <= 0.0 {
        return Err(Error::InsufficientData("no sample ended with X(T) > 0".into()));
    }
    let value = num.iter().sum::<f64>() / total_den;
    let nb = n_batches as f64;
    let mean_den = total_den / nb;
    let resid: f64 = num.iter().zip(&den).map(|(n, d)| (n - value * d).powi(2)).sum();
    let std_error = (resid / (nb * (nb - 1.0))).sqrt() / mean_den;
    Ok(WeightedEstimate::new(value, std_error, n_samples, ess(&global)))
}

/// `E^{g,T}[X(T)^k | X(T) > 0]`.
pub fn estimate_conditional_moment(
    params: &ModelParams,
    t: f64,
    k: u32,
    n_samples: usize,
    seed: u64,
) -> Result<WeightedEstimate> {
    estimate_conditional(params, t, n_samples, seed, &SmcOptions::default(), |x| {
        (x as f64).powi(k as i32)
    })
}

/// `G^N_ij(g, nu) = int_0^inf E_i[exp(-g sum phi(L_T)) 1{X(T) = j}] e^{-nu T} dT`
/// on the box `[-N, N]`, with `T` drawn from `nu e^{-nu T}` truncated at
/// `T_max`.
pub fn estimate_laplace_two_point(
    params: &ModelParams,
    n: usize,
    i: i64,
    j: i64,
    t_max: f64,
    n_samples: usize,
    seed: u64,
) -> Result<WeightedEstimate> {
    let nu = params.nu;
    if nu.is_nan() || nu <= 0.0 {
        return Err(Error::Domain(format!("Laplace estimator needs nu > 0, got {nu}")));
    }
    let domain = Domain::Box(n);
    if !domain.contains(i) || !domain.contains(j) {
        return Err(Error::Domain(format!(
            "sites ({i}, {j}) outside the box [-{n}, {n}]"
        )));
    }
    if t_max.is_nan() || (-nu * t_max).exp() >= LAPLACE_TRUNCATION {
        return Err(Error::Domain(format!(
            "T_max = {t_max} leaves exp(-nu T_max) above {LAPLACE_TRUNCATION}"
        )));
    }
    if n_samples < MIN_SAMPLES {
        return Err(Error::Domain(format!(
            "need at least {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let mass = -(-nu * t_max).exp_m1();
    let n_batches = n_samples.div_ceil(LAPLACE_BATCH);
    let sums: Vec<(f64, f64)> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let size = LAPLACE_BATCH.min(n_samples - b * LAPLACE_BATCH);
            let mut rng = stream_rng(seed, b as u64);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..size {
                let u: f64 = rng.random_range(0.0..1.0);
                let t = -(-u * mass).ln_1p() / nu;
                let mut w = Walker::new(i);
                w.advance(&mut rng, params, domain, t);
                if w.x == j {
                    let v = (-params.g * w.sum_phi).exp();
                    s += v;
                    s2 += v * v;
                }
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums
        .iter()
        .fold((0.0, 0.0), |acc, &(a, b)| (acc.0 + a, acc.1 + b));
    let nf = n_samples as f64;
    let mean = s / nf;
    let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0);
    let scale = mass / nu;
    let ess = if s2 > 0.0 { s * s / s2 } else { 0.0 };
    Ok(WeightedEstimate::new(
        scale * mean,
        scale * (var / nf).sqrt(),
        n_samples,
        ess,
    ))
}

//! Subcommand implementations.

use std::fs;
use std::path::Path;

use serde::Serialize;
use wsaw_core::criticality::{self, csv_row, sig12, Critical, CriticalPoint, CSV_HEADER};
use wsaw_core::greenfn::{self, exponent_fit, FixedPoint, MomentSums, PowerLawFit};
use wsaw_core::mcsim::{self, WeightedEstimate};
use wsaw_core::monotonicity::{self, HnReport};
use wsaw_core::spectral::{self, SpectralResult};
use wsaw_core::{DiscretizedOperator, ModelParams};

use crate::{CliError, Command, RunConfig, SimulateMode};

/// Largest `g` used in the small-`g` scaling fit of `speed`.
const SMALL_G: f64 = 0.1;

/// `n` values of the optional `L[H_n]` check.
const HN_LIST: [usize; 4] = [5, 10, 20, 40];

pub fn dispatch(cfg: &RunConfig, command: &Command) -> Result<(), CliError> {
    match command {
        Command::Speed { g } => cmd_speed(cfg, &g_list(cfg, g)?),
        Command::CriticalNu { g } => cmd_critical_nu(cfg, &g_list(cfg, g)?),
        Command::Twopoint {
            g,
            nu,
            j_max,
            allow_divergent,
        } => cmd_twopoint(cfg, *g, *nu, *j_max, *allow_divergent),
        Command::Susceptibility { g, nu } => cmd_susceptibility(cfg, *g, *nu),
        Command::Moments { g, nu, k_max } => cmd_moments(cfg, *g, *nu, *k_max),
        Command::Monotonicity { g, terms, hn_check } => {
            cmd_monotonicity(cfg, &g_list(cfg, g)?, *terms, *hn_check)
        }
        Command::Simulate { mode } => cmd_simulate(cfg, mode),
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn g_list(cfg: &RunConfig, flag: &[f64]) -> Result<Vec<f64>, CliError> {
    let g = if flag.is_empty() {
        cfg.sweep.g.clone()
    } else {
        flag.to_vec()
    };
    if g.is_empty() {
        return Err(CliError::Usage("empty g list".into()));
    }
    for &v in &g {
        check_g(v)?;
    }
    Ok(g)
}

fn check_g(g: f64) -> Result<(), CliError> {
    if g > 0.0 && g.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("g = {g} must be positive")))
    }
}

fn params(cfg: &RunConfig, g: f64, nu: f64) -> Result<ModelParams, CliError> {
    check_g(g)?;
    ModelParams::new(g, nu, cfg.phi.clone()).map_err(|e| CliError::Usage(e.to_string()))
}

/// Output directory with the effective configuration written into it.
fn prepare_out(cfg: &RunConfig) -> Result<&Path, CliError> {
    let dir = cfg.output.dir.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_file(dir, "config.toml", &cfg.to_toml())?;
    Ok(dir)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    write_file(dir, name, &text)
}

fn check_residual(cfg: &RunConfig, spec: &SpectralResult) -> Result<(), CliError> {
    if spec.residual <= cfg.tolerances.eigen_residual {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "eigenpair residual {:e} exceeds {:e}",
            spec.residual, cfg.tolerances.eigen_residual
        )))
    }
}

fn check_fixed_point(cfg: &RunConfig, q: &FixedPoint) -> Result<(), CliError> {
    if q.residual <= cfg.tolerances.fixed_point {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "fixed-point residual {:e} exceeds {:e}",
            q.residual, cfg.tolerances.fixed_point
        )))
    }
}

fn solve_critical(cfg: &RunConfig, g: f64) -> Result<Critical, CliError> {
    let c = criticality::find_nu_c(g, &cfg.phi, &cfg.discretization()?, &cfg.criticality_options())?;
    check_residual(cfg, &c.spectral)?;
    Ok(c)
}

/// Operator, eigenpair and fixed point at `(g, nu)`, refusing `lambda >= 1`
/// unless `allow_divergent`.
fn subcritical_setup(
    cfg: &RunConfig,
    g: f64,
    nu: f64,
    allow_divergent: bool,
) -> Result<(DiscretizedOperator, SpectralResult, FixedPoint), CliError> {
    let op = cfg.discretization()?.operator(&params(cfg, g, nu)?)?;
    let spec = spectral::leading_eigenpair(&op)?;
    check_residual(cfg, &spec)?;
    if spec.lambda >= 1.0 && !allow_divergent {
        return Err(CliError::Usage(format!(
            "nu = {nu} is at or below the critical point (lambda = {}); pass --allow-divergent to proceed",
            spec.lambda
        )));
    }
    let q = greenfn::fixed_point_q(&op)?;
    check_fixed_point(cfg, &q)?;
    Ok((op, spec, q))
}

#[derive(Serialize)]
struct SweepFailure {
    g: f64,
    error: String,
}

#[derive(Serialize)]
struct SpeedSummary {
    points: usize,
    failures: Vec<SweepFailure>,
    theta_increasing: bool,
    /// Fit of `theta ~ A g^a` over `g <= 0.1`.
    small_g_fit: Option<PowerLawFit>,
}

pub fn cmd_speed(cfg: &RunConfig, g: &[f64]) -> Result<(), CliError> {
    let disc = cfg.discretization()?;
    let rows = criticality::sweep(g, &cfg.phi, &disc, &cfg.criticality_options());
    let dir = prepare_out(cfg)?;
    let mut csv = format!("{CSV_HEADER}\n");
    let mut points: Vec<&CriticalPoint> = Vec::new();
    let mut failures = Vec::new();
    for row in &rows {
        match &row.result {
            Ok(p) => {
                csv.push_str(&csv_row(p));
                csv.push('\n');
                points.push(p);
            }
            Err(e) => failures.push(SweepFailure {
                g: row.g,
                error: e.to_string(),
            }),
        }
    }
    write_file(dir, "speed.csv", &csv)?;
    let small: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.g <= SMALL_G)
        .map(|p| (p.g, p.theta))
        .collect();
    let summary = SpeedSummary {
        points: points.len(),
        theta_increasing: points.windows(2).all(|w| w[1].theta > w[0].theta),
        small_g_fit: exponent_fit(&small).ok(),
        failures,
    };
    write_json(dir, "speed.json", &summary)?;
    if let Some(fit) = &summary.small_g_fit {
        println!("theta ~ g^{:.4} for g <= {SMALL_G}", fit.exponent);
    }
    if summary.failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{} sweep point(s) failed",
            summary.failures.len()
        )))
    }
}

pub fn cmd_critical_nu(cfg: &RunConfig, g: &[f64]) -> Result<(), CliError> {
    let points = g
        .iter()
        .map(|&g| solve_critical(cfg, g).map(|c| c.point))
        .collect::<Result<Vec<_>, _>>()?;
    let dir = prepare_out(cfg)?;
    for p in &points {
        println!(
            "g = {}: nu_c = {}, theta = {}",
            sig12(p.g),
            sig12(p.nu_c),
            sig12(p.theta)
        );
    }
    write_json(dir, "critical_nu.json", &points)
}

#[derive(Serialize)]
struct TwopointSummary {
    g: f64,
    nu: f64,
    lambda: f64,
    log_lambda: f64,
    /// `-slope` of `log G_0j` over `j` in `[fit_from, fit_to]`.
    decay_rate: Option<f64>,
    fit_from: usize,
    fit_to: usize,
}

/// Least-squares slope of `y` against `x`.
fn slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn cmd_twopoint(
    cfg: &RunConfig,
    g: f64,
    nu: f64,
    j_max: usize,
    allow_divergent: bool,
) -> Result<(), CliError> {
    let (op, spec, q) = subcritical_setup(cfg, g, nu, allow_divergent)?;
    let profile = greenfn::two_point_profile(&op, &q, j_max)?;
    let dir = prepare_out(cfg)?;
    let mut csv = String::from("j,G_0j\n");
    for (j, v) in profile.iter().enumerate() {
        csv.push_str(&format!("{j},{}\n", sig12(*v)));
    }
    write_file(dir, "twopoint.csv", &csv)?;
    let fit_from = j_max / 2;
    let tail: Vec<(f64, f64)> = (fit_from..=j_max).map(|j| (j as f64, profile[j].ln())).collect();
    let summary = TwopointSummary {
        g,
        nu,
        lambda: spec.lambda,
        log_lambda: spec.lambda.ln(),
        decay_rate: slope(&tail).map(|s| -s),
        fit_from,
        fit_to: j_max,
    };
    write_json(dir, "twopoint.json", &summary)
}

#[derive(Serialize)]
struct SusceptibilitySummary {
    g: f64,
    nu: f64,
    lambda: f64,
    chi_plus: f64,
    g00: f64,
    chi: f64,
}

pub fn cmd_susceptibility(cfg: &RunConfig, g: f64, nu: f64) -> Result<(), CliError> {
    let (op, spec, q) = subcritical_setup(cfg, g, nu, false)?;
    let chi_plus = greenfn::susceptibility_plus(&op, &spec, &q)?;
    let g00 = q.q.norm_squared();
    let dir = prepare_out(cfg)?;
    println!("chi_+ = {}", sig12(chi_plus));
    write_json(
        dir,
        "susceptibility.json",
        &SusceptibilitySummary {
            g,
            nu,
            lambda: spec.lambda,
            chi_plus,
            g00,
            chi: 2.0 * chi_plus + g00,
        },
    )
}

#[derive(Serialize)]
struct MomentsSummary {
    g: f64,
    nu: f64,
    lambda: f64,
    #[serde(flatten)]
    sums: MomentSums,
}

pub fn cmd_moments(cfg: &RunConfig, g: f64, nu: f64, k_max: usize) -> Result<(), CliError> {
    if k_max > greenfn::MAX_MOMENT {
        return Err(CliError::Usage(format!(
            "k_max = {k_max} exceeds {}",
            greenfn::MAX_MOMENT
        )));
    }
    let (op, spec, q) = subcritical_setup(cfg, g, nu, false)?;
    let sums = greenfn::moment_sums(&op, &spec, &q, k_max)?;
    let dir = prepare_out(cfg)?;
    write_json(
        dir,
        "moments.json",
        &MomentsSummary {
            g,
            nu,
            lambda: spec.lambda,
            sums,
        },
    )
}

#[derive(Serialize)]
struct CertificateSummary {
    g: f64,
    nu_c: f64,
    theta: f64,
    c0: f64,
    /// `min_n c_n / |c_0|`.
    min_relative: f64,
    l_lambda: f64,
    l_lambda_tail: f64,
    l_lambda_spectral: f64,
    dtheta_dg: f64,
    certified: bool,
    hn: Option<HnReport>,
}

#[derive(Serialize)]
struct DominanceSummary {
    pairs_checked: usize,
    pairs_passed: usize,
    phi_ratio_pass: bool,
    all_pass: bool,
}

#[derive(Serialize)]
struct MonotonicitySummary {
    terms: usize,
    certificates: Vec<CertificateSummary>,
    dominance: DominanceSummary,
    all_certified: bool,
}

pub fn cmd_monotonicity(cfg: &RunConfig, g: &[f64], terms: usize, hn_check: bool) -> Result<(), CliError> {
    if terms < 1 {
        return Err(CliError::Usage("--terms must be at least 1".into()));
    }
    if hn_check && terms < HN_LIST[HN_LIST.len() - 1] {
        return Err(CliError::Usage(format!(
            "--hn-check needs --terms >= {}",
            HN_LIST[HN_LIST.len() - 1]
        )));
    }
    let mut csv = String::from("g,n,c_n\n");
    let mut certificates = Vec::new();
    for &g in g {
        let crit = solve_critical(cfg, g)?;
        let cert = monotonicity::certificate_at(&crit, terms)?;
        for (n, c) in cert.cn.values.iter().enumerate() {
            csv.push_str(&format!("{},{n},{}\n", sig12(g), sig12(*c)));
        }
        let hn = if hn_check {
            Some(monotonicity::hn_consistency(&crit, &cert.cn, &HN_LIST)?)
        } else {
            None
        };
        certificates.push(CertificateSummary {
            g,
            nu_c: cert.nu_c,
            theta: cert.theta,
            c0: cert.cn.values[0],
            min_relative: cert.cn.min_relative(),
            l_lambda: cert.l_lambda,
            l_lambda_tail: cert.l_lambda_tail,
            l_lambda_spectral: cert.l_lambda_spectral,
            dtheta_dg: cert.dtheta_dg,
            certified: cert.certified,
            hn,
        });
    }
    let grid = cfg.quad_grid()?;
    let report = monotonicity::dominance_check(&cfg.phi, &grid, 100, 200, cfg.mc.seed);
    let summary = MonotonicitySummary {
        terms,
        all_certified: certificates.iter().all(|c| c.certified),
        dominance: DominanceSummary {
            pairs_checked: report.pairs.len(),
            pairs_passed: report.pairs.iter().filter(|p| p.pass).count(),
            phi_ratio_pass: report.phi_ratio_pass,
            all_pass: report.all_pass,
        },
        certificates,
    };
    let dir = prepare_out(cfg)?;
    write_file(dir, "monotonicity_cn.csv", &csv)?;
    write_json(dir, "monotonicity.json", &summary)?;
    for c in &summary.certificates {
        println!(
            "g = {}: L[lambda] = {}, certified = {}",
            sig12(c.g),
            sig12(c.l_lambda),
            c.certified
        );
    }
    if summary.all_certified {
        Ok(())
    } else {
        Err(CliError::Numerical(
            "certificate failed for at least one g".into(),
        ))
    }
}

#[derive(Serialize)]
struct MomentRow {
    t: f64,
    #[serde(flatten)]
    estimate: WeightedEstimate,
    /// `estimate^{1/k} / T`, comparable with `theta`.
    speed: f64,
}

#[derive(Serialize)]
struct SimulateMomentsSummary {
    g: f64,
    k: u32,
    seed: u64,
    theta: f64,
    rows: Vec<MomentRow>,
}

#[derive(Serialize)]
struct SimulateLaplaceSummary {
    g: f64,
    nu: f64,
    n_box: usize,
    i: i64,
    j: i64,
    t_max: f64,
    seed: u64,
    #[serde(flatten)]
    estimate: WeightedEstimate,
    spectral: f64,
    /// `(estimate - spectral) / std_error`.
    z_score: f64,
}

pub fn cmd_simulate(cfg: &RunConfig, mode: &SimulateMode) -> Result<(), CliError> {
    let seed = cfg.mc.seed;
    let samples = cfg.mc.samples;
    match *mode {
        SimulateMode::Moments { g, k, ref t } => {
            if k == 0 {
                return Err(CliError::Usage("--k must be at least 1".into()));
            }
            let durations = if t.is_empty() { cfg.mc.t.clone() } else { t.clone() };
            if durations.is_empty() || durations.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(CliError::Usage(
                    "durations must be a nonempty list of positive numbers".into(),
                ));
            }
            let p = params(cfg, g, 0.0)?;
            let theta = solve_critical(cfg, g)?.point.theta;
            let rows = durations
                .iter()
                .map(|&t| {
                    let estimate = mcsim::estimate_conditional_moment(&p, t, k, samples, seed)?;
                    Ok(MomentRow {
                        t,
                        speed: estimate.value.powf(1.0 / f64::from(k)) / t,
                        estimate,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let dir = prepare_out(cfg)?;
            for r in &rows {
                println!(
                    "T = {}: speed {:.6} (theta {theta:.6}), ess {:.0}",
                    r.t, r.speed, r.estimate.ess
                );
            }
            write_json(
                dir,
                "simulate_moments.json",
                &SimulateMomentsSummary {
                    g,
                    k,
                    seed,
                    theta,
                    rows,
                },
            )
        }
        SimulateMode::Laplace {
            g,
            nu,
            n_box,
            i,
            j,
            t_max,
        } => {
            if !(nu > 0.0 && nu.is_finite()) {
                return Err(CliError::Usage(format!("--nu = {nu} must be positive")));
            }
            let t_max = t_max.unwrap_or(20.0 / nu);
            let p = params(cfg, g, nu)?;
            let box_len = n_box as i64;
            if i.abs() > box_len || j.abs() > box_len {
                return Err(CliError::Usage(format!(
                    "sites ({i}, {j}) outside the box [-{n_box}, {n_box}]"
                )));
            }
            if t_max.is_nan() || (-nu * t_max).exp() >= mcsim::LAPLACE_TRUNCATION {
                return Err(CliError::Usage(format!(
                    "--t-max = {t_max} is too short for nu = {nu}"
                )));
            }
            let estimate = mcsim::estimate_laplace_two_point(&p, n_box, i, j, t_max, samples, seed)?;
            let op = cfg.discretization()?.operator(&p)?;
            let spectral = greenfn::finite_volume_two_point(&op, n_box, i, j)?;
            let dir = prepare_out(cfg)?;
            let z_score = (estimate.value - spectral) / estimate.std_error;
            println!(
                "G^N_({i},{j}) = {:.6} +- {:.6} (spectral {spectral:.6}, {z_score:+.2} SE)",
                estimate.value, estimate.std_error
            );
            write_json(
                dir,
                "simulate_laplace.json",
                &SimulateLaplaceSummary {
                    g,
                    nu,
                    n_box,
                    i,
                    j,
                    t_max,
                    seed,
                    estimate,
                    spectral,
                    z_score,
                },
            )
        }
    }
}

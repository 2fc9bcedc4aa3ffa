use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;
use wsaw_cli::config::{GridConfig, RunConfig};
use wsaw_cli::GridPreset;
use wsaw_core::{PhiSpec, QuadRule};

fn wsaw(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wsaw"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn json(dir: &Path, name: &str) -> Value {
    serde_json::from_str(&read(dir, name)).unwrap()
}

#[test]
fn config_round_trips() {
    let mut cfg = RunConfig::default();
    let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(again, cfg);
    cfg.phi = PhiSpec::new([(2, 0.5), (4, 1e-3)]).unwrap();
    cfg.grid = GridConfig {
        s_max: 60.0,
        panels: 30,
        nodes_per_panel: 8,
        rule: QuadRule::CompositeGaussLegendre,
    };
    cfg.tolerances.newton = 3.25e-13;
    cfg.sweep.g = vec![0.1, 1.0 / 3.0, 7.0];
    cfg.mc.seed = 42;
    cfg.output.dir = "some/where".into();
    let text = cfg.to_toml();
    let again = RunConfig::from_toml(&text).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.to_toml(), text);
}

#[test]
fn partial_config_uses_defaults() {
    let cfg = RunConfig::from_toml("[mc]\nt = [5.0]\nsamples = 2000\nseed = 9\n").unwrap();
    assert_eq!(cfg.grid, RunConfig::default().grid);
    assert_eq!(cfg.mc.t, vec![5.0]);
}

#[test]
fn invalid_configs_are_rejected() {
    for text in [
        "[tolerances]\neigen_residual = -1.0\nnewton = 1e-12\nfixed_point = 1e-10\n",
        "[sweep]\ng = [1.0, -0.5]\n",
        "phi = [[1, 1.0]]\n",
        "unknown_key = 3\n",
        "[grid]\ns_max = 100.0\npanels = 0\nnodes_per_panel = 10\nrule = \"composite_gauss_legendre\"\n",
        "[mc]\nt = [5.0]\nsamples = 10\nseed = 1\n",
    ] {
        let err = RunConfig::from_toml(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{text}");
    }
}

#[test]
fn presets_match_core_grids() {
    let g = GridPreset::Figure1.grid();
    assert_eq!(g.rule, QuadRule::Trapezoid);
    assert_eq!(g.panels, 100_000);
    assert_eq!(GridPreset::Default.grid(), GridConfig::default());
}

#[test]
fn speed_is_monotone_and_byte_identical_on_rerun() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = ["speed", "--g", "0.01,0.1,1,10"];
    assert_eq!(code(&wsaw(&a, &args)), 0);
    assert_eq!(code(&wsaw(&b, &args)), 0);
    let csv = read(&a, "speed.csv");
    assert_eq!(csv, read(&b, "speed.csv"));
    assert_eq!(read(&a, "speed.json"), read(&b, "speed.json"));
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "g,nu_c,theta,u_bar,gap,s_max,n_nodes");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse::<f64>().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2] && w[1][1] < w[0][1]));
    assert!((rows[2][2] - 1.39495308972).abs() < 1e-10);
    assert_eq!(json(&a, "speed.json")["theta_increasing"], Value::Bool(true));
    let cfg = RunConfig::from_toml(&read(&a, "config.toml")).unwrap();
    assert_eq!(cfg.output.dir, a);
}

#[test]
fn empty_g_list_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "[sweep]\ng = []\n").unwrap();
    let cfg = cfg_path.to_str().unwrap();
    for sub in ["speed", "critical-nu", "monotonicity"] {
        let o = wsaw(dir.path(), &["--config", cfg, sub]);
        assert_eq!(code(&o), 2, "{sub}");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&wsaw(dir.path(), &["no-such-command"])), 2);
    assert_eq!(
        code(&wsaw(dir.path(), &["--config", "/nonexistent.toml", "speed"])),
        2
    );
    assert_eq!(code(&wsaw(dir.path(), &["critical-nu", "--g", "-1"])), 2);
    assert_eq!(
        code(&wsaw(
            dir.path(),
            &["moments", "--g", "1", "--nu", "0", "--k-max", "9"]
        )),
        2
    );
    assert_eq!(code(&wsaw(dir.path(), &["simulate", "laplace", "--nu", "0"])), 2);
}

#[test]
fn critical_nu_json_parses_back() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&wsaw(dir.path(), &["critical-nu", "--g", "1,2"])), 0);
    let v = json(dir.path(), "critical_nu.json");
    let points = v.as_array().unwrap();
    assert_eq!(points.len(), 2);
    assert!((points[0]["nu_c"].as_f64().unwrap() + 1.6400394625242).abs() < 1e-10);
    assert!(points[1]["theta"].as_f64().unwrap() > points[0]["theta"].as_f64().unwrap());
}

#[test]
fn twopoint_guards_divergent_nu() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&wsaw(dir.path(), &["twopoint", "--g", "1", "--nu", "-2"])),
        2
    );
    let o = wsaw(
        dir.path(),
        &[
            "twopoint",
            "--g",
            "1",
            "--nu",
            "-2",
            "--j-max",
            "5",
            "--allow-divergent",
        ],
    );
    assert_ne!(code(&o), 2);
}

#[test]
fn twopoint_decay_matches_log_lambda() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&wsaw(
            dir.path(),
            &["twopoint", "--g", "1", "--nu", "-1", "--j-max", "30"]
        )),
        0
    );
    let v = json(dir.path(), "twopoint.json");
    let rate = v["decay_rate"].as_f64().unwrap();
    let log_lambda = v["log_lambda"].as_f64().unwrap();
    assert!((rate + log_lambda).abs() < 1e-6 * rate.abs());
    let csv = read(dir.path(), "twopoint.csv");
    assert_eq!(csv.lines().count(), 32);
}

#[test]
fn susceptibility_and_moments_agree() {
    let dir = TempDir::new().unwrap();
    assert_eq!(
        code(&wsaw(dir.path(), &["susceptibility", "--g", "1", "--nu", "-1"])),
        0
    );
    assert_eq!(
        code(&wsaw(
            dir.path(),
            &["moments", "--g", "1", "--nu", "-1", "--k-max", "3"]
        )),
        0
    );
    let s = json(dir.path(), "susceptibility.json");
    let m = json(dir.path(), "moments.json");
    assert_eq!(s["chi_plus"], m["chi_plus"]);
    assert_eq!(m["moments"].as_object().unwrap().len(), 4);
    assert_eq!(
        code(&wsaw(dir.path(), &["susceptibility", "--g", "1", "--nu", "-2"])),
        2
    );
}

#[test]
fn monotonicity_certifies_defaults() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&wsaw(dir.path(), &["monotonicity", "--g", "0.1,1,10"])), 0);
    let v = json(dir.path(), "monotonicity.json");
    assert_eq!(v["all_certified"], Value::Bool(true));
    assert_eq!(v["dominance"]["all_pass"], Value::Bool(true));
    for c in v["certificates"].as_array().unwrap() {
        let l = c["l_lambda"].as_f64().unwrap();
        let s = c["l_lambda_spectral"].as_f64().unwrap();
        assert!(l < 0.0 && (l - s).abs() < 1e-3 * l.abs());
    }
    let csv = read(dir.path(), "monotonicity_cn.csv");
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "g,n,c_n");
    assert_eq!(lines.count(), 3 * 51);
}

#[test]
fn simulate_is_seed_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    let args = [
        "simulate", "laplace", "--g", "1", "--nu", "0.5", "--n-box", "3", "--j", "1",
    ];
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "[mc]\nt = [5.0]\nsamples = 5000\nseed = 1\n").unwrap();
    let cfg = cfg_path.to_str().unwrap();
    let run = |out: &Path, seed: &str| {
        let mut full = vec!["--config", cfg, "--seed", seed];
        full.extend_from_slice(&args);
        code(&wsaw(out, &full))
    };
    assert_eq!(run(&a, "7"), 0);
    assert_eq!(run(&b, "7"), 0);
    assert_eq!(run(&c, "8"), 0);
    assert_eq!(
        read(&a, "simulate_laplace.json"),
        read(&b, "simulate_laplace.json")
    );
    assert_ne!(
        read(&a, "simulate_laplace.json"),
        read(&c, "simulate_laplace.json")
    );
    let v = json(&a, "simulate_laplace.json");
    assert_eq!(v["seed"], 7);
    let z = v["z_score"].as_f64().unwrap();
    assert!(z.abs() < 4.0, "{z}");
}

#[test]
fn simulate_moments_reports_theta() {
    let dir = TempDir::new().unwrap();
    let cfg_path = dir.path().join("cfg.toml");
    std::fs::write(&cfg_path, "[mc]\nt = [5.0, 10.0]\nsamples = 2000\nseed = 3\n").unwrap();
    let o = wsaw(
        dir.path(),
        &["--config", cfg_path.to_str().unwrap(), "simulate", "moments"],
    );
    assert_eq!(code(&o), 0);
    let v = json(dir.path(), "simulate_moments.json");
    assert!((v["theta"].as_f64().unwrap() - 1.39495308972).abs() < 1e-9);
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["speed"].as_f64().unwrap() > 0.0));
}

#[test]
fn figure1_preset_solves_critical_point() {
    let dir = TempDir::new().unwrap();
    let o = wsaw(
        dir.path(),
        &["--grid-preset", "figure1", "critical-nu", "--g", "1"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = json(dir.path(), "critical_nu.json");
    let nu = v[0]["nu_c"].as_f64().unwrap();
    assert!((nu + 1.640039529812796).abs() < 1e-9, "{nu}");
    let cfg = RunConfig::from_toml(&read(dir.path(), "config.toml")).unwrap();
    assert_eq!(cfg.grid.rule, QuadRule::Trapezoid);
}

//! Run configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wsaw_core::criticality::CriticalityOptions;
use wsaw_core::mcsim::MIN_SAMPLES;
use wsaw_core::{build_grid, Discretization, PhiSpec, QuadGrid, QuadRule};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `(power, coefficient)` pairs of `phi`.
    #[serde(default)]
    pub phi: PhiSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            phi: PhiSpec::quadratic(),
            grid: GridConfig::default(),
            tolerances: Tolerances::default(),
            sweep: SweepConfig::default(),
            mc: McConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub s_max: f64,
    pub panels: usize,
    pub nodes_per_panel: usize,
    pub rule: QuadRule,
}

impl GridConfig {
    pub fn from_grid(grid: &QuadGrid) -> Self {
        Self {
            s_max: grid.s_max(),
            panels: grid.n_panels(),
            nodes_per_panel: grid.nodes_per_panel(),
            rule: grid.rule(),
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::from_grid(&QuadGrid::default_grid())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Largest accepted `||M h - lambda h||`.
    pub eigen_residual: f64,
    /// Required `|lambda(nu_c) - 1|`.
    pub newton: f64,
    /// Largest accepted `||T q - q||`.
    pub fixed_point: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eigen_residual: 1e-10,
            newton: 1e-12,
            fixed_point: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub g: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            g: vec![
                0.001, 0.0016, 0.0025, 0.004, 0.0063, 0.01, 0.016, 0.025, 0.04, 0.063, 0.1, 0.16, 0.25, 0.4,
                0.63, 1.0, 1.6, 2.5, 4.0, 6.3, 10.0,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    /// Durations for the conditional-moment estimator.
    pub t: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            t: vec![25.0, 50.0, 100.0],
            samples: 100_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("wsaw-out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.tolerances;
        for (name, v) in [
            ("eigen_residual", t.eigen_residual),
            ("newton", t.newton),
            ("fixed_point", t.fixed_point),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CliError::Usage(format!(
                    "tolerance {name} = {v} must be positive"
                )));
            }
        }
        if let Some(g) = self.sweep.g.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(CliError::Usage(format!("sweep g = {g} must be positive")));
        }
        if let Some(t) = self.mc.t.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(CliError::Usage(format!("mc duration {t} must be positive")));
        }
        if self.mc.samples < MIN_SAMPLES {
            return Err(CliError::Usage(format!(
                "mc samples must be at least {MIN_SAMPLES}"
            )));
        }
        self.quad_grid()?;
        Ok(())
    }

    pub fn quad_grid(&self) -> Result<QuadGrid, CliError> {
        let g = &self.grid;
        build_grid(g.s_max, g.panels, g.nodes_per_panel, g.rule).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn discretization(&self) -> Result<Discretization, CliError> {
        Ok(Discretization::new(self.quad_grid()?))
    }

    pub fn criticality_options(&self) -> CriticalityOptions {
        CriticalityOptions {
            tol: self.tolerances.newton,
            ..CriticalityOptions::default()
        }
    }
}

/// Named grids selectable with `--grid-preset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GridPreset {
    /// 10-point Gauss-Legendre on 100 unit panels.
    Default,
    /// Trapezoid rule, step 0.001 on [0, 100].
    Figure1,
}

impl GridPreset {
    pub fn grid(self) -> GridConfig {
        match self {
            GridPreset::Default => GridConfig::from_grid(&QuadGrid::default_grid()),
            GridPreset::Figure1 => GridConfig::from_grid(&QuadGrid::figure1()),
        }
    }
}

//! Run configuration, read from TOML.
//!
//! Every block is optional and falls back to the planar-source defaults.
//! The seed is the only mandatory value: it comes from `io.seed` or the
//! `--seed` flag, never from the clock.

use std::path::{Path, PathBuf};

use mixinv::linops::{SolverSettings, DEFAULT_REL_THRESHOLD};
use mixinv::models::{default_bumps, spiral_stations, Bump, Kernel, ModelSpec, SourceGrid};
use mixinv::posterior::{GminRoute, PosteriorSettings, PriorSpec};
use mixinv::regselect::{log_grid, NelderMeadSettings};
use mixinv::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub io: IoConfig,
    pub problem: ProblemConfig,
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub posterior: PosteriorConfig,
    /// `sampler.seed` is replaced by the run seed.
    pub sampler: SamplerConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub seed: Option<u64>,
    /// Output directory.
    pub out: PathBuf,
    /// Directory holding the data files; defaults to `out`.
    pub data: Option<PathBuf>,
    pub chain_file: String,
    pub series_file: String,
    pub report_file: String,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out: PathBuf::from("out"),
            data: None,
            chain_file: "chain.csv".into(),
            series_file: "series.csv".into(),
            report_file: "report.txt".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub grid_nx: usize,
    pub grid_ny: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub stations: usize,
    pub station_radius: f64,
    pub kernel: Kernel,
    pub eps0: f64,
    pub depth_scale: f64,
    pub m_bounds: Vec<(f64, f64)>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let spec = ModelSpec::planar_default();
        Self {
            grid_nx: spec.grid.nx,
            grid_ny: spec.grid.ny,
            x_range: spec.grid.x_range,
            y_range: spec.grid.y_range,
            stations: spec.stations.len(),
            station_radius: 30.0,
            kernel: spec.kernel,
            eps0: spec.eps0,
            depth_scale: spec.depth_scale,
            m_bounds: spec.m_bounds,
        }
    }
}

impl ProblemConfig {
    pub fn to_spec(&self) -> CliResult<ModelSpec> {
        let grid = SourceGrid::new(self.grid_nx, self.grid_ny, self.x_range, self.y_range)
            .map_err(|e| CliError::Config(format!("problem: {e}")))?;
        if self.stations == 0 || !(self.station_radius > 0.0) {
            return Err(CliError::Config("problem: need at least one station and a positive station_radius".into()));
        }
        if !(self.eps0 > 0.0 && self.depth_scale > 0.0) {
            return Err(CliError::Config("problem: eps0 and depth_scale must be positive".into()));
        }
        if self.m_bounds.len() != 3 {
            return Err(CliError::Config(format!("problem.m_bounds: need 3 intervals, got {}", self.m_bounds.len())));
        }
        Ok(ModelSpec {
            stations: spiral_stations(self.stations, self.station_radius),
            grid,
            kernel: self.kernel,
            eps0: self.eps0,
            depth_scale: self.depth_scale,
            m_bounds: self.m_bounds.clone(),
        })
    }
}

/// Synthetic-data settings for `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// True plane `(a, b, d)` with `d` in km, before depth scaling.
    pub true_plane: [f64; 3],
    pub noise_ratio: f64,
    /// Gaussian slip patches; the built-in pattern when absent.
    pub bumps: Option<Vec<Bump>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            true_plane: [-0.12, -0.26, -14.0],
            noise_ratio: 0.05,
            bumps: None,
        }
    }
}

impl DataConfig {
    pub fn bumps(&self) -> Vec<Bump> {
        self.bumps.clone().unwrap_or_else(default_bumps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub m_box: Vec<(f64, f64)>,
    pub log_c_range: (f64, f64),
}

impl Default for PriorConfig {
    fn default() -> Self {
        let p = PriorSpec::planar_default();
        Self {
            m_box: p.m_box,
            log_c_range: p.log_c_range,
        }
    }
}

impl PriorConfig {
    pub fn to_spec(&self) -> CliResult<PriorSpec> {
        PriorSpec::new(self.m_box.clone(), self.log_c_range).map_err(|e| CliError::Config(format!("prior: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorConfig {
    pub rel_threshold: f64,
    pub cg_tol: f64,
    pub cg_max_iter: Option<usize>,
    pub route: GminRoute,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            rel_threshold: DEFAULT_REL_THRESHOLD,
            cg_tol: SolverSettings::default().tol,
            cg_max_iter: None,
            route: GminRoute::default(),
        }
    }
}

impl PosteriorConfig {
    pub fn solver(&self) -> SolverSettings {
        SolverSettings {
            tol: self.cg_tol,
            max_iter: self.cg_max_iter,
        }
    }

    pub fn settings(&self) -> CliResult<PosteriorSettings> {
        if !(self.rel_threshold > 0.0 && self.rel_threshold < 1.0 && self.cg_tol > 0.0) {
            return Err(CliError::Config("posterior: need 0 < rel_threshold < 1 and cg_tol > 0".into()));
        }
        Ok(PosteriorSettings {
            rel_threshold: self.rel_threshold,
            solver: self.solver(),
            route: self.route,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    GcvPointwise,
    GcvGlobal,
    ClsPointwise,
    #[default]
    ClsGlobal,
}

impl BaselineMethod {
    pub const NAMES: [&'static str; 4] = ["gcv-pointwise", "gcv-global", "cls-pointwise", "cls-global"];

    pub fn name(self) -> &'static str {
        match self {
            BaselineMethod::GcvPointwise => Self::NAMES[0],
            BaselineMethod::GcvGlobal => Self::NAMES[1],
            BaselineMethod::ClsPointwise => Self::NAMES[2],
            BaselineMethod::ClsGlobal => Self::NAMES[3],
        }
    }

    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "gcv-pointwise" => Ok(BaselineMethod::GcvPointwise),
            "gcv-global" => Ok(BaselineMethod::GcvGlobal),
            "cls-pointwise" => Ok(BaselineMethod::ClsPointwise),
            "cls-global" => Ok(BaselineMethod::ClsGlobal),
            other => Err(CliError::Config(format!(
                "unknown method `{other}`; expected one of {}",
                Self::NAMES.join(", ")
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    /// Log-spaced C grid.
    pub c_grid: GridConfig,
    /// `Err / |u|` values for the global discrepancy rule, one table row each.
    pub err_ratios: Vec<f64>,
    /// Noise level for pointwise CLS; defaults to the observation's known sigma.
    pub sigma: Option<f64>,
    /// Nodes per axis of the m-grid scanned by the global rules.
    pub m_grid_points: usize,
    /// Box of the m-grid; defaults to `problem.m_bounds`.
    pub m_grid_bounds: Option<Vec<(f64, f64)>>,
    /// Nodes per axis of the local-search starting grid.
    pub starts_per_axis: usize,
    /// Box of the starting grid; defaults to the m-grid box.
    pub start_bounds: Option<Vec<(f64, f64)>>,
    pub nm_budget: usize,
    pub nm_initial_step: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        let nm = NelderMeadSettings::default();
        Self {
            method: BaselineMethod::default(),
            c_grid: GridConfig {
                lo: 1e-8,
                hi: 1e2,
                points: 100,
            },
            err_ratios: vec![0.2, 0.1, 0.05, 0.01],
            sigma: None,
            m_grid_points: 5,
            m_grid_bounds: None,
            starts_per_axis: 2,
            start_bounds: None,
            nm_budget: nm.budget,
            nm_initial_step: nm.initial_step,
        }
    }
}

impl BaselineConfig {
    pub fn c_grid(&self) -> CliResult<Vec<f64>> {
        log_grid(self.c_grid.lo, self.c_grid.hi, self.c_grid.points)
            .map_err(|e| CliError::Config(format!("baseline.c_grid: {e}")))
    }

    pub fn nelder_mead(&self) -> NelderMeadSettings {
        NelderMeadSettings {
            budget: self.nm_budget,
            initial_step: self.nm_initial_step,
            ..NelderMeadSettings::default()
        }
    }

    pub fn m_grid_bounds(&self, problem: &ProblemConfig) -> Vec<(f64, f64)> {
        self.m_grid_bounds.clone().unwrap_or_else(|| problem.m_bounds.clone())
    }

    pub fn start_bounds(&self, problem: &ProblemConfig) -> Vec<(f64, f64)> {
        self.start_bounds.clone().unwrap_or_else(|| self.m_grid_bounds(problem))
    }

    fn validate(&self, problem: &ProblemConfig) -> CliResult<()> {
        self.c_grid()?;
        if self.err_ratios.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(CliError::Config("baseline.err_ratios must be positive".into()));
        }
        if self.m_grid_points == 0 || self.starts_per_axis == 0 || self.nm_budget < 4 {
            return Err(CliError::Config(
                "baseline: m_grid_points and starts_per_axis must be positive, nm_budget at least 4".into(),
            ));
        }
        if self.sigma.is_some_and(|s| !(s > 0.0)) {
            return Err(CliError::Config("baseline.sigma must be positive".into()));
        }
        for (name, b) in [("m_grid_bounds", self.m_grid_bounds(problem)), ("start_bounds", self.start_bounds(problem))] {
            if b.len() != 3 || b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(CliError::Config(format!("baseline.{name}: need 3 ordered intervals")));
            }
        }
        Ok(())
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub n_par: Option<usize>,
    pub method: Option<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Applies overrides and checks the result. The sampler seed is set to
    /// the run seed.
    pub fn resolve(mut self, overrides: &Overrides) -> CliResult<Self> {
        if let Some(seed) = overrides.seed {
            self.io.seed = Some(seed);
        }
        if let Some(out) = &overrides.out {
            self.io.out = out.clone();
        }
        if let Some(data) = &overrides.data {
            self.io.data = Some(data.clone());
        }
        if let Some(n_par) = overrides.n_par {
            self.sampler.n_par = n_par;
        }
        if let Some(method) = &overrides.method {
            self.baseline.method = BaselineMethod::parse(method)?;
        }
        let seed = self
            .io
            .seed
            .ok_or_else(|| CliError::Config("no seed: set io.seed or pass --seed".into()))?;
        self.sampler.seed = seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.problem.to_spec()?;
        let prior = self.prior.to_spec()?;
        if prior.n_params() != self.problem.m_bounds.len() {
            return Err(CliError::Config(format!(
                "prior.m_box has {} intervals, problem.m_bounds has {}",
                prior.n_params(),
                self.problem.m_bounds.len()
            )));
        }
        self.posterior.settings()?;
        self.sampler
            .validate()
            .map_err(|e| CliError::Config(format!("sampler: {e}")))?;
        if !(self.data.noise_ratio >= 0.0 && self.data.noise_ratio.is_finite()) {
            return Err(CliError::Config("data.noise_ratio must be nonnegative".into()));
        }
        self.baseline.validate(&self.problem)?;
        for name in [&self.io.chain_file, &self.io.series_file, &self.io.report_file] {
            if name.is_empty() || name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("io: `{name}` must be a plain file name")));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.sampler.seed
    }

    pub fn data_dir(&self) -> &Path {
        self.io.data.as_deref().unwrap_or(&self.io.out)
    }

    /// SHA-256 of the canonical TOML form of the resolved config.
    pub fn digest(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

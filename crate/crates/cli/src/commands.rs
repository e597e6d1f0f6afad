use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mixinv::models::{generate_observations, synth_slip, ForwardModel, GroundTruth, ModelSpec, Observation};
use mixinv::posterior::PriorSpec;
use mixinv::regselect::{
    box_grid, global_discrepancy, global_gcv_objective, minimize_f_c, multi_start, pointwise_objective, LocalMinimum,
    Method, SelectionGrids,
};
use mixinv::sampler::{run_parallel_chain, run_single_chain, BoxPrior, PosteriorTarget};
use mixinv::Execution;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::chain::{self, ChainMeta};
use crate::config::{BaselineMethod, RunConfig};
use crate::error::{CliError, CliResult};
use crate::report::{render_series, SummaryReport};

pub const MODEL_FILE: &str = "model.json";
pub const OBSERVATION_FILE: &str = "observation.json";
pub const TRUTH_FILE: &str = "truth.json";

// Independent random streams per command.
const GENERATE_STREAM: u64 = 1;
const INVERT_STREAM: u64 = 2;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::write(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("data serializes");
    write_text(path, &(text + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub files: Vec<PathBuf>,
    pub n_measurements: usize,
    pub target_noise_ratio: f64,
    /// `|u - u_clean| / |u_clean|`.
    pub realized_noise_ratio: f64,
    pub observation: Observation,
    pub truth: GroundTruth,
}

pub fn cmd_generate(cfg: &RunConfig) -> CliResult<GenerateOutcome> {
    let spec = cfg.problem.to_spec()?;
    let model = ForwardModel::new(spec.clone()).map_err(|e| CliError::Config(format!("problem: {e}")))?;
    let m_true = model.scaled(cfg.data.true_plane);
    if !model.is_admissible(&m_true) {
        return Err(CliError::Config(format!(
            "data.true_plane {:?} is outside problem.m_bounds or reaches the surface",
            cfg.data.true_plane
        )));
    }
    let g_true = synth_slip(model.grid(), &cfg.data.bumps()).map_err(|e| CliError::Config(format!("data.bumps: {e}")))?;
    let mut rng = rng_for(cfg.seed(), GENERATE_STREAM);
    let (observation, truth) = generate_observations(&model, &m_true, &g_true, cfg.data.noise_ratio, &mut rng)?;

    let clean = DVector::from_column_slice(&truth.u_clean);
    let realized_noise_ratio = if clean.norm() > 0.0 {
        (observation.vector() - &clean).norm() / clean.norm()
    } else {
        0.0
    };

    let dir = &cfg.io.out;
    ensure_dir(dir)?;
    let files = vec![dir.join(MODEL_FILE), dir.join(OBSERVATION_FILE), dir.join(TRUTH_FILE)];
    write_json(&files[0], &spec)?;
    write_json(&files[1], &observation)?;
    write_json(&files[2], &truth)?;
    Ok(GenerateOutcome {
        files,
        n_measurements: observation.len(),
        target_noise_ratio: cfg.data.noise_ratio,
        realized_noise_ratio,
        observation,
        truth,
    })
}

/// Model and observation read from a data directory and checked against
/// each other and the config.
pub struct LoadedData {
    pub model: ForwardModel,
    pub observation: Observation,
    pub u: DVector<f64>,
}

pub fn load_data(cfg: &RunConfig) -> CliResult<LoadedData> {
    let dir = cfg.data_dir();
    let spec: ModelSpec = read_json(&dir.join(MODEL_FILE))?;
    let observation: Observation = read_json(&dir.join(OBSERVATION_FILE))?;
    let model = ForwardModel::new(spec).map_err(|e| CliError::Data(format!("{}: {e}", dir.join(MODEL_FILE).display())))?;
    if observation.len() != model.n_measurements() {
        return Err(CliError::Data(format!(
            "dimension mismatch: observation has {} values, model has {} stations",
            observation.len(),
            model.n_measurements()
        )));
    }
    let expected = cfg.problem.to_spec()?;
    if expected.stations.len() != model.n_measurements() || expected.grid.len() != model.n_sources() {
        return Err(CliError::Data(format!(
            "dimension mismatch: config describes {} stations and {} sources, data has {} and {}",
            expected.stations.len(),
            expected.grid.len(),
            model.n_measurements(),
            model.n_sources()
        )));
    }
    if cfg.prior.m_box.len() != model.n_params() {
        return Err(CliError::Data(format!(
            "dimension mismatch: prior has {} coordinates, model has {}",
            cfg.prior.m_box.len(),
            model.n_params()
        )));
    }
    if observation.u.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Data("observation contains non-finite values".into()));
    }
    let u = observation.vector();
    Ok(LoadedData { model, observation, u })
}

#[derive(Debug, Clone)]
pub struct InvertOutcome {
    pub report: SummaryReport,
    pub chain_path: PathBuf,
    pub series_path: PathBuf,
    pub report_path: PathBuf,
}

pub fn cmd_invert(cfg: &RunConfig) -> CliResult<InvertOutcome> {
    let data = load_data(cfg)?;
    let prior: PriorSpec = cfg.prior.to_spec()?;
    let target = PosteriorTarget {
        model: &data.model,
        u: data.u.clone(),
        prior: prior.clone(),
        settings: cfg.posterior.settings()?,
    };
    let mut sampler = cfg.sampler.clone();
    sampler.execution = Execution::Parallel;
    let box_prior = BoxPrior::from(&prior);
    let mut rng = rng_for(cfg.seed(), INVERT_STREAM);

    let start = Instant::now();
    let result = if sampler.n_par == 1 {
        run_single_chain(&sampler, &target, &box_prior, &mut rng)?
    } else {
        run_parallel_chain(&sampler, &target, &box_prior, &mut rng)?
    };
    let wall = start.elapsed().as_secs_f64();

    let meta = ChainMeta {
        n_par: result.n_par,
        n1: sampler.n1,
        n2: sampler.n2,
        n3: sampler.n3,
        seed: cfg.seed(),
        depth_scale: data.model.spec().depth_scale,
        config_digest: cfg.digest(),
    };
    let records = chain::records_from(&result)?;
    let mut report = SummaryReport::from_chain(&meta, &records, 3)?;
    report.wall_time_s = Some(wall);

    let dir = &cfg.io.out;
    ensure_dir(dir)?;
    let chain_path = dir.join(&cfg.io.chain_file);
    let series_path = dir.join(&cfg.io.series_file);
    let report_path = dir.join(&cfg.io.report_file);
    chain::write(&chain_path, &meta, &records)?;
    write_text(&series_path, &render_series(&meta, &records))?;
    write_text(&report_path, &report.to_text())?;
    Ok(InvertOutcome {
        report,
        chain_path,
        series_path,
        report_path,
    })
}

/// One row of the discrepancy table. `m` is physical `(a, b, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub err_ratio: f64,
    pub c: f64,
    pub m: Option<[f64; 3]>,
    pub f_value: Option<f64>,
    pub status: &'static str,
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub method: BaselineMethod,
    pub norm_u: f64,
    /// Global discrepancy only.
    pub rows: Vec<TableRow>,
    /// Other methods: local minima, best first, physical coordinates.
    pub minima: Vec<LocalMinimum>,
    pub path: PathBuf,
    pub text: String,
}

impl BaselineOutcome {
    /// Best physical `(a, b, d)` of a search method.
    pub fn best(&self) -> Option<[f64; 3]> {
        self.minima.first().map(|l| [l.m[0], l.m[1], l.m[2]])
    }
}

fn physical_minimum(model: &ForwardModel, l: LocalMinimum) -> LocalMinimum {
    LocalMinimum {
        start: model.physical(&l.start).to_vec(),
        m: model.physical(&l.m).to_vec(),
        ..l
    }
}

pub fn cmd_baseline(cfg: &RunConfig) -> CliResult<BaselineOutcome> {
    let data = load_data(cfg)?;
    let model = &data.model;
    let u = &data.u;
    let b = &cfg.baseline;
    let c_grid = b.c_grid()?;
    let solver = cfg.posterior.solver();
    let bounds = model.m_bounds().to_vec();
    let mut starts = box_grid(&b.start_bounds(&cfg.problem), b.starts_per_axis);
    let nm = b.nelder_mead();
    let exec = Execution::Parallel;
    let norm_u = data.observation.norm();
    let dir = &cfg.io.out;
    ensure_dir(dir)?;
    let path = dir.join(format!("baseline_{}.csv", b.method.name()));

    if b.method == BaselineMethod::ClsGlobal {
        let m_grid = box_grid(&b.m_grid_bounds(&cfg.problem), b.m_grid_points);
        let mut rows = Vec::with_capacity(b.err_ratios.len());
        for &ratio in &b.err_ratios {
            let gd = global_discrepancy(model, u, ratio * norm_u, &m_grid, &c_grid, cfg.posterior.rel_threshold, exec)?;
            if gd.c_bold == 0.0 {
                rows.push(TableRow {
                    err_ratio: ratio,
                    c: 0.0,
                    m: None,
                    f_value: None,
                    status: "no-root",
                });
                continue;
            }
            // The grid point attaining the largest C joins the starts.
            let mut row_starts = starts.clone();
            if let Some((m, _)) = gd.per_m_values.iter().max_by(|x, y| x.1.total_cmp(&y.1)) {
                row_starts.push(m.clone());
            }
            let ms = minimize_f_c(model, u, gd.c_bold, &row_starts, &bounds, &nm, &solver, exec)?;
            rows.push(TableRow {
                err_ratio: ratio,
                c: gd.c_bold,
                m: Some(model.physical(&ms.m_hat)),
                f_value: Some(ms.f_value),
                status: if ms.budget_exhausted { "budget-exhausted" } else { "ok" },
            });
        }
        let mut csv = String::from("err_over_norm_u,c,a,b,d,f_value,status\n");
        let mut text = format!("{:>9} {:>12} {:>9} {:>9} {:>9}  status\n", "Err/|u|", "C", "a", "b", "d");
        for r in &rows {
            let m = r.m.unwrap_or([f64::NAN; 3]);
            let _ = writeln!(
                csv,
                "{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.err_ratio,
                r.c,
                m[0],
                m[1],
                m[2],
                r.f_value.unwrap_or(f64::NAN),
                r.status
            );
            let _ = writeln!(
                text,
                "{:>9.3} {:>12.3e} {:>9.3} {:>9.3} {:>9.2}  {}",
                r.err_ratio, r.c, m[0], m[1], m[2], r.status
            );
        }
        write_text(&path, &csv)?;
        return Ok(BaselineOutcome {
            method: b.method,
            norm_u,
            rows,
            minima: Vec::new(),
            path,
            text,
        });
    }

    let sigma = match b.method {
        BaselineMethod::ClsPointwise => Some(b.sigma.or(data.observation.sigma_known).ok_or_else(|| {
            CliError::Config("cls-pointwise needs baseline.sigma or an observation with a known sigma".into())
        })?),
        _ => b.sigma,
    };
    let grids = SelectionGrids {
        c_grid: c_grid.clone(),
        cls_bracket: (c_grid[0], c_grid[c_grid.len() - 1]),
        sigma,
        rel_threshold: cfg.posterior.rel_threshold,
        solver,
    };
    starts.dedup();
    let result = match b.method {
        BaselineMethod::GcvPointwise => {
            multi_start(|m| pointwise_objective(m, Method::Gcv, model, u, &grids), &starts, &bounds, &nm, exec)?
        }
        BaselineMethod::ClsPointwise => {
            multi_start(|m| pointwise_objective(m, Method::Cls, model, u, &grids), &starts, &bounds, &nm, exec)?
        }
        BaselineMethod::GcvGlobal => multi_start(|m| global_gcv_objective(m, model, u, &grids), &starts, &bounds, &nm, exec)?,
        BaselineMethod::ClsGlobal => unreachable!("handled above"),
    };
    let minima: Vec<LocalMinimum> = result.local_minima.into_iter().map(|l| physical_minimum(model, l)).collect();
    let mut csv = String::from("rank,start_a,start_b,start_d,a,b,d,objective,evaluations,converged\n");
    let mut text = format!("{:>4} {:>9} {:>9} {:>9} {:>14}  converged\n", "rank", "a", "b", "d", "objective");
    for (rank, l) in minima.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{rank},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
            l.start[0],
            l.start[1],
            l.start[2],
            l.m[0],
            l.m[1],
            l.m[2],
            l.value,
            l.evaluations,
            u8::from(l.converged)
        );
        let _ = writeln!(
            text,
            "{rank:>4} {:>9.3} {:>9.3} {:>9.2} {:>14.6e}  {}",
            l.m[0], l.m[1], l.m[2], l.value, l.converged
        );
    }
    write_text(&path, &csv)?;
    Ok(BaselineOutcome {
        method: b.method,
        norm_u,
        rows: Vec::new(),
        minima,
        path,
        text,
    })
}

#[derive(Debug, Clone)]
pub struct DiagnoseOutcome {
    pub report: SummaryReport,
    /// The stored report compared against, if one was found.
    pub compared_with: Option<PathBuf>,
}

/// Recomputes the summary of `stage` from the chain file alone. For stage 3,
/// a stored report (given, or `report.txt` beside the chain) must agree to
/// relative 1e-12.
pub fn cmd_diagnose(chain_path: &Path, stage: u8, report_path: Option<&Path>) -> CliResult<DiagnoseOutcome> {
    let (meta, records) = chain::read(chain_path)?;
    let report = SummaryReport::from_chain(&meta, &records, stage)?;
    let stored_path = match report_path {
        Some(p) => Some(p.to_path_buf()),
        None => chain_path
            .parent()
            .map(|d| d.join("report.txt"))
            .filter(|p| p.exists()),
    };
    let compared_with = match stored_path {
        Some(p) if stage == 3 => {
            let text = std::fs::read_to_string(&p).map_err(|e| CliError::read(&p, e))?;
            let stored = SummaryReport::from_text(&text)?;
            let bad = report.mismatches(&stored, 1e-12);
            if !bad.is_empty() {
                return Err(CliError::Data(format!(
                    "recomputed report disagrees with {} in: {}",
                    p.display(),
                    bad.join(", ")
                )));
            }
            Some(p)
        }
        _ => None,
    };
    Ok(DiagnoseOutcome { report, compared_with })
}

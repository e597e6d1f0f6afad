//! Summary statistics computed from chain records, and the running series
//! behind the trace plots.

use std::fmt::Write as _;

use mixinv::sampler::RunningMoments;

use crate::chain::{ChainMeta, ChainRecord};
use crate::error::{CliError, CliResult};

/// Reported coordinates; `d` is in physical units.
pub const COORDS: [&str; 4] = ["a", "b", "d", "log10_c"];

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryReport {
    pub stage: u8,
    pub samples: usize,
    pub mean: [f64; 4],
    pub std: [f64; 4],
    /// Mean of `sqrt(sigma_max_sq)` over the stage's finite-density samples.
    pub expected_sigma_max: f64,
    /// Per stage; stage 1 is always 1.
    pub acceptance: [f64; 3],
    pub config_digest: String,
    /// Only known at run time.
    pub wall_time_s: Option<f64>,
}

impl SummaryReport {
    pub fn from_chain(meta: &ChainMeta, records: &[ChainRecord], stage: u8) -> CliResult<Self> {
        if !(1..=3).contains(&stage) {
            return Err(CliError::Config(format!("stage must be 1, 2 or 3, got {stage}")));
        }
        let selected: Vec<&ChainRecord> = records.iter().filter(|r| r.stage == stage).collect();
        if selected.is_empty() {
            return Err(CliError::Data(format!("chain has no stage-{stage} records")));
        }
        let mut moments = RunningMoments::new(4);
        selected.iter().for_each(|r| moments.update(&r.x));
        let std = moments.std();
        let scale = [1.0, 1.0, meta.depth_scale, 1.0];
        let sigmas: Vec<f64> = selected
            .iter()
            .filter(|r| r.sigma_max_sq.is_finite())
            .map(|r| r.sigma_max_sq.sqrt())
            .collect();
        let expected_sigma_max = if sigmas.is_empty() {
            f64::NAN
        } else {
            sigmas.iter().sum::<f64>() / sigmas.len() as f64
        };
        let mut acceptance = [1.0; 3];
        for (s, rate) in acceptance.iter_mut().enumerate().skip(1) {
            let recs: Vec<&ChainRecord> = records.iter().filter(|r| r.stage as usize == s + 1).collect();
            // The first iteration of a stage is its start state.
            let steps = recs.len().saturating_sub(meta.n_par);
            let moved = recs.iter().skip(meta.n_par).filter(|r| r.accepted).count();
            *rate = if steps == 0 { 0.0 } else { moved as f64 / steps as f64 };
        }
        Ok(Self {
            stage,
            samples: selected.len(),
            mean: std::array::from_fn(|i| moments.mean()[i] * scale[i]),
            std: std::array::from_fn(|i| std[i] * scale[i]),
            expected_sigma_max,
            acceptance,
            config_digest: meta.config_digest.clone(),
            wall_time_s: None,
        })
    }

    /// `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage={}", self.stage);
        let _ = writeln!(out, "samples={}", self.samples);
        for (i, c) in COORDS.iter().enumerate() {
            let _ = writeln!(out, "mean_{c}={:e}", self.mean[i]);
            let _ = writeln!(out, "std_{c}={:e}", self.std[i]);
        }
        let _ = writeln!(out, "expected_sigma_max={:e}", self.expected_sigma_max);
        for (s, a) in self.acceptance.iter().enumerate() {
            let _ = writeln!(out, "acceptance_stage{}={:e}", s + 1, a);
        }
        let _ = writeln!(out, "config_digest={}", self.config_digest);
        if let Some(t) = self.wall_time_s {
            let _ = writeln!(out, "wall_time_s={t:.3}");
        }
        out
    }

    /// One line in the style `(a, b, d) = (...) +- (...)`.
    pub fn headline(&self) -> String {
        format!(
            "(a, b, d) = ({:.3}, {:.3}, {:.2}) +- ({:.3}, {:.3}, {:.2}); log10 C = {:.2} +- {:.2}; sigma_max = {:.4e}",
            self.mean[0],
            self.mean[1],
            self.mean[2],
            self.std[0],
            self.std[1],
            self.std[2],
            self.mean[3],
            self.std[3],
            self.expected_sigma_max
        )
    }

    pub fn from_text(text: &str) -> CliResult<Self> {
        let pairs: Vec<(&str, &str)> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('=').ok_or_else(|| CliError::Data(format!("malformed report line `{l}`"))))
            .collect::<CliResult<_>>()?;
        let get = |key: &str| {
            pairs
                .iter()
                .find(|(k, _)| *k == key)
                .map(|(_, v)| *v)
                .ok_or_else(|| CliError::Data(format!("report key `{key}` missing")))
        };
        let float = |key: &str| -> CliResult<f64> {
            get(key)?
                .parse()
                .map_err(|_| CliError::Data(format!("report key `{key}` is not a number")))
        };
        let coords = |prefix: &str| -> CliResult<[f64; 4]> {
            let v: Vec<f64> = COORDS
                .iter()
                .map(|c| float(&format!("{prefix}_{c}")))
                .collect::<CliResult<_>>()?;
            Ok([v[0], v[1], v[2], v[3]])
        };
        Ok(Self {
            stage: get("stage")?
                .parse()
                .map_err(|_| CliError::Data("report key `stage` is not an integer".into()))?,
            samples: get("samples")?
                .parse()
                .map_err(|_| CliError::Data("report key `samples` is not an integer".into()))?,
            mean: coords("mean")?,
            std: coords("std")?,
            expected_sigma_max: float("expected_sigma_max")?,
            acceptance: [float("acceptance_stage1")?, float("acceptance_stage2")?, float("acceptance_stage3")?],
            config_digest: get("config_digest")?.to_string(),
            wall_time_s: get("wall_time_s").ok().and_then(|v| v.parse().ok()),
        })
    }

    /// Fields differing by more than `rel` (relative); wall time is ignored.
    pub fn mismatches(&self, other: &Self, rel: f64) -> Vec<String> {
        let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || a == b || (a - b).abs() <= rel * a.abs().max(b.abs());
        let mut out = Vec::new();
        if self.stage != other.stage {
            out.push("stage".to_string());
        }
        if self.samples != other.samples {
            out.push("samples".to_string());
        }
        for (i, c) in COORDS.iter().enumerate() {
            if !close(self.mean[i], other.mean[i]) {
                out.push(format!("mean_{c}"));
            }
            if !close(self.std[i], other.std[i]) {
                out.push(format!("std_{c}"));
            }
        }
        if !close(self.expected_sigma_max, other.expected_sigma_max) {
            out.push("expected_sigma_max".to_string());
        }
        for s in 0..3 {
            if !close(self.acceptance[s], other.acceptance[s]) {
                out.push(format!("acceptance_stage{}", s + 1));
            }
        }
        if self.config_digest != other.config_digest {
            out.push("config_digest".to_string());
        }
        out
    }
}

pub const SERIES_HEADER: &str = "iteration,stage,log_density,log10_c,mean_a,std_a,mean_b,std_b,mean_d_over_100,std_d_over_100,mean_log10_c,std_log10_c";

/// One row per iteration: the column-0 trace of log density and log10 C,
/// then running mean and std of `a`, `b`, `d/100` and log10 C. Running
/// statistics restart at each stage boundary.
pub fn render_series(meta: &ChainMeta, records: &[ChainRecord]) -> String {
    let mut out = String::with_capacity(200 * (records.len() / meta.n_par + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    let to_plot = meta.depth_scale / 100.0;
    let mut moments = RunningMoments::new(4);
    let mut stage = 0;
    for (iteration, chunk) in records.chunks(meta.n_par).enumerate() {
        if chunk[0].stage != stage {
            stage = chunk[0].stage;
            moments = RunningMoments::new(4);
        }
        chunk.iter().for_each(|r| moments.update(&r.x));
        let mean = moments.mean();
        let std = moments.std();
        let head = &chunk[0];
        let _ = writeln!(
            out,
            "{iteration},{stage},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            head.log_density,
            head.x[3],
            mean[0],
            std[0],
            mean[1],
            std[1],
            mean[2] * to_plot,
            std[2] * to_plot,
            mean[3],
            std[3]
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> (ChainMeta, Vec<ChainRecord>) {
        let meta = ChainMeta {
            n_par: 2,
            n1: 1,
            n2: 2,
            n3: 5,
            seed: 1,
            depth_scale: 100.0,
            config_digest: "d".into(),
        };
        let records = (0..10)
            .map(|i| ChainRecord {
                index: i,
                stage: meta.stage_of(i),
                column: i % 2,
                accepted: i % 2 == 1,
                x: [i as f64, 2.0 * i as f64, -0.1 - 0.01 * i as f64, -5.0],
                log_density: -1.0,
                sigma_max_sq: 4.0,
            })
            .collect();
        (meta, records)
    }

    #[test]
    fn stage_three_statistics() {
        let (meta, records) = chain();
        let r = SummaryReport::from_chain(&meta, &records, 3).unwrap();
        // Stage 3 holds indices 4..10.
        assert_eq!(r.samples, 6);
        assert!((r.mean[0] - 6.5).abs() < 1e-12);
        assert!((r.mean[2] - 100.0 * (-0.1 - 0.065)).abs() < 1e-9);
        let var: f64 = (4..10).map(|i| (i as f64 - 6.5).powi(2)).sum::<f64>() / 5.0;
        assert!((r.std[0] - var.sqrt()).abs() < 1e-12);
        assert!((r.std[2] - var.sqrt()).abs() < 1e-9);
        assert_eq!(r.std[3], 0.0);
        assert_eq!(r.expected_sigma_max, 2.0);
        // Stage 3 after the start iteration: 4 records, 2 accepted.
        assert_eq!(r.acceptance, [1.0, 0.0, 0.5]);
    }

    #[test]
    fn text_round_trip() {
        let (meta, records) = chain();
        let mut r = SummaryReport::from_chain(&meta, &records, 3).unwrap();
        r.wall_time_s = Some(1.25);
        let back = SummaryReport::from_text(&r.to_text()).unwrap();
        assert_eq!(back, r);
        assert!(r.mismatches(&back, 0.0).is_empty());
        let mut other = back.clone();
        other.mean[1] *= 1.0 + 1e-9;
        assert_eq!(r.mismatches(&other, 1e-12), vec!["mean_b".to_string()]);
    }

    #[test]
    fn series_restarts_per_stage_and_scales_depth() {
        let (meta, records) = chain();
        let text = render_series(&meta, &records);
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert_eq!(rows.len(), 5);
        // Iteration 2 starts stage 3: mean over indices 4, 5.
        assert_eq!(rows[2][1], 3.0);
        assert!((rows[2][4] - 4.5).abs() < 1e-12);
        let d_mean = -0.1 - 0.01 * 4.5;
        assert!((rows[2][8] - d_mean).abs() < 1e-12);
        let last = SummaryReport::from_chain(&meta, &records, 3).unwrap();
        assert!((rows[4][4] - last.mean[0]).abs() < 1e-12);
        assert!((rows[4][8] * 100.0 - last.mean[2]).abs() < 1e-9);
    }
}

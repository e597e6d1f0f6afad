//! Self-describing chain files.
//!
//! Layout: `# key=value` metadata lines, one CSV header line, then one record
//! per retained sample. Floats use 17 significant digits so they read back
//! bit-exact. A missing `sigma_max_sq` (zero-density state) is written `NaN`.

use std::fmt::Write as _;
use std::path::Path;

use mixinv::sampler::ChainResult;

use crate::error::{CliError, CliResult};

pub const FORMAT: &str = "mixinv-chain-1";
pub const HEADER: &str = "index,stage,column,accepted,a,b,d_scaled,log10_c,log_density,sigma_max_sq";
const FIELDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainMeta {
    pub n_par: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub seed: u64,
    /// Physical depth is `d_scaled * depth_scale`.
    pub depth_scale: f64,
    pub config_digest: String,
}

impl ChainMeta {
    /// Record index at which each stage starts.
    pub fn stage_marks(&self) -> [usize; 3] {
        [0, self.n1 * self.n_par, self.n2 * self.n_par]
    }

    pub fn n_records(&self) -> usize {
        self.n3 * self.n_par
    }

    pub fn stage_of(&self, index: usize) -> u8 {
        let [_, s2, s3] = self.stage_marks();
        match index {
            i if i < s2 => 1,
            i if i < s3 => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainRecord {
    pub index: usize,
    pub stage: u8,
    pub column: usize,
    pub accepted: bool,
    /// `(a, b, d_scaled, log10 C)`.
    pub x: [f64; 4],
    pub log_density: f64,
    pub sigma_max_sq: f64,
}

pub fn records_from(result: &ChainResult) -> CliResult<Vec<ChainRecord>> {
    if result.dim != 4 {
        return Err(CliError::Data(format!("chain has dimension {}, expected 4", result.dim)));
    }
    Ok(result
        .samples
        .iter()
        .enumerate()
        .map(|(index, s)| ChainRecord {
            index,
            stage: s.stage,
            column: s.column,
            accepted: s.accepted,
            x: [s.x[0], s.x[1], s.x[2], s.x[3]],
            log_density: s.log_density,
            sigma_max_sq: s.sigma_max_sq.unwrap_or(f64::NAN),
        })
        .collect())
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn render(meta: &ChainMeta, records: &[ChainRecord]) -> String {
    let mut out = String::with_capacity(160 * (records.len() + 12));
    let [_, s2, s3] = meta.stage_marks();
    let lines = [
        ("format", FORMAT.to_string()),
        ("parameters", "a,b,d_scaled,log10_c".to_string()),
        ("depth_scale", num(meta.depth_scale)),
        ("n_par", meta.n_par.to_string()),
        ("n1", meta.n1.to_string()),
        ("n2", meta.n2.to_string()),
        ("n3", meta.n3.to_string()),
        ("stage_marks", format!("0,{s2},{s3}")),
        ("records", records.len().to_string()),
        ("seed", meta.seed.to_string()),
        ("config_digest", meta.config_digest.clone()),
    ];
    for (k, v) in lines {
        let _ = writeln!(out, "# {k}={v}");
    }
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.stage,
            r.column,
            u8::from(r.accepted),
            num(r.x[0]),
            num(r.x[1]),
            num(r.x[2]),
            num(r.x[3]),
            num(r.log_density),
            num(r.sigma_max_sq)
        );
    }
    out
}

pub fn write(path: &Path, meta: &ChainMeta, records: &[ChainRecord]) -> CliResult<()> {
    std::fs::write(path, render(meta, records)).map_err(|e| CliError::write(path, e))
}

pub fn read(path: &Path) -> CliResult<(ChainMeta, Vec<ChainRecord>)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    parse(&text).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Data(msg.into())
}

pub fn parse(text: &str) -> CliResult<(ChainMeta, Vec<ChainRecord>)> {
    let mut lines = text.lines().enumerate().peekable();
    let mut meta_pairs = Vec::new();
    while let Some((_, line)) = lines.next_if(|(_, l)| l.starts_with('#')) {
        let body = line.trim_start_matches('#').trim();
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| corrupt(format!("malformed metadata line `{line}`")))?;
        meta_pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let get = |key: &str| {
        meta_pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| corrupt(format!("metadata key `{key}` missing")))
    };
    let int = |key: &str| -> CliResult<usize> {
        get(key)?
            .parse()
            .map_err(|_| corrupt(format!("metadata key `{key}` is not an integer")))
    };
    if get("format")? != FORMAT {
        return Err(corrupt(format!("unsupported format `{}`", get("format")?)));
    }
    let meta = ChainMeta {
        n_par: int("n_par")?,
        n1: int("n1")?,
        n2: int("n2")?,
        n3: int("n3")?,
        seed: get("seed")?
            .parse()
            .map_err(|_| corrupt("metadata key `seed` is not an integer"))?,
        depth_scale: get("depth_scale")?
            .parse()
            .map_err(|_| corrupt("metadata key `depth_scale` is not a number"))?,
        config_digest: get("config_digest")?.to_string(),
    };
    if !(meta.n_par >= 1 && meta.n1 < meta.n2 && meta.n2 < meta.n3) {
        return Err(corrupt("inconsistent stage lengths in metadata"));
    }
    let expected = meta.n_records();
    if int("records")? != expected {
        return Err(corrupt(format!("metadata declares {} records, stage lengths imply {expected}", int("records")?)));
    }
    match lines.next() {
        Some((_, h)) if h == HEADER => {}
        Some((i, h)) => return Err(corrupt(format!("line {}: unexpected header `{h}`", i + 1))),
        None => return Err(corrupt("header line missing")),
    }

    // A record cut short can still parse; only newline-terminated lines count.
    let complete = text.ends_with('\n');
    let last_line = text.lines().count().saturating_sub(1);
    let mut records = Vec::with_capacity(expected);
    for (i, line) in lines {
        let k = records.len();
        let bad = |msg: String| corrupt(format!("record {k} (line {}): {msg}", i + 1));
        if k == expected {
            return Err(bad("more records than declared".into()));
        }
        if i == last_line && !complete {
            return Err(bad("record is not newline-terminated (truncated)".into()));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FIELDS {
            return Err(bad(format!("expected {FIELDS} fields, found {}", fields.len())));
        }
        let int_field = |j: usize| fields[j].parse::<usize>().map_err(|_| bad(format!("field {j} `{}` is not an integer", fields[j])));
        let float_field = |j: usize| fields[j].parse::<f64>().map_err(|_| bad(format!("field {j} `{}` is not a number", fields[j])));
        let rec = ChainRecord {
            index: int_field(0)?,
            stage: int_field(1)? as u8,
            column: int_field(2)?,
            accepted: match fields[3] {
                "0" => false,
                "1" => true,
                other => return Err(bad(format!("accepted flag `{other}` is not 0 or 1"))),
            },
            x: [float_field(4)?, float_field(5)?, float_field(6)?, float_field(7)?],
            log_density: float_field(8)?,
            sigma_max_sq: float_field(9)?,
        };
        if rec.index != k {
            return Err(bad(format!("index {} out of sequence", rec.index)));
        }
        if rec.stage != meta.stage_of(k) {
            return Err(bad(format!("stage {} does not match position (expected {})", rec.stage, meta.stage_of(k))));
        }
        if rec.column >= meta.n_par {
            return Err(bad(format!("column {} exceeds n_par", rec.column)));
        }
        if rec.x.iter().any(|v| !v.is_finite()) || rec.log_density.is_nan() {
            return Err(bad("non-finite coordinate or NaN log density".into()));
        }
        records.push(rec);
    }
    if records.len() < expected {
        return Err(corrupt(format!(
            "record {} missing: file truncated after {} of {expected} records",
            records.len(),
            records.len()
        )));
    }
    Ok((meta, records))
}

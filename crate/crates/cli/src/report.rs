//! Result bundles and emission.
//!
//! The JSON bundle is the full record; CSV emission flattens the field
//! dumps for external plotting: one row per outer index for value fields,
//! one row per (outer, inner) pair for integrand fields, one row per
//! refinement level for convergence tables. Every emitted file embeds the
//! config hash and seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct YRow {
    pub index: usize,
    pub time: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZRow {
    pub outer: usize,
    pub inner: usize,
    pub t: f64,
    pub s: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub error: f64,
    /// error divided by the previous level's error; absent on the first row.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomRow {
    pub axiom: String,
    pub asserted: bool,
    pub worst_violation: f64,
    pub instances: usize,
    pub witness: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub version: String,
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub y_rows: Vec<YRow>,
    #[serde(default)]
    pub z_rows: Vec<ZRow>,
    #[serde(default)]
    pub convergence_rows: Vec<ConvergenceRow>,
    #[serde(default)]
    pub axiom_rows: Vec<AxiomRow>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ResultBundle {
    pub fn new(experiment: &str, config_hash: String, seed: Option<u64>) -> Self {
        ResultBundle {
            schema_version: SCHEMA_VERSION,
            experiment: experiment.to_string(),
            config_hash,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            scalars: BTreeMap::new(),
            y_rows: Vec::new(),
            z_rows: Vec::new(),
            convergence_rows: Vec::new(),
            axiom_rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    /// Record a scalar; non-finite values become notes so the bundle stays
    /// JSON-round-trippable.
    pub fn scalar(&mut self, key: &str, value: f64) {
        if value.is_finite() {
            self.scalars.insert(key.to_string(), value);
        } else {
            self.notes.push(format!("{key} is not finite: {value}"));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmitFormat {
    Json,
    Csv,
    Both,
}

impl std::str::FromStr for EmitFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(EmitFormat::Json),
            "csv" => Ok(EmitFormat::Csv),
            "both" => Ok(EmitFormat::Both),
            other => Err(format!("unknown format '{other}' (json | csv | both)")),
        }
    }
}

fn provenance_line(bundle: &ResultBundle) -> String {
    format!(
        "# config_hash={} seed={} version={}\n",
        bundle.config_hash,
        bundle
            .seed
            .map(|s| s.to_string())
            .unwrap_or_else(|| "none".into()),
        bundle.version
    )
}

fn write_file(path: &Path, content: &str) -> Result<PathBuf, CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

/// Write the bundle to `dir`; returns the created paths.
pub fn emit(bundle: &ResultBundle, dir: &Path, format: EmitFormat) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))?;
    let mut written = Vec::new();

    if matches!(format, EmitFormat::Json | EmitFormat::Both) {
        let json = serde_json::to_string_pretty(bundle)
            .map_err(|e| CliError::Io(format!("serializing bundle: {e}")))?;
        written.push(write_file(&dir.join("bundle.json"), &json)?);
    }

    if matches!(format, EmitFormat::Csv | EmitFormat::Both) {
        let head = provenance_line(bundle);

        if !bundle.y_rows.is_empty() {
            let mut csv = head.clone();
            csv.push_str("index,time,mean,min,max\n");
            for r in &bundle.y_rows {
                let _ = writeln!(csv, "{},{},{},{},{}", r.index, r.time, r.mean, r.min, r.max);
            }
            written.push(write_file(&dir.join("y.csv"), &csv)?);
        }
        if !bundle.z_rows.is_empty() {
            let mut csv = head.clone();
            csv.push_str("outer,inner,t,s,mean,min,max\n");
            for r in &bundle.z_rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    r.outer, r.inner, r.t, r.s, r.mean, r.min, r.max
                );
            }
            written.push(write_file(&dir.join("z.csv"), &csv)?);
        }
        if !bundle.convergence_rows.is_empty() {
            let mut csv = head.clone();
            csv.push_str("level,error,ratio\n");
            for r in &bundle.convergence_rows {
                let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(csv, "{},{},{}", r.level, r.error, ratio);
            }
            written.push(write_file(&dir.join("convergence.csv"), &csv)?);
        }
        if !bundle.axiom_rows.is_empty() {
            let mut csv = head.clone();
            csv.push_str("axiom,asserted,worst_violation,instances\n");
            for r in &bundle.axiom_rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{}",
                    r.axiom, r.asserted, r.worst_violation, r.instances
                );
            }
            written.push(write_file(&dir.join("axioms.csv"), &csv)?);
        }
        if bundle.y_rows.is_empty()
            && bundle.z_rows.is_empty()
            && bundle.convergence_rows.is_empty()
            && bundle.axiom_rows.is_empty()
        {
            let mut csv = head;
            csv.push_str("key,value\n");
            for (k, v) in &bundle.scalars {
                let _ = writeln!(csv, "{k},{v}");
            }
            written.push(write_file(&dir.join("scalars.csv"), &csv)?);
        }
    }
    Ok(written)
}

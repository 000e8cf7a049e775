//! Instance files: JSON with a schema version, the generating seed, and
//! every field of a [`ProblemInstance`]. Floats are written in shortest
//! round-trip form and parsed exactly, so `H` survives bit for bit.

use std::path::Path;

use hygec::{Channel, ChannelKind, GroupStructure, InstanceSpec, MatrixKind, Observations, ProblemInstance};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum MatrixRecord {
    Iid { mean: f64 },
    Conditioned { kappa: f64 },
}

/// The recipe an instance was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct SpecRecord {
    m: usize,
    n: usize,
    k: usize,
    rho: f64,
    sigma_x_sq: f64,
    snr_db: f64,
    matrix: MatrixRecord,
    bits: Option<u32>,
    clip_range: Option<f64>,
}

impl From<&InstanceSpec> for SpecRecord {
    fn from(s: &InstanceSpec) -> Self {
        SpecRecord {
            m: s.m,
            n: s.n,
            k: s.k,
            rho: s.rho,
            sigma_x_sq: s.sigma_x_sq,
            snr_db: s.snr_db,
            matrix: match s.matrix {
                MatrixKind::IidGaussian { mean } => MatrixRecord::Iid { mean },
                MatrixKind::Conditioned { kappa } => MatrixRecord::Conditioned { kappa },
            },
            bits: s.bits,
            clip_range: s.clip_range,
        }
    }
}

impl From<SpecRecord> for InstanceSpec {
    fn from(s: SpecRecord) -> Self {
        InstanceSpec {
            m: s.m,
            n: s.n,
            k: s.k,
            rho: s.rho,
            sigma_x_sq: s.sigma_x_sq,
            snr_db: s.snr_db,
            matrix: match s.matrix {
                MatrixRecord::Iid { mean } => MatrixKind::IidGaussian { mean },
                MatrixRecord::Conditioned { kappa } => MatrixKind::Conditioned { kappa },
            },
            bits: s.bits,
            clip_range: s.clip_range,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum ChannelRecord {
    Linear { noise_var: f64 },
    Quantized { bits: u32, clip_range: f64, noise_var: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ObservationRecord {
    Real(Vec<f64>),
    Cells(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    schema_version: u32,
    seed: u64,
    spec: Option<SpecRecord>,
    rows: usize,
    cols: usize,
    /// `H` in column-major order.
    h: Vec<f64>,
    y: ObservationRecord,
    group_sizes: Vec<usize>,
    channel: ChannelRecord,
    sigma_x_sq: f64,
    x_true: Option<Vec<f64>>,
    xi_true: Option<Vec<bool>>,
    true_rho: Option<f64>,
}

/// An instance together with the seed (and recipe, when known) it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceFile {
    pub seed: u64,
    pub spec: Option<InstanceSpec>,
    pub instance: ProblemInstance,
}

pub fn to_json(file: &InstanceFile) -> Result<String> {
    let inst = &file.instance;
    let (rows, cols) = inst.h.shape();
    let record = InstanceRecord {
        schema_version: SCHEMA_VERSION,
        seed: file.seed,
        spec: file.spec.as_ref().map(SpecRecord::from),
        rows,
        cols,
        h: inst.h.as_slice().to_vec(),
        y: match &inst.y {
            Observations::Real(v) => ObservationRecord::Real(v.as_slice().to_vec()),
            Observations::Cells(c) => ObservationRecord::Cells(c.clone()),
        },
        group_sizes: inst.groups.sizes().to_vec(),
        channel: match inst.channel.kind() {
            ChannelKind::LinearAwgn => ChannelRecord::Linear { noise_var: inst.channel.noise_var() },
            ChannelKind::Quantized { bits, clip_range } => {
                ChannelRecord::Quantized { bits, clip_range, noise_var: inst.channel.noise_var() }
            }
        },
        sigma_x_sq: inst.sigma_x_sq,
        x_true: inst.x_true.as_ref().map(|x| x.as_slice().to_vec()),
        xi_true: inst.xi_true.clone(),
        true_rho: inst.true_rho,
    };
    Ok(serde_json::to_string(&record)?)
}

/// Parses an instance file. The schema version is checked before anything
/// else, so files from other versions fail with `SchemaMismatch` rather
/// than a field-level parse error.
pub fn from_json(text: &str) -> Result<InstanceFile> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value.get("schema_version").and_then(serde_json::Value::as_u64);
    if found != Some(SCHEMA_VERSION as u64) {
        return Err(BenchError::SchemaMismatch { found, expected: SCHEMA_VERSION });
    }
    let r: InstanceRecord = serde_json::from_value(value)?;
    if r.h.len() != r.rows * r.cols {
        return Err(BenchError::Parse(format!("H holds {} values, expected {} x {}", r.h.len(), r.rows, r.cols)));
    }
    let channel = match r.channel {
        ChannelRecord::Linear { noise_var } => Channel::linear(noise_var)?,
        ChannelRecord::Quantized { bits, clip_range, noise_var } => Channel::quantized(bits, clip_range, noise_var)?,
    };
    let instance = ProblemInstance {
        h: DMatrix::from_column_slice(r.rows, r.cols, &r.h),
        y: match r.y {
            ObservationRecord::Real(v) => Observations::Real(DVector::from_vec(v)),
            ObservationRecord::Cells(c) => Observations::Cells(c),
        },
        groups: GroupStructure::new(r.group_sizes)?,
        channel,
        sigma_x_sq: r.sigma_x_sq,
        x_true: r.x_true.map(DVector::from_vec),
        xi_true: r.xi_true,
        true_rho: r.true_rho,
    };
    hygec::model::validate_instance(&instance)?;
    Ok(InstanceFile { seed: r.seed, spec: r.spec.map(InstanceSpec::from), instance })
}

pub fn export_instance(file: &InstanceFile, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(file)?)?;
    Ok(())
}

pub fn import_instance(path: &Path) -> Result<InstanceFile> {
    from_json(&std::fs::read_to_string(path)?)
}

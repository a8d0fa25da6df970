//! CSV tables and JSON model files.
//!
//! Tables hold one observation per row; in memory the data matrix has one
//! observation per column. Floats are written in their shortest round-trip
//! form, so a table read back reproduces the same doubles.

use std::fs::File;
use std::path::{Path, PathBuf};

use pnc_core::geometry::APEX_EPS;
use pnc_core::simulate::{GeneratorSpec, ResidualLaw};
use pnc_core::{FastPncModel, HyperconeStage, Matrix, PcaTransform, PncModel, ResidualKind, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{io_error, CliError, Result};

/// Shortest decimal that parses back to `x`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

/// `dir/stem<suffix>` for a sibling of `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// A numeric table. A column named `label` is kept aside as text.
#[derive(Debug, Clone)]
pub struct Table {
    pub columns: Vec<String>,
    /// One observation per column.
    pub data: Matrix,
    pub labels: Option<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.data.row(i).iter().copied().collect())
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(file);
    let header = reader.headers().map_err(|e| io_error(path, e))?.clone();
    let label_at = header.iter().position(|h| h.eq_ignore_ascii_case("label"));
    let columns: Vec<String> =
        header.iter().enumerate().filter(|(i, _)| Some(*i) != label_at).map(|(_, h)| h.to_string()).collect();
    if columns.is_empty() {
        return Err(CliError::Input(format!("{}: no numeric columns", path.display())));
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| io_error(path, e))?;
        for (i, field) in record.iter().enumerate() {
            if Some(i) == label_at {
                labels.push(field.to_string());
                continue;
            }
            let x: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "{}: row {}, column {} ({:?}): cannot parse {field:?} as a number",
                    path.display(),
                    r + 1,
                    i + 1,
                    &header[i]
                ))
            })?;
            if !x.is_finite() {
                return Err(CliError::Input(format!(
                    "{}: row {}, column {} ({:?}): value {field} is not finite",
                    path.display(),
                    r + 1,
                    i + 1,
                    &header[i]
                )));
            }
            values.push(x);
        }
    }
    let n = values.len() / columns.len();
    if n == 0 {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Table { data: Matrix::from_column_slice(columns.len(), n, &values), columns, labels: label_at.map(|_| labels) })
}

/// Rejects observations at the apex, listing every offending row (1-based).
pub fn check_apex(data: &Matrix) -> Result<()> {
    let rows: Vec<String> = data
        .column_iter()
        .enumerate()
        .filter(|(_, c)| !(c.norm() >= APEX_EPS))
        .map(|(j, _)| (j + 1).to_string())
        .collect();
    if rows.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!("rows at the cone apex (zero size): {}", rows.join(", "))))
    }
}

pub fn write_rows<I>(path: &Path, header: &[String], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

/// Writes the columns of `data` as rows under `x1, x2, …`, with an optional
/// trailing text column.
pub fn write_observations(path: &Path, data: &Matrix, extra: Option<(&str, &[String])>) -> Result<()> {
    let mut header: Vec<String> = (1..=data.nrows()).map(|i| format!("x{i}")).collect();
    if let Some((name, _)) = extra {
        header.push(name.to_string());
    }
    let rows = data.column_iter().enumerate().map(|(j, c)| {
        let mut row: Vec<String> = c.iter().map(|x| fmt_f64(*x)).collect();
        if let Some((_, vals)) = extra {
            row.push(vals[j].clone());
        }
        row
    });
    write_rows(path, &header, rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_error(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageFile {
    pub axis: Vec<f64>,
    pub opening: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub ambient_dim: usize,
    pub residual_kind: String,
    pub stages: Vec<StageFile>,
}

impl From<&PncModel> for ModelFile {
    fn from(m: &PncModel) -> Self {
        ModelFile {
            ambient_dim: m.ambient_dim(),
            residual_kind: m.residual_kind().name().to_string(),
            stages: m
                .stages()
                .iter()
                .map(|s| StageFile { axis: s.axis.iter().copied().collect(), opening: s.opening })
                .collect(),
        }
    }
}

impl ModelFile {
    pub fn to_model(&self) -> Result<PncModel> {
        let bad = |msg: String| CliError::Input(format!("invalid model: {msg}"));
        let kind: ResidualKind = self.residual_kind.parse().map_err(|e: pnc_core::PncError| bad(e.to_string()))?;
        if self.stages.is_empty() {
            return Err(bad("no stages".into()));
        }
        for (k, s) in self.stages.iter().enumerate() {
            let expected = self.ambient_dim - k;
            if s.axis.len() != expected {
                return Err(bad(format!("stage {} axis has length {}, expected {expected}", k + 1, s.axis.len())));
            }
        }
        if self.stages.last().map(|s| s.opening) != Some(0.0) {
            return Err(bad("the final opening must be exactly 0".into()));
        }
        let stages = self
            .stages
            .iter()
            .map(|s| HyperconeStage::new(Vector::from_column_slice(&s.axis), s.opening))
            .collect::<pnc_core::Result<Vec<_>>>()
            .map_err(|e| bad(e.to_string()))?;
        PncModel::new(stages, kind).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FastModelFile {
    pub model: ModelFile,
    pub mean_direction: Vec<f64>,
    /// One principal direction per inner list.
    pub directions: Vec<Vec<f64>>,
    pub p: usize,
}

impl From<&FastPncModel> for FastModelFile {
    fn from(m: &FastPncModel) -> Self {
        FastModelFile {
            model: ModelFile::from(&m.inner),
            mean_direction: m.pca.mean_direction().iter().copied().collect(),
            directions: m.pca.directions().column_iter().map(|c| c.iter().copied().collect()).collect(),
            p: m.pca.p(),
        }
    }
}

impl FastModelFile {
    pub fn to_model(&self) -> Result<FastPncModel> {
        let bad = |msg: String| CliError::Input(format!("invalid fast model: {msg}"));
        let inner = self.model.to_model()?;
        let dim = self.mean_direction.len();
        if self.directions.len() != self.p || self.directions.iter().any(|d| d.len() != dim) {
            return Err(bad(format!("expected {} directions of length {dim}", self.p)));
        }
        if inner.ambient_dim() != self.p + 1 {
            return Err(bad(format!(
                "inner model has dimension {}, expected p + 1 = {}",
                inner.ambient_dim(),
                self.p + 1
            )));
        }
        let flat: Vec<f64> = self.directions.iter().flatten().copied().collect();
        let pca = PcaTransform::new(Vector::from_vec(self.mean_direction.clone()), Matrix::from_vec(dim, self.p, flat))
            .map_err(|e| bad(e.to_string()))?;
        Ok(FastPncModel { pca, inner })
    }
}

/// Either kind of fitted model, as loaded from disk.
#[derive(Debug, Clone)]
pub enum SavedModel {
    Plain(PncModel),
    Fast(FastPncModel),
}

impl SavedModel {
    pub fn inner(&self) -> &PncModel {
        match self {
            SavedModel::Plain(m) => m,
            SavedModel::Fast(f) => &f.inner,
        }
    }
}

pub fn load_model(path: &Path) -> Result<SavedModel> {
    let value: serde_json::Value = read_json(path)?;
    let parse_err = |e: serde_json::Error| io_error(path, e);
    if value.get("mean_direction").is_some() {
        let file: FastModelFile = serde_json::from_value(value).map_err(parse_err)?;
        Ok(SavedModel::Fast(file.to_model()?))
    } else {
        let file: ModelFile = serde_json::from_value(value).map_err(parse_err)?;
        Ok(SavedModel::Plain(file.to_model()?))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LawFile {
    pub sd: f64,
    #[serde(default)]
    pub sd_per_size: f64,
    pub bound: f64,
    #[serde(default)]
    pub bound_per_size: f64,
}

/// Generator description: the model, a uniform size range, one residual law
/// per score column (final stage first), the sample count and the seed.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratorFile {
    pub model: ModelFile,
    pub size_range: [f64; 2],
    pub residual_laws: Vec<LawFile>,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl From<&GeneratorSpec> for GeneratorFile {
    fn from(s: &GeneratorSpec) -> Self {
        GeneratorFile {
            model: ModelFile::from(&s.model),
            size_range: s.size_range,
            residual_laws: s
                .residual_laws
                .iter()
                .map(|l| LawFile {
                    sd: l.sd,
                    sd_per_size: l.sd_per_size,
                    bound: l.bound,
                    bound_per_size: l.bound_per_size,
                })
                .collect(),
            n: s.n,
            seed: s.seed,
        }
    }
}

impl GeneratorFile {
    pub fn to_spec(&self) -> Result<GeneratorSpec> {
        Ok(GeneratorSpec {
            model: self.model.to_model()?,
            size_range: self.size_range,
            residual_laws: self
                .residual_laws
                .iter()
                .map(|l| ResidualLaw {
                    sd: l.sd,
                    sd_per_size: l.sd_per_size,
                    bound: l.bound,
                    bound_per_size: l.bound_per_size,
                })
                .collect(),
            n: self.n,
            seed: self.seed,
        })
    }
}

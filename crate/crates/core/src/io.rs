//! Wide-format panel files, JSON sidecars and report writers.
//!
//! A panel file is UTF-8 CSV with one row per unit. The header holds an
//! arbitrary first label followed by the period labels; each data row holds
//! the unit id followed by one finite number per period. Missing cells are
//! rejected, not imputed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dgp_mc::McReport;
use crate::error::PupError;
use crate::manifest::RunManifest;
use crate::panel_impute::{CorrectionSpec, PanelDataset};

/// Diagnostics for file input and output. Rows and columns are 1-based
/// file coordinates, the header being row 1.
#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("{path}: malformed CSV: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("{path}: file has no data rows")]
    Empty { path: PathBuf },

    #[error("{path}: row {row} has {got} fields, expected {expected}")]
    RaggedRow { path: PathBuf, row: usize, expected: usize, got: usize },

    #[error("{path}: blank cell at row {row}, column {col}")]
    BlankCell { path: PathBuf, row: usize, col: usize },

    #[error("{path}: non-numeric cell '{value}' at row {row}, column {col}")]
    NonNumeric { path: PathBuf, row: usize, col: usize, value: String },

    #[error("{path}: non-finite cell at row {row}, column {col}")]
    NonFiniteCell { path: PathBuf, row: usize, col: usize },

    #[error("duplicate unit id '{0}'")]
    DuplicateUnit(String),

    #[error("unknown treated unit '{0}'")]
    UnknownUnit(String),

    #[error("t0 = {t0} out of range; need 1 <= t0 < {periods}")]
    T0OutOfRange { t0: usize, periods: usize },

    #[error("{path}: invalid config: {message}")]
    Config { path: PathBuf, message: String },

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Model(#[from] PupError),
}

pub type IoResult<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_path_buf(), source }
}

/// Contents of a panel file before any treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct WidePanel {
    pub units: Vec<String>,
    pub periods: Vec<String>,
    pub values: DMatrix<f64>,
}

impl WidePanel {
    pub fn unit_index(&self, id: &str) -> Option<usize> {
        self.units.iter().position(|u| u == id)
    }

    /// Reorders the treated units to the front, keeping file order within
    /// each group.
    pub fn into_dataset(self, treated: &[String], t0: usize) -> IoResult<PanelDataset> {
        let mut order = Vec::with_capacity(self.units.len());
        for id in treated {
            let i = self.unit_index(id).ok_or_else(|| IoError::UnknownUnit(id.clone()))?;
            if order.contains(&i) {
                return Err(IoError::DuplicateUnit(id.clone()));
            }
            order.push(i);
        }
        let controls: Vec<usize> = (0..self.units.len()).filter(|i| !order.contains(i)).collect();
        let n_treated = order.len();
        order.extend(controls);
        let periods = self.periods.len();
        if t0 == 0 || t0 >= periods {
            return Err(IoError::T0OutOfRange { t0, periods });
        }
        let y = DMatrix::from_fn(order.len(), periods, |r, c| self.values[(order[r], c)]);
        let units = order.iter().map(|&i| self.units[i].clone()).collect();
        Ok(PanelDataset::with_labels(y, n_treated, t0, units, self.periods)?)
    }
}

/// Reads a wide-format panel file.
pub fn read_wide_csv(path: &Path) -> IoResult<WidePanel> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(file);
    let csv_err = |e: csv::Error| IoError::Csv { path: path.to_path_buf(), message: e.to_string() };

    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_err)?,
        None => return Err(IoError::Empty { path: path.to_path_buf() }),
    };
    let width = header.len();
    if width < 2 {
        return Err(IoError::Csv { path: path.to_path_buf(), message: "header needs at least one period".into() });
    }
    let periods: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();

    let mut units = Vec::new();
    let mut cells = Vec::new();
    for (k, rec) in records.enumerate() {
        let row = k + 2;
        let rec = rec.map_err(csv_err)?;
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(IoError::RaggedRow { path: path.to_path_buf(), row, expected: width, got: rec.len() });
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(IoError::BlankCell { path: path.to_path_buf(), row, col: 1 });
        }
        if units.iter().any(|u| u == id) {
            return Err(IoError::DuplicateUnit(id.to_string()));
        }
        units.push(id.to_string());
        for (c, raw) in rec.iter().enumerate().skip(1) {
            let col = c + 1;
            let s = raw.trim();
            if s.is_empty() {
                return Err(IoError::BlankCell { path: path.to_path_buf(), row, col });
            }
            let v: f64 = s.parse().map_err(|_| IoError::NonNumeric {
                path: path.to_path_buf(),
                row,
                col,
                value: s.to_string(),
            })?;
            if !v.is_finite() {
                return Err(IoError::NonFiniteCell { path: path.to_path_buf(), row, col });
            }
            cells.push(v);
        }
    }
    if units.is_empty() {
        return Err(IoError::Empty { path: path.to_path_buf() });
    }
    let values = DMatrix::from_row_slice(units.len(), periods.len(), &cells);
    Ok(WidePanel { units, periods, values })
}

/// Treatment assignment and model settings kept next to a panel file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub treated: Vec<String>,
    pub t0: usize,
    #[serde(default = "default_factors")]
    pub factors: usize,
    #[serde(default)]
    pub correction: CorrectionSpec,
}

fn default_factors() -> usize {
    2
}

pub fn read_panel_config(path: &Path) -> IoResult<PanelConfig> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| IoError::Config { path: path.to_path_buf(), message: e.to_string() })
}

/// Reads a panel file and assigns treatment; treated units come first in
/// the returned dataset, in the order given.
pub fn load_panel(path: &Path, treated: &[String], t0: usize) -> IoResult<PanelDataset> {
    read_wide_csv(path)?.into_dataset(treated, t0)
}

/// Writes a panel in the wide layout. Values use the shortest decimal form
/// that parses back to the same double.
pub fn write_panel(panel: &PanelDataset, path: &Path) -> IoResult<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| IoError::Csv { path: path.to_path_buf(), message: e.to_string() };
    let mut header = vec!["unit".to_string()];
    header.extend(panel.periods().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let y = panel.outcomes();
    for (i, id) in panel.units().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(y.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// JSON for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

/// Seventeen significant digits, enough to recover every double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A scalar in a tabular report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => fmt_f64(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Named columns of cells plus the manifest of the run that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub manifest: RunManifest,
}

#[derive(Serialize)]
struct TableJson<'a> {
    manifest: &'a RunManifest,
    rows: Vec<serde_json::Map<String, serde_json::Value>>,
}

impl Table {
    pub fn new(columns: &[&str], manifest: RunManifest) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), manifest }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self, format: ReportFormat) -> IoResult<Vec<u8>> {
        match format {
            ReportFormat::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let err = |e: csv::Error| IoError::Csv { path: PathBuf::from("<table>"), message: e.to_string() };
                w.write_record(&self.columns).map_err(err)?;
                for row in &self.rows {
                    w.write_record(row.iter().map(Cell::to_csv)).map_err(err)?;
                }
                w.into_inner().map_err(|e| IoError::Csv { path: PathBuf::from("<table>"), message: e.to_string() })
            }
            ReportFormat::Json => {
                let rows = self
                    .rows
                    .iter()
                    .map(|row| {
                        self.columns
                            .iter()
                            .zip(row)
                            .map(|(c, v)| Ok((c.clone(), serde_json::to_value(v)?)))
                            .collect::<IoResult<serde_json::Map<_, _>>>()
                    })
                    .collect::<IoResult<Vec<_>>>()?;
                let mut out = serde_json::to_vec_pretty(&TableJson { manifest: &self.manifest, rows })?;
                out.push(b'\n');
                Ok(out)
            }
        }
    }
}

const REPORT_COLUMNS: [&str; 8] = ["method", "horizon", "bias", "mse", "coverage", "bias_se", "mse_se", "coverage_se"];

/// One row per method and horizon, each method closing with its `avg` row.
pub fn report_table(report: &McReport) -> Table {
    let mut t = Table::new(&REPORT_COLUMNS, report.manifest.clone());
    let mut methods: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    for m in methods {
        let mut rows: Vec<_> = report.rows.iter().filter(|r| r.method == m).collect();
        rows.sort_by_key(|r| r.horizon.unwrap_or(usize::MAX));
        for r in rows {
            t.push(vec![
                Cell::from(r.method.as_str()),
                Cell::from(r.label()),
                r.bias.into(),
                r.mse.into(),
                r.coverage.into(),
                r.bias_se.into(),
                r.mse_se.into(),
                r.coverage_se.into(),
            ]);
        }
    }
    t
}

/// CSV table or the full JSON report, including the manifest.
pub fn report_bytes(report: &McReport, format: ReportFormat) -> IoResult<Vec<u8>> {
    match format {
        ReportFormat::Csv => report_table(report).to_bytes(ReportFormat::Csv),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report)?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn write_report(report: &McReport, path: &Path, format: ReportFormat) -> IoResult<()> {
    write_bytes(path, &report_bytes(report, format)?)
}

pub fn read_report_json(path: &Path) -> IoResult<McReport> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> IoResult<()> {
    let mut f = File::create(path).map_err(io_err(path))?;
    f.write_all(bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_small_panel_and_reorders_treated() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "p.csv", "id,2001,2002,2003,2004\na,1,2,3,4\nb,5,6,7,8\nc,9,10,11,12\n");
        let panel = load_panel(&p, &["b".to_string()], 2).unwrap();
        assert_eq!((panel.n_units(), panel.n_periods()), (3, 4));
        assert_eq!(panel.units(), ["b", "a", "c"]);
        assert_eq!(panel.outcomes()[(0, 3)], 8.0);
        assert_eq!(panel.periods()[0], "2001");
    }

    #[test]
    fn diagnostics_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let blank = write_tmp(dir.path(), "b.csv", "id,1,2\na,1,\n");
        assert!(matches!(read_wide_csv(&blank), Err(IoError::BlankCell { row: 2, col: 3, .. })));
        let ragged = write_tmp(dir.path(), "r.csv", "id,1,2\na,1,2\nb,1\n");
        assert!(matches!(read_wide_csv(&ragged), Err(IoError::RaggedRow { row: 3, expected: 3, got: 2, .. })));
        let text = write_tmp(dir.path(), "n.csv", "id,1,2\na,1,x\n");
        assert!(matches!(read_wide_csv(&text), Err(IoError::NonNumeric { row: 2, col: 3, .. })));
        let ok = write_tmp(dir.path(), "ok.csv", "id,1,2,3\na,1,2,3\nb,1,2,3\n");
        assert!(matches!(load_panel(&ok, &["z".into()], 1), Err(IoError::UnknownUnit(_))));
        assert!(matches!(load_panel(&ok, &["a".into()], 3), Err(IoError::T0OutOfRange { t0: 3, periods: 3 })));
        let dup = write_tmp(dir.path(), "d.csv", "id,1\na,1\na,2\n");
        assert!(matches!(read_wide_csv(&dup), Err(IoError::DuplicateUnit(_))));
    }

    #[test]
    fn sidecar_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(dir.path(), "c.json", r#"{"treated": ["a"], "t0": 5, "correction": {"mode": "cs"}}"#);
        let cfg = read_panel_config(&p).unwrap();
        assert_eq!(cfg.factors, 2);
        assert_eq!(cfg.correction.ar_order, 1);
        let bad = write_tmp(dir.path(), "x.json", r#"{"treated": ["a"], "t0": 5, "lags": 2}"#);
        assert!(matches!(read_panel_config(&bad), Err(IoError::Config { .. })));
    }

    #[test]
    fn seventeen_digits_recover_the_double() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}

//! File formats. CSV column sets are fixed per file kind and checked on read;
//! JSON documents carry `schema_version` and `kind`. Floats are written in
//! shortest round-trip form, so every reader inverts its writer exactly.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use spinscramble::ddprobe::SweepCell;
use spinscramble::inversion::{AlphaSelection, DistributionAnalytics, PowerLawFit};

use crate::config::SCHEMA_VERSION;
use crate::error::{CliError, Result};

pub const SPECTRUM_COLUMNS: &[&str] = &["n", "k", "value"];
pub const PHASE_COLUMNS: &[&str] = &["n", "phi", "value"];
pub const SERIES_COLUMNS: &[&str] = &["n", "t", "loschmidt_echo", "second_moment"];
pub const DD_COLUMNS: &[&str] = &["cycle", "t", "signal", "clean", "cumulative_snr"];
pub const SWEEP_COLUMNS: &[&str] = &["tau", "theta", "a_fast", "t_fast", "a_slow", "t_slow", "n_star", "snr", "status"];
pub const DISTRIBUTION_COLUMNS: &[&str] = &["n", "s", "f"];
pub const GROWTH_COLUMNS: &[&str] = &["n", "t", "front_97", "width"];

/// Coherence weight of order `k` after `n` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    /// Defaults to 0 for single-spectrum files.
    #[serde(default)]
    pub n: usize,
    pub k: i32,
    pub value: f64,
}

/// Real part of the normalized echo at phase `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub n: usize,
    pub phi: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub n: usize,
    pub t: f64,
    pub loschmidt_echo: f64,
    /// `sum_k k^2 S_k` of the density spectrum.
    pub second_moment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DdRow {
    pub cycle: usize,
    pub t: f64,
    pub signal: f64,
    pub clean: f64,
    pub cumulative_snr: f64,
}

/// One sweep cell; fit columns are empty when the fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub theta: f64,
    pub a_fast: Option<f64>,
    pub t_fast: Option<f64>,
    pub a_slow: Option<f64>,
    pub t_slow: Option<f64>,
    pub n_star: usize,
    pub snr: f64,
    pub status: String,
}

impl From<&SweepCell> for SweepRow {
    fn from(c: &SweepCell) -> Self {
        let f = c.fit.as_ref();
        SweepRow {
            tau: c.tau,
            theta: c.theta,
            a_fast: f.map(|f| f.a_fast),
            t_fast: f.map(|f| f.t_fast),
            a_slow: f.map(|f| f.a_slow),
            t_slow: f.map(|f| f.t_slow),
            n_star: c.n_star,
            snr: c.snr,
            status: c.status.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub n: usize,
    pub s: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub n: usize,
    pub t: f64,
    pub front_97: f64,
    /// FWHM of the dominant population.
    pub width: f64,
}

/// Everything `simulate-mqc` produces, as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MqcOutput {
    pub phase_signals: Vec<PhaseRow>,
    pub spectrum_density: Vec<SpectrumRow>,
    pub spectrum_phases: Vec<SpectrumRow>,
    pub series: Vec<SeriesRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdOutput {
    pub series: Vec<DdRow>,
    pub cell: SweepCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub cells: Vec<SweepCell>,
}

/// Inversion of one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InversionEntry {
    pub n: usize,
    pub alpha: Option<f64>,
    pub selection: Option<AlphaSelection>,
    pub residual_norm: Option<f64>,
    /// `sum_k k^2 S_k` over the full spectrum implied by the input.
    pub data_second_moment: f64,
    pub mixture_second_moment: Option<f64>,
    pub analytics: Option<DistributionAnalytics>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub source: String,
    pub entries: Vec<InversionEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionOutput {
    pub rows: Vec<DistributionRow>,
    pub report: AnalyticsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub points: Vec<GrowthPoint>,
    pub front: PowerLawFit,
    pub width: Option<PowerLawFit>,
    /// Why the width fit was skipped.
    pub width_error: Option<String>,
}

pub fn sweep_rows(cells: &[SweepCell]) -> Vec<SweepRow> {
    cells.iter().map(SweepRow::from).collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T], columns: &[&str]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    let fail = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    w.write_record(columns).map_err(fail)?;
    for row in rows {
        w.serialize(row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads rows after checking the header: every column must be known and
/// every column not listed in `optional` must be present.
pub fn read_csv<T: DeserializeOwned>(path: &Path, columns: &[&str], optional: &[&str]) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(file);
    let headers = r.headers().map_err(|e| CliError::schema(path, e.to_string()))?.clone();
    for h in headers.iter() {
        if !columns.contains(&h) {
            return Err(CliError::schema(path, format!("unknown column `{h}`; expected {}", columns.join(","))));
        }
    }
    for c in columns {
        if !optional.contains(c) && !headers.iter().any(|h| h == *c) {
            return Err(CliError::schema(path, format!("missing column `{c}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        // header is line 1
        rows.push(rec.map_err(|e: csv::Error| CliError::schema(path, format!("line {}: {e}", i + 2)))?);
    }
    Ok(rows)
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u32,
    kind: &'a str,
    data: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    schema_version: u32,
    kind: String,
    data: T,
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, data: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&EnvelopeOut { schema_version: SCHEMA_VERSION, kind, data })
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: EnvelopeIn<T> = serde_json::from_str(&text).map_err(|e| CliError::schema(path, e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CliError::schema(path, format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", doc.schema_version)));
    }
    if doc.kind != kind {
        return Err(CliError::schema(path, format!("document kind `{}`, expected `{kind}`", doc.kind)));
    }
    Ok(doc.data)
}

pub fn write_spectrum_csv(path: &Path, rows: &[SpectrumRow]) -> Result<()> {
    write_csv(path, rows, SPECTRUM_COLUMNS)
}

/// Spectrum rows; `n` may be omitted for a single measured spectrum.
pub fn read_spectrum_csv(path: &Path) -> Result<Vec<SpectrumRow>> {
    let rows: Vec<SpectrumRow> = read_csv(path, SPECTRUM_COLUMNS, &["n"])?;
    for (i, r) in rows.iter().enumerate() {
        if !r.value.is_finite() {
            return Err(CliError::schema(path, format!("line {}: non-finite value", i + 2)));
        }
    }
    Ok(rows)
}

/// Groups spectrum rows by `n`, keeping the file order within each group.
pub fn group_by_n(rows: &[SpectrumRow]) -> BTreeMap<usize, Vec<(i32, f64)>> {
    let mut out: BTreeMap<usize, Vec<(i32, f64)>> = BTreeMap::new();
    for r in rows {
        out.entry(r.n).or_default().push((r.k, r.value));
    }
    out
}

pub fn write_phase_csv(path: &Path, rows: &[PhaseRow]) -> Result<()> {
    write_csv(path, rows, PHASE_COLUMNS)
}

pub fn read_phase_csv(path: &Path) -> Result<Vec<PhaseRow>> {
    read_csv(path, PHASE_COLUMNS, &[])
}

pub fn write_series_csv(path: &Path, rows: &[SeriesRow]) -> Result<()> {
    write_csv(path, rows, SERIES_COLUMNS)
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    read_csv(path, SERIES_COLUMNS, &[])
}

pub fn write_dd_csv(path: &Path, rows: &[DdRow]) -> Result<()> {
    write_csv(path, rows, DD_COLUMNS)
}

pub fn read_dd_csv(path: &Path) -> Result<Vec<DdRow>> {
    read_csv(path, DD_COLUMNS, &[])
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    write_csv(path, rows, SWEEP_COLUMNS)
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    read_csv(path, SWEEP_COLUMNS, &[])
}

pub fn write_distribution_csv(path: &Path, rows: &[DistributionRow]) -> Result<()> {
    write_csv(path, rows, DISTRIBUTION_COLUMNS)
}

pub fn read_distribution_csv(path: &Path) -> Result<Vec<DistributionRow>> {
    read_csv(path, DISTRIBUTION_COLUMNS, &[])
}

pub fn write_growth_csv(path: &Path, rows: &[GrowthPoint]) -> Result<()> {
    write_csv(path, rows, GROWTH_COLUMNS)
}

pub fn read_growth_csv(path: &Path) -> Result<Vec<GrowthPoint>> {
    read_csv(path, GROWTH_COLUMNS, &[])
}

/// Analytics report from `invert`, either bare or bundled with the
/// distribution rows in json format.
pub fn read_analytics(path: &Path) -> Result<AnalyticsReport> {
    read_json::<AnalyticsReport>(path, "analytics")
        .or_else(|first| read_json::<DistributionOutput>(path, "distribution").map(|d| d.report).map_err(|_| first))
}

const LOCK_NAME: &str = ".spinscramble.lock";

/// Exclusive claim on an output directory for the lifetime of the guard.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<OutputLock> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Runtime(format!(
                "output directory {} is in use by another run (delete {} if that run is gone)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

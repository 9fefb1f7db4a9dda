//! Canonical CSV format for datasets and report tables.
//!
//! Files are UTF-8 with LF line endings. An optional leading `#` line carries
//! provenance (config hash and seed) and is ignored by the loader. Missing
//! climate cells are empty fields. Floats are written with six significant
//! digits.

mod synth;

pub use synth::{generate_synthetic, DatasetSummary, SynthConfig};

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::domain::{
    validate_observation, ClimateVar, Dataset, LocationKey, LocationSeries, Observation, Severity,
};
use crate::error::{Error, Result};

pub const DATASET_HEADER: [&str; 13] = [
    "lat",
    "lon",
    "year",
    "permafrost_fraction",
    "temperature",
    "precipitation",
    "radiation_allsky",
    "radiation_clearsky",
    "humidity",
    "dewpoint",
    "wind2m",
    "wind10m",
    "pressure",
];

/// Renders a float with six significant digits in the shortest plain form.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    Text(String),
    Bool(bool),
    Missing,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_sig6(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => u8::from(*b).to_string(),
            Cell::Missing => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Float)
    }
}

impl From<i32> for Cell {
    fn from(v: i32) -> Self {
        Cell::Int(i64::from(v))
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

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

/// A header plus rows of cells, written with a stable column order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Optional `# ...` first line.
    pub provenance: Option<String>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
            provenance: None,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn with_provenance(mut self, line: impl Into<String>) -> Self {
        self.provenance = Some(line.into());
        self
    }
}

/// Writes a table as canonical CSV. An empty row list produces a header-only file.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if let Some(p) = &table.provenance {
        writeln!(out, "# {p}").map_err(io)?;
    }
    writeln!(out, "{}", table.header.join(",")).map_err(io)?;
    let mut line = String::new();
    for row in &table.rows {
        line.clear();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&cell.render());
        }
        line.push('\n');
        out.write_all(line.as_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a report CSV written by [`write_table`], checking the header.
pub fn read_records(path: &Path, expected_header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let malformed = |message: String| Error::Malformed {
        path: path.to_path_buf(),
        message,
    };
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != expected_header {
        return Err(malformed(format!(
            "expected header '{}', found '{}'",
            expected_header.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .records()
        .map(|r| r.map_err(|e| malformed(e.to_string())))
        .collect()
}

/// Parses field `i` of a record as a float.
pub fn record_f64(path: &Path, record: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let line = record.position().map_or(0, |p| p.line());
    parse_field(path, line, name, &record[i])?.ok_or_else(|| Error::Malformed {
        path: path.to_path_buf(),
        message: format!("line {line}: {name} is required"),
    })
}

pub fn dataset_table(dataset: &Dataset) -> Table {
    let mut table = Table::new(&DATASET_HEADER);
    table.rows.reserve(dataset.n_observations());
    for obs in dataset.observations() {
        let mut row = Vec::with_capacity(DATASET_HEADER.len());
        row.push(Cell::Float(obs.location.lat));
        row.push(Cell::Float(obs.location.lon));
        row.push(Cell::from(obs.year));
        row.push(Cell::Float(obs.permafrost_fraction));
        row.extend(obs.climate.iter().map(|c| Cell::from(*c)));
        table.push(row);
    }
    table
}

pub fn write_dataset(path: &Path, dataset: &Dataset, provenance: Option<&str>) -> Result<()> {
    let mut table = dataset_table(dataset);
    table.provenance = provenance.map(str::to_string);
    write_table(path, &table)
}

/// What the loader did besides building the dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub rows_read: usize,
    /// Rows discarded in lenient mode (including the rest of an affected location).
    pub dropped_rows: usize,
    pub dropped_locations: usize,
    /// Rows carrying observed-range warnings (kept).
    pub warning_rows: usize,
    pub missing_cells: usize,
}

fn parse_field(path: &Path, line: u64, name: &str, raw: &str) -> Result<Option<f64>> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| Error::Malformed {
        path: path.to_path_buf(),
        message: format!("line {line}: cannot parse {name} value '{raw}'"),
    })
}

/// Loads a canonical CSV file into a grid-complete [`Dataset`].
///
/// Rows with hard-bound violations abort the load when `strict`; otherwise the
/// offending location is dropped whole so the year grid stays complete.
pub fn load_dataset(path: &Path, strict: bool) -> Result<(Dataset, LoadStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(file);
    let malformed = |message: String| Error::Malformed {
        path: path.to_path_buf(),
        message,
    };

    let header = reader
        .headers()
        .map_err(|e| malformed(format!("cannot read header: {e}")))?
        .clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != DATASET_HEADER {
        return Err(malformed(format!(
            "expected header '{}', found '{}'",
            DATASET_HEADER.join(","),
            got.join(",")
        )));
    }

    let mut stats = LoadStats::default();
    let mut order: Vec<LocationKey> = Vec::new();
    let mut groups: HashMap<LocationKey, Vec<Observation>> = HashMap::new();
    let mut rejected: HashMap<LocationKey, usize> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != DATASET_HEADER.len() {
            return Err(malformed(format!(
                "line {line}: expected {} fields, found {}",
                DATASET_HEADER.len(),
                record.len()
            )));
        }
        stats.rows_read += 1;
        let required = |i: usize| -> Result<f64> {
            parse_field(path, line, DATASET_HEADER[i], &record[i])?
                .ok_or_else(|| malformed(format!("line {line}: {} is required", DATASET_HEADER[i])))
        };
        let lat = required(0)?;
        let lon = required(1)?;
        let year_raw = record[2].trim();
        let year: i32 = year_raw
            .parse()
            .map_err(|_| malformed(format!("line {line}: bad year '{year_raw}'")))?;
        let pf = required(3)?;
        let mut climate = [None; 9];
        for var in ClimateVar::ALL {
            let col = 4 + var.index();
            climate[var.index()] = parse_field(path, line, DATASET_HEADER[col], &record[col])?;
        }
        let obs = Observation {
            location: LocationKey::new(lat, lon),
            year,
            permafrost_fraction: pf,
            climate,
        };

        let violations = validate_observation(&obs);
        let errors: Vec<String> = violations
            .iter()
            .filter(|v| v.severity == Severity::Error)
            .map(ToString::to_string)
            .collect();
        if !errors.is_empty() {
            if strict {
                return Err(Error::InvalidObservation(format!(
                    "line {line}: {}",
                    errors.join("; ")
                )));
            }
            *rejected.entry(obs.location).or_default() += 1;
            continue;
        }
        if !violations.is_empty() {
            stats.warning_rows += 1;
        }
        stats.missing_cells += obs.missing_count();
        let key = obs.location;
        groups
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(obs);
    }

    let mut locations = Vec::with_capacity(order.len());
    for key in order {
        let observations = groups.remove(&key).expect("grouped key");
        if rejected.contains_key(&key) {
            stats.dropped_rows += observations.len();
            stats.missing_cells -= observations.iter().map(Observation::missing_count).sum::<usize>();
            continue;
        }
        locations.push(LocationSeries { key, observations });
    }
    stats.dropped_rows += rejected.values().sum::<usize>();
    stats.dropped_locations = rejected.len();

    let dataset = Dataset::new(locations)?;
    Ok((dataset, stats))
}

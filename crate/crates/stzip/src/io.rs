//! File formats: observation and knot CSVs, configuration JSON, draw and
//! summary outputs, prediction surfaces, and the lattice specification
//! string. Parsers take raw bytes so they can be driven by anything,
//! writers format floats with 17 significant digits so files round-trip
//! bit-exactly.

use serde::{Deserialize, Serialize};

use crate::data::{Observation, PriorConfig, SurveyDataset};
use crate::error::{Result, StzipError};
use crate::kernel::KnotSet;

/// 17 significant digits: enough to reproduce any f64 exactly on re-read.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(field: &str, name: &str, row: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| StzipError::input_at(format!("{name} is not a number: {field:?}"), row))?;
    if !v.is_finite() {
        return Err(StzipError::input_at(format!("{name} must be finite, got {field:?}"), row));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// observation CSV: t,loc_x,loc_y,y,x1,...,xp
// ---------------------------------------------------------------------------

pub fn read_observations(bytes: &[u8]) -> Result<SurveyDataset> {
    SurveyDataset::new(read_observation_rows(bytes)?)
}

/// Rows of an observation CSV without dataset-level validation; a
/// header-only file yields an empty vector. Prediction grids reuse the
/// observation format (the count column is carried but ignored), so they
/// come through here.
pub fn read_observation_rows(bytes: &[u8]) -> Result<Vec<Observation>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| StzipError::input(format!("missing or unreadable header: {e}")))?
        .clone();
    let expected = ["t", "loc_x", "loc_y", "y"];
    if header.len() < 5 {
        return Err(StzipError::input(format!(
            "header must be t,loc_x,loc_y,y,x1,... with at least one covariate column, got {} columns",
            header.len()
        )));
    }
    for (got, want) in header.iter().zip(expected) {
        if got != want {
            return Err(StzipError::input(format!(
                "header must start with t,loc_x,loc_y,y; found {got:?} where {want:?} was expected"
            )));
        }
    }
    let p = header.len() - 4;

    let mut observations = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| StzipError::input_at(format!("unreadable row: {e}"), row))?;
        if record.len() != header.len() {
            return Err(StzipError::input_at(
                format!("expected {} fields, got {}", header.len(), record.len()),
                row,
            ));
        }
        let period: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| StzipError::input_at(format!("t must be a positive integer, got {:?}", &record[0]), row))?;
        if period == 0 {
            return Err(StzipError::input_at("t must be 1-based", row));
        }
        let loc_x = parse_float(&record[1], "loc_x", row)?;
        let loc_y = parse_float(&record[2], "loc_y", row)?;
        let count: u64 = record[3]
            .trim()
            .parse()
            .map_err(|_| StzipError::input_at(format!("y must be a non-negative integer, got {:?}", &record[3]), row))?;
        let mut covariates = Vec::with_capacity(p);
        for j in 0..p {
            covariates.push(parse_float(&record[4 + j], &format!("x{}", j + 1), row)?);
        }
        observations.push(Observation { period, location: [loc_x, loc_y], count, covariates });
    }
    Ok(observations)
}

pub fn write_observations(data: &SurveyDataset) -> String {
    let p = data.covariate_dim();
    let mut out = String::from("t,loc_x,loc_y,y");
    for j in 1..=p {
        out.push_str(&format!(",x{j}"));
    }
    out.push('\n');
    for o in data.observations() {
        out.push_str(&format!(
            "{},{},{},{}",
            o.period,
            fmt_float(o.location[0]),
            fmt_float(o.location[1]),
            o.count
        ));
        for x in &o.covariates {
            out.push(',');
            out.push_str(&fmt_float(*x));
        }
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// knots CSV: knot_x,knot_y
// ---------------------------------------------------------------------------

pub fn read_knots(bytes: &[u8]) -> Result<KnotSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| StzipError::input(format!("missing or unreadable header: {e}")))?
        .clone();
    if header.len() != 2 || &header[0] != "knot_x" || &header[1] != "knot_y" {
        return Err(StzipError::input("knot file header must be exactly knot_x,knot_y"));
    }
    let mut points = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| StzipError::input_at(format!("unreadable row: {e}"), row))?;
        if record.len() != 2 {
            return Err(StzipError::input_at(format!("expected 2 fields, got {}", record.len()), row));
        }
        points.push([
            parse_float(&record[0], "knot_x", row)?,
            parse_float(&record[1], "knot_y", row)?,
        ]);
    }
    KnotSet::from_points(points)
}

pub fn write_knots(knots: &KnotSet) -> String {
    let mut out = String::from("knot_x,knot_y\n");
    for p in knots.points() {
        out.push_str(&format!("{},{}\n", fmt_float(p[0]), fmt_float(p[1])));
    }
    out
}

// ---------------------------------------------------------------------------
// configuration JSON
// ---------------------------------------------------------------------------

pub fn read_config(bytes: &[u8]) -> Result<PriorConfig> {
    let config: PriorConfig = serde_json::from_slice(bytes)?;
    config.validate()?;
    Ok(config)
}

// ---------------------------------------------------------------------------
// generic named-column CSV (posterior draws)
// ---------------------------------------------------------------------------

/// A rectangular block of named float columns.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedColumns {
    pub names: Vec<String>,
    /// Column-major storage; all columns share one length.
    pub columns: Vec<Vec<f64>>,
}

impl NamedColumns {
    pub fn new(names: Vec<String>) -> Self {
        let columns = vec![Vec::new(); names.len()];
        NamedColumns { names, columns }
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        for (col, v) in self.columns.iter_mut().zip(row) {
            col.push(*v);
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    /// All columns whose names are `prefix_0`, `prefix_1`, ... in index order.
    pub fn column_group(&self, prefix: &str) -> Vec<&[f64]> {
        let mut found = Vec::new();
        loop {
            match self.column(&format!("{prefix}_{}", found.len())) {
                Some(c) => found.push(c),
                None => break,
            }
        }
        found
    }
}

pub fn write_named_csv(block: &NamedColumns) -> String {
    let mut out = block.names.join(",");
    out.push('\n');
    for r in 0..block.rows() {
        for (c, col) in block.columns.iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&fmt_float(col[r]));
        }
        out.push('\n');
    }
    out
}

pub fn read_named_csv(bytes: &[u8]) -> Result<NamedColumns> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| StzipError::input(format!("missing or unreadable header: {e}")))?;
    let names: Vec<String> = header.iter().map(str::to_owned).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(StzipError::input("column names must be non-empty"));
    }
    // The writer never quotes, so names that would need quoting are not
    // representable; refuse them up front to keep the format canonical.
    if names.iter().any(|n| n.contains([',', '"', '\n', '\r'])) {
        return Err(StzipError::input(
            "column names must not contain commas, quotes, or line breaks",
        ));
    }
    let mut block = NamedColumns::new(names);
    let width = block.names.len();
    let mut row_buf = vec![0.0; width];
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| StzipError::input_at(format!("unreadable row: {e}"), row))?;
        if record.len() != width {
            return Err(StzipError::input_at(format!("expected {width} fields, got {}", record.len()), row));
        }
        for (j, field) in record.iter().enumerate() {
            row_buf[j] = parse_float(field, &block.names[j], row)?;
        }
        block.push_row(&row_buf);
    }
    Ok(block)
}

// ---------------------------------------------------------------------------
// summary JSON
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub model: String,
    pub draw_count: usize,
    pub parameters: Vec<ParamSummary>,
}

pub fn write_summary(summary: &FitSummary) -> Result<String> {
    Ok(serde_json::to_string_pretty(summary)?)
}

pub fn read_summary(bytes: &[u8]) -> Result<FitSummary> {
    Ok(serde_json::from_slice(bytes)?)
}

// ---------------------------------------------------------------------------
// prediction surface CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceRow {
    pub loc_x: f64,
    pub loc_y: f64,
    pub date_index: usize,
    pub mean_count: f64,
    pub p_zero: f64,
    pub q025_count: f64,
    pub q975_count: f64,
}

pub const SURFACE_HEADER: &str = "loc_x,loc_y,date_index,mean_count,p_zero,q025_count,q975_count";

pub fn write_surface(rows: &[SurfaceRow]) -> String {
    let mut out = String::from(SURFACE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_float(r.loc_x),
            fmt_float(r.loc_y),
            r.date_index,
            fmt_float(r.mean_count),
            fmt_float(r.p_zero),
            fmt_float(r.q025_count),
            fmt_float(r.q975_count)
        ));
    }
    out
}

pub fn read_surface(bytes: &[u8]) -> Result<Vec<SurfaceRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader
        .headers()
        .map_err(|e| StzipError::input(format!("missing or unreadable header: {e}")))?;
    let expected: Vec<&str> = SURFACE_HEADER.split(',').collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(StzipError::input(format!("surface header must be {SURFACE_HEADER}")));
    }
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| StzipError::input_at(format!("unreadable row: {e}"), row))?;
        if record.len() != 7 {
            return Err(StzipError::input_at(format!("expected 7 fields, got {}", record.len()), row));
        }
        let date_index: usize = record[2]
            .trim()
            .parse()
            .map_err(|_| StzipError::input_at(format!("date_index must be an integer, got {:?}", &record[2]), row))?;
        rows.push(SurfaceRow {
            loc_x: parse_float(&record[0], "loc_x", row)?,
            loc_y: parse_float(&record[1], "loc_y", row)?,
            date_index,
            mean_count: parse_float(&record[3], "mean_count", row)?,
            p_zero: parse_float(&record[4], "p_zero", row)?,
            q025_count: parse_float(&record[5], "q025_count", row)?,
            q975_count: parse_float(&record[6], "q975_count", row)?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// lattice specification: "x0:x1:y0:y1:res"
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
    pub resolution: f64,
}

pub fn parse_lattice_spec(spec: &str) -> Result<LatticeSpec> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 5 {
        return Err(StzipError::input(format!(
            "lattice spec must be x0:x1:y0:y1:res, got {} parts",
            parts.len()
        )));
    }
    let mut vals = [0.0f64; 5];
    for (i, part) in parts.iter().enumerate() {
        vals[i] = part
            .trim()
            .parse()
            .map_err(|_| StzipError::input(format!("lattice component {:?} is not a number", part)))?;
        if !vals[i].is_finite() {
            return Err(StzipError::input("lattice components must be finite"));
        }
    }
    let [x0, x1, y0, y1, resolution] = vals;
    if x1 < x0 || y1 < y0 {
        return Err(StzipError::input("lattice bounds must satisfy x0 <= x1 and y0 <= y1"));
    }
    if !(resolution > 0.0) {
        return Err(StzipError::input("lattice resolution must be positive"));
    }
    let cells = ((x1 - x0) / resolution + 1.0) * ((y1 - y0) / resolution + 1.0);
    if !(cells <= 4e6) {
        return Err(StzipError::input(format!(
            "lattice would contain about {cells:.0} points; refusing more than 4000000"
        )));
    }
    Ok(LatticeSpec { x0, x1, y0, y1, resolution })
}

impl LatticeSpec {
    /// Grid points in row-major order (y outer, x inner), endpoints included
    /// when they land within half a step of the bound.
    pub fn points(&self) -> Vec<[f64; 2]> {
        let nx = ((self.x1 - self.x0) / self.resolution + 0.5).floor() as usize + 1;
        let ny = ((self.y1 - self.y0) / self.resolution + 0.5).floor() as usize + 1;
        let mut pts = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                pts.push([
                    self.x0 + ix as f64 * self.resolution,
                    self.y0 + iy as f64 * self.resolution,
                ]);
            }
        }
        pts
    }
}

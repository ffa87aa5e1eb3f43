//! Footprint records, the virtual cordon crop, and CSV ingestion.
//!
//! Positions are one-dimensional distances along the segment axis. A record
//! belongs to a cordon when `start < position <= start + length`, so
//! adjacent cordons never share a record.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{require_positive, Error, Result};

/// One recorded probe point. No probe identifier is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FootprintRecord {
    pub position: f64,
    pub speed: f64,
    pub label: Option<String>,
}

impl FootprintRecord {
    pub fn new(position: f64, speed: f64) -> Self {
        Self { position, speed, label: None }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CordonSpec {
    pub start: f64,
    pub length: f64,
    pub label_filter: Option<String>,
}

impl CordonSpec {
    pub fn new(start: f64, length: f64) -> Result<Self> {
        if !start.is_finite() {
            return Err(Error::param("start", format!("must be finite, got {start}")));
        }
        require_positive("length", length)?;
        Ok(Self { start, length, label_filter: None })
    }

    pub fn with_label_filter(mut self, label: impl Into<String>) -> Self {
        self.label_filter = Some(label.into());
        self
    }

    pub fn contains(&self, record: &FootprintRecord) -> bool {
        let inside = record.position > self.start && record.position <= self.start + self.length;
        let label_ok = match &self.label_filter {
            None => true,
            Some(want) => record.label.as_deref() == Some(want.as_str()),
        };
        inside && label_ok
    }
}

/// Speeds captured inside one cordon over one observation window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CordonSample {
    speeds: Vec<f64>,
    d: f64,
    t: f64,
}

impl CordonSample {
    pub fn new(speeds: Vec<f64>, d: f64, t: f64) -> Result<Self> {
        require_positive("d", d)?;
        require_positive("t", t)?;
        if let Some(bad) = speeds.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::param("speeds", format!("every speed must be finite and > 0, got {bad}")));
        }
        Ok(Self { speeds, d, t })
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn n(&self) -> usize {
        self.speeds.len()
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn t(&self) -> f64 {
        self.t
    }
}

/// Result of a crop: the sample plus how many in-cordon records were
/// discarded for carrying a non-positive or non-finite speed.
#[derive(Debug, Clone, PartialEq)]
pub struct CropOutcome {
    pub sample: CordonSample,
    pub dropped_bad_speed: usize,
}

/// Records inside the cordon, in input order.
pub fn crop_records(records: &[FootprintRecord], cordon: &CordonSpec) -> Vec<FootprintRecord> {
    records.iter().filter(|r| cordon.contains(r)).cloned().collect()
}

pub fn crop_to_cordon(records: &[FootprintRecord], cordon: &CordonSpec, t: f64) -> Result<CropOutcome> {
    require_positive("t", t)?;
    require_positive("length", cordon.length)?;
    let mut speeds = Vec::new();
    let mut dropped = 0;
    for r in records.iter().filter(|r| cordon.contains(r)) {
        if r.speed.is_finite() && r.speed > 0.0 {
            speeds.push(r.speed);
        } else {
            dropped += 1;
        }
    }
    Ok(CropOutcome { sample: CordonSample::new(speeds, cordon.length, t)?, dropped_bad_speed: dropped })
}

/// A row that could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct FootprintTable {
    pub records: Vec<FootprintRecord>,
    pub issues: Vec<RowIssue>,
}

/// Reads `position_m,speed_mps[,label]` rows. Unparseable rows are recorded
/// in `issues` and skipped, or fail the read when `strict` is set.
pub fn read_footprints<R: Read>(reader: R, source: &str, strict: bool) -> Result<FootprintTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let (Some(pos_col), Some(speed_col)) = (column("position_m"), column("speed_mps")) else {
        return Err(Error::Parse {
            path: source.to_string(),
            line: 1,
            message: "header must contain `position_m` and `speed_mps`".into(),
        });
    };
    let label_col = column("label");

    let mut table = FootprintTable::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, pos_col, speed_col, label_col) {
            Ok(rec) => table.records.push(rec),
            Err(message) if strict => {
                return Err(Error::Parse { path: source.to_string(), line, message });
            }
            Err(message) => table.issues.push(RowIssue { line, message }),
        }
    }
    Ok(table)
}

fn parse_row(
    row: &csv::StringRecord,
    pos_col: usize,
    speed_col: usize,
    label_col: Option<usize>,
) -> std::result::Result<FootprintRecord, String> {
    let field = |i: usize, name: &str| row.get(i).ok_or_else(|| format!("missing `{name}` field"));
    let position: f64 = field(pos_col, "position_m")?
        .parse()
        .map_err(|e| format!("bad position_m: {e}"))?;
    let speed: f64 = field(speed_col, "speed_mps")?.parse().map_err(|e| format!("bad speed_mps: {e}"))?;
    if !position.is_finite() {
        return Err(format!("position_m must be finite, got {position}"));
    }
    if speed.is_nan() {
        return Err("speed_mps is NaN".into());
    }
    let label = label_col.and_then(|i| row.get(i)).filter(|s| !s.is_empty()).map(str::to_string);
    Ok(FootprintRecord { position, speed, label })
}

pub fn read_footprints_file(path: impl AsRef<Path>, strict: bool) -> Result<FootprintTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_footprints(file, &path.display().to_string(), strict)
}

/// Writes records in the ingestion schema. Floats use shortest round-trip
/// formatting so re-reading reproduces every value exactly.
pub fn write_footprints<W: Write>(writer: W, records: &[FootprintRecord]) -> Result<()> {
    let with_label = records.iter().any(|r| r.label.is_some());
    let mut wtr = csv::Writer::from_writer(writer);
    if with_label {
        wtr.write_record(["position_m", "speed_mps", "label"])?;
    } else {
        wtr.write_record(["position_m", "speed_mps"])?;
    }
    for r in records {
        let pos = r.position.to_string();
        let speed = r.speed.to_string();
        if with_label {
            wtr.write_record([pos.as_str(), speed.as_str(), r.label.as_deref().unwrap_or("")])?;
        } else {
            wtr.write_record([pos.as_str(), speed.as_str()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<footprint writer>", e))?;
    Ok(())
}

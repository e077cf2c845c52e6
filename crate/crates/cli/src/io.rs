//! CSV persistence for series, tables and reports.
//!
//! Every file has a header row. Numbers are written in Rust's shortest
//! round-trip decimal form, which always uses `.` as the separator, so a
//! write followed by a read reproduces the values bit for bit.

use std::fs::File;
use std::path::Path;

use crate::error::CliError;

/// Named numeric columns of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    /// Build from named columns, which must all have the same length.
    pub fn from_columns(columns: &[(&str, &[f64])]) -> Result<Self, CliError> {
        let len = columns.first().map_or(0, |c| c.1.len());
        if let Some((name, c)) = columns.iter().find(|c| c.1.len() != len) {
            return Err(CliError::Metric(format!(
                "column {name} has {} values, expected {len}",
                c.len()
            )));
        }
        Ok(Self {
            columns: columns.iter().map(|c| c.0.to_string()).collect(),
            rows: (0..len).map(|i| columns.iter().map(|c| c.1[i]).collect()).collect(),
        })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

fn open_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Csv {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// Write a numeric table.
pub fn save_table_csv(path: &Path, table: &Table) -> Result<(), CliError> {
    let mut w = open_writer(path)?;
    w.write_record(&table.columns).map_err(|e| write_err(path, e))?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.to_string()))
            .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Write plot-ready curves, one column per named series.
pub fn save_plotdata_csv(path: &Path, curves: &[(&str, &[f64])]) -> Result<(), CliError> {
    save_table_csv(path, &Table::from_columns(curves)?)
}

/// Write `metric,value` pairs.
pub fn save_report_csv(path: &Path, entries: &[(String, String)]) -> Result<(), CliError> {
    let mut w = open_writer(path)?;
    w.write_record(["metric", "value"]).map_err(|e| write_err(path, e))?;
    for (k, v) in entries {
        w.write_record([k, v]).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Read a `metric,value` report.
pub fn load_report_csv(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut r = reader(path, &["metric", "value"])?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| write_err(path, e))?;
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn reader(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    if !expected.is_empty() {
        let found: Vec<String> = r
            .headers()
            .map_err(|e| write_err(path, e))?
            .iter()
            .map(str::to_string)
            .collect();
        if found != expected {
            return Err(CliError::Header {
                path: path.to_path_buf(),
                expected: expected.iter().map(|s| s.to_string()).collect(),
                found,
            });
        }
    }
    Ok(r)
}

/// Read a numeric table; when `expected` is non-empty the header must match
/// it exactly.
pub fn load_table_csv(path: &Path, expected: &[&str]) -> Result<Table, CliError> {
    let mut r = reader(path, expected)?;
    let columns: Vec<String> = r
        .headers()
        .map_err(|e| write_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| write_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != columns.len() {
            return Err(CliError::Csv {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", columns.len(), rec.len()),
            });
        }
        let row = rec
            .iter()
            .map(|field| {
                field.parse::<f64>().map_err(|_| CliError::Csv {
                    path: path.to_path_buf(),
                    line,
                    message: format!("not a number: {field:?}"),
                })
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// A sampled signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub time: Vec<f64>,
    pub value: Vec<f64>,
}

/// Read a `time,value` series.
pub fn load_series_csv(path: &Path) -> Result<Series, CliError> {
    let t = load_table_csv(path, &["time", "value"])?;
    Ok(Series {
        time: t.column("time").unwrap_or_default(),
        value: t.column("value").unwrap_or_default(),
    })
}

/// Read event times from a single-column `time` file.
pub fn load_events_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    Ok(load_table_csv(path, &["time"])?.column("time").unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scratch(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("warpski-io-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = scratch("rt");
        let path = dir.join("series.csv");
        let time = vec![0.0, 0.1, 1.0 / 3.0, 1e-300, -2.5e17];
        let value = vec![std::f64::consts::PI, -0.0, 7.0, f64::MIN_POSITIVE, 1.0 + f64::EPSILON];
        save_plotdata_csv(&path, &[("time", &time), ("value", &value)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let s = load_series_csv(&path).unwrap();
        assert_eq!(s.time.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), time.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(s.value.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), value.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        save_plotdata_csv(&path, &[("time", &s.time), ("value", &s.value)]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_series_csv(Path::new("/nonexistent/warpski/data.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/warpski/data.csv"));
    }

    #[test]
    fn header_mismatch_lists_expected_columns() {
        let dir = scratch("hdr");
        let path = dir.join("bad.csv");
        std::fs::write(&path, "t,v\n1,2\n").unwrap();
        let err = load_series_csv(&path).unwrap_err().to_string();
        assert!(err.contains("\"time\"") && err.contains("\"value\""), "{err}");
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = scratch("bad");
        let path = dir.join("bad.csv");
        std::fs::write(&path, "time,value\n1,2\n3,oops\n").unwrap();
        let err = load_series_csv(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        std::fs::write(&path, "time,value\n1,2\n3\n").unwrap();
        assert!(load_series_csv(&path).is_err());
    }

    #[test]
    fn report_round_trip() {
        let dir = scratch("report");
        let path = dir.join("report.csv");
        let entries = vec![("rmse".to_string(), "0.25".to_string()), ("kind".to_string(), "numeric2d".to_string())];
        save_report_csv(&path, &entries).unwrap();
        assert_eq!(load_report_csv(&path).unwrap(), entries);
    }
}

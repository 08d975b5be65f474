//! The trial CSV schema: `cluster,time,event,z1[,z2,...,zp]`.
//!
//! Comma-separated, decimal points, no quoting or thousands separators; the
//! event column is strictly `0` or `1`. Lines starting with `#` are
//! comments (the simulator writes one recording the generating scenario).
//! Errors carry 1-based physical line numbers.

use thiserror::Error;

use crate::data::{DataError, RawSubject, TrialData};

pub const EXPECTED_HEADER: &str = "cluster,time,event,z1[,z2,...,zp]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsvError {
    #[error("missing header; expected `{EXPECTED_HEADER}`")]
    MissingHeader,
    #[error("line {line}: bad header `{found}`; expected `{EXPECTED_HEADER}`")]
    BadHeader { line: usize, found: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    WrongFieldCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: column `{column}`: cannot parse `{token}` as a number")]
    BadNumber {
        line: usize,
        column: String,
        token: String,
    },
    #[error("line {line}: event must be `0` or `1`, got `{token}`")]
    BadEventToken { line: usize, token: String },
    #[error("line {line}: {source}")]
    Data { line: usize, source: DataError },
}

impl CsvError {
    /// The 1-based input line the error points at, when there is one.
    pub fn line(&self) -> Option<usize> {
        match self {
            CsvError::MissingHeader => None,
            CsvError::BadHeader { line, .. }
            | CsvError::WrongFieldCount { line, .. }
            | CsvError::BadNumber { line, .. }
            | CsvError::BadEventToken { line, .. }
            | CsvError::Data { line, .. } => Some(*line),
        }
    }
}

/// Parse a trial from CSV text.
pub fn parse_trial_csv(text: &str) -> Result<TrialData, CsvError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));

    let Some((header_line, header)) = lines.next() else {
        return Err(CsvError::MissingHeader);
    };
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let bad_header = || CsvError::BadHeader {
        line: header_line,
        found: header.to_string(),
    };
    if cols.len() < 4 || cols[0] != "cluster" || cols[1] != "time" || cols[2] != "event" {
        return Err(bad_header());
    }
    let p = cols.len() - 3;
    for (j, col) in cols[3..].iter().enumerate() {
        if *col != format!("z{}", j + 1) {
            return Err(bad_header());
        }
    }

    let mut records = Vec::new();
    let mut record_lines = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(CsvError::WrongFieldCount {
                line: line_no,
                expected: cols.len(),
                found: fields.len(),
            });
        }
        let parse = |column: &str, token: &str| -> Result<f64, CsvError> {
            let v: f64 = token.parse().map_err(|_| CsvError::BadNumber {
                line: line_no,
                column: column.to_string(),
                token: token.to_string(),
            })?;
            if v.is_nan() || v.is_infinite() {
                return Err(CsvError::BadNumber {
                    line: line_no,
                    column: column.to_string(),
                    token: token.to_string(),
                });
            }
            Ok(v)
        };
        let time = parse("time", fields[1])?;
        let event = match fields[2] {
            "0" => 0.0,
            "1" => 1.0,
            other => {
                return Err(CsvError::BadEventToken {
                    line: line_no,
                    token: other.to_string(),
                })
            }
        };
        let mut covariates = Vec::with_capacity(p);
        for (j, tok) in fields[3..].iter().enumerate() {
            covariates.push(parse(&format!("z{}", j + 1), tok)?);
        }
        records.push(RawSubject {
            cluster: fields[0].to_string(),
            time,
            event,
            covariates,
        });
        record_lines.push(line_no);
    }
    TrialData::from_records(&records).map_err(|e| {
        let line = match &e {
            DataError::NonPositiveTime { record, .. }
            | DataError::BadEventFlag { record, .. }
            | DataError::NonFiniteCovariate { record }
            | DataError::RaggedCovariates { record, .. } => record_lines[*record],
            _ => record_lines.last().copied().unwrap_or(header_line),
        };
        CsvError::Data { line, source: e }
    })
}

/// Serialize a trial to CSV; cluster ids are the 0-based cluster indices.
/// Floats use the shortest round-trip representation, so writing and
/// re-reading reproduces the data exactly.
pub fn trial_to_csv(data: &TrialData) -> String {
    let mut out = String::from("cluster,time,event");
    for j in 1..=data.p() {
        out.push_str(&format!(",z{j}"));
    }
    out.push('\n');
    for (i, s) in data.subjects() {
        out.push_str(&format!("{},{},{}", i, s.time(), u8::from(s.event())));
        for z in s.covariates().iter() {
            out.push_str(&format!(",{z}"));
        }
        out.push('\n');
    }
    out
}

/// As [`trial_to_csv`] with a leading `#` comment line.
pub fn trial_to_csv_with_comment(data: &TrialData, comment: &str) -> String {
    format!("# {comment}\n{}", trial_to_csv(data))
}

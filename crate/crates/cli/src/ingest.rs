use std::path::Path;

use cfdbal::estimators::Dataset;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::ColumnSpec;
use crate::error::{CliError, Result};

/// In-sample extremes used to map a column onto [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScaling {
    pub column: String,
    pub min: f64,
    pub max: f64,
}

impl ColumnScaling {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    pub covariates: Vec<String>,
    pub scaling: Vec<ColumnScaling>,
}

const MISSING: [&str; 6] = ["", "na", "nan", "null", "none", "."];

fn is_missing(field: &str) -> bool {
    let f = field.trim().to_ascii_lowercase();
    MISSING.contains(&f.as_str())
}

fn parse_real(column: &str, row: usize, field: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| CliError::Parse {
        column: column.into(),
        row,
        message: format!("'{field}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(CliError::Parse { column: column.into(), row, message: format!("'{field}' is not finite") });
    }
    Ok(v)
}

fn parse_binary(column: &str, row: usize, field: &str) -> Result<u8> {
    let v = parse_real(column, row, field)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(CliError::Parse { column: column.into(), row, message: format!("'{field}' is not 0 or 1") })
    }
}

/// Read the columns named in `spec` from a headed, comma-separated file.
///
/// Rows are numbered from 1 after the header. Continuous covariates are
/// min-max scaled with their in-sample extremes; every other covariate, the
/// treatment and the receipt column must hold only 0 and 1.
pub fn ingest_csv(path: &Path, spec: &ColumnSpec) -> Result<Ingested> {
    spec.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::Csv(format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| CliError::Csv(e.to_string()))?.clone();
    let index = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| CliError::MissingColumn(name.to_string()))
    };
    let yi = index(&spec.outcome)?;
    let zi = index(&spec.treatment)?;
    let ai = spec.receipt.as_deref().map(index).transpose()?;
    let xi: Vec<usize> = spec.covariates.iter().map(|c| index(c)).collect::<Result<_>>()?;
    let mut used = vec![yi, zi];
    used.extend(ai);
    used.extend(&xi);

    let mut records = Vec::new();
    let mut missing = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Csv(format!("row {}: {e}", r + 1)))?;
        if used.iter().any(|&c| rec.get(c).is_none_or(is_missing)) {
            missing.push(r + 1);
        }
        records.push(rec);
    }
    if !missing.is_empty() {
        return Err(CliError::MissingValues { rows: missing });
    }
    if records.is_empty() {
        return Err(CliError::Csv("no data rows".into()));
    }

    let n = records.len();
    let d = xi.len();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut a = ai.map(|_| Vec::with_capacity(n));
    let mut x = DMatrix::zeros(n, d);
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        y.push(parse_real(&spec.outcome, row, &rec[yi])?);
        z.push(parse_binary(&spec.treatment, row, &rec[zi])?);
        if let (Some(c), Some(a)) = (ai, a.as_mut()) {
            a.push(parse_binary(spec.receipt.as_deref().unwrap(), row, &rec[c])?);
        }
        for (j, (&c, name)) in xi.iter().zip(&spec.covariates).enumerate() {
            x[(r, j)] = if spec.continuous.contains(name) {
                parse_real(name, row, &rec[c])?
            } else {
                parse_binary(name, row, &rec[c])? as f64
            };
        }
    }

    let mut scaling = Vec::new();
    for (j, name) in spec.covariates.iter().enumerate() {
        if !spec.continuous.contains(name) {
            continue;
        }
        let col = x.column(j);
        let s = ColumnScaling { column: name.clone(), min: col.min(), max: col.max() };
        if s.max <= s.min {
            return Err(CliError::ZeroRange(name.clone()));
        }
        for r in 0..n {
            x[(r, j)] = s.apply(x[(r, j)]);
        }
        scaling.push(s);
    }
    let dataset = Dataset::new(y, z, a, x)?;
    Ok(Ingested { dataset, covariates: spec.covariates.clone(), scaling })
}

//! CSV ingestion: column roles, missing-row policy and dummy expansion.

use std::collections::BTreeSet;
use std::path::Path;

use manyiv_core::ndarray::{Array1, Array2};
use manyiv_core::Dataset;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Share of rows that must survive the missing-value filter.
pub const RETENTION_FLOOR: f64 = 0.9;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {0:?} not found in the header")]
    MissingColumn(String),
    #[error("no column matches {0:?}")]
    NoMatch(String),
    #[error("column {0:?} is assigned to more than one role")]
    DuplicateRole(String),
    #[error("--expand column {0:?} is not listed as an instrument or control")]
    ExpandWithoutRole(String),
    #[error("row {row}, column {column:?}: cannot parse {value:?} as a number")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("{kept} of {read} rows have no missing values, below the {floor:.0}% retention floor")]
    TooManyMissing {
        kept: usize,
        read: usize,
        floor: f64,
    },
    #[error("the file has no data rows")]
    Empty,
    #[error("no instruments: {0}")]
    NoInstruments(String),
    #[error("N = {n} does not exceed K_Z + K_W = {k} after expansion")]
    TooFewRows { n: usize, k: usize },
    #[error(transparent)]
    Data(#[from] manyiv_core::IvError),
}

/// Which columns play which part. Entries ending in `*` are prefixes.
#[derive(Debug, Clone)]
pub struct ColumnRoles {
    pub outcome: String,
    pub endogenous: String,
    pub instruments: Vec<String>,
    pub controls: Vec<String>,
    /// Categorical columns replaced by dummies with the first level dropped.
    pub expand: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expansion {
    pub column: String,
    pub levels: Vec<String>,
    pub reference: String,
    pub dummies: usize,
}

/// What was read and how it was mapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub path: String,
    pub outcome: String,
    pub endogenous: String,
    pub instruments: Vec<String>,
    pub controls: Vec<String>,
    pub rows_read: usize,
    pub rows_rejected: usize,
    pub expansions: Vec<Expansion>,
    pub n: usize,
    pub k_z: usize,
    pub k_w: usize,
}

#[derive(Debug)]
pub struct Loaded {
    pub data: Dataset,
    pub summary: DataSummary,
    pub warnings: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn resolve(
    header: &[String],
    patterns: &[String],
    optional: bool,
) -> Result<Vec<String>, IngestError> {
    let mut out: Vec<String> = Vec::new();
    for p in patterns {
        let found: Vec<&String> = match p.strip_suffix('*') {
            Some(prefix) => header.iter().filter(|h| h.starts_with(prefix)).collect(),
            None => header.iter().filter(|h| *h == p).collect(),
        };
        if found.is_empty() {
            if p.ends_with('*') {
                if optional {
                    continue;
                }
                return Err(IngestError::NoMatch(p.clone()));
            }
            return Err(IngestError::MissingColumn(p.clone()));
        }
        for f in found {
            if !out.contains(f) {
                out.push(f.clone());
            }
        }
    }
    Ok(out)
}

/// Sorts levels numerically when every level parses, else lexically.
fn sorted_levels(values: &[&str]) -> Vec<String> {
    let set: BTreeSet<&str> = values.iter().map(|v| v.trim()).collect();
    let mut levels: Vec<String> = set.into_iter().map(String::from).collect();
    let numeric: Option<Vec<f64>> = levels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut pairs: Vec<(f64, String)> = nums.into_iter().zip(levels).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        levels = pairs.into_iter().map(|p| p.1).collect();
    }
    levels
}

/// A role's columns after dummy expansion.
struct Block {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn build_block(
    cols: &[String],
    header: &[String],
    rows: &[Vec<String>],
    expand: &[String],
    expansions: &mut Vec<Expansion>,
) -> Result<Block, IngestError> {
    let mut block = Block {
        names: Vec::new(),
        columns: Vec::new(),
    };
    for name in cols {
        let idx = header
            .iter()
            .position(|h| h == name)
            .expect("resolved column");
        if expand.contains(name) {
            let cells: Vec<&str> = rows.iter().map(|r| r[idx].trim()).collect();
            let levels = sorted_levels(&cells);
            for level in &levels[1..] {
                block.names.push(format!("{name}={level}"));
                block.columns.push(
                    cells
                        .iter()
                        .map(|c| f64::from(u8::from(c == level)))
                        .collect(),
                );
            }
            expansions.push(Expansion {
                column: name.clone(),
                reference: levels[0].clone(),
                dummies: levels.len() - 1,
                levels,
            });
        } else {
            block.names.push(name.clone());
            block.columns.push(numeric_column(rows, idx, name)?);
        }
    }
    Ok(block)
}

fn numeric_column(rows: &[Vec<String>], idx: usize, name: &str) -> Result<Vec<f64>, IngestError> {
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            let cell = row[idx].trim();
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| IngestError::NonNumeric {
                    row: r + 1,
                    column: name.to_string(),
                    value: cell.to_string(),
                })
        })
        .collect()
}

fn matrix(block: &Block, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, block.columns.len()), |(i, j)| block.columns[j][i])
}

/// Reads a UTF-8 CSV with a header row into a [`Dataset`].
///
/// Rows with a blank or `NA` cell in any used column are dropped and
/// counted; the load fails when fewer than 90% of the rows remain.
pub fn ingest_csv(path: &Path, roles: &ColumnRoles) -> Result<Loaded, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ingest_str(&text, &path.display().to_string(), roles)
}

pub fn ingest_str(text: &str, source: &str, roles: &ColumnRoles) -> Result<Loaded, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    let mut raw: Vec<Vec<String>> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        raw.push(rec.iter().map(String::from).collect());
    }

    let outcome = resolve(&header, std::slice::from_ref(&roles.outcome), false)?;
    let endogenous = resolve(&header, std::slice::from_ref(&roles.endogenous), false)?;
    let instruments = resolve(&header, &roles.instruments, false)?;
    let controls = resolve(&header, &roles.controls, true)?;
    let mut seen: Vec<&String> = Vec::new();
    for c in outcome
        .iter()
        .chain(&endogenous)
        .chain(&instruments)
        .chain(&controls)
    {
        if seen.contains(&c) {
            return Err(IngestError::DuplicateRole(c.clone()));
        }
        seen.push(c);
    }
    for e in &roles.expand {
        if !instruments.contains(e) && !controls.contains(e) {
            return Err(IngestError::ExpandWithoutRole(e.clone()));
        }
    }
    if instruments.is_empty() {
        return Err(IngestError::NoInstruments(
            "no instrument columns selected".into(),
        ));
    }

    let used: Vec<usize> = seen
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == *c)
                .expect("resolved column")
        })
        .collect();
    let read = raw.len();
    if read == 0 {
        return Err(IngestError::Empty);
    }
    let rows: Vec<Vec<String>> = raw
        .into_iter()
        .filter(|r| {
            used.iter()
                .all(|&i| r.get(i).is_some_and(|c| !is_missing(c)))
        })
        .collect();
    let kept = rows.len();
    let mut warnings = Vec::new();
    if (kept as f64) < RETENTION_FLOOR * read as f64 {
        return Err(IngestError::TooManyMissing {
            kept,
            read,
            floor: 100.0 * RETENTION_FLOOR,
        });
    }
    if kept < read {
        warnings.push(format!(
            "{} of {read} rows dropped for missing values",
            read - kept
        ));
    }

    let y = numeric_column(&rows, used[0], &outcome[0])?;
    let x = numeric_column(&rows, used[1], &endogenous[0])?;
    let mut expansions = Vec::new();
    let z = build_block(&instruments, &header, &rows, &roles.expand, &mut expansions)?;
    let w = build_block(&controls, &header, &rows, &roles.expand, &mut expansions)?;
    for e in &expansions {
        warnings.push(format!(
            "{} expanded into {} dummies; reference level {:?} dropped",
            e.column, e.dummies, e.reference
        ));
    }
    if z.columns.is_empty() {
        return Err(IngestError::NoInstruments(
            "expansion left no instrument columns".into(),
        ));
    }
    let (k_z, k_w) = (z.columns.len(), w.columns.len());
    if kept <= k_z + k_w {
        return Err(IngestError::TooFewRows {
            n: kept,
            k: k_z + k_w,
        });
    }
    let data = Dataset::new(
        Array1::from(y),
        Array1::from(x),
        matrix(&z, kept),
        (k_w > 0).then(|| matrix(&w, kept)),
    )?;
    Ok(Loaded {
        data,
        summary: DataSummary {
            path: source.to_string(),
            outcome: outcome[0].clone(),
            endogenous: endogenous[0].clone(),
            instruments: z.names,
            controls: w.names,
            rows_read: read,
            rows_rejected: read - kept,
            expansions,
            n: kept,
            k_z,
            k_w,
        },
        warnings,
    })
}

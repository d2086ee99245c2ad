//! CSV panels: a header row, an optional leading index column of dates or
//! identifiers, and one numeric column per dimension. Empty cells and `NA`
//! are missing.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use gst_ppca::DataSet;
use nalgebra::DMatrix;

use crate::error::{usage, CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// Header and values of the index column, if present.
    pub index: Option<(String, Vec<String>)>,
    pub columns: Vec<String>,
    pub data: DataSet,
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("na")
}

fn parse_cell(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads a panel. The first column is treated as an index when any of its
/// non-missing cells is not a number.
pub fn read_panel(path: &Path) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let records: Vec<csv::StringRecord> =
        reader.records().collect::<std::result::Result<_, _>>()?;
    if header.is_empty() || records.is_empty() {
        return usage(format!("{}: no data rows", path.display()));
    }
    let has_index = records.iter().any(|r| {
        r.get(0)
            .is_some_and(|c| !is_missing(c) && parse_cell(c).is_none())
    });
    let first = usize::from(has_index);
    let d = header.len() - first;
    if d == 0 {
        return usage(format!("{}: no numeric columns", path.display()));
    }
    let n = records.len();
    let mut y = DMatrix::zeros(n, d);
    let mut observed = vec![false; n * d];
    let mut index = Vec::with_capacity(n);
    for (t, rec) in records.iter().enumerate() {
        if rec.len() != header.len() {
            return usage(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                t + 2,
                rec.len(),
                header.len()
            ));
        }
        if has_index {
            index.push(rec[0].trim().to_string());
        }
        for i in 0..d {
            let cell = &rec[first + i];
            if is_missing(cell) {
                continue;
            }
            match parse_cell(cell) {
                Some(v) => {
                    y[(t, i)] = v;
                    observed[t * d + i] = true;
                }
                None => {
                    return usage(format!(
                        "{}: row {}, column '{}': cannot parse '{}'",
                        path.display(),
                        t + 2,
                        header[first + i],
                        cell
                    ))
                }
            }
        }
    }
    let data = DataSet::with_mask(y, observed).map_err(|e| match e {
        gst_ppca::Error::EmptyRow(t) => CliError::Usage(format!(
            "{}: row {} has no observed values",
            path.display(),
            t + 2
        )),
        other => other.into(),
    })?;
    Ok(Panel {
        index: has_index.then(|| (header[0].clone(), index)),
        columns: header[first..].to_vec(),
        data,
    })
}

/// Writes a panel in the format [`read_panel`] accepts; missing entries
/// become `NA`. Numbers use the shortest representation that round-trips.
pub fn write_panel<W: Write>(out: W, panel: &Panel) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header: Vec<String> = Vec::new();
    if let Some((name, _)) = &panel.index {
        header.push(name.clone());
    }
    header.extend(panel.columns.iter().cloned());
    writer.write_record(&header)?;
    let data = &panel.data;
    for t in 0..data.n() {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if let Some((_, idx)) = &panel.index {
            row.push(idx[t].clone());
        }
        for i in 0..data.d() {
            row.push(if data.is_observed(t, i) {
                format!("{}", data.y()[(t, i)])
            } else {
                "NA".to_string()
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|source| CliError::Io {
        path: "output".into(),
        source,
    })?;
    Ok(())
}

/// Column-to-group assignment file: two columns `column_name,group_name`.
/// Returns the group index of every panel column, groups numbered in order
/// of first appearance.
pub fn read_groups(path: &Path, columns: &[String]) -> Result<(Vec<usize>, Vec<String>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(open(path)?);
    let mut assignment: Vec<Option<String>> = vec![None; columns.len()];
    for rec in reader.records() {
        let rec = rec?;
        if rec.len() < 2 {
            return usage(format!(
                "{}: expected column_name,group_name",
                path.display()
            ));
        }
        let (col, group) = (rec[0].trim(), rec[1].trim());
        let Some(i) = columns.iter().position(|c| c == col) else {
            return usage(format!("{}: unknown column '{col}'", path.display()));
        };
        assignment[i] = Some(group.to_string());
    }
    let mut names: Vec<String> = Vec::new();
    let mut of = Vec::with_capacity(columns.len());
    for (i, a) in assignment.into_iter().enumerate() {
        let Some(g) = a else {
            return usage(format!(
                "{}: column '{}' has no group",
                path.display(),
                columns[i]
            ));
        };
        let idx = match names.iter().position(|n| *n == g) {
            Some(idx) => idx,
            None => {
                names.push(g);
                names.len() - 1
            }
        };
        of.push(idx);
    }
    Ok((of, names))
}

/// Parses a comma-separated list of numbers; `inf` is accepted.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    let values = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| {
            x.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse '{x}' as a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return usage("empty list");
    }
    Ok(values)
}

//! Reading panels, labels and model descriptions; writing matrices.
//!
//! Panels are CSV files with one variable per row and one time point per column.
//! The first row may hold time labels and the first column variable ids; both are
//! detected automatically unless forced.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use faer::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{IdioCovariance, ObservationMatrix};
use crate::error::{Error, Result};
use crate::linalg;

/// Whether an optional leading row or column is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Presence {
    /// Present when its cells are not all numeric.
    #[default]
    Auto,
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CsvOptions {
    pub header: Presence,
    pub id_column: Presence,
    /// Reject empty cells. Otherwise trailing empty cells are dropped and blank lines skipped.
    pub strict: bool,
}

struct Row {
    line: usize,
    cells: Vec<String>,
}

fn read_rows<R: Read>(reader: R, strict: bool) -> Result<Vec<Row>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let mut cells: Vec<String> = rec.iter().map(|c| c.trim().to_string()).collect();
        if !strict {
            while cells.last().is_some_and(|c| c.is_empty()) {
                cells.pop();
            }
            if cells.is_empty() {
                continue;
            }
        }
        rows.push(Row { line, cells });
    }
    Ok(rows)
}

fn is_numeric(cell: &str) -> bool {
    cell.parse::<f64>().is_ok()
}

fn resolve(p: Presence, detected: impl FnOnce() -> bool) -> bool {
    match p {
        Presence::Yes => true,
        Presence::No => false,
        Presence::Auto => detected(),
    }
}

/// Parse a panel from any reader.
pub fn read_panel_from<R: Read>(reader: R, opts: &CsvOptions) -> Result<ObservationMatrix> {
    let rows = read_rows(reader, opts.strict)?;
    if rows.is_empty() {
        return Err(Error::Parse { line: 1, column: 1, message: "empty input".into() });
    }
    let has_ids = resolve(opts.id_column, || {
        let data = if rows.len() > 1 { &rows[1..] } else { &rows[..] };
        data.iter().any(|r| r.cells.first().is_some_and(|c| !is_numeric(c)))
    });
    let skip = usize::from(has_ids);
    let has_header = resolve(opts.header, || rows[0].cells.iter().skip(skip).any(|c| !is_numeric(c)));
    let body = &rows[usize::from(has_header)..];
    if body.is_empty() {
        return Err(Error::Parse { line: rows[0].line + 1, column: 1, message: "no data rows".into() });
    }
    let t = body[0].cells.len().saturating_sub(skip);
    let mut values = Vec::with_capacity(body.len());
    let mut ids = Vec::new();
    for row in body {
        let width = row.cells.len().saturating_sub(skip);
        if width != t {
            return Err(Error::Parse {
                line: row.line,
                column: row.cells.len().min(skip + t) + 1,
                message: format!("expected {t} values, found {width}"),
            });
        }
        if has_ids {
            ids.push(row.cells[0].clone());
        }
        let parsed = row.cells[skip..]
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let column = j + skip + 1;
                if c.is_empty() {
                    return Err(Error::Parse { line: row.line, column, message: "missing value".into() });
                }
                c.parse::<f64>().map_err(|_| Error::Parse {
                    line: row.line,
                    column,
                    message: format!("cannot parse {c:?} as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        values.push(parsed);
    }
    let m = linalg::from_rows(&values)?;
    ObservationMatrix::new(m, has_ids.then_some(ids))
}

pub fn read_panel(path: &Path, opts: &CsvOptions) -> Result<ObservationMatrix> {
    read_panel_from(BufReader::new(File::open(path)?), opts)
}

/// Write a matrix as headerless CSV with full round-trip precision.
pub fn write_matrix<W: Write>(out: W, m: MatRef<'_, f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: &Path, m: MatRef<'_, f64>) -> Result<()> {
    write_matrix(File::create(path)?, m)
}

/// Binary labels, one `0` or `1` per non-blank line (`1` = case).
pub fn read_labels_from<R: Read>(reader: R) -> Result<Vec<bool>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        match line.trim() {
            "" => continue,
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(Error::Parse {
                    line: i + 1,
                    column: 1,
                    message: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        }
    }
    Ok(out)
}

pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    read_labels_from(File::open(path)?)
}

/// Idiosyncratic covariance in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdioSpec {
    Diagonal(Vec<f64>),
    Dense(Vec<Vec<f64>>),
}

/// Loadings and idiosyncratic covariance, e.g.
/// `{"loadings": [[1.0, 0.5], ...], "idio_cov": {"diagonal": [1.0, ...]}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub loadings: Vec<Vec<f64>>,
    pub idio_cov: IdioSpec,
}

impl ModelFile {
    /// Loadings as a `p x K` matrix and the idiosyncratic covariance, shape-checked.
    pub fn to_parts(&self) -> Result<(Mat<f64>, IdioCovariance)> {
        let b = linalg::from_rows(&self.loadings)?;
        let idio = match &self.idio_cov {
            IdioSpec::Diagonal(v) => IdioCovariance::Diagonal(v.clone()),
            IdioSpec::Dense(rows) => {
                let m = linalg::from_rows(rows)?;
                if m.nrows() != m.ncols() {
                    return Err(Error::shape("idio_cov", "square matrix", format!("{}x{}", m.nrows(), m.ncols())));
                }
                IdioCovariance::Dense(m)
            }
        };
        if idio.dim() != b.nrows() {
            return Err(Error::shape("idio_cov", format!("dimension {}", b.nrows()), idio.dim()));
        }
        Ok((b, idio))
    }
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, opts: CsvOptions) -> Result<ObservationMatrix> {
        read_panel_from(text.as_bytes(), &opts)
    }

    #[test]
    fn plain_numeric_body() {
        let y = parse("1,2,3\n4,5,6\n", CsvOptions::default()).unwrap();
        assert_eq!((y.n_vars(), y.n_times()), (2, 3));
        assert_eq!(y.values()[(1, 2)], 6.0);
    }

    #[test]
    fn header_and_ids_detected() {
        let y = parse("gene,t1,t2\ng1,1,2\ng2,3,4\n", CsvOptions::default()).unwrap();
        assert_eq!(y.variable_ids(), &["g1".to_string(), "g2".to_string()]);
        assert_eq!(y.values()[(1, 0)], 3.0);
    }

    #[test]
    fn numeric_header_needs_forcing() {
        let opts = CsvOptions { header: Presence::Yes, ..Default::default() };
        let y = parse("0,1\n5,6\n7,8\n", opts).unwrap();
        assert_eq!(y.n_vars(), 2);
    }

    #[test]
    fn bad_cell_reports_position() {
        match parse("1,2\n3,x\n", CsvOptions::default()) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strict_rejects_missing_cells() {
        let strict = CsvOptions { strict: true, ..Default::default() };
        assert!(matches!(parse("1,2,\n3,4,\n", strict), Err(Error::Parse { column: 3, .. })));
        assert!(parse("1,2,\n3,4,\n", CsvOptions::default()).is_ok());
        assert!(matches!(parse("1,2\n3\n", CsvOptions::default()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = Mat::<f64>::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        let mut buf = Vec::new();
        write_matrix(&mut buf, m.as_ref()).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap(), CsvOptions::default()).unwrap();
        assert_eq!(back.values(), m.as_ref());
    }

    #[test]
    fn labels_parse() {
        assert_eq!(read_labels_from("0\n1\n\n1\n".as_bytes()).unwrap(), vec![false, true, true]);
        assert!(matches!(read_labels_from("0\n2\n".as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn model_file_shapes() {
        let m: ModelFile = serde_json::from_str(r#"{"loadings": [[1.0], [2.0]], "idio_cov": {"diagonal": [1.0, 1.0]}}"#).unwrap();
        assert_eq!(m.to_parts().unwrap().0.nrows(), 2);
        let bad = ModelFile { loadings: vec![vec![1.0]], idio_cov: IdioSpec::Diagonal(vec![1.0, 2.0]) };
        assert!(bad.to_parts().is_err());
    }
}

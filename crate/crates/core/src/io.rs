//! Dataset loading and saving: delimited text with an optional header, and
//! LIBSVM `label index:value ...` lines densified into a matrix.
//!
//! All numbers are parsed with `str::parse::<f64>`, which is locale
//! independent and accepts scientific notation. Non-finite values are
//! rejected with their location.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x p`, one row per sample.
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    /// One name per column of `x`; 1-based indices when the source has none.
    pub feature_names: Vec<String>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset must be at least 1 x 1, got {n} x {p}"
            )));
        }
        if y.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: y.len(),
            });
        }
        let feature_names = match feature_names {
            Some(names) if names.len() != p => {
                return Err(Error::LengthMismatch {
                    expected: p,
                    found: names.len(),
                })
            }
            Some(names) => names,
            None => default_names(p),
        };
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry at row {}, column {}",
                k % n + 1,
                k / n + 1
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite response at row {}",
                i + 1
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| j.to_string()).collect()
}

/// Which CSV column holds the response: a header name or a 0-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseColumn {
    Name(String),
    Index(usize),
}

impl Default for ResponseColumn {
    fn default() -> Self {
        Self::Index(0)
    }
}

impl FromStr for ResponseColumn {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Self::Index(i),
            Err(_) => Self::Name(s.to_string()),
        })
    }
}

impl fmt::Display for ResponseColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Name(s) => f.write_str(s),
            Self::Index(i) => write!(f, "{i}"),
        }
    }
}

fn parse_cell(cell: &str, line: usize, column: usize) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: '{cell}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value '{cell}'"),
        });
    }
    Ok(v)
}

/// Reads a comma-separated table. The first record is a header when any of
/// its cells fails to parse as a number. The response column is removed and
/// the remaining columns become `x` in file order.
pub fn load_csv(path: impl AsRef<Path>, response: &ResponseColumn) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_error)?;

    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    let mut first_line = 0;
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.iter().all(|c| c.is_empty()) {
            continue;
        }
        if header.is_none() && rows.is_empty() && record.iter().any(|c| c.parse::<f64>().is_err()) {
            header = Some(record.iter().map(str::to_string).collect());
            width = Some(record.len());
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            None => width = Some(record.len()),
            _ => {}
        }
        if rows.is_empty() {
            first_line = line;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(k, c)| parse_cell(c, line, k + 1))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }

    let width = width.unwrap_or(0);
    let target = match response {
        ResponseColumn::Index(i) if *i < width => *i,
        ResponseColumn::Index(i) => {
            return Err(Error::Parse {
                line: first_line.max(1),
                message: format!("response column {i} does not exist ({width} columns)"),
            })
        }
        ResponseColumn::Name(name) => header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("no header column named '{name}'"),
            })?,
    };
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }

    let n = rows.len();
    let p = width - 1;
    let y: Vec<f64> = rows.iter().map(|r| r[target]).collect();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][if j < target { j } else { j + 1 }]);
    let names = header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|&(k, _)| k != target)
            .map(|(_, s)| s)
            .collect()
    });
    Dataset::new(x, y, names)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes `response_name,<feature names>` followed by one row per sample.
/// Values use the shortest representation that parses back to the same
/// `f64`.
pub fn write_csv<W: Write>(data: &Dataset, out: &mut W, response_name: &str) -> Result<()> {
    write!(out, "{response_name}")?;
    for name in &data.feature_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for i in 0..data.n() {
        write!(out, "{}", data.y[i])?;
        for j in 0..data.p() {
            write!(out, ",{}", data.x[(i, j)])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>, response_name: &str) -> Result<()> {
    write_csv(
        data,
        &mut BufWriter::new(File::create(path)?),
        response_name,
    )
}

/// Reads LIBSVM lines `label i:v i:v ...` with 1-based, strictly increasing
/// indices. Blank lines and `#` comments are skipped. The matrix has as many
/// columns as the largest index seen; absent entries are zero.
pub fn load_libsvm(path: impl AsRef<Path>) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut y = Vec::new();
    let mut entries: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut p = 0;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut tokens = body.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        y.push(parse_cell(label, lineno, 1)?);
        let mut row = Vec::new();
        let mut last = 0;
        for token in tokens {
            let bad = |message: String| Error::Parse {
                line: lineno,
                message,
            };
            let (idx, val) = token
                .split_once(':')
                .ok_or_else(|| bad(format!("expected index:value, found '{token}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| bad(format!("bad feature index '{idx}'")))?;
            if idx == 0 {
                return Err(bad("feature indices are 1-based, found 0".into()));
            }
            if idx <= last {
                return Err(bad(format!(
                    "feature index {idx} does not increase (after {last})"
                )));
            }
            last = idx;
            let v: f64 = val
                .parse()
                .map_err(|_| bad(format!("feature {idx}: '{val}' is not a number")))?;
            if !v.is_finite() {
                return Err(bad(format!("feature {idx}: non-finite value '{val}'")));
            }
            row.push((idx - 1, v));
        }
        p = p.max(last);
        entries.push(row);
    }
    if y.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data lines".into(),
        });
    }
    if p == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "no feature appears in any line".into(),
        });
    }
    let mut x = DMatrix::zeros(y.len(), p);
    for (i, row) in entries.iter().enumerate() {
        for &(j, v) in row {
            x[(i, j)] = v;
        }
    }
    Dataset::new(x, y, None)
}

/// Penalty weights: numbers separated by commas or whitespace.
pub fn load_weights(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let reader = BufReader::new(File::open(path)?);
    let mut w = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        for (c, cell) in line
            .split(|ch: char| ch == ',' || ch.is_whitespace())
            .filter(|s| !s.is_empty())
            .enumerate()
        {
            w.push(parse_cell(cell, k + 1, c + 1)?);
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_with_header_by_name() {
        let f = file("y,a,b\n1,2,3\n4,5,6\n7,8,9\n");
        let d = load_csv(f.path(), &"y".parse().unwrap()).unwrap();
        assert_eq!((d.n(), d.p()), (3, 2));
        assert_eq!(d.y, vec![1.0, 4.0, 7.0]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
        assert_eq!(d.x[(2, 1)], 9.0);
    }

    #[test]
    fn csv_response_in_the_middle_keeps_order() {
        let f = file("a,y,b\n1,2,3\n");
        let d = load_csv(f.path(), &ResponseColumn::Index(1)).unwrap();
        assert_eq!(d.y, vec![2.0]);
        assert_eq!(
            d.x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![1.0, 3.0]
        );
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn csv_without_header_gets_index_names() {
        let f = file("1.5,2e-3,-4\n0,1,1E2\n");
        let d = load_csv(f.path(), &ResponseColumn::Index(0)).unwrap();
        assert_eq!(d.feature_names, vec!["1", "2"]);
        assert_eq!(d.x[(0, 0)], 2e-3);
        assert_eq!(d.x[(1, 1)], 100.0);
        assert!(load_csv(f.path(), &ResponseColumn::Name("y".into())).is_err());
    }

    #[test]
    fn csv_rejects_nan_with_location() {
        let f = file("y,a\n1,2\n3,NaN\n");
        match load_csv(f.path(), &ResponseColumn::Index(0)) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("column 2"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let f = file("1,inf\n");
        assert!(matches!(
            load_csv(f.path(), &ResponseColumn::Index(0)),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_rejects_ragged_and_text() {
        let f = file("y,a\n1,2\n3\n");
        assert!(matches!(
            load_csv(f.path(), &ResponseColumn::Index(0)),
            Err(Error::Parse { line: 3, .. })
        ));
        let f = file("1,2\n3,x\n");
        assert!(matches!(
            load_csv(f.path(), &ResponseColumn::Index(0)),
            Err(Error::Parse { line: 2, .. })
        ));
        let f = file("1,2\n");
        assert!(load_csv(f.path(), &ResponseColumn::Index(5)).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = DMatrix::from_row_slice(
            2,
            3,
            &[0.1, 1.0 / 3.0, -2.5e-300, 1e300, std::f64::consts::PI, -0.0],
        );
        let d = Dataset::new(
            x,
            vec![2.0 / 3.0, -7.0],
            Some(vec!["a".into(), "b".into(), "c".into()]),
        )
        .unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_csv(&d, out.path(), "y").unwrap();
        let back = load_csv(out.path(), &"y".parse().unwrap()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn libsvm_densifies() {
        let f = file("1.5 1:2 3:-1\n-2\n0.5 2:4 # trailing comment\n\n");
        let d = load_libsvm(f.path()).unwrap();
        assert_eq!((d.n(), d.p()), (3, 3));
        assert_eq!(d.y, vec![1.5, -2.0, 0.5]);
        assert_eq!(
            d.x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![2.0, 0.0, -1.0]
        );
        assert!(d.x.row(1).iter().all(|&v| v == 0.0));
        assert_eq!(d.x[(2, 1)], 4.0);
    }

    #[test]
    fn libsvm_errors_carry_line_numbers() {
        for (text, bad_line) in [
            ("1 1:1\n2 3:1 2:1\n", 2),
            ("1 0:1\n", 1),
            ("1 1:1\n1 1:1\n1 2-1\n", 3),
            ("1 1:x\n", 1),
            ("z 1:1\n", 1),
        ] {
            let f = file(text);
            match load_libsvm(f.path()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, bad_line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn weights_file() {
        let f = file("1, 2.5\n0.5\n");
        assert_eq!(load_weights(f.path()).unwrap(), vec![1.0, 2.5, 0.5]);
    }

    #[test]
    fn dataset_invariants() {
        assert!(Dataset::new(DMatrix::zeros(0, 2), vec![], None).is_err());
        assert!(Dataset::new(DMatrix::zeros(2, 2), vec![1.0], None).is_err());
        assert!(Dataset::new(DMatrix::from_element(1, 1, f64::NAN), vec![1.0], None).is_err());
    }
}

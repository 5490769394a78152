//! Generic comma-separated datasets: `label,x_1,...,x_n` per line with
//! features already in `[0, 1]`. Blank lines and lines starting with `#` are
//! skipped.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Split, Splits};
use crate::error::{Error, Result};

fn parse_row(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|f| {
            let f = f.trim();
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {line_no}"), format!("not a number: {f:?}")))
        })
        .collect()
}

fn rows(path: &Path) -> Result<Vec<(usize, Vec<f64>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((n + 1, parse_row(path, n + 1, trimmed)?));
    }
    if out.is_empty() {
        return Err(Error::format(path, "line 1", "no rows"));
    }
    let width = out[0].1.len();
    if let Some((line_no, row)) = out.iter().find(|(_, r)| r.len() != width) {
        return Err(Error::format(
            path,
            format!("line {line_no}"),
            format!("expected {width} columns, found {}", row.len()),
        ));
    }
    Ok(out)
}

fn to_matrix(path: &Path, rows: &[(usize, Vec<f64>)], skip: usize) -> Result<Array2<f64>> {
    let width = rows[0].1.len() - skip;
    if width == 0 {
        return Err(Error::format(path, "line 1", "rows have no feature columns"));
    }
    for (line_no, row) in rows {
        if let Some(v) = row[skip..].iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format(path, format!("line {line_no}"), format!("feature {v} outside [0, 1]")));
        }
    }
    let flat: Vec<f64> = rows.iter().flat_map(|(_, r)| r[skip..].iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| Error::Shape(e.to_string()))
}

/// Loads a labelled file. Labels must be non-negative integers below `n_classes`.
pub fn load_csv(path: &Path, n_classes: usize, split: Split) -> Result<Dataset> {
    let rows = rows(path)?;
    let mut labels = Vec::with_capacity(rows.len());
    for (line_no, row) in &rows {
        let y = row[0];
        if y.fract() != 0.0 || y < 0.0 || y >= n_classes as f64 {
            return Err(Error::format(
                path,
                format!("line {line_no}"),
                format!("label {y} is not a class index below {n_classes}"),
            ));
        }
        labels.push(y as usize);
    }
    Dataset::new(to_matrix(path, &rows, 1)?, labels, n_classes, split)
}

/// Loads three labelled files; the class count defaults to one more than the
/// largest label seen in any of them.
pub fn load_csv_splits(train: &Path, valid: &Path, test: &Path, n_classes: Option<usize>) -> Result<Splits> {
    let n_classes = match n_classes {
        Some(n) => n,
        None => {
            let mut max = 0.0f64;
            for p in [train, valid, test] {
                for (_, row) in rows(p)? {
                    max = max.max(row[0]);
                }
            }
            max as usize + 1
        }
    };
    Splits::new(
        load_csv(train, n_classes, Split::Train)?,
        load_csv(valid, n_classes, Split::Valid)?,
        load_csv(test, n_classes, Split::Test)?,
    )
}

/// Reads an unlabelled feature file, one comma-separated row per line.
pub fn read_feature_rows(path: &Path) -> Result<Array2<f64>> {
    let rows = rows(path)?;
    to_matrix(path, &rows, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labelled_and_unlabelled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "# toy\n1,0.5,1\n0, 0, 0.25\n\n").unwrap();
        let ds = load_csv(&p, 2, Split::Train).unwrap();
        assert_eq!(ds.labels(), &[1, 0]);
        assert_eq!(ds.row(1).to_vec(), vec![0.0, 0.25]);

        let q = dir.path().join("x.csv");
        fs::write(&q, "0.5,1\n0,0.25\n").unwrap();
        assert_eq!(read_feature_rows(&q).unwrap().dim(), (2, 2));
    }

    #[test]
    fn bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1,0.5\n0,0.5,1\n").unwrap();
        match load_csv(&p, 2, Split::Train) {
            Err(Error::Format { location, .. }) => assert_eq!(location, "line 2"),
            other => panic!("{other:?}"),
        }
        fs::write(&p, "1,1.5\n").unwrap();
        assert!(load_csv(&p, 2, Split::Train).is_err());
        fs::write(&p, "2,0.5\n").unwrap();
        assert!(load_csv(&p, 2, Split::Train).is_err());
    }
}

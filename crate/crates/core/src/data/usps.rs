//! USPS digits in the label-first text format: one example per line, the
//! digit label followed by 256 grey values, separated by whitespace or
//! commas.
//!
//! Values are mapped affinely onto `[0, 1]` from the source range detected on
//! the training file: `[-1, 1]` if any value is negative, `[0, 255]` if any
//! exceeds 1, `[0, 1]` otherwise. The test file is mapped with the same range.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{carve_validation, Dataset, Split, Splits};
use crate::error::{Error, Result};

const PIXELS: usize = 256;

#[derive(Clone, Debug)]
pub struct UspsOptions {
    pub valid_size: usize,
    pub shuffle_seed: u64,
}

impl Default for UspsOptions {
    fn default() -> Self {
        UspsOptions {
            valid_size: 1_458,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug)]
struct RawRows {
    values: Vec<f64>,
    labels: Vec<usize>,
}

fn parse(path: &Path) -> Result<RawRows> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let fields: Vec<&str> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != PIXELS + 1 {
            return Err(Error::format(
                path,
                format!("line {line_no}"),
                format!("expected {} columns, found {}", PIXELS + 1, fields.len()),
            ));
        }
        let num = |f: &str| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {line_no}"), format!("not a number: {f:?}")))
        };
        let label = num(fields[0])?;
        if label.fract() != 0.0 || !(0.0..=9.0).contains(&label) {
            return Err(Error::format(path, format!("line {line_no}"), format!("label {label} is not a digit")));
        }
        labels.push(label as usize);
        for f in &fields[1..] {
            values.push(num(f)?);
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "line 1", "no examples"));
    }
    Ok(RawRows { values, labels })
}

fn detect_range(values: &[f64]) -> (f64, f64) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo < 0.0 {
        (-1.0, 1.0)
    } else if hi > 1.0 {
        (0.0, 255.0)
    } else {
        (0.0, 1.0)
    }
}

fn to_dataset(path: &Path, raw: RawRows, (lo, hi): (f64, f64), split: Split) -> Result<Dataset> {
    if let Some(i) = raw.values.iter().position(|v| !(lo..=hi).contains(v)) {
        return Err(Error::format(
            path,
            format!("line {}", i / PIXELS + 1),
            format!("value {} outside the source range [{lo}, {hi}]", raw.values[i]),
        ));
    }
    let scale = 1.0 / (hi - lo);
    let scaled: Vec<f64> = raw
        .values
        .into_iter()
        .map(|v| ((v - lo) * scale).clamp(0.0, 1.0))
        .collect();
    let features = Array2::from_shape_vec((raw.labels.len(), PIXELS), scaled)
        .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, raw.labels, 10, split)
}

/// Loads the 7,291-row training file and 2,007-row test file; validation is
/// `valid_size` rows of the training file chosen by a seeded shuffle.
pub fn load_usps(train_path: &Path, test_path: &Path, opts: &UspsOptions) -> Result<Splits> {
    let train_raw = parse(train_path)?;
    let range = detect_range(&train_raw.values);
    let full = to_dataset(train_path, train_raw, range, Split::Train)?;
    let test = to_dataset(test_path, parse(test_path)?, range, Split::Test)?;
    let (train, valid) = carve_validation(&full, opts.valid_size, opts.shuffle_seed)?;
    Splits::new(train, valid, test)
}

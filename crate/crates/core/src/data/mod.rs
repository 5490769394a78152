//! Datasets and loaders.
//!
//! Every loader produces [`Dataset`]s whose features lie in `[0, 1]` and
//! whose labels lie in `0..n_classes`; both are checked on construction.

mod cache;
mod csv;
mod mnist;
mod newsgroups;
mod usps;

use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{load_cached, save_cached, CACHE_MAGIC, CACHE_VERSION};
pub use csv::{load_csv, load_csv_splits, read_feature_rows};
pub use mnist::{load_mnist, load_mnist_files, read_idx_images, read_idx_labels, IdxImages, MNIST_VALID_SIZE};
pub use newsgroups::{load_20news, tokenize, NewsgroupsOptions, Vocabulary};
pub use usps::{load_usps, UspsOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .find(|s| s.name() == name)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Valid => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        [Split::Train, Split::Valid, Split::Test]
            .into_iter()
            .find(|s| s.code() == code)
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Feature matrix (one example per row) with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize, split: Split) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        if features.ncols() == 0 {
            return Err(Error::Shape("examples have no features".into()));
        }
        if n_classes < 2 {
            return Err(Error::Shape(format!("need at least 2 classes, got {n_classes}")));
        }
        if let Some((row, _)) = features
            .rows()
            .into_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !(0.0..=1.0).contains(v)))
        {
            return Err(Error::Domain(format!("row {row} has a feature outside [0, 1]")));
        }
        if let Some((row, y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(Error::Domain(format!(
                "row {row} has label {y}, expected < {n_classes}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            n_classes,
            split,
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_inputs(&self) -> usize {
        self.features.ncols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Rows in the given order, relabelled as `split`.
    pub fn select(&self, indices: &[usize], split: Split) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            split,
        }
    }

    /// The first `n` rows (all rows if there are fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, self.split)
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    /// Same examples with the labels replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Dataset> {
        Dataset::new(self.features.clone(), labels, self.n_classes, self.split)
    }
}

/// Train, validation and test sets sharing dimensions and class count.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn new(train: Dataset, valid: Dataset, test: Dataset) -> Result<Self> {
        for other in [&valid, &test] {
            if other.n_inputs() != train.n_inputs() || other.n_classes() != train.n_classes() {
                return Err(Error::Shape(format!(
                    "{} split is {} x {} classes, train is {} x {} classes",
                    other.split(),
                    other.n_inputs(),
                    other.n_classes(),
                    train.n_inputs(),
                    train.n_classes()
                )));
            }
        }
        Ok(Splits { train, valid, test })
    }

    /// Checks that every class occurs in the training split.
    pub fn check_train_coverage(&self) -> Result<()> {
        match self.train.class_histogram().iter().position(|&n| n == 0) {
            Some(missing) => Err(Error::Domain(format!(
                "class {missing} never occurs in the training split"
            ))),
            None => Ok(()),
        }
    }
}

/// Carves `valid_size` rows out of `full` after a shuffle seeded with
/// `seed`. Both parts keep the original row order.
pub fn carve_validation(full: &Dataset, valid_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if valid_size == 0 || valid_size >= full.len() {
        return Err(Error::Usage(format!(
            "cannot carve {valid_size} validation rows out of {}",
            full.len()
        )));
    }
    let mut order: Vec<usize> = (0..full.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, valid_idx) = order.split_at_mut(full.len() - valid_size);
    train_idx.sort_unstable();
    valid_idx.sort_unstable();
    Ok((full.select(train_idx, Split::Train), full.select(valid_idx, Split::Valid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rejects_out_of_range_entries() {
        assert!(Dataset::new(array![[0.5, 1.5]], vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(array![[0.5, f64::NAN]], vec![0], 2, Split::Train).is_err());
        assert!(Dataset::new(array![[0.5, 1.0]], vec![2], 2, Split::Train).is_err());
        assert!(Dataset::new(array![[0.5, 1.0]], vec![0, 1], 2, Split::Train).is_err());
        assert!(Dataset::new(array![[0.0, 1.0]], vec![1], 2, Split::Train).is_ok());
    }

    #[test]
    fn carve_is_deterministic_and_disjoint() {
        let features = Array2::from_shape_fn((20, 2), |(i, _)| i as f64 / 20.0);
        let labels = (0..20).map(|i| i % 2).collect();
        let full = Dataset::new(features, labels, 2, Split::Train).unwrap();
        let (t1, v1) = carve_validation(&full, 5, 0).unwrap();
        let (t2, v2) = carve_validation(&full, 5, 0).unwrap();
        assert_eq!((t1.len(), v1.len()), (15, 5));
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        let mut seen: Vec<f64> = t1.features().column(0).iter().chain(v1.features().column(0)).copied().collect();
        seen.sort_by(f64::total_cmp);
        seen.dedup();
        assert_eq!(seen.len(), 20);
        assert!(carve_validation(&full, 20, 0).is_err());
    }
}

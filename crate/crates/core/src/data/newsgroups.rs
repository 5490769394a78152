//! 20 Newsgroups in the "bydate" layout: a training tree and a test tree,
//! each with one directory per newsgroup and one file per document.
//!
//! Documents become binary presence vectors over the most frequent words of
//! the training tree. Tokens are maximal runs of ASCII letters, lowercased,
//! at least two characters long; bytes are read raw, so the encoding of the
//! posts does not matter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{carve_validation, Dataset, Split, Splits};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct NewsgroupsOptions {
    pub vocab_size: usize,
    /// Documents carved from the training tree for validation.
    pub valid_size: usize,
    pub shuffle_seed: u64,
}

impl Default for NewsgroupsOptions {
    fn default() -> Self {
        NewsgroupsOptions {
            vocab_size: 5_000,
            valid_size: 1_691,
            shuffle_seed: 0,
        }
    }
}

/// Words in feature order (most frequent first).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    pub words: Vec<String>,
    pub categories: Vec<String>,
}

/// Distinct tokens of a document.
pub fn tokenize(bytes: &[u8]) -> BTreeSet<String> {
    bytes
        .split(|b| !b.is_ascii_alphabetic())
        .filter(|t| t.len() >= 2)
        .map(|t| t.iter().map(|b| char::from(b.to_ascii_lowercase())).collect())
        .collect()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

/// `(category name, token sets of its documents)`, categories sorted by name.
fn read_tree(root: &Path, min_categories: usize) -> Result<Vec<(String, Vec<BTreeSet<String>>)>> {
    let mut out = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut docs = Vec::new();
        for file in sorted_entries(&dir)?.into_iter().filter(|p| p.is_file()) {
            let bytes = fs::read(&file).map_err(|e| Error::io(&file, e))?;
            docs.push(tokenize(&bytes));
        }
        if docs.is_empty() {
            return Err(Error::format(&dir, "directory", "category has no documents"));
        }
        out.push((name, docs));
    }
    if out.len() < min_categories {
        return Err(Error::format(
            root,
            "directory",
            format!("need at least {min_categories} category directories"),
        ));
    }
    Ok(out)
}

/// Top `size` words by document frequency, ties broken lexicographically.
fn build_vocabulary<'a>(docs: impl Iterator<Item = &'a BTreeSet<String>>, size: usize) -> Vec<String> {
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for w in doc {
            *df.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().take(size).map(|(w, _)| w.to_owned()).collect()
}

fn encode(
    docs: &[(usize, &BTreeSet<String>)],
    index: &HashMap<&str, usize>,
    n_classes: usize,
    split: Split,
) -> Result<Dataset> {
    let mut features = Array2::zeros((docs.len(), index.len()));
    let mut labels = Vec::with_capacity(docs.len());
    for (row, (label, doc)) in docs.iter().enumerate() {
        for w in doc.iter() {
            if let Some(&col) = index.get(w.as_str()) {
                features[[row, col]] = 1.0;
            }
        }
        labels.push(*label);
    }
    Dataset::new(features, labels, n_classes, split)
}

pub fn load_20news(train_root: &Path, test_root: &Path, opts: &NewsgroupsOptions) -> Result<(Splits, Vocabulary)> {
    let train_tree = read_tree(train_root, 2)?;
    let categories: Vec<String> = train_tree.iter().map(|(n, _)| n.clone()).collect();
    let words = build_vocabulary(train_tree.iter().flat_map(|(_, d)| d.iter()), opts.vocab_size);
    let index: HashMap<&str, usize> = words.iter().enumerate().map(|(i, w)| (w.as_str(), i)).collect();
    let class_of: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let train_docs: Vec<(usize, &BTreeSet<String>)> = train_tree
        .iter()
        .enumerate()
        .flat_map(|(y, (_, docs))| docs.iter().map(move |d| (y, d)))
        .collect();
    let full = encode(&train_docs, &index, categories.len(), Split::Train)?;

    let test_tree = read_tree(test_root, 1)?;
    let mut test_docs = Vec::new();
    for (name, docs) in &test_tree {
        let y = *class_of.get(name.as_str()).ok_or_else(|| {
            Error::format(test_root.join(name), "directory", "category does not exist in the training tree")
        })?;
        test_docs.extend(docs.iter().map(|d| (y, d)));
    }
    let test = encode(&test_docs, &index, categories.len(), Split::Test)?;

    let (train, valid) = carve_validation(&full, opts.valid_size, opts.shuffle_seed)?;
    Ok((Splits::new(train, valid, test)?, Vocabulary { words, categories }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_doc(root: &Path, category: &str, name: &str, text: &str) {
        let dir = root.join(category);
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn tokenizer_rules() {
        let toks = tokenize(b"Hello, WORLD! a b2c re: it's x-ray\xe9t\xe9");
        let want: BTreeSet<String> = ["hello", "world", "re", "it", "ray"].iter().map(|s| s.to_string()).collect();
        assert_eq!(toks, want);
    }

    #[test]
    fn two_document_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        let test = dir.path().join("test");
        write_doc(&train, "alt.atheism", "1", "god god debate");
        write_doc(&train, "alt.atheism", "2", "debate reason");
        write_doc(&train, "sci.space", "1", "orbit rocket debate");
        write_doc(&train, "sci.space", "2", "rocket launch");
        write_doc(&test, "sci.space", "9", "rocket debate unknownword");
        let opts = NewsgroupsOptions { vocab_size: 3, valid_size: 1, shuffle_seed: 0 };
        let (splits, vocab) = load_20news(&train, &test, &opts).unwrap();
        // df: debate 3, rocket 2, then god/launch/orbit/reason at 1 -> "god" wins the tie.
        assert_eq!(vocab.words, vec!["debate", "rocket", "god"]);
        assert_eq!(vocab.categories, vec!["alt.atheism", "sci.space"]);
        assert_eq!(splits.test.row(0).to_vec(), vec![1.0, 1.0, 0.0]);
        assert_eq!(splits.test.labels(), &[1]);
        assert_eq!(splits.train.len() + splits.valid.len(), 4);
    }

    #[test]
    fn tie_at_the_boundary_prefers_the_smaller_word() {
        let docs: Vec<BTreeSet<String>> = vec![tokenize(b"zebra apple mango"), tokenize(b"mango")];
        assert_eq!(build_vocabulary(docs.iter(), 2), vec!["mango", "apple"]);
    }

    #[test]
    fn vocabulary_ignores_the_test_tree() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        write_doc(&train, "a", "1", "alpha beta");
        write_doc(&train, "a", "2", "alpha");
        write_doc(&train, "b", "1", "gamma");
        let test1 = dir.path().join("t1");
        write_doc(&test1, "a", "1", "delta delta epsilon");
        let test2 = dir.path().join("t2");
        write_doc(&test2, "b", "1", "alpha");
        let opts = NewsgroupsOptions { vocab_size: 10, valid_size: 1, shuffle_seed: 0 };
        let (_, v1) = load_20news(&train, &test1, &opts).unwrap();
        let (_, v2) = load_20news(&train, &test2, &opts).unwrap();
        assert_eq!(v1, v2);
        assert_eq!(v1.words, vec!["alpha", "beta", "gamma"]);
    }

    #[test]
    fn empty_category_and_unknown_test_category() {
        let dir = tempfile::tempdir().unwrap();
        let train = dir.path().join("train");
        write_doc(&train, "a", "1", "alpha");
        write_doc(&train, "b", "1", "beta");
        write_doc(&train, "b", "2", "beta");
        let test = dir.path().join("test");
        write_doc(&test, "zzz", "1", "alpha");
        let opts = NewsgroupsOptions { vocab_size: 10, valid_size: 1, shuffle_seed: 0 };
        assert!(matches!(load_20news(&train, &test, &opts), Err(Error::Format { .. })));
        fs::create_dir_all(train.join("c")).unwrap();
        assert!(matches!(load_20news(&train, &train, &opts), Err(Error::Format { .. })));
    }
}

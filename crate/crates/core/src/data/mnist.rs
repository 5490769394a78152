//! IDX readers and the MNIST 50k / 10k / 10k split.
//!
//! IDX files are big-endian: a magic number (`0x00000803` for rank-3 `u8`
//! images, `0x00000801` for rank-1 `u8` labels), one `u32` per dimension,
//! then the raw bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Split, Splits};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Rows taken from the end of the training file for validation.
pub const MNIST_VALID_SIZE: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` pixels, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, format!("offset {offset}"), "file truncated in header"))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != expected {
        return Err(Error::format(
            path,
            "offset 0",
            format!("bad magic number {magic:#010x}, expected {expected:#010x}"),
        ));
    }
    Ok(())
}

fn check_payload(bytes: &[u8], header: usize, payload: usize, path: &Path) -> Result<()> {
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::format(
            path,
            format!("offset {}", bytes.len()),
            format!("file truncated, expected {expected} bytes"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(
            path,
            format!("offset {expected}"),
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    Ok(())
}

pub fn read_idx_images(path: &Path) -> Result<IdxImages> {
    let bytes = read_file(path)?;
    check_magic(&bytes, IMAGES_MAGIC, path)?;
    let count = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    check_payload(&bytes, 16, count * rows * cols, path)?;
    Ok(IdxImages {
        rows,
        cols,
        pixels: bytes[16..].to_vec(),
    })
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    check_magic(&bytes, LABELS_MAGIC, path)?;
    let count = read_u32(&bytes, 4, path)? as usize;
    check_payload(&bytes, 8, count, path)?;
    Ok(bytes[8..].to_vec())
}

/// Reads one image/label file pair into a dataset with pixels scaled by 1/255.
fn read_pair(images: &Path, labels: &Path, split: Split) -> Result<Dataset> {
    let img = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if img.count() != lab.len() {
        return Err(Error::format(
            labels,
            "offset 4",
            format!("{} labels for {} images in {}", lab.len(), img.count(), images.display()),
        ));
    }
    if let Some((i, &y)) = lab.iter().enumerate().find(|(_, &y)| y > 9) {
        return Err(Error::format(labels, format!("offset {}", 8 + i), format!("label {y} is not a digit")));
    }
    let pixels = img.rows * img.cols;
    let features = Array2::from_shape_vec(
        (img.count(), pixels),
        img.pixels.iter().map(|&p| f64::from(p) / 255.0).collect(),
    )
    .map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, lab.into_iter().map(usize::from).collect(), 10, split)
}

/// Loads the four IDX files. The last `valid_size` rows of the training
/// file become the validation split, in file order.
pub fn load_mnist_files(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
    valid_size: usize,
) -> Result<Splits> {
    let full = read_pair(train_images, train_labels, Split::Train)?;
    if valid_size == 0 || valid_size >= full.len() {
        return Err(Error::Usage(format!(
            "cannot take {valid_size} validation rows from {} training images",
            full.len()
        )));
    }
    let cut = full.len() - valid_size;
    let train_idx: Vec<usize> = (0..cut).collect();
    let valid_idx: Vec<usize> = (cut..full.len()).collect();
    let test = read_pair(test_images, test_labels, Split::Test)?;
    Splits::new(
        full.select(&train_idx, Split::Train),
        full.select(&valid_idx, Split::Valid),
        test,
    )
}

/// Loads MNIST from a directory holding the four standard uncompressed files
/// (`train-images-idx3-ubyte`, ...), split 50,000 / 10,000 / 10,000.
pub fn load_mnist(dir: &Path) -> Result<Splits> {
    load_mnist_files(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        MNIST_VALID_SIZE,
    )
}

//! Binary cache of a preprocessed [`Dataset`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! offset  size           field
//! 0       8              magic "DRBMDSET"
//! 8       4              format version (u32, currently 1)
//! 12      1              split (0 train, 1 valid, 2 test)
//! 13      3              zero padding
//! 16      8              rows n (u64)
//! 24      8              features per row n_i (u64)
//! 32      8              class count n_c (u64)
//! 40      8 * n * n_i    features, row-major f64
//! ...     4 * n          labels, u32
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::persist::{write_atomic, Reader};

pub const CACHE_MAGIC: &[u8; 8] = b"DRBMDSET";
pub const CACHE_VERSION: u32 = 1;

pub fn save_cached(path: &Path, ds: &Dataset) -> Result<()> {
    let mut buf = Vec::with_capacity(40 + ds.len() * (ds.n_inputs() * 8 + 4));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend(CACHE_VERSION.to_le_bytes());
    buf.push(ds.split().code());
    buf.extend([0u8; 3]);
    for v in [ds.len(), ds.n_inputs(), ds.n_classes()] {
        buf.extend((v as u64).to_le_bytes());
    }
    for v in ds.features().iter() {
        buf.extend(v.to_le_bytes());
    }
    for &y in ds.labels() {
        buf.extend((y as u32).to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn load_cached(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(&bytes, path);
    r.expect_magic(CACHE_MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::format(path, "offset 8", format!("unsupported cache version {version}")));
    }
    let split = Split::from_code(r.u8()?)
        .ok_or_else(|| Error::format(path, "offset 12", "unknown split code"))?;
    r.skip(3)?;
    let n = r.len_u64()?;
    let n_i = r.len_u64()?;
    let n_c = r.len_u64()?;
    let features = r.f64s(n.checked_mul(n_i).ok_or_else(|| r.error("dimensions overflow"))?)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32()? as usize);
    }
    r.finish()?;
    let features = Array2::from_shape_vec((n, n_i), features).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(features, labels, n_c, split)
}

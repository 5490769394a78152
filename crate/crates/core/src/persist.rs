//! Model files and the small binary reader shared with the dataset cache.
//!
//! Model file layout, all integers little-endian, floats IEEE-754 binary64
//! little-endian:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "DRBMODEL"
//! 8       4           format version (u32, currently 1)
//! 12      1           unit kind (0 bernoulli, 1 bipolar, 2 binomial, 3 relu)
//! 13      3           zero padding
//! 16      4           n_bins (u32; 1 unless binomial)
//! 20      4           zero padding
//! 24      8           n_i (u64)
//! 32      8           n_h (u64)
//! 40      8           n_c (u64)
//! 48      8           training seed (u64)
//! 56      8           config snapshot length L (u64)
//! 64      L           config snapshot, UTF-8 JSON
//! 64+L    8*n_i*n_h   R, row-major
//! ...     8*n_c*n_h   U, row-major
//! ...     8*n_h       c
//! ...     8*n_c       d
//! ```
//!
//! Parameters are stored bit-for-bit, so save followed by load is exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::activation::{StateSet, UnitKind};
use crate::error::{Error, Result};
use crate::model::{Dims, DrbmParams};

pub const MODEL_MAGIC: &[u8; 8] = b"DRBMODEL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SavedModel {
    pub units: StateSet,
    pub params: DrbmParams,
    pub seed: u64,
    /// JSON snapshot of the configuration the model was trained with.
    pub config_json: String,
}

impl SavedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.params.dims();
        let mut buf = Vec::with_capacity(64 + self.config_json.len() + 8 * dims.param_count());
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend(MODEL_VERSION.to_le_bytes());
        buf.push(self.units.kind().code());
        buf.extend([0u8; 3]);
        buf.extend(self.units.n_bins().to_le_bytes());
        buf.extend([0u8; 4]);
        for v in [dims.n_inputs, dims.n_hidden, dims.n_classes] {
            buf.extend((v as u64).to_le_bytes());
        }
        buf.extend(self.seed.to_le_bytes());
        buf.extend((self.config_json.len() as u64).to_le_bytes());
        buf.extend(self.config_json.as_bytes());
        for v in self.params.to_flat() {
            buf.extend(v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.expect_magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.error(format!("unsupported model format version {version}")));
        }
        let kind = UnitKind::from_code(r.u8()?).ok_or_else(|| r.error("unknown unit kind"))?;
        r.skip(3)?;
        let n_bins = r.u32()?;
        r.skip(4)?;
        let units = StateSet::new(kind, n_bins)?;
        let dims = Dims {
            n_inputs: r.len_u64()?,
            n_hidden: r.len_u64()?,
            n_classes: r.len_u64()?,
        };
        let seed = r.u64()?;
        let config_len = r.len_u64()?;
        let config_json = String::from_utf8(r.bytes(config_len)?.to_vec())
            .map_err(|_| r.error("config snapshot is not UTF-8"))?;
        let count = dims
            .n_inputs
            .checked_mul(dims.n_hidden)
            .and_then(|a| a.checked_add(dims.n_classes.checked_mul(dims.n_hidden)?))
            .and_then(|a| a.checked_add(dims.n_hidden + dims.n_classes))
            .ok_or_else(|| r.error("dimensions overflow"))?;
        let flat = r.f64s(count)?;
        r.finish()?;
        Ok(SavedModel {
            units,
            params: DrbmParams::from_flat(dims, &flat)?,
            seed,
            config_json,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        SavedModel::from_bytes(&bytes, path)
    }
}

/// Writes to a temporary file in the destination directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Bounds-checked little-endian cursor; every error names the byte offset.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Reader { bytes, pos: 0, path }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.path, format!("offset {}", self.pos), message)
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(self.error(format!("file truncated, needed {n} more bytes"))),
        }
    }

    pub(crate) fn skip(&mut self, n: usize) -> Result<()> {
        self.bytes(n).map(|_| ())
    }

    pub(crate) fn expect_magic(&mut self, magic: &[u8]) -> Result<()> {
        if self.bytes(magic.len())? != magic {
            self.pos = 0;
            return Err(self.error("bad magic number"));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn len_u64(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| self.error(format!("length {v} does not fit in memory")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| self.error("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.error(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

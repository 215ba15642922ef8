//! Reader for the IDX binary format used by classic image datasets:
//! big-endian magic, big-endian u32 dimension sizes, then raw unsigned
//! bytes. Provided for raw-image experiments; the default pipelines use
//! tabular features instead.

use std::io::Read;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{}: truncated header", path.display())))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(bytes)
}

/// Load an image file (magic 0x00000803) as an N x (rows * cols) matrix of
/// intensities scaled to [0, 1].
pub fn read_images(path: &Path) -> Result<Array2<f64>> {
    let bytes = read_all(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {IMAGES_MAGIC:#010x} for images",
            path.display()
        )));
    }
    let n = read_u32(&bytes, 4, path)? as usize;
    let rows = read_u32(&bytes, 8, path)? as usize;
    let cols = read_u32(&bytes, 12, path)? as usize;
    let pixels = n * rows * cols;
    let data = bytes.get(16..16 + pixels).ok_or_else(|| {
        Error::Data(format!(
            "{}: expected {pixels} pixel bytes, found {}",
            path.display(),
            bytes.len().saturating_sub(16)
        ))
    })?;
    let values: Vec<f64> = data.iter().map(|&b| b as f64 / 255.0).collect();
    Array2::from_shape_vec((n, rows * cols), values).map_err(|e| Error::Data(e.to_string()))
}

/// Load a label file (magic 0x00000801) as class indices.
pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_all(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic {magic:#010x}, expected {LABELS_MAGIC:#010x} for labels",
            path.display()
        )));
    }
    let n = read_u32(&bytes, 4, path)? as usize;
    let data = bytes.get(8..8 + n).ok_or_else(|| {
        Error::Data(format!(
            "{}: expected {n} label bytes, found {}",
            path.display(),
            bytes.len().saturating_sub(8)
        ))
    })?;
    Ok(data.to_vec())
}

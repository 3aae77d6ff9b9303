//! IDX container files (big-endian: two zero bytes, a type code, the rank,
//! one `u32` per dimension, then the payload).

use std::path::Path;

use super::{Dataset, LearningError};

const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn malformed(offset: usize, reason: impl Into<String>) -> LearningError {
    LearningError::MalformedFile {
        offset,
        reason: reason.into(),
    }
}

/// Parses an unsigned-byte IDX tensor.
pub fn read_idx(bytes: &[u8]) -> Result<IdxTensor, LearningError> {
    if bytes.len() < 4 {
        return Err(malformed(bytes.len(), "truncated magic number"));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(malformed(0, "magic number must start with two zero bytes"));
    }
    if bytes[2] != UNSIGNED_BYTE {
        return Err(malformed(2, format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(malformed(3, "rank must be at least 1"));
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(malformed(bytes.len(), "truncated dimension list"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| malformed(4, "dimension product overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < len {
        return Err(malformed(bytes.len(), format!("payload has {} of {len} bytes", payload.len())));
    }
    if payload.len() > len {
        return Err(malformed(header + len, "trailing bytes after payload"));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>, LearningError> {
    std::fs::read(path).map_err(|source| LearningError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Image and label files as a dataset with features scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, LearningError> {
    let img = read_idx(&read_file(images)?)?;
    let lab = read_idx(&read_file(labels)?)?;
    if lab.dims.len() != 1 {
        return Err(malformed(3, "label file must have rank 1"));
    }
    let items = img.dims[0];
    if items == 0 {
        return Err(LearningError::InsufficientData { needed: 1, found: 0 });
    }
    if lab.dims[0] != items {
        return Err(malformed(4, format!("{} labels for {items} images", lab.dims[0])));
    }
    let width: usize = img.dims[1..].iter().product();
    let features = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    Dataset::new(features, labels, width.max(1), n_classes)
}

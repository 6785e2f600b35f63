//! The IDX format used by MNIST and Fashion-MNIST.
//!
//! A file starts with a big-endian magic number: two zero bytes, a type code
//! (`0x08` = unsigned byte) and the number of dimensions. Each dimension size
//! follows as a big-endian `u32`, then the raw data. Images use three
//! dimensions (`n, rows, cols`, magic `0x00000803`), labels one (`n`, magic
//! `0x00000801`).

use std::path::Path;

use super::{DataError, ImageShape, LabeledDataset};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

/// Parses an unsigned-byte IDX payload with the expected number of
/// dimensions. Returns the dimension sizes and the data bytes.
pub fn parse_idx<'a>(
    bytes: &'a [u8],
    expected_dims: u8,
    what: &'static str,
) -> Result<(Vec<usize>, &'a [u8]), DataError> {
    let err = |offset: usize, message: String| DataError::Idx { what, offset, message };
    if bytes.len() < 4 {
        return Err(err(bytes.len(), "truncated magic number".into()));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(0, format!("bad magic {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != UBYTE {
        return Err(err(2, format!("unsupported type code 0x{:02x}", bytes[2])));
    }
    if bytes[3] != expected_dims {
        return Err(err(
            3,
            format!("expected {expected_dims} dimensions, found {}", bytes[3]),
        ));
    }
    let header = 4 + 4 * expected_dims as usize;
    if bytes.len() < header {
        return Err(err(bytes.len(), "truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let need: usize = dims.iter().product();
    let body = &bytes[header..];
    if body.len() < need {
        return Err(err(
            header + body.len(),
            format!("truncated data: need {need} bytes, found {}", body.len()),
        ));
    }
    Ok((dims, &body[..need]))
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Loads an image/label IDX pair, scaling pixel bytes to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let img_bytes = read(images_path)?;
    let lbl_bytes = read(labels_path)?;
    let (dims, pixels) = parse_idx(&img_bytes, 3, "images")?;
    let (ldims, labels) = parse_idx(&lbl_bytes, 1, "labels")?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if ldims[0] != n {
        return Err(DataError::Invalid(format!("{n} images but {} labels", ldims[0])));
    }
    if n == 0 || rows == 0 || cols == 0 {
        return Err(DataError::Invalid("empty IDX dataset".into()));
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(Tensor::new(vec![n, rows * cols], data)?, labels, classes, name)?.with_image_shape(ImageShape {
        channels: 1,
        height: rows,
        width: cols,
    })
}

/// Encodes `n` images of `rows × cols` bytes.
pub fn encode_idx_images(n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols);
    let mut out = vec![0, 0, UBYTE, 3];
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, 1];
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

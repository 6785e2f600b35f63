//! CIFAR-10 binary batches: each record is one label byte followed by 3072
//! pixel bytes (1024 red, 1024 green, 1024 blue; row-major 32×32 planes).

use std::path::Path;

use super::{DataError, ImageShape, LabeledDataset};
use crate::tensor::Tensor;

const RECORD: usize = 1 + 3072;

pub fn load_cifar_batch(path: &Path) -> Result<LabeledDataset, DataError> {
    let bytes = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cifar(&bytes, &path.display().to_string())
}

pub(crate) fn parse_cifar(bytes: &[u8], name: &str) -> Result<LabeledDataset, DataError> {
    if bytes.is_empty() {
        return Err(DataError::Cifar {
            record: 0,
            offset: 0,
            message: "empty file".into(),
        });
    }
    if !bytes.len().is_multiple_of(RECORD) {
        let record = bytes.len() / RECORD;
        return Err(DataError::Cifar {
            record,
            offset: record * RECORD,
            message: format!("truncated record ({} of {RECORD} bytes)", bytes.len() % RECORD),
        });
    }
    let n = bytes.len() / RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for (r, rec) in bytes.chunks(RECORD).enumerate() {
        if rec[0] >= 10 {
            return Err(DataError::Cifar {
                record: r,
                offset: r * RECORD,
                message: format!("label {} outside 0..10", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    LabeledDataset::new(Tensor::new(vec![n, 3072], data)?, labels, 10, name)?.with_image_shape(ImageShape {
        channels: 3,
        height: 32,
        width: 32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records() {
        let mut bytes = vec![0u8; 2 * RECORD];
        bytes[0] = 4;
        bytes[1] = 255;
        bytes[RECORD] = 9;
        let ds = parse_cifar(&bytes, "b").unwrap();
        assert_eq!(ds.labels(), &[4, 9]);
        assert_eq!(ds.samples().row(0)[0], 1.0);
        assert_eq!(ds.image_shape().unwrap().channels, 3);
    }

    #[test]
    fn truncated_and_bad_label() {
        let bytes = vec![0u8; RECORD + 5];
        assert!(matches!(
            parse_cifar(&bytes, "b"),
            Err(DataError::Cifar { record: 1, offset, .. }) if offset == RECORD
        ));
        let mut bytes = vec![0u8; RECORD];
        bytes[0] = 12;
        assert!(parse_cifar(&bytes, "b").is_err());
    }
}

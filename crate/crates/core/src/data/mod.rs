//! Datasets, loaders and client partitioning.

mod cifar;
mod csv_io;
mod idx;
mod partition;
mod toy;
mod transform;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

pub use cifar::load_cifar_batch;
pub use csv_io::{load_csv, write_csv};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use partition::{dirichlet_partition, split_train_val, PartitionPlan};
pub use toy::{gaussian_blobs, glyph_digits, two_moons};
pub use transform::downsample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("IDX {what} at byte {offset}: {message}")]
    Idx {
        what: &'static str,
        offset: usize,
        message: String,
    },
    #[error("CIFAR record {record} at byte {offset}: {message}")]
    Cifar {
        record: usize,
        offset: usize,
        message: String,
    },
    #[error("CSV: {0}")]
    Csv(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Layout of image samples stored as flat rows (channel-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub fn gray(side: usize) -> Self {
        Self {
            channels: 1,
            height: side,
            width: side,
        }
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Samples (`n × d`) with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Tensor,
    labels: Vec<usize>,
    n_classes: usize,
    name: String,
    image: Option<ImageShape>,
}

impl LabeledDataset {
    pub fn new(
        samples: Tensor,
        labels: Vec<usize>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self, DataError> {
        if samples.shape().len() != 2 {
            return Err(DataError::Invalid(format!(
                "samples must be a matrix, got shape {:?}",
                samples.shape()
            )));
        }
        if samples.rows() != labels.len() {
            return Err(DataError::Invalid(format!(
                "{} samples but {} labels",
                samples.rows(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= n_classes) {
            return Err(DataError::Invalid(format!(
                "label {y} at row {i} outside [0, {n_classes})"
            )));
        }
        if !samples.is_finite() {
            return Err(DataError::Invalid("non-finite sample value".into()));
        }
        Ok(Self {
            samples,
            labels,
            n_classes,
            name: name.into(),
            image: None,
        })
    }

    /// Attaches an image layout; its pixel count must equal the sample width.
    pub fn with_image_shape(mut self, shape: ImageShape) -> Result<Self, DataError> {
        if shape.pixels() != self.dim() {
            return Err(DataError::Invalid(format!(
                "image shape {shape:?} has {} pixels, samples have {}",
                shape.pixels(),
                self.dim()
            )));
        }
        self.image = Some(shape);
        Ok(self)
    }

    pub fn samples(&self) -> &Tensor {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Rows at `indices`, in that order. Panics on out-of-range indices.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            name: self.name.clone(),
            image: self.image,
        }
    }

    /// Concatenates datasets sharing width and class count.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset, DataError> {
        let first = parts
            .first()
            .ok_or_else(|| DataError::Invalid("nothing to concatenate".into()))?;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.dim() != first.dim() || p.n_classes != first.n_classes {
                return Err(DataError::Invalid("incompatible datasets".into()));
            }
            data.extend_from_slice(p.samples.data());
            labels.extend_from_slice(&p.labels);
        }
        let samples = Tensor::from_raw(vec![labels.len(), first.dim()], data);
        Ok(LabeledDataset {
            samples,
            labels,
            n_classes: first.n_classes,
            name: first.name.clone(),
            image: first.image,
        })
    }

    /// Row indices grouped by class, ascending within each class.
    pub fn indices_by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &y) in self.labels.iter().enumerate() {
            out.entry(y).or_default().push(i);
        }
        out
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LabeledDataset {
        LabeledDataset::new(
            Tensor::new(vec![3, 2], vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap(),
            vec![0, 2, 0],
            3,
            "tiny",
        )
        .unwrap()
    }

    #[test]
    fn validation() {
        assert!(LabeledDataset::new(Tensor::zeros(vec![2, 2]), vec![0], 2, "x").is_err());
        assert!(LabeledDataset::new(Tensor::zeros(vec![2, 2]), vec![0, 2], 2, "x").is_err());
        assert!(tiny().with_image_shape(ImageShape::gray(2)).is_err());
    }

    #[test]
    fn subset_and_grouping() {
        let d = tiny();
        let s = d.subset(&[2, 1]);
        assert_eq!(s.labels(), &[0, 2]);
        assert_eq!(s.samples().row(0), &[0.4, 0.5]);
        assert_eq!(d.indices_by_class()[&0], vec![0, 2]);
        assert_eq!(d.class_counts(), vec![2, 0, 1]);
        let c = LabeledDataset::concat(&[&d, &s]).unwrap();
        assert_eq!(c.len(), 5);
    }
}

use super::{DataError, ImageShape, LabeledDataset};
use crate::tensor::Tensor;

/// Block-mean pooling of image samples by `factor` along both axes.
pub fn downsample(ds: &LabeledDataset, factor: usize) -> Result<LabeledDataset, DataError> {
    let shape = ds
        .image_shape()
        .ok_or_else(|| DataError::Invalid("downsampling needs an image layout".into()))?;
    if factor == 0 || shape.height % factor != 0 || shape.width % factor != 0 {
        return Err(DataError::Invalid(format!(
            "{}×{} images are not divisible by factor {factor}",
            shape.height, shape.width
        )));
    }
    if factor == 1 {
        return Ok(ds.clone());
    }
    let (h, w) = (shape.height / factor, shape.width / factor);
    let area = (factor * factor) as f64;
    let mut data = Vec::with_capacity(ds.len() * shape.channels * h * w);
    for i in 0..ds.len() {
        let row = ds.samples().row(i);
        for c in 0..shape.channels {
            let plane = &row[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
            for by in 0..h {
                for bx in 0..w {
                    let mut s = 0.0;
                    for dy in 0..factor {
                        let y = by * factor + dy;
                        for dx in 0..factor {
                            s += plane[y * shape.width + bx * factor + dx];
                        }
                    }
                    data.push(s / area);
                }
            }
        }
    }
    let samples = Tensor::new(vec![ds.len(), shape.channels * h * w], data)?;
    LabeledDataset::new(samples, ds.labels().to_vec(), ds.n_classes(), ds.name())?.with_image_shape(ImageShape {
        channels: shape.channels,
        height: h,
        width: w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(side: usize, pixels: Vec<f64>) -> LabeledDataset {
        LabeledDataset::new(Tensor::new(vec![1, side * side], pixels).unwrap(), vec![1], 2, "img")
            .unwrap()
            .with_image_shape(ImageShape::gray(side))
            .unwrap()
    }

    #[test]
    fn factor_one_is_identity() {
        let d = image(2, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(downsample(&d, 1).unwrap(), d);
    }

    #[test]
    fn block_means_on_hand_case() {
        // 4×4 image; the top-left 2×2 block averages 0,1,4,5 over 16.
        let d = image(4, (0..16).map(|v| v as f64 / 16.0).collect());
        let out = downsample(&d, 2).unwrap();
        assert_eq!(out.image_shape(), Some(ImageShape::gray(2)));
        let expect = [2.5, 4.5, 10.5, 12.5].map(|v| v / 16.0);
        for (a, b) in out.samples().data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(out.labels(), &[1]);
    }

    #[test]
    fn constant_image_stays_constant_and_28_to_14() {
        let d = image(28, vec![0.3; 784]);
        let out = downsample(&d, 2).unwrap();
        assert_eq!(out.dim(), 196);
        assert!(out.samples().data().iter().all(|v| (v - 0.3).abs() < 1e-15));
        assert!(downsample(&d, 3).is_err());
    }
}

//! Image batches and labeled datasets. Pixels are stored as `f64` in `[0, 1]`
//! in NCHW order.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

/// A batch of images, shape `(n, channels, height, width)`, flat NCHW storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageBatch {
    pub data: Vec<f64>,
    pub n: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageBatch {
    pub fn zeros(n: usize, channels: usize, height: usize, width: usize) -> Self {
        ImageBatch {
            data: vec![0.0; n * channels * height * width],
            n,
            channels,
            height,
            width,
        }
    }

    pub fn from_data(
        data: Vec<f64>,
        n: usize,
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        if data.len() != n * channels * height * width {
            return Err(SimError::ShapeMismatch(format!(
                "image data length {} does not match shape ({n}, {channels}, {height}, {width})",
                data.len()
            )));
        }
        Ok(ImageBatch {
            data,
            n,
            channels,
            height,
            width,
        })
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let len = self.image_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.image_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Single-image batch borrowing image `i`.
    pub fn single(&self, i: usize) -> ImageBatch {
        ImageBatch {
            data: self.image(i).to_vec(),
            n: 1,
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    /// New batch keeping images at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> ImageBatch {
        let len = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        ImageBatch {
            data,
            n: indices.len(),
            channels: self.channels,
            height: self.height,
            width: self.width,
        }
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn same_shape(&self, other: &ImageBatch) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }
}

/// Images plus integer class labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub images: ImageBatch,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabeledDataset {
    pub fn new(images: ImageBatch, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.n != labels.len() {
            return Err(SimError::ShapeMismatch(format!(
                "{} images but {} labels",
                images.n,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(SimError::MalformedData(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset at `indices`, preserving order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Indices of every sample with label `class`.
    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }

    /// Distinct classes present, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.num_classes).filter(|&c| seen[c]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_preserves_order_and_shape() {
        let mut b = ImageBatch::zeros(3, 1, 2, 2);
        for i in 0..3 {
            b.image_mut(i).fill(i as f64 * 0.1);
        }
        let s = b.select(&[2, 0]);
        assert_eq!(s.n, 2);
        assert_eq!(s.image(0)[0], 0.2);
        assert_eq!(s.image(1)[0], 0.0);
    }

    #[test]
    fn label_bounds_enforced() {
        let b = ImageBatch::zeros(2, 1, 1, 1);
        assert!(LabeledDataset::new(b.clone(), vec![0, 5], 3).is_err());
        assert!(LabeledDataset::new(b, vec![0, 2], 3).is_ok());
    }

    #[test]
    fn class_index_lookup() {
        let b = ImageBatch::zeros(4, 1, 1, 1);
        let d = LabeledDataset::new(b, vec![1, 0, 1, 2], 3).unwrap();
        assert_eq!(d.class_indices(1), vec![0, 2]);
        assert_eq!(d.present_classes(), vec![0, 1, 2]);
    }
}

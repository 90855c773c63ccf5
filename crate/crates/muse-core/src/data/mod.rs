//! Dataset ingestion and synthetic distributions.

pub mod augment;
pub mod cifar;
pub mod idx;
pub mod synthetic;

use std::path::Path;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use synthetic::{corr_gaussian_batch, generate_glyphs, GaussianPairSpec, SynthGlyphs};

/// Images in [0,1] scaled to zero mean / unit variance per channel, with the
/// normalization constants recorded so the mapping stays invertible.
pub struct LabeledDataset {
    pub images: Vec<f32>,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LabeledDataset {
    fn from_raw_u8(
        pixels: &[u8],
        labels: &[u8],
        channels: usize,
        height: usize,
        width: usize,
    ) -> Result<Self> {
        let sample = channels * height * width;
        let n = labels.len();
        if n == 0 {
            return Err(Error::Format("dataset is empty".into()));
        }
        if pixels.len() != n * sample {
            return Err(Error::Format(format!(
                "pixel payload {} does not match {} samples of {} values",
                pixels.len(),
                n,
                sample
            )));
        }
        let mut images: Vec<f32> = pixels.iter().map(|&b| b as f32 / 255.0).collect();

        // dataset-wide per-channel constants
        let mut mean = vec![0.0f64; channels];
        let mut std = vec![0.0f64; channels];
        let plane = height * width;
        for i in 0..n {
            for c in 0..channels {
                let base = (i * channels + c) * plane;
                for &v in &images[base..base + plane] {
                    mean[c] += v as f64;
                }
            }
        }
        let count = (n * plane) as f64;
        for m in mean.iter_mut() {
            *m /= count;
        }
        for i in 0..n {
            for c in 0..channels {
                let base = (i * channels + c) * plane;
                for &v in &images[base..base + plane] {
                    let d = v as f64 - mean[c];
                    std[c] += d * d;
                }
            }
        }
        let std: Vec<f32> = std
            .iter()
            .map(|&s| ((s / count).sqrt() as f32).max(1e-6))
            .collect();
        let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();
        for i in 0..n {
            for c in 0..channels {
                let base = (i * channels + c) * plane;
                for v in &mut images[base..base + plane] {
                    *v = (*v - mean[c]) / std[c];
                }
            }
        }

        let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        let num_classes = labels.iter().max().copied().unwrap_or(0) + 1;
        Ok(LabeledDataset {
            images,
            channels,
            height,
            width,
            labels,
            num_classes,
            mean,
            std,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Undo normalization (for inspection and round-trip checks).
    pub fn denormalize(&self, value: f32, channel: usize) -> f32 {
        value * self.std[channel] + self.mean[channel]
    }

    /// Deterministic subset: the first `per_class` examples of each class in
    /// file order.
    pub fn subset_per_class(&self, per_class: usize) -> LabeledDataset {
        let sample = self.sample_len();
        let mut taken = vec![0usize; self.num_classes];
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for (i, &l) in self.labels.iter().enumerate() {
            if taken[l] < per_class {
                taken[l] += 1;
                images.extend_from_slice(&self.images[i * sample..(i + 1) * sample]);
                labels.push(l);
            }
        }
        LabeledDataset {
            images,
            channels: self.channels,
            height: self.height,
            width: self.width,
            labels,
            num_classes: self.num_classes,
            mean: self.mean.clone(),
            std: self.std.clone(),
        }
    }

    /// Assemble a batch tensor from sample indices.
    pub fn batch<E: Elem>(&self, indices: &[usize]) -> (Tensor<E>, Vec<usize>) {
        let sample = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend(
                self.images[i * sample..(i + 1) * sample]
                    .iter()
                    .map(|&v| E::from_f64(v as f64)),
            );
            labels.push(self.labels[i]);
        }
        let t = Tensor::new(
            data,
            &[indices.len(), self.channels, self.height, self.width],
        )
        .expect("batch shape consistent");
        (t, labels)
    }

    /// Raw (already augmented or not) f32 rows for the given indices.
    pub fn raw_rows(&self, indices: &[usize]) -> Vec<f32> {
        let sample = self.sample_len();
        let mut data = Vec::with_capacity(indices.len() * sample);
        for &i in indices {
            data.extend_from_slice(&self.images[i * sample..(i + 1) * sample]);
        }
        data
    }
}

/// Load an IDX image/label pair (big-endian, magic-tagged).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let pair = idx::read_idx_pair(images_path, labels_path)?;
    LabeledDataset::from_raw_u8(&pair.pixels, &pair.labels, 1, pair.rows, pair.cols)
}

/// Load a CIFAR binary file; the 10/100 variant is inferred from the row
/// stride, `coarse` selects coarse labels on CIFAR-100.
pub fn load_cifar_bin(path: &Path, coarse: bool) -> Result<LabeledDataset> {
    let raw = cifar::read_cifar_bin(path, coarse)?;
    LabeledDataset::from_raw_u8(&raw.pixels, &raw.labels, 3, 32, 32)
}

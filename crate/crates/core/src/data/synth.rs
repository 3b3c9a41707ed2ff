//! Synthetic grayscale dataset with block-pattern class prototypes.
//!
//! Each class lights up a distinct triple of 7x7 blocks on a 4x4 grid; the
//! bottom-right block is never used so the trigger corner stays dark. Samples
//! are prototypes with per-sample intensity jitter and pixel noise. This
//! gives a quickly learnable 28x28 task for desk-scale experiments without
//! shipping external data.

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::image::{ImageBatch, LabeledDataset};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    /// Pixel noise standard deviation.
    #[serde(default = "default_noise")]
    pub noise: f64,
}

fn default_classes() -> usize {
    10
}

fn default_noise() -> f64 {
    0.12
}

const SIDE: usize = 28;
const BLOCK: usize = 7;
const GRID: usize = 4;
/// Bottom-right block stays dark for the trigger.
const USABLE_BLOCKS: usize = GRID * GRID - 1;

fn class_blocks(class: usize) -> [usize; 3] {
    [
        class % USABLE_BLOCKS,
        (class + 3) % USABLE_BLOCKS,
        (class + 7) % USABLE_BLOCKS,
    ]
}

fn prototype(class: usize) -> Vec<f64> {
    let mut img = vec![0.0; SIDE * SIDE];
    for block in class_blocks(class) {
        let (by, bx) = (block / GRID, block % GRID);
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                img[(by * BLOCK + y) * SIDE + (bx * BLOCK + x)] = 0.75;
            }
        }
    }
    img
}

/// Generates a labeled 28x28x1 dataset with `spec.n_samples` samples cycling
/// through the classes. Deterministic given the seed.
pub fn synthetic_dataset(spec: &SyntheticSpec, rng_seed: u64) -> Result<LabeledDataset> {
    if spec.n_samples == 0 {
        return Err(SimError::config(
            "synthetic dataset needs at least one sample",
        ));
    }
    if spec.num_classes < 2 || spec.num_classes > USABLE_BLOCKS {
        return Err(SimError::config(format!(
            "synthetic class count must be in [2, {USABLE_BLOCKS}]"
        )));
    }
    if spec.noise < 0.0 {
        return Err(SimError::config("noise must be non-negative"));
    }
    let mut rng = rng::stream(rng_seed, "synthetic-data", &[]);
    let noise = if spec.noise > 0.0 {
        Some(Normal::new(0.0, spec.noise).map_err(|e| SimError::config(e.to_string()))?)
    } else {
        None
    };
    let prototypes: Vec<Vec<f64>> = (0..spec.num_classes).map(prototype).collect();

    let mut images = ImageBatch::zeros(spec.n_samples, 1, SIDE, SIDE);
    let mut labels = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let class = i % spec.num_classes;
        labels.push(class);
        let gain = rng.random_range(0.85..1.15);
        let img = images.image_mut(i);
        for (px, proto) in img.iter_mut().zip(&prototypes[class]) {
            let mut v = proto * gain;
            if let Some(dist) = &noise {
                v += dist.sample(&mut rng);
            }
            *px = v.clamp(0.0, 1.0);
        }
    }
    LabeledDataset::new(images, labels, spec.num_classes)
}

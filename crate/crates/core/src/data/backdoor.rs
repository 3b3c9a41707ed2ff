//! Backdoor trigger injection: pixel-pattern stamping, batch poisoning, and
//! backdoor test-set construction.

use rand::seq::index;
use rand::RngExt;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::image::{ImageBatch, LabeledDataset};
use crate::rng::{self, SimRng};

use super::{BackdoorKind, BackdoorSpec};

/// Semantic carrier samples resolved from a parent dataset: the attacker's
/// training carriers and the held-out carriers used to build the test set.
#[derive(Debug, Clone)]
pub struct CarrierSets {
    pub train: LabeledDataset,
    pub held_out: LabeledDataset,
}

impl CarrierSets {
    /// Splits the carrier ids by the spec's (train, test) sizes, in id-list
    /// order.
    pub fn from_spec(spec: &BackdoorSpec, parent: &LabeledDataset) -> Result<CarrierSets> {
        let (n_train, n_test) = spec.semantic_train_test_split;
        if n_train + n_test != spec.semantic_sample_ids.len() {
            return Err(SimError::config(
                "semantic split does not match carrier id count",
            ));
        }
        if spec
            .semantic_sample_ids
            .iter()
            .any(|&ix| ix >= parent.len())
        {
            return Err(SimError::config("semantic carrier id out of dataset range"));
        }
        let train_ids = &spec.semantic_sample_ids[..n_train];
        let test_ids = &spec.semantic_sample_ids[n_train..];
        Ok(CarrierSets {
            train: parent.select(train_ids),
            held_out: parent.select(test_ids),
        })
    }
}

/// Stamps a `trigger_size` x `trigger_size` white square onto the
/// bottom-right corner of every channel of every image in the batch. All
/// other pixels are untouched; idempotent.
pub fn apply_pixel_trigger(images: &mut ImageBatch, trigger_size: usize) -> Result<()> {
    let (h, w) = (images.height, images.width);
    if trigger_size > h.min(w) {
        return Err(SimError::config(format!(
            "trigger size {trigger_size} larger than {h}x{w} image"
        )));
    }
    let channels = images.channels;
    for i in 0..images.n {
        let img = images.image_mut(i);
        for c in 0..channels {
            for y in (h - trigger_size)..h {
                let row = (c * h + y) * w;
                for x in (w - trigger_size)..w {
                    img[row + x] = 1.0;
                }
            }
        }
    }
    Ok(())
}

/// Poisons exactly `spec.poison_per_batch` randomly chosen images of the
/// batch: pixel kind stamps the trigger, semantic kind substitutes a training
/// carrier drawn with replacement. Poisoned images are relabeled to the
/// target class, perturbed per-pixel by Gaussian noise of `noise_sigma`, and
/// clamped back to [0, 1]. The rest of the batch is untouched.
///
/// With `poison_per_batch == 0` the batch passes through without consuming
/// any randomness.
pub fn poison_batch(
    images: &ImageBatch,
    labels: &[usize],
    spec: &BackdoorSpec,
    carriers: Option<&CarrierSets>,
    rng: &mut SimRng,
) -> Result<(ImageBatch, Vec<usize>)> {
    if spec.poison_per_batch == 0 {
        return Ok((images.clone(), labels.to_vec()));
    }
    if spec.poison_per_batch > images.n {
        return Err(SimError::config(format!(
            "poison_per_batch {} exceeds batch size {}",
            spec.poison_per_batch, images.n
        )));
    }
    let train_carriers = match spec.kind {
        BackdoorKind::Semantic => {
            let sets = carriers.ok_or(SimError::EmptyInput("semantic attack without carriers"))?;
            if sets.train.is_empty() {
                return Err(SimError::EmptyInput(
                    "semantic carrier training set is empty",
                ));
            }
            if !sets.train.images.same_shape(images) {
                return Err(SimError::ShapeMismatch(
                    "carrier images do not match batch shape".into(),
                ));
            }
            Some(&sets.train)
        }
        BackdoorKind::PixelPattern => None,
    };

    let mut out_images = images.clone();
    let mut out_labels = labels.to_vec();
    let mut slots = index::sample(rng, images.n, spec.poison_per_batch).into_vec();
    slots.sort_unstable();

    let noise = if spec.noise_sigma > 0.0 {
        Some(Normal::new(0.0, spec.noise_sigma).map_err(|e| SimError::config(e.to_string()))?)
    } else {
        None
    };

    for &slot in &slots {
        match spec.kind {
            BackdoorKind::PixelPattern => {
                let mut one = out_images.single(slot);
                apply_pixel_trigger(&mut one, spec.trigger_size)?;
                out_images.image_mut(slot).copy_from_slice(one.image(0));
            }
            BackdoorKind::Semantic => {
                let train = train_carriers.unwrap();
                let pick = rng.random_range(0..train.len());
                out_images
                    .image_mut(slot)
                    .copy_from_slice(train.images.image(pick));
            }
        }
        out_labels[slot] = spec.target_class;
        if let Some(dist) = &noise {
            for px in out_images.image_mut(slot) {
                *px = (*px + dist.sample(rng)).clamp(0.0, 1.0);
            }
        }
    }
    Ok((out_images, out_labels))
}

/// Builds the backdoor test set.
///
/// Pixel kind: triggered copies of every source image, labeled with the
/// target class. Semantic kind: one randomly flipped and randomly cropped
/// copy (4-pixel reflective padding) of each held-out carrier, labeled with
/// the target class. Deterministic given the seed.
pub fn build_backdoor_testset(
    spec: &BackdoorSpec,
    source: &LabeledDataset,
    carriers: Option<&CarrierSets>,
    rng_seed: u64,
) -> Result<LabeledDataset> {
    match spec.kind {
        BackdoorKind::PixelPattern => {
            if source.is_empty() {
                return Err(SimError::EmptyInput("backdoor test set from empty source"));
            }
            let mut images = source.images.clone();
            apply_pixel_trigger(&mut images, spec.trigger_size)?;
            let n = images.n;
            LabeledDataset::new(images, vec![spec.target_class; n], source.num_classes)
        }
        BackdoorKind::Semantic => {
            let sets = carriers.ok_or(SimError::EmptyInput("semantic attack without carriers"))?;
            if sets.held_out.is_empty() {
                return Err(SimError::EmptyInput("no held-out semantic carriers"));
            }
            let mut rng = rng::stream(rng_seed, "backdoor-testset", &[]);
            let src = &sets.held_out.images;
            let mut images = ImageBatch::zeros(src.n, src.channels, src.height, src.width);
            for i in 0..src.n {
                let flip = rng.random_range(0..2u8) == 1;
                let dy = rng.random_range(0..=2 * CROP_PAD);
                let dx = rng.random_range(0..=2 * CROP_PAD);
                let shape = (src.channels, src.height, src.width);
                augment_into(src.image(i), images.image_mut(i), shape, flip, dy, dx);
            }
            LabeledDataset::new(
                images,
                vec![spec.target_class; src.n],
                sets.held_out.num_classes,
            )
        }
    }
}

const CROP_PAD: usize = 4;

/// Reflective-pad by `CROP_PAD`, optionally mirror horizontally, then crop an
/// (h, w) window at offset (dy, dx).
fn augment_into(
    src: &[f64],
    dst: &mut [f64],
    shape: (usize, usize, usize),
    flip: bool,
    dy: usize,
    dx: usize,
) {
    let (channels, h, w) = shape;
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * n - 2 - i;
        }
        i as usize
    };
    for c in 0..channels {
        for y in 0..h {
            let sy = reflect(y as isize + dy as isize - CROP_PAD as isize, h);
            for x in 0..w {
                let raw_x = if flip { w - 1 - x } else { x };
                let sx = reflect(raw_x as isize + dx as isize - CROP_PAD as isize, w);
                dst[(c * h + y) * w + x] = src[(c * h + sy) * w + sx];
            }
        }
    }
}

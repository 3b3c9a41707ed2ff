//! Validation seed images held by the server.

use rand::seq::index;
use rand::seq::SliceRandom;

use crate::error::{Result, SimError};
use crate::image::LabeledDataset;
use crate::rng;

/// Draws `count` validation seed images spread over `num_classes_used`
/// classes chosen uniformly from those present. The count is allocated
/// evenly across the chosen classes (remainder to the first classes in the
/// drawn order); images are sampled without replacement within a class.
///
/// Deterministic given the seed; the harness calls this once per run and
/// reuses the same set every round.
pub fn sample_validation_seeds(
    dataset: &LabeledDataset,
    count: usize,
    num_classes_used: usize,
    rng_seed: u64,
) -> Result<LabeledDataset> {
    let present = dataset.present_classes();
    if num_classes_used == 0 || num_classes_used > dataset.num_classes {
        return Err(SimError::config(format!(
            "num_classes_used {num_classes_used} out of range [1, {}]",
            dataset.num_classes
        )));
    }
    if count < num_classes_used {
        return Err(SimError::config(format!(
            "seed count {count} below class count {num_classes_used}"
        )));
    }
    if present.len() < num_classes_used {
        return Err(SimError::config(format!(
            "only {} classes have samples, need {num_classes_used}",
            present.len()
        )));
    }

    let mut rng = rng::stream(rng_seed, "validation-seeds", &[]);
    let mut classes = present;
    classes.shuffle(&mut rng);
    classes.truncate(num_classes_used);

    let base = count / num_classes_used;
    let extra = count % num_classes_used;
    let mut chosen = Vec::with_capacity(count);
    for (i, &class) in classes.iter().enumerate() {
        let quota = base + usize::from(i < extra);
        let pool = dataset.class_indices(class);
        if pool.is_empty() {
            return Err(SimError::EmptyInput("chosen class has no samples"));
        }
        if quota > pool.len() {
            return Err(SimError::config(format!(
                "class {class} has {} samples, cannot draw {quota} seeds",
                pool.len()
            )));
        }
        for ix in index::sample(&mut rng, pool.len(), quota) {
            chosen.push(pool[ix]);
        }
    }
    chosen.sort_unstable();
    Ok(dataset.select(&chosen))
}

//! Differentiable classifiers: the contract the defense and the trainers
//! program against, plus a small reference network family implemented with
//! explicit forward/backward passes in `f64`.

mod network;

pub mod arch;

pub use network::{LayerDef, Network};

use crate::error::Result;
use crate::image::ImageBatch;
use crate::params::{LayoutId, ParamVector};

/// A classifier exposing softmax predictions and exact gradients with respect
/// to both parameters and input pixels. Implementations are read-only under
/// `&self`; a single instance is not meant for concurrent mutation.
pub trait DifferentiableClassifier: Send + Sync {
    /// Identifies the parameter layout this model flattens.
    fn layout_id(&self) -> &LayoutId;

    fn num_classes(&self) -> usize;

    /// Expected input shape `(channels, height, width)`.
    fn input_shape(&self) -> (usize, usize, usize);

    /// Snapshot of all parameters as a flat vector.
    fn parameters(&self) -> ParamVector;

    /// Replaces all parameters. Fails on layout mismatch.
    fn set_parameters(&mut self, params: &ParamVector) -> Result<()>;

    /// Per-image softmax probabilities; each row is non-negative and sums
    /// to 1 up to rounding.
    fn predict_probs(&self, images: &ImageBatch) -> Vec<Vec<f64>>;

    /// Mean cross-entropy over the batch and its gradient w.r.t. parameters.
    fn ce_loss_and_grad(&self, images: &ImageBatch, labels: &[usize]) -> (f64, ParamVector);

    /// Gradient w.r.t. input pixels of `sum_j coeff . softmax(f(x_j))`,
    /// one gradient image per input image.
    fn input_gradient(&self, images: &ImageBatch, coeff: &[f64]) -> ImageBatch;

    /// Vector-Jacobian product through the softmax outputs: given the
    /// cotangent `dL/dprobs` per image of a scalar `L`, returns
    /// `(dL/dparams, dL/dpixels)`. This is the general form behind the two
    /// specialized gradient methods.
    fn output_vjp(
        &self,
        images: &ImageBatch,
        probs_cotangent: &[Vec<f64>],
    ) -> (ParamVector, ImageBatch);
}

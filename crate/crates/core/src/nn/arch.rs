//! Reference architectures.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::{LayerDef, Network};

/// Shipped model families, selectable from experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArch {
    /// Two strided 5x5 convolutions plus a fully connected output layer,
    /// for 28x28 single-channel inputs (channels 6 and 12).
    SmallCnn,
    /// A small residual network for 32x32x3 inputs.
    TinyResNet,
}

impl ModelArch {
    pub fn build(self, num_classes: usize) -> Result<Network> {
        match self {
            ModelArch::SmallCnn => small_cnn_28(num_classes),
            ModelArch::TinyResNet => tiny_resnet_32(num_classes),
        }
    }

    pub fn input_shape(self) -> (usize, usize, usize) {
        match self {
            ModelArch::SmallCnn => (1, 28, 28),
            ModelArch::TinyResNet => (3, 32, 32),
        }
    }
}

/// conv(1>6,k5,s2,p2) - relu - conv(6>12,k5,s2,p2) - relu - dense(588>C)
pub fn small_cnn_28(num_classes: usize) -> Result<Network> {
    Network::build(
        (1, 28, 28),
        &[
            LayerDef::Conv {
                out_c: 6,
                k: 5,
                stride: 2,
                pad: 2,
            },
            LayerDef::Relu,
            LayerDef::Conv {
                out_c: 12,
                k: 5,
                stride: 2,
                pad: 2,
            },
            LayerDef::Relu,
            LayerDef::Dense {
                out_dim: num_classes,
            },
        ],
    )
}

/// Two dense layers with a ReLU in between; used for gradient oracles and
/// anywhere a minimal differentiable classifier is enough.
pub fn tiny_mlp(
    input_shape: (usize, usize, usize),
    hidden: usize,
    num_classes: usize,
) -> Result<Network> {
    Network::build(
        input_shape,
        &[
            LayerDef::Dense { out_dim: hidden },
            LayerDef::Relu,
            LayerDef::Dense {
                out_dim: num_classes,
            },
        ],
    )
}

/// Small residual network for 32x32x3 inputs.
pub fn tiny_resnet_32(num_classes: usize) -> Result<Network> {
    Network::build(
        (3, 32, 32),
        &[
            LayerDef::Conv {
                out_c: 8,
                k: 3,
                stride: 1,
                pad: 1,
            },
            LayerDef::Relu,
            LayerDef::AvgPool { k: 2 },
            LayerDef::Residual(vec![
                LayerDef::Conv {
                    out_c: 8,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerDef::Relu,
                LayerDef::Conv {
                    out_c: 8,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
            ]),
            LayerDef::Relu,
            LayerDef::AvgPool { k: 2 },
            LayerDef::AvgPool { k: 2 },
            LayerDef::Dense {
                out_dim: num_classes,
            },
        ],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ImageBatch;
    use crate::nn::DifferentiableClassifier;
    use crate::rng::stream;

    #[test]
    fn small_cnn_shapes() {
        let mut net = small_cnn_28(10).unwrap();
        net.init_he(&mut stream(1, "arch", &[]));
        assert_eq!(net.num_classes(), 10);
        assert_eq!(net.input_shape(), (1, 28, 28));
        assert_eq!(
            net.param_count(),
            6 * 25 + 6 + 12 * 6 * 25 + 12 + 588 * 10 + 10
        );
        let probs = net.predict_probs(&ImageBatch::zeros(2, 1, 28, 28));
        assert_eq!(probs.len(), 2);
        assert_eq!(probs[0].len(), 10);
    }

    #[test]
    fn tiny_resnet_runs() {
        let mut net = tiny_resnet_32(10).unwrap();
        net.init_he(&mut stream(2, "arch", &[]));
        let probs = net.predict_probs(&ImageBatch::zeros(1, 3, 32, 32));
        let sum: f64 = probs[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }
}

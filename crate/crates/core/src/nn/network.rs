//! A small layered network with hand-written forward and backward passes.
//!
//! Parameters live in one flat `Vec<f64>`; each layer views a slice of it, so
//! the whole model maps 1:1 onto a `ParamVector` for FL communication.

use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::image::ImageBatch;
use crate::params::{LayoutId, ParamVector};
use crate::rng::SimRng;

use super::DifferentiableClassifier;

/// Architecture building block; channel/shape bookkeeping is inferred at
/// build time from the running output shape.
#[derive(Debug, Clone)]
pub enum LayerDef {
    Conv {
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    AvgPool {
        k: usize,
    },
    Dense {
        out_dim: usize,
    },
    /// Residual block: output = input + body(input). Body must preserve shape.
    Residual(Vec<LayerDef>),
}

#[derive(Debug, Clone)]
enum LayerKind {
    Conv {
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    AvgPool {
        k: usize,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Residual(Vec<LayerNode>),
}

#[derive(Debug, Clone)]
struct LayerNode {
    kind: LayerKind,
    in_shape: (usize, usize, usize),
    out_shape: (usize, usize, usize),
    offset: usize,
    param_len: usize,
}

/// Activation record for one layer during a taped forward pass.
struct TapeNode {
    /// The layer's input activation.
    input: Vec<f64>,
    /// Inner tape for residual bodies.
    inner: Vec<TapeNode>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<LayerNode>,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    params: Vec<f64>,
    layout: LayoutId,
}

fn shape_len(s: (usize, usize, usize)) -> usize {
    s.0 * s.1 * s.2
}

fn conv_out(h: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if h + 2 * pad < k {
        return Err(SimError::config(format!(
            "conv kernel {k} larger than padded input {h}+2*{pad}"
        )));
    }
    Ok((h + 2 * pad - k) / stride + 1)
}

fn build_nodes(
    defs: &[LayerDef],
    mut shape: (usize, usize, usize),
    offset: &mut usize,
    desc: &mut String,
) -> Result<Vec<LayerNode>> {
    let mut nodes = Vec::with_capacity(defs.len());
    for def in defs {
        let in_shape = shape;
        let node = match def {
            LayerDef::Conv {
                out_c,
                k,
                stride,
                pad,
            } => {
                if *stride == 0 || *k == 0 {
                    return Err(SimError::config("conv kernel and stride must be positive"));
                }
                let (in_c, h, w) = in_shape;
                let oh = conv_out(h, *k, *stride, *pad)?;
                let ow = conv_out(w, *k, *stride, *pad)?;
                shape = (*out_c, oh, ow);
                let param_len = out_c * in_c * k * k + out_c;
                desc.push_str(&format!("conv({in_c}>{out_c},k{k},s{stride},p{pad})|"));
                LayerNode {
                    kind: LayerKind::Conv {
                        in_c,
                        out_c: *out_c,
                        k: *k,
                        stride: *stride,
                        pad: *pad,
                    },
                    in_shape,
                    out_shape: shape,
                    offset: *offset,
                    param_len,
                }
            }
            LayerDef::Relu => {
                desc.push_str("relu|");
                LayerNode {
                    kind: LayerKind::Relu,
                    in_shape,
                    out_shape: shape,
                    offset: *offset,
                    param_len: 0,
                }
            }
            LayerDef::AvgPool { k } => {
                let (c, h, w) = in_shape;
                if *k == 0 || h % k != 0 || w % k != 0 {
                    return Err(SimError::config(format!(
                        "avgpool {k} must evenly divide spatial dims ({h}x{w})"
                    )));
                }
                shape = (c, h / k, w / k);
                desc.push_str(&format!("avgpool({k})|"));
                LayerNode {
                    kind: LayerKind::AvgPool { k: *k },
                    in_shape,
                    out_shape: shape,
                    offset: *offset,
                    param_len: 0,
                }
            }
            LayerDef::Dense { out_dim } => {
                let in_dim = shape_len(in_shape);
                shape = (*out_dim, 1, 1);
                let param_len = out_dim * in_dim + out_dim;
                desc.push_str(&format!("dense({in_dim}>{out_dim})|"));
                LayerNode {
                    kind: LayerKind::Dense {
                        in_dim,
                        out_dim: *out_dim,
                    },
                    in_shape,
                    out_shape: shape,
                    offset: *offset,
                    param_len,
                }
            }
            LayerDef::Residual(body) => {
                desc.push_str("res[");
                let inner = build_nodes(body, in_shape, offset, desc)?;
                desc.push_str("]|");
                let body_out = inner.last().map(|n| n.out_shape).unwrap_or(in_shape);
                if body_out != in_shape {
                    return Err(SimError::config(format!(
                        "residual body must preserve shape: {in_shape:?} -> {body_out:?}"
                    )));
                }
                // Offsets already advanced by the recursive build.
                return_residual(&mut nodes, inner, in_shape);
                continue;
            }
        };
        *offset += node.param_len;
        nodes.push(node);
    }
    Ok(nodes)
}

fn return_residual(
    nodes: &mut Vec<LayerNode>,
    inner: Vec<LayerNode>,
    shape: (usize, usize, usize),
) {
    let param_len = inner.iter().map(total_params).sum();
    let offset = inner.first().map(|n| n.offset).unwrap_or(0);
    nodes.push(LayerNode {
        kind: LayerKind::Residual(inner),
        in_shape: shape,
        out_shape: shape,
        offset,
        param_len,
    });
}

fn total_params(node: &LayerNode) -> usize {
    match &node.kind {
        LayerKind::Residual(inner) => inner.iter().map(total_params).sum(),
        _ => node.param_len,
    }
}

impl Network {
    /// Builds a network; the final layer's flat output length is the class
    /// count. The layout id encodes input shape and architecture, so models
    /// built from the same definition are FL-combinable.
    pub fn build(input_shape: (usize, usize, usize), defs: &[LayerDef]) -> Result<Network> {
        if defs.is_empty() {
            return Err(SimError::config("network needs at least one layer"));
        }
        let mut desc = format!("in({},{},{})|", input_shape.0, input_shape.1, input_shape.2);
        let mut offset = 0;
        let layers = build_nodes(defs, input_shape, &mut offset, &mut desc)?;
        let out_shape = layers.last().unwrap().out_shape;
        let num_classes = shape_len(out_shape);
        if num_classes < 2 {
            return Err(SimError::config(
                "classifier needs at least 2 output classes",
            ));
        }
        Ok(Network {
            layers,
            input_shape,
            num_classes,
            params: vec![0.0; offset],
            layout: LayoutId::new(desc),
        })
    }

    /// He-normal initialization of weights, zero biases.
    pub fn init_he(&mut self, rng: &mut SimRng) {
        fn init_nodes(nodes: &[LayerNode], params: &mut [f64], rng: &mut SimRng) {
            for node in nodes {
                match &node.kind {
                    LayerKind::Conv { in_c, out_c, k, .. } => {
                        let fan_in = in_c * k * k;
                        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                        let w_len = out_c * in_c * k * k;
                        for v in &mut params[node.offset..node.offset + w_len] {
                            *v = dist.sample(rng);
                        }
                        for v in &mut params[node.offset + w_len..node.offset + node.param_len] {
                            *v = 0.0;
                        }
                    }
                    LayerKind::Dense { in_dim, out_dim } => {
                        let dist = Normal::new(0.0, (2.0 / *in_dim as f64).sqrt()).unwrap();
                        let w_len = out_dim * in_dim;
                        for v in &mut params[node.offset..node.offset + w_len] {
                            *v = dist.sample(rng);
                        }
                        for v in &mut params[node.offset + w_len..node.offset + node.param_len] {
                            *v = 0.0;
                        }
                    }
                    LayerKind::Residual(inner) => init_nodes(inner, params, rng),
                    _ => {}
                }
            }
        }
        let mut params = std::mem::take(&mut self.params);
        init_nodes(&self.layers, &mut params, rng);
        self.params = params;
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, images: &ImageBatch) {
        debug_assert_eq!(
            (images.channels, images.height, images.width),
            self.input_shape,
            "input batch shape does not match network input shape"
        );
    }

    /// Logits for a single image; records the tape when requested.
    fn forward_one(&self, image: &[f64], tape: Option<&mut Vec<TapeNode>>) -> Vec<f64> {
        run_layers(&self.layers, image, &self.params, tape)
    }

    /// Softmax logits for one image.
    pub fn logits(&self, image: &[f64]) -> Vec<f64> {
        self.forward_one(image, None)
    }

    /// Backward from `grad_logits` for image `i` of a taped forward pass.
    fn backward_one(
        &self,
        tape: &[TapeNode],
        grad_logits: Vec<f64>,
        param_grads: Option<&mut [f64]>,
    ) -> Vec<f64> {
        backward_layers(&self.layers, tape, grad_logits, &self.params, param_grads)
    }
}

fn run_layers(
    layers: &[LayerNode],
    input: &[f64],
    params: &[f64],
    mut tape: Option<&mut Vec<TapeNode>>,
) -> Vec<f64> {
    let mut x = input.to_vec();
    for node in layers {
        let mut inner_tape = Vec::new();
        let out = match &node.kind {
            LayerKind::Conv { .. } => conv_forward(node, &x, params),
            LayerKind::Relu => x.iter().map(|&v| v.max(0.0)).collect(),
            LayerKind::AvgPool { k } => avgpool_forward(node.in_shape, *k, &x),
            LayerKind::Dense { in_dim, out_dim } => {
                dense_forward(params, node.offset, *in_dim, *out_dim, &x)
            }
            LayerKind::Residual(inner) => {
                let body = run_layers(
                    inner,
                    &x,
                    params,
                    tape.as_deref_mut().map(|_| &mut inner_tape),
                );
                x.iter().zip(&body).map(|(a, b)| a + b).collect()
            }
        };
        if let Some(t) = tape.as_deref_mut() {
            t.push(TapeNode {
                input: std::mem::take(&mut x),
                inner: inner_tape,
            });
        }
        x = out;
    }
    x
}

fn backward_layers(
    layers: &[LayerNode],
    tape: &[TapeNode],
    grad_out: Vec<f64>,
    params: &[f64],
    mut param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let mut grad = grad_out;
    for (node, record) in layers.iter().zip(tape).rev() {
        grad = match &node.kind {
            LayerKind::Conv { .. } => conv_backward(
                node,
                &record.input,
                &grad,
                params,
                param_grads.as_deref_mut(),
            ),
            LayerKind::Relu => record
                .input
                .iter()
                .zip(&grad)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect(),
            LayerKind::AvgPool { k } => avgpool_backward(node.in_shape, *k, &grad),
            LayerKind::Dense { in_dim, out_dim } => dense_backward(
                params,
                node.offset,
                *in_dim,
                *out_dim,
                &record.input,
                &grad,
                param_grads.as_deref_mut(),
            ),
            LayerKind::Residual(inner) => {
                let body_grad = backward_layers(
                    inner,
                    &record.inner,
                    grad.clone(),
                    params,
                    param_grads.as_deref_mut(),
                );
                grad.iter().zip(&body_grad).map(|(a, b)| a + b).collect()
            }
        };
    }
    grad
}

fn dense_forward(
    params: &[f64],
    offset: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
) -> Vec<f64> {
    let w = &params[offset..offset + out_dim * in_dim];
    let b = &params[offset + out_dim * in_dim..offset + out_dim * in_dim + out_dim];
    let mut out = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        out.push(acc);
    }
    out
}

fn dense_backward(
    params: &[f64],
    offset: usize,
    in_dim: usize,
    out_dim: usize,
    x: &[f64],
    grad_out: &[f64],
    param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let w = &params[offset..offset + out_dim * in_dim];
    if let Some(pg) = param_grads {
        for o in 0..out_dim {
            let go = grad_out[o];
            let row = &mut pg[offset + o * in_dim..offset + (o + 1) * in_dim];
            for (slot, xi) in row.iter_mut().zip(x) {
                *slot += go * xi;
            }
            pg[offset + out_dim * in_dim + o] += go;
        }
    }
    let mut grad_in = vec![0.0; in_dim];
    for o in 0..out_dim {
        let go = grad_out[o];
        let row = &w[o * in_dim..(o + 1) * in_dim];
        for (gi, wi) in grad_in.iter_mut().zip(row) {
            *gi += go * wi;
        }
    }
    grad_in
}

fn conv_forward(node: &LayerNode, x: &[f64], params: &[f64]) -> Vec<f64> {
    let LayerKind::Conv {
        in_c,
        out_c,
        k,
        stride,
        pad,
    } = node.kind
    else {
        unreachable!()
    };
    let (_, h, w) = node.in_shape;
    let (_, oh, ow) = node.out_shape;
    let weights = &params[node.offset..node.offset + out_c * in_c * k * k];
    let bias = &params[node.offset + out_c * in_c * k * k..node.offset + node.param_len];
    let mut out = vec![0.0; out_c * oh * ow];
    for oc in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = bias[oc];
                for ic in 0..in_c {
                    let w_base = ((oc * in_c + ic) * k) * k;
                    let x_base = ic * h * w;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = x_base + iy as usize * w;
                        let w_row = w_base + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += weights[w_row + kx] * x[row + ix as usize];
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn conv_backward(
    node: &LayerNode,
    x: &[f64],
    grad_out: &[f64],
    params: &[f64],
    param_grads: Option<&mut [f64]>,
) -> Vec<f64> {
    let LayerKind::Conv {
        in_c,
        out_c,
        k,
        stride,
        pad,
    } = node.kind
    else {
        unreachable!()
    };
    let (_, h, w) = node.in_shape;
    let (_, oh, ow) = node.out_shape;
    let w_len = out_c * in_c * k * k;
    let weights = &params[node.offset..node.offset + w_len];
    let mut grad_in = vec![0.0; in_c * h * w];
    let mut pg = param_grads;
    for oc in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let go = grad_out[(oc * oh + oy) * ow + ox];
                if go == 0.0 {
                    continue;
                }
                if let Some(pg) = pg.as_deref_mut() {
                    pg[node.offset + w_len + oc] += go;
                }
                for ic in 0..in_c {
                    let w_base = ((oc * in_c + ic) * k) * k;
                    let x_base = ic * h * w;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let row = x_base + iy as usize * w;
                        let w_row = w_base + ky * k;
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let xi = row + ix as usize;
                            grad_in[xi] += go * weights[w_row + kx];
                            if let Some(pg) = pg.as_deref_mut() {
                                pg[node.offset + w_row + kx] += go * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    grad_in
}

fn avgpool_forward(in_shape: (usize, usize, usize), k: usize, x: &[f64]) -> Vec<f64> {
    let (c, h, w) = in_shape;
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = (ci * h + oy * k + ky) * w + ox * k;
                    for kx in 0..k {
                        acc += x[row + kx];
                    }
                }
                out[(ci * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    out
}

fn avgpool_backward(in_shape: (usize, usize, usize), k: usize, grad_out: &[f64]) -> Vec<f64> {
    let (c, h, w) = in_shape;
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut grad_in = vec![0.0; c * h * w];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(ci * oh + oy) * ow + ox] * inv;
                for ky in 0..k {
                    let row = (ci * h + oy * k + ky) * w + ox * k;
                    for kx in 0..k {
                        grad_in[row + kx] += g;
                    }
                }
            }
        }
    }
    grad_in
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl DifferentiableClassifier for Network {
    fn layout_id(&self) -> &LayoutId {
        &self.layout
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> (usize, usize, usize) {
        self.input_shape
    }

    fn parameters(&self) -> ParamVector {
        ParamVector::new(self.params.clone(), self.layout.clone())
    }

    fn set_parameters(&mut self, params: &ParamVector) -> Result<()> {
        if params.layout_id != self.layout {
            return Err(SimError::LayoutMismatch {
                expected: self.layout.0.clone(),
                got: params.layout_id.0.clone(),
            });
        }
        if params.len() != self.params.len() {
            return Err(SimError::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        self.params.copy_from_slice(&params.values);
        Ok(())
    }

    fn predict_probs(&self, images: &ImageBatch) -> Vec<Vec<f64>> {
        self.check_input(images);
        (0..images.n)
            .map(|i| softmax(&self.forward_one(images.image(i), None)))
            .collect()
    }

    fn ce_loss_and_grad(&self, images: &ImageBatch, labels: &[usize]) -> (f64, ParamVector) {
        self.check_input(images);
        assert_eq!(images.n, labels.len());
        assert!(images.n > 0, "cross-entropy over an empty batch");
        let n = images.n as f64;
        let mut loss = 0.0;
        let mut grads = vec![0.0; self.params.len()];
        for i in 0..images.n {
            let mut tape = Vec::new();
            let logits = self.forward_one(images.image(i), Some(&mut tape));
            let probs = softmax(&logits);
            loss -= (probs[labels[i]].max(1e-300)).ln();
            let mut grad_logits = probs;
            grad_logits[labels[i]] -= 1.0;
            for g in &mut grad_logits {
                *g /= n;
            }
            self.backward_one(&tape, grad_logits, Some(&mut grads));
        }
        (loss / n, ParamVector::new(grads, self.layout.clone()))
    }

    fn input_gradient(&self, images: &ImageBatch, coeff: &[f64]) -> ImageBatch {
        self.check_input(images);
        assert_eq!(coeff.len(), self.num_classes);
        let mut out = ImageBatch::zeros(images.n, images.channels, images.height, images.width);
        for i in 0..images.n {
            let mut tape = Vec::new();
            let logits = self.forward_one(images.image(i), Some(&mut tape));
            let probs = softmax(&logits);
            let dot: f64 = coeff.iter().zip(&probs).map(|(c, p)| c * p).sum();
            // d(c . softmax(z))/dz_k = p_k (c_k - c . p)
            let grad_logits: Vec<f64> = probs
                .iter()
                .zip(coeff)
                .map(|(&p, &c)| p * (c - dot))
                .collect();
            let grad_in = self.backward_one(&tape, grad_logits, None);
            out.image_mut(i).copy_from_slice(&grad_in);
        }
        out
    }

    fn output_vjp(
        &self,
        images: &ImageBatch,
        probs_cotangent: &[Vec<f64>],
    ) -> (ParamVector, ImageBatch) {
        self.check_input(images);
        assert_eq!(images.n, probs_cotangent.len());
        let mut param_grads = vec![0.0; self.params.len()];
        let mut pixel_grads =
            ImageBatch::zeros(images.n, images.channels, images.height, images.width);
        for (i, ct) in probs_cotangent.iter().enumerate() {
            assert_eq!(ct.len(), self.num_classes);
            let mut tape = Vec::new();
            let logits = self.forward_one(images.image(i), Some(&mut tape));
            let probs = softmax(&logits);
            // Softmax VJP: dL/dz_k = p_k (ct_k - ct . p).
            let dot: f64 = ct.iter().zip(&probs).map(|(c, p)| c * p).sum();
            let grad_logits: Vec<f64> =
                probs.iter().zip(ct).map(|(&p, &c)| p * (c - dot)).collect();
            let grad_in = self.backward_one(&tape, grad_logits, Some(&mut param_grads));
            pixel_grads.image_mut(i).copy_from_slice(&grad_in);
        }
        (
            ParamVector::new(param_grads, self.layout.clone()),
            pixel_grads,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::arch;
    use crate::rng::stream;
    use rand::RngExt;

    fn tiny_net(seed: u64) -> Network {
        let mut net = arch::tiny_mlp((1, 4, 4), 6, 3).unwrap();
        net.init_he(&mut stream(seed, "net-init", &[]));
        net
    }

    fn random_batch(
        rng: &mut crate::rng::SimRng,
        n: usize,
        shape: (usize, usize, usize),
    ) -> ImageBatch {
        let mut b = ImageBatch::zeros(n, shape.0, shape.1, shape.2);
        for v in &mut b.data {
            *v = rng.random_range(0.2..0.8);
        }
        b
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = stream(1, "nn-test", &[0]);
        for trial in 0..20u64 {
            let net = tiny_net(trial);
            let batch = random_batch(&mut rng, 4, (1, 4, 4));
            for row in net.predict_probs(&batch) {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-5);
                assert!(row.iter().all(|&p| p >= 0.0));
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let mut net = tiny_net(7);
        let mut rng = stream(7, "nn-fd", &[]);
        let batch = random_batch(&mut rng, 3, (1, 4, 4));
        let labels = vec![0, 2, 1];
        let (_, grad) = net.ce_loss_and_grad(&batch, &labels);

        let eps = 1e-6;
        let base = net.parameters();
        let mut max_rel = 0.0f64;
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus.values[idx] += eps;
            net.set_parameters(&plus).unwrap();
            let (lp, _) = net.ce_loss_and_grad(&batch, &labels);
            let mut minus = base.clone();
            minus.values[idx] -= eps;
            net.set_parameters(&minus).unwrap();
            let (lm, _) = net.ce_loss_and_grad(&batch, &labels);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(grad.values[idx].abs()).max(1e-6);
            max_rel = max_rel.max((fd - grad.values[idx]).abs() / denom);
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = tiny_net(9);
        let mut rng = stream(9, "nn-fd-in", &[]);
        let batch = random_batch(&mut rng, 2, (1, 4, 4));
        let coeff = vec![0.3, -1.1, 0.8];
        let analytic = net.input_gradient(&batch, &coeff);

        let objective = |b: &ImageBatch| -> f64 {
            net.predict_probs(b)
                .iter()
                .map(|p| p.iter().zip(&coeff).map(|(pi, ci)| pi * ci).sum::<f64>())
                .sum()
        };
        let eps = 1e-6;
        for idx in 0..batch.data.len() {
            let mut plus = batch.clone();
            plus.data[idx] += eps;
            let mut minus = batch.clone();
            minus.data[idx] -= eps;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * eps);
            let got = analytic.data[idx];
            let denom = fd.abs().max(got.abs()).max(1e-6);
            assert!(
                ((fd - got).abs() / denom) < 1e-5,
                "pixel {idx}: fd={fd} analytic={got}"
            );
        }
    }

    #[test]
    fn conv_net_gradients_check_out() {
        let mut net = Network::build(
            (1, 6, 6),
            &[
                LayerDef::Conv {
                    out_c: 2,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerDef::Relu,
                LayerDef::AvgPool { k: 2 },
                LayerDef::Dense { out_dim: 3 },
            ],
        )
        .unwrap();
        net.init_he(&mut stream(11, "net-init", &[]));
        let mut rng = stream(11, "nn-fd-conv", &[]);
        let batch = random_batch(&mut rng, 2, (1, 6, 6));
        let labels = vec![1, 0];
        let (_, grad) = net.ce_loss_and_grad(&batch, &labels);
        let eps = 1e-6;
        let base = net.parameters();
        for idx in (0..base.len()).step_by(3) {
            let mut plus = base.clone();
            plus.values[idx] += eps;
            net.set_parameters(&plus).unwrap();
            let (lp, _) = net.ce_loss_and_grad(&batch, &labels);
            let mut minus = base.clone();
            minus.values[idx] -= eps;
            net.set_parameters(&minus).unwrap();
            let (lm, _) = net.ce_loss_and_grad(&batch, &labels);
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(grad.values[idx].abs()).max(1e-6);
            assert!(
                ((fd - grad.values[idx]).abs() / denom) < 1e-5,
                "param {idx}: fd={fd} analytic={}",
                grad.values[idx]
            );
        }
        net.set_parameters(&base).unwrap();
    }

    #[test]
    fn residual_block_forward_and_gradients() {
        let mut net = Network::build(
            (1, 4, 4),
            &[
                LayerDef::Conv {
                    out_c: 2,
                    k: 3,
                    stride: 1,
                    pad: 1,
                },
                LayerDef::Residual(vec![
                    LayerDef::Conv {
                        out_c: 2,
                        k: 3,
                        stride: 1,
                        pad: 1,
                    },
                    LayerDef::Relu,
                    LayerDef::Conv {
                        out_c: 2,
                        k: 3,
                        stride: 1,
                        pad: 1,
                    },
                ]),
                LayerDef::Relu,
                LayerDef::Dense { out_dim: 3 },
            ],
        )
        .unwrap();
        net.init_he(&mut stream(13, "net-init", &[]));
        let mut rng = stream(13, "nn-fd-res", &[]);
        let batch = random_batch(&mut rng, 1, (1, 4, 4));
        let labels = vec![2];
        let (_, grad) = net.ce_loss_and_grad(&batch, &labels);
        let eps = 1e-6;
        let base = net.parameters();
        for idx in (0..base.len()).step_by(7) {
            let mut plus = base.clone();
            plus.values[idx] += eps;
            net.set_parameters(&plus).unwrap();
            let (lp, _) = net.ce_loss_and_grad(&batch, &labels);
            let mut minus = base.clone();
            minus.values[idx] -= eps;
            net.set_parameters(&minus).unwrap();
            let (lm, _) = net.ce_loss_and_grad(&batch, &labels);
            let fd = (lp - lm) / (2.0 * eps);
            // The floor absorbs finite-difference noise on near-zero gradients.
            let denom = fd.abs().max(grad.values[idx].abs()).max(1e-4);
            assert!(
                ((fd - grad.values[idx]).abs() / denom) < 1e-5,
                "param {idx}: fd={fd} analytic={}",
                grad.values[idx]
            );
        }
    }

    #[test]
    fn output_vjp_handles_nonlinear_functions_of_probs() {
        // L = sum_j sum_c w_c * p_{jc}^2, cotangent dL/dp = 2 w (.) p.
        let mut net = tiny_net(17);
        let mut rng = stream(17, "nn-vjp", &[]);
        let batch = random_batch(&mut rng, 2, (1, 4, 4));
        let weights = [0.7, -0.4, 1.3];
        let objective = |net: &Network, b: &ImageBatch| -> f64 {
            net.predict_probs(b)
                .iter()
                .map(|p| {
                    p.iter()
                        .zip(&weights)
                        .map(|(pi, w)| w * pi * pi)
                        .sum::<f64>()
                })
                .sum()
        };
        let cotangent: Vec<Vec<f64>> = net
            .predict_probs(&batch)
            .iter()
            .map(|p| p.iter().zip(&weights).map(|(pi, w)| 2.0 * w * pi).collect())
            .collect();
        let (param_grad, pixel_grad) = net.output_vjp(&batch, &cotangent);

        let eps = 1e-6;
        for idx in (0..net.param_count()).step_by(5) {
            let base = net.parameters();
            let mut plus = base.clone();
            plus.values[idx] += eps;
            net.set_parameters(&plus).unwrap();
            let lp = objective(&net, &batch);
            let mut minus = base.clone();
            minus.values[idx] -= eps;
            net.set_parameters(&minus).unwrap();
            let lm = objective(&net, &batch);
            net.set_parameters(&base).unwrap();
            let fd = (lp - lm) / (2.0 * eps);
            let denom = fd.abs().max(param_grad.values[idx].abs()).max(1e-4);
            assert!(
                ((fd - param_grad.values[idx]).abs() / denom) < 1e-5,
                "param {idx}: fd={fd} vjp={}",
                param_grad.values[idx]
            );
        }
        for idx in 0..batch.data.len() {
            let mut plus = batch.clone();
            plus.data[idx] += eps;
            let mut minus = batch.clone();
            minus.data[idx] -= eps;
            let fd = (objective(&net, &plus) - objective(&net, &minus)) / (2.0 * eps);
            let denom = fd.abs().max(pixel_grad.data[idx].abs()).max(1e-4);
            assert!(
                ((fd - pixel_grad.data[idx]).abs() / denom) < 1e-5,
                "pixel {idx}: fd={fd} vjp={}",
                pixel_grad.data[idx]
            );
        }
    }

    #[test]
    fn init_is_deterministic_and_layouts_match() {
        let a = tiny_net(21);
        let b = tiny_net(21);
        assert_eq!(a.parameters(), b.parameters());
        assert_eq!(a.layout_id(), b.layout_id());
        let c = tiny_net(22);
        assert_ne!(a.parameters().values, c.parameters().values);
    }

    #[test]
    fn set_parameters_rejects_foreign_layout() {
        let mut net = tiny_net(3);
        let foreign = ParamVector::new(vec![0.0; net.param_count()], LayoutId::new("other"));
        assert!(net.set_parameters(&foreign).is_err());
    }
}

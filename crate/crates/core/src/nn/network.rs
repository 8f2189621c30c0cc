use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{CLASSES, SIDE};
use crate::error::{Error, Result};
use crate::linalg::gemm::{gemm, MatRef};
use crate::linalg::{qr_decompose, Tensor};
use crate::nn::layer::{ArchId, LayerSpec, KERNEL};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// A layer specification plus its weight (dense and conv layers only).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Option<Tensor>,
}

/// Ordered bias-free layers with their weights.
///
/// Every weight mutation stamps a fresh generation number; a
/// [`ForwardTrace`] is only accepted by `backward` while the generation it
/// recorded is still current.
#[derive(Clone, Debug)]
pub struct Network {
    arch: Option<ArchId>,
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    generation: u64,
}

/// Weight gradients, one per parameterized layer in network order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
}

/// Per-layer inputs cached by `forward` for `backward`.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    generation: u64,
    batch: usize,
    inputs: Vec<Tensor>,
    cols: Vec<Option<Vec<f64>>>,
}

impl ForwardTrace {
    pub fn layer_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Input seen by layer `i` (the output of layer `i - 1`).
    pub fn layer_input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }
}

fn mlp7_specs(relu: bool) -> Vec<LayerSpec> {
    let widths = [SIDE * SIDE, 100, 100, 100, 100, 100, 100, CLASSES];
    let mut specs = Vec::new();
    for (i, pair) in widths.windows(2).enumerate() {
        specs.push(LayerSpec::Dense {
            in_features: pair[0],
            out_features: pair[1],
        });
        if relu && i + 2 < widths.len() {
            specs.push(LayerSpec::Relu);
        }
    }
    specs
}

fn lenet5_specs(relu: bool) -> Vec<LayerSpec> {
    let mut specs = vec![LayerSpec::Conv2d {
        in_channels: 1,
        out_channels: 6,
    }];
    if relu {
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::AvgPool2x2);
    specs.push(LayerSpec::Conv2d {
        in_channels: 6,
        out_channels: 16,
    });
    if relu {
        specs.push(LayerSpec::Relu);
    }
    specs.push(LayerSpec::AvgPool2x2);
    specs.push(LayerSpec::Flatten);
    for (i, (fin, fout)) in [(256, 120), (120, 84), (84, CLASSES)].into_iter().enumerate() {
        specs.push(LayerSpec::Dense {
            in_features: fin,
            out_features: fout,
        });
        if relu && i < 2 {
            specs.push(LayerSpec::Relu);
        }
    }
    specs
}

impl Network {
    /// Builds one of the evaluated architectures with all-zero weights.
    pub fn build(arch: ArchId) -> Network {
        let specs = match arch {
            ArchId::Mlp7Linear => mlp7_specs(false),
            ArchId::Mlp7Relu => mlp7_specs(true),
            ArchId::Lenet5Linear => lenet5_specs(false),
            ArchId::Lenet5Relu => lenet5_specs(true),
        };
        let mut net = Network::custom(vec![1, SIDE, SIDE], specs).expect("built-in specs are consistent");
        net.arch = Some(arch);
        net
    }

    /// An ad-hoc network over an arbitrary per-sample input shape.
    pub fn custom(input_shape: Vec<usize>, specs: Vec<LayerSpec>) -> Result<Network> {
        let layers = specs
            .into_iter()
            .map(|spec| {
                let weight = spec.weight_shape().map(Tensor::zeros).transpose()?;
                Ok(Layer { spec, weight })
            })
            .collect::<Result<Vec<_>>>()?;
        let net = Network {
            arch: None,
            input_shape,
            layers,
            generation: next_generation(),
        };
        net.output_shape()?;
        Ok(net)
    }

    /// Rebuilds `arch` with the given weights, one per parameterized layer.
    /// Weight shapes may be smaller than the defaults (pruned networks);
    /// layer specs are derived from them and checked end to end.
    pub fn from_weights(arch: ArchId, weights: Vec<Tensor>) -> Result<Network> {
        Network::build(arch).with_weights(weights)
    }

    /// Same layer kinds and input shape, new weights (possibly with fewer
    /// units). The output shape must stay the same.
    pub fn with_weights(&self, weights: Vec<Tensor>) -> Result<Network> {
        let mut net = self.clone();
        let params = net.param_layer_indices();
        if params.len() != weights.len() {
            return Err(Error::CheckpointShape(format!(
                "network has {} weight tensors, got {}",
                params.len(),
                weights.len()
            )));
        }
        for (&li, w) in params.iter().zip(weights) {
            let spec = match (net.layers[li].spec, w.shape()) {
                (LayerSpec::Dense { .. }, &[out_features, in_features]) => LayerSpec::Dense {
                    in_features,
                    out_features,
                },
                (LayerSpec::Conv2d { .. }, &[out_channels, in_channels, KERNEL, KERNEL]) => {
                    LayerSpec::Conv2d {
                        in_channels,
                        out_channels,
                    }
                }
                (spec, shape) => {
                    return Err(Error::CheckpointShape(format!(
                        "layer {li} ({spec:?}) cannot take weight of shape {shape:?}"
                    )))
                }
            };
            w.check_finite("with_weights")?;
            net.layers[li] = Layer {
                spec,
                weight: Some(w),
            };
        }
        let expected = self.output_shape()?;
        let out = net.output_shape().map_err(|e| Error::CheckpointShape(e.to_string()))?;
        if out != expected {
            return Err(Error::CheckpointShape(format!("output shape {out:?}, expected {expected:?}")));
        }
        net.generation = next_generation();
        Ok(net)
    }

    pub fn arch(&self) -> Option<ArchId> {
        self.arch
    }

    pub fn is_linear(&self) -> bool {
        !self.layers.iter().any(|l| l.spec == LayerSpec::Relu)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Per-sample output shape, checking every layer along the way.
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        self.layer_output_shapes().map(|s| s.last().cloned().unwrap_or_else(|| self.input_shape.clone()))
    }

    /// Per-sample output shape of every layer.
    pub fn layer_output_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.spec.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn param_layer_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.spec.is_parameterized())
            .map(|(i, _)| i)
            .collect()
    }

    /// Weights of parameterized layers in order.
    pub fn weights(&self) -> Vec<&Tensor> {
        self.layers.iter().filter_map(|l| l.weight.as_ref()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.weights().iter().map(|w| w.len()).sum()
    }

    /// Replaces the weight of the `k`-th parameterized layer.
    pub fn set_weight(&mut self, k: usize, w: Tensor) -> Result<()> {
        let li = *self
            .param_layer_indices()
            .get(k)
            .ok_or(Error::NotParameterized(k))?;
        let expected = self.layers[li].spec.weight_shape().expect("parameterized");
        if w.shape() != expected.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "set_weight",
                left: expected,
                right: w.shape().to_vec(),
            });
        }
        w.check_finite("set_weight")?;
        self.layers[li].weight = Some(w);
        self.generation = next_generation();
        Ok(())
    }

    /// Orthogonal initialization: each weight, viewed as `out x fan_in`, gets
    /// orthonormal rows (or columns when taller than wide) from the QR
    /// factor of a Gaussian matrix, with the `sign(diag(R))` correction.
    /// Layers feeding a ReLU are scaled by `sqrt(2)`.
    pub fn init_orthogonal(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.layers.len();
        for li in 0..n {
            let Some(shape) = self.layers[li].spec.weight_shape() else {
                continue;
            };
            let rows = shape[0];
            let cols: usize = shape[1..].iter().product();
            let gain = if li + 1 < n && self.layers[li + 1].spec == LayerSpec::Relu {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            let (tall, short) = (rows.max(cols), rows.min(cols));
            let gauss: Vec<f64> = (0..tall * short).map(|_| StandardNormal.sample(&mut rng)).collect();
            let a = Tensor::new(vec![tall, short], gauss).expect("gaussian sample is finite");
            let q = sign_corrected_q(&a).expect("gaussian matrix has full rank");
            let q = if rows < cols { q.transpose().expect("matrix") } else { q };
            let data = q.into_data().into_iter().map(|v| v * gain).collect();
            self.layers[li].weight = Some(Tensor::from_parts_unchecked(shape, data));
        }
        self.generation = next_generation();
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let batch = x.shape()[0];
        let per: usize = x.len() / batch;
        if per != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                left: x.shape().to_vec(),
                right: self.input_shape.clone(),
            });
        }
        Ok(batch)
    }

    /// Forward pass over a batch `B x input_shape`; returns logits `B x C`.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ForwardTrace)> {
        let batch = self.check_input(x)?;
        let mut shape = self.input_shape.clone();
        let mut cur = x.clone().reshape(batch_shape(batch, &shape))?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cols = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let out_shape = layer.spec.output_shape(&shape)?;
            let (next, col) = forward_layer(layer, &cur, batch, &shape, &out_shape);
            inputs.push(cur);
            cols.push(col);
            cur = next;
            shape = out_shape;
        }
        let logits = cur.reshape(vec![batch, shape.iter().product()])?;
        logits.check_finite("forward")?;
        Ok((
            logits,
            ForwardTrace {
                generation: self.generation,
                batch,
                inputs,
                cols,
            },
        ))
    }

    /// Forward pass without keeping the trace.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        let mut shape = self.input_shape.clone();
        let mut cur = x.clone().reshape(batch_shape(batch, &shape))?;
        for layer in &self.layers {
            let out_shape = layer.spec.output_shape(&shape)?;
            cur = forward_layer(layer, &cur, batch, &shape, &out_shape).0;
            shape = out_shape;
        }
        let logits = cur.reshape(vec![batch, shape.iter().product()])?;
        logits.check_finite("forward")?;
        Ok(logits)
    }

    /// Reverse-mode pass. Returns weight gradients and the gradient with
    /// respect to the flattened input (`B x input_dim`).
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<(Gradients, Tensor)> {
        let (grads, gin) = self.backward_impl(trace, grad_logits, true)?;
        Ok((
            Gradients {
                weights: grads.into_iter().flatten().collect(),
            },
            gin,
        ))
    }

    /// Input gradient only; skips the weight-gradient products.
    pub fn backward_input(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Result<Tensor> {
        Ok(self.backward_impl(trace, grad_logits, false)?.1)
    }

    fn backward_impl(
        &self,
        trace: &ForwardTrace,
        grad_logits: &Tensor,
        want_params: bool,
    ) -> Result<(Vec<Option<Tensor>>, Tensor)> {
        if trace.generation != self.generation {
            return Err(Error::Trace("network weights changed since forward".into()));
        }
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::Trace(format!(
                "trace has {} layers, network has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        let batch = trace.batch;
        let out_dim: usize = self.output_shape()?.iter().product();
        if grad_logits.shape() != [batch, out_dim] {
            return Err(Error::ShapeMismatch {
                op: "backward",
                left: grad_logits.shape().to_vec(),
                right: vec![batch, out_dim],
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.layers.len()];
        let mut g = grad_logits.data().to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[li];
            let (gw, gx) = backward_layer(layer, input, trace.cols[li].as_deref(), &g, batch, want_params);
            grads[li] = gw;
            g = gx;
        }
        let gin = Tensor::from_parts_unchecked(vec![batch, self.input_dim()], g);
        gin.check_finite("backward")?;
        Ok((grads, gin))
    }

    /// Plain SGD: `w <- w - lr * g` for every weight.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        let params = self.param_layer_indices();
        if grads.weights.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "sgd_step",
                left: vec![params.len()],
                right: vec![grads.weights.len()],
            });
        }
        for (&li, g) in params.iter().zip(&grads.weights) {
            let w = self.layers[li].weight.as_ref().expect("parameterized");
            if w.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "sgd_step",
                    left: w.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        for (&li, g) in params.iter().zip(&grads.weights) {
            let w = self.layers[li].weight.as_mut().expect("parameterized");
            for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
                *wi -= lr * gi;
            }
            w.check_finite("sgd_step")?;
        }
        self.generation = next_generation();
        Ok(())
    }
}

/// `Q * sign(diag(R))` for a tall-or-square matrix.
pub(crate) fn sign_corrected_q(a: &Tensor) -> Result<Tensor> {
    let (q, r) = qr_decompose(a)?;
    let (m, n) = q.dims2()?;
    let mut q = q;
    for j in 0..n {
        if r.at(j, j) < 0.0 {
            for i in 0..m {
                let v = q.at(i, j);
                q.set(i, j, -v);
            }
        }
    }
    Ok(q)
}

fn batch_shape(batch: usize, per: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per.len() + 1);
    s.push(batch);
    s.extend_from_slice(per);
    s
}

fn im2col(x: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (ci * KERNEL + ki) * KERNEL + kj;
                let dst = &mut out[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let src = ci * h * w + (oi + ki) * w + kj;
                    dst[oi * wo..(oi + 1) * wo].copy_from_slice(&x[src..src + wo]);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (ho, wo) = (h - KERNEL + 1, w - KERNEL + 1);
    let plane = ho * wo;
    for ci in 0..c {
        for ki in 0..KERNEL {
            for kj in 0..KERNEL {
                let row = (ci * KERNEL + ki) * KERNEL + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oi in 0..ho {
                    let dst = ci * h * w + (oi + ki) * w + kj;
                    for (o, s) in out[dst..dst + wo].iter_mut().zip(&src[oi * wo..(oi + 1) * wo]) {
                        *o += s;
                    }
                }
            }
        }
    }
}

fn forward_layer(
    layer: &Layer,
    x: &Tensor,
    batch: usize,
    in_shape: &[usize],
    out_shape: &[usize],
) -> (Tensor, Option<Vec<f64>>) {
    let out_per: usize = out_shape.iter().product();
    let mut out = vec![0.0; batch * out_per];
    let mut cols_cache = None;
    match layer.spec {
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let w = layer.weight.as_ref().expect("dense weight");
            gemm(
                1.0,
                MatRef::row_major(x.data(), batch, in_features),
                MatRef::row_major(w.data(), out_features, in_features).t(),
                0.0,
                &mut out,
            );
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
        } => {
            let w = layer.weight.as_ref().expect("conv weight");
            let (h, wd) = (in_shape[1], in_shape[2]);
            let k = in_channels * KERNEL * KERNEL;
            let plane = out_shape[1] * out_shape[2];
            let in_per = in_channels * h * wd;
            let mut cols = vec![0.0; batch * k * plane];
            for b in 0..batch {
                let cb = &mut cols[b * k * plane..(b + 1) * k * plane];
                im2col(&x.data()[b * in_per..(b + 1) * in_per], in_channels, h, wd, cb);
                gemm(
                    1.0,
                    MatRef::row_major(w.data(), out_channels, k),
                    MatRef::row_major(cb, k, plane),
                    0.0,
                    &mut out[b * out_per..(b + 1) * out_per],
                );
            }
            cols_cache = Some(cols);
        }
        LayerSpec::Relu => {
            for (o, v) in out.iter_mut().zip(x.data()) {
                *o = v.max(0.0);
            }
        }
        LayerSpec::AvgPool2x2 => {
            let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
            let (ho, wo) = (h / 2, w / 2);
            for b in 0..batch {
                for ci in 0..c {
                    let src = &x.data()[(b * c + ci) * h * w..];
                    let dst = &mut out[(b * c + ci) * ho * wo..];
                    for i in 0..ho {
                        for j in 0..wo {
                            let s = src[2 * i * w + 2 * j]
                                + src[2 * i * w + 2 * j + 1]
                                + src[(2 * i + 1) * w + 2 * j]
                                + src[(2 * i + 1) * w + 2 * j + 1];
                            dst[i * wo + j] = 0.25 * s;
                        }
                    }
                }
            }
        }
        LayerSpec::Flatten => out.copy_from_slice(x.data()),
    }
    (
        Tensor::from_parts_unchecked(batch_shape(batch, out_shape), out),
        cols_cache,
    )
}

/// Returns the weight gradient (parameterized layers, when requested) and
/// the gradient with respect to the layer input.
fn backward_layer(
    layer: &Layer,
    input: &Tensor,
    cols: Option<&[f64]>,
    g: &[f64],
    batch: usize,
    want_params: bool,
) -> (Option<Tensor>, Vec<f64>) {
    let in_len = input.len();
    let mut gx = vec![0.0; in_len];
    match layer.spec {
        LayerSpec::Dense {
            in_features,
            out_features,
        } => {
            let w = layer.weight.as_ref().expect("dense weight");
            let gm = MatRef::row_major(g, batch, out_features);
            gemm(1.0, gm, MatRef::row_major(w.data(), out_features, in_features), 0.0, &mut gx);
            let gw = want_params.then(|| {
                let mut gw = vec![0.0; out_features * in_features];
                gemm(1.0, gm.t(), MatRef::row_major(input.data(), batch, in_features), 0.0, &mut gw);
                Tensor::from_parts_unchecked(vec![out_features, in_features], gw)
            });
            (gw, gx)
        }
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
        } => {
            let w = layer.weight.as_ref().expect("conv weight");
            let cols = cols.expect("conv trace keeps im2col buffers");
            let (h, wd) = (input.shape()[2], input.shape()[3]);
            let k = in_channels * KERNEL * KERNEL;
            let plane = (h - KERNEL + 1) * (wd - KERNEL + 1);
            let in_per = in_channels * h * wd;
            let out_per = out_channels * plane;
            let wm = MatRef::row_major(w.data(), out_channels, k);
            let mut gw = if want_params { vec![0.0; out_channels * k] } else { Vec::new() };
            let mut dcols = vec![0.0; k * plane];
            for b in 0..batch {
                let gb = MatRef::row_major(&g[b * out_per..(b + 1) * out_per], out_channels, plane);
                let cb = &cols[b * k * plane..(b + 1) * k * plane];
                if want_params {
                    gemm(1.0, gb, MatRef::row_major(cb, k, plane).t(), 1.0, &mut gw);
                }
                gemm(1.0, wm.t(), gb, 0.0, &mut dcols);
                col2im_add(&dcols, in_channels, h, wd, &mut gx[b * in_per..(b + 1) * in_per]);
            }
            let gw = want_params.then(|| {
                Tensor::from_parts_unchecked(vec![out_channels, in_channels, KERNEL, KERNEL], gw)
            });
            (gw, gx)
        }
        LayerSpec::Relu => {
            for ((o, gi), xi) in gx.iter_mut().zip(g).zip(input.data()) {
                *o = if *xi > 0.0 { *gi } else { 0.0 };
            }
            (None, gx)
        }
        LayerSpec::AvgPool2x2 => {
            let (c, h, w) = (input.shape()[1], input.shape()[2], input.shape()[3]);
            let (ho, wo) = (h / 2, w / 2);
            for b in 0..batch {
                for ci in 0..c {
                    let src = &g[(b * c + ci) * ho * wo..];
                    let dst = &mut gx[(b * c + ci) * h * w..];
                    for i in 0..ho {
                        for j in 0..wo {
                            let v = 0.25 * src[i * wo + j];
                            dst[2 * i * w + 2 * j] = v;
                            dst[2 * i * w + 2 * j + 1] = v;
                            dst[(2 * i + 1) * w + 2 * j] = v;
                            dst[(2 * i + 1) * w + 2 * j + 1] = v;
                        }
                    }
                }
            }
            (None, gx)
        }
        LayerSpec::Flatten => {
            gx.copy_from_slice(g);
            (None, gx)
        }
    }
}

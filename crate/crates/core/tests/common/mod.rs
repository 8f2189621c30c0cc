//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use isoprune::linalg::{qr_decompose, Tensor};
use isoprune::nn::{softmax_xent, ArchId, LayerSpec, Network};
use isoprune::pruning::{apply_plan, make_plan, PrunePlan, PruneSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Textbook triple loop.
pub fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    assert_eq!(b.shape()[0], k);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a.at(i, p) * b.at(p, j)).sum();
        }
    }
    Tensor::new(vec![m, n], out).unwrap()
}

fn transpose(a: &Tensor) -> Tensor {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.at(i, j);
        }
    }
    Tensor::new(vec![n, m], out).unwrap()
}

/// `(max |QᵀQ - I|, max |QR - A| / max |A|)`.
pub fn qr_residuals(a: &Tensor) -> (f64, f64) {
    let (q, r) = qr_decompose(a).unwrap();
    let n = q.shape()[1];
    let qtq = naive_matmul(&transpose(&q), &q);
    let mut orth: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            orth = orth.max((qtq.at(i, j) - target).abs());
        }
    }
    let qr = naive_matmul(&q, &r);
    let scale = a.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let recon = qr.data().iter().zip(a.data()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    (orth, recon / scale)
}

/// Singular values of a 2x2 matrix from the characteristic polynomial of
/// `AᵀA`, largest first.
pub fn svd_2x2_oracle(a: [[f64; 2]; 2]) -> [f64; 2] {
    let [[p, q], [r, s]] = a;
    let t = p * p + q * q + r * r + s * s;
    let det = p * s - q * r;
    let disc = (t * t - 4.0 * det * det).max(0.0).sqrt();
    let l1 = (t + disc) / 2.0;
    // Product of the eigenvalues is det², which keeps the small root accurate.
    let l2 = if l1 > 0.0 { det * det / l1 } else { 0.0 };
    [l1.sqrt(), l2.sqrt()]
}

pub fn loss(net: &Network, x: &Tensor, labels: &[u8]) -> f64 {
    softmax_xent(&net.logits(x).unwrap(), labels).unwrap().0
}

/// Largest relative error between backprop and central differences
/// (step `h`) over every weight and input entry, skipping entries where
/// both are below `floor`.
pub fn gradient_check(net: &Network, x: &Tensor, labels: &[u8], h: f64, floor: f64) -> f64 {
    let (logits, trace) = net.forward(x).unwrap();
    let (_, g) = softmax_xent(&logits, labels).unwrap();
    let (grads, gin) = net.backward(&trace, &g).unwrap();
    let rel = |a: f64, n: f64| {
        if a.abs().max(n.abs()) < floor {
            0.0
        } else {
            (a - n).abs() / (a.abs() + n.abs())
        }
    };
    let mut worst: f64 = 0.0;
    let weights: Vec<Tensor> = net.weights().into_iter().cloned().collect();
    for (k, w) in weights.iter().enumerate() {
        for i in 0..w.len() {
            let perturbed = |delta: f64| {
                let mut ws = weights.clone();
                ws[k].data_mut()[i] += delta;
                loss(&net.with_weights(ws).unwrap(), x, labels)
            };
            let numeric = (perturbed(h) - perturbed(-h)) / (2.0 * h);
            worst = worst.max(rel(grads.weights[k].data()[i], numeric));
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let numeric = (loss(net, &xp, labels) - loss(net, &xm, labels)) / (2.0 * h);
        worst = worst.max(rel(gin.data()[i], numeric));
    }
    worst
}

fn dense(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Dense {
        in_features: i,
        out_features: o,
    }
}

fn conv(i: usize, o: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
    }
}

/// Small networks that together exercise every layer kind, with Gaussian
/// weights so no ReLU sits on a kink.
pub fn layer_kind_nets() -> Vec<(&'static str, Network)> {
    let specs: Vec<(&str, Vec<usize>, Vec<LayerSpec>)> = vec![
        ("dense", vec![6], vec![dense(6, 4)]),
        ("relu", vec![6], vec![dense(6, 5), LayerSpec::Relu, dense(5, 3)]),
        ("conv+flatten", vec![2, 7, 7], vec![conv(2, 3), LayerSpec::Flatten, dense(27, 4)]),
        (
            "conv+avgpool",
            vec![1, 8, 8],
            vec![conv(1, 2), LayerSpec::Relu, LayerSpec::AvgPool2x2, LayerSpec::Flatten, dense(8, 3)],
        ),
    ];
    specs
        .into_iter()
        .enumerate()
        .map(|(n, (name, input, layers))| {
            let net = Network::custom(input, layers).unwrap();
            let ws: Vec<Tensor> = net
                .weights()
                .iter()
                .enumerate()
                .map(|(k, w)| gaussian(w.shape().to_vec(), 100 * n as u64 + k as u64).scale(0.5).unwrap())
                .collect();
            (name, net.with_weights(ws).unwrap())
        })
        .collect()
}

/// Worst gradient-check error across [`layer_kind_nets`].
pub fn gradient_suite() -> Vec<(&'static str, f64)> {
    layer_kind_nets()
        .into_iter()
        .enumerate()
        .map(|(n, (name, net))| {
            let mut shape = vec![3];
            shape.extend_from_slice(net.input_shape());
            let x = gaussian(shape, 900 + n as u64);
            let labels: Vec<u8> = (0..3).map(|i| (i % 3) as u8).collect();
            (name, gradient_check(&net, &x, &labels, 1e-5, 1e-7))
        })
        .collect()
}

/// Zeroes the weight rows (filters) of every unit the plan drops.
pub fn masked(net: &Network, plan: &PrunePlan) -> Network {
    let ws: Vec<Tensor> = net
        .weights()
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let mut w = (*w).clone();
            if let Some(kept) = plan.kept(k) {
                let (rows, cols) = w.as_matrix_dims();
                for r in (0..rows).filter(|r| !kept.contains(r)) {
                    w.data_mut()[r * cols..(r + 1) * cols].fill(0.0);
                }
            }
            w
        })
        .collect();
    net.with_weights(ws).unwrap()
}

/// `max |pruned(x) - masked(x)|` for an orthogonally initialized `arch`.
pub fn mask_equivalence(arch: ArchId, ratio: f64, seed: u64) -> f64 {
    let mut net = Network::build(arch);
    net.init_orthogonal(seed);
    let plan = make_plan(&net, &PruneSpec::default_for(arch, ratio).unwrap()).unwrap();
    let pruned = apply_plan(&net, &plan).unwrap();
    let x = gaussian(vec![4, 1, 28, 28], seed + 1);
    let a = pruned.logits(&x).unwrap();
    let b = masked(&net, &plan).logits(&x).unwrap();
    a.max_abs_diff(&b).unwrap()
}

pub const TAB2_SETTINGS: [&str; 8] = [
    "90 epochs, 0:0.01,30:0.001,60:0.0001",
    "90 epochs, 0:0.001,45:0.001",
    "900 epochs, 0:0.01,300:0.001,600:0.0001",
    "900 epochs, 0:0.001,450:0.001",
    "OrthP, 90 epochs, 0:0.01,30:0.001,60:0.0001",
    "OrthP, 90 epochs, 0:0.001,45:0.001",
    "OrthP, 900 epochs, 0:0.01,300:0.001,600:0.0001",
    "OrthP, 900 epochs, 0:0.001,450:0.001",
];

/// Malformed schedules with the error text each must produce.
pub const MALFORMED_SCHEDULES: [(&str, &str); 3] = [
    ("90 epochs, 30:0.01", "first breakpoint must be epoch 0"),
    ("90 epochs, 0:0.01,60:0.001,30:0.0001", "ascend"),
    ("90 epochs, 0:0.01,90:0.001", ">= total epochs"),
];

/// A well-formed IDX image file with `n` 28x28 images.
pub fn idx_images(n: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2051u32, n as u32, 28, 28] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..n * 784).map(|i| (i % 251) as u8));
    b
}

pub fn idx_labels(n: usize) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [2049u32, n as u32] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend((0..n).map(|i| (i % 10) as u8));
    b
}

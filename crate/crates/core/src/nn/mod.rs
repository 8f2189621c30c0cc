//! Bias-free dense/convolutional networks: construction, orthogonal
//! initialization, forward and reverse passes, softmax cross-entropy, plain
//! SGD and accuracy evaluation.

mod layer;
mod network;

pub use layer::{ArchId, LayerSpec, KERNEL};
pub use network::{ForwardTrace, Gradients, Layer, Network};
pub(crate) use network::sign_corrected_q;

use crate::data::{Dataset, CLASSES};
use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::par::Execution;

/// Samples per forward pass in `evaluate`.
const EVAL_CHUNK: usize = 500;

/// Mean cross-entropy of softmax(logits) against `labels`, and its gradient
/// `(softmax - onehot) / B`.
pub fn softmax_xent(logits: &Tensor, labels: &[u8]) -> Result<(f64, Tensor)> {
    let (batch, classes) = logits.dims2()?;
    if labels.len() != batch {
        return Err(Error::ShapeMismatch {
            op: "softmax_xent",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some((index, &l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
        return Err(Error::LabelOutOfRange {
            index,
            label: l as usize,
        });
    }
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    let inv_b = 1.0 / batch as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
        let log_sum = sum.ln();
        loss += log_sum - (row[label as usize] - max);
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (gi, z) in g.iter_mut().zip(row) {
            *gi = (z - max).exp() / sum * inv_b;
        }
        g[label as usize] -= inv_b;
    }
    Ok((loss * inv_b, Tensor::new(vec![batch, classes], grad)?))
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    evaluate_with(net, data, Execution::default())
}

/// Argmax accuracy over the whole dataset.
pub fn evaluate_with(net: &Network, data: &Dataset, exec: Execution) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let chunks: Vec<(usize, usize)> = (0..data.len())
        .step_by(EVAL_CHUNK)
        .map(|s| (s, (s + EVAL_CHUNK).min(data.len())))
        .collect();
    let counts = exec.map(&chunks, |&(start, end)| -> Result<usize> {
        let idx: Vec<usize> = (start..end).collect();
        let logits = net.logits(&data.gather(&idx))?;
        let classes = logits.shape()[1];
        Ok(idx
            .iter()
            .enumerate()
            .filter(|(k, &i)| argmax(&logits.data()[k * classes..(k + 1) * classes]) == data.labels()[i] as usize)
            .count())
    });
    let correct = counts.into_iter().sum::<Result<usize>>()?;
    Ok(correct as f64 / data.len() as f64)
}

/// Output classes of every built-in architecture.
pub const OUTPUT_CLASSES: usize = CLASSES;

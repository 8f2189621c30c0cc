//! L1-norm structured pruning of whole neurons and filters.
//!
//! Layers are addressed by their parameterized-layer ordinal: for MLP-7
//! ordinals 0..=6 are the seven dense layers; for LeNet-5, 0 and 1 are the
//! convolutions and 2..=4 the dense layers.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Tensor;
use crate::nn::{ArchId, LayerSpec, Network};

/// Guard against `0.29 * 100 = 28.999...` style truncation.
const FLOOR_EPS: f64 = 1e-9;

/// Per-layer pruning ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneSpec {
    ratios: Vec<(usize, f64)>,
}

impl PruneSpec {
    pub fn new(mut ratios: Vec<(usize, f64)>) -> Result<Self> {
        for &(_, r) in &ratios {
            check_ratio(r)?;
        }
        ratios.sort_by_key(|&(k, _)| k);
        if ratios.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::PlanMismatch("layer listed twice in prune spec".into()));
        }
        Ok(PruneSpec { ratios })
    }

    /// The same ratio on each listed layer.
    pub fn uniform(layers: &[usize], ratio: f64) -> Result<Self> {
        PruneSpec::new(layers.iter().map(|&k| (k, ratio)).collect())
    }

    /// Default targets: the first six dense layers of MLP-7; conv1, conv2
    /// and the first dense layer of LeNet-5.
    pub fn default_for(arch: ArchId, ratio: f64) -> Result<Self> {
        PruneSpec::uniform(&default_targets(arch), ratio)
    }

    pub fn ratios(&self) -> &[(usize, f64)] {
        &self.ratios
    }
}

pub fn default_targets(arch: ArchId) -> Vec<usize> {
    if arch.is_lenet() {
        vec![0, 1, 2]
    } else {
        (0..6).collect()
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..1.0).contains(&r) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(r))
    }
}

/// Units removed from a layer of `n` units at ratio `r`.
pub fn dropped_count(n: usize, r: f64) -> usize {
    ((r * n as f64 + FLOOR_EPS).floor() as usize).min(n.saturating_sub(1))
}

/// Kept output-unit indices (ascending) per parameterized layer. Layers
/// absent from the plan keep every unit.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PrunePlan {
    layers: Vec<(usize, Vec<usize>)>,
}

impl PrunePlan {
    pub fn new(mut layers: Vec<(usize, Vec<usize>)>) -> Result<Self> {
        layers.sort_by_key(|(k, _)| *k);
        if layers.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::PlanMismatch("layer listed twice in plan".into()));
        }
        for (k, kept) in &layers {
            if kept.is_empty() {
                return Err(Error::PlanMismatch(format!("layer {k} keeps no units")));
            }
            if kept.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::PlanMismatch(format!("layer {k} indices not strictly ascending")));
            }
        }
        Ok(PrunePlan { layers })
    }

    pub fn empty() -> Self {
        PrunePlan::default()
    }

    pub fn layers(&self) -> &[(usize, Vec<usize>)] {
        &self.layers
    }

    pub fn kept(&self, k: usize) -> Option<&[usize]> {
        self.layers.iter().find(|(l, _)| *l == k).map(|(_, v)| v.as_slice())
    }
}

impl fmt::Display for PrunePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, kept) in &self.layers {
            let list: Vec<String> = kept.iter().map(usize::to_string).collect();
            writeln!(f, "{k}: {}", list.join(","))?;
        }
        Ok(())
    }
}

impl FromStr for PrunePlan {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |line: &str| Error::PlanMismatch(format!("malformed plan line `{line}`"));
        let mut layers = Vec::new();
        for line in s.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, rest) = line.split_once(':').ok_or_else(|| bad(line))?;
            let k: usize = k.trim().parse().map_err(|_| bad(line))?;
            let kept = rest
                .split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad(line)))
                .collect::<Result<Vec<_>>>()?;
            layers.push((k, kept));
        }
        PrunePlan::new(layers)
    }
}

/// L1 norm of each output unit's full fan-in.
pub fn score_l1(weight: &Tensor) -> Vec<f64> {
    let (rows, cols) = weight.as_matrix_dims();
    weight
        .data()
        .chunks(cols)
        .take(rows)
        .map(|row| row.iter().map(|v| v.abs()).sum())
        .collect()
}

/// Score of every unit in the `k`-th parameterized layer.
pub fn layer_scores(net: &Network, k: usize) -> Result<Vec<f64>> {
    net.weights()
        .get(k)
        .map(|w| score_l1(w))
        .ok_or(Error::NotParameterized(k))
}

/// Keeps all but the `floor(r * n)` lowest-scoring units. Among equal
/// scores the higher index is dropped first.
pub fn select_kept(scores: &[f64], ratio: f64) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    let drop = dropped_count(scores.len(), ratio);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    let mut kept = order[drop..].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

pub fn make_plan(net: &Network, spec: &PruneSpec) -> Result<PrunePlan> {
    let params = net.param_layer_indices().len();
    let mut layers = Vec::new();
    for &(k, r) in spec.ratios() {
        if k >= params {
            return Err(Error::PlanMismatch(format!("layer {k} out of range ({params} weight layers)")));
        }
        if k + 1 == params {
            return Err(Error::PlanMismatch("the final classifier layer cannot be pruned".into()));
        }
        layers.push((k, select_kept(&layer_scores(net, k)?, r)?));
    }
    PrunePlan::new(layers)
}

/// How the inputs of parameterized layer `k` relate to the outputs of
/// layer `k - 1`: each upstream unit feeds `block` consecutive inputs.
fn input_block(net: &Network, k: usize) -> usize {
    let params = net.param_layer_indices();
    let li = params[k];
    let prev = params[k - 1];
    let shapes = net.layer_output_shapes().expect("network shapes are consistent");
    match net.layers()[li].spec {
        LayerSpec::Dense { .. } => {
            // Shape right before this dense layer, un-flattened if a Flatten
            // sits in between.
            let flat = (prev + 1..li).rev().find(|&i| net.layers()[i].spec == LayerSpec::Flatten);
            match flat {
                Some(f) => shapes[f - 1][1..].iter().product(),
                None => {
                    let units = net.layers()[prev].spec.out_units().expect("parameterized");
                    shapes[li - 1].iter().product::<usize>() / units
                }
            }
        }
        _ => 1,
    }
}

/// Removes the dropped rows/filters of every planned layer and the matching
/// input columns/channels of the next parameterized layer.
pub fn apply_plan(net: &Network, plan: &PrunePlan) -> Result<Network> {
    let weights = net.weights();
    let params = weights.len();
    for (k, kept) in plan.layers() {
        if *k + 1 >= params {
            return Err(Error::PlanMismatch(format!(
                "layer {k} is the classifier or out of range ({params} weight layers)"
            )));
        }
        let units = weights[*k].shape()[0];
        if kept.last().is_some_and(|&i| i >= units) {
            return Err(Error::PlanMismatch(format!("layer {k} has only {units} units")));
        }
    }

    let mut out = Vec::with_capacity(params);
    for k in 0..params {
        let w = weights[k];
        let shape = w.shape();
        let rows: Vec<usize> = plan.kept(k).map_or_else(|| (0..shape[0]).collect(), <[usize]>::to_vec);
        let in_units: Vec<usize> = if k == 0 {
            (0..shape[1]).collect()
        } else {
            let block = input_block(net, k);
            let prev_units = weights[k - 1].shape()[0];
            let upstream: Vec<usize> = plan.kept(k - 1).map_or_else(|| (0..prev_units).collect(), <[usize]>::to_vec);
            upstream.iter().flat_map(|&u| u * block..(u + 1) * block).collect()
        };
        out.push(slice_weight(w, &rows, &in_units));
    }
    net.with_weights(out).map_err(|e| Error::PlanMismatch(e.to_string()))
}

/// Selects output rows and input slots (dim 1) of a dense or conv weight.
fn slice_weight(w: &Tensor, rows: &[usize], inputs: &[usize]) -> Tensor {
    let shape = w.shape();
    let inner: usize = shape[2..].iter().product();
    let row_len = shape[1] * inner;
    let mut data = Vec::with_capacity(rows.len() * inputs.len() * inner);
    for &r in rows {
        let row = &w.data()[r * row_len..(r + 1) * row_len];
        for &c in inputs {
            data.extend_from_slice(&row[c * inner..(c + 1) * inner]);
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape[0] = rows.len();
    new_shape[1] = inputs.len();
    Tensor::from_parts_unchecked(new_shape, data)
}

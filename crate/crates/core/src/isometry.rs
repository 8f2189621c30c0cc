//! Dynamical isometry: Jacobian singular value statistics of the logits
//! with respect to the input, and QR re-orthogonalization of weights.

use std::fmt;

use crate::error::{Error, Result};
use crate::linalg::{svd_values, Tensor};
use crate::nn::{sign_corrected_q, Network};
use crate::par::Execution;
use crate::pruning::{apply_plan, make_plan, PruneSpec};

/// Relative tolerance used to confirm that a linear network's Jacobian does
/// not depend on the input.
const LINEAR_JACOBIAN_TOL: f64 = 1e-10;

/// Pooled statistics of Jacobian singular values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JsvReport {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
    /// Singular values per sample, `min(C, D_in)`.
    pub k: usize,
    pub samples: usize,
}

impl JsvReport {
    pub const CSV_HEADER: &'static str = "mean,std,max,min,K,samples";

    pub fn from_values(mut values: Vec<f64>, k: usize, samples: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        // Sorted pool: statistics do not depend on sample order.
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(JsvReport {
            mean,
            std: var.sqrt(),
            max: *values.last().expect("nonempty"),
            min: values[0],
            k,
            samples,
        })
    }

    pub fn pooled_count(&self) -> usize {
        self.k * self.samples
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.mean, self.std, self.max, self.min, self.k, self.samples
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Config(format!("malformed JSV row `{line}`"));
        if f.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        Ok(JsvReport {
            mean: num(f[0])?,
            std: num(f[1])?,
            max: num(f[2])?,
            min: num(f[3])?,
            k: f[4].parse().map_err(|_| bad())?,
            samples: f[5].parse().map_err(|_| bad())?,
        })
    }
}

impl fmt::Display for JsvReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "JSV mean {:.4} ({:.4})  max {:.4}  min {:.4}  [K={}, samples={}]",
            self.mean, self.std, self.max, self.min, self.k, self.samples
        )
    }
}

/// Jacobian `C x D_in` of the logits with respect to the flattened input
/// at `x` (one sample). Row `c` comes from a reverse pass seeded with the
/// one-hot vector `e_c`; the `C` passes run as one batch.
pub fn jacobian(net: &Network, x: &[f64]) -> Result<Tensor> {
    let d_in = net.input_dim();
    if x.len() != d_in {
        return Err(Error::ShapeMismatch {
            op: "jacobian",
            left: vec![x.len()],
            right: net.input_shape().to_vec(),
        });
    }
    let classes: usize = net.output_shape()?.iter().product();
    let mut batch = Vec::with_capacity(classes * d_in);
    for _ in 0..classes {
        batch.extend_from_slice(x);
    }
    let mut shape = vec![classes];
    shape.extend_from_slice(net.input_shape());
    let (_, trace) = net.forward(&Tensor::new(shape, batch)?)?;
    let seeds = Tensor::identity(classes)?;
    net.backward_input(&trace, &seeds)
}

/// Singular values of the Jacobian at each sample, in sample order.
fn per_sample_values(net: &Network, samples: &[&[f64]], exec: Execution) -> Result<Vec<Vec<f64>>> {
    exec.map(samples, |x| svd_values(&jacobian(net, x)?))
        .into_iter()
        .collect()
}

pub fn mean_jsv(net: &Network, inputs: &Tensor) -> Result<JsvReport> {
    mean_jsv_with(net, inputs, Execution::default())
}

/// JSV statistics pooled over the samples in `inputs` (`S x input_shape`).
///
/// A linear network has the same Jacobian everywhere; this is checked on
/// the first two samples and then a single sample is used.
pub fn mean_jsv_with(net: &Network, inputs: &Tensor, exec: Execution) -> Result<JsvReport> {
    let count = inputs.shape()[0];
    let d_in = net.input_dim();
    if inputs.len() != count * d_in {
        return Err(Error::ShapeMismatch {
            op: "mean_jsv",
            left: inputs.shape().to_vec(),
            right: net.input_shape().to_vec(),
        });
    }
    let samples: Vec<&[f64]> = inputs.data().chunks(d_in).collect();
    let classes: usize = net.output_shape()?.iter().product();
    let k = classes.min(d_in);
    if net.is_linear() {
        let j0 = jacobian(net, samples[0])?;
        if samples.len() > 1 {
            let j1 = jacobian(net, samples[1])?;
            let scale = j0.data().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
            let diff = j0.max_abs_diff(&j1)?;
            if diff > LINEAR_JACOBIAN_TOL * scale {
                return Err(Error::Trace(format!(
                    "linear network Jacobian varies with the input (max diff {diff:e})"
                )));
            }
        }
        return JsvReport::from_values(svd_values(&j0)?, k, 1);
    }
    let per = per_sample_values(net, &samples, exec)?;
    JsvReport::from_values(per.concat(), k, samples.len())
}

/// Replaces each weight, viewed as `out x fan_in`, by the sign-corrected
/// `Q` factor of its QR decomposition. Wide matrices are factored
/// transposed so the result has orthonormal rows. Magnitudes are not
/// restored.
pub fn orthp(net: &Network) -> Result<Network> {
    let mut weights = Vec::new();
    for (k, w) in net.weights().into_iter().enumerate() {
        if w.data().iter().all(|&v| v == 0.0) {
            return Err(Error::OrthogonalizationUndefined(k));
        }
        let (rows, cols) = w.as_matrix_dims();
        let m = w.clone().reshape(vec![rows, cols])?;
        let q = if rows >= cols {
            sign_corrected_q(&m)?
        } else {
            sign_corrected_q(&m.transpose()?)?.transpose()?
        };
        weights.push(q.reshape(w.shape().to_vec())?);
    }
    net.with_weights(weights)
}

/// One row of a pruning sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub ratio: f64,
    pub report: JsvReport,
}

pub fn jsv_sweep(net: &Network, targets: &[usize], ratios: &[f64], inputs: &Tensor) -> Result<Vec<SweepPoint>> {
    jsv_sweep_with(net, targets, ratios, inputs, Execution::default())
}

/// Prunes a copy of `net` at each ratio (on the `targets` layers) and
/// measures its JSVs. Ratio 0 reports the unpruned network.
pub fn jsv_sweep_with(
    net: &Network,
    targets: &[usize],
    ratios: &[f64],
    inputs: &Tensor,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    for &r in ratios {
        PruneSpec::uniform(targets, r)?;
    }
    exec.map(ratios, |&ratio| {
        let pruned = if ratio == 0.0 {
            net.clone()
        } else {
            let plan = make_plan(net, &PruneSpec::uniform(targets, ratio)?)?;
            apply_plan(net, &plan)?
        };
        // Per-sample work inside each ratio stays sequential; the ratios
        // already fan out.
        Ok(SweepPoint {
            ratio,
            report: mean_jsv_with(&pruned, inputs, Execution::Sequential)?,
        })
    })
    .into_iter()
    .collect()
}

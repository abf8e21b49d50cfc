//! Fully-connected ReLU network with softmax cross-entropy loss and a
//! hand-written reverse pass.
//!
//! Parameter layout is layer-major. Within layer `l` (mapping `w_in → w_out`)
//! the `w_out × w_in` weight matrix comes first, row-major (row = output
//! unit), followed by the `w_out` biases.

use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GradientStream, Problem};
use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ParamVector, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    /// Input width, hidden widths…, output width.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub init_seed: u64,
    #[serde(default)]
    pub loss: LossKind,
}

impl MlpSpec {
    /// `hidden` layers of width `width` between `input` and `output`.
    pub fn uniform(input: usize, hidden: usize, width: usize, output: usize, init_seed: u64) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend(std::iter::repeat_n(width, hidden));
        layer_widths.push(output);
        Self {
            layer_widths,
            activation: Activation::Relu,
            init_seed,
            loss: LossKind::SoftmaxCrossEntropy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 || self.layer_widths.contains(&0) {
            return Err(Error::ConfigInvalid(
                "an MLP needs at least two layers of positive width".into(),
            ));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().expect("validated spec")
    }
}

/// Weight and bias index ranges of each layer in the flattened vector.
pub fn layer_ranges(spec: &MlpSpec) -> Vec<(Range<usize>, Range<usize>)> {
    let mut offset = 0;
    spec.layer_widths
        .windows(2)
        .map(|w| {
            let weights = offset..offset + w[0] * w[1];
            let biases = weights.end..weights.end + w[1];
            offset = biases.end;
            (weights, biases)
        })
        .collect()
}

/// He initialization: weights `N(0, 2/fan_in)`, biases zero.
pub fn mlp_init(spec: &MlpSpec) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = RngStream::new(spec.init_seed, 0).rng();
    let mut params = Vec::with_capacity(spec.param_count());
    for w in spec.layer_widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
            .map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        params.extend((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector::new(params)
}

/// Per-sample forward activations, reused across the batch.
struct Workspace {
    /// `acts[0]` is the input; `acts[l]` the post-activation output of layer `l`
    /// (logits for the last layer).
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(spec: &MlpSpec) -> Self {
        Self {
            acts: spec.layer_widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: spec.layer_widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }
}

fn forward(spec: &MlpSpec, params: &[f64], ranges: &[(Range<usize>, Range<usize>)], ws: &mut Workspace, input: &[f64]) {
    ws.acts[0].copy_from_slice(input);
    let last = spec.n_layers() - 1;
    for (l, (wr, br)) in ranges.iter().enumerate() {
        let (prev, rest) = ws.acts.split_at_mut(l + 1);
        let a_in = &prev[l];
        let a_out = &mut rest[0];
        let w = &params[wr.clone()];
        let b = &params[br.clone()];
        let fan_in = a_in.len();
        for (o, out) in a_out.iter_mut().enumerate() {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let z = row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>() + b[o];
            // NaN must survive the ReLU so it is reported, not masked
            *out = if l == last || !(z < 0.0) { z } else { 0.0 };
        }
    }
}

/// Cross-entropy of `logits` against `label`; writes `softmax − onehot` into
/// `delta`.
fn softmax_xent(logits: &[f64], label: usize, delta: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (d, z) in delta.iter_mut().zip(logits) {
        *d = (z - max).exp();
        sum += *d;
    }
    for d in delta.iter_mut() {
        *d /= sum;
    }
    delta[label] -= 1.0;
    max + sum.ln() - logits[label]
}

/// Mean softmax cross-entropy over `batch` rows of `data`, with its exact
/// gradient.
pub fn mlp_loss_grad(
    spec: &MlpSpec,
    params: &ParamVector,
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, ParamVector)> {
    spec.validate()?;
    params.check_dim(spec.param_count())?;
    if data.dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim(),
            found: data.dim(),
        });
    }
    if spec.output_dim() < data.n_classes() {
        return Err(Error::ConfigInvalid(format!(
            "network has {} outputs but the data has {} classes",
            spec.output_dim(),
            data.n_classes()
        )));
    }
    if batch.is_empty() {
        return Err(Error::ConfigInvalid("empty batch".into()));
    }
    let p = params.as_slice();
    let ranges = layer_ranges(spec);
    let mut ws = Workspace::new(spec);
    let mut grad = vec![0.0; p.len()];
    let mut loss = 0.0;
    let n_layers = spec.n_layers();

    for &i in batch {
        forward(spec, p, &ranges, &mut ws, data.input(i));
        loss += softmax_xent(&ws.acts[n_layers], data.label(i), &mut ws.deltas[n_layers]);

        for l in (0..n_layers).rev() {
            let (wr, br) = &ranges[l];
            let fan_in = spec.layer_widths[l];
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta_out = &upper[0];
            let a_in = &ws.acts[l];
            {
                let gw = &mut grad[wr.clone()];
                for (o, d) in delta_out.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (g, a) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(a_in) {
                        *g += d * a;
                    }
                }
            }
            for (g, d) in grad[br.clone()].iter_mut().zip(delta_out) {
                *g += d;
            }
            if l > 0 {
                let w = &p[wr.clone()];
                let delta_in = &mut lower[l];
                delta_in.iter_mut().for_each(|d| *d = 0.0);
                for (o, d) in delta_out.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    for (di, w) in delta_in.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *di += d * w;
                    }
                }
                // ReLU'(z) = 1 iff the post-activation is positive
                for (di, a) in delta_in.iter_mut().zip(a_in) {
                    if *a <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    let loss = loss / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteValue { context: "mlp loss" });
    }
    ensure_finite(&grad, "mlp gradient")?;
    Ok((loss, ParamVector::from_vec_unchecked(grad)))
}

/// Fraction of rows whose arg-max logit equals the label.
pub fn accuracy(spec: &MlpSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    params.check_dim(spec.param_count())?;
    if data.is_empty() {
        return Ok(0.0);
    }
    let ranges = layer_ranges(spec);
    let mut ws = Workspace::new(spec);
    let mut correct = 0usize;
    for i in 0..data.len() {
        forward(spec, params.as_slice(), &ranges, &mut ws, data.input(i));
        let logits = &ws.acts[spec.n_layers()];
        let pred = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &z)| if z > best.1 { (k, z) } else { best })
            .0;
        if pred == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Full-dataset loss as a deterministic [`Problem`].
#[derive(Debug, Clone)]
pub struct MlpObjective {
    spec: MlpSpec,
    data: Arc<Dataset>,
    all: Vec<usize>,
}

impl MlpObjective {
    pub fn new(spec: MlpSpec, data: Arc<Dataset>) -> Result<Self> {
        spec.validate()?;
        let all = (0..data.len()).collect();
        Ok(Self { spec, data, all })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }
}

impl Problem for MlpObjective {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn value(&self, x: &ParamVector) -> Result<f64> {
        Ok(mlp_loss_grad(&self.spec, x, &self.data, &self.all)?.0)
    }

    fn gradient(&self, x: &ParamVector) -> Result<ParamVector> {
        Ok(mlp_loss_grad(&self.spec, x, &self.data, &self.all)?.1)
    }
}

/// Seeded minibatch stream: each epoch visits a fresh permutation of the
/// data in consecutive batches (the last one possibly short). Loss and
/// gradient are multiplied by `loss_scale`.
#[derive(Debug, Clone)]
pub struct MinibatchStream {
    spec: MlpSpec,
    data: Arc<Dataset>,
    batch_size: usize,
    loss_scale: f64,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
}

impl MinibatchStream {
    pub fn new(
        spec: MlpSpec,
        data: Arc<Dataset>,
        batch_size: usize,
        loss_scale: f64,
        stream: RngStream,
    ) -> Result<Self> {
        spec.validate()?;
        if batch_size == 0 || data.is_empty() {
            return Err(Error::ConfigInvalid("batch size and dataset must be nonempty".into()));
        }
        if !(loss_scale > 0.0 && loss_scale.is_finite()) {
            return Err(Error::ConfigInvalid(format!("loss scale must be positive, got {loss_scale}")));
        }
        let order = (0..data.len()).collect();
        Ok(Self {
            spec,
            data,
            batch_size,
            loss_scale,
            rng: stream.rng(),
            order,
            cursor: usize::MAX,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.data.len().div_ceil(self.batch_size)
    }
}

impl GradientStream for MinibatchStream {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn next_grad(&mut self, x: &ParamVector) -> Result<(f64, ParamVector)> {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = &self.order[self.cursor..end];
        self.cursor = end;
        let (loss, grad) = mlp_loss_grad(&self.spec, x, &self.data, batch)?;
        if self.loss_scale == 1.0 {
            Ok((loss, grad))
        } else {
            Ok((self.loss_scale * loss, grad.scaled(self.loss_scale)?))
        }
    }
}

//! Native minibatch-SGD trainer, FedAvg aggregation, and evaluation.
//!
//! Two model families are supported: multinomial softmax regression and a
//! one-hidden-layer tanh MLP. Parameters live in a single flat vector with
//! a layout header, so aggregation and checkpointing never care about the
//! architecture. Losses are cross-entropy computed as
//! `logsumexp(logits) - logit[label]`, which stays finite for any finite
//! logits.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::{ClientShard, LabeledDataset};
use crate::rng::rng_from_seed;

/// Model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    SoftmaxRegression,
    MlpOneHidden { hidden: usize },
}

impl ModelKind {
    fn layout(&self, feature_dim: usize, num_classes: usize) -> Vec<TensorSpec> {
        match *self {
            ModelKind::SoftmaxRegression => vec![
                TensorSpec::new("w", vec![feature_dim, num_classes]),
                TensorSpec::new("b", vec![num_classes]),
            ],
            ModelKind::MlpOneHidden { hidden } => vec![
                TensorSpec::new("w1", vec![feature_dim, hidden]),
                TensorSpec::new("b1", vec![hidden]),
                TensorSpec::new("w2", vec![hidden, num_classes]),
                TensorSpec::new("b2", vec![num_classes]),
            ],
        }
    }
}

/// Local-training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub model_kind: ModelKind,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("hyper.learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("hyper.batch_size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Config("hyper.local_epochs must be >= 1".into()));
        }
        if let ModelKind::MlpOneHidden { hidden } = self.model_kind {
            if hidden == 0 {
                return Err(Error::Config("hyper.model_kind.hidden must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Name and shape of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: &str, shape: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            shape,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector plus layout metadata and a round tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub values: Vec<f64>,
    pub layout: Vec<TensorSpec>,
    pub version: u64,
}

impl ModelParams {
    /// Check the layout covers the value vector exactly and every value is
    /// finite.
    pub fn validate(&self) -> Result<()> {
        let expected: usize = self.layout.iter().map(TensorSpec::len).sum();
        if expected != self.values.len() {
            return Err(Error::Integrity(format!(
                "layout covers {expected} values but the vector holds {}",
                self.values.len()
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!(
                "parameter {i} is non-finite"
            )));
        }
        Ok(())
    }

    /// Recover the model family from the layout header.
    pub fn kind(&self) -> Result<ModelKind> {
        let names: Vec<&str> = self.layout.iter().map(|t| t.name.as_str()).collect();
        match names.as_slice() {
            ["w", "b"] => Ok(ModelKind::SoftmaxRegression),
            ["w1", "b1", "w2", "b2"] => Ok(ModelKind::MlpOneHidden {
                hidden: self.layout[1].shape[0],
            }),
            _ => Err(Error::Integrity(format!(
                "unrecognized parameter layout {names:?}"
            ))),
        }
    }

    fn dims(&self) -> Result<(usize, usize)> {
        match self.kind()? {
            ModelKind::SoftmaxRegression => {
                Ok((self.layout[0].shape[0], self.layout[0].shape[1]))
            }
            ModelKind::MlpOneHidden { .. } => {
                Ok((self.layout[0].shape[0], self.layout[3].shape[0]))
            }
        }
    }
}

/// Output of one client's local training round.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTrainResult {
    /// New parameters minus the received parameters.
    pub delta: Vec<f64>,
    /// Cross-entropy loss of each shard sample under the final local
    /// weights.
    pub per_sample_losses: Vec<f64>,
    /// Shard size |B_i|; the FedAvg weight.
    pub num_samples: usize,
}

/// Initialize parameters: weights uniform in `±1/sqrt(fan_in)`, biases zero.
pub fn init_params(
    model_kind: ModelKind,
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModelParams> {
    if feature_dim == 0 || num_classes < 2 {
        return Err(Error::Config(
            "feature_dim must be >= 1 and num_classes >= 2".into(),
        ));
    }
    if let ModelKind::MlpOneHidden { hidden: 0 } = model_kind {
        return Err(Error::Config("hidden layer must have >= 1 unit".into()));
    }
    let layout = model_kind.layout(feature_dim, num_classes);
    let mut rng = rng_from_seed(seed);
    let mut values = Vec::with_capacity(layout.iter().map(TensorSpec::len).sum());
    for tensor in &layout {
        if tensor.shape.len() == 2 {
            let bound = 1.0 / (tensor.shape[0] as f64).sqrt();
            for _ in 0..tensor.len() {
                values.push(rng.gen_range(-bound..bound));
            }
        } else {
            values.extend(std::iter::repeat(0.0).take(tensor.len()));
        }
    }
    let params = ModelParams {
        values,
        layout,
        version: 0,
    };
    params.validate()?;
    Ok(params)
}

/// Slices of the flat vector for the softmax model: (w, b).
fn softmax_views(values: &[f64], d: usize, l: usize) -> (&[f64], &[f64]) {
    (&values[..d * l], &values[d * l..d * l + l])
}

/// Offsets for the MLP model: (w1, b1, w2, b2).
fn mlp_offsets(d: usize, h: usize, l: usize) -> (usize, usize, usize, usize) {
    let w1 = 0;
    let b1 = w1 + d * h;
    let w2 = b1 + h;
    let b2 = w2 + h * l;
    (w1, b1, w2, b2)
}

/// `logsumexp` over logits, stable under large magnitudes.
fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Forward pass producing logits; for the MLP the hidden activations are
/// also returned for use by backprop.
fn forward(
    kind: ModelKind,
    values: &[f64],
    d: usize,
    l: usize,
    x: &[f64],
    hidden_out: Option<&mut Vec<f64>>,
) -> Vec<f64> {
    match kind {
        ModelKind::SoftmaxRegression => {
            let (w, b) = softmax_views(values, d, l);
            let mut logits = b.to_vec();
            for (k, &xk) in x.iter().enumerate() {
                let row = &w[k * l..(k + 1) * l];
                for (j, &wkj) in row.iter().enumerate() {
                    logits[j] += xk * wkj;
                }
            }
            logits
        }
        ModelKind::MlpOneHidden { hidden: h } => {
            let (w1, b1, w2, b2) = mlp_offsets(d, h, l);
            let mut act = values[b1..b1 + h].to_vec();
            for (k, &xk) in x.iter().enumerate() {
                let row = &values[w1 + k * h..w1 + (k + 1) * h];
                for (i, &w1ki) in row.iter().enumerate() {
                    act[i] += xk * w1ki;
                }
            }
            for a in act.iter_mut() {
                *a = a.tanh();
            }
            let mut logits = values[b2..b2 + l].to_vec();
            for (i, &ai) in act.iter().enumerate() {
                let row = &values[w2 + i * l..w2 + (i + 1) * l];
                for (j, &w2ij) in row.iter().enumerate() {
                    logits[j] += ai * w2ij;
                }
            }
            if let Some(out) = hidden_out {
                *out = act;
            }
            logits
        }
    }
}

/// Cross-entropy loss of one sample.
fn sample_loss(kind: ModelKind, values: &[f64], d: usize, l: usize, x: &[f64], y: usize) -> f64 {
    let logits = forward(kind, values, d, l, x, None);
    log_sum_exp(&logits) - logits[y]
}

/// Accumulate the gradient of one sample's cross-entropy loss into `grad`.
fn accumulate_gradient(
    kind: ModelKind,
    values: &[f64],
    grad: &mut [f64],
    d: usize,
    l: usize,
    x: &[f64],
    y: usize,
) {
    match kind {
        ModelKind::SoftmaxRegression => {
            let logits = forward(kind, values, d, l, x, None);
            let lse = log_sum_exp(&logits);
            // dz_j = p_j - [j == y]
            let mut dz: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
            dz[y] -= 1.0;
            for (k, &xk) in x.iter().enumerate() {
                let row = &mut grad[k * l..(k + 1) * l];
                for (j, &dzj) in dz.iter().enumerate() {
                    row[j] += xk * dzj;
                }
            }
            let gb = &mut grad[d * l..d * l + l];
            for (j, &dzj) in dz.iter().enumerate() {
                gb[j] += dzj;
            }
        }
        ModelKind::MlpOneHidden { hidden: h } => {
            let (w1, b1, w2, b2) = mlp_offsets(d, h, l);
            let mut act = Vec::new();
            let logits = forward(kind, values, d, l, x, Some(&mut act));
            let lse = log_sum_exp(&logits);
            let mut dz: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
            dz[y] -= 1.0;
            // output layer
            for (i, &ai) in act.iter().enumerate() {
                let row = &mut grad[w2 + i * l..w2 + (i + 1) * l];
                for (j, &dzj) in dz.iter().enumerate() {
                    row[j] += ai * dzj;
                }
            }
            for (j, &dzj) in dz.iter().enumerate() {
                grad[b2 + j] += dzj;
            }
            // backprop through tanh
            let mut da = vec![0.0; h];
            for (i, &ai) in act.iter().enumerate() {
                let row = &values[w2 + i * l..w2 + (i + 1) * l];
                let dh: f64 = row.iter().zip(&dz).map(|(&w, &dzj)| w * dzj).sum();
                da[i] = dh * (1.0 - ai * ai);
            }
            for (k, &xk) in x.iter().enumerate() {
                let row = &mut grad[w1 + k * h..w1 + (k + 1) * h];
                for (i, &dai) in da.iter().enumerate() {
                    row[i] += xk * dai;
                }
            }
            for (i, &dai) in da.iter().enumerate() {
                grad[b1 + i] += dai;
            }
        }
    }
}

/// Full-shard mean-loss gradient, exposed for finite-difference checks.
pub fn loss_gradient(
    params: &ModelParams,
    dataset: &LabeledDataset,
    samples: &[usize],
) -> Result<Vec<f64>> {
    params.validate()?;
    let kind = params.kind()?;
    let (d, l) = params.dims()?;
    let mut grad = vec![0.0; params.values.len()];
    for &s in samples {
        accumulate_gradient(
            kind,
            &params.values,
            &mut grad,
            d,
            l,
            dataset.features_of(s),
            dataset.label(s),
        );
    }
    let scale = 1.0 / samples.len() as f64;
    for g in grad.iter_mut() {
        *g *= scale;
    }
    Ok(grad)
}

/// Mean loss over a set of samples, exposed for finite-difference checks.
pub fn mean_loss(
    params: &ModelParams,
    dataset: &LabeledDataset,
    samples: &[usize],
) -> Result<f64> {
    let kind = params.kind()?;
    let (d, l) = params.dims()?;
    let total: f64 = samples
        .iter()
        .map(|&s| sample_loss(kind, &params.values, d, l, dataset.features_of(s), dataset.label(s)))
        .sum();
    Ok(total / samples.len() as f64)
}

/// Run `local_epochs` of minibatch SGD on the shard, then compute per-sample
/// losses with the final local weights. The returned delta is measured
/// against the received parameters.
pub fn local_train(
    params: &ModelParams,
    shard: &ClientShard,
    dataset: &LabeledDataset,
    hyper: &HyperParams,
    seed: u64,
) -> Result<LocalTrainResult> {
    if shard.size() == 0 {
        return Err(Error::Partition(format!(
            "client {} has an empty shard; utility is undefined",
            shard.client_id
        )));
    }
    params.validate()?;
    let kind = params.kind()?;
    if kind != hyper.model_kind {
        return Err(Error::Config(format!(
            "hyper.model_kind {:?} does not match parameter layout {:?}",
            hyper.model_kind, kind
        )));
    }
    let (d, l) = params.dims()?;
    if d != dataset.feature_dim() || l != dataset.num_classes() {
        return Err(Error::Config(format!(
            "model is {d}x{l} but dataset is {}x{}",
            dataset.feature_dim(),
            dataset.num_classes()
        )));
    }

    let mut values = params.values.clone();
    let mut order = shard.sample_indices.clone();
    let mut rng = rng_from_seed(seed);
    let mut grad = vec![0.0; values.len()];
    for _ in 0..hyper.local_epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for batch in order.chunks(hyper.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &s in batch {
                accumulate_gradient(
                    kind,
                    &values,
                    &mut grad,
                    d,
                    l,
                    dataset.features_of(s),
                    dataset.label(s),
                );
            }
            let step = hyper.learning_rate / batch.len() as f64;
            for (v, g) in values.iter_mut().zip(&grad) {
                *v -= step * g;
            }
        }
    }

    let per_sample_losses: Vec<f64> = shard
        .sample_indices
        .iter()
        .map(|&s| sample_loss(kind, &values, d, l, dataset.features_of(s), dataset.label(s)))
        .collect();
    if per_sample_losses.iter().any(|v| !v.is_finite())
        || values.iter().any(|v| !v.is_finite())
    {
        return Err(Error::Divergence(format!(
            "client {} produced non-finite values during local training",
            shard.client_id
        )));
    }
    let delta: Vec<f64> = values
        .iter()
        .zip(&params.values)
        .map(|(new, old)| new - old)
        .collect();
    Ok(LocalTrainResult {
        delta,
        per_sample_losses,
        num_samples: shard.size(),
    })
}

/// FedAvg: `new = base + sum_i (n_i / sum_j n_j) * delta_i`.
///
/// Results must be supplied in ascending client id order so the
/// floating-point reduction is deterministic; the caller owns that ordering.
pub fn fed_avg(base: &ModelParams, results: &[LocalTrainResult]) -> Result<ModelParams> {
    if results.is_empty() {
        return Err(Error::Aggregation("no client results to aggregate".into()));
    }
    for (i, r) in results.iter().enumerate() {
        if r.delta.len() != base.values.len() {
            return Err(Error::Aggregation(format!(
                "result {i} has delta length {} but the base has {}",
                r.delta.len(),
                base.values.len()
            )));
        }
    }
    let total: usize = results.iter().map(|r| r.num_samples).sum();
    if total == 0 {
        return Err(Error::Aggregation(
            "total sample count across results is zero".into(),
        ));
    }
    let mut values = base.values.clone();
    for r in results {
        let weight = r.num_samples as f64 / total as f64;
        for (v, dv) in values.iter_mut().zip(&r.delta) {
            *v += weight * dv;
        }
    }
    let params = ModelParams {
        values,
        layout: base.layout.clone(),
        version: base.version + 1,
    };
    params.validate()?;
    Ok(params)
}

/// Accuracy (argmax, ties to the lowest class index) and mean cross-entropy
/// loss over a dataset.
pub fn evaluate(params: &ModelParams, dataset: &LabeledDataset) -> Result<(f64, f64)> {
    params.validate()?;
    let kind = params.kind()?;
    let (d, l) = params.dims()?;
    if d != dataset.feature_dim() || l != dataset.num_classes() {
        return Err(Error::Config(format!(
            "model is {d}x{l} but dataset is {}x{}",
            dataset.feature_dim(),
            dataset.num_classes()
        )));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    for s in 0..dataset.num_samples() {
        let x = dataset.features_of(s);
        let logits = forward(kind, &params.values, d, l, x, None);
        let mut best = 0;
        for (j, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = j;
            }
        }
        if best == dataset.label(s) {
            correct += 1;
        }
        loss_sum += log_sum_exp(&logits) - logits[dataset.label(s)];
    }
    let n = dataset.num_samples() as f64;
    Ok((correct as f64 / n, loss_sum / n))
}

const CHECKPOINT_MAGIC: &str = "FEDCARBON-CKPT v1";

/// Write a checkpoint: a magic line, a JSON header line with version and
/// layout, then the raw values as little-endian 64-bit floats.
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    params.validate()?;
    #[derive(Serialize)]
    struct Header<'a> {
        version: u64,
        layout: &'a [TensorSpec],
    }
    let header = serde_json::to_string(&Header {
        version: params.version,
        layout: &params.layout,
    })
    .map_err(|e| Error::Integrity(format!("checkpoint header: {e}")))?;
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "{CHECKPOINT_MAGIC}")?;
    writeln!(file, "{header}")?;
    let mut bytes = Vec::with_capacity(params.values.len() * 8);
    for v in &params.values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&bytes)?;
    Ok(())
}

/// Read a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    let first_nl = raw
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            line: 1,
            message: "missing checkpoint magic line".into(),
        })?;
    if &raw[..first_nl] != CHECKPOINT_MAGIC.as_bytes() {
        return Err(Error::Parse {
            line: 1,
            message: "not a checkpoint file".into(),
        });
    }
    let rest = &raw[first_nl + 1..];
    let second_nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse {
            line: 2,
            message: "missing checkpoint header line".into(),
        })?;
    #[derive(Deserialize)]
    struct Header {
        version: u64,
        layout: Vec<TensorSpec>,
    }
    let header: Header =
        serde_json::from_slice(&rest[..second_nl]).map_err(|e| Error::Parse {
            line: 2,
            message: format!("bad checkpoint header: {e}"),
        })?;
    let body = &rest[second_nl + 1..];
    let expected: usize = header.layout.iter().map(TensorSpec::len).sum();
    if body.len() != expected * 8 {
        return Err(Error::Integrity(format!(
            "checkpoint body holds {} bytes but the layout needs {}",
            body.len(),
            expected * 8
        )));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ModelParams {
        values,
        layout: header.layout,
        version: header.version,
    };
    params.validate()?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::generate_synthetic;

    fn shard_over(dataset: &LabeledDataset) -> ClientShard {
        ClientShard {
            client_id: 0,
            sample_indices: (0..dataset.num_samples()).collect(),
        }
    }

    fn hyper(kind: ModelKind, lr: f64, epochs: usize) -> HyperParams {
        HyperParams {
            learning_rate: lr,
            batch_size: 8,
            local_epochs: epochs,
            model_kind: kind,
        }
    }

    #[test]
    fn init_counts_match_architecture() {
        let p = init_params(ModelKind::SoftmaxRegression, 4, 3, 0).unwrap();
        assert_eq!(p.values.len(), 4 * 3 + 3);
        let p = init_params(ModelKind::MlpOneHidden { hidden: 8 }, 4, 3, 0).unwrap();
        assert_eq!(p.values.len(), 4 * 8 + 8 + 8 * 3 + 3);
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_params(ModelKind::SoftmaxRegression, 6, 4, 11).unwrap();
        let b = init_params(ModelKind::SoftmaxRegression, 6, 4, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let ds = generate_synthetic(40, 2, 3, 2.0, 5).unwrap();
        let params = init_params(ModelKind::SoftmaxRegression, 3, 2, 1).unwrap();
        let shard = shard_over(&ds);
        let result = local_train(
            &params,
            &shard,
            &ds,
            &hyper(ModelKind::SoftmaxRegression, 0.0, 3),
            9,
        )
        .unwrap();
        assert!(result.delta.iter().all(|&d| d == 0.0));
        // losses must equal the received-parameter losses exactly
        for (&s, &loss) in shard.sample_indices.iter().zip(&result.per_sample_losses) {
            let expected = mean_loss(&params, &ds, &[s]).unwrap();
            assert_eq!(loss, expected);
        }
    }

    #[test]
    fn training_fits_separable_data() {
        let ds = generate_synthetic(60, 2, 2, 6.0, 3).unwrap();
        let params = init_params(ModelKind::SoftmaxRegression, 2, 2, 1).unwrap();
        let result = local_train(
            &params,
            &shard_over(&ds),
            &ds,
            &hyper(ModelKind::SoftmaxRegression, 0.5, 200),
            4,
        )
        .unwrap();
        let mean: f64 =
            result.per_sample_losses.iter().sum::<f64>() / result.num_samples as f64;
        assert!(mean < 0.1, "mean post-training loss {mean} >= 0.1");
    }

    /// Central finite differences as the independent gradient oracle.
    fn finite_difference(
        params: &ModelParams,
        ds: &LabeledDataset,
        samples: &[usize],
    ) -> Vec<f64> {
        let eps = 1e-6;
        let mut grad = vec![0.0; params.values.len()];
        let mut work = params.clone();
        for i in 0..params.values.len() {
            work.values[i] = params.values[i] + eps;
            let up = mean_loss(&work, ds, samples).unwrap();
            work.values[i] = params.values[i] - eps;
            let down = mean_loss(&work, ds, samples).unwrap();
            work.values[i] = params.values[i];
            grad[i] = (up - down) / (2.0 * eps);
        }
        grad
    }

    fn assert_gradients_close(kind: ModelKind, seed: u64) {
        let ds = generate_synthetic(12, 3, 4, 2.0, seed).unwrap();
        let params = init_params(kind, 4, 3, seed + 1).unwrap();
        let samples: Vec<usize> = (0..5).collect();
        let analytic = loss_gradient(&params, &ds, &samples).unwrap();
        let numeric = finite_difference(&params, &ds, &samples);
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let denom = a.abs().max(n.abs()).max(1e-8);
            assert!(
                ((a - n) / denom).abs() < 1e-5,
                "param {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..5 {
            assert_gradients_close(ModelKind::SoftmaxRegression, 100 + seed);
            assert_gradients_close(ModelKind::MlpOneHidden { hidden: 6 }, 200 + seed);
        }
    }

    fn result_with(delta: Vec<f64>, n: usize) -> LocalTrainResult {
        LocalTrainResult {
            delta,
            per_sample_losses: vec![0.0; n],
            num_samples: n,
        }
    }

    fn flat_params(values: Vec<f64>) -> ModelParams {
        let n = values.len();
        ModelParams {
            values,
            layout: vec![TensorSpec::new("w", vec![1, n])],
            version: 0,
        }
    }

    #[test]
    fn fed_avg_equal_weights_is_plain_mean() {
        let base = flat_params(vec![0.0, 0.0]);
        let out = fed_avg(
            &base,
            &[
                result_with(vec![2.0, 0.0], 5),
                result_with(vec![0.0, 2.0], 5),
            ],
        )
        .unwrap();
        assert_eq!(out.values, vec![1.0, 1.0]);
        assert_eq!(out.version, 1);
    }

    #[test]
    fn fed_avg_single_client_is_identity() {
        let base = flat_params(vec![1.0, -1.0]);
        let out = fed_avg(&base, &[result_with(vec![0.5, 0.25], 3)]).unwrap();
        assert_eq!(out.values, vec![1.5, -0.75]);
    }

    #[test]
    fn fed_avg_weighted_mean_matches_oracle() {
        let base = flat_params(vec![0.0, 0.0]);
        let results = [
            result_with(vec![4.0, 0.0], 1),
            result_with(vec![0.0, 4.0], 3),
        ];
        let out = fed_avg(&base, &results).unwrap();
        // brute-force oracle: sum n_i * delta_i / sum n_i per coordinate
        let total: f64 = results.iter().map(|r| r.num_samples as f64).sum();
        for coord in 0..2 {
            let expected: f64 = results
                .iter()
                .map(|r| r.num_samples as f64 * r.delta[coord])
                .sum::<f64>()
                / total;
            assert!((out.values[coord] - expected).abs() < 1e-12);
        }
        assert_eq!(out.values, vec![1.0, 3.0]);
    }

    #[test]
    fn fed_avg_rejects_mismatched_lengths() {
        let base = flat_params(vec![0.0, 0.0]);
        assert!(matches!(
            fed_avg(&base, &[result_with(vec![1.0], 1)]),
            Err(Error::Aggregation(_))
        ));
        assert!(matches!(fed_avg(&base, &[]), Err(Error::Aggregation(_))));
        assert!(matches!(
            fed_avg(&base, &[result_with(vec![1.0, 1.0], 0)]),
            Err(Error::Aggregation(_))
        ));
    }

    #[test]
    fn evaluate_constant_predictor() {
        // Strong bias toward class 0; weights zero.
        let mut params = init_params(ModelKind::SoftmaxRegression, 2, 2, 0).unwrap();
        params.values.iter_mut().for_each(|v| *v = 0.0);
        params.values[2 * 2] = 10.0; // b[0]
        let ds = LabeledDataset::new(
            vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0],
            2,
            vec![0, 1, 0, 1],
            2,
        )
        .unwrap();
        let (acc, _) = evaluate(&params, &ds).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn evaluate_zero_model_has_log_l_loss() {
        let mut params = init_params(ModelKind::SoftmaxRegression, 3, 4, 0).unwrap();
        params.values.iter_mut().for_each(|v| *v = 0.0);
        let ds = generate_synthetic(40, 4, 3, 2.0, 6).unwrap();
        let (_, loss) = evaluate(&params, &ds).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_ties_break_to_lowest_class() {
        let mut params = init_params(ModelKind::SoftmaxRegression, 2, 3, 0).unwrap();
        params.values.iter_mut().for_each(|v| *v = 0.0);
        let ds = LabeledDataset::new(
            vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            2,
            vec![0, 1, 2],
            3,
        )
        .unwrap();
        // all logits equal -> always predicts class 0
        let (acc, _) = evaluate(&params, &ds).unwrap();
        assert!((acc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_perfect_margin_hits_full_accuracy() {
        let ds = generate_synthetic(100, 2, 2, 8.0, 12).unwrap();
        let params = init_params(ModelKind::SoftmaxRegression, 2, 2, 1).unwrap();
        let trained = local_train(
            &params,
            &shard_over(&ds),
            &ds,
            &hyper(ModelKind::SoftmaxRegression, 0.5, 300),
            4,
        )
        .unwrap();
        let final_params = ModelParams {
            values: params
                .values
                .iter()
                .zip(&trained.delta)
                .map(|(p, d)| p + d)
                .collect(),
            layout: params.layout.clone(),
            version: 1,
        };
        let (acc, _) = evaluate(&final_params, &ds).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut params = init_params(ModelKind::MlpOneHidden { hidden: 5 }, 3, 2, 42).unwrap();
        params.version = 17;
        save_checkpoint(&params, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn local_train_rejects_empty_shard() {
        let ds = generate_synthetic(10, 2, 2, 2.0, 5).unwrap();
        let params = init_params(ModelKind::SoftmaxRegression, 2, 2, 1).unwrap();
        let shard = ClientShard {
            client_id: 3,
            sample_indices: vec![],
        };
        assert!(local_train(
            &params,
            &shard,
            &ds,
            &hyper(ModelKind::SoftmaxRegression, 0.1, 1),
            0
        )
        .is_err());
    }
}

//! Fully connected ReLU network with a masked squared-error loss, Adam updates
//! and a portable text checkpoint.

use std::fs;
use std::path::Path;

use base64::Engine as _;
use base64::engine::general_purpose::STANDARD as B64;
use rand::Rng as _;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result, Rng};

pub const CHECKPOINT_FORMAT: &str = "rlstep-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Network topology.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub output_dim: usize,
}

impl MlpSpec {
    /// Four hidden layers, each five times as wide as the input.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, hidden_layers: 4, hidden_width: 5 * input_dim, output_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || (self.hidden_layers > 0 && self.hidden_width == 0) {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(std::iter::repeat_n(self.hidden_width, self.hidden_layers));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Affine map `y = W x + b` with `W` stored row-major (`outputs x inputs`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { inputs, outputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (o, yo) in y.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *yo = row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay applied to weight matrices (not biases).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment accumulators, one pair of blocks per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Layer>,
    pub v: Vec<Layer>,
}

impl AdamState {
    fn zeros(spec: &MlpSpec) -> Self {
        let blocks = || spec.layer_shapes().iter().map(|&(i, o)| Layer::zeros(i, o)).collect();
        Self { step: 0, m: blocks(), v: blocks() }
    }
}

/// Inputs paired with `(action, target)`; only the selected output is fitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<(usize, f64)>,
}

impl TrainBatch {
    pub fn push(&mut self, input: Vec<f64>, action: usize, target: f64) {
        self.inputs.push(input);
        self.targets.push((action, target));
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
        }
    }
}

/// Network parameters plus optional optimizer state. A network without
/// optimizer state is usable for inference only.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
    pub adam: Option<AdamState>,
}

impl Mlp {
    /// Uniform fan-average initialization with limit `sqrt(6 / (fan_in + fan_out))`.
    pub fn init(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let limit = (6.0 / (i + o) as f64).sqrt();
                let mut layer = Layer::zeros(i, o);
                for w in &mut layer.weights {
                    *w = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self { spec, layers, adam: Some(AdamState::zeros(&spec)) })
    }

    /// Network with the given layers and fresh optimizer state.
    pub fn from_layers(spec: MlpSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        check_shapes(&spec, &layers)?;
        Ok(Self { spec, layers, adam: Some(AdamState::zeros(&spec)) })
    }

    pub fn is_trainable(&self) -> bool {
        self.adam.is_some()
    }

    /// Copy without optimizer state.
    pub fn frozen(&self) -> Self {
        Self { spec: self.spec, layers: self.layers.clone(), adam: None }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input_dim {
            return Err(Error::Contract(format!(
                "network input has length {}, expected {}",
                input.len(),
                self.spec.input_dim
            )));
        }
        Ok(self.forward_unchecked(input))
    }

    pub(crate) fn forward_unchecked(&self, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; layer.outputs];
            layer.apply(&x, &mut y);
            if l < last {
                relu(&mut y);
            }
            x = y;
        }
        x
    }

    fn check_batch(&self, batch: &TrainBatch) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Contract("empty training batch".into()));
        }
        if batch.inputs.len() != batch.targets.len() {
            return Err(Error::Contract("batch inputs and targets differ in length".into()));
        }
        for (x, &(a, _)) in batch.inputs.iter().zip(&batch.targets) {
            if x.len() != self.spec.input_dim {
                return Err(Error::Contract(format!(
                    "batch input has length {}, expected {}",
                    x.len(),
                    self.spec.input_dim
                )));
            }
            if a >= self.spec.output_dim {
                return Err(Error::Contract(format!("action {a} out of range")));
            }
        }
        Ok(())
    }

    /// Mean over the batch of `(Q(x, a) - target)^2`.
    pub fn loss(&self, batch: &TrainBatch) -> Result<f64> {
        self.check_batch(batch)?;
        let total: f64 = batch
            .inputs
            .iter()
            .zip(&batch.targets)
            .map(|(x, &(a, y))| (self.forward_unchecked(x)[a] - y).powi(2))
            .sum();
        Ok(total / batch.len() as f64)
    }

    /// Loss and its gradient with respect to every weight and bias.
    pub fn loss_and_gradient(&self, batch: &TrainBatch) -> Result<(f64, Vec<Layer>)> {
        self.check_batch(batch)?;
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.inputs, l.outputs)).collect();
        let n = batch.len() as f64;
        let last = self.layers.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len() + 1);
        let mut total = 0.0;
        for (x, &(a, y)) in batch.inputs.iter().zip(&batch.targets) {
            acts.clear();
            acts.push(x.clone());
            for (l, layer) in self.layers.iter().enumerate() {
                let mut out = vec![0.0; layer.outputs];
                layer.apply(&acts[l], &mut out);
                if l < last {
                    relu(&mut out);
                }
                acts.push(out);
            }
            let residual = acts[last + 1][a] - y;
            total += residual * residual;

            // Only output `a` carries a gradient.
            let mut delta = vec![0.0; self.layers[last].outputs];
            delta[a] = 2.0 * residual / n;
            for l in (0..=last).rev() {
                let layer = &self.layers[l];
                let g = &mut grads[l];
                let input = &acts[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    g.bias[o] += d;
                    let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (gw, &xi) in row.iter_mut().zip(input) {
                        *gw += d * xi;
                    }
                }
                if l == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // ReLU derivative taken as zero at the kink.
                for (p, &act) in prev.iter_mut().zip(&acts[l]) {
                    if act <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((total / n, grads))
    }

    /// One Adam update on the masked loss. Returns the loss before the update.
    pub fn train_step(&mut self, batch: &TrainBatch, opt: &AdamConfig) -> Result<f64> {
        if self.adam.is_none() {
            return Err(Error::Contract("network was loaded for inference only".into()));
        }
        let (loss, grads) = self.loss_and_gradient(batch)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss became non-finite ({loss})")));
        }
        let adam = self.adam.as_mut().unwrap();
        adam.step += 1;
        let t = adam.step as i32;
        let c1 = 1.0 - opt.beta1.powi(t);
        let c2 = 1.0 - opt.beta2.powi(t);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let g = &grads[l];
            let (m, v) = (&mut adam.m[l], &mut adam.v[l]);
            adam_update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights, opt, c1, c2, opt.weight_decay);
            adam_update(&mut layer.bias, &g.bias, &mut m.bias, &mut v.bias, opt, c1, c2, 0.0);
        }
        Ok(loss)
    }

    /// Several shuffled passes of minibatch Adam steps over `batch`.
    /// A `minibatch` of zero uses the whole batch per step. Returns the mean
    /// pre-update loss of the final pass.
    pub fn fit(
        &mut self,
        batch: &TrainBatch,
        opt: &AdamConfig,
        minibatch: usize,
        epochs: usize,
        rng: &mut Rng,
    ) -> Result<f64> {
        self.check_batch(batch)?;
        let size = if minibatch == 0 { batch.len() } else { minibatch.min(batch.len()) };
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut last_loss = 0.0;
        for _ in 0..epochs.max(1) {
            if size < batch.len() {
                order.shuffle(rng);
            }
            let mut sum = 0.0;
            let mut count = 0;
            for chunk in order.chunks(size) {
                let loss = if chunk.len() == batch.len() {
                    self.train_step(batch, opt)?
                } else {
                    self.train_step(&batch.subset(chunk), opt)?
                };
                sum += loss;
                count += 1;
            }
            last_loss = sum / count as f64;
        }
        Ok(last_loss)
    }

    /// Text checkpoint; `metadata` is stored verbatim for the owning learner.
    pub fn to_checkpoint(&self, metadata: &Value) -> String {
        let layer_record = |l: &Layer| LayerRecord {
            inputs: l.inputs,
            outputs: l.outputs,
            weights: encode_block(&l.weights),
            bias: encode_block(&l.bias),
        };
        let record = CheckpointRecord {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            spec: self.spec,
            layers: self.layers.iter().map(layer_record).collect(),
            adam: self.adam.as_ref().map(|a| AdamRecord {
                step: a.step,
                m: a.m.iter().map(layer_record).collect(),
                v: a.v.iter().map(layer_record).collect(),
            }),
            metadata: metadata.clone(),
        };
        serde_json::to_string_pretty(&record).expect("checkpoint records always serialize")
    }

    pub fn from_checkpoint(text: &str) -> Result<(Self, Value)> {
        let record: CheckpointRecord =
            serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("unreadable checkpoint: {e}")))?;
        if record.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag {:?}", record.format)));
        }
        if record.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                record.version
            )));
        }
        record.spec.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let decode_layers = |rs: &[LayerRecord]| -> Result<Vec<Layer>> {
            let layers = rs
                .iter()
                .map(|r| {
                    Ok(Layer {
                        inputs: r.inputs,
                        outputs: r.outputs,
                        weights: decode_block(&r.weights)?,
                        bias: decode_block(&r.bias)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            check_shapes(&record.spec, &layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
            Ok(layers)
        };
        let layers = decode_layers(&record.layers)?;
        let adam = match &record.adam {
            Some(a) => Some(AdamState { step: a.step, m: decode_layers(&a.m)?, v: decode_layers(&a.v)? }),
            None => None,
        };
        Ok((Self { spec: record.spec, layers, adam }, record.metadata))
    }

    pub fn save(&self, path: &Path, metadata: &Value) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_checkpoint(metadata))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Value)> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_checkpoint(&fs::read_to_string(path)?)
    }
}

#[allow(clippy::too_many_arguments)]
fn adam_update(
    p: &mut [f64],
    g: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    opt: &AdamConfig,
    c1: f64,
    c2: f64,
    decay: f64,
) {
    for i in 0..p.len() {
        m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
        v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= opt.lr * (m_hat / (v_hat.sqrt() + opt.eps) + decay * p[i]);
    }
}

fn relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn check_shapes(spec: &MlpSpec, layers: &[Layer]) -> Result<()> {
    let shapes = spec.layer_shapes();
    if shapes.len() != layers.len() {
        return Err(Error::Contract(format!("expected {} layers, found {}", shapes.len(), layers.len())));
    }
    for (k, (&(i, o), l)) in shapes.iter().zip(layers).enumerate() {
        if l.inputs != i || l.outputs != o || l.weights.len() != i * o || l.bias.len() != o {
            return Err(Error::Contract(format!("layer {k} does not have shape {o}x{i}")));
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    weights: String,
    bias: String,
}

#[derive(Serialize, Deserialize)]
struct AdamRecord {
    step: u64,
    m: Vec<LayerRecord>,
    v: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRecord {
    format: String,
    version: u32,
    spec: MlpSpec,
    layers: Vec<LayerRecord>,
    adam: Option<AdamRecord>,
    #[serde(default)]
    metadata: Value,
}

/// Little-endian f64 values, base64 encoded.
pub fn encode_block(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub fn decode_block(text: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| Error::Checkpoint(format!("bad parameter block: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("parameter block length is not a multiple of 8".into()));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn tiny(spec: MlpSpec, seed: u64) -> Mlp {
        let mut net = Mlp::init(spec, &mut seeded_rng(seed)).unwrap();
        // Nonzero biases so the gradient check exercises them.
        let mut rng = seeded_rng(seed + 1000);
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        net
    }

    #[test]
    fn same_seed_same_parameters() {
        let spec = MlpSpec::standard(3, 5);
        let a = Mlp::init(spec, &mut seeded_rng(9)).unwrap();
        let b = Mlp::init(spec, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn init_variance_matches_fan_average() {
        let spec = MlpSpec { input_dim: 100, hidden_layers: 1, hidden_width: 120, output_dim: 90 };
        let net = Mlp::init(spec, &mut seeded_rng(1)).unwrap();
        for l in &net.layers {
            let n = l.weights.len() as f64;
            let mean = l.weights.iter().sum::<f64>() / n;
            let var = l.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n;
            let expect = 2.0 / (l.inputs + l.outputs) as f64;
            assert!(l.weights.len() >= 10_000);
            assert!((var / expect - 1.0).abs() < 0.2, "{var} vs {expect}");
        }
    }

    #[test]
    fn fresh_net_maps_zero_to_zero() {
        let net = Mlp::init(MlpSpec::standard(4, 3), &mut seeded_rng(2)).unwrap();
        assert_eq!(net.forward(&[0.0; 4]).unwrap(), vec![0.0; 3]);
        assert!(matches!(net.forward(&[0.0; 3]), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_and_hand_set_forward() {
        let spec = MlpSpec { input_dim: 2, hidden_layers: 0, hidden_width: 0, output_dim: 2 };
        let id = Layer { inputs: 2, outputs: 2, weights: vec![1.0, 0.0, 0.0, 1.0], bias: vec![0.0, 0.0] };
        let net = Mlp::from_layers(spec, vec![id]).unwrap();
        assert_eq!(net.forward(&[3.5, -1.25]).unwrap(), vec![3.5, -1.25]);

        // 2-2-1: hidden = relu([[1, -1], [2, 1]] x + [0, -1]), out = [3, -2] hidden + 0.5
        let spec = MlpSpec { input_dim: 2, hidden_layers: 1, hidden_width: 2, output_dim: 1 };
        let net = Mlp::from_layers(
            spec,
            vec![
                Layer { inputs: 2, outputs: 2, weights: vec![1.0, -1.0, 2.0, 1.0], bias: vec![0.0, -1.0] },
                Layer { inputs: 2, outputs: 1, weights: vec![3.0, -2.0], bias: vec![0.5] },
            ],
        )
        .unwrap();
        // x = (1, 2): pre = (-1, 3) -> (0, 3) -> -6 + 0.5
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![-5.5]);
        // x = (-1, -1): pre = (0, -4) -> both dead -> output bias
        assert_eq!(net.forward(&[-1.0, -1.0]).unwrap(), vec![0.5]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10u64 {
            let spec = MlpSpec { input_dim: 3, hidden_layers: 2, hidden_width: 4, output_dim: 3 };
            let net = tiny(spec, seed);
            let mut rng = seeded_rng(seed + 50);
            let mut batch = TrainBatch::default();
            for _ in 0..6 {
                let x = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
                batch.push(x, rng.random_range(0..3), rng.random_range(-1.0..1.0));
            }
            let (_, grads) = net.loss_and_gradient(&batch).unwrap();
            let step = 1e-5;
            for l in 0..net.layers.len() {
                let n_w = net.layers[l].weights.len();
                for k in 0..n_w + net.layers[l].bias.len() {
                    let perturbed = |delta: f64| {
                        let mut p = net.clone();
                        if k < n_w {
                            p.layers[l].weights[k] += delta;
                        } else {
                            p.layers[l].bias[k - n_w] += delta;
                        }
                        p.loss(&batch).unwrap()
                    };
                    let fd = (perturbed(step) - perturbed(-step)) / (2.0 * step);
                    let an = if k < n_w { grads[l].weights[k] } else { grads[l].bias[k - n_w] };
                    let scale = fd.abs().max(an.abs()).max(1e-6);
                    assert!((fd - an).abs() / scale < 1e-4, "seed {seed} layer {l} param {k}: {an} vs {fd}");
                }
            }
        }
    }

    #[test]
    fn unselected_output_rows_get_no_gradient() {
        let net = tiny(MlpSpec::standard(2, 4), 3);
        let mut batch = TrainBatch::default();
        batch.push(vec![0.3, -0.2], 1, 2.0);
        batch.push(vec![0.9, 0.4], 1, -1.0);
        let (_, grads) = net.loss_and_gradient(&batch).unwrap();
        let out = grads.last().unwrap();
        for o in [0, 2, 3] {
            assert!(out.weights[o * out.inputs..(o + 1) * out.inputs].iter().all(|g| *g == 0.0));
            assert_eq!(out.bias[o], 0.0);
        }
    }

    #[test]
    fn zero_residual_keeps_parameters() {
        let mut net = tiny(MlpSpec::standard(2, 2), 4);
        let x = vec![0.1, 0.7];
        let q = net.forward(&x).unwrap();
        let mut batch = TrainBatch::default();
        batch.push(x, 0, q[0]);
        let before = net.layers.clone();
        let loss = net.train_step(&batch, &AdamConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net.layers, before);
    }

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let spec = MlpSpec { input_dim: 1, hidden_layers: 0, hidden_width: 0, output_dim: 1 };
        let layer = Layer { inputs: 1, outputs: 1, weights: vec![0.5], bias: vec![0.0] };
        let mut net = Mlp::from_layers(spec, vec![layer]).unwrap();
        let mut batch = TrainBatch::default();
        batch.push(vec![1.0], 0, 3.0);
        let opt = AdamConfig { lr: 0.01, ..AdamConfig::default() };
        net.train_step(&batch, &opt).unwrap();
        assert!((net.layers[0].weights[0] - 0.51).abs() < 1e-8);
        assert!((net.layers[0].bias[0] - 0.01).abs() < 1e-8);
    }

    #[test]
    fn full_batch_regression_loss_decreases() {
        let spec = MlpSpec { input_dim: 1, hidden_layers: 2, hidden_width: 16, output_dim: 1 };
        let mut net = Mlp::init(spec, &mut seeded_rng(5)).unwrap();
        let mut batch = TrainBatch::default();
        for i in 0..40 {
            let x = std::f64::consts::PI * i as f64 / 39.0;
            batch.push(vec![x], 0, x.sin());
        }
        let opt = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
        let first = net.loss(&batch).unwrap();
        let mut losses = Vec::new();
        for _ in 0..100 {
            losses.push(net.train_step(&batch, &opt).unwrap());
        }
        let last = net.loss(&batch).unwrap();
        assert!(last < first);
        // Adam is not a descent method step by step; require a decreasing trend.
        for w in losses.chunks(10).collect::<Vec<_>>().windows(2) {
            let a: f64 = w[0].iter().sum();
            let b: f64 = w[1].iter().sum();
            assert!(b <= a, "{a} -> {b}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut net = Mlp::init(MlpSpec::standard(2, 3), &mut seeded_rng(8)).unwrap();
            let mut rng = seeded_rng(80);
            let mut batch = TrainBatch::default();
            for i in 0..20 {
                batch.push(vec![i as f64 / 20.0, 1.0], i % 3, (i as f64).cos());
            }
            net.fit(&batch, &AdamConfig::default(), 4, 5, &mut rng).unwrap();
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = tiny(MlpSpec::standard(3, 2), 6);
        let mut batch = TrainBatch::default();
        batch.push(vec![0.2, 0.3, -0.4], 1, 1.0);
        net.train_step(&batch, &AdamConfig::default()).unwrap();
        let meta = serde_json::json!({"actions": [0.05, 0.1]});
        let text = net.to_checkpoint(&meta);
        let (back, meta_back) = Mlp::from_checkpoint(&text).unwrap();
        assert_eq!(back, net);
        assert_eq!(meta_back, meta);
        let x = [0.7, -0.1, 0.25];
        let a = net.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn damaged_checkpoints_are_rejected() {
        let net = tiny(MlpSpec::standard(2, 2), 7);
        let text = net.to_checkpoint(&Value::Null);
        assert!(matches!(Mlp::from_checkpoint(&text[..text.len() / 2]), Err(Error::Checkpoint(_))));
        let bumped = text.replace("\"version\": 1", "\"version\": 99");
        assert!(matches!(Mlp::from_checkpoint(&bumped), Err(Error::Checkpoint(_))));
        let reshaped = text.replacen("\"input_dim\": 2", "\"input_dim\": 3", 1);
        assert!(matches!(Mlp::from_checkpoint(&reshaped), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn inference_only_checkpoint() {
        let net = tiny(MlpSpec::standard(2, 2), 8).frozen();
        let (mut back, _) = Mlp::from_checkpoint(&net.to_checkpoint(&Value::Null)).unwrap();
        assert!(!back.is_trainable());
        assert!(back.forward(&[1.0, 2.0]).is_ok());
        let mut batch = TrainBatch::default();
        batch.push(vec![1.0, 2.0], 0, 0.0);
        assert!(matches!(back.train_step(&batch, &AdamConfig::default()), Err(Error::Contract(_))));
    }
}

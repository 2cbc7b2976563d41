//! The convolutional sentence model: filters over concatenated word
//! windows, max-over-time pooling, dropout on the pooled features and a
//! softmax output layer, with an exact hand-derived backward pass.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::PAD_ID;
use crate::embed::EmbeddingChannel;
use crate::rng::{seeded, PARAM_INIT_STREAM};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("sentence of length {len} is shorter than filter width {width}")]
    TooShort { len: usize, width: usize },
    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    UnknownToken { id: u32, vocab_size: usize },
    #[error("trace does not match parameters: {0}")]
    TraceMismatch(String),
    #[error("invalid shape: {0}")]
    Shape(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `x`. ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(format!("unknown activation {other:?} (relu, tanh, identity)")),
        }
    }
}

/// A filter spanning `width` consecutive words. `weights` is `width x k`,
/// row `p` applying to the `p`-th word of the window. The same weights are
/// applied to every channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub width: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Filter responses over every window of a sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub pre_activations: Vec<f64>,
    pub values: Vec<f64>,
    pub argmax: usize,
}

/// Softmax layer over the pooled features: `weights` is `classes x inputs`,
/// one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub num_classes: usize,
    pub num_inputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl OutputLayer {
    pub fn row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.num_inputs..(class + 1) * self.num_inputs]
    }

    pub fn row_mut(&mut self, class: usize) -> &mut [f64] {
        &mut self.weights[class * self.num_inputs..(class + 1) * self.num_inputs]
    }

    pub fn row_norm(&self, class: usize) -> f64 {
        l2_norm(self.row(class))
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Bernoulli keep-mask over the pooled features. An entry is kept (1) with
/// probability `keep_prob`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    keep_prob: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng>(len: usize, keep_prob: f64, rng: &mut R) -> Self {
        let keep = (0..len).map(|_| rng.gen_bool(keep_prob)).collect();
        DropoutMask { keep, keep_prob }
    }

    pub fn all_kept(len: usize) -> Self {
        DropoutMask { keep: vec![true; len], keep_prob: 1.0 }
    }

    pub fn from_bits(keep: Vec<bool>, keep_prob: f64) -> Self {
        DropoutMask { keep, keep_prob }
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    #[inline]
    pub fn kept(&self, j: usize) -> bool {
        self.keep[j]
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }
}

pub enum Mode {
    /// Multiply the pooled features by this mask.
    Train(DropoutMask),
    /// No mask; output weights scaled by the keep probability.
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub channels: Vec<EmbeddingChannel>,
    pub filters: Vec<ConvFilter>,
    pub output: OutputLayer,
    pub activation: Activation,
    pub keep_prob: f64,
}

/// Shapes of a freshly initialized model.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub widths: Vec<usize>,
    pub maps_per_width: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub keep_prob: f64,
    /// Filter and output weights are drawn from `U[-init_range, init_range]`.
    pub init_range: f64,
}

impl ModelParams {
    /// Filters are grouped by width in the order of `arch.widths`. Biases
    /// start at zero.
    pub fn init(channels: Vec<EmbeddingChannel>, arch: &Architecture, seed: u64) -> Result<Self> {
        let Some(first) = channels.first() else {
            return Err(NetError::Shape("model needs at least one channel".into()));
        };
        let (dim, vocab_size) = (first.dim(), first.vocab_size());
        if channels.iter().any(|c| c.dim() != dim || c.vocab_size() != vocab_size) {
            return Err(NetError::Shape("channels disagree on shape".into()));
        }
        if arch.widths.is_empty() || arch.widths.contains(&0) || arch.maps_per_width == 0 {
            return Err(NetError::Shape("need at least one filter of width >= 1".into()));
        }
        if arch.num_classes < 2 {
            return Err(NetError::Shape("need at least 2 classes".into()));
        }
        let mut rng = seeded(seed, PARAM_INIT_STREAM);
        let r = arch.init_range;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 }).collect()
        };
        let mut filters = Vec::new();
        for &width in &arch.widths {
            for _ in 0..arch.maps_per_width {
                filters.push(ConvFilter { width, weights: draw(width * dim), bias: 0.0 });
            }
        }
        let m = filters.len();
        let output = OutputLayer {
            num_classes: arch.num_classes,
            num_inputs: m,
            weights: draw(arch.num_classes * m),
            biases: vec![0.0; arch.num_classes],
        };
        Ok(ModelParams { channels, filters, output, activation: arch.activation, keep_prob: arch.keep_prob })
    }

    pub fn dim(&self) -> usize {
        self.channels[0].dim()
    }

    pub fn vocab_size(&self) -> usize {
        self.channels[0].vocab_size()
    }

    pub fn num_classes(&self) -> usize {
        self.output.num_classes
    }

    pub fn max_width(&self) -> usize {
        self.filters.iter().map(|f| f.width).max().unwrap_or(1)
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for (i, c) in self.channels.iter().enumerate() {
            out.push((format!("channel.{i}"), vec![c.vocab_size(), c.dim()], c.as_slice()));
        }
        for (i, f) in self.filters.iter().enumerate() {
            out.push((format!("filter.{i}.weight"), vec![f.width, self.dim()], &f.weights[..]));
            out.push((format!("filter.{i}.bias"), vec![], std::slice::from_ref(&f.bias)));
        }
        out.push((
            "output.weight".into(),
            vec![self.output.num_classes, self.output.num_inputs],
            &self.output.weights[..],
        ));
        out.push(("output.bias".into(), vec![self.output.num_classes], &self.output.biases[..]));
        out
    }

    /// Same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out: Vec<(String, &mut [f64])> = Vec::new();
        for (i, c) in self.channels.iter_mut().enumerate() {
            out.push((format!("channel.{i}"), c.as_mut_slice()));
        }
        for (i, f) in self.filters.iter_mut().enumerate() {
            out.push((format!("filter.{i}.weight"), &mut f.weights[..]));
            out.push((format!("filter.{i}.bias"), std::slice::from_mut(&mut f.bias)));
        }
        out.push(("output.weight".into(), &mut self.output.weights[..]));
        out.push(("output.bias".into(), &mut self.output.biases[..]));
        out
    }

    /// SHA-256 over the bit patterns of one tensor.
    pub fn tensor_hash(values: &[f64]) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in values {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().into()
    }

    /// Per-tensor hashes keyed by tensor name.
    pub fn tensor_hashes(&self) -> BTreeMap<String, [u8; 32]> {
        self.tensors()
            .into_iter()
            .map(|(name, _, values)| (name, Self::tensor_hash(values)))
            .collect()
    }

    /// Hash of every tensor's bits.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, _, values) in self.tensors() {
            h.update(name.as_bytes());
            h.update(Self::tensor_hash(values));
        }
        h.finalize().into()
    }
}

/// Computes `c_i = f(sum over channels of w . x_{i:i+h-1} + b)` for every
/// window start `i`.
pub fn conv_feature_map(
    token_ids: &[u32],
    channels: &[EmbeddingChannel],
    filter: &ConvFilter,
    activation: Activation,
) -> Result<FeatureMap> {
    let h = filter.width;
    if token_ids.len() < h || h == 0 {
        return Err(NetError::TooShort { len: token_ids.len(), width: h });
    }
    let windows = token_ids.len() - h + 1;
    let mut pre_activations = Vec::with_capacity(windows);
    for start in 0..windows {
        let mut acc = filter.bias;
        for channel in channels {
            let k = channel.dim();
            for (p, &id) in token_ids[start..start + h].iter().enumerate() {
                if id == PAD_ID {
                    continue;
                }
                acc += dot(&filter.weights[p * k..(p + 1) * k], channel.row(id));
            }
        }
        pre_activations.push(acc);
    }
    let values: Vec<f64> = pre_activations.iter().map(|&x| activation.apply(x)).collect();
    let (_, argmax) = argmax_first(&values);
    Ok(FeatureMap { pre_activations, values, argmax })
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest value and the smallest index attaining it.
pub fn argmax_first(values: &[f64]) -> (f64, usize) {
    assert!(!values.is_empty(), "argmax of an empty slice");
    let mut best = (values[0], 0);
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

/// Max-over-time pooling: the feature map's maximum and where it occurs.
pub fn max_over_time(map: &FeatureMap) -> (f64, usize) {
    (map.values[map.argmax], map.argmax)
}

/// What one filter contributed to the penultimate layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledFeature {
    pub value: f64,
    pub argmax: usize,
    pub pre_activation: f64,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub token_ids: Vec<u32>,
    pub pooled: Vec<PooledFeature>,
    /// Penultimate features before masking.
    pub z: Vec<f64>,
    /// `None` for an inference-mode pass.
    pub mask: Option<DropoutMask>,
    pub logits: Vec<f64>,
}

/// Runs the model on one padded sentence.
pub fn forward(params: &ModelParams, token_ids: &[u32], mode: Mode) -> Result<(Vec<f64>, ForwardTrace)> {
    let vocab_size = params.vocab_size();
    if let Some(&id) = token_ids.iter().find(|&&id| id as usize >= vocab_size) {
        return Err(NetError::UnknownToken { id, vocab_size });
    }
    let m = params.filters.len();
    let mut pooled = Vec::with_capacity(m);
    for filter in &params.filters {
        let map = conv_feature_map(token_ids, &params.channels, filter, params.activation)?;
        let (value, argmax) = max_over_time(&map);
        pooled.push(PooledFeature { value, argmax, pre_activation: map.pre_activations[argmax] });
    }
    let z: Vec<f64> = pooled.iter().map(|p| p.value).collect();
    let out = &params.output;
    let (mask, logits): (Option<DropoutMask>, Vec<f64>) = match mode {
        Mode::Train(mask) => {
            if mask.len() != m {
                return Err(NetError::Shape(format!("mask has {} entries for {m} features", mask.len())));
            }
            let logits = (0..out.num_classes)
                .map(|c| {
                    let row = out.row(c);
                    let mut acc = 0.0;
                    for j in 0..m {
                        if mask.kept(j) {
                            acc += row[j] * z[j];
                        }
                    }
                    acc + out.biases[c]
                })
                .collect();
            (Some(mask), logits)
        }
        Mode::Inference => {
            let logits = (0..out.num_classes)
                .map(|c| params.keep_prob * dot(out.row(c), &z) + out.biases[c])
                .collect();
            (None, logits)
        }
    };
    let trace = ForwardTrace { token_ids: token_ids.to_vec(), pooled, z, mask, logits: logits.clone() };
    Ok((logits, trace))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax probabilities and the cross-entropy of `label`.
pub fn loss_and_probs(logits: &[f64], label: usize) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_total = logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln() + max;
    (softmax(logits), log_total - logits[label])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterGrad {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Loss gradients for every tensor. Embedding gradients are sparse by row
/// and present only for trainable channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub filters: Vec<FilterGrad>,
    pub output_weights: Vec<f64>,
    pub output_biases: Vec<f64>,
    pub embeddings: Vec<Option<BTreeMap<u32, Vec<f64>>>>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Gradients {
            filters: params
                .filters
                .iter()
                .map(|f| FilterGrad { weights: vec![0.0; f.weights.len()], bias: 0.0 })
                .collect(),
            output_weights: vec![0.0; params.output.weights.len()],
            output_biases: vec![0.0; params.output.biases.len()],
            embeddings: params
                .channels
                .iter()
                .map(|c| c.trainable.then(BTreeMap::new))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.filters.iter_mut().zip(&other.filters) {
            add_into(&mut a.weights, &b.weights);
            a.bias += b.bias;
        }
        add_into(&mut self.output_weights, &other.output_weights);
        add_into(&mut self.output_biases, &other.output_biases);
        for (a, b) in self.embeddings.iter_mut().zip(&other.embeddings) {
            if let (Some(a), Some(b)) = (a, b) {
                for (&id, row) in b {
                    match a.get_mut(&id) {
                        Some(acc) => add_into(acc, row),
                        None => {
                            a.insert(id, row.clone());
                        }
                    }
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for f in &mut self.filters {
            f.weights.iter_mut().for_each(|x| *x *= factor);
            f.bias *= factor;
        }
        self.output_weights.iter_mut().for_each(|x| *x *= factor);
        self.output_biases.iter_mut().for_each(|x| *x *= factor);
        for rows in self.embeddings.iter_mut().flatten() {
            rows.values_mut().flatten().for_each(|x| *x *= factor);
        }
    }

    /// Dense gradients named like [`ModelParams::tensors`]; static channels
    /// come out as all zeros.
    pub fn dense(&self, params: &ModelParams) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (i, (channel, rows)) in params.channels.iter().zip(&self.embeddings).enumerate() {
            let mut dense = vec![0.0; channel.as_slice().len()];
            let k = channel.dim();
            for (&id, row) in rows.iter().flatten() {
                dense[id as usize * k..(id as usize + 1) * k].copy_from_slice(row);
            }
            out.push((format!("channel.{i}"), dense));
        }
        for (i, f) in self.filters.iter().enumerate() {
            out.push((format!("filter.{i}.weight"), f.weights.clone()));
            out.push((format!("filter.{i}.bias"), vec![f.bias]));
        }
        out.push(("output.weight".into(), self.output_weights.clone()));
        out.push(("output.bias".into(), self.output_biases.clone()));
        out
    }
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

/// Gradient of the cross-entropy at `label` for the train-mode pass in
/// `trace`. Only kept features propagate past the output layer, and each
/// filter only sees its winning window.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, label: usize) -> Result<Gradients> {
    let m = params.filters.len();
    let c = params.num_classes();
    let mask = trace
        .mask
        .as_ref()
        .ok_or_else(|| NetError::TraceMismatch("trace comes from an inference-mode pass".into()))?;
    if trace.pooled.len() != m || trace.z.len() != m || mask.len() != m {
        return Err(NetError::TraceMismatch(format!("{} pooled features for {m} filters", trace.pooled.len())));
    }
    if trace.logits.len() != c || label >= c {
        return Err(NetError::TraceMismatch(format!("{} logits / label {label} for {c} classes", trace.logits.len())));
    }
    let vocab_size = params.vocab_size();
    if trace.token_ids.iter().any(|&id| id as usize >= vocab_size) {
        return Err(NetError::TraceMismatch("token id outside vocabulary".into()));
    }

    let (mut d_logits, _) = loss_and_probs(&trace.logits, label);
    d_logits[label] -= 1.0;

    let mut grads = Gradients::zeros_like(params);
    grads.output_biases.copy_from_slice(&d_logits);
    let mut d_z = vec![0.0; m];
    for (class, &dy) in d_logits.iter().enumerate() {
        let row = params.output.row(class);
        let g_row = &mut grads.output_weights[class * m..(class + 1) * m];
        for j in 0..m {
            if mask.kept(j) {
                g_row[j] = dy * trace.z[j];
                d_z[j] += dy * row[j];
            }
        }
    }

    let k = params.dim();
    for (j, filter) in params.filters.iter().enumerate() {
        let pooled = &trace.pooled[j];
        let d_pre = d_z[j] * params.activation.derivative(pooled.pre_activation);
        if d_pre == 0.0 {
            continue;
        }
        let h = filter.width;
        if pooled.argmax + h > trace.token_ids.len() {
            return Err(NetError::TraceMismatch(format!("argmax {} out of range for filter {j}", pooled.argmax)));
        }
        let window = &trace.token_ids[pooled.argmax..pooled.argmax + h];
        let g = &mut grads.filters[j];
        g.bias = d_pre;
        for (p, &id) in window.iter().enumerate() {
            if id == PAD_ID {
                continue;
            }
            let g_w = &mut g.weights[p * k..(p + 1) * k];
            for channel in &params.channels {
                for (gw, x) in g_w.iter_mut().zip(channel.row(id)) {
                    *gw += d_pre * x;
                }
            }
            let w = &filter.weights[p * k..(p + 1) * k];
            for rows in grads.embeddings.iter_mut().flatten() {
                let g_row = rows.entry(id).or_insert_with(|| vec![0.0; k]);
                for (ge, wv) in g_row.iter_mut().zip(w) {
                    *ge += d_pre * wv;
                }
            }
        }
    }
    Ok(grads)
}

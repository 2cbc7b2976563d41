//! Adadelta updates, the output-row norm constraint, mini-batch schedules,
//! the epoch loop and early stopping on a dev set.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::Example;
use crate::embed::{UnknownInit, Variant};
use crate::eval;
use crate::net::{self, l2_norm, Activation, Architecture, DropoutMask, Gradients, Mode, ModelParams, NetError, OutputLayer};
use crate::rng::{seeded, DROPOUT_STREAM_BASE, SHUFFLE_STREAM_BASE};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("diverged")]
    Diverged,
    #[error("empty dev set")]
    EmptyDev,
    #[error("empty training set")]
    EmptyTrain,
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Everything that shapes a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub widths: Vec<usize>,
    pub maps_per_width: usize,
    pub keep_prob: f64,
    /// Maximum L2 norm of each output-layer row.
    pub max_norm: f64,
    /// Also project every filter's weight vector onto the norm ball.
    pub constrain_filters: bool,
    pub batch_size: usize,
    pub rho: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub activation: Activation,
    /// Word-vector dimension `k`.
    pub dim: usize,
    pub unknown_init: UnknownInit,
    /// Half-width for every row of the random variant.
    pub rand_init_range: f64,
    pub param_init_range: f64,
    pub dev_fraction: f64,
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Rand,
            widths: vec![3, 4, 5],
            maps_per_width: 100,
            keep_prob: 0.5,
            max_norm: 3.0,
            constrain_filters: false,
            batch_size: 50,
            rho: 0.95,
            eps: 1e-6,
            max_epochs: 25,
            patience: 8,
            seed: 0,
            activation: Activation::Relu,
            dim: 300,
            unknown_init: UnknownInit::Uniform(crate::embed::DEFAULT_UNIFORM_RANGE),
            rand_init_range: crate::embed::DEFAULT_UNIFORM_RANGE,
            param_init_range: 0.01,
            dev_fraction: 0.1,
            folds: 10,
        }
    }
}

impl TrainConfig {
    pub fn architecture(&self, num_classes: usize) -> Architecture {
        Architecture {
            widths: self.widths.clone(),
            maps_per_width: self.maps_per_width,
            num_classes,
            activation: self.activation,
            keep_prob: self.keep_prob,
            init_range: self.param_init_range,
        }
    }

    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(1)
    }

    /// Parses `key = value` lines. `#` starts a comment; unknown keys and
    /// repeated keys are rejected. Keys not mentioned keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| OptimError::Config { line: idx + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate().map_err(|reason| OptimError::Config { line: 0, reason })?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| format!("{key}: {e}"))
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "filter_widths" => {
                self.widths = value
                    .split(',')
                    .map(|w| num::<usize>(key, w.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "feature_maps" => self.maps_per_width = num(key, value)?,
            "keep_prob" => self.keep_prob = num(key, value)?,
            "l2_max_norm" => self.max_norm = num(key, value)?,
            "constrain_filters" => self.constrain_filters = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "adadelta_rho" => self.rho = num(key, value)?,
            "adadelta_eps" => self.eps = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "activation" => self.activation = value.parse()?,
            "embedding_dim" => self.dim = num(key, value)?,
            "unknown_init" => {
                self.unknown_init = match value {
                    "variance" => UnknownInit::VarianceMatched,
                    other => match other.strip_prefix("uniform:") {
                        Some(a) => UnknownInit::Uniform(num(key, a)?),
                        None => return Err(format!("unknown_init: expected variance or uniform:<a>, got {other:?}")),
                    },
                }
            }
            "rand_init_range" => self.rand_init_range = num(key, value)?,
            "param_init_range" => self.param_init_range = num(key, value)?,
            "dev_fraction" => self.dev_fraction = num(key, value)?,
            "cv_folds" => self.folds = num(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.batch_size == 0 {
            return Err("batch_size must be >= 1".into());
        }
        if self.keep_prob.is_nan() || self.keep_prob <= 0.0 || self.keep_prob > 1.0 {
            return Err("keep_prob must be in (0, 1]".into());
        }
        if self.max_norm.is_nan() || self.max_norm <= 0.0 {
            return Err("l2_max_norm must be > 0".into());
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err("filter_widths must be nonempty and >= 1".into());
        }
        if self.maps_per_width == 0 || self.dim == 0 {
            return Err("feature_maps and embedding_dim must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps.is_nan() || self.eps <= 0.0 {
            return Err("adadelta_rho must be in [0, 1) and adadelta_eps > 0".into());
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err("dev_fraction must be in [0, 1)".into());
        }
        if self.folds < 2 {
            return Err("cv_folds must be >= 2".into());
        }
        Ok(())
    }

    /// Canonical text form; [`Self::parse`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let widths: Vec<String> = self.widths.iter().map(|w| w.to_string()).collect();
        let unknown = match self.unknown_init {
            UnknownInit::VarianceMatched => "variance".to_string(),
            UnknownInit::Uniform(a) => format!("uniform:{a:?}"),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("variant", self.variant.to_string());
        kv("filter_widths", widths.join(","));
        kv("feature_maps", self.maps_per_width.to_string());
        kv("keep_prob", format!("{:?}", self.keep_prob));
        kv("l2_max_norm", format!("{:?}", self.max_norm));
        kv("constrain_filters", self.constrain_filters.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("adadelta_rho", format!("{:?}", self.rho));
        kv("adadelta_eps", format!("{:?}", self.eps));
        kv("max_epochs", self.max_epochs.to_string());
        kv("patience", self.patience.to_string());
        kv("seed", self.seed.to_string());
        kv("activation", self.activation.to_string());
        kv("embedding_dim", self.dim.to_string());
        kv("unknown_init", unknown);
        kv("rand_init_range", format!("{:?}", self.rand_init_range));
        kv("param_init_range", format!("{:?}", self.param_init_range));
        kv("dev_fraction", format!("{:?}", self.dev_fraction));
        kv("cv_folds", self.folds.to_string());
        s
    }
}

/// Running averages of squared gradients and squared updates for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaState {
    pub sq_grad: Vec<f64>,
    pub sq_delta: Vec<f64>,
    pub rho: f64,
    pub eps: f64,
}

impl AdadeltaState {
    pub fn new(len: usize, rho: f64, eps: f64) -> Self {
        AdadeltaState { sq_grad: vec![0.0; len], sq_delta: vec![0.0; len], rho, eps }
    }

    #[inline]
    fn update(&mut self, i: usize, param: &mut f64, g: f64) {
        let (rho, eps) = (self.rho, self.eps);
        self.sq_grad[i] = rho * self.sq_grad[i] + (1.0 - rho) * g * g;
        let delta = -((self.sq_delta[i] + eps).sqrt() / (self.sq_grad[i] + eps).sqrt()) * g;
        self.sq_delta[i] = rho * self.sq_delta[i] + (1.0 - rho) * delta * delta;
        *param += delta;
    }

    /// The zero-gradient update: both averages decay and the parameter keeps
    /// its exact bits.
    #[inline]
    fn decay(&mut self, i: usize) {
        self.sq_grad[i] *= self.rho;
        self.sq_delta[i] *= self.rho;
    }
}

/// One Adadelta step: `E[g^2] <- rho E[g^2] + (1-rho) g^2`,
/// `delta = -sqrt(E[d^2] + eps) / sqrt(E[g^2] + eps) * g`,
/// `E[d^2] <- rho E[d^2] + (1-rho) delta^2`, `param += delta`.
pub fn adadelta_step(param: &mut [f64], grad: &[f64], state: &mut AdadeltaState) -> Result<()> {
    assert_eq!(param.len(), grad.len());
    assert_eq!(param.len(), state.sq_grad.len());
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(OptimError::Diverged);
    }
    for (i, (p, &g)) in param.iter_mut().zip(grad).enumerate() {
        state.update(i, p, g);
    }
    Ok(())
}

/// Adadelta over an embedding matrix whose gradient is given by row. Rows
/// without a gradient take the zero-gradient step; the pad row is skipped.
pub fn adadelta_step_rows(
    matrix: &mut [f64],
    dim: usize,
    rows: &BTreeMap<u32, Vec<f64>>,
    state: &mut AdadeltaState,
) -> Result<()> {
    if rows.values().flatten().any(|g| !g.is_finite()) {
        return Err(OptimError::Diverged);
    }
    let vocab = matrix.len() / dim;
    for id in 1..vocab {
        let base = id * dim;
        match rows.get(&(id as u32)) {
            Some(g) => {
                for (d, &gv) in g.iter().enumerate() {
                    state.update(base + d, &mut matrix[base + d], gv);
                }
            }
            None => (base..base + dim).for_each(|i| state.decay(i)),
        }
    }
    Ok(())
}

/// Rescales each `row_len` chunk of `values` whose L2 norm exceeds
/// `max_norm` back onto the sphere of radius `max_norm`. A projected row
/// never ends up above `max_norm`, so projecting twice changes nothing.
pub fn renorm_rows(values: &mut [f64], row_len: usize, max_norm: f64) {
    for row in values.chunks_mut(row_len) {
        let norm = l2_norm(row);
        if norm > max_norm {
            let scale = max_norm / norm;
            row.iter_mut().for_each(|x| *x *= scale);
            while l2_norm(row) > max_norm {
                row.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
            }
        }
    }
}

/// Projects every class row of the output layer. Biases are untouched.
pub fn l2_renorm(output: &mut OutputLayer, max_norm: f64) {
    let row_len = output.num_inputs;
    renorm_rows(&mut output.weights, row_len, max_norm);
}

/// A fresh permutation of `0..n` per `(seed, epoch)`, cut into consecutive
/// batches. The final batch may be short.
pub fn make_minibatches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    use rand::seq::SliceRandom;
    assert!(batch_size >= 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, SHUFFLE_STREAM_BASE + epoch as u64));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Adadelta accumulators for every trainable tensor of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    filters: Vec<(AdadeltaState, AdadeltaState)>,
    output_weights: AdadeltaState,
    output_biases: AdadeltaState,
    channels: Vec<Option<AdadeltaState>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, rho: f64, eps: f64) -> Self {
        OptimizerState {
            filters: params
                .filters
                .iter()
                .map(|f| (AdadeltaState::new(f.weights.len(), rho, eps), AdadeltaState::new(1, rho, eps)))
                .collect(),
            output_weights: AdadeltaState::new(params.output.weights.len(), rho, eps),
            output_biases: AdadeltaState::new(params.output.biases.len(), rho, eps),
            channels: params
                .channels
                .iter()
                .map(|c| c.trainable.then(|| AdadeltaState::new(c.as_slice().len(), rho, eps)))
                .collect(),
        }
    }
}

/// Applies a batch gradient: Adadelta on every trainable tensor, then the
/// norm constraint, then pad rows back to zero.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    let all_grads_finite = grads.output_weights.iter().chain(&grads.output_biases).all(|g| g.is_finite())
        && grads.filters.iter().all(|f| f.bias.is_finite() && f.weights.iter().all(|g| g.is_finite()))
        && grads.embeddings.iter().flatten().flat_map(|r| r.values().flatten()).all(|g| g.is_finite());
    if !all_grads_finite {
        return Err(OptimError::Diverged);
    }
    for ((filter, g), (sw, sb)) in params.filters.iter_mut().zip(&grads.filters).zip(&mut state.filters) {
        adadelta_step(&mut filter.weights, &g.weights, sw)?;
        adadelta_step(std::slice::from_mut(&mut filter.bias), &[g.bias], sb)?;
    }
    adadelta_step(&mut params.output.weights, &grads.output_weights, &mut state.output_weights)?;
    adadelta_step(&mut params.output.biases, &grads.output_biases, &mut state.output_biases)?;
    for ((channel, rows), st) in params.channels.iter_mut().zip(&grads.embeddings).zip(&mut state.channels) {
        if let (true, Some(rows), Some(st)) = (channel.trainable, rows, st) {
            let dim = channel.dim();
            adadelta_step_rows(channel.as_mut_slice(), dim, rows, st)?;
        }
    }
    l2_renorm(&mut params.output, config.max_norm);
    if config.constrain_filters {
        for f in &mut params.filters {
            let len = f.weights.len();
            renorm_rows(&mut f.weights, len, config.max_norm);
        }
    }
    for channel in &mut params.channels {
        channel.zero_pad_row();
    }
    Ok(())
}

/// Mean loss and mean gradient of `batch`, one dropout mask per example.
/// Examples run in parallel; the reduction is sequential in batch order.
pub fn batch_gradient(params: &ModelParams, batch: &[(&Example, DropoutMask)]) -> Result<(f64, Gradients)> {
    let per_example: Vec<net::Result<(f64, Gradients)>> = batch
        .par_iter()
        .map(|(ex, mask)| {
            let (logits, trace) = net::forward(params, &ex.token_ids, Mode::Train(mask.clone()))?;
            let (_, loss) = net::loss_and_probs(&logits, ex.label);
            Ok((loss, net::backward(params, &trace, ex.label)?))
        })
        .collect();
    let mut total = Gradients::zeros_like(params);
    let mut loss_sum = 0.0;
    for item in per_example {
        let (loss, g) = item?;
        loss_sum += loss;
        total.add_assign(&g);
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    Ok((loss_sum / n, total))
}

/// One pass over `data` in shuffled mini-batches. `after_update` sees the
/// parameters after every batch. Returns the mean training loss.
pub fn train_epoch_with(
    params: &mut ModelParams,
    data: &[Example],
    config: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
    mut after_update: impl FnMut(&ModelParams),
) -> Result<f64> {
    if data.is_empty() {
        return Err(OptimError::EmptyTrain);
    }
    let m = params.filters.len();
    let mut mask_rng = seeded(config.seed, DROPOUT_STREAM_BASE + epoch as u64);
    let mut loss_sum = 0.0;
    for batch in make_minibatches(data.len(), config.batch_size, config.seed, epoch) {
        let items: Vec<(&Example, DropoutMask)> = batch
            .iter()
            .map(|&i| (&data[i], DropoutMask::sample(m, params.keep_prob, &mut mask_rng)))
            .collect();
        let (loss, grads) = batch_gradient(params, &items)?;
        if !loss.is_finite() {
            return Err(OptimError::Diverged);
        }
        loss_sum += loss * batch.len() as f64;
        apply_update(params, &grads, state, config)?;
        after_update(params);
    }
    Ok(loss_sum / data.len() as f64)
}

pub fn train_epoch(
    params: &mut ModelParams,
    data: &[Example],
    config: &TrainConfig,
    state: &mut OptimizerState,
    epoch: usize,
) -> Result<f64> {
    train_epoch_with(params, data, config, state, epoch, |_| {})
}

/// Patience-based early stopping. Only a strictly better score counts as an
/// improvement, so ties keep the earlier epoch.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None, since_best: 0 }
    }

    /// Records `score` for `epoch`; true if it is the new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        match self.best {
            Some((_, best)) if score <= best => {
                self.since_best += 1;
                false
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                true
            }
        }
    }

    pub fn should_stop(&self) -> bool {
        self.best.is_some() && self.since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,dev_acc\n");
        for r in &self.epochs {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.dev_accuracy);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: ModelParams,
    pub history: History,
    pub best_epoch: usize,
    pub best_dev_accuracy: f64,
}

/// Trains for up to `max_epochs` (epochs count from 1), keeping the
/// parameters of the best dev epoch and stopping after `patience` epochs
/// without improvement.
pub fn fit(mut params: ModelParams, train: &[Example], dev: &[Example], config: &TrainConfig) -> Result<FitOutcome> {
    if dev.is_empty() {
        return Err(OptimError::EmptyDev);
    }
    let mut state = OptimizerState::new(&params, config.rho, config.eps);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut history = History::default();
    let mut best = params.clone();
    let mut best_acc = eval::accuracy(&params, dev)?;
    for epoch in 1..=config.max_epochs {
        let loss = train_epoch(&mut params, train, config, &mut state, epoch)?;
        let acc = eval::accuracy(&params, dev)?;
        log::debug!("epoch {epoch}: loss {loss:.5} dev {acc:.4}");
        history.epochs.push(EpochRecord { epoch, train_loss: loss, dev_accuracy: acc });
        if stopper.observe(epoch, acc) {
            best = params.clone();
            best_acc = acc;
        }
        if stopper.should_stop() {
            break;
        }
    }
    Ok(FitOutcome { params: best, history, best_epoch: stopper.best_epoch().unwrap_or(0), best_dev_accuracy: best_acc })
}
